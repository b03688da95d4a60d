use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScheduleKind {
    /// Linear warmup, then linear decay to `floor · peak` at `total_updates`.
    WarmupLinearDecay,
    /// Linear warmup, then constant.
    WarmupConstant,
}

/// Learning rate as a pure function of an optimizer's own step count.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub kind: ScheduleKind,
    pub peak: f64,
    pub warmup_updates: u64,
    pub total_updates: u64,
    /// Final fraction of `peak` for the decaying kind.
    pub floor: f64,
}

impl LrSchedule {
    /// Schedule of the unsupervised loss: decays to a tenth of its peak.
    pub fn unsupervised(peak: f64, warmup: u64, total: u64) -> Self {
        Self {
            kind: ScheduleKind::WarmupLinearDecay,
            peak,
            warmup_updates: warmup,
            total_updates: total,
            floor: 0.1,
        }
    }

    /// Schedule of the supervised loss: constant after warmup.
    pub fn supervised(peak: f64, warmup: u64, total: u64) -> Self {
        Self {
            kind: ScheduleKind::WarmupConstant,
            peak,
            warmup_updates: warmup,
            total_updates: total,
            floor: 1.0,
        }
    }

    /// Steps past `total_updates` clamp to the final value.
    pub fn lr_at(&self, step: u64) -> f64 {
        let step = if step > self.total_updates {
            log::debug!(
                "lr_at({step}) beyond total_updates {}; clamping",
                self.total_updates
            );
            self.total_updates
        } else {
            step
        };
        if step < self.warmup_updates {
            return self.peak * step as f64 / self.warmup_updates as f64;
        }
        match self.kind {
            ScheduleKind::WarmupConstant => self.peak,
            ScheduleKind::WarmupLinearDecay => {
                let span = self.total_updates.saturating_sub(self.warmup_updates);
                if span == 0 {
                    return self.peak * self.floor;
                }
                let frac = (step - self.warmup_updates) as f64 / span as f64;
                self.peak * ((1.0 - frac) + frac * self.floor)
            }
        }
    }
}
