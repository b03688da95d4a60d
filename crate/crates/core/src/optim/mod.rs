//! Adam with decoupled weight decay, learning-rate schedules, and encoder
//! gradient scaling.

mod adam;
mod schedule;

pub use adam::{AdamConfig, AdamState};
pub use schedule::{LrSchedule, ScheduleKind};

use crate::params::{ParamGrads, ParamGroup, ParamStore};

/// Multiplies the gradients of every convolutional-encoder parameter by
/// `factor`, leaving all other gradients untouched.
pub fn scale_encoder_grads(store: &ParamStore, grads: &mut ParamGrads, factor: f64) {
    for id in store.ids() {
        if store.group(id) == ParamGroup::Encoder {
            if let Some(g) = grads.get_mut(id) {
                g.scale_in_place(factor);
            }
        }
    }
}
