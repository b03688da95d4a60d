//! Alternating optimization: `N` contrastive updates on unlabeled audio, then
//! one CTC update on labeled audio, each loss with its own Adam state and
//! schedule.

mod config;
mod state;
mod sweep;

pub use config::{MaskOverride, TrainerConfig};
pub use state::{stream_rng, stream_seed, trace_matches, Phase, RngCounters, Stream, TrainState};
pub use sweep::{format_table, hyperparam_sweep, SweepCell, SweepGrid, SweepRow};

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, OptimizerBlob};
use crate::data::{normalize, specaugment_mask, AugmentMask, BatchStream, Corpus, Tokenizer};
use crate::decode::{evaluate_logprobs, DecodeConfig, EvalItem};
use crate::error::{Error, Result};
use crate::losses::{contrastive_loss, ctc_loss, CtcTarget};
use crate::model::{AcousticModel, MaskPlan, Stochastic};
use crate::optim::{scale_encoder_grads, AdamState, LrSchedule};
use crate::params::{ParamGrads, ParamGroup, ParamStore};
use crate::tensor::Graph;

/// Corpora of one run. Audio is normalized once on construction.
#[derive(Clone, Debug)]
pub struct TrainData {
    pub labeled: Corpus,
    pub unlabeled: Corpus,
    pub valid: Corpus,
}

impl TrainData {
    pub fn new(labeled: &Corpus, unlabeled: &Corpus, valid: &Corpus) -> Result<Self> {
        if labeled.is_empty() {
            return Err(Error::EmptyCorpus("labeled corpus is empty".into()));
        }
        if valid.is_empty() {
            return Err(Error::EmptyCorpus("validation corpus is empty".into()));
        }
        for (name, c) in [("labeled", labeled), ("validation", valid)] {
            if let Some(u) = c.utterances.iter().find(|u| u.transcript.is_none()) {
                return Err(Error::contract(format!(
                    "{name} utterance {} has no transcript",
                    u.id
                )));
            }
        }
        let norm = |c: &Corpus| -> Result<Corpus> {
            Ok(Corpus::new(
                c.sample_rate,
                c.utterances.iter().map(normalize).collect::<Result<_>>()?,
            ))
        };
        Ok(Self {
            labeled: norm(labeled)?,
            unlabeled: if unlabeled.is_empty() {
                Corpus::new(labeled.sample_rate, Vec::new())
            } else {
                norm(unlabeled)?
            },
            valid: norm(valid)?,
        })
    }

    pub fn has_unlabeled(&self) -> bool {
        !self.unlabeled.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub phase: Phase,
    pub loss: Option<f64>,
    pub lr: f64,
    pub wall_ms: u64,
    pub skipped: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub step: u64,
    pub split: String,
    pub wer: f64,
    pub cer: f64,
    pub ctc_loss: Option<f64>,
    pub contrastive_loss: Option<f64>,
}

/// One line of the metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MetricRecord {
    Step(StepRecord),
    Eval(EvalRecord),
}

/// Reads a metrics log written by a run.
pub fn read_metrics(path: &Path) -> Result<Vec<MetricRecord>> {
    if !path.exists() {
        return Err(Error::MissingPath(path.to_path_buf()));
    }
    std::fs::read_to_string(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

#[derive(Clone, Debug)]
enum Optimizers {
    Separate { unsup: AdamState, sup: AdamState },
    Shared(AdamState),
}

impl Optimizers {
    fn for_phase(&mut self, phase: Phase) -> &mut AdamState {
        match (self, phase) {
            (Optimizers::Separate { unsup, .. }, Phase::Unsup) => unsup,
            (Optimizers::Separate { sup, .. }, Phase::Sup) => sup,
            (Optimizers::Shared(s), _) => s,
        }
    }
}

/// Result of one update.
#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub phase: Phase,
    pub loss: Option<f64>,
    pub lr: f64,
    pub skipped: usize,
}

/// Final state of a finished run.
#[derive(Debug)]
pub struct TrainOutcome {
    pub model: AcousticModel,
    pub best: Option<Checkpoint>,
    pub state: TrainState,
    pub metrics: Vec<MetricRecord>,
}

pub struct Trainer {
    cfg: TrainerConfig,
    model: AcousticModel,
    opt: Optimizers,
    sched_u: LrSchedule,
    sched_s: LrSchedule,
    data: TrainData,
    labeled_targets: Vec<CtcTarget>,
    labeled_stream: BatchStream,
    unlabeled_stream: Option<BatchStream>,
    state: TrainState,
    metrics: Vec<MetricRecord>,
    best: Option<Checkpoint>,
    out: Option<(PathBuf, BufWriter<File>)>,
    started: Instant,
}

impl std::fmt::Debug for Trainer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Trainer")
            .field("cfg", &self.cfg)
            .field("state", &self.state)
            .finish_non_exhaustive()
    }
}

fn targets(data: &TrainData, model: &AcousticModel) -> Result<Vec<CtcTarget>> {
    let tok = Tokenizer::new();
    let cfg = model.config();
    data.labeled
        .utterances
        .iter()
        .map(|u| {
            let text = u.transcript.as_deref().unwrap_or_default();
            CtcTarget::new(&u.id, tok.encode(text)?, cfg.vocab_size, cfg.blank())
        })
        .collect()
}

fn schedules(cfg: &TrainerConfig, has_unlabeled: bool) -> (LrSchedule, LrSchedule) {
    let (nu, ns) = cfg.planned_updates(has_unlabeled);
    (
        LrSchedule::unsupervised(cfg.lr_unsup, cfg.warmup_updates, nu.max(cfg.warmup_updates)),
        LrSchedule::supervised(cfg.lr_sup, cfg.warmup_updates, ns.max(cfg.warmup_updates)),
    )
}

fn fresh_optimizers(cfg: &TrainerConfig, store: &ParamStore) -> Optimizers {
    if cfg.single_optimizer {
        Optimizers::Shared(AdamState::for_all(store, cfg.adam.clone()))
    } else {
        // the classifier never receives a contrastive gradient
        let unsup_ids = store
            .ids()
            .filter(|id| store.group(*id) != ParamGroup::Classifier)
            .collect();
        Optimizers::Separate {
            unsup: AdamState::new(store, unsup_ids, cfg.adam.clone()),
            sup: AdamState::for_all(store, cfg.adam.clone()),
        }
    }
}

/// Per-utterance result: loss and gradients, or `None` when skipped.
type UttResult = Result<Option<(f64, ParamGrads)>>;

impl Trainer {
    pub fn new(model: AcousticModel, cfg: TrainerConfig, data: TrainData) -> Result<Self> {
        cfg.validate()?;
        if model.config().vocab_size != Tokenizer::VOCAB {
            return Err(Error::Config(format!(
                "training needs vocab_size {} to match the tokenizer, got {}",
                Tokenizer::VOCAB,
                model.config().vocab_size
            )));
        }
        let labeled_stream = BatchStream::new(
            &data.labeled,
            cfg.sup_batch_seconds,
            stream_seed(cfg.seed, Stream::LabeledOrder),
        )?;
        let unlabeled_stream = if data.has_unlabeled() {
            Some(BatchStream::new(
                &data.unlabeled,
                cfg.unsup_batch_seconds,
                stream_seed(cfg.seed, Stream::UnlabeledOrder),
            )?)
        } else {
            None
        };
        let (sched_u, sched_s) = schedules(&cfg, data.has_unlabeled());
        log::info!(
            "lr ratio unsup:sup = {:.3}:1 (peaks {} / {})",
            cfg.lr_unsup / cfg.lr_sup,
            cfg.lr_unsup,
            cfg.lr_sup
        );
        Ok(Self {
            opt: fresh_optimizers(&cfg, model.params()),
            labeled_targets: targets(&data, &model)?,
            sched_u,
            sched_s,
            labeled_stream,
            unlabeled_stream,
            state: TrainState::default(),
            metrics: Vec::new(),
            best: None,
            out: None,
            started: Instant::now(),
            cfg,
            model,
            data,
        })
    }

    /// Continues a run from a checkpoint written by [`Trainer::checkpoint`].
    pub fn resume(ck: &Checkpoint, cfg: TrainerConfig, data: TrainData) -> Result<Self> {
        ck.check_config(&ck.model, Some(&cfg))?;
        let state = ck
            .state
            .clone()
            .ok_or_else(|| Error::format("checkpoint", "no training state"))?;
        let model = ck.build_model()?;
        let mut t = Self::new(model, cfg, data)?;
        let store = t.model.params();
        let get = |name: &str| {
            ck.optimizer(name)
                .ok_or_else(|| Error::format("checkpoint", format!("missing optimizer {name}")))
        };
        t.opt = match &t.opt {
            Optimizers::Shared(_) => {
                Optimizers::Shared(get("shared")?.restore(store, t.cfg.adam.clone())?)
            }
            Optimizers::Separate { .. } => Optimizers::Separate {
                unsup: get("unsup")?.restore(store, t.cfg.adam.clone())?,
                sup: get("sup")?.restore(store, t.cfg.adam.clone())?,
            },
        };
        if let Some(pos) = state.labeled_stream {
            t.labeled_stream = BatchStream::resume(
                &t.data.labeled,
                t.cfg.sup_batch_seconds,
                stream_seed(t.cfg.seed, Stream::LabeledOrder),
                pos,
            )?;
        }
        if let (Some(pos), true) = (state.unlabeled_stream, t.data.has_unlabeled()) {
            t.unlabeled_stream = Some(BatchStream::resume(
                &t.data.unlabeled,
                t.cfg.unsup_batch_seconds,
                stream_seed(t.cfg.seed, Stream::UnlabeledOrder),
                pos,
            )?);
        }
        t.state = state;
        Ok(t)
    }

    /// Appends metrics to `dir/metrics.jsonl` and writes `best.ckpt` and
    /// `last.ckpt` there.
    pub fn with_output(mut self, dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        let f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(dir.join("metrics.jsonl"))?;
        self.out = Some((dir.to_path_buf(), BufWriter::new(f)));
        Ok(self)
    }

    pub fn model(&self) -> &AcousticModel {
        &self.model
    }

    pub fn config(&self) -> &TrainerConfig {
        &self.cfg
    }

    pub fn state(&self) -> &TrainState {
        &self.state
    }

    pub fn metrics(&self) -> &[MetricRecord] {
        &self.metrics
    }

    pub fn schedules(&self) -> (&LrSchedule, &LrSchedule) {
        (&self.sched_u, &self.sched_s)
    }

    /// Fingerprints of the unsupervised and supervised optimizer states
    /// (identical in single-optimizer mode).
    pub fn optimizer_fingerprints(&self) -> ([u8; 32], [u8; 32]) {
        match &self.opt {
            Optimizers::Separate { unsup, sup } => (unsup.fingerprint(), sup.fingerprint()),
            Optimizers::Shared(s) => (s.fingerprint(), s.fingerprint()),
        }
    }

    pub fn optimizer_steps(&self) -> (u64, u64) {
        match &self.opt {
            Optimizers::Separate { unsup, sup } => (unsup.step_count(), sup.step_count()),
            Optimizers::Shared(s) => (s.step_count(), s.step_count()),
        }
    }

    pub fn is_done(&self) -> bool {
        self.state.global_step >= self.cfg.total_updates || self.state.stopped_early
    }

    /// Kind of the next update.
    pub fn next_phase(&self) -> Phase {
        let n = self.cfg.update_ratio as u64;
        if self.data.has_unlabeled() && self.state.global_step % (n + 1) < n {
            Phase::Unsup
        } else {
            Phase::Sup
        }
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::from_model(&self.model);
        ck.trainer = Some(self.cfg.clone());
        let store = self.model.params();
        ck.optimizers = match &self.opt {
            Optimizers::Separate { unsup, sup } => vec![
                OptimizerBlob::capture("unsup", unsup, store),
                OptimizerBlob::capture("sup", sup, store),
            ],
            Optimizers::Shared(s) => vec![OptimizerBlob::capture("shared", s, store)],
        };
        let mut state = self.state.clone();
        state.labeled_stream = Some(self.labeled_stream.position());
        state.unlabeled_stream = self.unlabeled_stream.as_ref().map(BatchStream::position);
        ck.state = Some(state);
        ck
    }

    fn augment_mask(&self) -> AugmentMask {
        match self.cfg.specaugment_mask {
            Some(m) => AugmentMask {
                start_p: m.start_p,
                span: m.span,
            },
            None => AugmentMask {
                start_p: self.model.config().mask_start_p,
                span: self.model.config().mask_span,
            },
        }
    }

    fn unsup_utt(&self, audio: &[f64], item: u64) -> UttResult {
        let (seed, c) = (self.cfg.seed, self.state.rng);
        let model = &self.model;
        let g = Graph::new();
        let z = model.encode(&g, audio)?;
        let frames = z.shape()[0];
        if frames <= 1 {
            return Ok(None);
        }
        let mc = model.config();
        let plan = MaskPlan::sample(
            frames,
            mc.mask_start_p,
            mc.mask_span,
            &mut stream_rng(seed, Stream::Masking, c.masking, item),
        );
        let zhat = model.apply_mask(&g, z, &plan)?;
        let mut ld = stream_rng(seed, Stream::LayerDrop, c.layer_drop, item);
        let mut dr = stream_rng(seed, Stream::Dropout, c.dropout, item);
        let mut st = Stochastic {
            train: true,
            layer_drop: &mut ld,
            dropout: &mut dr,
        };
        let zt = model.contextualize(&g, zhat, &mut st)?;
        let loss = contrastive_loss(
            z,
            zt,
            &plan,
            &self.cfg.contrastive,
            &mut stream_rng(seed, Stream::Negatives, c.negatives, item),
        )?;
        let value = loss.item();
        Ok(Some((value, g.backward(loss)?.into_param_grads(model.params()))))
    }

    fn sup_utt(&self, idx: usize, item: u64, augment: bool) -> UttResult {
        let (seed, c) = (self.cfg.seed, self.state.rng);
        let model = &self.model;
        let audio = &self.data.labeled.utterances[idx].samples;
        let target = &self.labeled_targets[idx];
        let frames = model.num_frames(audio.len())?;
        if frames < target.min_frames() {
            return Ok(None);
        }
        let g = Graph::new();
        let z = model.encode(&g, audio)?;
        let (zhat, _) = specaugment_mask(
            model,
            &g,
            z,
            self.augment_mask(),
            augment,
            &mut stream_rng(seed, Stream::Augmentation, c.augmentation, item),
        )?;
        let mut ld = stream_rng(seed, Stream::LayerDrop, c.layer_drop, item);
        let mut dr = stream_rng(seed, Stream::Dropout, c.dropout, item);
        let mut st = Stochastic {
            train: true,
            layer_drop: &mut ld,
            dropout: &mut dr,
        };
        let zt = model.contextualize(&g, zhat, &mut st)?;
        let lp = model.classify(&g, zt)?;
        let loss = ctc_loss(lp, target, model.config().blank())?;
        let value = loss.item();
        Ok(Some((value, g.backward(loss)?.into_param_grads(model.params()))))
    }

    /// Mean loss and gradient over the utterances that were not skipped,
    /// summed in batch order.
    fn reduce(&self, results: Vec<Option<(f64, ParamGrads)>>) -> Result<(Option<(f64, ParamGrads)>, usize)> {
        let skipped = results.iter().filter(|r| r.is_none()).count();
        let mut used = 0usize;
        let mut loss = 0.0;
        let mut acc = ParamGrads::empty(self.model.params().len());
        for (l, g) in results.into_iter().flatten() {
            loss += l;
            acc.accumulate(&g)?;
            used += 1;
        }
        if used == 0 {
            return Ok((None, skipped));
        }
        acc.scale(1.0 / used as f64);
        Ok((Some((loss / used as f64, acc)), skipped))
    }

    /// Runs one update of the kind given by [`next_phase`](Self::next_phase).
    pub fn step(&mut self) -> Result<StepOutcome> {
        let phase = self.next_phase();
        let step = self.state.global_step + 1;
        let (reduced, skipped, lr) = match phase {
            Phase::Unsup => {
                let stream = self.unlabeled_stream.as_mut().expect("unlabeled data present");
                let batch = stream.next_batch(&self.data.unlabeled)?;
                let results = batch
                    .par_iter()
                    .enumerate()
                    .map(|(i, &u)| self.unsup_utt(&self.data.unlabeled.utterances[u].samples, i as u64))
                    .collect::<Result<Vec<_>>>()?;
                let (r, s) = self.reduce(results)?;
                self.state.rng.masking += 1;
                self.state.rng.negatives += 1;
                self.state.rng.layer_drop += 1;
                self.state.rng.dropout += 1;
                self.state.skipped_unsup_utts += s as u64;
                (r, s, self.sched_u.lr_at(self.state.unsup_steps))
            }
            Phase::Sup => {
                let augment = self.cfg.specaugment && self.state.sup_steps >= self.cfg.warmup_updates;
                let batch = self.labeled_stream.next_batch(&self.data.labeled)?;
                let results = batch
                    .par_iter()
                    .enumerate()
                    .map(|(i, &u)| self.sup_utt(u, i as u64, augment))
                    .collect::<Result<Vec<_>>>()?;
                let (r, s) = self.reduce(results)?;
                if augment {
                    self.state.rng.augmentation += 1;
                }
                self.state.rng.layer_drop += 1;
                self.state.rng.dropout += 1;
                self.state.skipped_sup_utts += s as u64;
                (r, s, self.sched_s.lr_at(self.state.sup_steps))
            }
        };
        if skipped > 0 {
            log::warn!("step {step}: skipped {skipped} utterance(s) in a {} batch", phase.symbol());
        }
        let loss = match reduced {
            Some((loss, mut grads)) => {
                if !loss.is_finite() || !grads.is_finite() {
                    return Err(Error::Diverged { step });
                }
                scale_encoder_grads(self.model.params(), &mut grads, self.cfg.encoder_grad_scale);
                self.opt
                    .for_phase(phase)
                    .apply(self.model.params_mut(), &grads, lr)?;
                Some(loss)
            }
            None => None,
        };
        self.state.global_step = step;
        match phase {
            Phase::Unsup => self.state.unsup_steps += 1,
            Phase::Sup => self.state.sup_steps += 1,
        }
        self.state.trace.push(phase.symbol());
        self.record(MetricRecord::Step(StepRecord {
            step,
            phase,
            loss,
            lr,
            wall_ms: self.started.elapsed().as_millis() as u64,
            skipped,
        }))?;
        Ok(StepOutcome {
            phase,
            loss,
            lr,
            skipped,
        })
    }

    fn record(&mut self, r: MetricRecord) -> Result<()> {
        if let Some((_, w)) = &mut self.out {
            writeln!(w, "{}", serde_json::to_string(&r)?)?;
        }
        self.metrics.push(r);
        Ok(())
    }

    /// Eval-mode losses and greedy error rates on up to `limit` utterances of
    /// `corpus`. The contrastive masks and negatives come from a fixed
    /// evaluation stream, so repeated evaluations are comparable and the
    /// training streams are untouched.
    pub fn evaluate_split(&self, corpus: &Corpus, limit: usize, split: &str) -> Result<EvalRecord> {
        let model = &self.model;
        let mc = model.config();
        let seed = self.cfg.seed;
        let tok = Tokenizer::new();
        let utts = &corpus.utterances[..limit.min(corpus.len())];
        let per_utt: Vec<(Option<EvalItem>, Option<f64>, Option<f64>)> = utts
            .par_iter()
            .enumerate()
            .map(|(i, u)| -> Result<_> {
                let mut r1 = stream_rng(seed, Stream::Eval, 0, i as u64);
                let mut r2 = stream_rng(seed, Stream::Eval, 1, i as u64);
                let mut st = Stochastic {
                    train: false,
                    layer_drop: &mut r1,
                    dropout: &mut r2,
                };
                let g = Graph::new();
                let z = model.encode(&g, &u.samples)?;
                let frames = z.shape()[0];
                let zt = model.contextualize(&g, z, &mut st)?;
                let lp = model.classify(&g, zt)?;
                let mut item = None;
                let mut ctc = None;
                if let Some(text) = &u.transcript {
                    let target = CtcTarget::new(&u.id, tok.encode(text)?, mc.vocab_size, mc.blank())?;
                    if frames >= target.min_frames() {
                        ctc = Some(ctc_loss(lp, &target, mc.blank())?.item());
                    }
                    item = Some(EvalItem {
                        id: u.id.clone(),
                        reference: text.clone(),
                        logprobs: lp.value().clone(),
                    });
                }
                let mut contrastive = None;
                if frames > 1 {
                    let plan = MaskPlan::sample(
                        frames,
                        mc.mask_start_p,
                        mc.mask_span,
                        &mut stream_rng(seed, Stream::Eval, 2, i as u64),
                    );
                    let zhat = model.apply_mask(&g, z, &plan)?;
                    let zt = model.contextualize(&g, zhat, &mut st)?;
                    contrastive = Some(
                        contrastive_loss(
                            z,
                            zt,
                            &plan,
                            &self.cfg.contrastive,
                            &mut stream_rng(seed, Stream::Eval, 3, i as u64),
                        )?
                        .item(),
                    );
                }
                Ok((item, ctc, contrastive))
            })
            .collect::<Result<_>>()?;
        let mean = |xs: Vec<f64>| (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64);
        let ctc_loss = mean(per_utt.iter().filter_map(|p| p.1).collect());
        let contrastive_loss = mean(per_utt.iter().filter_map(|p| p.2).collect());
        let items: Vec<EvalItem> = per_utt.into_iter().filter_map(|p| p.0).collect();
        let (wer, cer) = if items.is_empty() {
            (f64::NAN, f64::NAN)
        } else {
            let rep = evaluate_logprobs(&items, mc.blank(), &DecodeConfig::default(), None)?;
            (rep.summary.wer, rep.summary.cer)
        };
        Ok(EvalRecord {
            step: self.state.global_step,
            split: split.to_string(),
            wer,
            cer,
            ctc_loss,
            contrastive_loss,
        })
    }

    /// Validation plus tracked training subsets; updates early stopping and
    /// the best checkpoint.
    pub fn evaluate(&mut self) -> Result<EvalRecord> {
        let valid = self.evaluate_split(&self.data.valid, usize::MAX, "valid")?;
        let n = self.cfg.train_eval_utts;
        if n > 0 {
            let mut train = self.evaluate_split(&self.data.labeled, n, "train")?;
            if self.data.has_unlabeled() {
                let u = self.evaluate_split(&self.data.unlabeled, n, "train")?;
                train.contrastive_loss = u.contrastive_loss;
            }
            self.record(MetricRecord::Eval(train))?;
        }
        self.record(MetricRecord::Eval(valid.clone()))?;
        log::info!(
            "step {}: valid WER {:.4} CER {:.4} ctc {:?} contrastive {:?}",
            valid.step,
            valid.wer,
            valid.cer,
            valid.ctc_loss,
            valid.contrastive_loss
        );
        if self.state.best_wer.is_none_or(|b| valid.wer < b) {
            self.state.best_wer = Some(valid.wer);
            self.state.best_step = Some(valid.step);
            self.state.evals_since_best = 0;
            let ck = self.checkpoint();
            if let Some((dir, _)) = &self.out {
                ck.save(&dir.join("best.ckpt"))?;
            }
            self.best = Some(ck);
        } else {
            self.state.evals_since_best += 1;
            if self.cfg.patience > 0 && self.state.evals_since_best >= self.cfg.patience {
                log::info!("early stop at step {}", valid.step);
                self.state.stopped_early = true;
            }
        }
        self.save_last()?;
        Ok(valid)
    }

    fn save_last(&mut self) -> Result<()> {
        if let Some((dir, w)) = &mut self.out {
            w.flush()?;
            let dir = dir.clone();
            self.checkpoint().save(&dir.join("last.ckpt"))?;
        }
        Ok(())
    }

    /// Steps until `global_step == until` (or the run ends), evaluating on the
    /// configured cadence.
    pub fn run_until(&mut self, until: u64) -> Result<()> {
        let until = until.min(self.cfg.total_updates);
        while self.state.global_step < until && !self.state.stopped_early {
            if let Err(e) = self.step() {
                if matches!(e, Error::Diverged { .. }) {
                    // the failing update was not applied
                    self.save_last()?;
                }
                return Err(e);
            }
            let s = self.state.global_step;
            if s % self.cfg.eval_every == 0 || s == self.cfg.total_updates {
                self.evaluate()?;
            }
        }
        if let Some((_, w)) = &mut self.out {
            w.flush()?;
        }
        Ok(())
    }

    pub fn run(mut self) -> Result<TrainOutcome> {
        self.run_until(self.cfg.total_updates)?;
        debug_assert!(trace_matches(
            &self.state.trace,
            self.cfg.update_ratio,
            self.data.has_unlabeled()
        ));
        let state = self.checkpoint().state.expect("always set");
        Ok(TrainOutcome {
            model: self.model,
            best: self.best,
            state,
            metrics: self.metrics,
        })
    }
}

/// Trains from scratch.
pub fn train(model: AcousticModel, cfg: TrainerConfig, data: TrainData, out: Option<&Path>) -> Result<TrainOutcome> {
    let mut t = Trainer::new(model, cfg, data)?;
    if let Some(dir) = out {
        t = t.with_output(dir)?;
    }
    t.run()
}
