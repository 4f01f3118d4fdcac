//! Online tuning: only the mixture of experts learns from the stream, and
//! experts are added or removed at epoch boundaries.

use std::collections::VecDeque;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{checksum, AdamW, AdamWConfig, Binding, LrSchedule, Tape, Trainable};
use crate::dataset::Interval;
use crate::error::{Error, Result};
use crate::model::{is_moe_param, FtMoe};
use crate::moe::MoeLayer;
use crate::objectives::LossWeights;

const EXPERT_STREAM: u64 = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TuneConfig {
    /// Lifecycle boundary every this many tuning epochs.
    pub interval_threshold: usize,
    /// Stream intervals per tuning epoch.
    pub steps_per_epoch: usize,
    pub lr: f64,
    pub weight_decay: f64,
    /// Steps in the sliding accuracy window of the log.
    pub window: usize,
    pub seed: u64,
    pub loss: LossWeights,
}

impl Default for TuneConfig {
    fn default() -> Self {
        TuneConfig {
            interval_threshold: 5,
            steps_per_epoch: 1,
            lr: 1e-4,
            weight_decay: 0.0,
            window: 50,
            seed: 0,
            loss: LossWeights::default(),
        }
    }
}

impl TuneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.interval_threshold == 0 || self.steps_per_epoch == 0 || self.window == 0 {
            return Err(Error::Config(
                "tune.interval_threshold, tune.steps_per_epoch and tune.window must be at least 1".into(),
            ));
        }
        if !(self.lr.is_finite() && self.lr >= 0.0 && self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::Config("tune.lr and tune.weight_decay must be finite and >= 0".into()));
        }
        self.loss.validate()
    }
}

/// Experts touched by one boundary.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LifecycleEvents {
    pub removed: Vec<u32>,
    pub added: Option<u32>,
}

/// Removes experts that were never eligible (keeping at least one), adds one
/// expert seeded from the unrouted inputs, then restarts recording. Does
/// nothing unless `flag_f` is set.
pub fn lifecycle_boundary(moe: &mut MoeLayer, rng: &mut ChaCha8Rng) -> Result<LifecycleEvents> {
    let mut events = LifecycleEvents::default();
    if !moe.recorder.flag_f {
        return Ok(events);
    }
    let counts = &moe.recorder.activations;
    let idle: Vec<u32> = moe
        .experts
        .iter()
        .enumerate()
        .filter(|(g, _)| counts.get(*g).copied().unwrap_or(0) == 0)
        .map(|(_, e)| e.id)
        .collect();
    for id in idle {
        if moe.len() == 1 {
            break;
        }
        moe.remove_expert(id)?;
        events.removed.push(id);
    }
    if !moe.recorder.unrouted.is_empty() {
        let seeds: Vec<Vec<f64>> = moe.recorder.unrouted.iter().map(|u| u.features.clone()).collect();
        events.added = Some(moe.add_expert(&seeds, rng)?);
    }
    moe.reset_recording();
    moe.recorder.flag_f = false;
    Ok(events)
}

/// One line of the tuning log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneLog {
    pub step: usize,
    pub interval: u64,
    pub epoch: usize,
    pub experts: usize,
    pub added: usize,
    pub removed: usize,
    pub l_final: f64,
    pub detection_accuracy: f64,
    pub classification_accuracy: Option<f64>,
}

#[derive(Debug, Clone, Copy, Default)]
struct Tally {
    det_hit: usize,
    det_total: usize,
    cls_hit: usize,
    cls_total: usize,
}

pub struct Tuner {
    pub model: FtMoe,
    pub optimizer: AdamW,
    cfg: TuneConfig,
    rng: ChaCha8Rng,
    step: usize,
    recent: VecDeque<Tally>,
    pub events: Vec<(usize, LifecycleEvents)>,
}

/// Checksum over everything the tuner must not touch.
pub fn frozen_checksum(model: &FtMoe) -> String {
    checksum(model, |n| !is_moe_param(n))
}

impl Tuner {
    pub fn new(mut model: FtMoe, cfg: TuneConfig) -> Result<Self> {
        cfg.validate()?;
        let optimizer = AdamW::new(AdamWConfig {
            weight_decay: cfg.weight_decay,
            schedule: LrSchedule::constant(cfg.lr),
            ..AdamWConfig::default()
        });
        model.moe.recorder.flag_s = true;
        model.moe.reset_recording();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(EXPERT_STREAM);
        Ok(Tuner { model, optimizer, cfg, rng, step: 0, recent: VecDeque::new(), events: Vec::new() })
    }

    pub fn steps(&self) -> usize {
        self.step
    }

    pub fn epoch(&self) -> usize {
        self.step / self.cfg.steps_per_epoch
    }

    /// Fine-tunes on the previous interval's features and decisions against
    /// the current interval's labels.
    pub fn tune_step(&mut self, prev: &Interval, labels: &[u8]) -> Result<TuneLog> {
        let (m, n) = prev.features.shape();
        if n != self.model.config.features || labels.len() != m {
            return Err(Error::Validation(format!(
                "stream interval {}: {}x{} features with {} labels, model expects {} features",
                prev.t,
                m,
                n,
                labels.len(),
                self.model.config.features
            )));
        }
        if let Some(&y) = labels.iter().find(|&&y| y as usize >= self.model.config.classes) {
            return Err(Error::Validation(format!("stream label {} out of range", y)));
        }
        let mut tape = Tape::new();
        let select = is_moe_param;
        let mut bind = Binding::new(Trainable::Matching(&select));
        let pass = self.model.forward(&mut tape, &mut bind, &prev.features, &prev.decision)?;
        let loss = FtMoe::loss(&mut tape, &pass, labels, &self.cfg.loss)?;
        let value = tape.value(loss.total).get(0, 0);
        if !value.is_finite() {
            return Err(Error::Numeric(format!("tuning step {}: loss {}", self.step, value)));
        }

        let mut tally = Tally::default();
        let detect = tape.value(pass.detect);
        let classify = tape.value(pass.classify);
        for (h, &y) in labels.iter().enumerate() {
            let d = detect.row(h);
            tally.det_total += 1;
            tally.det_hit += ((d[1] > d[0]) == (y > 0)) as usize;
            if y > 0 {
                tally.cls_total += 1;
                let top = self.model.prototypes.rank_fault_types(classify.row(h));
                tally.cls_hit += (top.first() == Some(&(y as usize))) as usize;
            }
        }

        let mut grads = tape.backward(loss.total)?;
        let grads = bind.collect(&tape, &mut grads);
        self.optimizer.step(&mut self.model, &grads)?;
        self.model.moe.record_routing(&pass.trace, prev.t, &pass.inputs, Some(labels))?;

        self.step += 1;
        let mut events = LifecycleEvents::default();
        if self.step.is_multiple_of(self.cfg.steps_per_epoch)
            && self.epoch().is_multiple_of(self.cfg.interval_threshold)
        {
            self.model.moe.recorder.flag_f = true;
            events = lifecycle_boundary(&mut self.model.moe, &mut self.rng)?;
            self.optimizer.retain_params(&self.model);
            if events != LifecycleEvents::default() {
                self.events.push((self.step, events.clone()));
            }
        }

        self.recent.push_back(tally);
        if self.recent.len() > self.cfg.window {
            self.recent.pop_front();
        }
        let sum = self.recent.iter().fold(Tally::default(), |a, t| Tally {
            det_hit: a.det_hit + t.det_hit,
            det_total: a.det_total + t.det_total,
            cls_hit: a.cls_hit + t.cls_hit,
            cls_total: a.cls_total + t.cls_total,
        });
        Ok(TuneLog {
            step: self.step,
            interval: prev.t,
            epoch: self.epoch(),
            experts: self.model.moe.len(),
            added: events.added.is_some() as usize,
            removed: events.removed.len(),
            l_final: value,
            detection_accuracy: sum.det_hit as f64 / sum.det_total.max(1) as f64,
            classification_accuracy: (sum.cls_total > 0).then(|| sum.cls_hit as f64 / sum.cls_total as f64),
        })
    }
}

pub struct TuneOutcome {
    pub model: FtMoe,
    pub log: Vec<TuneLog>,
    pub events: Vec<(usize, LifecycleEvents)>,
}

/// Tunes over consecutive stream intervals. A stream shorter than two
/// intervals leaves the model as it was.
pub fn tune(
    model: FtMoe,
    stream: &[Interval],
    cfg: &TuneConfig,
    mut on_step: impl FnMut(&TuneLog),
) -> Result<TuneOutcome> {
    let mut tuner = Tuner::new(model, cfg.clone())?;
    let mut log = Vec::with_capacity(stream.len().saturating_sub(1));
    for pair in stream.windows(2) {
        let row = tuner.tune_step(&pair[0], &pair[1].labels)?;
        on_step(&row);
        log.push(row);
    }
    Ok(TuneOutcome { model: tuner.model, log, events: tuner.events })
}
