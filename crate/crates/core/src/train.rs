//! Offline training with the prototype fast-start / steady-enhancement
//! schedule.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{AdamW, AdamWConfig, Binding, Tape, Trainable};
use crate::dataset::{Dataset, Interval};
use crate::error::{Error, Result};
use crate::fusion::PrototypeBank;
use crate::metrics::{DetectionOutcome, MetricsReport, RankedPrediction};
use crate::model::{FtMoe, Normalizer, Prediction};
use crate::objectives::{LossBreakdown, LossWeights};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    FastStarting,
    SteadyEnhancement,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Stage::FastStarting => "fast-starting",
            Stage::SteadyEnhancement => "steady-enhancement",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Intervals per optimizer step.
    pub batch: usize,
    pub optimizer: AdamWConfig,
    /// Prototype EMA weight.
    pub eta: f64,
    /// Stage-switch window and std threshold.
    pub window: usize,
    pub tau: f64,
    /// Fraction of epochs after which the switch happens regardless.
    pub switch_fraction: f64,
    pub loss: LossWeights,
    pub seed: u64,
    pub hr_k: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch: 1,
            optimizer: AdamWConfig::default(),
            eta: 0.9,
            window: 5,
            tau: 0.02,
            switch_fraction: 0.5,
            loss: LossWeights::default(),
            seed: 0,
            hr_k: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("train.epochs must be at least 1".into()));
        }
        if self.batch == 0 || self.window == 0 || self.hr_k == 0 {
            return Err(Error::Config("train.batch, train.window and train.hr_k must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(Error::Config("train.eta must lie in [0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.switch_fraction) || !(self.tau >= 0.0) {
            return Err(Error::Config("train.switch_fraction in [0, 1] and train.tau >= 0".into()));
        }
        self.loss.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub model: FtMoe,
    pub optimizer: AdamW,
    pub stage: Stage,
    /// Validation classification accuracy per finished epoch.
    pub history: Vec<f64>,
    pub epoch: usize,
}

impl TrainState {
    pub fn new(model: FtMoe, cfg: &TrainConfig) -> Self {
        TrainState {
            model,
            optimizer: AdamW::new(cfg.optimizer),
            stage: Stage::FastStarting,
            history: Vec::new(),
            epoch: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EpochStats {
    pub loss: LossBreakdown,
    pub steps: usize,
    pub ema_updates: usize,
}

/// `P_y <- (1 - eta) P_y + eta C` when `C` already ranks `y` first; returns
/// whether the update happened.
pub fn prototype_fast_update(bank: &mut PrototypeBank, c: &[f64], y: u8, eta: f64) -> bool {
    if y == 0 || y as usize >= bank.classes() {
        return false;
    }
    if bank.rank_fault_types(c).first() != Some(&(y as usize)) {
        return false;
    }
    for (p, &v) in bank.vectors.row_mut(y as usize).iter_mut().zip(c) {
        *p = (1.0 - eta) * *p + eta * v;
    }
    true
}

fn population_std(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt()
}

/// Stage after `completed` of `total` epochs. Switching is one-way.
pub fn stage_switch_check(current: Stage, history: &[f64], completed: usize, total: usize, cfg: &TrainConfig) -> Stage {
    if current == Stage::SteadyEnhancement {
        return current;
    }
    let fallback = (total as f64 * cfg.switch_fraction).ceil() as usize;
    let fluctuating = history.len() >= cfg.window && population_std(&history[history.len() - cfg.window..]) > cfg.tau;
    if fluctuating || completed >= fallback {
        Stage::SteadyEnhancement
    } else {
        Stage::FastStarting
    }
}

/// One pass over `shard` in seeded shuffled order.
pub fn train_epoch(state: &mut TrainState, shard: &[Interval], cfg: &TrainConfig) -> Result<EpochStats> {
    if shard.is_empty() {
        return Err(Error::Usage("training shard is empty".into()));
    }
    let mut order: Vec<usize> = (0..shard.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(state.epoch as u64 + 1);
    order.shuffle(&mut rng);
    state.optimizer.set_epoch(state.epoch);

    let mut stats = EpochStats::default();
    for batch in order.chunks(cfg.batch) {
        let mut tape = Tape::new();
        let mut bind = Binding::new(Trainable::All);
        let mut total = None;
        let mut sum = LossBreakdown::default();
        let mut passes = Vec::with_capacity(batch.len());
        for &i in batch {
            let iv = &shard[i];
            let pass = state.model.forward(&mut tape, &mut bind, &iv.features, &iv.decision)?;
            let loss = FtMoe::loss(&mut tape, &pass, &iv.labels, &cfg.loss)?;
            let values = loss.values(&tape);
            if !values.total.is_finite() {
                return Err(Error::Numeric(format!("epoch {} interval {}: loss {:?}", state.epoch, iv.t, values)));
            }
            sum.accumulate(&values);
            total = Some(match total {
                None => loss.total,
                Some(t) => tape.add(t, loss.total)?,
            });
            passes.push((i, pass.classify));
        }
        let total = total.expect("chunks are non-empty");
        let mean = tape.scale(total, 1.0 / batch.len() as f64)?;
        let mut grads = tape.backward(mean)?;
        let grads = bind.collect(&tape, &mut grads);
        state.optimizer.step(&mut state.model, &grads)?;
        if state.stage == Stage::FastStarting {
            for (i, c) in passes {
                let c = tape.value(c);
                for (m, &y) in shard[i].labels.iter().enumerate() {
                    if prototype_fast_update(&mut state.model.prototypes, c.row(m), y, cfg.eta) {
                        stats.ema_updates += 1;
                    }
                }
            }
        }
        stats.loss.accumulate(&sum);
        stats.steps += 1;
    }
    stats.loss = stats.loss.scaled(1.0 / shard.len() as f64);
    Ok(stats)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub outcome: DetectionOutcome,
    pub ranked: Vec<RankedPrediction>,
    pub report: MetricsReport,
}

/// Metrics on frozen parameters.
pub fn evaluate(model: &FtMoe, split: &[Interval], hr_k: usize) -> Result<Evaluation> {
    evaluate_with(model, split, hr_k, |_, _| ())
}

/// [`evaluate`], handing every interval's prediction to `visit`.
pub fn evaluate_with(
    model: &FtMoe,
    split: &[Interval],
    hr_k: usize,
    mut visit: impl FnMut(&Interval, &Prediction),
) -> Result<Evaluation> {
    if split.is_empty() {
        return Err(Error::Usage("evaluation split is empty".into()));
    }
    let mut outcome = DetectionOutcome::default();
    let mut ranked = Vec::new();
    for iv in split {
        let p = model.predict(&iv.features, &iv.decision)?;
        for (m, (&y, fault)) in iv.labels.iter().zip(p.faults()).enumerate() {
            outcome.record(fault, y > 0);
            if y > 0 {
                ranked.push(RankedPrediction {
                    host: m,
                    interval: iv.t,
                    ranking: model.prototypes.rank_fault_types(p.classify.row(m)),
                    truth: y,
                });
            }
        }
        visit(iv, &p);
    }
    let report = MetricsReport::build(&outcome, &ranked, split.len() as u64, hr_k);
    Ok(Evaluation { outcome, ranked, report })
}

/// One row of the epoch log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub l_d: f64,
    pub l_c: f64,
    pub l_slt: f64,
    pub l_final: f64,
    pub val_detection_accuracy: f64,
    pub val_classification_accuracy: Option<f64>,
    pub stage: Stage,
}

pub struct TrainOutcome {
    pub state: TrainState,
    pub log: Vec<EpochLog>,
    pub validation: Option<Evaluation>,
}

/// Fits the normalizer on the training split and runs `cfg.epochs` epochs.
/// `on_epoch` sees each log row as it is produced.
pub fn train(
    model: FtMoe,
    data: &Dataset,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let splits = data.splits();
    if splits.train.is_empty() {
        return Err(Error::Usage("dataset has no training intervals".into()));
    }
    let mut model = model;
    model.normalizer = Normalizer::fit(splits.train, model.config.features)?;
    let mut state = TrainState::new(model, cfg);
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut validation = None;
    for epoch in 0..cfg.epochs {
        state.epoch = epoch;
        let stats = train_epoch(&mut state, splits.train, cfg)?;
        let (det, cls) = if splits.val.is_empty() {
            (f64::NAN, None)
        } else {
            let ev = evaluate(&state.model, splits.val, cfg.hr_k)?;
            let r = (ev.report.metrics.accuracy, ev.report.metrics.hr);
            validation = Some(ev);
            r
        };
        // the stage in effect during this epoch
        let stage = state.stage;
        if let Some(acc) = cls {
            state.history.push(acc);
        }
        state.stage = stage_switch_check(state.stage, &state.history, epoch + 1, cfg.epochs, cfg);
        let row = EpochLog {
            epoch,
            lr: state.optimizer.learning_rate(),
            l_d: stats.loss.detection,
            l_c: stats.loss.classification,
            l_slt: stats.loss.selection,
            l_final: stats.loss.total,
            val_detection_accuracy: det,
            val_classification_accuracy: cls,
            stage,
        };
        on_epoch(&row);
        log.push(row);
    }
    state.epoch = cfg.epochs;
    Ok(TrainOutcome { state, log, validation })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Matrix;
    use crate::graph::SchedulingDecision;
    use crate::model::ModelConfig;

    fn bank() -> PrototypeBank {
        PrototypeBank {
            vectors: Matrix::from_rows(&[vec![5.0, 5.0], vec![0.0, 0.0], vec![3.0, 0.0], vec![0.0, 3.0]]).unwrap(),
        }
    }

    #[test]
    fn ema_formula_and_preconditions() {
        let mut b = bank();
        assert!(prototype_fast_update(&mut b, &[1.0, 1.0], 1, 0.9));
        assert!((b.vectors.get(1, 0) - 0.9).abs() < 1e-15);
        assert_eq!(b.vectors.row(2), &[3.0, 0.0]);

        let mut b = bank();
        assert!(prototype_fast_update(&mut b, &[1.0, 1.0], 1, 0.0));
        assert_eq!(b, bank());

        let mut b = bank();
        assert!(!prototype_fast_update(&mut b, &[2.9, 0.0], 1, 0.9));
        assert!(!prototype_fast_update(&mut b, &[0.0, 0.0], 0, 0.9));
        assert_eq!(b, bank());
    }

    #[test]
    fn stage_switch_rules() {
        let cfg = TrainConfig::default();
        let flat = [0.5, 0.501, 0.499, 0.5, 0.5005];
        assert_eq!(stage_switch_check(Stage::FastStarting, &flat, 6, 100, &cfg), Stage::FastStarting);
        let noisy = [0.4, 0.5, 0.45, 0.55, 0.42];
        assert_eq!(stage_switch_check(Stage::FastStarting, &noisy, 6, 100, &cfg), Stage::SteadyEnhancement);
        assert_eq!(stage_switch_check(Stage::FastStarting, &flat, 50, 100, &cfg), Stage::SteadyEnhancement);
        assert_eq!(stage_switch_check(Stage::FastStarting, &noisy[..4], 4, 100, &cfg), Stage::FastStarting);
        assert_eq!(stage_switch_check(Stage::SteadyEnhancement, &flat, 7, 100, &cfg), Stage::SteadyEnhancement);
    }

    fn toy(n: usize) -> Vec<Interval> {
        (0..n)
            .map(|t| Interval {
                t: t as u64,
                features: Matrix::from_rows(&[vec![0.2, 0.9, 0.1], vec![0.97, 0.1, 0.3], vec![0.1, 0.2, 0.99]])
                    .unwrap(),
                decision: SchedulingDecision::new(vec![(0, 1)]),
                labels: vec![0, 1, 3],
            })
            .collect()
    }

    fn small_model() -> FtMoe {
        let cfg = ModelConfig {
            features: 3,
            model: 8,
            hidden: 4,
            heads: 2,
            proto_dim: 4,
            experts: 3,
            max_active: 2,
            ..ModelConfig::default()
        };
        FtMoe::new(cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap()
    }

    #[test]
    fn repeated_epochs_reduce_loss() {
        let data = toy(2);
        let cfg = TrainConfig {
            optimizer: AdamWConfig { schedule: crate::autodiff::LrSchedule::constant(1e-3), ..AdamWConfig::default() },
            ..TrainConfig::default()
        };
        let mut state = TrainState::new(small_model(), &cfg);
        let w = cfg.loss;
        let before: f64 = data.iter().map(|iv| state.model.evaluate_loss(iv, &w).unwrap().total).sum();
        state.stage = Stage::SteadyEnhancement;
        let cfg1 = TrainConfig { batch: 2, ..cfg };
        train_epoch(&mut state, &data, &cfg1).unwrap();
        let mid: f64 = data.iter().map(|iv| state.model.evaluate_loss(iv, &w).unwrap().total).sum();
        train_epoch(&mut state, &data, &cfg1).unwrap();
        let after: f64 = data.iter().map(|iv| state.model.evaluate_loss(iv, &w).unwrap().total).sum();
        assert!(mid < before && after < mid, "{} {} {}", before, mid, after);
    }

    #[test]
    fn empty_shard_is_usage_error() {
        let cfg = TrainConfig::default();
        let mut state = TrainState::new(small_model(), &cfg);
        assert!(matches!(train_epoch(&mut state, &[], &cfg), Err(Error::Usage(_))));
        assert!(matches!(evaluate(&state.model, &[], 1), Err(Error::Usage(_))));
    }

    #[test]
    fn steady_stage_never_runs_the_ema() {
        let data = toy(3);
        let cfg = TrainConfig { eta: 1.0, ..TrainConfig::default() };
        let mut state = TrainState::new(small_model(), &cfg);
        state.stage = Stage::SteadyEnhancement;
        let s = train_epoch(&mut state, &data, &cfg).unwrap();
        assert_eq!(s.ema_updates, 0);
    }

    #[test]
    fn training_is_deterministic() {
        let mut ds = Dataset::new(3, 3, 0);
        ds.intervals = toy(10);
        let cfg = TrainConfig { epochs: 2, ..TrainConfig::default() };
        let a = train(small_model(), &ds, &cfg, |_| {}).unwrap();
        let b = train(small_model(), &ds, &cfg, |_| {}).unwrap();
        assert_eq!(a.state, b.state);
        assert_eq!(a.log, b.log);
    }
}
