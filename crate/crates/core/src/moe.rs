//! Fault-adaptive mixture of experts.
//!
//! Each expert carries a representation vector and a raw activation
//! threshold. A host's feature vector is scored against every expert by
//! cosine similarity; experts whose squashed score beats their squashed
//! threshold are eligible, and the Top-any rule turns eligibility into a
//! non-empty selection of at most `max_active` experts.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{sigmoid, Binding, Matrix, Parameterized, Tape, Var};
use crate::error::{Error, Result};
use crate::graph::LEAKY_SLOPE;

/// Raw threshold given to experts created during online tuning.
pub const NEW_EXPERT_THRESHOLD: f64 = -10.0;
/// Weight scale for experts created during online tuning.
pub const NEW_EXPERT_WEIGHT_SCALE: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Expert {
    pub id: u32,
    /// `1 x N`
    pub representation: Matrix,
    /// `1 x 1` raw threshold; squashed through a sigmoid before use.
    pub threshold: Matrix,
    /// `N x 2N`, `1 x 2N`, `2N x d_model`, `1 x d_model`
    pub hidden_weight: Matrix,
    pub hidden_bias: Matrix,
    pub out_weight: Matrix,
    pub out_bias: Matrix,
}

impl Expert {
    pub fn new<R: Rng + ?Sized>(id: u32, features: usize, model: usize, rng: &mut R) -> Self {
        let mut representation = Matrix::uniform(1, features, -1.0, 1.0, rng);
        while representation.sum_sq() == 0.0 {
            representation = Matrix::uniform(1, features, -1.0, 1.0, rng);
        }
        Expert {
            id,
            representation,
            threshold: Matrix::scalar(0.0),
            hidden_weight: Matrix::xavier(features, 2 * features, rng),
            hidden_bias: Matrix::zeros(1, 2 * features),
            out_weight: Matrix::xavier(2 * features, model, rng),
            out_bias: Matrix::zeros(1, model),
        }
    }

    pub fn raw_threshold(&self) -> f64 {
        self.threshold.get(0, 0)
    }

    pub fn squashed_threshold(&self) -> f64 {
        sigmoid(self.raw_threshold())
    }

    fn prefix(&self) -> String {
        format!("moe.expert.{}", self.id)
    }

    /// Output of the expert network for one feature vector, evaluated
    /// directly (no tape).
    pub fn evaluate(&self, x: &[f64]) -> Vec<f64> {
        let hidden: Vec<f64> = (0..self.hidden_weight.cols())
            .map(|j| {
                let z: f64 = x.iter().enumerate().map(|(k, v)| v * self.hidden_weight.get(k, j)).sum::<f64>()
                    + self.hidden_bias.get(0, j);
                if z > 0.0 {
                    z
                } else {
                    LEAKY_SLOPE * z
                }
            })
            .collect();
        (0..self.out_weight.cols())
            .map(|j| {
                hidden.iter().enumerate().map(|(k, h)| h * self.out_weight.get(k, j)).sum::<f64>()
                    + self.out_bias.get(0, j)
            })
            .collect()
    }
}

/// Cosine similarity between a feature vector and an expert's
/// representation. A zero input scores 0 against every expert.
pub fn similarity(x: &[f64], expert: &Expert) -> Result<f64> {
    let w = expert.representation.data();
    if x.len() != w.len() {
        return Err(Error::dim("similarity", format!("{} vs {}", x.len(), w.len())));
    }
    let wn = w.iter().map(|v| v * v).sum::<f64>().sqrt();
    if wn == 0.0 {
        return Err(Error::Numeric(format!("expert {} has a zero representation", expert.id)));
    }
    let xn = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if xn == 0.0 {
        return Ok(0.0);
    }
    let dot: f64 = x.iter().zip(w).map(|(a, b)| a * b).sum();
    Ok(dot / (xn * wn))
}

/// Indices of the `k` largest scores, ties to the lower index, returned in
/// ascending index order.
pub fn top_k(scores: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut picked: Vec<usize> = order.into_iter().take(k).collect();
    picked.sort_unstable();
    picked
}

/// Top-any selection from activation probabilities and eligibility states.
pub fn top_any(probs: &[f64], states: &[bool], max_active: usize) -> Vec<usize> {
    let eligible = states.iter().filter(|&&s| s).count();
    if eligible > max_active {
        top_k(probs, max_active)
    } else if eligible == 0 {
        top_k(probs, 1)
    } else {
        states.iter().enumerate().filter(|(_, &s)| s).map(|(i, _)| i).collect()
    }
}

/// Gating result for one input vector. Indices refer to positions in the
/// layer's expert list at the time of routing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateDecision {
    pub scores: Vec<f64>,
    pub probs: Vec<f64>,
    pub states: Vec<bool>,
    pub active: Vec<usize>,
}

impl GateDecision {
    pub fn from_scores(scores: Vec<f64>, thresholds: &[f64], max_active: usize) -> Self {
        let probs: Vec<f64> = scores.iter().map(|&s| sigmoid(s)).collect();
        let states: Vec<bool> = probs.iter().zip(thresholds).map(|(p, &t)| p - sigmoid(t) > 0.0).collect();
        let active = top_any(&probs, &states, max_active);
        GateDecision { scores, probs, states, active }
    }

    /// No expert cleared its threshold (the Top-1 fallback fired).
    pub fn unrouted(&self) -> bool {
        !self.states.iter().any(|&s| s)
    }
}

/// Per-host gating of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct RoutingTrace {
    pub expert_ids: Vec<u32>,
    pub hosts: Vec<GateDecision>,
}

/// One line of the routing audit log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutingRecord {
    pub interval: u64,
    pub host: usize,
    pub probs: Vec<f64>,
    pub states: Vec<u8>,
    pub active: Vec<u32>,
}

impl RoutingTrace {
    pub fn records(&self, interval: u64) -> Vec<RoutingRecord> {
        self.hosts
            .iter()
            .enumerate()
            .map(|(host, d)| RoutingRecord {
                interval,
                host,
                probs: d.probs.clone(),
                states: d.states.iter().map(|&s| s as u8).collect(),
                active: d.active.iter().map(|&i| self.expert_ids[i]).collect(),
            })
            .collect()
    }
}

/// An input that cleared no expert threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnroutedInput {
    pub interval: u64,
    pub host: usize,
    pub features: Vec<f64>,
    pub label: Option<u8>,
}

/// Activation bookkeeping used by online tuning.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RoutingRecorder {
    /// Recording enabled.
    pub flag_s: bool,
    /// Lifecycle boundary pending.
    pub flag_f: bool,
    /// Activation count per expert, aligned with the expert list.
    pub activations: Vec<u64>,
    pub unrouted: Vec<UnroutedInput>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MoeDims {
    pub features: usize,
    pub model: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MoeLayer {
    pub dims: MoeDims,
    pub max_active: usize,
    pub experts: Vec<Expert>,
    pub next_id: u32,
    pub recorder: RoutingRecorder,
}

pub struct MoeOutput {
    /// `M x d_model`
    pub mixed: Var,
    /// `M x G` raw cosine scores
    pub similarity: Var,
    pub trace: RoutingTrace,
}

impl MoeLayer {
    pub fn new<R: Rng + ?Sized>(dims: MoeDims, experts: usize, max_active: usize, rng: &mut R) -> Result<Self> {
        if experts == 0 || max_active == 0 {
            return Err(Error::Config("a layer needs at least one expert and max_active >= 1".into()));
        }
        let list = (0..experts as u32).map(|id| Expert::new(id, dims.features, dims.model, rng)).collect();
        Ok(MoeLayer {
            dims,
            max_active,
            experts: list,
            next_id: experts as u32,
            recorder: RoutingRecorder {
                flag_s: true,
                flag_f: false,
                activations: vec![0; experts],
                unrouted: Vec::new(),
            },
        })
    }

    pub fn len(&self) -> usize {
        self.experts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.experts.is_empty()
    }

    pub fn expert_ids(&self) -> Vec<u32> {
        self.experts.iter().map(|e| e.id).collect()
    }

    pub fn position(&self, id: u32) -> Option<usize> {
        self.experts.iter().position(|e| e.id == id)
    }

    fn thresholds(&self) -> Vec<f64> {
        self.experts.iter().map(Expert::raw_threshold).collect()
    }

    /// Gate one feature vector without building a tape.
    pub fn gate(&self, x: &[f64]) -> Result<GateDecision> {
        let scores = self.experts.iter().map(|e| similarity(x, e)).collect::<Result<Vec<_>>>()?;
        Ok(GateDecision::from_scores(scores, &self.thresholds(), self.max_active))
    }

    /// Mixed output for one vector: mean over active experts of
    /// `E_g(x) * s_g`.
    pub fn experts_forward(&self, x: &[f64], decision: &GateDecision) -> Vec<f64> {
        let mut y = vec![0.0; self.dims.model];
        let n = decision.active.len() as f64;
        for &g in &decision.active {
            let out = self.experts[g].evaluate(x);
            for (acc, v) in y.iter_mut().zip(out) {
                *acc += v * decision.scores[g] / n;
            }
        }
        y
    }

    /// Batched gating and mixing over the rows of `x` (`M x N`, constant).
    pub fn forward(&self, tape: &mut Tape, bind: &mut Binding, x: Var) -> Result<MoeOutput> {
        let xm = tape.value(x).clone();
        if xm.cols() != self.dims.features {
            return Err(Error::dim(
                "moe_forward",
                format!("{} features, layer expects {}", xm.cols(), self.dims.features),
            ));
        }
        let hosts = xm.rows();
        let mut unit = xm.clone();
        for r in 0..hosts {
            let norm = unit.row(r).iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                for v in unit.row_mut(r) {
                    *v /= norm;
                }
            }
        }

        let reprs: Vec<Var> = self
            .experts
            .iter()
            .map(|e| bind.bind(tape, &format!("{}.representation", e.prefix()), &e.representation))
            .collect();
        let stacked = tape.concat_rows(&reprs)?;
        let normed = tape.row_normalize(stacked)?;
        let xu = tape.constant(unit);
        let sim = tape.matmul_nt(xu, normed)?;

        let thresholds = self.thresholds();
        let sim_values = tape.value(sim).clone();
        let decisions: Vec<GateDecision> = (0..hosts)
            .map(|m| GateDecision::from_scores(sim_values.row(m).to_vec(), &thresholds, self.max_active))
            .collect();

        let experts = self.experts.len();
        let mut weights = Matrix::zeros(hosts, experts);
        for (m, d) in decisions.iter().enumerate() {
            let share = 1.0 / d.active.len() as f64;
            for &g in &d.active {
                weights.set(m, g, share);
            }
        }
        let wv = tape.constant(weights.clone());
        let coef = tape.mul(sim, wv)?;

        let mut mixed: Option<Var> = None;
        for (g, expert) in self.experts.iter().enumerate() {
            if (0..hosts).all(|m| weights.get(m, g) == 0.0) {
                continue;
            }
            let p = expert.prefix();
            let w1 = bind.bind(tape, &format!("{}.hidden_weight", p), &expert.hidden_weight);
            let b1 = bind.bind(tape, &format!("{}.hidden_bias", p), &expert.hidden_bias);
            let w2 = bind.bind(tape, &format!("{}.out_weight", p), &expert.out_weight);
            let b2 = bind.bind(tape, &format!("{}.out_bias", p), &expert.out_bias);
            let h = tape.matmul(x, w1)?;
            let h = tape.add_row(h, b1)?;
            let h = tape.leaky_relu(h, LEAKY_SLOPE)?;
            let o = tape.matmul(h, w2)?;
            let o = tape.add_row(o, b2)?;
            let c = tape.slice_cols(coef, g, 1)?;
            let contrib = tape.mul_col(o, c)?;
            mixed = Some(match mixed {
                Some(acc) => tape.add(acc, contrib)?,
                None => contrib,
            });
        }
        let mixed = mixed.ok_or_else(|| Error::Usage("moe forward on zero hosts".into()))?;
        Ok(MoeOutput {
            mixed,
            similarity: sim,
            trace: RoutingTrace { expert_ids: self.expert_ids(), hosts: decisions },
        })
    }

    /// Adds a trace to the activation counters and stores unrouted inputs.
    /// No-op while recording is disabled.
    pub fn record_routing(
        &mut self,
        trace: &RoutingTrace,
        interval: u64,
        features: &Matrix,
        labels: Option<&[u8]>,
    ) -> Result<()> {
        if !self.recorder.flag_s {
            return Ok(());
        }
        if trace.expert_ids != self.expert_ids() {
            return Err(Error::Validation("routing trace predates an expert change".into()));
        }
        self.recorder.activations.resize(self.experts.len(), 0);
        for (host, d) in trace.hosts.iter().enumerate() {
            for (count, &s) in self.recorder.activations.iter_mut().zip(&d.states) {
                *count += s as u64;
            }
            if d.unrouted() {
                self.recorder.unrouted.push(UnroutedInput {
                    interval,
                    host,
                    features: features.row(host).to_vec(),
                    label: labels.map(|l| l[host]),
                });
            }
        }
        Ok(())
    }

    pub fn reset_recording(&mut self) {
        self.recorder.activations = vec![0; self.experts.len()];
        self.recorder.unrouted.clear();
    }

    pub fn remove_expert(&mut self, id: u32) -> Result<Expert> {
        let pos = self.position(id).ok_or_else(|| Error::Validation(format!("no expert with id {}", id)))?;
        if self.experts.len() == 1 {
            return Err(Error::Policy("refusing to remove the last expert".into()));
        }
        if pos < self.recorder.activations.len() {
            self.recorder.activations.remove(pos);
        }
        Ok(self.experts.remove(pos))
    }

    /// Appends an expert whose representation is the normalized mean of
    /// `seeds`; returns its id.
    pub fn add_expert<R: Rng + ?Sized>(&mut self, seeds: &[Vec<f64>], rng: &mut R) -> Result<u32> {
        let n = self.dims.features;
        if seeds.is_empty() {
            return Err(Error::Usage("add_expert needs at least one seed input".into()));
        }
        let mut mean = vec![0.0; n];
        for s in seeds {
            if s.len() != n {
                return Err(Error::dim("add_expert", format!("seed of {} features", s.len())));
            }
            for (m, v) in mean.iter_mut().zip(s) {
                *m += v / seeds.len() as f64;
            }
        }
        let norm = mean.iter().map(|v| v * v).sum::<f64>().sqrt();
        let representation = if norm > 0.0 {
            Matrix::row_vector(mean.iter().map(|v| v / norm).collect())
        } else {
            // seeds cancel out; any direction is as good as another
            Expert::new(0, n, 1, rng).representation
        };
        let s = NEW_EXPERT_WEIGHT_SCALE;
        let id = self.next_id;
        self.next_id += 1;
        self.experts.push(Expert {
            id,
            representation,
            threshold: Matrix::scalar(NEW_EXPERT_THRESHOLD),
            hidden_weight: Matrix::uniform(n, 2 * n, -s, s, rng),
            hidden_bias: Matrix::zeros(1, 2 * n),
            out_weight: Matrix::uniform(2 * n, self.dims.model, -s, s, rng),
            out_bias: Matrix::zeros(1, self.dims.model),
        });
        self.recorder.activations.push(0);
        Ok(id)
    }
}

impl Parameterized for MoeLayer {
    fn visit(&self, f: &mut dyn FnMut(&str, &Matrix)) {
        for e in &self.experts {
            let p = e.prefix();
            f(&format!("{}.representation", p), &e.representation);
            f(&format!("{}.threshold", p), &e.threshold);
            f(&format!("{}.hidden_weight", p), &e.hidden_weight);
            f(&format!("{}.hidden_bias", p), &e.hidden_bias);
            f(&format!("{}.out_weight", p), &e.out_weight);
            f(&format!("{}.out_bias", p), &e.out_bias);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Matrix)) {
        for e in &mut self.experts {
            let p = e.prefix();
            f(&format!("{}.representation", p), &mut e.representation);
            f(&format!("{}.threshold", p), &mut e.threshold);
            f(&format!("{}.hidden_weight", p), &mut e.hidden_weight);
            f(&format!("{}.hidden_bias", p), &mut e.hidden_bias);
            f(&format!("{}.out_weight", p), &mut e.out_weight);
            f(&format!("{}.out_bias", p), &mut e.out_bias);
        }
    }
}
