//! The full dual-path model: graph encoder and expert layer fused by cross
//! attention, followed by the detection/classification heads.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Binding, Matrix, Parameterized, Tape, Trainable, Var};
use crate::dataset::Interval;
use crate::error::{Error, Result};
use crate::fusion::{fault_predicted, Cmha, Heads, PrototypeBank};
use crate::graph::{GraphDims, GraphEncoder, MigrationGraph, SchedulingDecision};
use crate::moe::{MoeDims, MoeLayer, RoutingTrace};
use crate::objectives::{classification_loss, detection_loss, final_loss, selection_loss, LossBreakdown, LossWeights};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub features: usize,
    pub model: usize,
    pub hidden: usize,
    pub heads: usize,
    pub proto_dim: usize,
    pub classes: usize,
    pub experts: usize,
    pub max_active: usize,
    /// Add the expert output back onto the attention output.
    pub residual: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            features: 7,
            model: 64,
            hidden: 32,
            heads: 4,
            proto_dim: 8,
            classes: 4,
            experts: 12,
            max_active: 8,
            residual: false,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("features", self.features),
            ("model", self.model),
            ("hidden", self.hidden),
            ("heads", self.heads),
            ("proto_dim", self.proto_dim),
            ("experts", self.experts),
            ("max_active", self.max_active),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("model.{} must be positive", name)));
        }
        if !self.model.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "model.heads = {} does not divide model.model = {}",
                self.heads, self.model
            )));
        }
        if self.classes < 2 {
            return Err(Error::Config("model.classes must be at least 2".into()));
        }
        if self.max_active > self.experts {
            return Err(Error::Config("model.max_active exceeds model.experts".into()));
        }
        Ok(())
    }
}

/// Per-feature z-scoring fit on training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Normalizer {
    pub fn identity(features: usize) -> Self {
        Normalizer { mean: vec![0.0; features], scale: vec![1.0; features] }
    }

    pub fn fit(intervals: &[Interval], features: usize) -> Result<Self> {
        let mut sum = vec![0.0; features];
        let mut sq = vec![0.0; features];
        let mut n = 0usize;
        for iv in intervals {
            if iv.features.cols() != features {
                return Err(Error::dim("normalizer_fit", format!("{} feature columns", iv.features.cols())));
            }
            for r in 0..iv.features.rows() {
                for (k, v) in iv.features.row(r).iter().enumerate() {
                    sum[k] += v;
                    sq[k] += v * v;
                }
                n += 1;
            }
        }
        if n == 0 {
            return Ok(Normalizer::identity(features));
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
        let scale = sq
            .iter()
            .zip(&mean)
            .map(|(s, m)| {
                let var = (s / n as f64 - m * m).max(0.0);
                if var.sqrt() > 1e-9 {
                    var.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Normalizer { mean, scale })
    }

    pub fn apply(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.mean.len() {
            return Err(Error::dim(
                "normalize",
                format!("{} feature columns, normalizer has {}", x.cols(), self.mean.len()),
            ));
        }
        let mut out = x.clone();
        for r in 0..out.rows() {
            for (k, v) in out.row_mut(r).iter_mut().enumerate() {
                *v = (*v - self.mean[k]) / self.scale[k];
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FtMoe {
    pub config: ModelConfig,
    pub normalizer: Normalizer,
    pub graph: GraphEncoder,
    pub moe: MoeLayer,
    pub cmha: Cmha,
    pub heads: Heads,
    pub prototypes: PrototypeBank,
}

/// Tape handles produced by one forward pass.
pub struct ForwardPass {
    /// Normalized features, as seen by the gate.
    pub inputs: Matrix,
    pub detect: Var,
    pub classify: Var,
    pub prototypes: Var,
    pub similarity: Var,
    pub trace: RoutingTrace,
}

pub struct LossVars {
    pub detection: Var,
    pub classification: Var,
    pub selection: Var,
    pub total: Var,
}

impl LossVars {
    pub fn values(&self, tape: &Tape) -> LossBreakdown {
        LossBreakdown {
            detection: tape.scalar(self.detection),
            classification: tape.scalar(self.classification),
            selection: tape.scalar(self.selection),
            total: tape.scalar(self.total),
        }
    }
}

/// Detached outputs for one interval.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    /// `M x 2`
    pub detect: Matrix,
    /// `M x Q`
    pub classify: Matrix,
    pub trace: RoutingTrace,
}

impl Prediction {
    pub fn faults(&self) -> Vec<bool> {
        (0..self.detect.rows()).map(|m| fault_predicted(self.detect.row(m))).collect()
    }
}

impl FtMoe {
    pub fn new<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let graph =
            GraphEncoder::new(GraphDims { features: config.features, hidden: config.hidden, model: config.model }, rng);
        let moe = MoeLayer::new(
            MoeDims { features: config.features, model: config.model },
            config.experts,
            config.max_active,
            rng,
        )?;
        let cmha = Cmha::new(config.model, config.heads, rng)?;
        let heads = Heads::new(config.model, config.proto_dim, rng);
        let prototypes = PrototypeBank::new(config.classes, config.proto_dim, rng);
        Ok(FtMoe { config, normalizer: Normalizer::identity(config.features), graph, moe, cmha, heads, prototypes })
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        bind: &mut Binding,
        features: &Matrix,
        decision: &SchedulingDecision,
    ) -> Result<ForwardPass> {
        let inputs = self.normalizer.apply(features)?;
        let graph = MigrationGraph::build(decision, inputs.rows())?;
        let x = tape.constant(inputs.clone());
        let encoded = self.graph.forward(tape, bind, x, &graph)?.encoded;
        let moe = self.moe.forward(tape, bind, x)?;
        let (mut o, _) = self.cmha.forward(tape, bind, moe.mixed, encoded)?;
        if self.config.residual {
            o = tape.add(o, moe.mixed)?;
        }
        let detect = self.heads.detect(tape, bind, o)?;
        let classify = self.heads.classify(tape, bind, o)?;
        let prototypes = self.prototypes.bind(tape, bind);
        Ok(FtMoe::pass(inputs, detect, classify, prototypes, moe.similarity, moe.trace))
    }

    fn pass(
        inputs: Matrix,
        detect: Var,
        classify: Var,
        prototypes: Var,
        similarity: Var,
        trace: RoutingTrace,
    ) -> ForwardPass {
        ForwardPass { inputs, detect, classify, prototypes, similarity, trace }
    }

    pub fn loss(tape: &mut Tape, pass: &ForwardPass, labels: &[u8], weights: &LossWeights) -> Result<LossVars> {
        let detection = detection_loss(tape, pass.detect, labels)?;
        let classification =
            classification_loss(tape, pass.classify, pass.prototypes, labels, weights.mode, weights.margin)?;
        let selection = selection_loss(tape, pass.similarity, weights.lambda_slt)?;
        let total = final_loss(tape, detection, classification, selection, weights)?;
        Ok(LossVars { detection, classification, selection, total })
    }

    pub fn predict(&self, features: &Matrix, decision: &SchedulingDecision) -> Result<Prediction> {
        let mut tape = Tape::new();
        let mut bind = Binding::new(Trainable::None);
        let pass = self.forward(&mut tape, &mut bind, features, decision)?;
        Ok(Prediction {
            detect: tape.value(pass.detect).clone(),
            classify: tape.value(pass.classify).clone(),
            trace: pass.trace,
        })
    }

    /// Loss of one interval without gradients.
    pub fn evaluate_loss(&self, interval: &Interval, weights: &LossWeights) -> Result<LossBreakdown> {
        let mut tape = Tape::new();
        let mut bind = Binding::new(Trainable::None);
        let pass = self.forward(&mut tape, &mut bind, &interval.features, &interval.decision)?;
        Ok(FtMoe::loss(&mut tape, &pass, &interval.labels, weights)?.values(&tape))
    }
}

impl Parameterized for FtMoe {
    fn visit(&self, f: &mut dyn FnMut(&str, &Matrix)) {
        self.graph.visit(f);
        self.moe.visit(f);
        self.cmha.visit(f);
        self.heads.visit(f);
        self.prototypes.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Matrix)) {
        self.graph.visit_mut(f);
        self.moe.visit_mut(f);
        self.cmha.visit_mut(f);
        self.heads.visit_mut(f);
        self.prototypes.visit_mut(f);
    }
}

/// True for parameters owned by the expert layer.
pub fn is_moe_param(name: &str) -> bool {
    name.starts_with("moe.")
}
