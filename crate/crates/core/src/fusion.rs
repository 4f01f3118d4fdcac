//! Cross multi-head attention between the expert output and the graph
//! encoding, plus the detection/classification heads and the prototype
//! classifier.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Binding, Matrix, Parameterized, Tape, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cmha {
    pub heads: usize,
    /// `d_model x d_model` each; head `a` owns columns `a*d_k..(a+1)*d_k`.
    pub query: Matrix,
    pub key: Matrix,
    pub value: Matrix,
    /// `d_model x d_model`
    pub output: Matrix,
}

impl Cmha {
    pub fn new<R: Rng + ?Sized>(model: usize, heads: usize, rng: &mut R) -> Result<Self> {
        if heads == 0 || !model.is_multiple_of(heads) {
            return Err(Error::Config(format!("{} heads do not divide model width {}", heads, model)));
        }
        Ok(Cmha {
            heads,
            query: Matrix::xavier(model, model, rng),
            key: Matrix::xavier(model, model, rng),
            value: Matrix::xavier(model, model, rng),
            output: Matrix::xavier(model, model, rng),
        })
    }

    pub fn head_width(&self) -> usize {
        self.query.cols() / self.heads
    }

    /// `O = MultiHead(Y, X', X')`. Returns the output and the per-head
    /// attention matrices.
    pub fn forward(&self, tape: &mut Tape, bind: &mut Binding, queries: Var, context: Var) -> Result<(Var, Vec<Var>)> {
        let wq = bind.bind(tape, "cmha.query", &self.query);
        let wk = bind.bind(tape, "cmha.key", &self.key);
        let wv = bind.bind(tape, "cmha.value", &self.value);
        let wo = bind.bind(tape, "cmha.output", &self.output);
        let q = tape.matmul(queries, wq)?;
        let k = tape.matmul(context, wk)?;
        let v = tape.matmul(context, wv)?;
        let dk = self.head_width();
        let scale = 1.0 / (dk as f64).sqrt();
        let mut heads = Vec::with_capacity(self.heads);
        let mut weights = Vec::with_capacity(self.heads);
        for a in 0..self.heads {
            let qa = tape.slice_cols(q, a * dk, dk)?;
            let ka = tape.slice_cols(k, a * dk, dk)?;
            let va = tape.slice_cols(v, a * dk, dk)?;
            let scores = tape.matmul_nt(qa, ka)?;
            let scores = tape.scale(scores, scale)?;
            let attn = tape.row_softmax(scores)?;
            heads.push(tape.matmul(attn, va)?);
            weights.push(attn);
        }
        let cat = if heads.len() == 1 { heads[0] } else { tape.concat_cols(&heads)? };
        Ok((tape.matmul(cat, wo)?, weights))
    }
}

impl Parameterized for Cmha {
    fn visit(&self, f: &mut dyn FnMut(&str, &Matrix)) {
        f("cmha.query", &self.query);
        f("cmha.key", &self.key);
        f("cmha.value", &self.value);
        f("cmha.output", &self.output);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Matrix)) {
        f("cmha.query", &mut self.query);
        f("cmha.key", &mut self.key);
        f("cmha.value", &mut self.value);
        f("cmha.output", &mut self.output);
    }
}

/// Linear detection (softmax, 2 columns) and classification (sigmoid, Q
/// columns) heads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Heads {
    pub detect_weight: Matrix,
    pub detect_bias: Matrix,
    pub classify_weight: Matrix,
    pub classify_bias: Matrix,
}

impl Heads {
    pub fn new<R: Rng + ?Sized>(model: usize, proto_dim: usize, rng: &mut R) -> Self {
        Heads {
            detect_weight: Matrix::xavier(model, 2, rng),
            detect_bias: Matrix::zeros(1, 2),
            classify_weight: Matrix::xavier(model, proto_dim, rng),
            classify_bias: Matrix::zeros(1, proto_dim),
        }
    }

    pub fn detect(&self, tape: &mut Tape, bind: &mut Binding, o: Var) -> Result<Var> {
        let w = bind.bind(tape, "heads.detect_weight", &self.detect_weight);
        let b = bind.bind(tape, "heads.detect_bias", &self.detect_bias);
        let z = tape.matmul(o, w)?;
        let z = tape.add_row(z, b)?;
        tape.row_softmax(z)
    }

    pub fn classify(&self, tape: &mut Tape, bind: &mut Binding, o: Var) -> Result<Var> {
        let w = bind.bind(tape, "heads.classify_weight", &self.classify_weight);
        let b = bind.bind(tape, "heads.classify_bias", &self.classify_bias);
        let z = tape.matmul(o, w)?;
        let z = tape.add_row(z, b)?;
        tape.sigmoid(z)
    }
}

impl Parameterized for Heads {
    fn visit(&self, f: &mut dyn FnMut(&str, &Matrix)) {
        f("heads.detect_weight", &self.detect_weight);
        f("heads.detect_bias", &self.detect_bias);
        f("heads.classify_weight", &self.classify_weight);
        f("heads.classify_bias", &self.classify_bias);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Matrix)) {
        f("heads.detect_weight", &mut self.detect_weight);
        f("heads.detect_bias", &mut self.detect_bias);
        f("heads.classify_weight", &mut self.classify_weight);
        f("heads.classify_bias", &mut self.classify_bias);
    }
}

/// A fault is predicted when the positive column strictly wins.
pub fn fault_predicted(d: &[f64]) -> bool {
    d[1] > d[0]
}

/// `Z x Q` trainable class prototypes; row `z` stands for class `z`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrototypeBank {
    pub vectors: Matrix,
}

impl PrototypeBank {
    pub fn new<R: Rng + ?Sized>(classes: usize, dim: usize, rng: &mut R) -> Self {
        PrototypeBank { vectors: Matrix::uniform(classes, dim, 0.0, 1.0, rng) }
    }

    pub fn classes(&self) -> usize {
        self.vectors.rows()
    }

    pub fn bind(&self, tape: &mut Tape, bind: &mut Binding) -> Var {
        bind.bind(tape, "prototypes", &self.vectors)
    }

    /// Candidates ordered by ascending Euclidean distance between `c` and
    /// their prototype; ties go to the lower class index.
    pub fn rank(&self, c: &[f64], candidates: &[usize]) -> Vec<usize> {
        rank_by_distance(c, &self.vectors, candidates)
    }

    /// Ranking over the fault classes `1..Z` (class 0 is "no fault").
    pub fn rank_fault_types(&self, c: &[f64]) -> Vec<usize> {
        let candidates: Vec<usize> = (1..self.classes()).collect();
        self.rank(c, &candidates)
    }
}

pub fn rank_by_distance(c: &[f64], prototypes: &Matrix, candidates: &[usize]) -> Vec<usize> {
    let dist =
        |z: usize| -> f64 { prototypes.row(z).iter().zip(c).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt() };
    let mut scored: Vec<(f64, usize)> = candidates.iter().map(|&z| (dist(z), z)).collect();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    scored.into_iter().map(|(_, z)| z).collect()
}

impl Parameterized for PrototypeBank {
    fn visit(&self, f: &mut dyn FnMut(&str, &Matrix)) {
        f("prototypes", &self.vectors);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Matrix)) {
        f("prototypes", &mut self.vectors);
    }
}
