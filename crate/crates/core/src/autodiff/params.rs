use std::collections::BTreeMap;

use sha2::{Digest, Sha256};

use super::matrix::Matrix;
use super::tape::{Gradients, Tape, Var};

/// Anything that owns named trainable matrices.
///
/// Names are stable across calls and unique within one object; they key
/// optimizer state and checkpoint entries.
pub trait Parameterized {
    fn visit(&self, f: &mut dyn FnMut(&str, &Matrix));
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Matrix));

    fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        self.visit(&mut |n, _| names.push(n.to_string()));
        names
    }

    fn param_count(&self) -> usize {
        let mut total = 0;
        self.visit(&mut |_, m| total += m.len());
        total
    }
}

/// SHA-256 over the names and exact bit patterns of the selected parameters.
pub fn checksum<P: Parameterized + ?Sized>(params: &P, select: impl Fn(&str) -> bool) -> String {
    let mut hasher = Sha256::new();
    params.visit(&mut |name, m| {
        if !select(name) {
            return;
        }
        hasher.update(name.as_bytes());
        hasher.update((m.rows() as u64).to_le_bytes());
        hasher.update((m.cols() as u64).to_le_bytes());
        for v in m.data() {
            hasher.update(v.to_bits().to_le_bytes());
        }
    });
    hasher.finalize().iter().map(|b| format!("{:02x}", b)).collect()
}

/// Which parameters become trainable leaves when bound to a tape.
#[derive(Clone, Copy)]
pub enum Trainable<'a> {
    All,
    None,
    Matching(&'a dyn Fn(&str) -> bool),
}

impl Trainable<'_> {
    fn admits(&self, name: &str) -> bool {
        match self {
            Trainable::All => true,
            Trainable::None => false,
            Trainable::Matching(f) => f(name),
        }
    }
}

/// Records which tape node each named parameter was bound to during one
/// forward pass.
pub struct Binding<'a> {
    trainable: Trainable<'a>,
    bound: Vec<(String, Var)>,
}

impl<'a> Binding<'a> {
    pub fn new(trainable: Trainable<'a>) -> Self {
        Binding { trainable, bound: Vec::new() }
    }

    /// Pushes `value` onto the tape as a leaf (if trainable) or constant.
    pub fn bind(&mut self, tape: &mut Tape, name: &str, value: &Matrix) -> Var {
        if self.trainable.admits(name) {
            let v = tape.leaf(value.clone());
            self.bound.push((name.to_string(), v));
            v
        } else {
            tape.constant(value.clone())
        }
    }

    pub fn bound_names(&self) -> impl Iterator<Item = &str> {
        self.bound.iter().map(|(n, _)| n.as_str())
    }

    /// Gradient per bound parameter; parameters the loss does not reach get
    /// an explicit zero matrix of the right shape.
    pub fn collect(&self, tape: &Tape, grads: &mut Gradients) -> BTreeMap<String, Matrix> {
        let mut out = BTreeMap::new();
        for (name, var) in &self.bound {
            let g = grads.take(*var).unwrap_or_else(|| {
                let (r, c) = tape.value(*var).shape();
                Matrix::zeros(r, c)
            });
            match out.get_mut(name) {
                Some(existing) => Matrix::add_assign(existing, &g),
                None => {
                    out.insert(name.clone(), g);
                }
            }
        }
        out
    }
}
