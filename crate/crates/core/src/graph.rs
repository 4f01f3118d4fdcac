//! Schedule-aware graph encoder.
//!
//! Task migrations of one interval form a graph over hosts. Each host
//! attends over its migration neighbours with edge-featured attention and
//! aggregates their projected features.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Binding, Matrix, Parameterized, Tape, Var};
use crate::error::{Error, Result};

pub const LEAKY_SLOPE: f64 = 0.01;

/// Task migrations `(source host, target host)` decided for one interval.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SchedulingDecision {
    pub migrations: Vec<(usize, usize)>,
}

impl SchedulingDecision {
    pub fn new(migrations: Vec<(usize, usize)>) -> Self {
        SchedulingDecision { migrations }
    }

    pub fn len(&self) -> usize {
        self.migrations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.migrations.is_empty()
    }

    /// Same decision with host indices renamed through `perm[old] = new`.
    pub fn relabel(&self, perm: &[usize]) -> Self {
        SchedulingDecision { migrations: self.migrations.iter().map(|&(s, d)| (perm[s], perm[d])).collect() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MigrationGraph {
    hosts: usize,
    edges: Vec<((usize, usize), u32)>,
    neighbors: Vec<BTreeSet<usize>>,
}

impl MigrationGraph {
    /// Counts migrations per distinct directed edge. Self-migrations are
    /// dropped.
    pub fn build(decision: &SchedulingDecision, hosts: usize) -> Result<Self> {
        let mut counts: BTreeMap<(usize, usize), u32> = BTreeMap::new();
        for &(src, dst) in &decision.migrations {
            if src >= hosts || dst >= hosts {
                return Err(Error::Validation(format!(
                    "migration ({}, {}) references a host outside 0..{}",
                    src, dst, hosts
                )));
            }
            if src == dst {
                continue;
            }
            *counts.entry((src, dst)).or_default() += 1;
        }
        let mut neighbors = vec![BTreeSet::new(); hosts];
        for &(src, dst) in counts.keys() {
            neighbors[src].insert(dst);
            neighbors[dst].insert(src);
        }
        Ok(MigrationGraph { hosts, edges: counts.into_iter().collect(), neighbors })
    }

    pub fn hosts(&self) -> usize {
        self.hosts
    }

    /// Number of distinct directed edges.
    pub fn distinct_edges(&self) -> usize {
        self.edges.len()
    }

    /// Directed edges sorted by `(src, dst)` with their migration counts.
    pub fn edges(&self) -> &[((usize, usize), u32)] {
        &self.edges
    }

    pub fn count(&self, src: usize, dst: usize) -> u32 {
        self.edges.binary_search_by_key(&(src, dst), |&(e, _)| e).map_or(0, |i| self.edges[i].1)
    }

    pub fn neighbors(&self, host: usize) -> &BTreeSet<usize> {
        &self.neighbors[host]
    }

    pub fn total_migrations(&self) -> u32 {
        self.edges.iter().map(|&(_, c)| c).sum()
    }

    /// Unordered neighbour pairs `(lo, hi)` with the summed count of both
    /// directions, sorted.
    pub fn undirected_pairs(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::new();
        for m in 0..self.hosts {
            for &n in self.neighbors[m].range(m + 1..) {
                let c = self.count(m, n) + self.count(n, m);
                out.push((m, n, c as f64));
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphDims {
    pub features: usize,
    pub hidden: usize,
    pub model: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphEncoder {
    pub dims: GraphDims,
    /// `1 x N` weight and bias mapping a scalar count to an N-vector.
    pub count_weight: Matrix,
    pub count_bias: Matrix,
    /// `N x d_h`
    pub edge_proj: Matrix,
    /// `d_h x 1`
    pub attn_vec: Matrix,
    /// `N x d_model`
    pub value_proj: Matrix,
}

/// Attention logits, one per unordered neighbour pair (the logit is
/// symmetric in the pair).
pub struct EdgeLogits {
    pub pairs: Vec<(usize, usize)>,
    /// `K' x 1`, absent when the graph has no edges.
    pub values: Option<Var>,
}

pub struct GraphOutput {
    /// `M x d_model`
    pub encoded: Var,
    /// `M x M` neighbour attention (zero rows for isolated hosts).
    pub attention: Var,
}

impl GraphEncoder {
    pub fn new<R: Rng + ?Sized>(dims: GraphDims, rng: &mut R) -> Self {
        GraphEncoder {
            dims,
            count_weight: Matrix::xavier(1, dims.features, rng),
            count_bias: Matrix::zeros(1, dims.features),
            edge_proj: Matrix::xavier(dims.features, dims.hidden, rng),
            attn_vec: Matrix::xavier(dims.hidden, 1, rng),
            value_proj: Matrix::xavier(dims.features, dims.model, rng),
        }
    }

    pub fn attention_logits(
        &self,
        tape: &mut Tape,
        bind: &mut Binding,
        x: Var,
        graph: &MigrationGraph,
    ) -> Result<EdgeLogits> {
        let pairs = graph.undirected_pairs();
        if pairs.is_empty() {
            return Ok(EdgeLogits { pairs: Vec::new(), values: None });
        }
        let hosts = tape.value(x).rows();
        if hosts != graph.hosts() {
            return Err(Error::dim(
                "attention_logits",
                format!("{} feature rows for a {}-host graph", hosts, graph.hosts()),
            ));
        }
        let mut incidence = Matrix::zeros(pairs.len(), hosts);
        for (k, &(m, n, _)) in pairs.iter().enumerate() {
            incidence.set(k, m, 1.0);
            incidence.set(k, n, 1.0);
        }
        let counts = Matrix::col_vector(pairs.iter().map(|p| p.2).collect());

        let w_f = bind.bind(tape, "graph.count_weight", &self.count_weight);
        let b_f = bind.bind(tape, "graph.count_bias", &self.count_bias);
        let w_e = bind.bind(tape, "graph.edge_proj", &self.edge_proj);
        let w_a = bind.bind(tape, "graph.attn_vec", &self.attn_vec);

        let inc = tape.constant(incidence);
        let pair_sum = tape.matmul(inc, x)?;
        let c = tape.constant(counts);
        let f = tape.matmul(c, w_f)?;
        let f = tape.add_row(f, b_f)?;
        let h = tape.add(pair_sum, f)?;
        let h = tape.matmul(h, w_e)?;
        let h = tape.leaky_relu(h, LEAKY_SLOPE)?;
        let e = tape.matmul(h, w_a)?;
        Ok(EdgeLogits { pairs: pairs.iter().map(|&(m, n, _)| (m, n)).collect(), values: Some(e) })
    }

    /// Softmax of the logits over each host's neighbour set.
    pub fn attention_normalize(&self, tape: &mut Tape, logits: &EdgeLogits, graph: &MigrationGraph) -> Result<Var> {
        let hosts = graph.hosts();
        let Some(values) = logits.values else {
            return Ok(tape.constant(Matrix::zeros(hosts, hosts)));
        };
        let mut targets = Vec::with_capacity(2 * logits.pairs.len());
        let mut mask = vec![false; hosts * hosts];
        for (k, &(m, n)) in logits.pairs.iter().enumerate() {
            targets.push((k, m, n));
            targets.push((k, n, m));
            mask[m * hosts + n] = true;
            mask[n * hosts + m] = true;
        }
        let dense = tape.scatter(values, hosts, hosts, targets)?;
        tape.masked_row_softmax(dense, &mask)
    }

    /// `X'_i = sum_j A_ij W_t X_j`, or `W_t X_i` for a host with no
    /// neighbours.
    pub fn aggregate(
        &self,
        tape: &mut Tape,
        bind: &mut Binding,
        x: Var,
        attention: Var,
        graph: &MigrationGraph,
    ) -> Result<Var> {
        let hosts = graph.hosts();
        let mut fallback = Matrix::zeros(hosts, hosts);
        for m in 0..hosts {
            if graph.neighbors(m).is_empty() {
                fallback.set(m, m, 1.0);
            }
        }
        let fb = tape.constant(fallback);
        let mix = tape.add(attention, fb)?;
        let w_t = bind.bind(tape, "graph.value_proj", &self.value_proj);
        let projected = tape.matmul(x, w_t)?;
        tape.matmul(mix, projected)
    }

    pub fn forward(&self, tape: &mut Tape, bind: &mut Binding, x: Var, graph: &MigrationGraph) -> Result<GraphOutput> {
        let logits = self.attention_logits(tape, bind, x, graph)?;
        let attention = self.attention_normalize(tape, &logits, graph)?;
        let encoded = self.aggregate(tape, bind, x, attention, graph)?;
        Ok(GraphOutput { encoded, attention })
    }
}

impl Parameterized for GraphEncoder {
    fn visit(&self, f: &mut dyn FnMut(&str, &Matrix)) {
        f("graph.count_weight", &self.count_weight);
        f("graph.count_bias", &self.count_bias);
        f("graph.edge_proj", &self.edge_proj);
        f("graph.attn_vec", &self.attn_vec);
        f("graph.value_proj", &self.value_proj);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Matrix)) {
        f("graph.count_weight", &mut self.count_weight);
        f("graph.count_bias", &mut self.count_bias);
        f("graph.edge_proj", &mut self.edge_proj);
        f("graph.attn_vec", &mut self.attn_vec);
        f("graph.value_proj", &mut self.value_proj);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Trainable;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dims() -> GraphDims {
        GraphDims { features: 3, hidden: 4, model: 5 }
    }

    fn leaky(v: f64) -> f64 {
        if v > 0.0 {
            v
        } else {
            LEAKY_SLOPE * v
        }
    }

    /// Straight-line evaluation of the edge logit for one pair.
    fn logit_oracle(enc: &GraphEncoder, x: &Matrix, m: usize, n: usize, count: f64) -> f64 {
        let d = enc.dims;
        let mut h = vec![0.0; d.features];
        for k in 0..d.features {
            h[k] = x.get(m, k) + x.get(n, k) + count * enc.count_weight.get(0, k) + enc.count_bias.get(0, k);
        }
        let mut e = 0.0;
        for j in 0..d.hidden {
            let mut z = 0.0;
            for k in 0..d.features {
                z += h[k] * enc.edge_proj.get(k, j);
            }
            e += enc.attn_vec.get(j, 0) * leaky(z);
        }
        e
    }

    fn run(enc: &GraphEncoder, x: &Matrix, graph: &MigrationGraph) -> (Matrix, Matrix) {
        let mut tape = Tape::new();
        let mut bind = Binding::new(Trainable::None);
        let xv = tape.constant(x.clone());
        let out = enc.forward(&mut tape, &mut bind, xv, graph).unwrap();
        (tape.value(out.encoded).clone(), tape.value(out.attention).clone())
    }

    #[test]
    fn builds_counts_and_neighbor_sets() {
        let s = SchedulingDecision::new(vec![(1, 2), (1, 2), (3, 1)]);
        let g = MigrationGraph::build(&s, 4).unwrap();
        assert_eq!(g.distinct_edges(), 2);
        assert_eq!(g.count(1, 2), 2);
        assert_eq!(g.count(3, 1), 1);
        assert_eq!(g.neighbors(1), &BTreeSet::from([2, 3]));
        assert_eq!(g.edges()[0].0, (1, 2));
        assert_eq!(g.total_migrations(), 3);
    }

    #[test]
    fn empty_schedule_has_no_edges() {
        let g = MigrationGraph::build(&SchedulingDecision::default(), 3).unwrap();
        assert_eq!(g.distinct_edges(), 0);
        assert!((0..3).all(|m| g.neighbors(m).is_empty()));
    }

    #[test]
    fn repeated_migrations_collapse_to_one_edge() {
        let s = SchedulingDecision::new(vec![(0, 1); 5]);
        let g = MigrationGraph::build(&s, 2).unwrap();
        assert_eq!(g.distinct_edges(), 1);
        assert_eq!(g.count(0, 1), 5);
    }

    #[test]
    fn out_of_range_host_rejected_and_self_migration_dropped() {
        let s = SchedulingDecision::new(vec![(0, 3)]);
        assert!(matches!(MigrationGraph::build(&s, 3), Err(Error::Validation(_))));
        let s = SchedulingDecision::new(vec![(1, 1), (0, 1)]);
        let g = MigrationGraph::build(&s, 2).unwrap();
        assert_eq!(g.distinct_edges(), 1);
        assert_eq!(g.total_migrations(), 1);
    }

    #[test]
    fn zero_attention_vector_gives_zero_logits() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut enc = GraphEncoder::new(dims(), &mut rng);
        enc.attn_vec = Matrix::zeros(4, 1);
        let x = Matrix::uniform(4, 3, 0.0, 1.0, &mut rng);
        let g = MigrationGraph::build(&SchedulingDecision::new(vec![(0, 1), (2, 1), (3, 0)]), 4).unwrap();
        let mut tape = Tape::new();
        let mut bind = Binding::new(Trainable::None);
        let xv = tape.constant(x);
        let l = enc.attention_logits(&mut tape, &mut bind, xv, &g).unwrap();
        assert!(tape.value(l.values.unwrap()).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn logits_match_straight_line_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let enc = GraphEncoder::new(dims(), &mut rng);
        let x = Matrix::uniform(5, 3, -1.0, 1.0, &mut rng);
        let s = SchedulingDecision::new(vec![(0, 1), (1, 0), (1, 0), (4, 2), (3, 4)]);
        let g = MigrationGraph::build(&s, 5).unwrap();
        let mut tape = Tape::new();
        let mut bind = Binding::new(Trainable::None);
        let xv = tape.constant(x.clone());
        let l = enc.attention_logits(&mut tape, &mut bind, xv, &g).unwrap();
        let vals = tape.value(l.values.unwrap());
        for (k, &(m, n)) in l.pairs.iter().enumerate() {
            let c = (g.count(m, n) + g.count(n, m)) as f64;
            assert!((vals.get(k, 0) - logit_oracle(&enc, &x, m, n, c)).abs() < 1e-12);
        }
        assert_eq!(l.pairs, vec![(0, 1), (2, 4), (3, 4)]);
    }

    #[test]
    fn normalization_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let enc = GraphEncoder::new(dims(), &mut rng);
        let g = MigrationGraph::build(&SchedulingDecision::new(vec![(0, 1), (0, 2), (0, 3)]), 4).unwrap();
        let mut tape = Tape::new();
        let e = tape.constant(Matrix::col_vector(vec![1.0, 2.0, 3.0]));
        let logits = EdgeLogits { pairs: vec![(0, 1), (0, 2), (0, 3)], values: Some(e) };
        let a = enc.attention_normalize(&mut tape, &logits, &g).unwrap();
        let a = tape.value(a);
        let z: f64 = [1.0f64, 2.0, 3.0].iter().map(|v| v.exp()).sum();
        for (j, v) in [1.0f64, 2.0, 3.0].iter().enumerate() {
            assert!((a.get(0, j + 1) - v.exp() / z).abs() < 1e-12);
        }
        assert!((a.row(0).iter().sum::<f64>() - 1.0).abs() < 1e-9);
        // host 1 has the single neighbour 0
        assert_eq!(a.get(1, 0), 1.0);

        let mut tape = Tape::new();
        let e = tape.constant(Matrix::col_vector(vec![0.7, 0.7]));
        let g2 = MigrationGraph::build(&SchedulingDecision::new(vec![(0, 1), (2, 0)]), 3).unwrap();
        let logits = EdgeLogits { pairs: vec![(0, 1), (0, 2)], values: Some(e) };
        let a = enc.attention_normalize(&mut tape, &logits, &g2).unwrap();
        assert_eq!(&tape.value(a).row(0)[1..], &[0.5, 0.5]);
    }

    #[test]
    fn symmetric_pair_has_symmetric_logit() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let enc = GraphEncoder::new(dims(), &mut rng);
        let mut x = Matrix::uniform(2, 3, 0.0, 1.0, &mut rng);
        let r0 = x.row(0).to_vec();
        x.row_mut(1).copy_from_slice(&r0);
        assert_eq!(logit_oracle(&enc, &x, 0, 1, 2.0), logit_oracle(&enc, &x, 1, 0, 2.0));
        let (_, a) = run(&enc, &x, &MigrationGraph::build(&SchedulingDecision::new(vec![(0, 1), (1, 0)]), 2).unwrap());
        assert_eq!(a.get(0, 1), 1.0);
        assert_eq!(a.get(1, 0), 1.0);
    }

    #[test]
    fn aggregation_matches_brute_force_summation() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let enc = GraphEncoder::new(dims(), &mut rng);
        let x = Matrix::uniform(4, 3, 0.0, 1.0, &mut rng);
        let g = MigrationGraph::build(&SchedulingDecision::new(vec![(0, 1), (1, 2), (2, 0), (0, 1)]), 4).unwrap();
        let (xp, a) = run(&enc, &x, &g);
        let proj = x.matmul(&enc.value_proj).unwrap();
        for i in 0..4 {
            let mut expect = vec![0.0; 5];
            if g.neighbors(i).is_empty() {
                expect.copy_from_slice(proj.row(i));
            } else {
                for &j in g.neighbors(i) {
                    for (e, p) in expect.iter_mut().zip(proj.row(j)) {
                        *e += a.get(i, j) * p;
                    }
                }
            }
            for (e, v) in expect.iter().zip(xp.row(i)) {
                assert!((e - v).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn single_neighbor_and_empty_schedule_fallback() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let enc = GraphEncoder::new(dims(), &mut rng);
        let x = Matrix::uniform(3, 3, 0.0, 1.0, &mut rng);
        let proj = x.matmul(&enc.value_proj).unwrap();

        let g = MigrationGraph::build(&SchedulingDecision::new(vec![(0, 1)]), 3).unwrap();
        let (xp, _) = run(&enc, &x, &g);
        assert!(xp.row(0).iter().zip(proj.row(1)).all(|(a, b)| (a - b).abs() < 1e-15));
        assert!(xp.row(2).iter().zip(proj.row(2)).all(|(a, b)| (a - b).abs() < 1e-15));

        let g = MigrationGraph::build(&SchedulingDecision::default(), 3).unwrap();
        let (xp, a) = run(&enc, &x, &g);
        assert!(xp.max_abs_diff(&proj) < 1e-15);
        assert!(a.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn host_permutation_equivariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let enc = GraphEncoder::new(dims(), &mut rng);
        let x = Matrix::uniform(5, 3, 0.0, 1.0, &mut rng);
        let s = SchedulingDecision::new(vec![(0, 1), (1, 3), (4, 3), (4, 3), (2, 0)]);
        let perm = [3usize, 0, 4, 1, 2];
        let mut xperm = Matrix::zeros(5, 3);
        for old in 0..5 {
            xperm.row_mut(perm[old]).copy_from_slice(x.row(old));
        }
        let (xp, _) = run(&enc, &x, &MigrationGraph::build(&s, 5).unwrap());
        let (xpp, _) = run(&enc, &xperm, &MigrationGraph::build(&s.relabel(&perm), 5).unwrap());
        for old in 0..5 {
            for (a, b) in xp.row(old).iter().zip(xpp.row(perm[old])) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
