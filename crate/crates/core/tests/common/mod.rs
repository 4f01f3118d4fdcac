#![allow(dead_code)]

use ftmoe::autodiff::Matrix;
use ftmoe::dataset::{Dataset, Interval};
use ftmoe::graph::SchedulingDecision;
use ftmoe::model::{FtMoe, ModelConfig, Normalizer};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn small_config(features: usize) -> ModelConfig {
    ModelConfig {
        features,
        model: 8,
        hidden: 4,
        heads: 2,
        proto_dim: 4,
        experts: 3,
        max_active: 2,
        ..ModelConfig::default()
    }
}

/// Three experts over 4 features and a 3-host stream of `len` intervals.
/// Expert 2 faces away from every input, so it is never eligible; host 2
/// is orthogonal to all experts, so it is never routed.
pub fn engineered_tuning(len: usize) -> (FtMoe, Dataset) {
    let mut model = FtMoe::new(small_config(4), &mut ChaCha8Rng::seed_from_u64(21)).unwrap();
    model.normalizer = Normalizer::identity(4);
    let s = 1.0 / 3f64.sqrt();
    let reprs = [[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0], [-s, -s, -s, 0.0]];
    for (e, r) in model.moe.experts.iter_mut().zip(reprs) {
        e.representation = Matrix::row_vector(r.to_vec());
        e.threshold = Matrix::scalar(0.5);
    }
    let mut data = Dataset::new(3, 4, 0);
    for t in 0..len {
        let wobble = 0.05 * (t % 3) as f64;
        data.intervals.push(Interval {
            t: t as u64,
            features: Matrix::from_rows(&[
                vec![1.0, 0.1 + wobble, 0.0, 0.0],
                vec![0.1, 1.0 - wobble, 0.0, 0.0],
                vec![0.0, 0.0, 0.0, 1.0],
            ])
            .unwrap(),
            decision: SchedulingDecision::new(if t % 2 == 0 { vec![(0, 1)] } else { vec![] }),
            labels: vec![1, 2, 0],
        });
    }
    (model, data)
}

pub fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_ftmoe")
}
