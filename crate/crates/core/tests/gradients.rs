mod common;

use ftmoe::autodiff::finite_diff::check_gradients;
use ftmoe::autodiff::{Binding, Matrix, Tape, Trainable};
use ftmoe::dataset::Interval;
use ftmoe::graph::SchedulingDecision;
use ftmoe::model::FtMoe;
use ftmoe::objectives::{LossMode, LossWeights};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_case(seed: u64) -> (FtMoe, Interval) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = FtMoe::new(common::small_config(5), &mut rng).unwrap();
    let hosts = 4;
    let n = rng.random_range(0..6);
    let migrations = (0..n).map(|_| (rng.random_range(0..hosts), rng.random_range(0..hosts))).collect();
    let iv = Interval {
        t: 0,
        features: Matrix::uniform(hosts, 5, 0.0, 1.0, &mut rng),
        decision: SchedulingDecision::new(migrations),
        labels: (0..hosts).map(|_| rng.random_range(0..4u8)).collect(),
    };
    (model, iv)
}

fn max_error(model: &FtMoe, iv: &Interval, w: &LossWeights) -> (f64, String, usize, usize) {
    let mut tape = Tape::new();
    let mut bind = Binding::new(Trainable::All);
    let pass = model.forward(&mut tape, &mut bind, &iv.features, &iv.decision).unwrap();
    let loss = FtMoe::loss(&mut tape, &pass, &iv.labels, w).unwrap();
    let mut g = tape.backward(loss.total).unwrap();
    let grads = bind.collect(&tape, &mut g);
    let c = check_gradients(model, &grads, |p: &FtMoe| p.evaluate_loss(iv, w).unwrap().total, |_| true, 1e-4, 1e-6);
    (c.max_relative_error, c.worst_param, c.entries_checked, c.entries_skipped)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn end_to_end_gradients_match_central_differences(seed in any::<u64>(), literal in any::<bool>()) {
        let (model, iv) = random_case(seed);
        let w = LossWeights {
            mode: if literal { LossMode::Literal } else { LossMode::Hinge },
            ..LossWeights::default()
        };
        let (err, worst, checked, skipped) = max_error(&model, &iv, &w);
        prop_assert!(err < 1e-4, "seed {}: {:e} at {}", seed, err, worst);
        // kinks are rare; many skips would mean the estimates are broken
        prop_assert!(skipped * 50 <= checked + skipped, "seed {}: {} of {} entries skipped", seed, skipped, checked + skipped);
    }
}
