//! End-to-end acceptance checks. Runs without the test harness so every
//! criterion prints its own PASS/FAIL line.

mod common;

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use ftmoe::autodiff::finite_diff::check_gradients;
use ftmoe::autodiff::{checksum, Binding, Matrix, Tape, Trainable};
use ftmoe::dataset::{Dataset, Interval};
use ftmoe::fusion::PrototypeBank;
use ftmoe::graph::{GraphDims, GraphEncoder, MigrationGraph, SchedulingDecision};
use ftmoe::metrics::{detection_metrics, hit_rate, ndcg, DetectionOutcome, RankedPrediction};
use ftmoe::model::{is_moe_param, FtMoe};
use ftmoe::moe::GateDecision;
use ftmoe::objectives::LossWeights;
use ftmoe::sim::labeler::{label, relabel};
use ftmoe::sim::{generate, LabelerConfig, SimConfig};
use ftmoe::train::{
    evaluate, prototype_fast_update, stage_switch_check, train, train_epoch, Stage, TrainConfig, TrainState,
};
use ftmoe::tune::{frozen_checksum, TuneConfig, Tuner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Check<'a> = Box<dyn Fn() -> Outcome + 'a>;

fn within(limit: Duration, start: Instant, detail: String) -> Outcome {
    let spent = start.elapsed();
    if spent < limit {
        Ok(format!("{} in {:.2?}", detail, spent))
    } else {
        Err(format!("{} but took {:.2?} (limit {:?})", detail, spent, limit))
    }
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for at in 0..=p.len() {
            let mut q = p.clone();
            q.insert(at, n - 1);
            out.push(q);
        }
    }
    out
}

/// Enumerates every subset of at most `max` experts and keeps the one the
/// three-branch rule allows.
fn brute_force_route(probs: &[f64], states: &[bool], max: usize) -> Vec<usize> {
    let g = probs.len();
    let eligible: Vec<usize> = (0..g).filter(|&i| states[i]).collect();
    let mut best: Option<(f64, Vec<usize>)> = None;
    for mask in 1u32..(1 << g) {
        let set: Vec<usize> = (0..g).filter(|&i| mask & (1 << i) != 0).collect();
        let ok = if eligible.is_empty() {
            set.len() == 1
        } else if eligible.len() > max {
            set.len() == max
        } else {
            set == eligible
        };
        if !ok {
            continue;
        }
        let mass: f64 = set.iter().map(|&i| probs[i]).sum();
        if best.as_ref().is_none_or(|(b, _)| mass > *b) {
            best = Some((mass, set));
        }
    }
    best.unwrap().1
}

fn routing_oracle() -> Outcome {
    let start = Instant::now();
    let mut cases = 0usize;
    for g in 1..=6 {
        let perms = permutations(g);
        for omega in 0u32..(1 << g) {
            for perm in &perms {
                let scores: Vec<f64> = perm.iter().map(|&r| 0.1 * r as f64 - 0.2).collect();
                let thresholds: Vec<f64> =
                    (0..g).map(|i| if omega & (1 << i) != 0 { scores[i] - 0.05 } else { scores[i] + 0.05 }).collect();
                for max in 1..=g {
                    let d = GateDecision::from_scores(scores.clone(), &thresholds, max);
                    let want = brute_force_route(&d.probs, &d.states, max);
                    if d.active != want {
                        return Err(format!(
                            "mismatch for G={} omega={:b} perm={:?} max={}: {:?} vs {:?}",
                            g, omega, perm, max, d.active, want
                        ));
                    }
                    cases += 1;
                }
            }
        }
    }
    within(Duration::from_secs(10), start, format!("{} cases, 0 mismatches", cases))
}

fn gradient_check() -> Outcome {
    let start = Instant::now();
    let model = FtMoe::new(common::small_config(7), &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let iv = Interval {
        t: 0,
        features: Matrix::uniform(4, 7, 0.0, 1.0, &mut rng),
        decision: SchedulingDecision::new(vec![(0, 1), (2, 1), (1, 3), (0, 1)]),
        labels: vec![0, 1, 2, 3],
    };
    let w = LossWeights::default();
    let mut tape = Tape::new();
    let mut bind = Binding::new(Trainable::All);
    let pass = model.forward(&mut tape, &mut bind, &iv.features, &iv.decision).unwrap();
    let loss = FtMoe::loss(&mut tape, &pass, &iv.labels, &w).unwrap();
    let mut g = tape.backward(loss.total).unwrap();
    let grads = bind.collect(&tape, &mut g);
    let check =
        check_gradients(&model, &grads, |p: &FtMoe| p.evaluate_loss(&iv, &w).unwrap().total, |_| true, 1e-4, 1e-6);
    let detail = format!(
        "{} entries ({} non-smooth skipped), max relative error {:.2e}",
        check.entries_checked, check.entries_skipped, check.max_relative_error
    );
    if check.max_relative_error >= 1e-4 || check.entries_skipped * 50 > check.entries_checked {
        return Err(format!("{} at {}", detail, check.worst_param));
    }
    within(Duration::from_secs(30), start, detail)
}

fn attention_rows() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut rows = 0;
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let hosts = rng.random_range(2..=12);
        let n = rng.random_range(0..=3 * hosts);
        let migrations: Vec<(usize, usize)> =
            (0..n).map(|_| (rng.random_range(0..hosts), rng.random_range(0..hosts))).collect();
        let decision = SchedulingDecision::new(migrations);
        let graph = MigrationGraph::build(&decision, hosts).map_err(|e| e.to_string())?;
        let enc = GraphEncoder::new(GraphDims { features: 7, hidden: 4, model: 8 }, &mut rng);
        let mut tape = Tape::new();
        let mut bind = Binding::new(Trainable::None);
        let x = tape.constant(Matrix::uniform(hosts, 7, -2.0, 2.0, &mut rng));
        let out = enc.forward(&mut tape, &mut bind, x, &graph).map_err(|e| e.to_string())?;
        let a = tape.value(out.attention);
        for m in 0..hosts {
            let sum: f64 = a.row(m).iter().sum();
            if graph.neighbors(m).is_empty() {
                if sum != 0.0 {
                    return Err(format!("isolated host {} has attention mass {}", m, sum));
                }
                continue;
            }
            rows += 1;
            worst = worst.max((sum - 1.0).abs());
        }
    }
    if worst <= 1e-9 {
        Ok(format!("{} neighbour rows, max |sum - 1| = {:.1e}", rows, worst))
    } else {
        Err(format!("max |sum - 1| = {:e}", worst))
    }
}

/// Ten quiet prior intervals with throughput 1..=10 (90th percentile 9.1),
/// then `now`.
fn labeled(now: [f64; 7], t: usize, warmup: usize) -> (u8, u8) {
    let mut history: Vec<Matrix> = (0..t)
        .map(|k| {
            let v = (k + 1) as f64;
            Matrix::row_vector(vec![0.5, 0.5, v, v, 0.5, v, v])
        })
        .collect();
    history.push(Matrix::row_vector(now.to_vec()));
    let cfg = LabelerConfig { warmup, ..LabelerConfig::default() };
    (label(&history, t, &cfg)[0], relabel(&history, &cfg)[t][0])
}

fn labeler_table() -> Outcome {
    let q = [0.5, 0.5, 5.0, 5.0, 0.5, 5.0, 5.0];
    let with = |changes: &[(usize, f64)]| {
        let mut r = q;
        for &(k, v) in changes {
            r[k] = v;
        }
        r
    };
    let cases: Vec<(&str, [f64; 7], usize, u8)> = vec![
        ("quiet host", q, 10, 0),
        ("cpu above 95%", with(&[(0, 0.96)]), 10, 1),
        ("cpu exactly 95%", with(&[(0, 0.95)]), 10, 0),
        ("ram allocation above 95%", with(&[(1, 0.97)]), 10, 2),
        ("ram read above p90", with(&[(2, 9.5)]), 10, 2),
        ("ram write above p90", with(&[(3, 9.5)]), 10, 2),
        ("ram read equal to p90", with(&[(2, 9.1)]), 10, 0),
        ("disk above 95%", with(&[(4, 0.99)]), 10, 3),
        ("disk read or write above p90", with(&[(5, 9.2), (6, 9.3)]), 10, 3),
        ("cpu wins over ram", with(&[(0, 0.99), (1, 0.99)]), 10, 1),
        ("ram wins over disk", with(&[(2, 20.0), (4, 0.99)]), 10, 2),
        ("hot host during warmup", with(&[(0, 0.99), (4, 0.99)]), 3, 0),
    ];
    let mut failures = Vec::new();
    for (name, row, t, want) in &cases {
        let (brute, streamed) = labeled(*row, *t, 5);
        if brute != *want || streamed != *want {
            failures.push(format!("{}: want {} got {}/{}", name, want, brute, streamed));
        }
    }
    if failures.is_empty() {
        Ok(format!("{} of {} cases match", cases.len(), cases.len()))
    } else {
        Err(failures.join("; "))
    }
}

fn dataset_scale(dir: &Path) -> Outcome {
    let start = Instant::now();
    let out = dir.join("default.jsonl");
    let report = dir.join("default.report.json");
    let status = Command::new(common::bin())
        .args(["gen-data", "--out"])
        .arg(&out)
        .arg("--report")
        .arg(&report)
        .output()
        .map_err(|e| e.to_string())?;
    if !status.status.success() {
        return Err(String::from_utf8_lossy(&status.stderr).into_owned());
    }
    let data = Dataset::load(&out).map_err(|e| e.to_string())?;
    let r: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    let rows = data.host_rows();
    let shares: Vec<f64> = (0..4).map(|k| r["class_shares"][k].as_f64().unwrap()).collect();
    let target = [0.719, 0.050, 0.142, 0.089];
    let detail = format!(
        "{} host rows, shares {:.1}/{:.1}/{:.1}/{:.1}%",
        rows,
        100.0 * shares[0],
        100.0 * shares[1],
        100.0 * shares[2],
        100.0 * shares[3]
    );
    if rows != 160_000 || shares.iter().zip(target).any(|(s, t)| (s - t).abs() > 0.05) {
        return Err(detail);
    }
    within(Duration::from_secs(120), start, detail)
}

fn learnability() -> Outcome {
    let start = Instant::now();
    let cfg = SimConfig { intervals: 2000, seed: 7, ..SimConfig::default() };
    let (data, _) = generate(&cfg).map_err(|e| e.to_string())?;
    let model = FtMoe::new(Default::default(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let tc = TrainConfig { epochs: 10, ..TrainConfig::default() };
    let out = train(model, &data, &tc, |_| ()).map_err(|e| e.to_string())?;
    let ev = evaluate(&out.state.model, data.splits().test, 1).map_err(|e| e.to_string())?;
    let f1 = ev.report.metrics.f1;
    let hr = ev.report.metrics.hr.unwrap_or(0.0);
    let detail = format!("{} epochs, held-out F1 {:.4}, HR {:.4}", tc.epochs, f1, hr);
    if f1 < 0.85 || hr < 0.70 {
        return Err(detail);
    }
    within(Duration::from_secs(600), start, detail)
}

fn tuning_lifecycle() -> Outcome {
    let (model, stream) = common::engineered_tuning(11);
    let frozen = frozen_checksum(&model);
    let moe_before = checksum(&model, is_moe_param);
    let cfg = TuneConfig { interval_threshold: 5, ..TuneConfig::default() };
    let mut tuner = Tuner::new(model, cfg).map_err(|e| e.to_string())?;
    let mut removals = Vec::new();
    let mut additions = Vec::new();
    for pair in stream.intervals.windows(2) {
        let row = tuner.tune_step(&pair[0], &pair[1].labels).map_err(|e| e.to_string())?;
        if frozen_checksum(&tuner.model) != frozen {
            return Err(format!("frozen parameters changed at step {}", row.step));
        }
        if row.removed > 0 {
            removals.push((row.epoch, row.removed));
        }
        if row.added > 0 {
            additions.push((row.epoch, row.added));
        }
    }
    let ids = tuner.model.moe.expert_ids();
    let detail = format!("removals {:?}, additions {:?}, experts now {:?}", removals, additions, ids);
    if removals != [(5, 1)] || additions != [(5, 1)] || ids != [0, 1, 3] {
        return Err(detail);
    }
    if checksum(&tuner.model, is_moe_param) == moe_before {
        return Err("expert parameters never moved".into());
    }
    Ok(format!("{}, frozen checksum constant over {} steps", detail, tuner.steps()))
}

fn prototype_ema() -> Outcome {
    let p = [0.3, -1.2, 2.5, 0.0];
    let c = [0.31, -1.1, 2.4, 0.05];
    let mut bank = PrototypeBank {
        vectors: Matrix::from_rows(&[vec![9.0; 4], p.to_vec(), vec![-9.0; 4], vec![5.0, -5.0, 5.0, -5.0]]).unwrap(),
    };
    if !prototype_fast_update(&mut bank, &c, 1, 0.9) {
        return Err("update refused for a correctly ranked embedding".into());
    }
    for k in 0..4 {
        let want = 0.1 * p[k] + 0.9 * c[k];
        let got = bank.vectors.get(1, k);
        if (got - want).abs() > 2.0 * f64::EPSILON * want.abs().max(1.0) {
            return Err(format!("component {}: {} vs {}", k, got, want));
        }
    }

    let (model, stream) = common::engineered_tuning(12);
    let cfg = TrainConfig { epochs: 4, eta: 0.9, ..TrainConfig::default() };
    let mut state = TrainState::new(model, &cfg);
    let mut history = Vec::new();
    let mut stages = Vec::new();
    for epoch in 0..cfg.epochs {
        state.epoch = epoch;
        let stage = state.stage;
        let before = state.model.prototypes.clone();
        let stats = train_epoch(&mut state, &stream.intervals, &cfg).map_err(|e| e.to_string())?;
        if stage == Stage::SteadyEnhancement && stats.ema_updates != 0 {
            return Err(format!("EMA ran {} times after the switch", stats.ema_updates));
        }
        if stage == Stage::SteadyEnhancement && state.model.prototypes == before {
            return Err("steady stage left prototypes untouched by gradients".into());
        }
        stages.push(stage);
        history.push(0.5);
        state.stage = stage_switch_check(state.stage, &history, epoch + 1, cfg.epochs, &cfg);
    }
    if stages != [Stage::FastStarting, Stage::FastStarting, Stage::SteadyEnhancement, Stage::SteadyEnhancement] {
        return Err(format!("stages {:?}", stages));
    }
    Ok("P' = 0.1P + 0.9C, no EMA after the switch".into())
}

fn metric_oracles() -> Outcome {
    // 7 tp, 3 fp, 6 tn, 4 fn
    let mut o = DetectionOutcome::default();
    let truth = [1, 1, 1, 1, 1, 1, 1, 0, 0, 0, 0, 0, 0, 0, 0, 0, 1, 1, 1, 1];
    let pred = [1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0];
    for (y, p) in truth.iter().zip(pred) {
        o.record(p == 1, *y == 1);
    }
    let d = detection_metrics(&o);
    let ranks = [1, 1, 1, 1, 1, 2, 2, 2, 2, 3, 3];
    let preds: Vec<RankedPrediction> = ranks
        .iter()
        .enumerate()
        .map(|(i, &r)| {
            let truth = 1 + (i % 3) as u8;
            let mut ranking: Vec<usize> = (1..=3).filter(|&c| c != truth as usize).collect();
            ranking.insert(r - 1, truth as usize);
            RankedPrediction { host: i, interval: 0, ranking, truth }
        })
        .collect();
    let one_rank2 = [preds[5].clone()];
    let checks = [
        ("accuracy", d.accuracy, 0.65),
        ("precision", d.precision, 0.7),
        ("recall", d.recall, 0.6363636363636364),
        ("f1", d.f1, 0.6666666666666666),
        ("hr@1", hit_rate(&preds, 1).unwrap(), 5.0 / 11.0),
        ("hr@2", hit_rate(&preds, 2).unwrap(), 9.0 / 11.0),
        ("ndcg", ndcg(&preds).unwrap(), 0.7748835467532573),
        ("ndcg rank 2", ndcg(&one_rank2).unwrap(), 0.6309297535714575),
    ];
    for (name, got, want) in checks {
        if (got - want).abs() > 1e-9 {
            return Err(format!("{}: {} vs {}", name, got, want));
        }
    }
    Ok(format!("{} values within 1e-9 on 20 records", checks.len()))
}

fn pipeline(dir: &Path) -> Result<Vec<Vec<u8>>, String> {
    std::fs::create_dir_all(dir).map_err(|e| e.to_string())?;
    let run = |args: &[&str]| -> Result<(), String> {
        let out = Command::new(common::bin()).args(args).current_dir(dir).output().map_err(|e| e.to_string())?;
        if out.status.success() {
            Ok(())
        } else {
            Err(format!("{:?}: {}", args, String::from_utf8_lossy(&out.stderr)))
        }
    };
    run(&["gen-data", "--hosts", "6", "--intervals", "160", "--seed", "11", "--out", "d.jsonl", "--report", "g.json"])?;
    run(&["train", "--data", "d.jsonl", "--epochs", "2", "--seed", "5", "--out", "m.json"])?;
    run(&["eval", "--ckpt", "m.json", "--data", "d.jsonl", "--report", "r.json"])?;
    ["d.jsonl", "g.json", "m.json", "m.epochs.csv", "r.json"]
        .iter()
        .map(|f| std::fs::read(dir.join(f)).map_err(|e| e.to_string()))
        .collect()
}

fn determinism(dir: &Path) -> Outcome {
    let a = pipeline(&dir.join("a"))?;
    let b = pipeline(&dir.join("b"))?;
    if a != b {
        return Err("pipeline outputs differ".into());
    }
    let bytes: usize = a.iter().map(Vec::len).sum();
    Ok(format!("5 artifacts, {} bytes, identical", bytes))
}

fn main() {
    let dir = tempfile::tempdir().expect("temp dir");
    let criteria: Vec<(&str, Check)> = vec![
        ("routing oracle equivalence", Box::new(routing_oracle)),
        ("gradient correctness", Box::new(gradient_check)),
        ("attention normalization", Box::new(attention_rows)),
        ("labeler fidelity", Box::new(labeler_table)),
        ("dataset scale and distribution", Box::new(|| dataset_scale(dir.path()))),
        ("desk-scale learnability", Box::new(learnability)),
        ("online-tuning lifecycle", Box::new(tuning_lifecycle)),
        ("prototype EMA", Box::new(prototype_ema)),
        ("metric oracles", Box::new(metric_oracles)),
        ("determinism", Box::new(|| determinism(dir.path()))),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        match check() {
            Ok(detail) => println!("criterion {:>2} PASS {}: {}", i + 1, name, detail),
            Err(detail) => {
                failed += 1;
                println!("criterion {:>2} FAIL {}: {}", i + 1, name, detail);
            }
        }
    }
    if failed > 0 {
        eprintln!("{} acceptance criteria failed", failed);
        std::process::exit(1);
    }
}
