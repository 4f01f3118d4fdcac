//! Command-line front end.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::checkpoint::Checkpoint;
use crate::config::ExperimentConfig;
use crate::dataset::{Dataset, Split};
use crate::error::{Error, Result};
use crate::model::FtMoe;
use crate::objectives::LossMode;
use crate::sim::generate;
use crate::train::{evaluate_with, train};
use crate::tune::tune;

#[derive(Debug, Parser)]
#[command(name = "ftmoe", version, about = "Fault detection and classification for edge clusters")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a cluster and write a labeled dataset.
    GenData(GenData),
    /// Train a model offline.
    Train(TrainArgs),
    /// Fine-tune the experts of a trained model on a stream.
    Tune(TuneArgs),
    /// Compute detection and classification metrics.
    Eval(EvalArgs),
    /// Write classification embeddings of faulty hosts.
    DumpEmbeddings(DumpArgs),
}

#[derive(Debug, Args)]
pub struct GenData {
    #[arg(long)]
    pub hosts: Option<usize>,
    #[arg(long)]
    pub intervals: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Generation summary (JSON).
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub loss_mode: Option<LossMode>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Epoch log (CSV); defaults next to the checkpoint.
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TuneArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub stream: PathBuf,
    #[arg(long)]
    pub interval_threshold: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Step log (CSV); defaults next to the output checkpoint.
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Metrics report (JSON); printed to stdout when omitted.
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    pub split: Split,
    #[arg(long)]
    pub hr_k: Option<usize>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Per-host gating records (JSON lines).
    #[arg(long)]
    pub routing_trace: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DumpArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: Split,
    #[arg(long)]
    pub out: PathBuf,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| Error::Parse(e.to_string()))?;
    w.write_all(b"\n").and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<File>> {
    csv::Writer::from_path(path).map_err(|e| csv_error(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Parse(format!("{}: {:?}", path.display(), other)),
    }
}

/// Input files that do not exist are a usage problem, not a data problem.
fn require(path: &Path, what: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::Usage(format!("{} {} does not exist", what, path.display())))
    }
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.file_stem().unwrap_or_default().to_os_string();
    name.push(suffix);
    path.with_file_name(name)
}

fn check_compatible(model: &FtMoe, data: &Dataset) -> Result<()> {
    if data.header.features != model.config.features {
        return Err(Error::Validation(format!(
            "dataset has {} features, model expects {}",
            data.header.features, model.config.features
        )));
    }
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train_cmd(a),
        Command::Tune(a) => tune_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::DumpEmbeddings(a) => dump_cmd(a),
    }
}

fn gen_data(a: GenData) -> Result<()> {
    let mut cfg = ExperimentConfig::load(a.config.as_deref())?.sim;
    if let Some(n) = a.hosts {
        if n == 0 {
            return Err(Error::Usage("--hosts must be at least 1".into()));
        }
        cfg = cfg.with_host_count(n);
    }
    if let Some(n) = a.intervals {
        cfg.intervals = n;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    let (data, report) = generate(&cfg)?;
    data.save(&a.out)?;
    if let Some(p) = &a.report {
        write_json(p, &report)?;
    }
    eprintln!("wrote {} host rows to {} (shares {:.3?})", report.host_rows, a.out.display(), report.class_shares);
    Ok(())
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    require(&a.data, "dataset")?;
    let exp = ExperimentConfig::load(a.config.as_deref())?;
    let mut cfg = exp.train;
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(m) = a.loss_mode {
        cfg.loss.mode = m;
    }
    cfg.validate()?;
    let data = Dataset::load(&a.data)?;
    let mut mc = exp.model;
    mc.features = data.header.features;
    let model = FtMoe::new(mc, &mut ChaCha8Rng::seed_from_u64(cfg.seed))?;

    let log_path = a.log.unwrap_or_else(|| sibling(&a.out, ".epochs.csv"));
    let mut log = csv_writer(&log_path)?;
    let mut log_err = None;
    let outcome = train(model, &data, &cfg, |row| {
        eprintln!(
            "epoch {} lr {:.2e} loss {:.4} val acc {:.4} hr {:?} {}",
            row.epoch, row.lr, row.l_final, row.val_detection_accuracy, row.val_classification_accuracy, row.stage
        );
        if log_err.is_none() {
            log_err = log.serialize(row).and_then(|_| Ok(log.flush()?)).err();
        }
    })?;
    if let Some(e) = log_err {
        return Err(csv_error(&log_path, e));
    }
    let s = outcome.state;
    Checkpoint::new(s.model, cfg.seed, s.stage, s.epoch, Some(s.optimizer)).save(&a.out)
}

fn tune_cmd(a: TuneArgs) -> Result<()> {
    require(&a.ckpt, "checkpoint")?;
    require(&a.stream, "stream")?;
    let exp = ExperimentConfig::load(a.config.as_deref())?;
    let mut cfg = exp.tune;
    if let Some(i) = a.interval_threshold {
        cfg.interval_threshold = i;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    let ck = Checkpoint::load(&a.ckpt)?;
    let stream = Dataset::load(&a.stream)?;
    check_compatible(&ck.model, &stream)?;
    if stream.len() < 2 {
        std::fs::copy(&a.ckpt, &a.out).map_err(|e| Error::io(&a.out, e))?;
        eprintln!("stream has no interval pairs; checkpoint copied");
        return Ok(());
    }
    let log_path = a.log.unwrap_or_else(|| sibling(&a.out, ".tune.csv"));
    let mut log = csv_writer(&log_path)?;
    let mut log_err = None;
    let out = tune(ck.model, &stream.intervals, &cfg, |row| {
        if row.added + row.removed > 0 {
            eprintln!(
                "step {} epoch {}: +{} -{} experts, now {}",
                row.step, row.epoch, row.added, row.removed, row.experts
            );
        }
        if log_err.is_none() {
            log_err = log.serialize(row).err();
        }
    })?;
    if let Some(e) = log_err.or_else(|| log.flush().err().map(csv::Error::from)) {
        return Err(csv_error(&log_path, e));
    }
    Checkpoint::new(out.model, ck.seed, ck.stage, ck.epoch, None).save(&a.out)
}

fn eval_cmd(a: EvalArgs) -> Result<()> {
    require(&a.ckpt, "checkpoint")?;
    require(&a.data, "dataset")?;
    let exp = ExperimentConfig::load(a.config.as_deref())?;
    let hr_k = a.hr_k.unwrap_or(exp.eval.hr_k);
    if hr_k == 0 {
        return Err(Error::Usage("--hr-k must be at least 1".into()));
    }
    let ck = Checkpoint::load(&a.ckpt)?;
    let data = Dataset::load(&a.data)?;
    check_compatible(&ck.model, &data)?;
    let mut trace = a.routing_trace.as_deref().map(create).transpose()?;
    let mut trace_err = None;
    let ev = evaluate_with(&ck.model, data.split(a.split), hr_k, |iv, p| {
        let Some(w) = trace.as_mut() else { return };
        for r in p.trace.records(iv.t) {
            if trace_err.is_none() {
                trace_err = serde_json::to_writer(&mut *w, &r)
                    .map_err(std::io::Error::from)
                    .and_then(|_| w.write_all(b"\n"))
                    .err();
            }
        }
    })?;
    if let (Some(p), Some(w)) = (&a.routing_trace, trace.as_mut()) {
        if let Some(e) = trace_err.or_else(|| w.flush().err()) {
            return Err(Error::io(p, e));
        }
    }
    match &a.report {
        Some(p) => write_json(p, &ev.report),
        None => {
            let text = serde_json::to_string_pretty(&ev.report).map_err(|e| Error::Parse(e.to_string()))?;
            let mut out = std::io::stdout().lock();
            writeln!(out, "{}", text).map_err(|e| Error::io("<stdout>", e))
        }
    }
}

fn dump_cmd(a: DumpArgs) -> Result<()> {
    require(&a.ckpt, "checkpoint")?;
    require(&a.data, "dataset")?;
    let ck = Checkpoint::load(&a.ckpt)?;
    let data = Dataset::load(&a.data)?;
    check_compatible(&ck.model, &data)?;
    let q = ck.model.config.proto_dim;
    let mut w = csv_writer(&a.out)?;
    let mut header = vec!["interval".to_string(), "host".into(), "label".into()];
    header.extend((0..q).map(|i| format!("c{}", i)));
    w.write_record(&header).map_err(|e| csv_error(&a.out, e))?;
    for iv in data.split(a.split) {
        let p = ck.model.predict(&iv.features, &iv.decision)?;
        for (m, &y) in iv.labels.iter().enumerate().filter(|(_, &y)| y > 0) {
            let mut rec = vec![iv.t.to_string(), m.to_string(), y.to_string()];
            rec.extend(p.classify.row(m).iter().map(|v| v.to_string()));
            w.write_record(&rec).map_err(|e| csv_error(&a.out, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(&a.out, e))
}
