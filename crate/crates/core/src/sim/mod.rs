//! Deterministic edge-cluster simulator that produces labeled datasets.

mod cluster;
mod config;
pub mod labeler;
mod scheduler;
pub mod trace;
mod workload;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use cluster::{interval_energy, Cluster, QosCounters, Stressor};
pub use config::{
    HostGroup, HostSpec, LabelerConfig, Range, SchedulerConfig, SimConfig, StressorConfig, StressorEvent, StressorKind,
    StressorSpec, WorkloadConfig,
};
pub use labeler::{label, relabel, Labeler};
pub use scheduler::schedule;
pub use workload::{arrival_count, generate_workload, synthetic_trace, ContainerTask, Demand, TaskFactory};

use crate::autodiff::Matrix;
use crate::dataset::{Dataset, Interval, FAULT_CLASSES};
use crate::error::Result;
use crate::graph::SchedulingDecision;
use trace::TracePool;

const ARRIVAL_STREAM: u64 = 1;
const TASK_STREAM: u64 = 2;
const STRESSOR_STREAM: u64 = 3;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// One simulated interval before it is written out.
#[derive(Debug, Clone, PartialEq)]
pub struct IntervalRecord {
    pub t: u64,
    pub features: Matrix,
    pub decision: SchedulingDecision,
    pub labels: Vec<u8>,
    pub qos: QosCounters,
}

pub struct Simulator {
    cfg: SimConfig,
    cluster: Cluster,
    factory: TaskFactory,
    labeler: Labeler,
    arrivals: ChaCha8Rng,
    tasks: ChaCha8Rng,
    stress: ChaCha8Rng,
    t: u64,
}

impl Simulator {
    pub fn new(cfg: SimConfig) -> Result<Self> {
        cfg.validate()?;
        let pool = match &cfg.workload.trace_dir {
            Some(dir) => Some(TracePool::load_dir(dir)?),
            None => None,
        };
        let specs = cfg.host_specs();
        let hosts = specs.len();
        Ok(Simulator {
            cluster: Cluster::new(specs, cfg.interval_seconds),
            factory: TaskFactory::new(cfg.workload.clone(), pool),
            labeler: Labeler::new(cfg.labeler, hosts),
            arrivals: stream(cfg.seed, ARRIVAL_STREAM),
            tasks: stream(cfg.seed, TASK_STREAM),
            stress: stream(cfg.seed, STRESSOR_STREAM),
            t: 0,
            cfg,
        })
    }

    pub fn cluster(&self) -> &Cluster {
        &self.cluster
    }

    fn start_stressors(&mut self) {
        let t = self.t;
        for e in self.cfg.stressors.scheduled.iter().filter(|e| e.start == t && e.duration > 0) {
            self.cluster.stressors.push(Stressor {
                kind: e.kind,
                host: e.host,
                remaining: e.duration,
                intensity: e.intensity,
            });
        }
        for spec in &self.cfg.stressors.random {
            for h in 0..self.cluster.hosts() {
                if spec.hosts.as_ref().is_some_and(|hs| !hs.contains(&h)) {
                    continue;
                }
                // one draw per host and spec keeps the stream aligned
                let fire = self.stress.random::<f64>() < spec.rate;
                if !fire || self.cluster.stressed(h, spec.kind) {
                    continue;
                }
                let duration = self.stress.random_range(spec.duration.min..=spec.duration.max).round().max(1.0);
                let intensity = if spec.intensity.max > spec.intensity.min {
                    self.stress.random_range(spec.intensity.min..=spec.intensity.max)
                } else {
                    spec.intensity.min
                };
                self.cluster.stressors.push(Stressor {
                    kind: spec.kind,
                    host: h,
                    remaining: duration as u64,
                    intensity,
                });
            }
        }
    }

    pub fn step(&mut self) -> IntervalRecord {
        let t = self.t;
        self.start_stressors();
        let n = arrival_count(self.cfg.workload.arrival_mean, self.cfg.workload.arrival_std, &mut self.arrivals);
        let arrivals = (0..n).map(|_| self.factory.spawn(t, &mut self.tasks)).collect();
        let decision = schedule(&mut self.cluster, arrivals, &self.cfg.scheduler);
        let (features, qos) = self.cluster.step(t);
        let labels = self.labeler.push(&features);
        self.t += 1;
        IntervalRecord { t, features, decision, labels, qos }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationReport {
    pub seed: u64,
    pub hosts: usize,
    pub intervals: usize,
    pub host_rows: usize,
    /// none, cpu, ram, disk
    pub class_counts: [u64; FAULT_CLASSES],
    pub class_shares: [f64; FAULT_CLASSES],
    pub migrations: u64,
    pub qos: QosCounters,
}

/// Runs the simulator for `cfg.intervals` intervals.
pub fn generate(cfg: &SimConfig) -> Result<(Dataset, GenerationReport)> {
    let mut sim = Simulator::new(cfg.clone())?;
    let hosts = sim.cluster.hosts();
    let mut ds = Dataset::new(hosts, labeler::FEATURES, cfg.seed);
    let mut qos = QosCounters::default();
    let mut migrations = 0u64;
    for _ in 0..cfg.intervals {
        let r = sim.step();
        qos.accumulate(&r.qos);
        migrations += r.decision.len() as u64;
        ds.intervals.push(Interval { t: r.t, features: r.features, decision: r.decision, labels: r.labels });
    }
    let counts = ds.class_counts();
    let rows = ds.host_rows();
    let shares = counts.map(|c| if rows > 0 { c as f64 / rows as f64 } else { 0.0 });
    let report = GenerationReport {
        seed: cfg.seed,
        hosts,
        intervals: cfg.intervals,
        host_rows: rows,
        class_counts: counts,
        class_shares: shares,
        migrations,
        qos,
    };
    Ok((ds, report))
}
