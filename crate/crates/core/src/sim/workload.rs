use std::ops::{Add, AddAssign, Sub};

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::config::{Range, WorkloadConfig};
use super::trace::TracePool;

/// Resource use of one task (or one host) during one interval.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Demand {
    /// MIPS
    pub cpu: f64,
    /// MB
    pub ram: f64,
    /// MB/s
    pub ram_read: f64,
    pub ram_write: f64,
    /// MB
    pub disk: f64,
    /// MB/s
    pub disk_read: f64,
    pub disk_write: f64,
}

impl AddAssign for Demand {
    fn add_assign(&mut self, o: Demand) {
        self.cpu += o.cpu;
        self.ram += o.ram;
        self.ram_read += o.ram_read;
        self.ram_write += o.ram_write;
        self.disk += o.disk;
        self.disk_read += o.disk_read;
        self.disk_write += o.disk_write;
    }
}

impl Add for Demand {
    type Output = Demand;

    fn add(mut self, o: Demand) -> Demand {
        self += o;
        self
    }
}

impl Sub for Demand {
    type Output = Demand;

    fn sub(self, o: Demand) -> Demand {
        Demand {
            cpu: self.cpu - o.cpu,
            ram: self.ram - o.ram,
            ram_read: self.ram_read - o.ram_read,
            ram_write: self.ram_write - o.ram_write,
            disk: self.disk - o.disk,
            disk_read: self.disk_read - o.disk_read,
            disk_write: self.disk_write - o.disk_write,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContainerTask {
    pub id: u64,
    pub arrival: u64,
    /// One entry per interval of work.
    pub trace: Vec<Demand>,
    /// Intervals after arrival by which the task should finish.
    pub deadline: u64,
    pub host: Option<usize>,
    /// Intervals of work completed (fractional under overload).
    pub progress: f64,
}

impl ContainerTask {
    /// Demand for the interval about to run.
    pub fn current(&self) -> Demand {
        let idx = (self.progress.floor() as usize).min(self.trace.len() - 1);
        self.trace[idx]
    }

    pub fn finished(&self) -> bool {
        self.progress + 1e-9 >= self.trace.len() as f64
    }
}

fn uniform<R: Rng + ?Sized>(r: Range, rng: &mut R) -> f64 {
    if r.max > r.min {
        rng.random_range(r.min..=r.max)
    } else {
        r.min
    }
}

/// `max(0, round(Normal(mean, std)))`; exact `mean` rounding when std is 0.
pub fn arrival_count<R: Rng + ?Sized>(mean: f64, std: f64, rng: &mut R) -> usize {
    let draw = if std > 0.0 { Normal::new(mean, std).expect("std checked positive").sample(rng) } else { mean };
    draw.round().max(0.0) as usize
}

/// Arrival counts for `intervals` consecutive intervals.
pub fn generate_workload<R: Rng + ?Sized>(cfg: &WorkloadConfig, intervals: usize, rng: &mut R) -> Vec<usize> {
    (0..intervals).map(|_| arrival_count(cfg.arrival_mean, cfg.arrival_std, rng)).collect()
}

pub struct TaskFactory {
    cfg: WorkloadConfig,
    pool: Option<TracePool>,
    next_id: u64,
}

impl TaskFactory {
    pub fn new(cfg: WorkloadConfig, pool: Option<TracePool>) -> Self {
        TaskFactory { cfg, pool, next_id: 0 }
    }

    pub fn spawn<R: Rng + ?Sized>(&mut self, arrival: u64, rng: &mut R) -> ContainerTask {
        let trace = match &self.pool {
            Some(pool) if !pool.is_empty() => pool.draw(&self.cfg, rng),
            _ => synthetic_trace(&self.cfg, rng),
        };
        let deadline = ((trace.len() as f64 * self.cfg.deadline_slack).ceil() as u64).max(1);
        let id = self.next_id;
        self.next_id += 1;
        ContainerTask { id, arrival, trace, deadline, host: None, progress: 0.0 }
    }
}

/// Baseline + drift + correlated log-normal noise + occasional spikes.
pub fn synthetic_trace<R: Rng + ?Sized>(cfg: &WorkloadConfig, rng: &mut R) -> Vec<Demand> {
    let len = uniform(cfg.duration, rng).round().max(1.0) as usize;
    // write level leans towards the read level by the configured correlation
    let paired = |r: Range, rho: f64, rng: &mut R| {
        let read = uniform(r, rng);
        let own = uniform(r, rng);
        let w = rho.abs();
        (read, w * read + (1.0 - w) * own)
    };
    let cpu = uniform(cfg.cpu, rng);
    let ram = uniform(cfg.ram, rng);
    let (ram_read, ram_write) = paired(cfg.ram_throughput, cfg.ram_rw_correlation, rng);
    let disk = uniform(cfg.disk, rng);
    let (disk_read, disk_write) = paired(cfg.disk_throughput, cfg.disk_rw_correlation, rng);
    let base = Demand { cpu, ram, ram_read, ram_write, disk, disk_read, disk_write };
    let drift = if cfg.trend > 0.0 { rng.random_range(-cfg.trend..=cfg.trend) } else { 0.0 };
    let s = cfg.noise;
    let lognormal = |z: f64| (s * z - 0.5 * s * s).exp();
    let pair = |z1: f64, z2: f64, rho: f64| (z1, rho * z1 + (1.0 - rho * rho).max(0.0).sqrt() * z2);
    (0..len)
        .map(|age| {
            let level = (1.0 + drift * age as f64).max(0.0);
            let z: [f64; 7] = std::array::from_fn(|_| StandardNormal.sample(rng));
            let (rr, rw) = pair(z[2], z[3], cfg.ram_rw_correlation);
            let (dr, dw) = pair(z[5], z[6], cfg.disk_rw_correlation);
            let spike = if rng.random::<f64>() < cfg.spike_rate { uniform(cfg.spike_factor, rng) } else { 1.0 };
            Demand {
                cpu: base.cpu * level * lognormal(z[0]) * spike,
                ram: base.ram * level * lognormal(z[1] * 0.25),
                ram_read: base.ram_read * level * lognormal(rr) * spike,
                ram_write: base.ram_write * level * lognormal(rw) * spike,
                disk: base.disk * (1.0 + 0.01 * age as f64) * lognormal(z[4] * 0.1),
                disk_read: base.disk_read * level * lognormal(dr) * spike,
                disk_write: base.disk_write * level * lognormal(dw) * spike,
            }
        })
        .collect()
}
