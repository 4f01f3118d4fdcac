use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::config::{HostSpec, StressorKind};
use super::labeler::FEATURES;
use super::workload::{ContainerTask, Demand};
use crate::autodiff::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stressor {
    pub kind: StressorKind,
    pub host: usize,
    pub remaining: u64,
    pub intensity: f64,
}

impl Stressor {
    pub fn demand(&self, spec: &HostSpec) -> Demand {
        let mut d = Demand::default();
        match self.kind {
            StressorKind::Cpu => d.cpu = self.intensity * spec.cpu,
            StressorKind::RamAlloc => d.ram = self.intensity * spec.ram,
            StressorKind::RamThroughput => {
                d.ram_read = self.intensity;
                d.ram_write = self.intensity;
            }
            StressorKind::Disk => d.disk = self.intensity * spec.disk,
        }
        d
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct QosCounters {
    pub cpu_utilization: f64,
    pub ram_utilization: f64,
    /// Wh consumed by the whole cluster this interval.
    pub energy: f64,
    pub sla_violations: u64,
    /// Seconds spent queued, summed over waiting tasks.
    pub wait_time: f64,
    /// Seconds from arrival to completion, summed over tasks finished.
    pub response_time: f64,
    pub completed: u64,
    pub queued: u64,
    /// Hosts whose cpu demand exceeded capacity.
    pub overloaded_hosts: u64,
}

impl QosCounters {
    pub fn accumulate(&mut self, o: &QosCounters) {
        self.cpu_utilization += o.cpu_utilization;
        self.ram_utilization += o.ram_utilization;
        self.energy += o.energy;
        self.sla_violations += o.sla_violations;
        self.wait_time += o.wait_time;
        self.response_time += o.response_time;
        self.completed += o.completed;
        self.queued += o.queued;
        self.overloaded_hosts += o.overloaded_hosts;
    }
}

/// Energy in Wh for one host over one interval under the linear power model.
pub fn interval_energy(spec: &HostSpec, cpu_util: f64, seconds: f64) -> f64 {
    seconds * (spec.idle_power + (spec.max_power - spec.idle_power) * cpu_util) / 3600.0
}

#[derive(Debug, Clone)]
pub struct Cluster {
    pub specs: Vec<HostSpec>,
    /// Placed tasks.
    pub tasks: Vec<ContainerTask>,
    pub queue: VecDeque<ContainerTask>,
    pub stressors: Vec<Stressor>,
    pub interval_seconds: f64,
}

impl Cluster {
    pub fn new(specs: Vec<HostSpec>, interval_seconds: f64) -> Self {
        Cluster { specs, tasks: Vec::new(), queue: VecDeque::new(), stressors: Vec::new(), interval_seconds }
    }

    pub fn hosts(&self) -> usize {
        self.specs.len()
    }

    /// Demand on every host for the coming interval.
    pub fn loads(&self) -> Vec<Demand> {
        let mut loads = vec![Demand::default(); self.hosts()];
        for t in &self.tasks {
            if let Some(h) = t.host {
                loads[h] += t.current();
            }
        }
        for s in &self.stressors {
            loads[s.host] += s.demand(&self.specs[s.host]);
        }
        loads
    }

    pub fn stressed(&self, host: usize, kind: StressorKind) -> bool {
        self.stressors.iter().any(|s| s.host == host && s.kind == kind)
    }

    /// Every live task is on exactly one valid host or in the queue, once.
    pub fn conserves_tasks(&self) -> bool {
        let mut ids: Vec<u64> = self.tasks.iter().map(|t| t.id).collect();
        ids.extend(self.queue.iter().map(|t| t.id));
        let n = ids.len();
        ids.sort_unstable();
        ids.dedup();
        ids.len() == n
            && self.tasks.iter().all(|t| t.host.is_some_and(|h| h < self.hosts()))
            && self.queue.iter().all(|t| t.host.is_none())
    }

    /// Runs one interval: measures features, advances tasks, retires
    /// finished ones and ages stressors.
    pub fn step(&mut self, t: u64) -> (Matrix, QosCounters) {
        let loads = self.loads();
        let m = self.hosts();
        let mut x = Matrix::zeros(m, FEATURES);
        let mut qos = QosCounters::default();
        let mut rates = vec![1.0; m];
        for (h, (load, spec)) in loads.iter().zip(&self.specs).enumerate() {
            let cpu = load.cpu / spec.cpu;
            let ram = load.ram / spec.ram;
            let row = x.row_mut(h);
            row[0] = cpu.min(1.0);
            row[1] = ram.min(1.0);
            row[2] = load.ram_read;
            row[3] = load.ram_write;
            row[4] = (load.disk / spec.disk).min(1.0);
            row[5] = load.disk_read;
            row[6] = load.disk_write;
            if cpu > 1.0 {
                rates[h] = 1.0 / cpu;
                qos.overloaded_hosts += 1;
            }
            qos.cpu_utilization += row[0] / m as f64;
            qos.ram_utilization += row[1] / m as f64;
            qos.energy += interval_energy(spec, row[0], self.interval_seconds);
        }
        let secs = self.interval_seconds;
        self.tasks.retain_mut(|task| {
            let h = task.host.expect("placed task has a host");
            task.progress += rates[h];
            if !task.finished() {
                return true;
            }
            let elapsed = t + 1 - task.arrival;
            qos.completed += 1;
            qos.response_time += elapsed as f64 * secs;
            if elapsed > task.deadline {
                qos.sla_violations += 1;
            }
            false
        });
        qos.queued = self.queue.len() as u64;
        qos.wait_time = self.queue.len() as f64 * secs;
        for s in &mut self.stressors {
            s.remaining -= 1;
        }
        self.stressors.retain(|s| s.remaining > 0);
        (x, qos)
    }
}
