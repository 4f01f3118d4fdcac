use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HostSpec {
    /// MIPS
    pub cpu: f64,
    /// MB
    pub ram: f64,
    /// MB
    pub disk: f64,
    /// W
    pub idle_power: f64,
    /// W
    pub max_power: f64,
}

impl HostSpec {
    pub fn validate(&self) -> Result<()> {
        let caps = [self.cpu, self.ram, self.disk];
        if caps.iter().any(|c| !c.is_finite() || *c <= 0.0) {
            return Err(Error::Config("host capacities must be positive".into()));
        }
        if !(self.idle_power >= 0.0 && self.max_power >= self.idle_power) {
            return Err(Error::Config("host power needs 0 <= idle_power <= max_power".into()));
        }
        Ok(())
    }
}

/// `count` identical hosts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HostGroup {
    pub count: usize,
    #[serde(flatten)]
    pub spec: HostSpec,
}

/// Inclusive uniform range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub min: f64,
    pub max: f64,
}

impl Range {
    pub const fn new(min: f64, max: f64) -> Self {
        Range { min, max }
    }

    fn check(&self, what: &str) -> Result<()> {
        if !(self.min.is_finite() && self.max.is_finite() && self.min <= self.max) {
            return Err(Error::Config(format!("{}: need finite min <= max", what)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorkloadConfig {
    pub arrival_mean: f64,
    pub arrival_std: f64,
    /// Task length in intervals.
    pub duration: Range,
    /// Deadline = ceil(duration * slack) intervals after arrival.
    pub deadline_slack: f64,
    /// MIPS
    pub cpu: Range,
    /// MB
    pub ram: Range,
    /// MB/s
    pub ram_throughput: Range,
    /// MB
    pub disk: Range,
    /// MB/s
    pub disk_throughput: Range,
    /// Log-scale noise on per-interval demand.
    pub noise: f64,
    /// Relative drift per interval, drawn per task from `[-trend, trend]`.
    pub trend: f64,
    /// Probability that a task spikes in a given interval.
    pub spike_rate: f64,
    pub spike_factor: Range,
    /// Correlation of read and write noise.
    pub ram_rw_correlation: f64,
    pub disk_rw_correlation: f64,
    /// Per-VM CSV traces to draw demand from instead of the synthetic model.
    pub trace_dir: Option<PathBuf>,
}

impl Default for WorkloadConfig {
    fn default() -> Self {
        WorkloadConfig {
            arrival_mean: 2.0,
            arrival_std: 1.0,
            duration: Range::new(5.0, 25.0),
            deadline_slack: 1.3,
            cpu: Range::new(500.0, 3000.0),
            ram: Range::new(256.0, 1024.0),
            ram_throughput: Range::new(10.0, 100.0),
            disk: Range::new(500.0, 4000.0),
            disk_throughput: Range::new(5.0, 50.0),
            noise: 0.4,
            trend: 0.01,
            spike_rate: 0.03,
            spike_factor: Range::new(1.5, 3.0),
            ram_rw_correlation: 0.6,
            disk_rw_correlation: 0.9,
            trace_dir: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StressorKind {
    Cpu,
    RamAlloc,
    RamThroughput,
    Disk,
}

/// Randomly timed surges: each host starts one with probability `rate` per
/// interval while none of the same kind is running there.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StressorSpec {
    pub kind: StressorKind,
    pub rate: f64,
    /// Intervals.
    pub duration: Range,
    /// Fraction of capacity for cpu, ram-alloc and disk; MB/s for
    /// ram-throughput.
    pub intensity: Range,
    /// Restrict to these hosts; all hosts when absent.
    #[serde(default)]
    pub hosts: Option<Vec<usize>>,
}

/// A surge at a fixed time and place.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StressorEvent {
    pub kind: StressorKind,
    pub host: usize,
    pub start: u64,
    pub duration: u64,
    pub intensity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StressorConfig {
    pub random: Vec<StressorSpec>,
    pub scheduled: Vec<StressorEvent>,
}

impl Default for StressorConfig {
    fn default() -> Self {
        StressorConfig {
            random: vec![
                StressorSpec {
                    kind: StressorKind::Cpu,
                    rate: 0.007,
                    duration: Range::new(2.0, 6.0),
                    intensity: Range::new(0.97, 1.2),
                    hosts: None,
                },
                StressorSpec {
                    kind: StressorKind::RamAlloc,
                    rate: 0.003,
                    duration: Range::new(2.0, 6.0),
                    intensity: Range::new(0.96, 1.1),
                    hosts: None,
                },
                StressorSpec {
                    kind: StressorKind::RamThroughput,
                    rate: 0.003,
                    duration: Range::new(1.0, 4.0),
                    intensity: Range::new(200.0, 600.0),
                    hosts: None,
                },
                StressorSpec {
                    kind: StressorKind::Disk,
                    rate: 0.002,
                    duration: Range::new(2.0, 6.0),
                    intensity: Range::new(0.96, 1.0),
                    hosts: None,
                },
            ],
            scheduled: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SchedulerConfig {
    pub migration_threshold: f64,
    /// Cap on migrations out of one host per interval.
    pub max_migrations_per_host: usize,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        SchedulerConfig { migration_threshold: 0.9, max_migrations_per_host: 2 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LabelerConfig {
    pub utilization_threshold: f64,
    pub percentile: f64,
    pub warmup: usize,
    /// Consecutive intervals a utilization must stay above the threshold.
    pub persistence: usize,
}

impl Default for LabelerConfig {
    fn default() -> Self {
        LabelerConfig { utilization_threshold: 0.95, percentile: 0.9, warmup: 100, persistence: 1 }
    }
}

impl LabelerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.percentile) || !(0.0..=1.0).contains(&self.utilization_threshold) {
            return Err(Error::Config("labeler thresholds must lie in [0, 1]".into()));
        }
        if self.persistence == 0 {
            return Err(Error::Config("labeler.persistence must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub seed: u64,
    pub intervals: usize,
    pub interval_seconds: f64,
    pub hosts: Vec<HostGroup>,
    pub workload: WorkloadConfig,
    pub scheduler: SchedulerConfig,
    pub stressors: StressorConfig,
    pub labeler: LabelerConfig,
}

const SMALL_HOST: HostSpec =
    HostSpec { cpu: 8000.0, ram: 4096.0, disk: 100_000.0, idle_power: 100.0, max_power: 200.0 };

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            seed: 0,
            intervals: 10_000,
            interval_seconds: 300.0,
            hosts: vec![
                HostGroup { count: 8, spec: SMALL_HOST },
                HostGroup { count: 8, spec: HostSpec { ram: 8192.0, ..SMALL_HOST } },
            ],
            workload: WorkloadConfig::default(),
            scheduler: SchedulerConfig::default(),
            stressors: StressorConfig::default(),
            labeler: LabelerConfig::default(),
        }
    }
}

impl SimConfig {
    pub fn host_specs(&self) -> Vec<HostSpec> {
        self.hosts.iter().flat_map(|g| std::iter::repeat_n(g.spec, g.count)).collect()
    }

    /// Rescales the host list to `n` hosts, keeping group proportions
    /// (first groups absorb the remainder).
    pub fn with_host_count(mut self, n: usize) -> Self {
        let total: usize = self.hosts.iter().map(|g| g.count).sum();
        if total == n || total == 0 {
            return self;
        }
        let mut left = n;
        let groups = self.hosts.len();
        for (i, g) in self.hosts.iter_mut().enumerate() {
            let share = if i + 1 == groups { left } else { (g.count * n).div_ceil(total).min(left) };
            g.count = share;
            left -= share;
        }
        self.hosts.retain(|g| g.count > 0);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let specs = self.host_specs();
        if specs.is_empty() {
            return Err(Error::Config("at least one host is required".into()));
        }
        for s in &specs {
            s.validate()?;
        }
        if !(self.interval_seconds > 0.0) {
            return Err(Error::Config("interval_seconds must be positive".into()));
        }
        let w = &self.workload;
        if !(w.arrival_mean >= 0.0 && w.arrival_std >= 0.0) {
            return Err(Error::Config("arrival mean and std must be non-negative".into()));
        }
        for (name, r) in [
            ("workload.duration", w.duration),
            ("workload.cpu", w.cpu),
            ("workload.ram", w.ram),
            ("workload.ram_throughput", w.ram_throughput),
            ("workload.disk", w.disk),
            ("workload.disk_throughput", w.disk_throughput),
            ("workload.spike_factor", w.spike_factor),
        ] {
            r.check(name)?;
            if r.min < 0.0 {
                return Err(Error::Config(format!("{} must be non-negative", name)));
            }
        }
        if w.duration.min < 1.0 {
            return Err(Error::Config("workload.duration.min must be at least 1".into()));
        }
        if !(w.deadline_slack >= 1.0) {
            return Err(Error::Config("workload.deadline_slack must be at least 1".into()));
        }
        for c in [w.ram_rw_correlation, w.disk_rw_correlation] {
            if !(-1.0..=1.0).contains(&c) {
                return Err(Error::Config("read/write correlations must lie in [-1, 1]".into()));
            }
        }
        if !(0.0..=1.0).contains(&w.spike_rate) || w.noise < 0.0 || w.trend < 0.0 {
            return Err(Error::Config("spike_rate in [0,1], noise and trend >= 0".into()));
        }
        for s in &self.stressors.random {
            if !(0.0..=1.0).contains(&s.rate) {
                return Err(Error::Config("stressor rate must lie in [0, 1]".into()));
            }
            s.duration.check("stressor duration")?;
            s.intensity.check("stressor intensity")?;
            if s.duration.min < 1.0 {
                return Err(Error::Config("stressor duration must be at least 1".into()));
            }
            if let Some(h) = s.hosts.as_ref().and_then(|hs| hs.iter().find(|&&h| h >= specs.len())) {
                return Err(Error::Config(format!("stressor targets host {} of {}", h, specs.len())));
            }
        }
        for e in &self.stressors.scheduled {
            if e.host >= specs.len() {
                return Err(Error::Config(format!("stressor event targets host {} of {}", e.host, specs.len())));
            }
        }
        if !(self.scheduler.migration_threshold > 0.0) {
            return Err(Error::Config("scheduler.migration_threshold must be positive".into()));
        }
        self.labeler.validate()
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: SimConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}
