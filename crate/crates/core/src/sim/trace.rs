//! Per-VM CSV trace ingestion.
//!
//! Expected columns: timestamp, cpu (MIPS), ram (MB), ram read, ram write,
//! disk read, disk write (KB/s). Semicolon or comma delimited; a header row
//! is optional.

use std::fs;
use std::path::Path;

use rand::Rng;

use super::config::WorkloadConfig;
use super::workload::Demand;
use crate::error::{Error, Result};

/// VM kept only if its cpu demand at this row lies within [`CPU_FILTER`].
pub const FILTER_ROW: usize = 9;
pub const CPU_FILTER: (f64, f64) = (500.0, 3000.0);

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TracePool {
    pub traces: Vec<Vec<Demand>>,
}

pub fn detect_delimiter(text: &str) -> u8 {
    let first = text.lines().find(|l| !l.trim().is_empty()).unwrap_or("");
    if first.matches(';').count() > first.matches(',').count() {
        b';'
    } else {
        b','
    }
}

pub fn parse_trace(text: &str) -> Result<Vec<Demand>> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(detect_delimiter(text))
        .has_headers(false)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::Parse(format!("trace row {}: {}", i + 1, e)))?;
        if rec.iter().all(str::is_empty) {
            continue;
        }
        let nums: std::result::Result<Vec<f64>, _> = rec.iter().take(7).map(str::parse::<f64>).collect();
        let nums = match nums {
            Ok(n) => n,
            Err(_) if i == 0 => continue,
            Err(e) => return Err(Error::Parse(format!("trace row {}: {}", i + 1, e))),
        };
        if nums.len() < 7 {
            return Err(Error::Parse(format!("trace row {}: expected 7 columns, got {}", i + 1, nums.len())));
        }
        let kb = 1.0 / 1024.0;
        rows.push(Demand {
            cpu: nums[1].max(0.0),
            ram: nums[2].max(0.0),
            ram_read: nums[3].max(0.0) * kb,
            ram_write: nums[4].max(0.0) * kb,
            disk: 0.0,
            disk_read: nums[5].max(0.0) * kb,
            disk_write: nums[6].max(0.0) * kb,
        });
    }
    Ok(rows)
}

pub fn passes_filter(trace: &[Demand]) -> bool {
    trace.get(FILTER_ROW).is_some_and(|d| d.cpu >= CPU_FILTER.0 && d.cpu <= CPU_FILTER.1)
}

impl TracePool {
    /// Loads every `*.csv` in `dir` (sorted by name) that passes the cpu
    /// filter.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let mut paths: Vec<_> = fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("csv")))
            .collect();
        paths.sort();
        let mut traces = Vec::new();
        for p in paths {
            let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
            let t = parse_trace(&text)?;
            if passes_filter(&t) {
                traces.push(t);
            }
        }
        Ok(TracePool { traces })
    }

    pub fn len(&self) -> usize {
        self.traces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.traces.is_empty()
    }

    /// A window of a random trace, cycling if the trace is short. Disk
    /// occupancy is not in the trace format and is drawn from the config.
    pub fn draw<R: Rng + ?Sized>(&self, cfg: &WorkloadConfig, rng: &mut R) -> Vec<Demand> {
        let trace = &self.traces[rng.random_range(0..self.traces.len())];
        let len = if cfg.duration.max > cfg.duration.min {
            rng.random_range(cfg.duration.min..=cfg.duration.max)
        } else {
            cfg.duration.min
        }
        .round()
        .max(1.0) as usize;
        let start = rng.random_range(0..trace.len());
        let disk =
            if cfg.disk.max > cfg.disk.min { rng.random_range(cfg.disk.min..=cfg.disk.max) } else { cfg.disk.min };
        (0..len).map(|k| Demand { disk, ..trace[(start + k) % trace.len()] }).collect()
    }
}
