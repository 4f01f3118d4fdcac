//! Fault labels from host feature histories.
//!
//! Feature columns: 0 cpu util, 1 ram util, 2 ram read, 3 ram write,
//! 4 disk util, 5 disk read, 6 disk write.

use super::config::LabelerConfig;
use crate::autodiff::Matrix;

pub const CPU_UTIL: usize = 0;
pub const RAM_UTIL: usize = 1;
pub const RAM_READ: usize = 2;
pub const RAM_WRITE: usize = 3;
pub const DISK_UTIL: usize = 4;
pub const DISK_READ: usize = 5;
pub const DISK_WRITE: usize = 6;
pub const FEATURES: usize = 7;

pub const NO_FAULT: u8 = 0;
pub const CPU_FAULT: u8 = 1;
pub const RAM_FAULT: u8 = 2;
pub const DISK_FAULT: u8 = 3;

const THROUGHPUT: [usize; 4] = [RAM_READ, RAM_WRITE, DISK_READ, DISK_WRITE];

/// Linearly interpolated percentile of an ascending slice.
pub fn percentile(sorted: &[f64], p: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let rank = p * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    Some(sorted[lo] + (rank - lo as f64) * (sorted[hi] - sorted[lo]))
}

/// Which rules fired for one host; `class` applies the precedence
/// CPU > RAM > Disk.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Rules {
    pub cpuo: bool,
    pub ama: bool,
    pub mel: bool,
    pub adu: bool,
}

impl Rules {
    pub fn class(&self) -> u8 {
        if self.cpuo {
            CPU_FAULT
        } else if self.ama || self.mel {
            RAM_FAULT
        } else if self.adu {
            DISK_FAULT
        } else {
            NO_FAULT
        }
    }
}

#[derive(Debug, Clone, Default)]
struct HostHistory {
    sorted: [Vec<f64>; 4],
    runs: [usize; 3],
}

/// Streaming labeler; feed intervals in order.
#[derive(Debug, Clone)]
pub struct Labeler {
    cfg: LabelerConfig,
    hosts: Vec<HostHistory>,
    seen: usize,
}

impl Labeler {
    pub fn new(cfg: LabelerConfig, hosts: usize) -> Self {
        Labeler { cfg, hosts: vec![HostHistory::default(); hosts], seen: 0 }
    }

    /// Labels the next interval, then adds it to the history.
    pub fn push(&mut self, x: &Matrix) -> Vec<u8> {
        let t = self.seen;
        let cfg = self.cfg;
        let labels = self
            .hosts
            .iter_mut()
            .enumerate()
            .map(|(m, h)| {
                let row = x.row(m);
                for (run, col) in h.runs.iter_mut().zip([CPU_UTIL, RAM_UTIL, DISK_UTIL]) {
                    *run = if row[col] > cfg.utilization_threshold { *run + 1 } else { 0 };
                }
                let above = |k: usize| percentile(&h.sorted[k], cfg.percentile).is_some_and(|p| row[THROUGHPUT[k]] > p);
                let rules = Rules {
                    cpuo: h.runs[0] >= cfg.persistence,
                    ama: h.runs[1] >= cfg.persistence,
                    mel: above(0) || above(1),
                    adu: h.runs[2] >= cfg.persistence || above(2) || above(3),
                };
                for (k, col) in THROUGHPUT.iter().enumerate() {
                    let v = row[*col];
                    let at = h.sorted[k].partition_point(|&s| s < v);
                    h.sorted[k].insert(at, v);
                }
                if t < cfg.warmup {
                    NO_FAULT
                } else {
                    rules.class()
                }
            })
            .collect();
        self.seen += 1;
        labels
    }
}

/// Rules for every host at interval `t`, recomputed from scratch.
pub fn rules_at(history: &[Matrix], t: usize, cfg: &LabelerConfig) -> Vec<Rules> {
    let x = &history[t];
    (0..x.rows())
        .map(|m| {
            let stays_above = |col: usize| {
                t + 1 >= cfg.persistence
                    && (t + 1 - cfg.persistence..=t).all(|s| history[s].get(m, col) > cfg.utilization_threshold)
            };
            let above_pct = |col: usize| {
                let mut prior: Vec<f64> = history[..t].iter().map(|h| h.get(m, col)).collect();
                prior.sort_by(f64::total_cmp);
                percentile(&prior, cfg.percentile).is_some_and(|p| x.get(m, col) > p)
            };
            Rules {
                cpuo: stays_above(CPU_UTIL),
                ama: stays_above(RAM_UTIL),
                mel: above_pct(RAM_READ) || above_pct(RAM_WRITE),
                adu: stays_above(DISK_UTIL) || above_pct(DISK_READ) || above_pct(DISK_WRITE),
            }
        })
        .collect()
}

/// Per-host classes at interval `t` given the full history up to `t`.
pub fn label(history: &[Matrix], t: usize, cfg: &LabelerConfig) -> Vec<u8> {
    if t < cfg.warmup {
        return vec![NO_FAULT; history[t].rows()];
    }
    rules_at(history, t, cfg).iter().map(Rules::class).collect()
}

/// Labels a whole run with the streaming labeler.
pub fn relabel(history: &[Matrix], cfg: &LabelerConfig) -> Vec<Vec<u8>> {
    let Some(first) = history.first() else {
        return Vec::new();
    };
    let mut l = Labeler::new(*cfg, first.rows());
    history.iter().map(|x| l.push(x)).collect()
}
