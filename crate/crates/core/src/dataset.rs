//! Labeled interval records and their line-delimited JSON file format.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Matrix;
use crate::error::{Error, Result};
use crate::graph::SchedulingDecision;

pub const DATASET_SCHEMA: u32 = 1;
pub const FAULT_CLASSES: usize = 4;

/// One interval: host features, the scheduler's migrations and per-host
/// fault classes.
#[derive(Debug, Clone, PartialEq)]
pub struct Interval {
    pub t: u64,
    /// `M x N`
    pub features: Matrix,
    pub decision: SchedulingDecision,
    pub labels: Vec<u8>,
}

impl Interval {
    pub fn hosts(&self) -> usize {
        self.features.rows()
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.features.rows();
        if self.labels.len() != m {
            return Err(Error::Validation(format!(
                "interval {}: {} labels for {} hosts",
                self.t,
                self.labels.len(),
                m
            )));
        }
        if let Some(y) = self.labels.iter().find(|&&y| y as usize >= FAULT_CLASSES) {
            return Err(Error::Validation(format!("interval {}: label {} out of range", self.t, y)));
        }
        if let Some(&(a, b)) = self.decision.migrations.iter().find(|&&(a, b)| a >= m || b >= m) {
            return Err(Error::Validation(format!(
                "interval {}: migration ({}, {}) outside {} hosts",
                self.t, a, b, m
            )));
        }
        if !self.features.is_finite() {
            return Err(Error::Validation(format!("interval {}: non-finite features", self.t)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Header {
    pub schema_version: u32,
    #[serde(rename = "M")]
    pub hosts: usize,
    #[serde(rename = "N")]
    pub features: usize,
    pub seed: u64,
}

#[derive(Serialize, Deserialize)]
struct Line {
    t: u64,
    #[serde(rename = "X")]
    x: Vec<Vec<f64>>,
    #[serde(rename = "S")]
    s: Vec<(usize, usize)>,
    y: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub header: Header,
    pub intervals: Vec<Interval>,
}

/// Contiguous train/validation/test blocks, 70/15/15 by interval.
pub struct Splits<'a> {
    pub train: &'a [Interval],
    pub val: &'a [Interval],
    pub test: &'a [Interval],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    All,
    Train,
    Val,
    Test,
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(Split::All),
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Usage(format!("unknown split '{}'", other))),
        }
    }
}

impl Dataset {
    pub fn new(hosts: usize, features: usize, seed: u64) -> Self {
        Dataset { header: Header { schema_version: DATASET_SCHEMA, hosts, features, seed }, intervals: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.intervals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.intervals.is_empty()
    }

    pub fn host_rows(&self) -> usize {
        self.intervals.iter().map(Interval::hosts).sum()
    }

    /// Class counts over every host row.
    pub fn class_counts(&self) -> [u64; FAULT_CLASSES] {
        let mut counts = [0; FAULT_CLASSES];
        for iv in &self.intervals {
            for &y in &iv.labels {
                counts[y as usize] += 1;
            }
        }
        counts
    }

    pub fn splits(&self) -> Splits<'_> {
        let n = self.intervals.len();
        let train = n * 70 / 100;
        let val = n * 15 / 100;
        Splits {
            train: &self.intervals[..train],
            val: &self.intervals[train..train + val],
            test: &self.intervals[train + val..],
        }
    }

    pub fn split(&self, which: Split) -> &[Interval] {
        let s = self.splits();
        match which {
            Split::All => &self.intervals,
            Split::Train => s.train,
            Split::Val => s.val,
            Split::Test => s.test,
        }
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let ser = |e: serde_json::Error| Error::Parse(e.to_string());
        let io = |e: std::io::Error| Error::io("<dataset>", e);
        serde_json::to_writer(&mut w, &self.header).map_err(ser)?;
        w.write_all(b"\n").map_err(io)?;
        for iv in &self.intervals {
            let line =
                Line { t: iv.t, x: iv.features.to_rows(), s: iv.decision.migrations.clone(), y: iv.labels.clone() };
            serde_json::to_writer(&mut w, &line).map_err(ser)?;
            w.write_all(b"\n").map_err(io)?;
        }
        w.flush().map_err(io)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_to(BufWriter::new(f)).map_err(|e| match e {
            Error::Io { source, .. } => Error::io(path, source),
            other => other,
        })
    }

    pub fn read_from<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let first = lines
            .next()
            .ok_or_else(|| Error::Schema("dataset file is empty".into()))?
            .map_err(|e| Error::io("<dataset>", e))?;
        let header: Header =
            serde_json::from_str(&first).map_err(|e| Error::Schema(format!("bad dataset header: {}", e)))?;
        if header.schema_version != DATASET_SCHEMA {
            return Err(Error::Schema(format!(
                "dataset schema {} is not supported (expected {})",
                header.schema_version, DATASET_SCHEMA
            )));
        }
        let mut intervals = Vec::new();
        for (no, line) in lines.enumerate() {
            let line = line.map_err(|e| Error::io("<dataset>", e))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: Line =
                serde_json::from_str(&line).map_err(|e| Error::Parse(format!("dataset line {}: {}", no + 2, e)))?;
            let features = Matrix::from_rows(&rec.x)?;
            if features.rows() != header.hosts || features.cols() != header.features {
                return Err(Error::Validation(format!(
                    "interval {}: features are {}x{}, header says {}x{}",
                    rec.t,
                    features.rows(),
                    features.cols(),
                    header.hosts,
                    header.features
                )));
            }
            let iv = Interval { t: rec.t, features, decision: SchedulingDecision::new(rec.s), labels: rec.y };
            iv.validate()?;
            intervals.push(iv);
        }
        Ok(Dataset { header, intervals })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(BufReader::new(f))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Dataset {
        let mut d = Dataset::new(2, 3, 9);
        for t in 0..20 {
            d.intervals.push(Interval {
                t,
                features: Matrix::from_rows(&[vec![0.1 * t as f64, 0.5, 1e-7], vec![0.3, 1.0 / 3.0, 2.5e6]]).unwrap(),
                decision: SchedulingDecision::new(if t % 3 == 0 { vec![(0, 1)] } else { vec![] }),
                labels: vec![(t % 4) as u8, 0],
            });
        }
        d
    }

    #[test]
    fn round_trip_is_exact() {
        let d = sample();
        let mut buf = Vec::new();
        d.write_to(&mut buf).unwrap();
        let back = Dataset::read_from(&buf[..]).unwrap();
        assert_eq!(back, d);
    }

    #[test]
    fn splits_are_contiguous_and_cover() {
        let d = sample();
        let s = d.splits();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (14, 3, 3));
        assert_eq!(s.val[0].t, 14);
        assert_eq!(s.test[0].t, 17);
    }

    #[test]
    fn rejects_wrong_schema_and_bad_rows() {
        let bad = b"{\"schema_version\":7,\"M\":1,\"N\":1,\"seed\":0}\n";
        assert!(matches!(Dataset::read_from(&bad[..]), Err(Error::Schema(_))));
        let rows =
            b"{\"schema_version\":1,\"M\":1,\"N\":1,\"seed\":0}\n{\"t\":0,\"X\":[[0.5]],\"S\":[[0,3]],\"y\":[0]}\n";
        assert!(matches!(Dataset::read_from(&rows[..]), Err(Error::Validation(_))));
    }
}
