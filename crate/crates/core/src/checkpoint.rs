//! Versioned JSON checkpoints.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::AdamW;
use crate::error::{Error, Result};
use crate::model::FtMoe;
use crate::train::Stage;

pub const CHECKPOINT_SCHEMA: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub schema_version: u32,
    pub seed: u64,
    pub stage: Stage,
    /// Completed training epochs.
    pub epoch: usize,
    pub model: FtMoe,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optimizer: Option<AdamW>,
}

#[derive(Deserialize)]
struct Version {
    schema_version: u32,
}

impl Checkpoint {
    pub fn new(model: FtMoe, seed: u64, stage: Stage, epoch: usize, optimizer: Option<AdamW>) -> Self {
        Checkpoint { schema_version: CHECKPOINT_SCHEMA, seed, stage, epoch, model, optimizer }
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        serde_json::to_writer_pretty(&mut w, self).map_err(|e| Error::Parse(format!("encoding checkpoint: {}", e)))?;
        w.write_all(b"\n").map_err(|e| Error::io("<checkpoint>", e))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(f);
        self.write_to(&mut w)?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let v: Version = serde_json::from_str(text)
            .map_err(|e| Error::Schema(format!("checkpoint has no readable schema_version: {}", e)))?;
        if v.schema_version != CHECKPOINT_SCHEMA {
            return Err(Error::Schema(format!(
                "checkpoint schema {} is not supported (expected {})",
                v.schema_version, CHECKPOINT_SCHEMA
            )));
        }
        let ck: Checkpoint =
            serde_json::from_str(text).map_err(|e| Error::Schema(format!("malformed checkpoint: {}", e)))?;
        ck.model.config.validate().map_err(|e| Error::Schema(e.to_string()))?;
        Ok(ck)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut text = String::new();
        BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?)
            .read_to_string(&mut text)
            .map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{AdamWConfig, Matrix};
    use crate::graph::SchedulingDecision;
    use crate::model::ModelConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small() -> FtMoe {
        let cfg = ModelConfig {
            features: 3,
            model: 8,
            hidden: 4,
            heads: 2,
            proto_dim: 4,
            experts: 3,
            max_active: 2,
            ..ModelConfig::default()
        };
        FtMoe::new(cfg, &mut ChaCha8Rng::seed_from_u64(9)).unwrap()
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let mut model = small();
        model.moe.remove_expert(1).unwrap();
        model.moe.add_expert(&[vec![0.1, 0.7, 0.2]], &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let ck = Checkpoint::new(model, 3, Stage::SteadyEnhancement, 7, Some(AdamW::new(AdamWConfig::default())));
        let mut buf = Vec::new();
        ck.write_to(&mut buf).unwrap();
        let back = Checkpoint::from_json(std::str::from_utf8(&buf).unwrap()).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.model.moe.expert_ids(), vec![0, 2, 3]);

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let x = Matrix::uniform(4, 3, 0.0, 1.0, &mut rng);
            let s = SchedulingDecision::new(vec![(0, 2), (3, 1)]);
            let a = ck.model.predict(&x, &s).unwrap();
            let b = back.model.predict(&x, &s).unwrap();
            assert_eq!(a.detect, b.detect);
            assert_eq!(a.classify, b.classify);
        }
    }

    #[test]
    fn wrong_schema_is_rejected() {
        let ck = Checkpoint::new(small(), 0, Stage::FastStarting, 0, None);
        let mut v = serde_json::to_value(&ck).unwrap();
        v["schema_version"] = 99.into();
        let err = Checkpoint::from_json(&v.to_string()).unwrap_err();
        assert!(matches!(err, Error::Schema(_)));
        assert_eq!(err.exit_code(), 3);
        assert!(matches!(Checkpoint::from_json("{\"x\": 1}"), Err(Error::Schema(_))));
    }
}
