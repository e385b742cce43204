//! JSON checkpoint envelope shared by the network model and the FPCA
//! baseline.
//!
//! A checkpoint is a single JSON document carrying a format version, a
//! kind tag, the model weights as named row-major arrays, the grid the
//! model was trained on and the standardization constants. serde_json
//! writes floats in shortest round-trip form, so save/load/save is
//! byte-identical.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::ChannelStats;
use crate::error::{Error, Result};
use crate::fpca::FpcaModel;
use crate::model::FunnolParams;

pub const FORMAT_VERSION: u32 = 1;

/// Network checkpoint payload.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FunnolCheckpoint {
    pub params: FunnolParams,
    /// Grid the model was trained on; fixes the decoder unroll length.
    pub grid: Vec<f64>,
    pub standardization: ChannelStats,
    pub num_classes: usize,
}

/// FPCA checkpoint payload.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FpcaCheckpoint {
    pub model: FpcaModel,
    pub standardization: ChannelStats,
    pub num_classes: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
#[allow(clippy::large_enum_variant)]
pub enum CheckpointKind {
    Funnol(FunnolCheckpoint),
    Fpca(FpcaCheckpoint),
}

/// The envelope written to disk.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    #[serde(flatten)]
    pub payload: CheckpointKind,
}

impl Checkpoint {
    pub fn funnol(inner: FunnolCheckpoint) -> Self {
        Checkpoint {
            format_version: FORMAT_VERSION,
            payload: CheckpointKind::Funnol(inner),
        }
    }

    pub fn fpca(inner: FpcaCheckpoint) -> Self {
        Checkpoint {
            format_version: FORMAT_VERSION,
            payload: CheckpointKind::Fpca(inner),
        }
    }

    pub fn kind_tag(&self) -> &'static str {
        match self.payload {
            CheckpointKind::Funnol(_) => "funnol",
            CheckpointKind::Fpca(_) => "fpca",
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cp: Checkpoint = serde_json::from_str(text)?;
        if cp.format_version != FORMAT_VERSION {
            return Err(Error::InvalidConfig(format!(
                "unsupported checkpoint format_version {}",
                cp.format_version
            )));
        }
        Ok(cp)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path.as_ref(), self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path.as_ref())?)
    }

    /// The network payload, or a kind error for commands that need one.
    pub fn expect_funnol(&self) -> Result<&FunnolCheckpoint> {
        match &self.payload {
            CheckpointKind::Funnol(inner) => Ok(inner),
            CheckpointKind::Fpca(_) => Err(Error::CheckpointKind {
                expected: "funnol".into(),
                found: "fpca".into(),
            }),
        }
    }

    pub fn expect_fpca(&self) -> Result<&FpcaCheckpoint> {
        match &self.payload {
            CheckpointKind::Fpca(inner) => Ok(inner),
            CheckpointKind::Funnol(_) => Err(Error::CheckpointKind {
                expected: "fpca".into(),
                found: "funnol".into(),
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::ChannelStats;
    use crate::model::{ActivationSet, CellKind, Dims, FunnolParams};

    fn sample_checkpoint(seed: u64) -> Checkpoint {
        let dims = Dims {
            channels: 2,
            latent: 3,
            classes: 2,
        };
        let params = FunnolParams::init(CellKind::Lstm, dims, ActivationSet::default(), seed);
        Checkpoint::funnol(FunnolCheckpoint {
            params,
            grid: vec![0.0, 0.5, 1.0],
            standardization: ChannelStats {
                means: vec![0.1, -0.2],
                sds: vec![1.5, 1.0 / 3.0],
            },
            num_classes: 2,
        })
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let cp = sample_checkpoint(5);
        let json = cp.to_json().unwrap();
        let back = Checkpoint::from_json(&json).unwrap();
        assert_eq!(cp, back);
        // Serializing again yields identical bytes.
        assert_eq!(json, back.to_json().unwrap());
    }

    #[test]
    fn kind_mismatch_is_error() {
        let cp = sample_checkpoint(6);
        assert!(cp.expect_funnol().is_ok());
        assert!(matches!(
            cp.expect_fpca(),
            Err(Error::CheckpointKind { .. })
        ));
    }

    #[test]
    fn unsupported_version_rejected() {
        let cp = sample_checkpoint(7);
        let json = cp
            .to_json()
            .unwrap()
            .replace("\"format_version\": 1", "\"format_version\": 99");
        assert!(Checkpoint::from_json(&json).is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        let cp = sample_checkpoint(8);
        cp.save(&path).unwrap();
        let loaded = Checkpoint::load(&path).unwrap();
        assert_eq!(cp, loaded);
        assert_eq!(loaded.kind_tag(), "funnol");
    }
}
