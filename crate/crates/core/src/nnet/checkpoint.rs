//! Network checkpoint container.
//!
//! A checkpoint is a UTF-8 JSON object:
//!
//! ```json
//! {
//!   "format": "metaadapt-checkpoint",
//!   "version": 1,
//!   "layer_sizes": [9, 50, 50, 50, 3],
//!   "params": [ ... p numbers ... ],
//!   "nu": 2.0,
//!   "seed": 7,
//!   "features": ["velocity", "tracking_error", "prev_control"]
//! }
//! ```
//!
//! `params` uses the flattened order of [`Mlp::flatten`]. Numbers are written
//! with shortest round-trip formatting, so a load reproduces every 64-bit
//! float bit-for-bit. `features` is optional and names the input feature map
//! the network was trained against.

use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::Mlp;
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "metaadapt-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub layer_sizes: Vec<usize>,
    pub params: Vec<f64>,
    pub nu: f64,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<Vec<String>>,
}

impl Checkpoint {
    pub fn from_net(net: &Mlp, nu: f64, seed: u64) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            layer_sizes: net.layer_sizes().to_vec(),
            params: net.flatten().iter().copied().collect(),
            nu,
            seed,
            features: None,
        }
    }

    pub fn with_features(mut self, features: Vec<String>) -> Self {
        self.features = Some(features);
        self
    }

    pub fn to_net(&self) -> Result<Mlp> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(Error::Incompatible(format!("unknown format tag {:?}", self.format)));
        }
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::Incompatible(format!("unsupported version {}", self.version)));
        }
        let mut net = Mlp::zeros(&self.layer_sizes)?;
        net.set_params(&DVector::from_vec(self.params.clone()))?;
        Ok(net)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn file_round_trip_is_bit_exact(seed in any::<u64>(), nu in 0.1f64..10.0) {
            let net = Mlp::he_uniform(&[3, 5, 2], seed).unwrap();
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("net.json");
            Checkpoint::from_net(&net, nu, seed).save(&path).unwrap();
            let loaded = Checkpoint::load(&path).unwrap();
            prop_assert_eq!(loaded.nu.to_bits(), nu.to_bits());
            let back = loaded.to_net().unwrap();
            let a = net.flatten();
            let b = back.flatten();
            prop_assert!(a.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn rejects_wrong_format() {
        let mut ck = Checkpoint::from_net(&Mlp::zeros(&[1, 1]).unwrap(), 1.0, 0);
        ck.format = "other".into();
        assert!(matches!(ck.to_net(), Err(Error::Incompatible(_))));
    }

    #[test]
    fn rejects_wrong_length() {
        let mut ck = Checkpoint::from_net(&Mlp::zeros(&[2, 2]).unwrap(), 1.0, 0);
        ck.params.pop();
        assert!(ck.to_net().is_err());
    }
}
