//! Portable JSON checkpoint: topology, shadow weights, formats and history.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::network::{LayerSpec, Network};
use super::train::HistoryRow;
use super::{QatError, Result};
use crate::quant::QuantConfig;

pub const CHECKPOINT_FORMAT: &str = "imc-qat-checkpoint/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub layers: Vec<LayerSpec>,
    /// Shadow weights of each weighted layer (conv: `[out][in][3][3]`,
    /// dense: `[out][in]`), 32-bit floats.
    pub weights: Vec<Vec<f32>>,
    pub biases: Vec<Vec<f32>>,
    pub quant: QuantConfig,
    pub seed: u64,
    pub mode: String,
    pub history: Vec<HistoryRow>,
}

impl Checkpoint {
    pub fn new(
        net: &Network,
        quant: QuantConfig,
        seed: u64,
        mode: &str,
        history: Vec<HistoryRow>,
    ) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            layers: net.layers().to_vec(),
            weights: net.weights.clone(),
            biases: net.biases.clone(),
            quant,
            seed,
            mode: mode.to_string(),
            history,
        }
    }

    pub fn network(&self) -> Result<Network> {
        Network::from_parts(
            self.layers.clone(),
            self.weights.clone(),
            self.biases.clone(),
        )
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self).map_err(|e| QatError::Checkpoint(e.to_string()))?;
        fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let ck: Self =
            serde_json::from_str(&text).map_err(|e| QatError::Checkpoint(e.to_string()))?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(QatError::Checkpoint(format!(
                "unsupported format {:?}, expected {CHECKPOINT_FORMAT:?}",
                ck.format
            )));
        }
        Ok(ck)
    }
}
