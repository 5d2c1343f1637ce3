//! Quantization-aware training with ADC transfer curves in the loop.
//!
//! The engine trains a small CNN whose activations are read out through a
//! converter model: an ideal ReLU, the ideal uniform quantizer, one sampled
//! transfer curve, or a Monte-Carlo pool of curves allocated per output
//! channel (variation-aware training). Weights are quantized from a shadow
//! copy on every forward pass and can be perturbed by multiplicative noise.

mod act;
mod checkpoint;
mod data;
mod network;
mod train;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use act::{
    act_full_scale, adc_backward, adc_code, adc_forward, current_fraction, ActMode,
    ReassignmentPolicy, VatPool,
};
pub use checkpoint::{Checkpoint, CHECKPOINT_FORMAT};
pub use data::{Dataset, IMAGE_SIDE, N_CLASSES};
pub use network::{infer_shapes, Architecture, LayerSpec, Network, Shape, INPUT_SHAPE};
pub use train::{
    evaluate, evaluate_curves, train, write_history, CurveSetEval, HistoryRow, LrSchedule,
    TrainConfig, TrainOutcome,
};

#[derive(Debug, Error)]
pub enum QatError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("dataset: {0}")]
    Data(String),
    #[error("training diverged (non-finite loss) at epoch {epoch}, batch {batch}")]
    Diverged {
        epoch: usize,
        batch: usize,
        /// Parameters after the last completed epoch.
        last_good: Box<Checkpoint>,
    },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Quant(#[from] crate::quant::QuantError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = QatError> = std::result::Result<T, E>;

/// Multiplicative Gaussian weight noise, redrawn on every forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseConfig {
    /// Relative std-dev of each effective weight.
    pub gamma: f64,
}

impl NoiseConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(QatError::Config(format!(
                "gamma {} must be >= 0",
                self.gamma
            )));
        }
        Ok(())
    }
}

/// `w' = w (1 + eps)`, `eps ~ N(0, gamma)`, one fresh draw per element.
pub fn inject_weight_noise<R: Rng>(w_q: &[f32], cfg: &NoiseConfig, rng: &mut R) -> Vec<f32> {
    let mut out = w_q.to_vec();
    perturb(&mut out, cfg.gamma, rng);
    out
}

pub(crate) fn perturb<R: Rng>(w: &mut [f32], gamma: f64, rng: &mut R) {
    if gamma == 0.0 {
        return;
    }
    for v in w.iter_mut() {
        let z: f64 = StandardNormal.sample(rng);
        *v = (*v as f64 * (1.0 + gamma * z)) as f32;
    }
}
