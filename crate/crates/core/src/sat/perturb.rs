use serde::{Deserialize, Serialize};

use super::loss::LossWeights;
use super::net::ToyDetector;
use super::SatError;
use crate::dataset::Annotation;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SatMode {
    /// Ascend the full training loss.
    #[default]
    SignAscent,
    /// Ascend only the objectness loss of cells that hold an object.
    ObjectnessHide,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SatConfig {
    /// Per-pixel bound, in units of the `[0, 1]` pixel range.
    pub epsilon: f64,
    /// Probability that a batch is perturbed.
    pub apply_prob: f64,
    pub mode: SatMode,
}

impl Default for SatConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.03,
            apply_prob: 0.5,
            mode: SatMode::SignAscent,
        }
    }
}

impl SatConfig {
    pub fn validate(&self) -> Result<(), SatError> {
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(SatError::InvalidConfig(format!("SAT epsilon {} must be ≥ 0", self.epsilon)));
        }
        if !(0.0..=1.0).contains(&self.apply_prob) {
            return Err(SatError::InvalidConfig(format!(
                "SAT apply probability {} outside [0, 1]",
                self.apply_prob
            )));
        }
        Ok(())
    }

    /// Loss whose input gradient drives the perturbation.
    pub fn ascent_weights(&self, training: &LossWeights) -> LossWeights {
        match self.mode {
            SatMode::SignAscent => *training,
            SatMode::ObjectnessHide => LossWeights::POSITIVE_OBJECTNESS,
        }
    }
}

/// One signed gradient step: `clamp(img + ε · sign(∇_img L), 0, 1)`.
/// Labels are left untouched; pixels with a zero gradient do not move.
pub fn sat_perturb(
    det: &ToyDetector,
    img: &[f64],
    gt: &[Annotation],
    cfg: &SatConfig,
    weights: &LossWeights,
) -> Result<Vec<f64>, SatError> {
    cfg.validate()?;
    if cfg.epsilon == 0.0 {
        return Ok(img.to_vec());
    }
    let grad = det
        .loss_and_grad(img, gt, &cfg.ascent_weights(weights), true)?
        .input
        .expect("input gradient requested");
    Ok(signed_step(img, &grad, cfg.epsilon))
}

pub(crate) fn signed_step(img: &[f64], grad: &[f64], eps: f64) -> Vec<f64> {
    img.iter()
        .zip(grad)
        .map(|(&x, &g)| {
            let s = if g > 0.0 {
                1.0
            } else if g < 0.0 {
                -1.0
            } else {
                0.0
            };
            (x + eps * s).clamp(0.0, 1.0)
        })
        .collect()
}
