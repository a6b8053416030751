use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Metric {
    MeanSquares,
    NormalizedCrossCorrelation,
}

/// Registration configuration. Sigmas and the diffeomorphic step are in
/// voxels of the current pyramid level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegistrationParams {
    pub metric: Metric,
    /// Downsampling factor per level, coarse to fine.
    pub levels: Vec<usize>,
    /// Iteration cap per level.
    pub iterations: Vec<usize>,
    pub update_sigma: f64,
    pub total_sigma: f64,
    /// Demons step scale in (0, 1].
    pub step_length: f64,
    /// Initial affine optimiser step in mm, multiplied by the level factor.
    pub affine_step_mm: f64,
    /// Relative metric improvement below which a level stops.
    pub tolerance: f64,
    /// Accepted iterations the tolerance is measured over.
    pub convergence_window: usize,
    /// Consecutive rejected iterations that end a level.
    pub divergence_patience: usize,
    /// Metric sample cap for the affine engine.
    pub max_samples: usize,
}

impl Default for RegistrationParams {
    fn default() -> Self {
        RegistrationParams {
            metric: Metric::NormalizedCrossCorrelation,
            levels: vec![4, 2, 1],
            iterations: vec![100, 60, 30],
            update_sigma: 1.5,
            total_sigma: 1.0,
            step_length: 1.0,
            affine_step_mm: 2.0,
            tolerance: 1e-5,
            convergence_window: 5,
            divergence_patience: 5,
            max_samples: 60_000,
        }
    }
}

impl RegistrationParams {
    pub fn mean_squares() -> Self {
        RegistrationParams {
            metric: Metric::MeanSquares,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels.is_empty() || self.levels.contains(&0) {
            return Err(Error::Config("registration needs at least one level with factor >= 1".into()));
        }
        if self.iterations.len() != self.levels.len() || self.iterations.contains(&0) {
            return Err(Error::Config("one positive iteration count per level is required".into()));
        }
        if !(self.update_sigma >= 0.0 && self.total_sigma >= 0.0) {
            return Err(Error::Config("smoothing sigmas must be non-negative".into()));
        }
        if !(self.step_length > 0.0 && self.affine_step_mm > 0.0) {
            return Err(Error::Config("step length must be positive".into()));
        }
        if self.convergence_window == 0 || self.divergence_patience == 0 {
            return Err(Error::Config("convergence window and patience must be positive".into()));
        }
        Ok(())
    }
}

/// Metric trace of one registration run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RegistrationReport {
    /// Accepted metric values per level (lower is better; NCC is negated).
    pub level_metrics: Vec<Vec<f64>>,
    pub iterations_run: Vec<usize>,
    pub final_metric: f64,
}
