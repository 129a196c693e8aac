use serde::{Deserialize, Serialize};

/// Gaussian predictive distribution at one test point. `latent_variance` is
/// the posterior variance of the function value; `outcome_variance` adds the
/// fitted observation noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictiveGaussian {
    pub mean: f64,
    pub latent_variance: f64,
    pub outcome_variance: f64,
}

impl PredictiveGaussian {
    pub fn new(mean: f64, latent_variance: f64, noise: f64) -> Self {
        let latent_variance = latent_variance.max(0.0);
        Self {
            mean,
            latent_variance,
            outcome_variance: latent_variance + noise,
        }
    }

    pub fn std(&self) -> f64 {
        self.outcome_variance.sqrt()
    }

    pub fn shifted(self, by: f64) -> Self {
        Self {
            mean: self.mean + by,
            ..self
        }
    }
}
