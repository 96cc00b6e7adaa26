use serde::{Deserialize, Serialize};

use crate::data::WindowSpec;
use crate::diffusion::VariantMode;
use crate::error::{Error, Result};
use crate::estimators::{EstimatorConfig, Target};
use crate::learner::{MlpSpec, OutputHead};
use crate::schedule::NoiseSchedule;

/// Everything that determines a training run; echoed into checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    /// Number of diffusion steps `T`.
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub variant: VariantMode,
    pub variance_window: usize,
    pub input_len: usize,
    pub horizon: usize,
    /// Ensemble size `S` at inference.
    pub samples: usize,
    pub estimator_hidden: usize,
    pub denoiser_hidden: usize,
    pub step_embedding: usize,
    /// Train the mean and variance estimators alongside the denoiser instead of pretraining them.
    pub end_to_end: bool,
    pub train_stride: usize,
    pub eval_stride: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 32,
            lr: 1e-3,
            seed: 1,
            steps: 20,
            beta_start: 1e-4,
            beta_end: 0.02,
            variant: VariantMode::FullNsdiff,
            variance_window: 96,
            input_len: 168,
            horizon: 192,
            samples: 100,
            estimator_hidden: 512,
            denoiser_hidden: 256,
            step_embedding: 64,
            end_to_end: false,
            train_stride: 1,
            eval_stride: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let sizes = [
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
            ("steps", self.steps),
            ("variance_window", self.variance_window),
            ("input_len", self.input_len),
            ("horizon", self.horizon),
            ("samples", self.samples),
            ("estimator_hidden", self.estimator_hidden),
            ("denoiser_hidden", self.denoiser_hidden),
            ("step_embedding", self.step_embedding),
            ("train_stride", self.train_stride),
            ("eval_stride", self.eval_stride),
        ];
        if let Some((name, _)) = sizes.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if self.variance_window < 2 || self.variance_window > self.input_len + self.horizon {
            return Err(Error::Config(format!(
                "variance_window must lie in 2..={} (input_len + horizon), got {}",
                self.input_len + self.horizon,
                self.variance_window
            )));
        }
        self.schedule().map(|_| ())
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::linear(self.steps, self.beta_start, self.beta_end)
    }

    pub fn window_spec(&self, stride: usize) -> WindowSpec {
        WindowSpec {
            input_len: self.input_len,
            horizon: self.horizon,
            variance_window: self.variance_window,
            stride,
        }
    }

    pub fn estimator_config(&self) -> EstimatorConfig {
        EstimatorConfig {
            epochs: self.epochs,
            lr: self.lr,
            batch_size: self.batch_size,
            hidden: self.estimator_hidden,
            seed: self.seed,
        }
    }

    pub fn estimator_spec(&self, target: Target) -> Result<MlpSpec> {
        MlpSpec::three_layer(self.input_len, self.estimator_hidden, self.horizon, target.head())
    }

    /// Input `[y_t, f, ln g, step embedding]`, output `eta` and, when learned, the variance logits.
    pub fn denoiser_spec(&self) -> Result<MlpSpec> {
        let out = if self.variant.learns_variance() { 2 * self.horizon } else { self.horizon };
        MlpSpec::three_layer(3 * self.horizon + self.step_embedding, self.denoiser_hidden, out, OutputHead::Identity)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| Error::Internal(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Format(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_protocol_and_round_trip() {
        let cfg = TrainConfig::default();
        cfg.validate().unwrap();
        assert_eq!((cfg.steps, cfg.epochs, cfg.batch_size, cfg.samples), (20, 10, 32, 100));
        assert_eq!(cfg.lr, 1e-3);
        assert_eq!(TrainConfig::from_json(&cfg.to_json().unwrap()).unwrap(), cfg);
    }

    #[test]
    fn invalid_values_are_rejected() {
        let cfg = TrainConfig { horizon: 0, ..TrainConfig::default() };
        assert!(cfg.validate().unwrap_err().to_string().contains("horizon"));
        let cfg = TrainConfig { variance_window: 1000, ..TrainConfig::default() };
        assert!(cfg.validate().is_err());
        assert!(TrainConfig::from_json("{\"bogus\": 1}").is_err());
    }
}
