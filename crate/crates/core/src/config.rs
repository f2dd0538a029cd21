//! Architecture, training, and sampling configuration.

use serde::{Deserialize, Serialize};

use crate::error::{DvtError, Result};

/// Architecture hyperparameters shared by the stage-1 model and the prior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Text vocabulary size (set from the vocab file when loading data).
    pub vocab_size: usize,
    /// Model width; code embeddings use the same width.
    pub d_model: usize,
    pub enc_layers: usize,
    pub dec_layers: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub dropout: f64,
    /// Learned absolute positions; inputs longer than this are rejected.
    pub max_positions: usize,
    /// Number of halving CNN layers `c`; the downsampling factor is `2^c`.
    pub cnn_layers: usize,
    /// Latent vocabulary size `K`.
    pub codebook_size: usize,
    /// Discourse label count: 10 markers x 2 argument orders + unknown.
    pub num_relations: usize,
    pub max_src_len: usize,
    pub max_tgt_len: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            vocab_size: 300,
            d_model: 128,
            enc_layers: 4,
            dec_layers: 4,
            heads: 4,
            ffn_dim: 512,
            dropout: 0.1,
            max_positions: 512,
            cnn_layers: 3,
            codebook_size: 256,
            num_relations: 21,
            max_src_len: 16,
            max_tgt_len: 512,
        }
    }
}

impl ModelConfig {
    /// A deliberately tiny configuration used by the numerical test suites.
    pub fn tiny() -> Self {
        ModelConfig {
            vocab_size: 16,
            d_model: 8,
            enc_layers: 1,
            dec_layers: 1,
            heads: 2,
            ffn_dim: 16,
            dropout: 0.0,
            max_positions: 32,
            cnn_layers: 3,
            codebook_size: 7,
            num_relations: 21,
            max_src_len: 8,
            max_tgt_len: 16,
        }
    }

    /// Downsampling factor `2^c` of the CNN stack.
    pub fn block(&self) -> usize {
        1 << self.cnn_layers
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.heads == 0 || self.d_model % self.heads != 0 {
            return Err(DvtError::Config(format!(
                "d_model {} must be a positive multiple of heads {}",
                self.d_model, self.heads
            )));
        }
        if self.max_positions > 512 {
            return Err(DvtError::Config(format!(
                "max_positions {} exceeds the 512 cap",
                self.max_positions
            )));
        }
        if self.codebook_size == 0 {
            return Err(DvtError::Config("codebook_size must be positive".into()));
        }
        if self.max_tgt_len % self.block() != 0 {
            return Err(DvtError::Config(format!(
                "max_tgt_len {} must be divisible by the CNN block 2^{}",
                self.max_tgt_len, self.cnn_layers
            )));
        }
        Ok(())
    }
}

/// Gumbel temperature schedule: `tau(T) = max(tau_min, tau_max * exp(-rate * T))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TauSchedule {
    pub tau_max: f64,
    pub tau_min: f64,
    pub decay_rate: f64,
}

impl Default for TauSchedule {
    fn default() -> Self {
        TauSchedule { tau_max: 0.9, tau_min: 0.1, decay_rate: 1e-4 }
    }
}

impl TauSchedule {
    pub fn at(&self, step: usize) -> f64 {
        let t = self.tau_max * (-self.decay_rate * step as f64).exp();
        t.max(self.tau_min)
    }
}

/// Training stage selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Warmstart,
    Finetune,
    Prior,
}

/// Optimization settings for one training stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub stage: Stage,
    pub lambda1: f64,
    pub lambda2: f64,
    /// Initial learning rate; decays linearly to 0 over `lr_total_steps`.
    pub lr0: f64,
    /// Number of optimizer steps to run.
    pub total_steps: usize,
    /// Horizon of the linear learning-rate decay. Defaults to `total_steps`
    /// when 0; setting it larger keeps the rate nearly constant.
    pub lr_total_steps: usize,
    pub batch_size: usize,
    pub grad_accum: usize,
    pub max_grad_norm: f64,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub tau: TauSchedule,
    /// Emit a CSV log row every this many steps (1 = every step).
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            stage: Stage::Finetune,
            lambda1: 0.1,
            lambda2: 0.1,
            lr0: 1e-4,
            total_steps: 5000,
            lr_total_steps: 0,
            batch_size: 8,
            grad_accum: 2,
            max_grad_norm: 1.0,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            tau: TauSchedule::default(),
            log_every: 1,
        }
    }
}

impl TrainConfig {
    pub fn lr_horizon(&self) -> usize {
        if self.lr_total_steps == 0 { self.total_steps } else { self.lr_total_steps }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lambda1 < 0.0 || self.lambda2 < 0.0 {
            return Err(DvtError::Config("lambda weights must be >= 0".into()));
        }
        if self.batch_size == 0 || self.grad_accum == 0 {
            return Err(DvtError::Config("batch_size and grad_accum must be positive".into()));
        }
        if self.lr_horizon() == 0 {
            return Err(DvtError::Config("lr schedule horizon must be positive".into()));
        }
        Ok(())
    }
}

/// Decoding-time settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingConfig {
    pub p: f64,
    pub temperature: f64,
    pub min_tokens: usize,
    pub max_tokens: usize,
    pub seed: u64,
    /// Minimum prior code-sequence length. 0 derives it from `min_tokens`
    /// and the CNN block so the decoded horizon can cover `min_tokens`.
    pub min_code_len: usize,
    pub max_code_len: usize,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig {
            p: 0.9,
            temperature: 1.0,
            min_tokens: 100,
            max_tokens: 512,
            seed: 0,
            min_code_len: 0,
            max_code_len: 64,
        }
    }
}

impl SamplingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.p > 0.0 && self.p <= 1.0) {
            return Err(DvtError::Config(format!("nucleus p must be in (0, 1], got {}", self.p)));
        }
        if self.temperature <= 0.0 {
            return Err(DvtError::Config("temperature must be > 0".into()));
        }
        if self.min_tokens > self.max_tokens {
            return Err(DvtError::Config("min_tokens exceeds max_tokens".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tau_schedule_endpoints() {
        let tau = TauSchedule::default();
        assert!((tau.at(0) - 0.9).abs() < 1e-12);
        // 0.9 * e^-2
        assert!((tau.at(20_000) - 0.9 * (-2.0f64).exp()).abs() < 1e-12);
        assert_eq!(tau.at(1_000_000), 0.1);
    }

    #[test]
    fn tau_schedule_monotone() {
        let tau = TauSchedule::default();
        let mut prev = f64::INFINITY;
        for step in (0..50_000).step_by(97) {
            let t = tau.at(step);
            assert!(t <= prev + 1e-15);
            prev = t;
        }
    }

    #[test]
    fn model_config_validation() {
        let mut cfg = ModelConfig::default();
        cfg.validate().unwrap();
        cfg.d_model = 130; // not divisible by 4 heads
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn tiny_divisibility() {
        let cfg = ModelConfig::tiny();
        cfg.validate().unwrap();
        assert_eq!(cfg.block(), 8);
        assert_eq!(cfg.max_tgt_len % cfg.block(), 0);
    }
}
