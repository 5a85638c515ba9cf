use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// ℓ2 threat model and step schedule of the PGD attack.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PgdConfig {
    pub epsilon: f64,
    pub alpha: f64,
    pub n_steps: usize,
}

impl PgdConfig {
    /// Validated constructor: `ε > 0`, `0 < α ≤ ε`, `N ≥ 1`.
    pub fn new(epsilon: f64, alpha: f64, n_steps: usize) -> Result<Self> {
        let c = PgdConfig {
            epsilon,
            alpha,
            n_steps,
        };
        c.validate()?;
        Ok(c)
    }

    /// Step size given as a fraction of ε (e.g. 0.2 for α = 20% of ε).
    pub fn with_alpha_fraction(epsilon: f64, alpha_fraction: f64, n_steps: usize) -> Result<Self> {
        Self::new(epsilon, epsilon * alpha_fraction, n_steps)
    }

    /// The degenerate zero-radius threat model (δ ≡ 0), under which
    /// adversarial training reduces to vanilla training.
    pub fn zero_radius(n_steps: usize) -> Self {
        PgdConfig {
            epsilon: 0.0,
            alpha: 0.0,
            n_steps,
        }
    }

    pub fn is_zero_radius(&self) -> bool {
        self.epsilon == 0.0
    }

    pub fn validate(&self) -> Result<()> {
        if self.is_zero_radius() && self.alpha == 0.0 {
            return Ok(());
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::config(format!("epsilon must be > 0, got {}", self.epsilon)));
        }
        if !(self.alpha > 0.0 && self.alpha <= self.epsilon) {
            return Err(Error::config(format!(
                "alpha must satisfy 0 < alpha <= epsilon, got alpha={} epsilon={}",
                self.alpha, self.epsilon
            )));
        }
        if self.n_steps == 0 {
            return Err(Error::config("n_steps must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainMode {
    Vanilla,
    #[serde(alias = "adv")]
    Adversarial,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub total_steps: usize,
    pub batch_size: usize,
    pub max_len: usize,
    pub seed: u64,
    pub mode: TrainMode,
    /// Dev evaluation (and checkpoint) period in steps.
    pub eval_every: usize,
    /// Number of best checkpoints averaged by [`super::select_best`].
    pub keep_best: usize,
    /// MLM masking rate (pretraining only).
    pub mask_rate: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            total_steps: 2000,
            batch_size: 32,
            max_len: 32,
            seed: 0,
            mode: TrainMode::Vanilla,
            eval_every: 100,
            keep_best: 10,
            mask_rate: 0.15,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning_rate must be > 0"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be at least 1"));
        }
        if self.eval_every == 0 {
            return Err(Error::config("eval_every must be at least 1"));
        }
        if self.keep_best == 0 {
            return Err(Error::config("keep_best must be at least 1"));
        }
        Ok(())
    }
}

/// Linearly decayed rate `lr₀ · (1 − t/T)`, clamped at zero.
pub fn linear_decay(lr0: f64, step: usize, total: usize) -> f64 {
    if total == 0 {
        return 0.0;
    }
    lr0 * (1.0 - step as f64 / total as f64).max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgd_invariants() {
        assert!(PgdConfig::new(0.1, 0.02, 20).is_ok());
        assert!(PgdConfig::new(0.0, 0.0, 20).is_ok());
        assert!(PgdConfig::new(0.1, 0.2, 20).is_err());
        assert!(PgdConfig::new(0.1, 0.0, 20).is_err());
        assert!(PgdConfig::new(0.1, 0.1, 0).is_err());
        assert!(PgdConfig::new(-0.1, 0.01, 1).is_err());
        let c = PgdConfig::with_alpha_fraction(0.2, 0.2, 20).unwrap();
        assert!((c.alpha - 0.04).abs() < 1e-15);
    }

    #[test]
    fn schedule_endpoints() {
        assert_eq!(linear_decay(2e-5, 0, 6000), 2e-5);
        assert_eq!(linear_decay(2e-5, 6000, 6000), 0.0);
        assert!((linear_decay(1.0, 250, 1000) - 0.75).abs() < 1e-15);
    }
}
