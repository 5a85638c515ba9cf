use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shape of the encoder and its two heads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub vocab_size: usize,
    pub max_len: usize,
    pub n_classes: usize,
}

impl ModelConfig {
    /// Default toy shape: 4 layers, 4 heads, width 64, FFN 128, 32 positions.
    pub fn toy(vocab_size: usize, n_classes: usize) -> Self {
        ModelConfig {
            n_layers: 4,
            n_heads: 4,
            d_model: 64,
            d_ff: 128,
            vocab_size,
            max_len: 32,
            n_classes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_heads == 0 || self.d_model == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::config(format!(
                "d_model ({}) must be a positive multiple of n_heads ({})",
                self.d_model, self.n_heads
            )));
        }
        if self.d_ff == 0 {
            return Err(Error::config("d_ff must be positive"));
        }
        if self.max_len < 3 {
            return Err(Error::config("max_len must be at least 3 (CLS, token, SEP)"));
        }
        if self.vocab_size < 5 {
            return Err(Error::config("vocab_size must cover the 5 reserved tokens"));
        }
        if self.n_classes == 0 {
            return Err(Error::config("n_classes must be positive"));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}
