use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Activation;
use crate::tokenizer;

/// Architecture hyperparameters of the encoder-decoder model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_heads: usize,
    /// Per-head key/value width.
    pub d_kv: usize,
    pub d_ff: usize,
    pub n_enc_layers: usize,
    pub n_dec_layers: usize,
    pub rel_buckets: usize,
    pub rel_max_distance: usize,
    /// Inputs longer than this are still processed but flagged.
    pub max_positions: usize,
    pub activation: Activation,
    pub eps: f32,
}

impl ModelConfig {
    /// Small config used by the CLI `init-toy` default and the tests.
    pub fn toy(d_model: usize, n_heads: usize, n_layers: usize) -> Self {
        Self {
            vocab_size: tokenizer::VOCAB_SIZE,
            d_model,
            n_heads,
            d_kv: d_model / n_heads.max(1),
            d_ff: 4 * d_model,
            n_enc_layers: n_layers,
            n_dec_layers: n_layers,
            rel_buckets: 32,
            rel_max_distance: 128,
            max_positions: 512,
            activation: Activation::Relu,
            eps: 1e-6,
        }
    }

    pub fn inner_dim(&self) -> usize {
        self.n_heads * self.d_kv
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("vocab_size", self.vocab_size),
            ("d_model", self.d_model),
            ("n_heads", self.n_heads),
            ("d_kv", self.d_kv),
            ("d_ff", self.d_ff),
            ("n_enc_layers", self.n_enc_layers),
            ("n_dec_layers", self.n_dec_layers),
            ("rel_buckets", self.rel_buckets),
            ("rel_max_distance", self.rel_max_distance),
            ("max_positions", self.max_positions),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be at least 1")));
        }
        if self.d_model != self.n_heads * self.d_kv {
            return Err(Error::Config(format!(
                "d_model ({}) must equal n_heads ({}) × d_kv ({})",
                self.d_model, self.n_heads, self.d_kv
            )));
        }
        if !self.rel_buckets.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "rel_buckets ({}) must be even",
                self.rel_buckets
            )));
        }
        // the logarithmic regime needs max_distance above the exact range in
        // both directional and bidirectional use
        if self.rel_max_distance <= self.rel_buckets / 2 {
            return Err(Error::Config(format!(
                "rel_max_distance ({}) must exceed rel_buckets / 2 ({})",
                self.rel_max_distance,
                self.rel_buckets / 2
            )));
        }
        if self.vocab_size < tokenizer::VOCAB_SIZE {
            return Err(Error::Config(format!(
                "vocab_size ({}) is below the tokenizer's {}",
                self.vocab_size,
                tokenizer::VOCAB_SIZE
            )));
        }
        if !(self.eps.is_finite() && self.eps >= 0.0) {
            return Err(Error::Config(format!(
                "eps ({}) must be finite and ≥ 0",
                self.eps
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toy_config_is_valid() {
        ModelConfig::toy(64, 4, 2).validate().unwrap();
        ModelConfig::toy(8, 2, 2).validate().unwrap();
    }

    #[test]
    fn rejects_inconsistent_dims() {
        let mut c = ModelConfig::toy(64, 4, 2);
        c.d_kv = 8;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::toy(64, 4, 2);
        c.rel_buckets = 31;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::toy(64, 4, 2);
        c.vocab_size = 100;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::toy(64, 4, 2);
        c.n_dec_layers = 0;
        assert!(c.validate().is_err());
    }
}
