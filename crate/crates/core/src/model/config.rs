use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub d_ff: usize,
    pub dropout: f64,
    pub vocab_size: usize,
    /// Longest decoder input, counting the start token.
    pub max_caption_len: usize,
    pub d_audio_in: usize,
    pub d_secondary_in: usize,
    /// Add sinusoidal positions to encoder outputs as well.
    pub encoder_positions: bool,
    /// Multiply token embeddings by sqrt(d_model) before adding positions.
    pub scale_embedding: bool,
    pub ln_eps: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_model: 128,
            n_heads: 4,
            n_layers: 2,
            d_ff: 2048,
            dropout: 0.2,
            vocab_size: 64,
            max_caption_len: 20,
            d_audio_in: 32,
            d_secondary_in: 32,
            encoder_positions: false,
            scale_embedding: true,
            ln_eps: 1e-5,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let extents = [
            ("d_model", self.d_model),
            ("n_heads", self.n_heads),
            ("n_layers", self.n_layers),
            ("d_ff", self.d_ff),
            ("vocab_size", self.vocab_size),
            ("max_caption_len", self.max_caption_len),
            ("d_audio_in", self.d_audio_in),
            ("d_secondary_in", self.d_secondary_in),
        ];
        if let Some((name, _)) = extents.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if !self.d_model.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "d_model {} must be even for sinusoidal positions",
                self.d_model
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if !(self.ln_eps > 0.0) {
            return Err(Error::Config("ln_eps must be positive".into()));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    /// Number of scalar parameters.
    ///
    /// Per stream encoder `(d_in + 1)·d`; embedding `V·d`; per layer three
    /// norms `6d`, three attention blocks `3·4(d² + d)`, feed-forward
    /// `2·d·d_ff + d_ff + d`; final norm `2d`; output `d·V + V`.
    pub fn param_count(&self) -> usize {
        let d = self.d_model;
        let v = self.vocab_size;
        let attn = 4 * (d * d + d);
        let layer = 6 * d + 3 * attn + 2 * d * self.d_ff + self.d_ff + d;
        (self.d_audio_in + 1) * d
            + (self.d_secondary_in + 1) * d
            + v * d
            + self.n_layers * layer
            + 2 * d
            + d * v
            + v
    }
}

/// Weight of the acoustic stream's cross-attention; the secondary stream
/// gets `1 - λ`.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct MixingWeight(f64);

impl MixingWeight {
    pub const AUDIO_ONLY: MixingWeight = MixingWeight(1.0);
    pub const SECONDARY_ONLY: MixingWeight = MixingWeight(0.0);

    pub fn new(lambda_audio: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&lambda_audio) {
            return Err(Error::Contract(format!(
                "mixing weight {lambda_audio} outside [0, 1]"
            )));
        }
        Ok(MixingWeight(lambda_audio))
    }

    pub fn audio(self) -> f64 {
        self.0
    }

    pub fn secondary(self) -> f64 {
        1.0 - self.0
    }
}

impl TryFrom<f64> for MixingWeight {
    type Error = Error;

    fn try_from(v: f64) -> Result<Self> {
        MixingWeight::new(v)
    }
}

impl From<MixingWeight> for f64 {
    fn from(m: MixingWeight) -> f64 {
        m.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid_and_counted() {
        let c = ModelConfig::default();
        c.validate().unwrap();
        assert_eq!((c.d_model, c.n_heads, c.n_layers, c.d_ff, c.max_caption_len), (128, 4, 2, 2048, 20));
        assert_eq!(c.dropout, 0.2);
        let d = 128;
        let per_layer = 6 * d + 12 * (d * d + d) + 2 * d * 2048 + 2048 + d;
        assert_eq!(c.param_count(), 33 * d * 2 + 64 * d + 2 * per_layer + 2 * d + d * 64 + 64);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        for c in [
            ModelConfig { n_heads: 3, ..Default::default() },
            ModelConfig { vocab_size: 0, ..Default::default() },
            ModelConfig { d_model: 7, n_heads: 7, ..Default::default() },
            ModelConfig { dropout: 1.0, ..Default::default() },
        ] {
            assert!(matches!(c.validate(), Err(Error::Config(_))), "{c:?}");
        }
        assert!(serde_json::from_str::<ModelConfig>(r#"{"d_modle": 3}"#).is_err());
    }

    #[test]
    fn mixing_weight_bounds() {
        assert!(MixingWeight::new(-0.01).is_err());
        assert!(MixingWeight::new(1.01).is_err());
        assert!(MixingWeight::new(f64::NAN).is_err());
        let m = MixingWeight::new(0.25).unwrap();
        assert_eq!(m.audio() + m.secondary(), 1.0);
        assert!(serde_json::from_str::<MixingWeight>("1.5").is_err());
        assert_eq!(serde_json::from_str::<MixingWeight>("0.5").unwrap().audio(), 0.5);
    }
}
