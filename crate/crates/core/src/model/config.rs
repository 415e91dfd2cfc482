use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::aggregation::InitScheme;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConvKind {
    Spectral,
    Spiral,
}

/// How features move between consecutive hierarchy levels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregationKind {
    /// Precomputed decimation/barycentric matrices.
    Qem,
    /// Learned keys/queries, optionally fused with the precomputed matrix.
    Attention,
    /// Precomputed support with equal weights.
    Average,
    /// Unconstrained dense matrix.
    Full,
    /// Trainable values on the precomputed support.
    Variant,
}

impl FromStr for AggregationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "qem" => Ok(Self::Qem),
            "attention" => Ok(Self::Attention),
            "average" => Ok(Self::Average),
            "full" => Ok(Self::Full),
            "variant" => Ok(Self::Variant),
            other => Err(Error::Config(format!("unknown aggregation kind {other}"))),
        }
    }
}

impl FromStr for ConvKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "spectral" => Ok(Self::Spectral),
            "spiral" => Ok(Self::Spiral),
            other => Err(Error::Config(format!("unknown convolution kind {other}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub conv_kind: ConvKind,
    pub cheb_order: usize,
    pub latent_dim: usize,
    /// `L + 1` widths, input first: conv `l` maps `encoder_widths[l] → encoder_widths[l + 1]`.
    pub encoder_widths: Vec<usize>,
    /// `L + 2` widths: the fully connected output width, then each conv's output.
    pub decoder_widths: Vec<usize>,
    pub encoder_aggregation: AggregationKind,
    pub decoder_aggregation: AggregationKind,
    pub k_down: usize,
    pub k_up: usize,
    pub c: usize,
    pub masking_down: bool,
    pub masking_up: bool,
    /// Blend the attention head with the precomputed matrix.
    pub fusion: bool,
    pub w_a_init: f64,
    /// When false, every fusion weight stays at `w_a_init`.
    pub train_w_a: bool,
    pub init_scheme: InitScheme,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::simple(4)
    }
}

impl ModelConfig {
    /// Narrow widths for `levels` down/up steps: `(3, 16, …, 16, 32)` and `(32, 32, 16, …, 16, 3)`.
    pub fn simple(levels: usize) -> Self {
        let levels = levels.max(1);
        let mut enc = vec![3];
        enc.extend(std::iter::repeat(16).take(levels - 1));
        enc.push(32);
        let mut dec = vec![32, 32];
        dec.extend(std::iter::repeat(16).take(levels - 1));
        dec.push(3);
        Self {
            conv_kind: ConvKind::Spectral,
            cheb_order: 6,
            latent_dim: 8,
            encoder_widths: enc,
            decoder_widths: dec,
            encoder_aggregation: AggregationKind::Qem,
            decoder_aggregation: AggregationKind::Qem,
            k_down: 2,
            k_up: 32,
            c: 21,
            masking_down: true,
            masking_up: true,
            fusion: true,
            w_a_init: 0.2,
            train_w_a: true,
            init_scheme: InitScheme::Precomputed,
            seed: 0,
        }
    }

    /// Four-level wide variant.
    pub fn wider() -> Self {
        Self {
            encoder_widths: vec![3, 16, 32, 64, 128],
            decoder_widths: vec![128, 64, 32, 32, 16, 3],
            ..Self::simple(4)
        }
    }

    pub fn with_aggregation(mut self, kind: AggregationKind) -> Self {
        self.encoder_aggregation = kind;
        self.decoder_aggregation = kind;
        self
    }

    pub fn depth(&self) -> usize {
        self.encoder_widths.len().saturating_sub(1)
    }

    pub fn validate(&self) -> Result<()> {
        let l = self.depth();
        if l == 0 || self.decoder_widths.len() != l + 2 {
            return Err(Error::Config(format!(
                "{} encoder widths need {} decoder widths, got {}",
                self.encoder_widths.len(),
                l + 2,
                self.decoder_widths.len()
            )));
        }
        if self.encoder_widths[0] != 3 || *self.decoder_widths.last().unwrap() != 3 {
            return Err(Error::Config("encoder input and decoder output must have width 3".into()));
        }
        if self.encoder_widths.iter().chain(&self.decoder_widths).any(|&w| w == 0) {
            return Err(Error::Config("widths must be positive".into()));
        }
        if self.latent_dim == 0 || self.cheb_order == 0 {
            return Err(Error::Config("latent_dim and cheb_order must be positive".into()));
        }
        if self.k_down == 0 || self.k_up == 0 || self.c < 2 {
            return Err(Error::Config("need k ≥ 1 and c ≥ 2".into()));
        }
        if !self.w_a_init.is_finite() {
            return Err(Error::Config("w_a_init must be finite".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate_and_round_trip() {
        for cfg in [ModelConfig::simple(4), ModelConfig::simple(2), ModelConfig::wider()] {
            cfg.validate().unwrap();
            let s = serde_json::to_string(&cfg).unwrap();
            assert_eq!(serde_json::from_str::<ModelConfig>(&s).unwrap(), cfg);
        }
        assert_eq!(ModelConfig::simple(2).decoder_widths, vec![32, 32, 16, 3]);
        let partial: ModelConfig = serde_json::from_str(r#"{"latent_dim": 16}"#).unwrap();
        assert_eq!(partial.latent_dim, 16);
        assert_eq!(partial.c, 21);
    }

    #[test]
    fn mismatched_widths_rejected() {
        let mut cfg = ModelConfig::simple(4);
        cfg.decoder_widths.pop();
        assert!(cfg.validate().is_err());
    }
}
