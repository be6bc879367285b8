use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::memory::MemMode;
use crate::numerics::Precision;
use crate::posenc::RpeScheme;

/// Placement of layer normalisation in the per-layer transform.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LnVariant {
    /// `LN(FFN(LN(x)) + LN(x))`.
    #[default]
    Eq3,
    /// `LN(FFN(x) + x)`.
    Postln,
}

fn default_init_std() -> f64 {
    0.02
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_head: usize,
    pub d_ff: usize,
    pub dropout: f64,
    pub vocab_size: usize,
    pub mem_mode: MemMode,
    pub mem_len: usize,
    pub seg_len: usize,
    pub rpe_scheme: RpeScheme,
    pub interp_eps: f64,
    pub precision: Precision,
    #[serde(default)]
    pub ln_variant: LnVariant,
    #[serde(default = "default_init_std")]
    pub init_std: f64,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n_layers", self.n_layers),
            ("d_model", self.d_model),
            ("n_heads", self.n_heads),
            ("d_head", self.d_head),
            ("d_ff", self.d_ff),
            ("vocab_size", self.vocab_size),
            ("seg_len", self.seg_len),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.n_heads * self.d_head != self.d_model {
            return Err(Error::Config(format!(
                "d_model {} must equal n_heads {} × d_head {}",
                self.d_model, self.n_heads, self.d_head
            )));
        }
        if !self.d_model.is_multiple_of(2) {
            return Err(Error::Config("d_model must be even for the sinusoid table".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if !(self.interp_eps >= 0.0 && self.interp_eps.is_finite()) {
            return Err(Error::Config(format!("interp_eps {} must be finite and ≥ 0", self.interp_eps)));
        }
        if !(self.init_std > 0.0 && self.init_std.is_finite()) {
            return Err(Error::Config("init_std must be positive".into()));
        }
        Ok(())
    }

    /// Memory length actually held, zero without memory.
    pub fn effective_mem_len(&self) -> usize {
        match self.mem_mode {
            MemMode::None => 0,
            _ => self.mem_len,
        }
    }

    /// The word-level configuration used for the large-scale comparison.
    pub fn wikitext(mem_mode: MemMode) -> Self {
        Self {
            n_layers: 16,
            d_model: 410,
            n_heads: 10,
            d_head: 41,
            d_ff: 2100,
            dropout: 0.1,
            vocab_size: 267_735,
            mem_mode,
            mem_len: if mem_mode == MemMode::None { 0 } else { 150 },
            seg_len: 150,
            rpe_scheme: RpeScheme::Dis,
            interp_eps: 1e-4,
            precision: Precision::F32,
            ln_variant: LnVariant::Eq3,
            init_std: 0.02,
        }
    }

    /// Two layers, width 8, two heads: small enough for exhaustive checks.
    pub fn toy(mem_mode: MemMode, rpe_scheme: RpeScheme, seg_len: usize, mem_len: usize) -> Self {
        Self {
            n_layers: 2,
            d_model: 8,
            n_heads: 2,
            d_head: 4,
            d_ff: 16,
            dropout: 0.0,
            vocab_size: 11,
            mem_mode,
            mem_len,
            seg_len,
            rpe_scheme,
            interp_eps: 1e-4,
            precision: Precision::F64,
            ln_variant: LnVariant::Eq3,
            init_std: 0.02,
        }
    }
}
