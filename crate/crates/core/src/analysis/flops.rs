//! Analytic operation count for one next-token prediction.
//!
//! A multiply-accumulate counts as one operation; softmax, layer
//! normalisation and activations count one per element. Per-segment work is
//! divided by `N`. With `d = d_model`, `h = n_heads·d_head`, `H = n_heads`,
//! `M` the memory length and `N` the segment length, one layer costs:
//!
//! - projections: `3dh` (query, content key, value) plus `hd` (output) per token;
//! - memory keys and values: `2Mdh / N`;
//! - distance table projection: `(M + N + 1)dh / N`;
//! - causal attention: `K(3h + H)` with `K = M + (N + 1)/2` keys on average;
//! - transform: `2d·d_ff + d_ff` plus one `d` per layer normalisation.
//!
//! The look-ahead model adds, per layer:
//!
//! - memory queries `Mdh / N` and look-ahead attention `P(3h + H) / N`, with
//!   `P = Σ_{k=1}^{M} min(N, k)` admissible memory–key pairs;
//! - interpolation `3hM / N`;
//! - and, below the top layer, the transform of the refreshed memory rows
//!   `M(hd + 2d·d_ff + d_ff + norms) / N`.
//!
//! The tied output projection adds `V·d` per token.

use crate::memory::MemMode;
use crate::model::{LnVariant, ModelConfig};

/// Admissible (memory slot, look-ahead key) pairs per iteration.
pub fn lookahead_pairs(mem_len: usize, seg_len: usize) -> u64 {
    (1..=mem_len as u64).map(|k| k.min(seg_len as u64)).sum()
}

/// Admissible (query, key) pairs of causal attention per iteration.
pub fn causal_pairs(mem_len: usize, seg_len: usize) -> u64 {
    let (m, n) = (mem_len as u64, seg_len as u64);
    n * m + n * (n + 1) / 2
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FlopsBreakdown {
    pub projections: f64,
    pub attention: f64,
    pub transform: f64,
    pub lookahead: f64,
    pub memory_transform: f64,
    pub output: f64,
}

impl FlopsBreakdown {
    pub fn total(&self) -> f64 {
        self.projections + self.attention + self.transform + self.lookahead + self.memory_transform + self.output
    }
}

pub fn flops_breakdown(c: &ModelConfig) -> FlopsBreakdown {
    let d = c.d_model as f64;
    let h = (c.n_heads * c.d_head) as f64;
    let heads = c.n_heads as f64;
    let ff = c.d_ff as f64;
    let n = c.seg_len as f64;
    let m_len = c.effective_mem_len();
    let m = m_len as f64;
    let layers = c.n_layers as f64;
    let norms = match c.ln_variant {
        LnVariant::Eq3 => 2.0 * d,
        LnVariant::Postln => d,
    };
    let transform_row = h * d + 2.0 * d * ff + ff + norms;

    let projections = 4.0 * d * h + 2.0 * m * d * h / n + (m + n + 1.0) * d * h / n;
    let attention = causal_pairs(m_len, c.seg_len) as f64 / n * (3.0 * h + heads);
    let transform = 2.0 * d * ff + ff + norms;
    let (lookahead, memory_transform) = if c.mem_mode == MemMode::Lamemo {
        let pairs = lookahead_pairs(m_len, c.seg_len) as f64;
        let la = m * d * h / n + pairs * (3.0 * h + heads) / n + 3.0 * h * m / n;
        let mt = m * transform_row / n;
        (la * layers, mt * (layers - 1.0))
    } else {
        (0.0, 0.0)
    };
    FlopsBreakdown {
        projections: projections * layers,
        attention: attention * layers,
        transform: transform * layers,
        lookahead,
        memory_transform,
        output: c.vocab_size as f64 * d,
    }
}

/// Operations per predicted token.
pub fn flops_count(c: &ModelConfig) -> f64 {
    flops_breakdown(c).total()
}
