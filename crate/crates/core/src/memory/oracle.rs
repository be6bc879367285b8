//! Brute-force reference for what a refreshed memory slot should hold.
//!
//! Everything here is plain `f64` loops over the raw weights; nothing is
//! shared with the tape or the incremental code path.

use crate::error::{Error, Result};
use crate::posenc::{sinusoid_row, RpeScheme};

/// Raw first-layer attention weights, row-major, `d_model × n_heads·d_head`
/// for the matrices and `n_heads·d_head` for the biases.
#[derive(Clone, Debug)]
pub struct OracleWeights {
    pub d_model: usize,
    pub n_heads: usize,
    pub d_head: usize,
    pub scheme: RpeScheme,
    pub w_q: Vec<f64>,
    pub w_ke: Vec<f64>,
    pub w_v: Vec<f64>,
    pub w_kr: Vec<f64>,
    pub u: Vec<f64>,
    pub v_pos: Vec<f64>,
    pub v_neg: Vec<f64>,
}

fn project(x: &[f64], w: &[f64], cols: usize, col0: usize, width: usize) -> Vec<f64> {
    let mut out = vec![0.0; width];
    for (p, &xp) in x.iter().enumerate() {
        for c in 0..width {
            out[c] += xp * w[p * cols + col0 + c];
        }
    }
    out
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// One softmax attention from `query_pos` over keys `window.0..=window.1`,
/// every head, returned side by side (`n_heads·d_head`).
///
/// `inputs` are the first-layer inputs of the whole stream. A window that
/// reaches past `bound` (the newest position visible in this iteration)
/// or does not contain the query is a contract violation.
pub fn oracle_full_attention(
    inputs: &[Vec<f64>],
    query_pos: usize,
    window: (usize, usize),
    bound: usize,
    w: &OracleWeights,
) -> Result<Vec<f64>> {
    let (lo, hi) = window;
    if hi > bound {
        return Err(Error::Contract(format!("key {hi} is beyond the visible position {bound}")));
    }
    if !(lo <= query_pos && query_pos <= hi) || hi >= inputs.len() {
        return Err(Error::Contract(format!(
            "window {lo}..={hi} must contain query {query_pos} and lie inside the stream"
        )));
    }
    let hd = w.n_heads * w.d_head;
    let scale = 1.0 / (w.d_head as f64).sqrt();
    let mut out = Vec::with_capacity(hd);
    for h in 0..w.n_heads {
        let c0 = h * w.d_head;
        let bias = |b: &[f64]| b[c0..c0 + w.d_head].to_vec();
        let q = project(&inputs[query_pos], &w.w_q, hd, c0, w.d_head);
        let u = bias(&w.u);
        let mut scores = Vec::with_capacity(hi - lo + 1);
        let mut values = Vec::with_capacity(hi - lo + 1);
        for j in lo..=hi {
            let rel = query_pos as f64 - j as f64;
            let (r, v) = match w.scheme {
                RpeScheme::Xl => (sinusoid_row(rel, w.d_model), bias(&w.v_pos)),
                RpeScheme::Dis => (
                    sinusoid_row(rel.abs(), w.d_model),
                    if rel >= 0.0 { bias(&w.v_pos) } else { bias(&w.v_neg) },
                ),
            };
            let k = project(&inputs[j], &w.w_ke, hd, c0, w.d_head);
            let rk = project(&r, &w.w_kr, hd, c0, w.d_head);
            let content: f64 = (0..w.d_head).map(|c| (q[c] + u[c]) * k[c]).sum();
            let position: f64 = (0..w.d_head).map(|c| (q[c] + v[c]) * rk[c]).sum();
            scores.push((content + position) * scale);
            values.push(project(&inputs[j], &w.w_v, hd, c0, w.d_head));
        }
        let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let weights: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
        let total: f64 = weights.iter().sum();
        for c in 0..w.d_head {
            let col: Vec<f64> = values.iter().map(|v| v[c]).collect();
            out.push(dot(&weights, &col) / total);
        }
    }
    Ok(out)
}
