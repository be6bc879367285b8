use std::f64::consts::LN_2;

use crate::error::{Error, Result};
use crate::memory::MemMode;
use crate::model::{eval_segment, LmState, ModelConfig, Params};
use crate::numerics::Scalar;

/// Mean next-token negative log-likelihood and its derived scores.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalResult {
    pub tokens: usize,
    pub mean_nll: f64,
    pub ppl: f64,
    pub bpc: f64,
}

impl EvalResult {
    pub fn from_mean_nll(mean_nll: f64, tokens: usize) -> Self {
        Self {
            tokens,
            mean_nll,
            ppl: mean_nll.exp(),
            bpc: mean_nll / LN_2,
        }
    }
}

/// Streams `split` once in segments of `config.seg_len` with `mem_len`
/// memory positions per layer. At most `max_tokens` predictions are scored.
pub fn evaluate<T: Scalar>(
    params: &Params<T>,
    config: &ModelConfig,
    split: &[usize],
    mem_len: usize,
    max_tokens: Option<usize>,
) -> Result<EvalResult> {
    if split.len() < 2 {
        return Err(Error::Config("evaluation split needs at least two tokens".into()));
    }
    let mut predictable = split.len() - 1;
    if let Some(cap) = max_tokens {
        predictable = predictable.min(cap.max(1));
    }
    let mut state = LmState::<T>::with_mem_len(config, mem_len);
    let mut total = 0.0;
    let mut start = 0;
    while start < predictable {
        let end = (start + config.seg_len).min(predictable);
        let (_, nll) = eval_segment(params, config, &mut state, &split[start..end], &split[start + 1..end + 1])?;
        total += nll;
        start = end;
    }
    Ok(EvalResult::from_mean_nll(total / predictable as f64, predictable))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExtrapolationRow {
    pub m: usize,
    pub mem_len: usize,
    pub ppl: f64,
}

/// One evaluation per `m`, with segments of `target` tokens and `target · m`
/// memory positions.
pub fn extrapolate_eval<T: Scalar>(
    params: &Params<T>,
    config: &ModelConfig,
    split: &[usize],
    target: usize,
    m_values: &[usize],
    max_tokens: Option<usize>,
) -> Result<Vec<ExtrapolationRow>> {
    if target == 0 {
        return Err(Error::Config("target length must be positive".into()));
    }
    let mut cfg = config.clone();
    cfg.seg_len = target;
    m_values
        .iter()
        .map(|&m| {
            let mem_len = if cfg.mem_mode == MemMode::None { 0 } else { target * m };
            let r = evaluate(params, &cfg, split, mem_len, max_tokens)?;
            Ok(ExtrapolationRow { m, mem_len, ppl: r.ppl })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn score_conversions() {
        let r = EvalResult::from_mean_nll(3.0, 10);
        assert!((r.ppl - 20.085536923187668).abs() < 1e-12);
        assert!((EvalResult::from_mean_nll(LN_2, 1).bpc - 1.0).abs() < 1e-15);
        let u = EvalResult::from_mean_nll(27f64.ln(), 1);
        assert!((u.bpc - 4.754887502163468).abs() < 1e-12);
    }
}
