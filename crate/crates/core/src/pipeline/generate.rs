use crate::error::{Error, Result};
use crate::model::{forward_segment, sample_top_p, softmax, ForwardOptions, LmState, ModelConfig, Params};
use crate::numerics::{Rng, Scalar, Tape};

fn last_logits<T: Scalar>(params: &Params<T>, config: &ModelConfig, state: &mut LmState<T>, tokens: &[usize]) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape, false);
    let out = forward_segment(&mut tape, &bound, config, state, tokens, None, ForwardOptions::default())?;
    let logits = tape.value(out.logits);
    Ok(logits.row(logits.rows() - 1).iter().map(|x| x.as_f64()).collect())
}

/// Continues `prompt` by `n_tokens` nucleus samples.
///
/// Text is cut into segments at the same boundaries as during evaluation:
/// a full segment is committed to the memory once, and the partial segment
/// after it is re-run from the committed state for every new token.
pub fn generate<T: Scalar>(
    params: &Params<T>,
    config: &ModelConfig,
    prompt: &[usize],
    n_tokens: usize,
    top_p: f64,
    rng: &mut Rng,
) -> Result<Vec<usize>> {
    if prompt.is_empty() {
        return Err(Error::Config("generation needs a non-empty prompt".into()));
    }
    if !(top_p > 0.0 && top_p <= 1.0) {
        return Err(Error::Config(format!("top-p {top_p} must lie in (0, 1]")));
    }
    let n = config.seg_len;
    let mut state = LmState::new(config);
    let mut text = prompt.to_vec();
    let mut committed = 0;
    for _ in 0..n_tokens {
        while text.len() - committed > n {
            last_logits(params, config, &mut state, &text[committed..committed + n])?;
            committed += n;
        }
        let logits = last_logits(params, config, &mut state.clone(), &text[committed..])?;
        text.push(sample_top_p(&softmax(&logits), top_p, rng));
    }
    Ok(text.split_off(prompt.len()))
}
