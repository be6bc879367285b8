use crate::error::Result;
use crate::numerics::{Rng, Scalar, Tape, Tensor, Var};

use super::{LayerVars, LnVariant};

/// Inverted dropout: zero with probability `p`, survivors scaled by `1/(1 − p)`.
pub fn dropout<T: Scalar>(tape: &mut Tape<T>, x: Var, p: f64, rng: Option<&mut Rng>) -> Result<Var> {
    let Some(rng) = rng else { return Ok(x) };
    if p <= 0.0 {
        return Ok(x);
    }
    let keep = T::of(1.0 / (1.0 - p));
    let shape = tape.shape(x).to_vec();
    let n: usize = shape.iter().product();
    let mask: Vec<T> = (0..n)
        .map(|_| if rng.bernoulli(p) { T::zero() } else { keep })
        .collect();
    let m = tape.constant(Tensor::new(shape, mask)?);
    tape.mul(x, m)
}

fn ffn<T: Scalar>(
    tape: &mut Tape<T>,
    x: Var,
    lv: &LayerVars,
    p: f64,
    rng: Option<&mut Rng>,
) -> Result<Var> {
    let h = tape.matmul(x, lv.ff1.0)?;
    let h = tape.add_row(h, lv.ff1.1)?;
    let h = tape.relu(h);
    let h = dropout(tape, h, p, rng)?;
    let y = tape.matmul(h, lv.ff2.0)?;
    tape.add_row(y, lv.ff2.1)
}

/// The position-wise map applied to `O + X`.
///
/// `Eq3` is `LN_b(FFN(LN_a(x)) + LN_a(x))`; `Postln` is `LN_b(FFN(x) + x)`.
pub fn layer_transform<T: Scalar>(
    tape: &mut Tape<T>,
    x: Var,
    lv: &LayerVars,
    variant: LnVariant,
    dropout_p: f64,
    rng: Option<&mut Rng>,
) -> Result<Var> {
    let base = match variant {
        LnVariant::Eq3 => tape.layer_norm(x, lv.ln_a.0, lv.ln_a.1)?,
        LnVariant::Postln => x,
    };
    let f = ffn(tape, base, lv, dropout_p, rng)?;
    let s = tape.add(f, base)?;
    tape.layer_norm(s, lv.ln_b.0, lv.ln_b.1)
}
