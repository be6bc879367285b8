//! Central-difference verification of tape gradients.

use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Worst disagreement found by [`grad_check`].
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(input, element)` where the worst error occurred.
    pub worst: Option<(usize, usize)>,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
    /// Elements that needed the widened step.
    pub widened: usize,
}

/// Compares reverse-mode gradients of a scalar function with central
/// differences of step `h`, element by element.
///
/// `f` receives a fresh tape and one leaf per input and must return a
/// scalar node. The relative error uses the denominator
/// `max(|analytic|, |numeric|, 1e-8)`.
///
/// An estimate smaller than `10⁴` times its own round-off bound
/// (`4·ε·|f| / h`) carries fewer than four significant digits; such an
/// element is re-estimated with the step widened tenfold, at most
/// [`MAX_WIDENINGS`] times. The decision looks only at the numeric side.
pub const MAX_WIDENINGS: u32 = 2;

pub fn grad_check<F>(f: F, inputs: &[Tensor<f64>], h: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let eval = |xs: &[Tensor<f64>]| -> Result<(f64, Tape<f64>, Vec<Var>, Var)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|x| tape.leaf(x.clone())).collect();
        let out = f(&mut tape, &vars)?;
        let v = tape.value(out);
        if v.numel() != 1 {
            return Err(Error::dim("grad_check", "function must return a scalar"));
        }
        Ok((v.data()[0], tape, vars, out))
    };

    let (f0, tape, vars, out) = eval(inputs)?;
    if !f0.is_finite() {
        return Err(Error::NonFiniteValue {
            input: 0,
            element: 0,
            offset: 0.0,
        });
    }
    let grads = tape.backward(out)?;
    let analytic: Vec<Tensor<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, x)| grads.get_or_zeros(v, x.shape()))
        .collect();
    drop(tape);

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
        widened: 0,
    };
    let roundoff = |step: f64| 4.0 * f64::EPSILON * f0.abs().max(1.0) / step;
    let mut probe = inputs.to_vec();
    for (i, x) in inputs.iter().enumerate() {
        for e in 0..x.numel() {
            let orig = x.data()[e];
            let mut side = |offset: f64| -> Result<f64> {
                probe[i].data_mut()[e] = orig + offset;
                let (val, ..) = eval(&probe)?;
                if !val.is_finite() {
                    return Err(Error::NonFiniteValue {
                        input: i,
                        element: e,
                        offset,
                    });
                }
                Ok(val)
            };
            let mut step = h;
            let mut numeric = (side(step)? - side(-step)?) / (2.0 * step);
            let mut widenings = 0;
            while numeric.abs() < 1e4 * roundoff(step) && widenings < MAX_WIDENINGS {
                step *= 10.0;
                numeric = (side(step)? - side(-step)?) / (2.0 * step);
                widenings += 1;
            }
            if widenings > 0 {
                report.widened += 1;
            }
            probe[i].data_mut()[e] = orig;
            let a = analytic[i].data()[e];
            let denom = a.abs().max(numeric.abs()).max(1e-8);
            let rel = (a - numeric).abs() / denom;
            report.checked += 1;
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = rel;
                report.worst = Some((i, e));
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}
