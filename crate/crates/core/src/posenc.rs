//! Sinusoid tables, the two relative-position score functions and the
//! variance analysis of `xᵀR_Δ`.
//!
//! Row `Δ` of a table is `[sin(ω₁Δ), cos(ω₁Δ), …, sin(ω_{d/2}Δ), cos(ω_{d/2}Δ)]`
//! with `ω_k = 10000^(−2k/d)` for `k = 1…d/2`. Negative distances are never
//! stored: the sine entries are odd, so `R_{−Δ}` is `R_Δ` with those
//! entries negated.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Scalar, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RpeScheme {
    /// Signed distances `R_{i−j}` with a single global bias `v`.
    Xl,
    /// Unsigned distances `R_{|i−j|}` with a direction-selected bias.
    Dis,
}

impl std::str::FromStr for RpeScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "xl" => Ok(RpeScheme::Xl),
            "dis" => Ok(RpeScheme::Dis),
            other => Err(Error::Config(format!("unknown rpe scheme `{other}`"))),
        }
    }
}

impl std::fmt::Display for RpeScheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            RpeScheme::Xl => "xl",
            RpeScheme::Dis => "dis",
        })
    }
}

/// `ω_k` for `k = 1…d/2`.
pub fn frequencies(d: usize) -> Vec<f64> {
    (1..=d / 2)
        .map(|k| 10000f64.powf(-2.0 * k as f64 / d as f64))
        .collect()
}

/// The encoding of one (possibly fractional or negative) distance.
pub fn sinusoid_row(delta: f64, d: usize) -> Vec<f64> {
    frequencies(d)
        .into_iter()
        .flat_map(|w| [(w * delta).sin(), (w * delta).cos()])
        .collect()
}

/// Rows `0..=max_dist`.
pub fn sinusoid_table<T: Scalar>(max_dist: usize, d: usize) -> Result<Tensor<T>> {
    if d == 0 || !d.is_multiple_of(2) {
        return Err(Error::Config(format!("sinusoid width must be even and positive, got {d}")));
    }
    let data: Vec<f64> = (0..=max_dist).flat_map(|delta| sinusoid_row(delta as f64, d)).collect();
    Tensor::from_f64(&[max_dist + 1, d], &data)
}

/// Fixed sinusoid table together with the scheme that decides how a
/// signed distance picks its row and bias.
#[derive(Clone, Debug)]
pub struct RpeTable<T> {
    pub scheme: RpeScheme,
    pub max_dist: usize,
    forward: Tensor<T>,
    backward: Tensor<T>,
}

impl<T: Scalar> RpeTable<T> {
    pub fn new(scheme: RpeScheme, max_dist: usize, d: usize) -> Result<Self> {
        let forward = sinusoid_table::<T>(max_dist, d)?;
        let backward = match scheme {
            RpeScheme::Xl => negate_sines(&forward),
            RpeScheme::Dis => forward.clone(),
        };
        Ok(Self {
            scheme,
            max_dist,
            forward,
            backward,
        })
    }

    pub fn width(&self) -> usize {
        self.forward.cols()
    }

    /// Table indexed by `i − j ≥ 0` (query at or right of key).
    pub fn forward(&self) -> &Tensor<T> {
        &self.forward
    }

    /// Table indexed by `j − i > 0` (key right of query): `R_{−Δ}` for xl,
    /// `R_{|Δ|}` for dis.
    pub fn backward(&self) -> &Tensor<T> {
        &self.backward
    }

    /// The encoding used for relative distance `rel = i − j`.
    pub fn row(&self, rel: i64) -> Result<&[T]> {
        let mag = rel.unsigned_abs() as usize;
        if mag > self.max_dist {
            return Err(Error::Range {
                rel,
                max_dist: self.max_dist,
            });
        }
        Ok(if rel >= 0 {
            self.forward.row(mag)
        } else {
            self.backward.row(mag)
        })
    }
}

fn negate_sines<T: Scalar>(t: &Tensor<T>) -> Tensor<T> {
    let mut out = t.clone();
    let c = out.cols();
    for (k, x) in out.data_mut().iter_mut().enumerate() {
        if (k % c).is_multiple_of(2) {
            *x = -*x;
        }
    }
    out
}

/// Per-head weights of one score function. Biases are `[d_head]` vectors.
#[derive(Clone, Copy, Debug)]
pub struct ScoreWeights {
    pub w_q: Var,
    pub w_ke: Var,
    pub w_kr: Var,
    pub u: Var,
    /// `v` for xl, `v₊` for dis.
    pub v_pos: Var,
    /// Unused by xl; `v₋` for dis.
    pub v_neg: Var,
}

fn four_terms<T: Scalar>(
    tape: &mut Tape<T>,
    x_i: Var,
    x_j: Var,
    r: &[T],
    v: Var,
    w: &ScoreWeights,
) -> Result<Var> {
    let r = tape.constant(Tensor::matrix(1, r.len(), r.to_vec())?);
    let q = tape.matmul(x_i, w.w_q)?;
    let k = tape.matmul(x_j, w.w_ke)?;
    let rk = tape.matmul(r, w.w_kr)?;
    let qu = tape.add_row(q, w.u)?;
    let qv = tape.add_row(q, v)?;
    let content = tape.mul(qu, k)?;
    let position = tape.mul(qv, rk)?;
    let both = tape.add(content, position)?;
    Ok(tape.sum(both))
}

/// Unscaled score between row vectors `x_i` and `x_j` (`1×d` each) with
/// signed distance `rel = i − j`, using `R_{i−j}` and bias `v`.
pub fn xl_rpe_score<T: Scalar>(
    tape: &mut Tape<T>,
    x_i: Var,
    x_j: Var,
    rel: i64,
    table: &RpeTable<T>,
    w: &ScoreWeights,
) -> Result<Var> {
    if table.scheme != RpeScheme::Xl {
        return Err(Error::Config("xl score needs an xl table".into()));
    }
    let r = table.row(rel)?.to_vec();
    four_terms(tape, x_i, x_j, &r, w.v_pos, w)
}

/// Unscaled score using `R_{|i−j|}` and `v₊` when `i ≥ j`, `v₋` otherwise.
pub fn dis_rpe_score<T: Scalar>(
    tape: &mut Tape<T>,
    x_i: Var,
    x_j: Var,
    rel: i64,
    table: &RpeTable<T>,
    w: &ScoreWeights,
) -> Result<Var> {
    if table.scheme != RpeScheme::Dis {
        return Err(Error::Config("dis score needs a dis table".into()));
    }
    let r = table.row(rel)?.to_vec();
    let v = if rel >= 0 { w.v_pos } else { w.v_neg };
    four_terms(tape, x_i, x_j, &r, v, w)
}

/// `g(x) = Σ_k Σ_{l≠k} sin(ω_k x)·cos(ω_l x)`, evaluated as the double sum.
pub fn g_func(x: f64, d: usize) -> f64 {
    let w = frequencies(d);
    let mut total = 0.0;
    for (k, &wk) in w.iter().enumerate() {
        let s = (wk * x).sin();
        for (l, &wl) in w.iter().enumerate() {
            if l != k {
                total += s * (wl * x).cos();
            }
        }
    }
    total
}

/// Near-zero slope of `g`: `d / (2((10⁸)^{1/d} − 1))`.
///
/// For large `d` this approaches `d² / (2 ln 10⁸)`, see [`gamma_d_approx`].
pub fn gamma_d(d: usize) -> f64 {
    let d = d as f64;
    d / (2.0 * (1e8f64.powf(1.0 / d) - 1.0))
}

pub fn gamma_d_approx(d: usize) -> f64 {
    let d = d as f64;
    d * d / (2.0 * 1e8f64.ln())
}

/// `Var(xᵀR_Δ) = (d/2)·σ_s + 2·σ_c·g(Δ)`.
pub fn analytic_var(sigma_s: f64, sigma_c: f64, delta: f64, d: usize) -> f64 {
    d as f64 / 2.0 * sigma_s + 2.0 * sigma_c * g_func(delta, d)
}
