use crate::error::{Error, Result};
use crate::memory::MemMode;
use crate::model::{forward_segment, ForwardOptions, LmState, ModelConfig, Params};
use crate::numerics::{Scalar, Tape};
use crate::posenc::g_func;

pub const PROFILE_BUCKETS: usize = 20;
pub const PROFILE_SPAN: f64 = 100.0;

/// One distance bucket of the attention-utilisation profile.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AttnBucket {
    pub bucket_start: f64,
    pub bucket_end: f64,
    /// `ln` of the mean, over tokens, of the largest weight in the bucket.
    pub mean_log_max_weight: f64,
}

/// Streams `split` through the model, handing each segment's record to
/// `visit` until it returns `false` or the split runs out.
fn sweep<T: Scalar>(
    params: &Params<T>,
    config: &ModelConfig,
    split: &[usize],
    mut visit: impl FnMut(&crate::model::ForwardRecord<T>) -> Result<bool>,
) -> Result<()> {
    let n = config.seg_len;
    let mut state = LmState::<T>::new(config);
    let mut start = 0;
    while start + n < split.len() {
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape, false);
        let out = forward_segment(
            &mut tape,
            &bound,
            config,
            &mut state,
            &split[start..start + n],
            None,
            ForwardOptions {
                dropout_rng: None,
                record: true,
            },
        )?;
        start += n;
        if !visit(&out.record.expect("recording requested"))? {
            break;
        }
    }
    Ok(())
}

/// Largest final-layer attention weight per distance bucket, averaged over
/// tokens and heads.
///
/// Distances from each query are rescaled from its own context length to
/// `[0, 100)` and cut into 20 buckets of width 5; bucket 0 holds the nearest
/// keys. Tokens are collected only once the memory has filled, until
/// `tokens` queries have been seen.
pub fn attn_profile<T: Scalar>(
    params: &Params<T>,
    config: &ModelConfig,
    split: &[usize],
    tokens: usize,
) -> Result<Vec<AttnBucket>> {
    let m = config.effective_mem_len();
    let mut sums = [0.0f64; PROFILE_BUCKETS];
    let mut counts = [0u64; PROFILE_BUCKETS];
    let mut seen = 0usize;
    sweep(params, config, split, |rec| {
        if rec.key_pos.len() < m + config.seg_len {
            return Ok(true);
        }
        for probs in &rec.top_probs {
            for (i, &qp) in rec.seg_pos.iter().enumerate() {
                let row = probs.row(i);
                let context = rec.key_pos.iter().filter(|&&k| k <= qp).count() as f64;
                let mut best = [f64::NEG_INFINITY; PROFILE_BUCKETS];
                for (&kp, &w) in rec.key_pos.iter().zip(row) {
                    if kp > qp {
                        continue;
                    }
                    let scaled = (qp - kp) as f64 * PROFILE_SPAN / context;
                    let b = ((scaled / (PROFILE_SPAN / PROFILE_BUCKETS as f64)) as usize).min(PROFILE_BUCKETS - 1);
                    best[b] = best[b].max(w.as_f64());
                }
                for b in 0..PROFILE_BUCKETS {
                    if best[b].is_finite() {
                        sums[b] += best[b];
                        counts[b] += 1;
                    }
                }
            }
        }
        seen += rec.seg_pos.len();
        Ok(seen < tokens)
    })?;
    if seen < tokens {
        return Err(Error::Analysis(format!(
            "only {seen} tokens after the memory filled, {tokens} requested"
        )));
    }
    let width = PROFILE_SPAN / PROFILE_BUCKETS as f64;
    (0..PROFILE_BUCKETS)
        .map(|b| {
            if counts[b] == 0 {
                return Err(Error::Analysis(format!("bucket {b} received no keys; context too short")));
            }
            Ok(AttnBucket {
                bucket_start: b as f64 * width,
                bucket_end: (b + 1) as f64 * width,
                mean_log_max_weight: (sums[b] / counts[b] as f64).ln(),
            })
        })
        .collect()
}

/// Mean memorising coefficient at one (layer, memory index).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AlphaPoint {
    pub layer: usize,
    /// 0 is the oldest slot.
    pub mem_index: usize,
    pub mean_alpha: f64,
    pub min_alpha: f64,
    pub max_alpha: f64,
    pub samples: u64,
}

/// α of every interpolation over the first `n_segments` segments of `split`,
/// averaged over heads and segments.
pub fn alpha_profile<T: Scalar>(
    params: &Params<T>,
    config: &ModelConfig,
    split: &[usize],
    n_segments: usize,
) -> Result<Vec<AlphaPoint>> {
    if config.mem_mode != MemMode::Lamemo {
        return Err(Error::Analysis(format!(
            "memorising coefficients exist only with look-ahead memory, not `{}`",
            config.mem_mode
        )));
    }
    let mut acc: Vec<Vec<(f64, f64, f64, u64)>> = vec![Vec::new(); config.n_layers];
    let mut done = 0;
    let mut state_err = None;
    let mut visit = |rec: &crate::model::ForwardRecord<T>| -> Result<bool> {
        for (l, heads) in rec.alphas.iter().enumerate() {
            for per_slot in heads {
                for (k, &a) in per_slot.iter().enumerate() {
                    let a = a.as_f64();
                    if !(a > 0.0 && a <= 1.0) {
                        state_err = Some(Error::Analysis(format!("α = {a} outside (0, 1] at layer {l}")));
                    }
                    if acc[l].len() <= k {
                        acc[l].resize(k + 1, (0.0, f64::INFINITY, f64::NEG_INFINITY, 0));
                    }
                    let e = &mut acc[l][k];
                    e.0 += a;
                    e.1 = e.1.min(a);
                    e.2 = e.2.max(a);
                    e.3 += 1;
                }
            }
        }
        done += 1;
        Ok(done < n_segments)
    };
    if n_segments > 0 {
        sweep(params, config, split, &mut visit)?;
    }
    if let Some(e) = state_err {
        return Err(e);
    }
    if done < n_segments {
        return Err(Error::Analysis(format!("split holds {done} segments, {n_segments} requested")));
    }
    Ok(acc
        .iter()
        .enumerate()
        .flat_map(|(layer, slots)| {
            slots.iter().enumerate().map(move |(mem_index, &(s, lo, hi, c))| AlphaPoint {
                layer,
                mem_index,
                mean_alpha: s / c as f64,
                min_alpha: lo,
                max_alpha: hi,
                samples: c,
            })
        })
        .collect())
}

/// `(x, g(x))` on a uniform grid over `[lo, hi]`.
///
/// Grid points are `c + r·t` with `t = (2i − (n−1))/(n−1)`, so a range
/// symmetric about zero yields exactly negated abscissae.
pub fn export_g_curve(d: usize, lo: f64, hi: f64, n_points: usize) -> Result<Vec<(f64, f64)>> {
    if n_points < 2 {
        return Err(Error::Config("a curve needs at least two points".into()));
    }
    if d == 0 || !d.is_multiple_of(2) {
        return Err(Error::Config(format!("width {d} must be even and positive")));
    }
    if !(lo < hi) {
        return Err(Error::Config("range must satisfy lo < hi".into()));
    }
    let c = 0.5 * (lo + hi);
    let r = 0.5 * (hi - lo);
    let den = (n_points - 1) as f64;
    Ok((0..n_points)
        .map(|i| {
            let t = (2 * i as i64 - (n_points as i64 - 1)) as f64 / den;
            let x = c + r * t;
            (x, g_func(x, d))
        })
        .collect())
}
