#![allow(dead_code)]

use lamemo::memory::{MemMode, OracleWeights};
use lamemo::model::{LmState, ModelConfig, Params};
use lamemo::numerics::{Rng, Tensor};
use lamemo::posenc::RpeScheme;

pub const MODES: [MemMode; 3] = [MemMode::None, MemMode::Xl, MemMode::Lamemo];
pub const SCHEMES: [RpeScheme; 2] = [RpeScheme::Xl, RpeScheme::Dis];

/// Parameters where every tensor, biases included, is drawn from `N(0, std)`
/// (gains from `N(1, std)`), so no term of the score vanishes.
pub fn dense_params(config: &ModelConfig, seed: u64, std: f64) -> Params<f64> {
    let mut rng = Rng::new(seed);
    let mut p = Params::<f64>::init(config, &mut rng).unwrap();
    for (name, t) in p.names.iter().zip(p.tensors.iter_mut()) {
        let centre = if name.ends_with("gain") { 1.0 } else { 0.0 };
        for x in t.data_mut() {
            *x = rng.normal(centre, std);
        }
    }
    p
}

pub fn random_tokens(rng: &mut Rng, n: usize, vocab: usize) -> Vec<usize> {
    (0..n).map(|_| rng.below(vocab)).collect()
}

/// First-layer inputs of every stream position: `√d · E[token]`.
pub fn layer0_inputs(p: &Params<f64>, tokens: &[usize]) -> Vec<Vec<f64>> {
    let e = p.get("embedding").unwrap();
    let s = (e.cols() as f64).sqrt();
    tokens.iter().map(|&t| e.row(t).iter().map(|x| x * s).collect()).collect()
}

pub fn oracle_weights(p: &Params<f64>, c: &ModelConfig) -> OracleWeights {
    let g = |n: &str| p.get(n).unwrap().data().to_vec();
    OracleWeights {
        d_model: c.d_model,
        n_heads: c.n_heads,
        d_head: c.d_head,
        scheme: c.rpe_scheme,
        w_q: g("layers.0.w_q"),
        w_ke: g("layers.0.w_ke"),
        w_v: g("layers.0.w_v"),
        w_kr: g("layers.0.w_kr"),
        u: g("u"),
        v_pos: g("v_pos"),
        v_neg: g("v_neg"),
    }
}

/// Independent re-derivation of one head's softmax attention from raw
/// weights, written directly from the four-term score definition with the
/// encoding of distance `Δ` evaluated as `sin/cos(10000^(−2k/d)·Δ)`.
pub fn brute_attention(
    p: &Params<f64>,
    c: &ModelConfig,
    inputs: &[Vec<f64>],
    query: usize,
    keys: std::ops::RangeInclusive<usize>,
) -> Vec<f64> {
    let d = c.d_model;
    let hd = c.n_heads * c.d_head;
    let w = |n: &str| p.get(n).unwrap().clone();
    let (wq, wk, wv, wr) = (w("layers.0.w_q"), w("layers.0.w_ke"), w("layers.0.w_v"), w("layers.0.w_kr"));
    let (u, vp, vn) = (w("u"), w("v_pos"), w("v_neg"));
    let mut out = vec![0.0; hd];
    for h in 0..c.n_heads {
        let col = |m: &Tensor<f64>, x: &[f64], k: usize| -> f64 {
            (0..d).map(|i| x[i] * m.get(i, h * c.d_head + k)).sum()
        };
        let mut logits = Vec::new();
        let mut vals = Vec::new();
        for j in keys.clone() {
            let delta = query as f64 - j as f64;
            let r_arg = match c.rpe_scheme {
                RpeScheme::Xl => delta,
                RpeScheme::Dis => delta.abs(),
            };
            let r: Vec<f64> = (0..d)
                .map(|i| {
                    let k = (i / 2 + 1) as f64;
                    let om = 10000f64.powf(-2.0 * k / d as f64);
                    if i % 2 == 0 {
                        (om * r_arg).sin()
                    } else {
                        (om * r_arg).cos()
                    }
                })
                .collect();
            let bias_v = if c.rpe_scheme == RpeScheme::Dis && delta < 0.0 { &vn } else { &vp };
            let mut a = 0.0;
            for k in 0..c.d_head {
                let q = col(&wq, &inputs[query], k);
                let kk = col(&wk, &inputs[j], k);
                let rk = col(&wr, &r, k);
                a += (q + u.get(h, k)) * kk + (q + bias_v.get(h, k)) * rk;
            }
            logits.push(a / (c.d_head as f64).sqrt());
            vals.push((0..c.d_head).map(|k| col(&wv, &inputs[j], k)).collect::<Vec<_>>());
        }
        let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let ws: Vec<f64> = logits.iter().map(|l| (l - mx).exp()).collect();
        let z: f64 = ws.iter().sum();
        for k in 0..c.d_head {
            out[h * c.d_head + k] = ws.iter().zip(&vals).map(|(w, v)| w * v[k]).sum::<f64>() / z;
        }
    }
    out
}

pub fn fresh_state(c: &ModelConfig) -> LmState<f64> {
    LmState::new(c)
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn sample_path() -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/sample.txt")
}

pub fn sample_corpus() -> lamemo::pipeline::Corpus {
    lamemo::pipeline::ingest(sample_path(), lamemo::pipeline::CorpusMode::Char).unwrap()
}

/// A char-level experiment small enough to train for a hundred steps in a test.
pub fn tiny_experiment(mode: MemMode, scheme: RpeScheme, steps: u64) -> lamemo::pipeline::ExperimentConfig {
    use lamemo::pipeline::{CorpusMode, DataConfig, ExperimentConfig, TrainConfig};
    let mut model = ModelConfig::toy(mode, scheme, 8, 8);
    model.vocab_size = 27;
    model.dropout = 0.1;
    model.precision = lamemo::numerics::Precision::F32;
    ExperimentConfig {
        model,
        train: TrainConfig {
            lr: 3e-3,
            steps,
            batch: 2,
            clip: 0.25,
            eval_interval: 25,
            eval_tokens: Some(64),
        },
        data: DataConfig {
            path: sample_path(),
            mode: CorpusMode::Char,
        },
        seed: 11,
    }
}

/// One interpolation computed in log space and naively, both at 32 bits,
/// plus a 64-bit log-space reference.
pub struct StabilityCase {
    pub log_alpha: f32,
    pub log_ctx: Vec<f32>,
    pub naive_alpha: f32,
    pub naive_ctx: Vec<f32>,
    pub ref_alpha: f64,
    pub ref_ctx: Vec<f64>,
}

/// Old and new logits drawn uniformly from `[-bound, bound]` and rounded to
/// 32 bits so every path sees the same inputs; values from `N(0, 1)`.
pub fn stability_case(seed: u64, bound: f64) -> StabilityCase {
    use lamemo::memory::MemorySlot;
    use lamemo::numerics::{softmax_row_into, Scalar};

    const D: usize = 6;
    let mut rng = Rng::new(seed);
    let mut draw = |n: usize| -> (Vec<f64>, Vec<Vec<f64>>) {
        let logits = (0..n).map(|_| ((2.0 * rng.uniform() - 1.0) * bound) as f32 as f64).collect();
        let values = (0..n).map(|_| (0..D).map(|_| rng.normal(0.0, 1.0)).collect()).collect();
        (logits, values)
    };
    let (old, old_v) = draw(40);
    let (new, new_v) = draw(25);
    let eps = 1e-4;

    fn log_path<T: Scalar>(logits: &[f64], values: &[Vec<f64>], d: usize) -> (Vec<T>, T) {
        let l: Vec<T> = logits.iter().map(|&x| T::of(x)).collect();
        let mut p = vec![T::zero(); l.len()];
        let lse = softmax_row_into(&l, &vec![true; l.len()], &mut p);
        let ctx = (0..d).map(|k| p.iter().zip(values).map(|(&w, v)| w * T::of(v[k])).sum()).collect();
        (ctx, lse)
    }
    fn interpolated<T: Scalar>(old: (Vec<T>, T), new: (Vec<T>, T), eps: f64) -> (T, Vec<T>) {
        let mut slot = MemorySlot {
            abs_pos: 0,
            leftmost_key_pos: 0,
            rightmost_key_pos: 0,
            h_in: Vec::new(),
            c_agg: old.0,
            log_s: vec![old.1],
        };
        let d = slot.c_agg.len();
        let alpha = slot.interpolate(0, &new.0, new.1, T::of(eps), d).unwrap();
        (alpha, slot.c_agg)
    }

    let (log_alpha, log_ctx) = interpolated::<f32>(log_path(&old, &old_v, D), log_path(&new, &new_v, D), eps);
    let (ref_alpha, ref_ctx) = interpolated::<f64>(log_path(&old, &old_v, D), log_path(&new, &new_v, D), eps);

    let naive = |logits: &[f64], values: &[Vec<f64>]| -> (f32, Vec<f32>) {
        let w: Vec<f32> = logits.iter().map(|&x| (x as f32).exp()).collect();
        let s: f32 = w.iter().sum();
        let ctx = (0..D).map(|k| w.iter().zip(values).map(|(&a, v)| a * v[k] as f32).sum::<f32>() / s).collect();
        (s, ctx)
    };
    let (s_old, c_old) = naive(&old, &old_v);
    let (s_new, c_new) = naive(&new, &new_v);
    let naive_alpha = s_old / (s_old + s_new + eps as f32);
    let naive_ctx = c_old.iter().zip(&c_new).map(|(a, b)| naive_alpha * a + (1.0 - naive_alpha) * b).collect();
    StabilityCase {
        log_alpha,
        log_ctx,
        naive_alpha,
        naive_ctx,
        ref_alpha,
        ref_ctx,
    }
}

/// `max |a − b| / max |b|`.
pub fn rel_inf(a: &[f32], b: &[f32]) -> f64 {
    let num = a.iter().zip(b).map(|(x, y)| (x - y).abs() as f64).fold(0.0, f64::max);
    let den = b.iter().map(|y| y.abs() as f64).fold(0.0, f64::max);
    num / den
}

/// Score-evaluation counters of one look-ahead model iteration once the
/// memory of length `mem_len` is full, at segment length `seg_len`.
pub fn full_memory_counters(mem_len: usize, seg_len: usize) -> lamemo::memory::Counters {
    use lamemo::model::{forward_segment, ForwardOptions};
    use lamemo::numerics::Tape;

    let mut c = ModelConfig::toy(MemMode::Lamemo, RpeScheme::Dis, seg_len, mem_len);
    c.n_layers = 1;
    let p = Params::<f64>::init(&c, &mut Rng::new(3)).unwrap();
    let mut rng = Rng::new(4);
    let mut state = LmState::new(&c);
    let segments = mem_len.div_ceil(seg_len) + 1;
    let mut last = Default::default();
    for _ in 0..segments {
        let tokens = random_tokens(&mut rng, seg_len, c.vocab_size);
        let mut tape = Tape::new();
        let bound = p.bind(&mut tape, false);
        last = forward_segment(&mut tape, &bound, &c, &mut state, &tokens, None, ForwardOptions::default())
            .unwrap()
            .counters;
    }
    last
}

/// Coefficient of determination of the least-squares line through `(x, y)`.
pub fn linear_r2(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    if syy == 0.0 {
        return 1.0;
    }
    sxy * sxy / (sxx * syy)
}

/// Sampled and analytic variance of `xᵀR_Δ` at one offset.
#[derive(Debug)]
pub struct VarianceRow {
    pub delta: f64,
    pub sampled: f64,
    pub std_error: f64,
    pub analytic: f64,
}

impl VarianceRow {
    pub fn within(&self, std_errors: f64) -> bool {
        (self.sampled - self.analytic).abs() < std_errors * self.std_error
    }
}

/// Covariance with `σ_s` on the diagonal and `σ_c` between the sine of one
/// frequency and the cosine of every other frequency, zero elsewhere.
fn structured_cov(d: usize, sigma_s: f64, sigma_c: f64) -> nalgebra::DMatrix<f64> {
    let mut cov = nalgebra::DMatrix::zeros(d, d);
    for i in 0..d {
        cov[(i, i)] = sigma_s;
    }
    for k in 0..d / 2 {
        for l in 0..d / 2 {
            if k != l {
                cov[(2 * k, 2 * l + 1)] = sigma_c;
                cov[(2 * l + 1, 2 * k)] = sigma_c;
            }
        }
    }
    cov
}

/// Monte-Carlo variance of `xᵀR_Δ` for `x ~ N(0, Σ)` at `d = 64`, with the
/// standard error taken from the sampled fourth moment.
pub fn monte_carlo_variance(sigma_s: f64, sigma_c: f64, deltas: &[f64], samples: usize, seed: u64) -> Vec<VarianceRow> {
    use lamemo::posenc::{analytic_var, sinusoid_row};
    const D: usize = 64;
    let cov = structured_cov(D, sigma_s, sigma_c);
    let l = cov.cholesky().expect("covariance is positive definite").l();
    // xᵀR = zᵀ(LᵀR) for x = Lz.
    let proj: Vec<Vec<f64>> = deltas
        .iter()
        .map(|&delta| {
            let r = nalgebra::DVector::from_vec(sinusoid_row(delta, D));
            (l.transpose() * r).iter().copied().collect()
        })
        .collect();

    let mut rng = Rng::new(seed);
    let mut m2 = vec![0.0; deltas.len()];
    let mut m4 = vec![0.0; deltas.len()];
    let mut z = vec![0.0; D];
    for _ in 0..samples {
        z.iter_mut().for_each(|x| *x = rng.standard_normal());
        for (j, a) in proj.iter().enumerate() {
            let y: f64 = z.iter().zip(a).map(|(p, q)| p * q).sum();
            m2[j] += y * y;
            m4[j] += y * y * y * y;
        }
    }
    let n = samples as f64;
    deltas
        .iter()
        .enumerate()
        .map(|(j, &delta)| {
            let sampled = m2[j] / n;
            VarianceRow {
                delta,
                sampled,
                std_error: ((m4[j] / n - sampled * sampled) / n).sqrt(),
                analytic: analytic_var(sigma_s, sigma_c, delta, D),
            }
        })
        .collect()
}
