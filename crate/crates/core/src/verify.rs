//! Self-contained property suites, runnable from the command line.

use std::time::Instant;

use crate::error::Result;
use crate::memory::{oracle_full_attention, MemMode, OracleWeights};
use crate::model::{eval_segment, forward_segment, Bound, ForwardOptions, LmState, ModelConfig, Params};
use crate::numerics::{grad_check, parallel_enabled, set_parallel, Precision, Rng, Tape, Tensor, Var, MASKED};
use crate::pipeline::{Corpus, CorpusMode, DataConfig, ExperimentConfig, TrainConfig, Trainer};
use crate::posenc::RpeScheme;
use crate::report::Table;

pub const CHECK_HEADER: &str = "suite,status,measure,threshold,seconds";

const MODES: [MemMode; 3] = [MemMode::None, MemMode::Xl, MemMode::Lamemo];
const SCHEMES: [RpeScheme; 2] = [RpeScheme::Xl, RpeScheme::Dis];

/// Result of one suite. `measure` is compared against `threshold` in the
/// suite's own sense (worst error below it, or failure count at most it).
#[derive(Clone, Debug, PartialEq)]
pub struct SuiteOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub measure: f64,
    pub threshold: f64,
    pub seconds: f64,
}

fn timed(name: &'static str, threshold: f64, run: impl FnOnce() -> Result<(f64, bool)>) -> SuiteOutcome {
    let start = Instant::now();
    let (measure, passed) = run().unwrap_or((f64::NAN, false));
    SuiteOutcome {
        name,
        passed,
        measure,
        threshold,
        seconds: start.elapsed().as_secs_f64(),
    }
}

/// Parameters with every entry random, biases included, so no score term vanishes.
fn dense_params(c: &ModelConfig, seed: u64, std: f64) -> Result<Params<f64>> {
    let mut rng = Rng::new(seed);
    let mut p = Params::<f64>::init(c, &mut rng)?;
    for (name, t) in p.names.iter().zip(p.tensors.iter_mut()) {
        let centre = if name.ends_with("gain") { 1.0 } else { 0.0 };
        for x in t.data_mut() {
            *x = rng.normal(centre, std);
        }
    }
    Ok(p)
}

fn tokens(rng: &mut Rng, n: usize, vocab: usize) -> Vec<usize> {
    (0..n).map(|_| rng.below(vocab)).collect()
}

fn first_layer_weights(p: &Params<f64>, c: &ModelConfig) -> OracleWeights {
    let g = |n: &str| p.get(n).expect("parameter exists").data().to_vec();
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

/// Worst gap between a first-layer slot aggregate and brute-force
/// attention over its key window, over four iterations.
fn oracle_gap(scheme: RpeScheme, n: usize, m: usize, seed: u64) -> Result<f64> {
    let mut c = ModelConfig::toy(MemMode::Lamemo, scheme, n, m);
    c.interp_eps = 0.0;
    let p = dense_params(&c, seed, 0.7)?;
    let stream = tokens(&mut Rng::new(seed + 100), 4 * n + 1, c.vocab_size);
    let emb = p.get("embedding").expect("embedding exists");
    let s = (c.d_model as f64).sqrt();
    let inputs: Vec<Vec<f64>> = stream.iter().map(|&t| emb.row(t).iter().map(|x| x * s).collect()).collect();
    let w = first_layer_weights(&p, &c);
    let mut state = LmState::new(&c);
    let mut worst = 0.0f64;
    for it in 0..4 {
        eval_segment(&p, &c, &mut state, &stream[it * n..(it + 1) * n], &stream[it * n + 1..(it + 1) * n + 1])?;
        let bound = state.pos as usize - 1;
        for slot in &state.layers[0].slots {
            let window = (slot.leftmost_key_pos as usize, slot.rightmost_key_pos as usize);
            let want = oracle_full_attention(&inputs, slot.abs_pos as usize, window, bound, &w)?;
            for (a, b) in slot.c_agg.iter().zip(&want) {
                worst = worst.max((a - b).abs());
            }
        }
    }
    Ok(worst)
}

/// First-layer memory aggregates against brute-force full attention.
pub fn oracle_suite() -> SuiteOutcome {
    let tol = 1e-10;
    timed("oracle", tol, || {
        let mut worst = 0.0f64;
        for scheme in SCHEMES {
            for n in [1, 2, 3] {
                for m in [2, 4] {
                    worst = worst.max(oracle_gap(scheme, n, m, 17 + 7 * n as u64 + m as u64)?);
                }
            }
        }
        Ok((worst, worst < tol))
    })
}

fn logit_bits(p: &Params<f64>, c: &ModelConfig, stream: &[usize]) -> Result<Vec<Vec<u64>>> {
    let n = c.seg_len;
    let mut state = LmState::new(c);
    let mut rows = Vec::new();
    for it in 0..(stream.len() - 1) / n {
        let (logits, _) = eval_segment(p, c, &mut state, &stream[it * n..(it + 1) * n], &stream[it * n + 1..(it + 1) * n + 1])?;
        rows.extend((0..n).map(|i| logits.row(i).iter().map(|x| x.to_bits()).collect()));
    }
    Ok(rows)
}

/// Token perturbations never change earlier logits. Runs single-threaded;
/// the measure is the number of leaking trials.
pub fn leakage_suite(trials: usize) -> SuiteOutcome {
    timed("leakage", 0.0, || {
        let was = parallel_enabled();
        set_parallel(false);
        let mut rng = Rng::new(2024);
        let pairs = MODES.len() * SCHEMES.len();
        let per_pair = trials.div_ceil(pairs);
        let mut leaks = 0usize;
        let result = (|| -> Result<()> {
            for mode in MODES {
                for scheme in SCHEMES {
                    let c = ModelConfig::toy(mode, scheme, 3, 4);
                    let p = dense_params(&c, 77, 0.5)?;
                    for _ in 0..per_pair {
                        let stream = tokens(&mut rng, 13, c.vocab_size);
                        let at = rng.below(12);
                        let mut other = stream.clone();
                        other[at] = (other[at] + 1 + rng.below(c.vocab_size - 1)) % c.vocab_size;
                        let (a, b) = (logit_bits(&p, &c, &stream)?, logit_bits(&p, &c, &other)?);
                        if a[..at] != b[..at] {
                            leaks += 1;
                        }
                    }
                }
            }
            Ok(())
        })();
        set_parallel(was);
        result?;
        Ok((leaks as f64, leaks == 0))
    })
}

fn model_grad_error(mode: MemMode, scheme: RpeScheme, seed: u64) -> Result<f64> {
    let c = ModelConfig::toy(mode, scheme, 3, 3);
    let p = dense_params(&c, seed, 0.4)?;
    let stream = tokens(&mut Rng::new(seed ^ 0xabc), 10, c.vocab_size);
    let mut state = LmState::new(&c);
    for it in 0..2 {
        eval_segment(&p, &c, &mut state, &stream[it * 3..it * 3 + 3], &stream[it * 3 + 1..it * 3 + 4])?;
    }
    let report = grad_check(
        |tape, vars| {
            let bound = Bound::from_vars(vars.to_vec());
            let mut st = state.clone();
            let out = forward_segment(tape, &bound, &c, &mut st, &stream[6..9], Some(&stream[7..10]), ForwardOptions::default())?;
            Ok(out.loss.expect("targets given"))
        },
        &p.tensors,
        1e-5,
    )?;
    Ok(report.max_rel_error)
}

fn random(rng: &mut Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.normal(0.0, 1.0)).collect()).expect("shape matches data")
}

fn weighted(tape: &mut Tape<f64>, y: Var, seed: u64) -> Result<Var> {
    let w = random(&mut Rng::new(seed), tape.shape(y));
    let w = tape.constant(w);
    let p = tape.mul(y, w)?;
    Ok(tape.sum(p))
}

type Objective = dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var>;

fn elementary_grad_error() -> Result<f64> {
    let mut rng = Rng::new(9);
    let (m, k, n) = (3, 4, 2);
    let a = random(&mut rng, &[m, k]);
    let b = random(&mut rng, &[k, n]);
    let table = random(&mut rng, &[4, k]);
    let gain = random(&mut rng, &[k]);
    let bias = random(&mut rng, &[k]);
    let mask: Vec<bool> = (0..m * k).map(|i| i % k == 0 || rng.bernoulli(0.5)).collect();
    let idx: Vec<u32> = (0..m * n).map(|i| if i % 3 == 1 { MASKED } else { rng.below(4) as u32 }).collect();
    let c_old = random(&mut rng, &[m, k]);
    let ls_old: Vec<f64> = (0..m).map(|_| rng.normal(0.0, 1.0)).collect();
    let ls_new = random(&mut rng, &[m]);
    let targets = [1, 0, 3];
    let checks: Vec<(Vec<Tensor<f64>>, Box<Objective>)> = vec![
        (vec![a.clone(), b.clone()], Box::new(|t, v| { let y = t.matmul(v[0], v[1])?; weighted(t, y, 1) })),
        (vec![a.clone(), gain, bias], Box::new(|t, v| { let y = t.layer_norm(v[0], v[1], v[2])?; weighted(t, y, 2) })),
        (vec![a.clone()], Box::new(move |t, v| { let y = t.masked_softmax(v[0], &mask, false)?; weighted(t, y, 3) })),
        (vec![a.clone(), table], Box::new(move |t, v| { let y = t.gather_dot(v[0], v[1], idx.clone(), n)?; weighted(t, y, 4) })),
        (vec![a.clone()], Box::new(move |t, v| t.cross_entropy(v[0], &targets))),
        (vec![a, ls_new], Box::new(move |t, v| {
            let (y, _) = t.interpolate(&c_old, &ls_old, v[0], v[1], 1e-4)?;
            weighted(t, y, 5)
        })),
    ];
    let mut worst = 0.0f64;
    for (inputs, f) in &checks {
        worst = worst.max(grad_check(|t, v| f(t, v), inputs, 1e-5)?.max_rel_error);
    }
    Ok(worst)
}

/// Reverse-mode gradients of the full model loss against central differences.
pub fn gradient_suite() -> SuiteOutcome {
    let tol = 1e-4;
    timed("gradients", tol, || {
        let mut worst = 0.0f64;
        for (i, mode) in MODES.iter().enumerate() {
            for (j, scheme) in SCHEMES.iter().enumerate() {
                worst = worst.max(model_grad_error(*mode, *scheme, 40 + (i * 2 + j) as u64)?);
            }
        }
        Ok((worst, worst < tol))
    })
}

/// Elementary tape operations against central differences.
pub fn elementary_suite() -> SuiteOutcome {
    let tol = 1e-6;
    timed("elementary_ops", tol, || {
        let worst = elementary_grad_error()?;
        Ok((worst, worst < tol))
    })
}

fn tiny_run(corpus_mode: CorpusMode, vocab: usize, steps: u64) -> ExperimentConfig {
    let mut model = ModelConfig::toy(MemMode::Lamemo, RpeScheme::Dis, 8, 8);
    model.vocab_size = vocab;
    model.dropout = 0.1;
    model.precision = Precision::F32;
    ExperimentConfig {
        model,
        train: TrainConfig {
            lr: 3e-3,
            steps,
            batch: 2,
            clip: 0.25,
            eval_interval: 10,
            eval_tokens: Some(64),
        },
        data: DataConfig {
            path: Default::default(),
            mode: corpus_mode,
        },
        seed: 11,
    }
}

/// Identical seeds give identical logs, a split run resumes exactly, and
/// checkpoints round-trip byte for byte. The measure is the number of
/// mismatches.
pub fn pipeline_suite(corpus: &Corpus) -> SuiteOutcome {
    timed("pipeline", 0.0, || {
        let exp = tiny_run(corpus.mode, corpus.vocab_size(), 20);
        let mut failures = 0;

        let run = |stop_at: u64| -> Result<(Vec<crate::pipeline::MetricRow>, Vec<u8>)> {
            let mut t = Trainer::<f32>::new(&exp)?;
            let mut log = Vec::new();
            t.run_until(corpus, stop_at, &mut log)?;
            let bytes = t.checkpoint().to_bytes();
            let mut resumed = Trainer::from_checkpoint(crate::pipeline::Checkpoint::<f32>::from_bytes(&bytes)?)?;
            resumed.run_until(corpus, exp.train.steps, &mut log)?;
            Ok((log, resumed.checkpoint().to_bytes()))
        };
        let (a, ck_a) = run(exp.train.steps)?;
        let (b, ck_b) = run(exp.train.steps)?;
        let (c, ck_c) = run(exp.train.steps / 2)?;
        failures += usize::from(a != b) + usize::from(ck_a != ck_b);
        failures += usize::from(a != c) + usize::from(ck_a != ck_c);
        let reread = crate::pipeline::Checkpoint::<f32>::from_bytes(&ck_a)?.to_bytes();
        failures += usize::from(reread != ck_a);
        Ok((failures as f64, failures == 0))
    })
}

/// Every suite; the pipeline suite only when a corpus is supplied.
pub fn run_all(corpus: Option<&Corpus>) -> Vec<SuiteOutcome> {
    let mut out = vec![oracle_suite(), leakage_suite(200), gradient_suite(), elementary_suite()];
    if let Some(c) = corpus {
        out.push(pipeline_suite(c));
    }
    out
}

pub fn check_table(outcomes: &[SuiteOutcome]) -> Table {
    Table::new(
        CHECK_HEADER,
        outcomes
            .iter()
            .map(|o| {
                let status = if o.passed { "pass" } else { "fail" };
                format!("{},{status},{:e},{:e},{:.3}", o.name, o.measure, o.threshold, o.seconds)
            })
            .collect(),
    )
}
