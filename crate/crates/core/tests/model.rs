mod common;

use common::{dense_params, random_tokens, MODES, SCHEMES};
use lamemo::memory::MemMode;
use lamemo::model::{
    embed, eval_segment, layer_transform, sample_top_p, softmax, Bound, LayerVars, LmState, LnVariant, ModelConfig,
    Params,
};
use lamemo::numerics::{grad_check, Rng, Tape, Tensor, Var, LAYER_NORM_EPS};
use lamemo::posenc::RpeScheme;
use lamemo::Error;

fn random(rng: &mut Rng, r: usize, c: usize) -> Tensor<f64> {
    Tensor::matrix(r, c, (0..r * c).map(|_| rng.normal(0.0, 1.0)).collect()).unwrap()
}

#[test]
fn embedding_rows_and_gradient() {
    let d = 4;
    let mut eye = vec![0.0; d * d];
    for i in 0..d {
        eye[i * d + i] = 1.0;
    }
    let tokens = [2, 0, 2, 3, 2];
    let mut tape = Tape::new();
    let table = tape.leaf(Tensor::matrix(d, d, eye).unwrap());
    let e = embed(&mut tape, table, &tokens).unwrap();
    let out = tape.value(e).clone();
    for (r, &t) in tokens.iter().enumerate() {
        for c in 0..d {
            assert_eq!(out.row(r)[c], if c == t { 2.0 } else { 0.0 });
        }
    }
    assert_eq!(out.row(0), out.row(2));

    let s = tape.sum(e);
    let g = tape.backward(s).unwrap();
    let grad = g.get(table).unwrap();
    for id in 0..d {
        let count = tokens.iter().filter(|&&t| t == id).count() as f64;
        assert!(grad.row(id).iter().all(|&x| x == count * 2.0));
    }

    let report = grad_check(
        |tape, v| {
            let e = embed(tape, v[0], &tokens)?;
            Ok(tape.sum(e))
        },
        &[random(&mut Rng::new(1), d, d)],
        1e-5,
    )
    .unwrap();
    assert!(report.max_rel_error < 1e-6);

    let mut tape = Tape::<f64>::new();
    let table = tape.leaf(Tensor::zeros(&[d, d]));
    assert!(matches!(embed(&mut tape, table, &[4]), Err(Error::Vocabulary { id: 4, vocab: 4 })));
}

/// `[x, ln_a.gain, ln_a.bias, ff1.w, ff1.b, ff2.w, ff2.b, ln_b.gain, ln_b.bias]`.
fn transform_inputs(seed: u64, rows: usize, d: usize, ff: usize) -> Vec<Tensor<f64>> {
    let mut rng = Rng::new(seed);
    let mut vecs = |n: usize, mean: f64| {
        Tensor::new(vec![n], (0..n).map(|_| rng.normal(mean, 0.3)).collect()).unwrap()
    };
    let (g_a, b_a, b1, b2, g_b, b_b) = (vecs(d, 1.0), vecs(d, 0.0), vecs(ff, 0.0), vecs(d, 0.0), vecs(d, 1.0), vecs(d, 0.0));
    let mut rng = Rng::new(seed + 1000);
    vec![
        random(&mut rng, rows, d),
        g_a,
        b_a,
        random(&mut rng, d, ff),
        b1,
        random(&mut rng, ff, d),
        b2,
        g_b,
        b_b,
    ]
}

fn layer_vars(v: &[Var]) -> LayerVars {
    let attn = lamemo::memory::AttnWeights {
        w_q: v[0],
        w_ke: v[0],
        w_v: v[0],
    };
    LayerVars {
        attn,
        w_kr: v[0],
        w_o: v[0],
        ln_a: (v[1], v[2]),
        ff1: (v[3], v[4]),
        ff2: (v[5], v[6]),
        ln_b: (v[7], v[8]),
    }
}

fn transform(inputs: &[Tensor<f64>]) -> Tensor<f64> {
    let mut tape = Tape::new();
    let v: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let y = layer_transform(&mut tape, v[0], &layer_vars(&v), LnVariant::Eq3, 0.0, None).unwrap();
    tape.value(y).clone()
}

fn hand_ln(x: &[f64], gain: &[f64], bias: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
    let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
    x.iter().zip(gain).zip(bias).map(|((a, g), b)| (a - mean) * inv * g + b).collect()
}

#[test]
fn zero_ffn_reduces_to_double_norm() {
    let mut inputs = transform_inputs(5, 3, 6, 10);
    for i in 3..7 {
        inputs[i] = Tensor::zeros(inputs[i].shape());
    }
    let y = transform(&inputs);
    for r in 0..3 {
        let inner = hand_ln(inputs[0].row(r), inputs[1].data(), inputs[2].data());
        let want = hand_ln(&inner, inputs[7].data(), inputs[8].data());
        for (a, b) in y.row(r).iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn transform_passes_grad_check() {
    for seed in 0..3 {
        let report = grad_check(
            |tape, v| {
                let y = layer_transform(tape, v[0], &layer_vars(v), LnVariant::Eq3, 0.0, None)?;
                let w = tape.constant(random(&mut Rng::new(77), 3, 6));
                let p = tape.mul(y, w)?;
                Ok(tape.sum(p))
            },
            &transform_inputs(seed, 3, 6, 10),
            1e-5,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-6, "{report:?}");
    }
}

#[test]
fn transform_is_row_permutation_equivariant() {
    let inputs = transform_inputs(8, 4, 6, 10);
    let perm = [2, 0, 3, 1];
    let y = transform(&inputs);
    let mut permuted = inputs.clone();
    let rows: Vec<f64> = perm.iter().flat_map(|&r| inputs[0].row(r).to_vec()).collect();
    permuted[0] = Tensor::matrix(4, 6, rows).unwrap();
    let yp = transform(&permuted);
    for (i, &r) in perm.iter().enumerate() {
        assert_eq!(yp.row(i), y.row(r));
    }
}

fn stream_logits(p: &Params<f64>, c: &ModelConfig, tokens: &[usize]) -> Vec<Vec<f64>> {
    let mut state = LmState::new(c);
    tokens
        .chunks(c.seg_len)
        .zip(tokens[1..].chunks(c.seg_len))
        .filter(|(x, y)| x.len() == y.len())
        .map(|(x, y)| eval_segment(p, c, &mut state, x, y).unwrap().0.data().to_vec())
        .collect()
}

#[test]
fn zero_memory_degenerates_to_no_memory() {
    for scheme in SCHEMES {
        let none = ModelConfig::toy(MemMode::None, scheme, 3, 0);
        let p = dense_params(&none, 12, 0.4);
        let tokens = random_tokens(&mut Rng::new(13), 13, none.vocab_size);
        let base = stream_logits(&p, &none, &tokens);
        for mode in [MemMode::Xl, MemMode::Lamemo] {
            let c = ModelConfig::toy(mode, scheme, 3, 0);
            assert_eq!(stream_logits(&p, &c, &tokens), base, "{mode} {scheme}");
        }
    }
}

#[test]
fn single_token_segments_without_memory_see_one_token() {
    let c = ModelConfig::toy(MemMode::None, RpeScheme::Dis, 1, 0);
    let p = dense_params(&c, 14, 0.4);
    let logits = stream_logits(&p, &c, &[3, 5, 3, 7, 3, 1]);
    assert_eq!(logits[0], logits[2]);
    assert_eq!(logits[0], logits[4]);
    assert_ne!(logits[0], logits[1]);
}

#[test]
fn uniform_logits_cost_ln_two() {
    let mut c = ModelConfig::toy(MemMode::Lamemo, RpeScheme::Dis, 4, 4);
    c.vocab_size = 2;
    let mut p = Params::<f64>::init(&c, &mut Rng::new(1)).unwrap();
    *p.get_mut("embedding").unwrap() = Tensor::zeros(&[2, c.d_model]);
    let mut state = LmState::new(&c);
    for _ in 0..2 {
        let (logits, nll) = eval_segment(&p, &c, &mut state, &[0, 1, 1, 0], &[1, 1, 0, 0]).unwrap();
        assert!(logits.data().iter().all(|&x| x == 0.0));
        assert!((nll / 4.0 - 2f64.ln()).abs() < 1e-12);
    }
}

#[test]
fn vocabulary_softmax_normalises() {
    for mode in MODES {
        let c = ModelConfig::toy(mode, RpeScheme::Dis, 4, 4);
        let p = dense_params(&c, 15, 0.5);
        let tokens = random_tokens(&mut Rng::new(16), 13, c.vocab_size);
        for seg in stream_logits(&p, &c, &tokens) {
            for row in seg.chunks(c.vocab_size) {
                assert!((softmax(row).iter().sum::<f64>() - 1.0).abs() < 1e-6);
            }
        }
    }
}

#[test]
fn bound_parameters_follow_storage_order() {
    let c = ModelConfig::toy(MemMode::Lamemo, RpeScheme::Xl, 2, 2);
    let p = Params::<f64>::init(&c, &mut Rng::new(0)).unwrap();
    let mut tape = Tape::new();
    let b: Bound = p.bind(&mut tape, true);
    assert_eq!(b.all.len(), p.tensors.len());
    assert_eq!(tape.value(b.embedding), p.get("embedding").unwrap());
    assert_eq!(tape.value(b.layers[1].ff2.0), p.get("layers.1.ff2.w").unwrap());
}

#[test]
fn full_nucleus_matches_the_distribution() {
    let probs = [0.5, 0.3, 0.15, 0.05];
    let mut rng = Rng::new(17);
    let draws = 40_000;
    let mut hits = [0usize; 4];
    for _ in 0..draws {
        hits[sample_top_p(&probs, 1.0, &mut rng)] += 1;
    }
    for (h, p) in hits.iter().zip(probs) {
        let freq = *h as f64 / draws as f64;
        assert!((freq - p).abs() < 4.0 * (p * (1.0 - p) / draws as f64).sqrt() + 1e-3);
    }

    let state = rng.state();
    let a: Vec<usize> = (0..20).map(|_| sample_top_p(&probs, 0.95, &mut rng)).collect();
    let mut again = Rng::from_state(&state);
    let b: Vec<usize> = (0..20).map(|_| sample_top_p(&probs, 0.95, &mut again)).collect();
    assert_eq!(a, b);
}
