mod common;

use common::monte_carlo_variance;
use lamemo::numerics::{grad_check, Rng, Tape, Tensor, Var};
use lamemo::posenc::{
    analytic_var, dis_rpe_score, g_func, gamma_d, gamma_d_approx, sinusoid_row, xl_rpe_score, RpeScheme, RpeTable,
    ScoreWeights,
};

const D: usize = 4;

fn random(rng: &mut Rng, shape: &[usize], std: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.normal(0.0, std)).collect()).unwrap()
}

/// `[x_i, x_j, w_q, w_ke, w_kr, u, v₊, v₋]`.
fn random_inputs(seed: u64) -> Vec<Tensor<f64>> {
    let mut rng = Rng::new(seed);
    vec![
        random(&mut rng, &[1, D], 1.0),
        random(&mut rng, &[1, D], 1.0),
        random(&mut rng, &[D, D], 0.5),
        random(&mut rng, &[D, D], 0.5),
        random(&mut rng, &[D, D], 0.5),
        random(&mut rng, &[D], 0.5),
        random(&mut rng, &[D], 0.5),
        random(&mut rng, &[D], 0.5),
    ]
}

fn weights(v: &[Var]) -> ScoreWeights {
    ScoreWeights {
        w_q: v[2],
        w_ke: v[3],
        w_kr: v[4],
        u: v[5],
        v_pos: v[6],
        v_neg: v[7],
    }
}

fn score(scheme: RpeScheme, inputs: &[Tensor<f64>], rel: i64) -> f64 {
    let table = RpeTable::<f64>::new(scheme, 8, D).unwrap();
    let mut tape = Tape::new();
    let v: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let s = match scheme {
        RpeScheme::Xl => xl_rpe_score(&mut tape, v[0], v[1], rel, &table, &weights(&v)),
        RpeScheme::Dis => dis_rpe_score(&mut tape, v[0], v[1], rel, &table, &weights(&v)),
    }
    .unwrap();
    tape.value(s).data()[0]
}

fn vec_mat(x: &[f64], w: &Tensor<f64>) -> Vec<f64> {
    (0..w.cols()).map(|c| (0..x.len()).map(|r| x[r] * w.data()[r * w.cols() + c]).sum()).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[test]
fn identity_weights_give_one() {
    let mut e1 = vec![0.0; D];
    e1[0] = 1.0;
    let mut eye = vec![0.0; D * D];
    for i in 0..D {
        eye[i * D + i] = 1.0;
    }
    let x = Tensor::matrix(1, D, e1).unwrap();
    let id = Tensor::matrix(D, D, eye).unwrap();
    let zero = Tensor::zeros(&[D]);
    let inputs = vec![x.clone(), x, id.clone(), id.clone(), id, zero.clone(), zero.clone(), zero];
    assert_eq!(score(RpeScheme::Xl, &inputs, 0), 1.0);

    let mut zeroed = inputs.clone();
    zeroed[0] = Tensor::zeros(&[1, D]);
    zeroed[1] = Tensor::zeros(&[1, D]);
    assert_eq!(score(RpeScheme::Xl, &zeroed, 3), 0.0);
}

#[test]
fn dis_is_sign_symmetric_when_biases_agree() {
    for seed in 0..5 {
        let mut inputs = random_inputs(seed);
        inputs[7] = inputs[6].clone();
        for delta in 1..=4 {
            let (p, m) = (score(RpeScheme::Dis, &inputs, delta), score(RpeScheme::Dis, &inputs, -delta));
            assert!((p - m).abs() < 1e-12, "Δ={delta}: {p} vs {m}");
            let (p, m) = (score(RpeScheme::Xl, &inputs, delta), score(RpeScheme::Xl, &inputs, -delta));
            assert!((p - m).abs() > 1e-6, "xl should see the sign at Δ={delta}");
        }
    }
}

#[test]
fn dis_with_zero_inputs_is_the_bias_term() {
    let mut inputs = random_inputs(9);
    inputs[0] = Tensor::zeros(&[1, D]);
    inputs[1] = Tensor::zeros(&[1, D]);
    let r = sinusoid_row(2.0, D);
    let rk = vec_mat(&r, &inputs[4]);
    assert!((score(RpeScheme::Dis, &inputs, -2) - dot(inputs[7].data(), &rk)).abs() < 1e-12);
    assert!((score(RpeScheme::Dis, &inputs, 2) - dot(inputs[6].data(), &rk)).abs() < 1e-12);
}

#[test]
fn dis_matches_hand_sum_at_minus_three() {
    let inputs = random_inputs(21);
    let q = vec_mat(inputs[0].data(), &inputs[2]);
    let k = vec_mat(inputs[1].data(), &inputs[3]);
    let rk = vec_mat(&sinusoid_row(3.0, D), &inputs[4]);
    let (u, v_neg) = (inputs[5].data(), inputs[7].data());
    let want = dot(&q, &k) + dot(u, &k) + dot(&q, &rk) + dot(v_neg, &rk);
    assert!((score(RpeScheme::Dis, &inputs, -3) - want).abs() < 1e-12);

    let mut r_neg = sinusoid_row(3.0, D);
    for (i, x) in r_neg.iter_mut().enumerate() {
        if i % 2 == 0 {
            *x = -*x;
        }
    }
    let rk = vec_mat(&r_neg, &inputs[4]);
    let v = inputs[6].data();
    let want = dot(&q, &k) + dot(u, &k) + dot(&q, &rk) + dot(v, &rk);
    assert!((score(RpeScheme::Xl, &inputs, -3) - want).abs() < 1e-12);
}

#[test]
fn distance_beyond_the_table_is_a_range_error() {
    let inputs = random_inputs(1);
    let table = RpeTable::<f64>::new(RpeScheme::Xl, 8, D).unwrap();
    let mut tape = Tape::new();
    let v: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let err = xl_rpe_score(&mut tape, v[0], v[1], -9, &table, &weights(&v)).unwrap_err();
    assert!(matches!(err, lamemo::Error::Range { rel: -9, max_dist: 8 }));
}

#[test]
fn both_scores_pass_grad_check() {
    for scheme in [RpeScheme::Xl, RpeScheme::Dis] {
        let table = RpeTable::<f64>::new(scheme, 8, D).unwrap();
        for (seed, rel) in [(3, 5), (4, -3), (5, 0)] {
            let report = grad_check(
                |tape, v| match scheme {
                    RpeScheme::Xl => xl_rpe_score(tape, v[0], v[1], rel, &table, &weights(v)),
                    RpeScheme::Dis => dis_rpe_score(tape, v[0], v[1], rel, &table, &weights(v)),
                },
                &random_inputs(seed),
                1e-5,
            )
            .unwrap();
            assert!(report.max_rel_error < 1e-6, "{scheme} rel={rel}: {report:?}");
        }
    }
}

#[test]
fn g_is_odd_and_vanishes_at_zero() {
    assert_eq!(g_func(0.0, 64), 0.0);
    let mut rng = Rng::new(100);
    for _ in 0..100 {
        let x = rng.normal(0.0, 20.0);
        assert!((g_func(-x, 64) + g_func(x, 64)).abs() < 1e-12);
    }
}

#[test]
fn g_slope_near_zero_tracks_gamma() {
    let slope = g_func(1e-3, 64) / 1e-3;
    let gamma = gamma_d(64);
    assert!((gamma - 95.9).abs() < 0.1, "{gamma}");
    assert!((slope - gamma).abs() / gamma < 0.05, "slope {slope} vs {gamma}");

    let approx = gamma_d_approx(64);
    assert!((approx - 111.2).abs() < 0.1);
    assert!((approx - gamma).abs() / gamma < 0.2);

    let gammas: Vec<f64> = [8, 16, 32, 64, 128].iter().map(|&d| gamma_d(d)).collect();
    assert!(gammas.windows(2).all(|w| w[0] < w[1]), "{gammas:?}");
}

#[test]
fn analytic_var_examples() {
    assert_eq!(analytic_var(1.3, 0.0, 2.7, 64), 32.0 * 1.3);
    assert_eq!(analytic_var(1.0, 0.4, 0.0, 64), 32.0);
    let (p, m) = (analytic_var(1.0, 0.1, 0.5, 64), analytic_var(1.0, 0.1, -0.5, 64));
    assert!(p > 32.0 && m < 32.0);
    assert!((p - m - 0.4 * g_func(0.5, 64).abs()).abs() < 1e-9);
}

#[test]
fn monte_carlo_variance_matches_analytic() {
    for row in monte_carlo_variance(1.0, 0.03, &[0.5, -0.5, 1.0, -1.0, 2.0, -2.0, 5.0, -5.0], 1_000_000, 2022) {
        assert!(row.within(3.0), "{row:?}");
    }
}
