use crate::numerics::Rng;

/// Nucleus sampling over a probability vector.
///
/// Tokens are ranked by probability (ties by id), the shortest prefix with
/// mass `≥ p` is kept and renormalised, and one token is drawn from it.
pub fn sample_top_p(probs: &[f64], p: f64, rng: &mut Rng) -> usize {
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    let total: f64 = probs.iter().sum();
    let target = p.clamp(f64::MIN_POSITIVE, 1.0) * total;
    let mut cum = 0.0;
    let mut cut = order.len();
    for (rank, &t) in order.iter().enumerate() {
        cum += probs[t];
        // tolerate round-off in the running sum
        if cum >= target * (1.0 - 1e-12) {
            cut = rank + 1;
            break;
        }
    }
    let nucleus = &order[..cut];
    let mass: f64 = nucleus.iter().map(|&t| probs[t]).sum();
    let mut draw = rng.uniform() * mass;
    for &t in nucleus {
        draw -= probs[t];
        if draw < 0.0 {
            return t;
        }
    }
    nucleus[nucleus.len() - 1]
}

/// Softmax of raw logits in `f64`.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|&x| (x - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}
