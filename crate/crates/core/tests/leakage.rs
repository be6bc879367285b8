mod common;

use common::*;
use lamemo::model::{eval_segment, LmState, ModelConfig};
use lamemo::numerics::Rng;

fn stream_logits(p: &lamemo::model::Params<f64>, c: &ModelConfig, stream: &[usize]) -> Vec<Vec<u64>> {
    let n = c.seg_len;
    let mut state: LmState<f64> = LmState::new(c);
    let mut rows = Vec::new();
    let segs = (stream.len() - 1) / n;
    for it in 0..segs {
        let (logits, _) = eval_segment(p, c, &mut state, &stream[it * n..(it + 1) * n], &stream[it * n + 1..(it + 1) * n + 1]).unwrap();
        for i in 0..n {
            rows.push(logits.row(i).iter().map(|x| x.to_bits()).collect());
        }
    }
    rows
}

#[test]
fn earlier_predictions_ignore_later_tokens() {
    let mut rng = Rng::new(2024);
    let mut trials = 0;
    for mode in MODES {
        for scheme in SCHEMES {
            let c = ModelConfig::toy(mode, scheme, 3, 4);
            let p = dense_params(&c, 77, 0.5);
            for _ in 0..34 {
                let stream = random_tokens(&mut rng, 4 * 3 + 1, c.vocab_size);
                let at = rng.below(12);
                let mut other = stream.clone();
                other[at] = (other[at] + 1 + rng.below(c.vocab_size - 1)) % c.vocab_size;
                let a = stream_logits(&p, &c, &stream);
                let b = stream_logits(&p, &c, &other);
                assert_eq!(a[..at], b[..at], "{mode}/{scheme} leak before {at}");
                assert_ne!(a[at], b[at]);
                trials += 1;
            }
        }
    }
    assert!(trials >= 200);
}
