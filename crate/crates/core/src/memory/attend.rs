//! Causal and look-ahead attention over projected queries, keys and values.
//!
//! Scores are `((q + u)·k + (q + v)·(R W_kr)) / √d_head`. The positional term is
//! gathered per admissible `(query, key)` pair, so a masked pair costs nothing.

use crate::error::{Error, Result};
use crate::numerics::{Scalar, Tape, Tensor, Var, MASKED};
use crate::posenc::{RpeScheme, RpeTable};

/// Score evaluations performed, counted once per admissible pair (not per head).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Counters {
    pub causal_scores: u64,
    pub lookahead_scores: u64,
}

impl Counters {
    pub fn add(&mut self, other: Counters) {
        self.causal_scores += other.causal_scores;
        self.lookahead_scores += other.lookahead_scores;
    }
}

/// Per-head biases and projected distance tables for one layer.
#[derive(Clone, Debug)]
pub struct ProjectedRpe {
    pub n_heads: usize,
    pub d_head: usize,
    pub max_dist: usize,
    u: Vec<Var>,
    v_fwd: Vec<Var>,
    v_bwd: Vec<Var>,
    rk_fwd: Vec<Var>,
    rk_bwd: Vec<Var>,
}

impl ProjectedRpe {
    /// Projects `table` through `w_kr` (`d × n_heads·d_head`) and slices
    /// the `n_heads × d_head` bias matrices per head.
    #[allow(clippy::too_many_arguments)]
    pub fn build<T: Scalar>(
        tape: &mut Tape<T>,
        table: &RpeTable<T>,
        w_kr: Var,
        u: Var,
        v_pos: Var,
        v_neg: Var,
        n_heads: usize,
        d_head: usize,
    ) -> Result<Self> {
        let fwd = tape.constant(table.forward().clone());
        let rk_all_fwd = tape.matmul(fwd, w_kr)?;
        let rk_all_bwd = match table.scheme {
            RpeScheme::Xl => {
                let bwd = tape.constant(table.backward().clone());
                tape.matmul(bwd, w_kr)?
            }
            RpeScheme::Dis => rk_all_fwd,
        };
        let mut out = Self {
            n_heads,
            d_head,
            max_dist: table.max_dist,
            u: Vec::new(),
            v_fwd: Vec::new(),
            v_bwd: Vec::new(),
            rk_fwd: Vec::new(),
            rk_bwd: Vec::new(),
        };
        for h in 0..n_heads {
            out.u.push(tape.slice_rows(u, h, 1)?);
            let vp = tape.slice_rows(v_pos, h, 1)?;
            out.v_fwd.push(vp);
            out.v_bwd.push(match table.scheme {
                RpeScheme::Xl => vp,
                RpeScheme::Dis => tape.slice_rows(v_neg, h, 1)?,
            });
            out.rk_fwd.push(tape.slice_cols(rk_all_fwd, h * d_head, d_head)?);
            out.rk_bwd.push(if table.scheme == RpeScheme::Dis {
                out.rk_fwd[h]
            } else {
                tape.slice_cols(rk_all_bwd, h * d_head, d_head)?
            });
        }
        Ok(out)
    }
}

/// Per-head results of one attention call.
#[derive(Clone, Debug)]
pub struct Attended {
    /// `rows × d_head` context per head.
    pub contexts: Vec<Var>,
    /// `[rows]` log softmax denominator per head.
    pub log_denoms: Vec<Var>,
    /// `rows × keys` attention weights per head.
    pub probs: Vec<Var>,
}

impl Attended {
    /// Heads side by side, `rows × n_heads·d_head`.
    pub fn concat<T: Scalar>(&self, tape: &mut Tape<T>) -> Result<Var> {
        tape.concat_cols(&self.contexts)
    }
}

enum Direction {
    Causal,
    Lookahead,
}

#[allow(clippy::too_many_arguments)]
fn attend<T: Scalar>(
    tape: &mut Tape<T>,
    q: Var,
    k: Var,
    v: Var,
    rpe: &ProjectedRpe,
    idx: Vec<u32>,
    mask: Vec<bool>,
    dir: Direction,
) -> Result<Attended> {
    let cols = tape.value(k).rows();
    let scale = T::one() / T::of(rpe.d_head as f64).sqrt();
    let allow_empty = matches!(dir, Direction::Lookahead);
    let mut out = Attended {
        contexts: Vec::with_capacity(rpe.n_heads),
        log_denoms: Vec::with_capacity(rpe.n_heads),
        probs: Vec::with_capacity(rpe.n_heads),
    };
    for h in 0..rpe.n_heads {
        let dh = rpe.d_head;
        let qh = tape.slice_cols(q, h * dh, dh)?;
        let kh = tape.slice_cols(k, h * dh, dh)?;
        let vh = tape.slice_cols(v, h * dh, dh)?;
        let (vb, rk) = match dir {
            Direction::Causal => (rpe.v_fwd[h], rpe.rk_fwd[h]),
            Direction::Lookahead => (rpe.v_bwd[h], rpe.rk_bwd[h]),
        };
        let qu = tape.add_row(qh, rpe.u[h])?;
        let content = tape.matmul_nt(qu, kh)?;
        let qv = tape.add_row(qh, vb)?;
        let position = tape.gather_dot(qv, rk, idx.clone(), cols)?;
        let raw = tape.add(content, position)?;
        let logits = tape.scale(raw, scale);
        let probs = tape.masked_softmax(logits, &mask, allow_empty)?;
        let lse = tape.masked_logsumexp(logits, &mask, allow_empty)?;
        out.contexts.push(tape.matmul(probs, vh)?);
        out.log_denoms.push(lse);
        out.probs.push(probs);
    }
    Ok(out)
}

fn distance(rel: u64, max_dist: usize) -> Result<u32> {
    if rel as usize > max_dist {
        return Err(Error::Range {
            rel: rel as i64,
            max_dist,
        });
    }
    Ok(rel as u32)
}

/// Attention of segment queries over `[memory; segment]` keys.
///
/// Query `i` attends exactly the keys with position `≤ q_pos[i]`. Memory
/// rows should arrive detached from anything earlier than this iteration.
#[allow(clippy::too_many_arguments)]
pub fn causal_attend<T: Scalar>(
    tape: &mut Tape<T>,
    q: Var,
    k: Var,
    v: Var,
    rpe: &ProjectedRpe,
    q_pos: &[u64],
    k_pos: &[u64],
    counters: &mut Counters,
) -> Result<Attended> {
    check_rows(tape, q, q_pos.len(), "causal_attend queries")?;
    check_rows(tape, k, k_pos.len(), "causal_attend keys")?;
    let cols = k_pos.len();
    let mut idx = vec![MASKED; q_pos.len() * cols];
    let mut mask = vec![false; q_pos.len() * cols];
    for (i, &qp) in q_pos.iter().enumerate() {
        for (j, &kp) in k_pos.iter().enumerate() {
            if kp <= qp {
                idx[i * cols + j] = distance(qp - kp, rpe.max_dist)?;
                mask[i * cols + j] = true;
                counters.causal_scores += 1;
            }
        }
    }
    attend(tape, q, k, v, rpe, idx, mask, Direction::Causal)
}

/// Attention of memory queries over newer keys.
///
/// Row `i` admits key `j` iff `k_pos[j] > after[i]` and `k_pos[j] ≤ bound`,
/// where `after[i]` is the newest position the slot has already seen.
/// A row with nothing admissible yields a zero context and `−∞`.
#[allow(clippy::too_many_arguments)]
pub fn lookahead_attend<T: Scalar>(
    tape: &mut Tape<T>,
    q: Var,
    k: Var,
    v: Var,
    rpe: &ProjectedRpe,
    q_pos: &[u64],
    after: &[u64],
    k_pos: &[u64],
    bound: u64,
    counters: &mut Counters,
) -> Result<Attended> {
    check_rows(tape, q, q_pos.len(), "lookahead_attend queries")?;
    check_rows(tape, k, k_pos.len(), "lookahead_attend keys")?;
    if after.len() != q_pos.len() {
        return Err(Error::dim("lookahead_attend", "one watermark per query required"));
    }
    let cols = k_pos.len();
    let mut idx = vec![MASKED; q_pos.len() * cols];
    let mut mask = vec![false; q_pos.len() * cols];
    for (i, (&qp, &seen)) in q_pos.iter().zip(after).enumerate() {
        for (j, &kp) in k_pos.iter().enumerate() {
            if kp > seen.max(qp) && kp <= bound {
                idx[i * cols + j] = distance(kp - qp, rpe.max_dist)?;
                mask[i * cols + j] = true;
                counters.lookahead_scores += 1;
            }
        }
    }
    attend(tape, q, k, v, rpe, idx, mask, Direction::Lookahead)
}

fn check_rows<T: Scalar>(tape: &Tape<T>, v: Var, n: usize, what: &'static str) -> Result<()> {
    if tape.shape(v).len() != 2 || tape.value(v).rows() != n {
        return Err(Error::dim(what, format!("{:?} for {n} positions", tape.shape(v))));
    }
    Ok(())
}

/// Stored aggregate of a set of slots for one head, as a constant matrix.
pub(crate) fn head_aggregate<T: Scalar>(
    slots: &[super::MemorySlot<T>],
    head: usize,
    d_head: usize,
) -> Result<(Tensor<T>, Vec<T>)> {
    let mut data = Vec::with_capacity(slots.len() * d_head);
    let mut log_s = Vec::with_capacity(slots.len());
    for s in slots {
        data.extend_from_slice(s.head_context(head, d_head));
        log_s.push(s.log_s[head]);
    }
    Ok((Tensor::matrix(slots.len(), d_head, data)?, log_s))
}
