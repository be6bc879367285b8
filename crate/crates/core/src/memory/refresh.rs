use super::attend::{causal_attend, head_aggregate, lookahead_attend, Attended, Counters, ProjectedRpe};
use super::{LayerMemory, MemMode, MemorySlot};
use crate::error::{Error, Result};
use crate::numerics::{logaddexp, Scalar, Tape, Var};

/// Query, key and value projections of one layer, `d × n_heads·d_head` each.
#[derive(Clone, Copy, Debug)]
pub struct AttnWeights {
    pub w_q: Var,
    pub w_ke: Var,
    pub w_v: Var,
}

/// What one layer's attention step hands back to the model.
#[derive(Clone, Debug)]
pub struct Refreshed<T> {
    /// Causal attention of the segment.
    pub seg: Attended,
    /// `N × n_heads·d_head`.
    pub seg_context: Var,
    /// Interpolated memory contexts, `M × n_heads·d_head` (lamemo only).
    pub mem_context: Option<Var>,
    /// α per head per slot, oldest slot first (lamemo only).
    pub alphas: Vec<Vec<T>>,
    /// Slots to append once the whole stack has run.
    pub seeds: Vec<MemorySlot<T>>,
    /// Positions of the causal keys, memory first.
    pub key_pos: Vec<u64>,
}

/// One layer of one iteration.
///
/// The segment attends `[x_mem; x_seg]` causally. In lamemo mode every
/// slot then looks ahead at the newest keys (the last `N − 1` memory rows
/// and the first segment row), and the partial result is folded into the
/// stored aggregate. The slot state is updated in place; `x_mem` must hold
/// one row per slot and is expected to be this iteration's layer input.
#[allow(clippy::too_many_arguments)]
pub fn refresh_and_advance<T: Scalar>(
    tape: &mut Tape<T>,
    w: &AttnWeights,
    rpe: &ProjectedRpe,
    x_mem: Option<Var>,
    x_seg: Var,
    seg_start: u64,
    mem: &mut LayerMemory<T>,
    eps: T,
    counters: &mut Counters,
) -> Result<Refreshed<T>> {
    if !(eps >= T::zero()) {
        return Err(Error::Config(format!("interpolation eps must be non-negative, got {eps}")));
    }
    let n = tape.value(x_seg).rows();
    let m = mem.len();
    let mem_pos = mem.positions();
    match (x_mem, m) {
        (None, 0) => {}
        (Some(x), _) if tape.value(x).rows() == m && m > 0 => {}
        _ => return Err(Error::dim("refresh_and_advance", "memory inputs and slots differ")),
    }
    if let Some(next) = mem.next_pos() {
        if next != seg_start {
            return Err(Error::StreamIntegrity(format!(
                "memory ends at {} but the segment starts at {seg_start}",
                next - 1
            )));
        }
    }
    let seg_pos: Vec<u64> = (seg_start..seg_start + n as u64).collect();
    let key_pos: Vec<u64> = mem_pos.iter().copied().chain(seg_pos.iter().copied()).collect();

    let ext = match x_mem {
        Some(xm) => tape.concat_rows(&[xm, x_seg])?,
        None => x_seg,
    };
    let q = tape.matmul(x_seg, w.w_q)?;
    let k = tape.matmul(ext, w.w_ke)?;
    let v = tape.matmul(ext, w.w_v)?;
    let seg = causal_attend(tape, q, k, v, rpe, &seg_pos, &key_pos, counters)?;
    let seg_context = seg.concat(tape)?;

    let mut mem_context = None;
    let mut alphas = Vec::new();
    if let (MemMode::Lamemo, Some(xm)) = (mem.mode, x_mem) {
        // keys τ−N+2 … τ+1, clipped to what memory still holds
        let bound = seg_start;
        let first = (bound + 1).saturating_sub(n as u64).max(key_pos[0]);
        let ks = (first - key_pos[0]) as usize;
        let nk = (bound - first + 1) as usize;
        let k_la = tape.slice_rows(k, ks, nk)?;
        let v_la = tape.slice_rows(v, ks, nk)?;
        let q_mem = tape.matmul(xm, w.w_q)?;
        let after: Vec<u64> = mem.slots.iter().map(|s| s.rightmost_key_pos).collect();
        let la = lookahead_attend(
            tape,
            q_mem,
            k_la,
            v_la,
            rpe,
            &mem_pos,
            &after,
            &key_pos[ks..ks + nk],
            bound,
            counters,
        )?;
        let dh = rpe.d_head;
        let mut heads = Vec::with_capacity(rpe.n_heads);
        for h in 0..rpe.n_heads {
            let (c_old, ls_old) = head_aggregate(&mem.slots, h, dh)?;
            let (mixed, alpha) = tape.interpolate(&c_old, &ls_old, la.contexts[h], la.log_denoms[h], eps)?;
            let ls_new = tape.value(la.log_denoms[h]).data().to_vec();
            let mixed_val = tape.value(mixed);
            for (i, slot) in mem.slots.iter_mut().enumerate() {
                slot.c_agg[h * dh..(h + 1) * dh].copy_from_slice(mixed_val.row(i));
                slot.log_s[h] = logaddexp(slot.log_s[h], ls_new[i]);
            }
            heads.push(mixed);
            alphas.push(alpha);
        }
        for slot in &mut mem.slots {
            slot.rightmost_key_pos = slot.rightmost_key_pos.max(bound);
        }
        mem_context = Some(tape.concat_cols(&heads)?);
    }

    let x_val = tape.value(x_seg);
    let ctx_val = tape.value(seg_context);
    let mut seeds = Vec::with_capacity(n);
    for (i, &p) in seg_pos.iter().enumerate() {
        seeds.push(MemorySlot {
            abs_pos: p,
            leftmost_key_pos: key_pos[0],
            rightmost_key_pos: p,
            h_in: x_val.row(i).to_vec(),
            c_agg: ctx_val.row(i).to_vec(),
            log_s: seg
                .log_denoms
                .iter()
                .map(|&l| tape.value(l).data()[i])
                .collect(),
        });
    }
    Ok(Refreshed {
        seg,
        seg_context,
        mem_context,
        alphas,
        seeds,
        key_pos,
    })
}
