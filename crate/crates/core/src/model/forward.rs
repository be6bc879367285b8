use crate::error::{Error, Result};
use crate::memory::{refresh_and_advance, Counters, LayerMemory, MemMode, ProjectedRpe};
use crate::numerics::{Rng, Scalar, Tape, Tensor, Var};
use crate::posenc::RpeTable;

use super::{dropout, layer_transform, Bound, ModelConfig, Params};

/// Memory of every layer plus the stream position of the next token.
#[derive(Clone, Debug, PartialEq)]
pub struct LmState<T> {
    pub layers: Vec<LayerMemory<T>>,
    pub pos: u64,
}

impl<T: Scalar> LmState<T> {
    pub fn new(config: &ModelConfig) -> Self {
        Self::with_mem_len(config, config.effective_mem_len())
    }

    /// A fresh state whose memory holds `mem_len` positions per layer.
    pub fn with_mem_len(config: &ModelConfig, mem_len: usize) -> Self {
        Self {
            layers: (0..config.n_layers)
                .map(|_| LayerMemory::new(config.mem_mode, mem_len))
                .collect(),
            pos: 0,
        }
    }

    pub fn mem_len(&self) -> usize {
        self.layers.first().map_or(0, LayerMemory::len)
    }
}

#[derive(Default)]
pub struct ForwardOptions<'a> {
    /// Enables dropout, drawing masks from this stream.
    pub dropout_rng: Option<&'a mut Rng>,
    /// Keep α values and final-layer attention weights.
    pub record: bool,
}

/// Values kept when [`ForwardOptions::record`] is set.
#[derive(Clone, Debug, Default)]
pub struct ForwardRecord<T> {
    /// `[layer][head][slot]`, oldest slot first; empty without look-ahead.
    pub alphas: Vec<Vec<Vec<T>>>,
    /// Final layer, per head, `N × keys`.
    pub top_probs: Vec<Tensor<T>>,
    pub key_pos: Vec<u64>,
    pub seg_pos: Vec<u64>,
}

pub struct SegmentOutput<T> {
    /// `N × vocab`.
    pub logits: Var,
    /// Mean next-token NLL in nats, when targets were given.
    pub loss: Option<Var>,
    pub counters: Counters,
    pub record: Option<ForwardRecord<T>>,
}

/// Row lookup scaled by `√d`.
pub fn embed<T: Scalar>(tape: &mut Tape<T>, table: Var, tokens: &[usize]) -> Result<Var> {
    let vocab = tape.value(table).rows();
    if let Some(&bad) = tokens.iter().find(|&&t| t >= vocab) {
        return Err(Error::Vocabulary { id: bad, vocab });
    }
    let rows = tape.select_rows(table, tokens)?;
    let d = tape.value(table).cols();
    Ok(tape.scale(rows, T::of(d as f64).sqrt()))
}

fn stored_inputs<T: Scalar>(tape: &mut Tape<T>, mem: &LayerMemory<T>, d: usize) -> Result<Option<Var>> {
    if mem.is_empty() {
        return Ok(None);
    }
    let data: Vec<T> = mem.slots.iter().flat_map(|s| s.h_in.iter().copied()).collect();
    Ok(Some(tape.constant(Tensor::matrix(mem.len(), d, data)?)))
}

/// Runs one segment through the stack and advances `state`.
///
/// Layers run bottom-up. The first layer's memory inputs are the stored
/// embeddings; above it, xl reuses the stored hidden states while lamemo
/// feeds the memory rows refreshed by the layer below in this same pass.
#[allow(clippy::too_many_arguments)]
pub fn forward_segment<T: Scalar>(
    tape: &mut Tape<T>,
    bound: &Bound,
    config: &ModelConfig,
    state: &mut LmState<T>,
    tokens: &[usize],
    targets: Option<&[usize]>,
    mut opts: ForwardOptions<'_>,
) -> Result<SegmentOutput<T>> {
    let n = tokens.len();
    if n == 0 {
        return Err(Error::dim("forward_segment", "empty segment"));
    }
    if let Some(t) = targets {
        if t.len() != n {
            return Err(Error::dim("forward_segment", "one target per token required"));
        }
    }
    if state.layers.len() != config.n_layers {
        return Err(Error::Config("state layer count differs from the model".into()));
    }
    let d = config.d_model;
    let m = state.mem_len();
    if state.layers.iter().any(|l| l.len() != m) {
        return Err(Error::StreamIntegrity("layers hold different memory lengths".into()));
    }
    let seg_start = state.pos;
    let table = RpeTable::<T>::new(config.rpe_scheme, m + n, d)?;
    let eps = T::of(config.interp_eps);
    let p = config.dropout;

    let mut counters = Counters::default();
    let mut record = opts.record.then(ForwardRecord::default);
    let mut x_seg = embed(tape, bound.embedding, tokens)?;
    let mut carried: Option<Var> = None;
    let mut seeds = Vec::with_capacity(config.n_layers);

    for l in 0..config.n_layers {
        let lv = bound.layers[l];
        let x_mem = match (config.mem_mode, l, carried) {
            (MemMode::Lamemo, l, Some(c)) if l > 0 => Some(c),
            _ => stored_inputs(tape, &state.layers[l], d)?,
        };
        let rpe = ProjectedRpe::build(
            tape,
            &table,
            lv.w_kr,
            bound.u,
            bound.v_pos,
            bound.v_neg,
            config.n_heads,
            config.d_head,
        )?;
        let r = refresh_and_advance(
            tape,
            &lv.attn,
            &rpe,
            x_mem,
            x_seg,
            seg_start,
            &mut state.layers[l],
            eps,
            &mut counters,
        )?;

        let o = tape.matmul(r.seg_context, lv.w_o)?;
        let o = dropout(tape, o, p, opts.dropout_rng.as_deref_mut())?;
        let s = tape.add(o, x_seg)?;
        x_seg = layer_transform(tape, s, &lv, config.ln_variant, p, opts.dropout_rng.as_deref_mut())?;

        carried = None;
        let above = l + 1 < config.n_layers;
        if let (Some(mc), Some(xm), true) = (r.mem_context, x_mem, above) {
            let om = tape.matmul(mc, lv.w_o)?;
            let om = dropout(tape, om, p, opts.dropout_rng.as_deref_mut())?;
            let sm = tape.add(om, xm)?;
            let next = layer_transform(tape, sm, &lv, config.ln_variant, p, opts.dropout_rng.as_deref_mut())?;
            let val = tape.value(next);
            for (i, slot) in state.layers[l + 1].slots.iter_mut().enumerate() {
                slot.h_in.copy_from_slice(val.row(i));
            }
            carried = Some(next);
        }

        if let Some(rec) = record.as_mut() {
            rec.alphas.push(r.alphas.clone());
            if l + 1 == config.n_layers {
                rec.top_probs = r.seg.probs.iter().map(|&v| tape.value(v).clone()).collect();
                rec.key_pos = r.key_pos.clone();
                rec.seg_pos = (seg_start..seg_start + n as u64).collect();
            }
        }
        seeds.push(r.seeds);
    }

    let logits = tape.matmul_nt(x_seg, bound.embedding)?;
    let loss = match targets {
        Some(t) => Some(tape.cross_entropy(logits, t)?),
        None => None,
    };
    for (mem, s) in state.layers.iter_mut().zip(seeds) {
        mem.slide(s)?;
    }
    state.pos += n as u64;
    Ok(SegmentOutput {
        logits,
        loss,
        counters,
        record,
    })
}

/// Forward pass without gradients. Returns the logits and the summed NLL
/// (nats) of `targets`.
pub fn eval_segment<T: Scalar>(
    params: &Params<T>,
    config: &ModelConfig,
    state: &mut LmState<T>,
    tokens: &[usize],
    targets: &[usize],
) -> Result<(Tensor<T>, f64)> {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape, false);
    let out = forward_segment(&mut tape, &bound, config, state, tokens, Some(targets), ForwardOptions::default())?;
    let mean = tape.value(out.loss.expect("targets given")).data()[0].as_f64();
    Ok((tape.value(out.logits).clone(), mean * tokens.len() as f64))
}
