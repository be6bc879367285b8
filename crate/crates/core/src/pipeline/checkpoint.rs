//! Versioned binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! | bytes | content |
//! |-------|---------|
//! | 4 | magic `LMCK` |
//! | 4 | format version (`u32`, currently 1) |
//! | 8 | header length `h` (`u64`) |
//! | h | UTF-8 JSON header |
//! | … | parameter tensors in header order |
//! | … | Adam first moments, then second moments, same order |
//! | … | per lane, per layer, per slot: `h_in`, `c_agg`, `log_s` |
//!
//! Every tensor body is its row-major elements at the header's precision.
//! The header carries the experiment config, step counter, RNG position,
//! Adam hyperparameters and step, the running train-loss window, tensor
//! names and shapes, and per-slot positions and vector lengths. Bytes after
//! the last slot are an error.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ExperimentConfig;
use crate::error::{Error, Result};
use crate::memory::{LayerMemory, MemorySlot};
use crate::model::{LmState, ModelConfig, Params};
use crate::numerics::{Adam, AdamConfig, Precision, RngState, Scalar, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"LMCK";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Complete training state.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T> {
    pub experiment: ExperimentConfig,
    pub step: u64,
    pub params: Params<T>,
    pub optimizer: Adam<T>,
    pub rng: RngState,
    /// Memory of each batch lane.
    pub lanes: Vec<LmState<T>>,
    /// Sum and count of train losses since the last logged row.
    pub loss_window: (f64, u64),
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorInfo {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LaneInfo {
    pos: u64,
    /// Per layer, per slot: `[abs_pos, leftmost, rightmost, len h_in, len c_agg, len log_s]`.
    layers: Vec<Vec<[u64; 6]>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    precision: Precision,
    experiment: ExperimentConfig,
    step: u64,
    rng: RngState,
    adam: AdamConfig,
    adam_step: u64,
    loss_sum_bits: u64,
    loss_count: u64,
    tensors: Vec<TensorInfo>,
    lanes: Vec<LaneInfo>,
}

fn ck(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

fn write_values<T: Scalar>(out: &mut Vec<u8>, values: &[T]) {
    for &v in values {
        v.write_le(out);
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| ck("truncated file"))?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn values<T: Scalar>(&mut self, n: usize) -> Result<Vec<T>> {
        let w = T::PRECISION.byte_width();
        let raw = self.take(n.checked_mul(w).ok_or_else(|| ck("tensor size overflows"))?)?;
        Ok(raw.chunks_exact(w).map(T::read_le).collect())
    }
}

fn split_header(bytes: &[u8]) -> Result<(Header, Reader<'_>)> {
    let mut r = Reader { bytes, at: 0 };
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(ck("not a checkpoint (bad magic)"));
    }
    let version = u32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(ck(format!("unsupported format version {version}, expected {CHECKPOINT_VERSION}")));
    }
    let len = u64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes"));
    let len = usize::try_from(len).map_err(|_| ck("header length overflows"))?;
    let header: Header = serde_json::from_slice(r.take(len)?).map_err(|e| ck(format!("header: {e}")))?;
    Ok((header, r))
}

/// Precision recorded in a checkpoint file.
pub fn checkpoint_precision(path: impl AsRef<Path>) -> Result<Precision> {
    let bytes = std::fs::read(path)?;
    Ok(split_header(&bytes)?.0.precision)
}

impl<T: Scalar> Checkpoint<T> {
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            precision: T::PRECISION,
            experiment: self.experiment.clone(),
            step: self.step,
            rng: self.rng.clone(),
            adam: self.optimizer.config,
            adam_step: self.optimizer.step,
            loss_sum_bits: self.loss_window.0.to_bits(),
            loss_count: self.loss_window.1,
            tensors: self
                .params
                .names
                .iter()
                .zip(&self.params.tensors)
                .map(|(n, t)| TensorInfo {
                    name: n.clone(),
                    shape: t.shape().to_vec(),
                })
                .collect(),
            lanes: self
                .lanes
                .iter()
                .map(|s| LaneInfo {
                    pos: s.pos,
                    layers: s
                        .layers
                        .iter()
                        .map(|l| {
                            l.slots
                                .iter()
                                .map(|x| {
                                    [
                                        x.abs_pos,
                                        x.leftmost_key_pos,
                                        x.rightmost_key_pos,
                                        x.h_in.len() as u64,
                                        x.c_agg.len() as u64,
                                        x.log_s.len() as u64,
                                    ]
                                })
                                .collect()
                        })
                        .collect(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header).expect("header serialises");
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for t in self.params.tensors.iter().chain(&self.optimizer.m).chain(&self.optimizer.v) {
            write_values(&mut out, t.data());
        }
        for s in &self.lanes {
            for l in &s.layers {
                for x in &l.slots {
                    write_values(&mut out, &x.h_in);
                    write_values(&mut out, &x.c_agg);
                    write_values(&mut out, &x.log_s);
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (h, mut r) = split_header(bytes)?;
        if h.precision != T::PRECISION {
            return Err(ck(format!("stored precision {:?} differs from requested {:?}", h.precision, T::PRECISION)));
        }
        h.experiment.validate()?;
        let model = &h.experiment.model;

        let read_set = |r: &mut Reader<'_>| -> Result<Vec<Tensor<T>>> {
            h.tensors
                .iter()
                .map(|info| {
                    let n = info.shape.iter().product();
                    Tensor::new(info.shape.clone(), r.values(n)?)
                })
                .collect()
        };
        let params = Params {
            names: h.tensors.iter().map(|t| t.name.clone()).collect(),
            tensors: read_set(&mut r)?,
        };
        params.check_against(model).map_err(|e| ck(format!("parameters do not match the config: {e}")))?;
        let optimizer = Adam {
            config: h.adam,
            step: h.adam_step,
            m: read_set(&mut r)?,
            v: read_set(&mut r)?,
        };

        let capacity = model.effective_mem_len();
        let mut lanes = Vec::with_capacity(h.lanes.len());
        for info in &h.lanes {
            if info.layers.len() != model.n_layers {
                return Err(ck("lane layer count differs from the config"));
            }
            let mut layers = Vec::with_capacity(model.n_layers);
            for slots in &info.layers {
                if slots.len() > capacity {
                    return Err(ck("lane memory exceeds the configured length"));
                }
                let mut mem = LayerMemory::new(model.mem_mode, capacity);
                let mut loaded = Vec::with_capacity(slots.len());
                for s in slots {
                    let [abs_pos, leftmost_key_pos, rightmost_key_pos, nh, nc, ns] = *s;
                    loaded.push(MemorySlot {
                        abs_pos,
                        leftmost_key_pos,
                        rightmost_key_pos,
                        h_in: r.values(nh as usize)?,
                        c_agg: r.values(nc as usize)?,
                        log_s: r.values(ns as usize)?,
                    });
                }
                mem.slide(loaded)?;
                layers.push(mem);
            }
            lanes.push(LmState { layers, pos: info.pos });
        }
        if r.at != bytes.len() {
            return Err(ck(format!("{} trailing bytes", bytes.len() - r.at)));
        }
        Ok(Self {
            experiment: h.experiment,
            step: h.step,
            params,
            optimizer,
            rng: h.rng,
            lanes,
            loss_window: (f64::from_bits(h.loss_sum_bits), h.loss_count),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// Loads and additionally requires the embedded model config to equal `expected`.
    pub fn load_for(path: impl AsRef<Path>, expected: &ModelConfig) -> Result<Self> {
        let c = Self::load(path)?;
        if &c.experiment.model != expected {
            return Err(ck("embedded model config differs from the expected one"));
        }
        Ok(c)
    }
}
