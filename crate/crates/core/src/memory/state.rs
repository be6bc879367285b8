use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{logaddexp, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MemMode {
    /// No memory: every segment is modelled on its own.
    None,
    /// Static reuse of cached hidden states.
    Xl,
    /// Memory refreshed by look-ahead attention and interpolation.
    Lamemo,
}

impl FromStr for MemMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(MemMode::None),
            "xl" => Ok(MemMode::Xl),
            "lamemo" => Ok(MemMode::Lamemo),
            other => Err(Error::Config(format!("unknown memory mode `{other}`"))),
        }
    }
}

impl fmt::Display for MemMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MemMode::None => "none",
            MemMode::Xl => "xl",
            MemMode::Lamemo => "lamemo",
        })
    }
}

/// One memory position at one layer.
///
/// `c_agg` and `log_s` are per head (`c_agg` is head-major, `n_heads × d_head`).
/// The slot has attended exactly the key positions
/// `leftmost_key_pos..=rightmost_key_pos`.
#[derive(Clone, Debug, PartialEq)]
pub struct MemorySlot<T> {
    pub abs_pos: u64,
    pub leftmost_key_pos: u64,
    pub rightmost_key_pos: u64,
    pub h_in: Vec<T>,
    pub c_agg: Vec<T>,
    pub log_s: Vec<T>,
}

impl<T: Scalar> MemorySlot<T> {
    pub fn head_context(&self, head: usize, d_head: usize) -> &[T] {
        &self.c_agg[head * d_head..(head + 1) * d_head]
    }

    /// Folds a partial look-ahead result for one head into the running
    /// aggregate and returns the memorising coefficient α.
    ///
    /// `α = S/(S + s + eps)` is formed from log denominators, so neither mass
    /// is ever exponentiated on its own. `partial_log_s = −∞` is the empty
    /// partial result.
    pub fn interpolate(
        &mut self,
        head: usize,
        partial_context: &[T],
        partial_log_s: T,
        eps: T,
        d_head: usize,
    ) -> Result<T> {
        if !(eps >= T::zero()) {
            return Err(Error::Config(format!("interpolation eps must be non-negative, got {eps}")));
        }
        if partial_context.len() != d_head {
            return Err(Error::dim("interpolate", "partial context width differs from d_head"));
        }
        let old = self.log_s[head];
        let log_den = logaddexp(logaddexp(old, partial_log_s), eps.ln());
        let alpha = (old - log_den).exp();
        let beta = T::one() - alpha;
        let c = &mut self.c_agg[head * d_head..(head + 1) * d_head];
        for (x, &y) in c.iter_mut().zip(partial_context) {
            *x = alpha * *x + beta * y;
        }
        self.log_s[head] = logaddexp(old, partial_log_s);
        Ok(alpha)
    }
}

/// Memory of one layer: up to `capacity` slots in increasing position order.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerMemory<T> {
    pub mode: MemMode,
    pub capacity: usize,
    pub slots: Vec<MemorySlot<T>>,
}

impl<T: Scalar> LayerMemory<T> {
    pub fn new(mode: MemMode, capacity: usize) -> Self {
        let capacity = if mode == MemMode::None { 0 } else { capacity };
        Self {
            mode,
            capacity,
            slots: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn positions(&self) -> Vec<u64> {
        self.slots.iter().map(|s| s.abs_pos).collect()
    }

    /// Position right after the newest slot, if any.
    pub fn next_pos(&self) -> Option<u64> {
        self.slots.last().map(|s| s.abs_pos + 1)
    }

    /// Appends `new_slots` and drops the oldest until at most `capacity` remain.
    pub fn slide(&mut self, new_slots: Vec<MemorySlot<T>>) -> Result<()> {
        let mut expect = self.next_pos();
        for s in &new_slots {
            if let Some(e) = expect {
                if s.abs_pos != e {
                    return Err(Error::StreamIntegrity(format!(
                        "slot at position {} does not continue the stream at {e}",
                        s.abs_pos
                    )));
                }
            }
            expect = Some(s.abs_pos + 1);
        }
        self.slots.extend(new_slots);
        if self.slots.len() > self.capacity {
            let excess = self.slots.len() - self.capacity;
            self.slots.drain(..excess);
        }
        Ok(())
    }
}
