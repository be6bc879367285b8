//! Segment memory: causal attention over cached states, incremental
//! look-ahead refresh with denominator-weighted interpolation, and a
//! brute-force oracle for the refreshed aggregates.

mod attend;
mod oracle;
mod refresh;
mod state;

pub use attend::{causal_attend, lookahead_attend, Attended, Counters, ProjectedRpe};
pub use oracle::{oracle_full_attention, OracleWeights};
pub use refresh::{refresh_and_advance, AttnWeights, Refreshed};
pub use state::{LayerMemory, MemMode, MemorySlot};
