//! The language model: embedding, attention stack with memory, tied
//! output projection and sampling.

mod config;
mod forward;
mod layer;
mod params;
mod sample;

pub use config::{LnVariant, ModelConfig};
pub use forward::{embed, eval_segment, forward_segment, ForwardOptions, ForwardRecord, LmState, SegmentOutput};
pub use layer::{dropout, layer_transform};
pub use params::{Bound, LayerVars, Params};
pub use sample::{sample_top_p, softmax};
