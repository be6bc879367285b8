pub mod analysis;
pub mod error;
pub mod memory;
pub mod model;
pub mod numerics;
pub mod pipeline;
pub mod posenc;
pub mod report;
pub mod verify;

pub use error::{Error, Result};
