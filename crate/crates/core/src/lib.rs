pub mod bench;
pub mod consensus;
mod error;
pub mod geom;
pub mod matching;
pub mod pipeline;
pub mod refine;
pub mod stabbing;
pub mod synth;

pub use error::{Error, Result};
