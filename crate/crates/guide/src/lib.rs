//! Runs the code blocks of the guide in `book/` as doc-tests, one module per
//! chapter, so a failing snippet points at its chapter.

#[doc = include_str!("../../../book/src/intro.md")]
pub mod intro {}
#[doc = include_str!("../../../book/src/rotations.md")]
pub mod rotations {}
#[doc = include_str!("../../../book/src/matching.md")]
pub mod matching {}
#[doc = include_str!("../../../book/src/stabbing.md")]
pub mod stabbing {}
#[doc = include_str!("../../../book/src/pruning.md")]
pub mod pruning {}
#[doc = include_str!("../../../book/src/refinement.md")]
pub mod refinement {}
#[doc = include_str!("../../../book/src/benchmarks.md")]
pub mod benchmarks {}
#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
#[doc = include_str!("../../../README.md")]
pub mod readme {}
