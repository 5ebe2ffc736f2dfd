//! A memory-oriented tensor fusion compiler.
//!
//! Tensor programs are lowered to an instruction-level dataflow graph whose
//! nodes are compute, data-movement and synchronization operators and whose
//! edges are patterned memory slices. The graph is rewritten greedily to
//! keep data on the fastest memory level that its exchange pattern allows,
//! fusion plans are searched under a traffic cost model, and kernels are
//! emitted for a small abstract parallel machine.

pub mod codegen;
pub mod costmodel;
pub mod error;
pub mod frontend;
pub mod fusion;
pub mod gir;
pub mod interp;
pub mod lowering;
pub mod pipeline;
pub mod profile;
pub mod rewrite;

pub use error::{Error, Result};
