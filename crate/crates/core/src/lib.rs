//! Complex tensor arithmetic, the 1-DHHP structured unitary transform, Chebyshev
//! kernel-polynomial filtering and the Converter sequence classifier.
//!
//! The crate is `no_std` and only needs an allocator.

#![no_std]
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod error;
pub mod gradcheck;
pub mod graph;
mod gru;
pub mod kpm;
mod math;
pub mod model;
pub mod ops;
pub mod rng;
pub mod scan;
pub mod spectral;
pub mod tasks;
pub mod tensor;
pub mod train;
pub mod unitary;

pub use error::{Error, Result};
pub use graph::{Eager, Gradients, Graph, NodeId, Tape};
pub use ops::{GivensEntry, Op};
pub use rng::Rng;
pub use tensor::ComplexTensor;
