//! Coverage-guided testing core for small convolutional person detectors.
//!
//! Everything in this crate is pure computation over in-memory values and
//! builds without `std` (an allocator is required). File formats, PNG IO and
//! the command line live in the `cgt` companion crate.
//!
//! Module map:
//!
//! - [`nn`]: model graph, forward pass with activation traces, decode + NMS,
//!   reverse-mode gradients.
//! - [`coverage`]: NC / NBC / SNAC, neuron range profiles, accumulation.
//! - [`eval`]: IoU, AP at IoU 0.5, relative change, mPC / rPC.
//! - [`mutation`]: enhancement, filter, geometric, acceptance and corruption
//!   operators plus the natural mutation pipeline.
//! - [`fuzz`]: bug predicate, bug store, dataset split and the fuzzing stages.
//! - [`train`]: grid-detector loss and SGD training.
//! - [`synth`]: synthetic crowd scenes with exact annotations.
//! - [`adversarial`]: seeded pseudo-adversarial stand-in generator.

#![no_std]

extern crate alloc;

pub mod adversarial;
pub mod coverage;
mod error;
pub mod eval;
pub mod fuzz;
pub mod mutation;
pub mod nn;
pub mod real;
pub mod rng;
mod sample;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use eval::BBox;
pub use sample::Sample;
pub use tensor::{Shape, Tensor};
