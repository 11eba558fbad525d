//! Self-interpretable text classification through sampled concept excerpts.
//!
//! A document is encoded by a bidirectional LSTM. For each of `C` concepts the
//! model samples one excerpt (a start word, then a stop word 3 to 10 positions
//! later), averages the frozen word embeddings of that excerpt, and decides
//! from that average whether the concept is present. The prediction is made
//! from the resulting binary code alone. A concept classifier trained jointly
//! on the present excerpts keeps the concepts consistent and separable.
//!
//! The crate is `no_std` (with `alloc`) when built without the default `std`
//! feature. The `parallel` feature spreads per-document work over rayon.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod encoder;
pub mod error;
pub mod evaluation;
pub mod model;
pub mod numerics;
mod par;
pub mod rng;
pub mod text;
pub mod training;

pub use error::{Error, Result};
pub use numerics::{Tape, Tensor, Var};
