//! Nonnegativity-constrained sparse autoencoders and the tooling around them.

// `!(x >= 0.0)` is how NaN gets rejected alongside negatives.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autoencoder;
pub mod coremath;
pub mod deepnet;
pub mod error;
pub mod experiment;
pub mod imagedata;
pub mod metrics;
pub mod modelio;
pub mod nmf;
pub mod optimizer;
pub mod par;
pub mod render;
pub mod textdata;

pub use error::{Error, Result};
