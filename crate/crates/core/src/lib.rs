//! Multi-encoder transformer captioning with an auxiliary feature stream.

pub mod data;
pub mod decoding;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod tensor;
pub mod textproc;
pub mod training;

pub use error::{Error, Result};
