//! Streaming Conformer encoder variants under a strict chunked regime.

pub mod error;
pub mod harness;
pub mod numerics;
pub mod attention;
pub mod deformconv;
pub mod encoder;
pub mod transducer;
pub mod par;

pub use error::{Error, Result};
