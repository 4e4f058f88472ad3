//! Semantic concept vectors for rectifier networks.

pub mod error;
pub mod facets;
pub mod features;
pub mod manifest;
pub mod net;
pub mod perturb;
pub mod pointing;
pub mod retrieval;
pub mod rng;
pub mod sevec;
pub mod stats;
pub mod store;
pub mod synthetic;
pub mod tensor;

pub use error::{Error, Result};
