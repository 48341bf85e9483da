//! Hard-label extraction of scalar-output ReLU networks.
//!
//! The crate is `no_std` with `alloc`. It holds the model, the metered
//! oracle, the boundary search, affine-tuple recovery, layer-by-layer
//! extraction and the equivalence checks. IO and the CLI live elsewhere.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod boundary;
pub mod error;
pub mod exec;
pub mod extraction;
pub mod linalg;
pub mod model;
pub mod oracle;
pub mod recovery;
pub mod sampling;
pub mod verify;

pub use error::Error;
pub use model::{ActivationPattern, AffineTuple, Architecture, Layer, ModelParameters};
pub use oracle::{ModelOracle, Oracle, OracleStats};
