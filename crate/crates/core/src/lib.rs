//! Contraction-rate certificates for diffusions that are dissipative at
//! infinity, with coupling simulations and exact optimal transport to check
//! them empirically.

pub mod coupling;
pub mod drift;
pub mod error;
pub mod harness;
pub mod lyapunov;
pub mod quad;
pub mod rng;
pub mod special;
pub mod transport;
pub use error::{Error, Result};
