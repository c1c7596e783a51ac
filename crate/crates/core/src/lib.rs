//! OTFS link-level building blocks: delay-Doppler framing, doubly selective
//! channels, sparse Hermitian linear algebra (restarted GMRES, factorized
//! sparse approximate inverses, graph sparsification), convolutional coding
//! and the doubly-iterative sparsified MMSE turbo equalizer.

pub mod channel;
pub mod coding;
pub mod equalizer;
mod error;
pub mod frame;
pub mod oracle;
pub mod sparse;

pub use error::{Error, Result};
pub use num_complex::Complex64;

/// Complex sample type used throughout the crate.
pub type C64 = Complex64;
