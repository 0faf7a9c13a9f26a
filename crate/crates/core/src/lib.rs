//! Low-rank orthonormal-update optimizers (Dion, Orth-Dion, exact rank-r
//! polar), their per-step diagnostics, synthetic test problems, an
//! adaptive-rank controller, a communication-volume model and an
//! experiment harness.
//!
//! All matrices are dense `f64` ([`Mat`]). All randomness flows through
//! seeded ChaCha8 streams in [`rng`].

pub mod adarank;
pub mod commcost;
pub mod diagnostics;
pub mod error;
pub mod factor;
pub mod harness;
pub mod linalg;
pub mod optimizer;
pub mod problems;
pub mod rng;

pub use error::{Error, Result};
pub use linalg::Mat;
