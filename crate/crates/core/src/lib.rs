//! Decentralized orthogonal dictionary learning by ℓ⁴-norm maximization.
//!
//! The crate provides the centralized MSP iteration (gradient of ‖AY‖₄⁴
//! followed by projection onto the orthogonal group) and its decentralized
//! counterpart DMSP, in which every node computes a gradient from its own
//! slice of the data and the nodes agree on the sum of their gradients by
//! consensus averaging over a simulated time-varying network.
//!
//! Module map:
//!
//! * [`matrix`] dense primitives: ℓ⁴ norm, Hadamard cube, polar projection,
//!   Haar sampling, signed permutations.
//! * [`data`] Bernoulli-Gaussian problem instances and their partition.
//! * [`network`] Erdős–Rényi snapshots, weight matrices, consensus kernels.
//! * [`learner`] MSP/DMSP iterations and their metrics.
//! * [`theory`] numerical validators for the supporting inequalities.
//! * [`harness`] experiment drivers, image pipeline and configuration.

pub mod data;
pub mod error;
pub mod harness;
pub mod learner;
pub mod matrix;
pub mod network;
pub mod rng;
pub mod theory;

pub use error::{Error, Result};
pub use matrix::Matrix;
