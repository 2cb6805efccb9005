//! Time-frequency analysis of pulses on a finite window, treated as a
//! quantum rotor: angle `φ ∈ [-π, π)` across the window and integer angular
//! momentum `l` (the
//! carrier mode index).
//!
//! The crate covers von Mises minimum-uncertainty states, the E(2)
//! uncertainty products and their closed-form bounds, the continuous
//! frequency picture with Fisher information, simulated von Mises POVM
//! count records, maximum-likelihood reconstruction, and rotor Wigner
//! functions.

pub mod cli;
pub mod density;
pub mod error;
pub mod io;
pub mod measurement;
pub mod rotor;
pub mod seeds;
pub mod spectral;
pub mod tomography;
pub mod uncertainty;

pub use error::{Result, RotorError};
