//! Loss-budget analysis for superconducting resonators and qubits.

pub mod circle;
pub mod domain;
pub mod error;
pub mod extraction;
pub mod io;
pub mod lsq;
pub mod par;
pub mod participation;
pub mod photon;
pub mod pipeline;
pub mod prediction;
pub mod sensitivity;
pub mod sweep;
pub mod synth;
pub mod tls;

pub use error::{Error, Result};
