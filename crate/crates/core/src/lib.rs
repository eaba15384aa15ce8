//! Scalable process tomography of unitary channels with matrix product states.
//!
//! A unitary on `n` qubits is probed through its Choi state, a `2n`-site MPS in
//! which ancilla and system qubits alternate (ancilla on even 0-based sites,
//! system on odd ones). Local Pauli data on windows of `r` consecutive sites
//! are simulated, a pure MPS estimate is reconstructed by likelihood
//! maximization, regrouped into an MPO for the unitary, and finally turned
//! into a Hamiltonian estimate by a trigonometric series.

pub mod circuit;
pub mod error;
pub mod extraction;
pub mod hamiltonian;
pub mod harness;
pub mod io;
pub mod linalg;
pub mod measurement;
pub mod mpo;
pub mod mps;
pub mod reconstruction;

pub use error::{Error, Result};
pub use linalg::C64;
pub use mpo::{apply_mpo, multiply_mpo, Mpo};
pub use mps::{inner, Mps, Tensor3, Truncation, WindowDensityMatrix};
