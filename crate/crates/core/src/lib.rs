//! Hamiltonian learning for 1D spin-1/2 chains from projective measurement
//! data, using a physics Ansatz optionally augmented by a neural ODE term.

pub mod autodiff;
pub mod bench;
pub mod cli;
pub mod config;
pub mod data;
pub mod dynamics;
pub mod error;
pub mod model;
pub mod pauli;
pub mod seeds;
pub mod statevec;
pub mod train;

pub use error::{Error, Result};
pub use pauli::{HamiltonianFamily, Letter, PauliString, PauliSumHamiltonian};
pub use statevec::{PauliBasis, StateVector};
