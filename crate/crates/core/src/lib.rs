//! Exact diagonalization of a two-dimensional Bose-Hubbard model with reciprocal x-hopping,
//! one-way y-hopping of alternating direction, and intra-cell correlated pair tunneling.

pub mod basis;
pub mod effective;
pub mod eigen;
pub mod experiment;
pub mod error;
pub mod fmt;
pub mod hamiltonian;
pub mod lu;
pub mod model;
pub mod observables;
pub mod pipeline;
pub mod sparse;
pub mod topology;

pub use error::{Error, Result};
