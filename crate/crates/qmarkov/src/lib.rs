//! Finite-volume quantum Markov chains on tensor and fermion lattices.
//!
//! The crate builds local observable algebras over a finite chain of sites
//! (either tensor products of matrix algebras or fermionic algebras realized
//! through a Jordan-Wigner construction), equips them with completely
//! positive transition expectations, extends those kernels to quasi
//! conditional expectations, and evaluates / reconstructs the finite-volume
//! states they generate. Everything a verification routine claims is checked
//! numerically against explicit tolerances; nothing is assumed from the
//! construction alone.
//!
//! Module layout mirrors the pipeline:
//! * [`linalg`]: dense complex kernels (Kronecker, PSD calculus, span bases,
//!   numerical commutants).
//! * [`algebra`]: lattices of local algebras, parity, product bases,
//!   commutant structure.
//! * [`cp`]: completely positive maps, Choi matrices, Schur products,
//!   conditional expectations and amplitudes.
//! * [`kernel`]: transition expectations and their extensions.
//! * [`chain`]: chain specs, boundary sequences, evaluation, reconstruction,
//!   classification.

pub mod algebra;
pub mod chain;
pub mod cp;
pub mod error;
pub mod kernel;
pub mod linalg;
pub mod parallel;
pub mod random;

pub use error::{QmError, Result};
pub use linalg::{CMatrix, CVector, ToleranceConfig, C64};
