//! Spectral Galerkin simulator for the 2D stochastic Navier-Stokes vorticity
//! equation on the torus, driven by a degenerate multiplicative Gaussian noise,
//! together with a diagnostics suite: Malliavin Gram matrices and their
//! constrained smallest eigenvalues, mode-reachability analysis, control-residual
//! probes, Lyapunov exponential-moment checks, mixing-rate and irreducibility
//! estimators.
//!
//! The crate is organized around the state space `H` of mean-zero scalar
//! vorticity fields, represented by real coefficients in the orthonormal
//! sin/cos basis (see [`spectral`]). Everything downstream - time integration,
//! linearized (Jacobian) flows, Malliavin matrices, ergodicity probes - works
//! on that representation.

pub mod dynamics;
pub mod malliavin;
pub mod noise;
pub mod rng;
pub mod spanning;
pub mod spectral;
pub mod stats;

pub use dynamics::{DynamicsError, IntegratorSpec, PathRecord};
pub use malliavin::{GalerkinBasis, MalliavinGram, SalphaN};
pub use noise::{NoiseError, NoiseModel, QFamily, ScalarProfile};
pub use spectral::{Lattice, ModeIndex, SpectralField, SpectralOps, VelocityField};
