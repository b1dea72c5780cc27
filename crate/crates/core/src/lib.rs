//! Mirror descent over finitely supported measures.
//!
//! The crate implements the mirror descent scheme
//!
//! ```text
//! μ_{n+1} = argmin_{ν ∈ C} ⟨∇F(μ_n), ν − μ_n⟩ + L · D_φ(ν | μ_n)
//! ```
//!
//! for Bregman potentials `φ` on weight vectors (negative entropy, squared
//! norm, MMD kernel quadratic), and two of its instances on couplings:
//! primal Sinkhorn iterations for entropic optimal transport ([`sinkhorn`])
//! and latent EM, i.e. Richardson–Lucy deconvolution ([`em`]).
//!
//! Every convergence rate and inequality the algorithms rely on is exposed as
//! a numerical certificate, and [`oracles`] provides independent reference
//! computations (finite differences, Newton solvers) to check the closed
//! forms against. [`verify`] bundles them into a single battery.

pub mod divergences;
pub mod em;
pub mod error;
pub mod instance;
pub mod matrix;
pub mod measures;
pub mod mirror_descent;
pub mod numeric;
pub mod oracles;
pub mod sinkhorn;
pub mod verify;

pub use divergences::{
    bregman, kl, mmd_sq, BregmanPotential, ExtendedReal, Functional, Objective,
};
pub use error::{Error, Result};
pub use matrix::Matrix;
pub use measures::{ConditionalKernel, Coupling, DiscreteMeasure};

/// Library version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
