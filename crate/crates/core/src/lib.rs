//! Recovery of the spatially varying infection rate beta(x) and recovery
//! rate gamma(x) of a diffusive SIR epidemic model from incomplete lateral
//! Cauchy data, via iterated Carleman-weighted quasi-reversibility.
//!
//! The crate covers the full synthetic pipeline:
//!
//! 1. [`forward`] simulates the SIR reaction-diffusion system on a larger
//!    rectangle G and produces population densities.
//! 2. [`observation`] extracts the measured data (interior snapshot at
//!    t = T/2, Neumann traces on the whole lateral boundary, Dirichlet
//!    traces on one side), perturbs them with multiplicative-bound noise,
//!    and smooths/differentiates them with cubic splines.
//! 3. [`inversion`] assembles the six-component linearized system, weights
//!    residual rows with the Carleman weight function, solves a sparse
//!    least-squares problem per outer iteration, and runs the contraction
//!    loop to convergence.
//! 4. [`recon`] maps the converged solution back to beta(x), gamma(x) and
//!    scores it against ground truth.
//!
//! [`pipeline`] ties the stages together behind reproducible, content-hash
//! chained bundle directories; the companion CLI crate exposes it as
//! subcommands.

pub mod carleman;
pub mod error;
pub mod fld;
pub mod forward;
pub mod grid;
pub mod inversion;
pub mod observation;
pub mod phantom;
pub mod pipeline;
pub mod recon;
pub mod sparse;
pub mod spline;

pub use error::{Error, Result};
