//! Observation-region geometry, Carleman-weight verification and discrete
//! observability constants for wave equations with variable coefficients.
//!
//! The crate is organized around the pipeline a scenario drives:
//!
//! * [`grid`], [`coeff`], [`weight`] — domains, coefficient fields h^{jk} and
//!   escape-function weights d with certification of the pseudoconvexity
//!   hypotheses;
//! * [`geometry`], [`region`] — observed boundary portion, neighborhoods,
//!   waiting times, space-time observation regions and the proof-layer
//!   inclusion chain;
//! * [`carleman`] — the pointwise weighted identity for the ultra-hyperbolic
//!   operator, verified to machine precision, and the spectral threshold
//!   sweep;
//! * [`elliptic`], [`wave`] — the Dirichlet elliptic solver realizing the
//!   dual norm, the explicit wave stepper, energies and the energy-bound
//!   fits;
//! * [`observability`] — Gramian assembly over a region and the empirical
//!   observability constant as a reciprocal pencil eigenvalue;
//! * [`scenario`], [`pipeline`], [`report`] — config-driven runs with
//!   reproducible artifacts.

pub mod carleman;
pub mod coeff;
pub mod elliptic;
pub mod error;
pub mod geometry;
pub mod grid;
pub mod observability;
pub mod pipeline;
pub mod region;
pub mod report;
pub mod scenario;
pub mod wave;
pub mod weight;

pub use error::{Error, Result};
