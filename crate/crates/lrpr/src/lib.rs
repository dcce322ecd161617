//! Low-rank phase retrieval: solvers and experiment harness.
//!
//! Recovers a matrix `X0` with `rank(X0) <= r` from amplitude measurements
//! `y = |A(X0)| + eta`, where `A` maps a matrix to the vector of inner
//! products with `p` Gaussian sensing matrices. Since `|A(X)| = |A(-X)|`,
//! recovery is only possible up to a global sign; all error metrics take
//! the minimum over `±X0`.
//!
//! How it works:
//! - [`measurement`] builds Gaussian measurement ensembles, applies the
//!   linear map, its adjoint, and subset restrictions, and synthesizes
//!   amplitude observations.
//! - [`solvers`] implements four estimators (rank-constrained, nuclear-ball
//!   constrained, residual-constrained nuclear minimization, and
//!   nuclear-regularized least squares) via projected/proximal amplitude
//!   flow, plus the projections and diagnostics they need.
//! - [`srip`] certifies empirical subset-restricted isometry levels and
//!   checks the Gaussian concentration facts the error bounds rest on.
//! - [`nets`] constructs explicit epsilon-nets for low-rank and nuclear-ball
//!   test sets and verifies covering empirically.
//! - [`experiments`] is the Monte-Carlo harness: error-scaling sweeps,
//!   tightness floors, regression against the refined rate, and numeric
//!   checks of the sign-partition inequalities.
//! - [`cli`] wires everything into the `lrpr` binary with reproducible,
//!   manifest-emitting runs.
//!
//! All randomness flows through per-purpose streams derived from a single
//! master seed, so every artifact is a pure function of (config, seed).

pub mod cli;
pub mod error;
pub mod experiments;
pub mod measurement;
pub mod nets;
pub mod rng;
pub mod solvers;
pub mod srip;

pub use error::LrprError;
pub use experiments::{ModelKind, NoiseKind, TrialRecord};
pub use measurement::{AmplitudeObservation, Dims, LowRankTarget, MeasurementEnsemble};
pub use solvers::{SolverConfig, SolverResult};
pub use srip::{ConcentrationReport, SripEstimate};
