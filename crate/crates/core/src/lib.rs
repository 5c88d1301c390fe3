//! Robust point-set alignment by symmetrized convex relaxation.
//!
//! The crate solves the robust (power-1) Procrustes problem: given ordered
//! point sets `P`, `Q` in `R^d`, find an orthogonal matrix `R` and translation
//! `t` minimizing `Σ ‖R p_i − q_i + t‖`. The relax-and-project pipelines in
//! [`srp`] minimize a convex symmetrized surrogate over all matrices, project
//! onto the orthogonal group, and report both the feasible energy and the
//! relaxation optimum, which is a certified lower bound on the best possible
//! energy of any method.
//!
//! Module map:
//! - [`numerics`]: dense SVD, orthogonal projection, Haar sampling, geometric
//!   median, spectral norm.
//! - [`objectives`]: every energy evaluator plus smoothed value/gradient.
//! - [`solvers`]: global minimization of the convex relaxations with an
//!   independent subgradient oracle for cross-validation.
//! - [`srp`]: the end-to-end pipelines, IRLS baseline, semi-supervised
//!   covariance-regularized alignment.
//! - [`recovery`]: synthetic instance generation, dominance-of-inliers
//!   condition checks, recovery metrics.
//! - [`bench`]: experiment harness and the `bench` CLI.

pub mod bench;
mod error;
pub mod numerics;
pub mod oracles;
pub mod objectives;
pub mod recovery;
pub mod solvers;
pub mod srp;

pub use error::{Result, SrpError};
