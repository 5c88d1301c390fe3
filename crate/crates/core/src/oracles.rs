//! Reference optimizers used to validate the solvers and pipelines.
//!
//! `O(2)` is one-dimensional up to reflection, so the planar robust problems
//! can be minimized by brute force over a rotation-angle grid (times the two
//! reflection classes). These routines are deliberately independent of the
//! convex solvers; they exist for tests and for sanity-checking results.

use nalgebra::{DMatrix, DVector};

use crate::objectives::{energy_robust, PointPairs, RigidMotion};
use crate::srp::optimal_translation;
use crate::{Result, SrpError};

fn rotation_2d(theta: f64, reflect: bool) -> DMatrix<f64> {
    let (s, c) = theta.sin_cos();
    if reflect {
        // Rotation times diag(1, -1): an orientation-reversing element.
        DMatrix::from_vec(2, 2, vec![c, s, s, -c])
    } else {
        DMatrix::from_vec(2, 2, vec![c, s, -s, c])
    }
}

fn check_planar(pts: &PointPairs) -> Result<()> {
    if pts.dim() != 2 {
        return Err(SrpError::InvalidArgument(format!(
            "grid oracle wants d = 2, got d = {}",
            pts.dim()
        )));
    }
    Ok(())
}

/// Brute-force minimum of `E(R) = Σ ‖R p_i − q_i‖` over `O(2)` on an angle
/// grid of the given size (per reflection class).
pub fn grid_optimum_orth_2d(pts: &PointPairs, angles: usize) -> Result<(f64, RigidMotion)> {
    check_planar(pts)?;
    let mut best = f64::INFINITY;
    let mut best_motion = RigidMotion::identity(2);
    for reflect in [false, true] {
        for k in 0..angles {
            let theta = 2.0 * std::f64::consts::PI * k as f64 / angles as f64;
            let m = RigidMotion::new(rotation_2d(theta, reflect), DVector::zeros(2))?;
            let e = energy_robust(&m, pts)?;
            if e < best {
                best = e;
                best_motion = m;
            }
        }
    }
    Ok((best, best_motion))
}

/// Brute-force minimum of `E(R,t)` over `O(2) × R²`: angle grid times both
/// reflections, with the translation minimized exactly (geometric median of
/// the residuals) for every candidate rotation.
pub fn grid_optimum_rigid_2d(pts: &PointPairs, angles: usize) -> Result<(f64, RigidMotion)> {
    check_planar(pts)?;
    let mut best = f64::INFINITY;
    let mut best_motion = RigidMotion::identity(2);
    for reflect in [false, true] {
        for k in 0..angles {
            let theta = 2.0 * std::f64::consts::PI * k as f64 / angles as f64;
            let r = rotation_2d(theta, reflect);
            let t = optimal_translation(&r, pts)?;
            let m = RigidMotion::new(r, t)?;
            let e = energy_robust(&m, pts)?;
            if e < best {
                best = e;
                best_motion = m;
            }
        }
    }
    Ok((best, best_motion))
}
