//! Dense matrix/vector primitives: full SVD, nearest-orthogonal projection,
//! Haar-distributed orthogonal sampling, geometric median, spectral norm.
//!
//! All operations are pure functions over immutable inputs; random sampling
//! takes a caller-owned source.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::{Result, SrpError};

/// Anchor-collision threshold for the safeguarded Weiszfeld iteration.
const WEISZFELD_ANCHOR_EPS: f64 = 1e-12;

/// Full SVD of a square matrix, `a = u * diag(singular_values) * v^T`.
///
/// `u` and `v` are orthogonal and the singular values are sorted
/// nonincreasing.
#[derive(Debug, Clone)]
pub struct SvdResult {
    pub u: DMatrix<f64>,
    pub singular_values: DVector<f64>,
    pub v: DMatrix<f64>,
}

impl SvdResult {
    pub fn reconstruct(&self) -> DMatrix<f64> {
        &self.u * DMatrix::from_diagonal(&self.singular_values) * self.v.transpose()
    }
}

fn check_finite(a: &DMatrix<f64>, what: &str) -> Result<()> {
    if a.iter().any(|x| !x.is_finite()) {
        return Err(SrpError::NonFinite(format!("{what} contains NaN/Inf")));
    }
    Ok(())
}

/// Full SVD of a square matrix with singular values sorted nonincreasing.
pub fn svd(a: &DMatrix<f64>) -> Result<SvdResult> {
    if a.nrows() != a.ncols() {
        return Err(SrpError::DimensionMismatch(format!(
            "svd wants a square matrix, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    check_finite(a, "svd input")?;
    let d = a.nrows();
    let decomp = a.clone().svd(true, true);
    let u = decomp.u.expect("svd requested u");
    let v_t = decomp.v_t.expect("svd requested v_t");
    let sigma = decomp.singular_values;

    // Enforce nonincreasing order regardless of the kernel's convention.
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&i, &j| sigma[j].partial_cmp(&sigma[i]).unwrap());
    let mut u_sorted = DMatrix::zeros(d, d);
    let mut v_sorted = DMatrix::zeros(d, d);
    let mut s_sorted = DVector::zeros(d);
    for (dst, &src) in order.iter().enumerate() {
        u_sorted.set_column(dst, &u.column(src));
        v_sorted.set_column(dst, &v_t.row(src).transpose());
        s_sorted[dst] = sigma[src];
    }
    Ok(SvdResult {
        u: u_sorted,
        singular_values: s_sorted,
        v: v_sorted,
    })
}

/// Nearest orthogonal matrix `Π(A) = U V^T` in Frobenius distance.
///
/// The projection is over the full orthogonal group: no determinant
/// correction is applied, so the result may be a reflection.
pub fn project_orthogonal(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let f = svd(a)?;
    Ok(&f.u * f.v.transpose())
}

/// Haar-distributed orthogonal matrix: Gaussian matrix, QR, with the sign of
/// R's diagonal folded into Q.
pub fn random_orthogonal<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Result<DMatrix<f64>> {
    if d == 0 {
        return Err(SrpError::InvalidArgument(
            "random_orthogonal wants d >= 1".into(),
        ));
    }
    let g = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = g.qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..d {
        if r[(j, j)] < 0.0 {
            for i in 0..d {
                q[(i, j)] = -q[(i, j)];
            }
        }
    }
    Ok(q)
}

/// Sum of Euclidean distances from `v` to every point in the list.
pub fn sum_of_distances(points: &[DVector<f64>], v: &DVector<f64>) -> f64 {
    points.iter().map(|x| (x - v).norm()).sum()
}

/// Geometric median: minimizer of the sum of Euclidean distances.
///
/// Safeguarded Weiszfeld iteration. When an iterate lands on a data point
/// (within 1e-12) the subgradient optimality condition is tested there; the
/// iteration either certifies the data point as optimal or steps off along
/// the negative subgradient (Vardi–Zhang step). Terminates once the duality
/// certificate `max(0, ‖g‖ − η) · max_j ‖x_j − y‖ ≤ tol · f(y)` holds or the
/// iteration cap is reached, whichever first.
pub fn geometric_median(
    points: &[DVector<f64>],
    tol: f64,
    max_iter: usize,
) -> Result<DVector<f64>> {
    if points.is_empty() {
        return Err(SrpError::InvalidArgument(
            "geometric_median wants a nonempty point list".into(),
        ));
    }
    if !(tol > 0.0) {
        return Err(SrpError::InvalidArgument(
            "geometric_median wants tol > 0".into(),
        ));
    }
    let dim = points[0].len();
    let n = points.len() as f64;
    let mut y: DVector<f64> = points.iter().fold(DVector::zeros(dim), |acc, x| acc + x) / n;

    let mut best = y.clone();
    let mut best_obj = sum_of_distances(points, &best);

    for _ in 0..max_iter {
        let mut anchors = 0usize;
        let mut pull = DVector::zeros(dim); // Σ (x_j − y)/d_j over non-anchors
        let mut inv_sum = 0.0;
        let mut weighted = DVector::zeros(dim);
        let mut obj = 0.0;
        let mut max_dist: f64 = 0.0;
        for x in points {
            let diff = x - &y;
            let dist = diff.norm();
            obj += dist;
            max_dist = max_dist.max(dist);
            if dist <= WEISZFELD_ANCHOR_EPS {
                anchors += 1;
            } else {
                pull += diff / dist;
                inv_sum += 1.0 / dist;
                weighted += x / dist;
            }
        }
        if obj < best_obj {
            best_obj = obj;
            best = y.clone();
        }
        let pull_norm = pull.norm();
        let gap_bound = (pull_norm - anchors as f64).max(0.0) * max_dist;
        if gap_bound <= tol * best_obj.max(f64::MIN_POSITIVE) {
            return Ok(best);
        }
        if anchors > 0 {
            // Subgradient optimality at the anchor already excluded above;
            // step off along the negative subgradient.
            let weiszfeld = weighted / inv_sum;
            let beta = (anchors as f64 / pull_norm).min(1.0);
            y = weiszfeld * (1.0 - beta) + &y * beta;
        } else {
            y = weighted / inv_sum;
        }
    }
    let obj = sum_of_distances(points, &y);
    if obj < best_obj {
        best = y;
    }
    Ok(best)
}

/// Largest singular value.
pub fn spectral_norm(a: &DMatrix<f64>) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.clone()
        .singular_values()
        .iter()
        .cloned()
        .fold(0.0, f64::max)
}
