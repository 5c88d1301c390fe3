//! Energy functions of the alignment problem as pure evaluators, plus the
//! smoothed surrogate (value and exact gradient) the iterative solvers run on.
//!
//! The symmetrized relaxed energy with norm power `p` is
//! `E_p(A,t,s) = Σ_i ((‖A p_i − q_i + t‖^p + ‖A^T q_i − p_i + s‖^p)/2)^{1/p}`
//! (for `p = ∞` the per-pair mean becomes a max). On orthogonal matrices it
//! coincides with the robust energy, so its global minimum over all matrices
//! is a lower bound for the rigid problem.

use nalgebra::{DMatrix, DVector};

use crate::numerics;
use crate::{Result, SrpError};

/// Norm power of the symmetrized relaxation. Only these three admit
/// second-order-cone formulations and are used by the solvers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormPower {
    One,
    Two,
    Inf,
}

impl std::fmt::Display for NormPower {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            NormPower::One => write!(f, "1"),
            NormPower::Two => write!(f, "2"),
            NormPower::Inf => write!(f, "inf"),
        }
    }
}

impl std::str::FromStr for NormPower {
    type Err = SrpError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "1" => Ok(NormPower::One),
            "2" => Ok(NormPower::Two),
            "inf" | "Inf" | "INF" => Ok(NormPower::Inf),
            other => Err(SrpError::Parse(format!("unknown norm power '{other}'"))),
        }
    }
}

/// Ordered correspondence sets `P`, `Q` as `d×n` matrices (column `i` is the
/// `i`-th point of each set).
#[derive(Debug, Clone)]
pub struct PointPairs {
    p: DMatrix<f64>,
    q: DMatrix<f64>,
}

impl PointPairs {
    pub fn new(p: DMatrix<f64>, q: DMatrix<f64>) -> Result<Self> {
        if p.shape() != q.shape() {
            return Err(SrpError::DimensionMismatch(format!(
                "P is {}x{} but Q is {}x{}",
                p.nrows(),
                p.ncols(),
                q.nrows(),
                q.ncols()
            )));
        }
        if p.nrows() == 0 || p.ncols() == 0 {
            return Err(SrpError::InvalidArgument(
                "point pairs want d >= 1 and n >= 1".into(),
            ));
        }
        if p.iter().chain(q.iter()).any(|x| !x.is_finite()) {
            return Err(SrpError::NonFinite("point pair entries".into()));
        }
        Ok(Self { p, q })
    }

    pub fn dim(&self) -> usize {
        self.p.nrows()
    }

    pub fn len(&self) -> usize {
        self.p.ncols()
    }

    pub fn p(&self) -> &DMatrix<f64> {
        &self.p
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    /// Median over pairs of `sqrt(‖p_i‖² + ‖q_i‖²)`; the dimensionless data
    /// scale used for smoothing schedules and damping floors.
    pub fn residual_scale(&self) -> f64 {
        let mut scales: Vec<f64> = (0..self.len())
            .map(|i| (self.p.column(i).norm_squared() + self.q.column(i).norm_squared()).sqrt())
            .collect();
        scales.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let m = scales.len();
        let med = if m % 2 == 1 {
            scales[m / 2]
        } else {
            0.5 * (scales[m / 2 - 1] + scales[m / 2])
        };
        med.max(f64::MIN_POSITIVE)
    }
}

/// An orthogonal matrix and a translation: the feasible output of the rigid
/// problem. `r^T r = I` to 1e-8.
#[derive(Debug, Clone)]
pub struct RigidMotion {
    pub r: DMatrix<f64>,
    pub t: DVector<f64>,
}

impl RigidMotion {
    pub fn new(r: DMatrix<f64>, t: DVector<f64>) -> Result<Self> {
        if r.nrows() != r.ncols() || r.nrows() != t.len() {
            return Err(SrpError::DimensionMismatch(format!(
                "rigid motion wants square R matching t, got {}x{} and {}",
                r.nrows(),
                r.ncols(),
                t.len()
            )));
        }
        let d = r.nrows();
        let defect = (r.transpose() * &r - DMatrix::identity(d, d)).norm();
        if !(defect <= 1e-8) {
            return Err(SrpError::InvalidArgument(format!(
                "R is not orthogonal (defect {defect:.3e})"
            )));
        }
        Ok(Self { r, t })
    }

    pub fn identity(d: usize) -> Self {
        Self {
            r: DMatrix::identity(d, d),
            t: DVector::zeros(d),
        }
    }

    pub fn dim(&self) -> usize {
        self.t.len()
    }
}

/// Candidate `(A, t, s)` for the convex relaxation together with its
/// objective value, which certifies a lower bound on the robust optimum.
#[derive(Debug, Clone)]
pub struct RelaxedSolution {
    pub a: DMatrix<f64>,
    pub t: DVector<f64>,
    pub s: DVector<f64>,
    pub objective: f64,
    pub p: NormPower,
}

/// Non-centered covariance matrices of two unpaired point pools, plus their
/// singular values (used by the balancing factors).
#[derive(Debug, Clone)]
pub struct CovariancePair {
    pub cov_p: DMatrix<f64>,
    pub cov_q: DMatrix<f64>,
    pub sigma: DVector<f64>,
    pub tau: DVector<f64>,
}

impl CovariancePair {
    pub fn new(cov_p: DMatrix<f64>, cov_q: DMatrix<f64>) -> Result<Self> {
        if cov_p.nrows() != cov_p.ncols()
            || cov_q.nrows() != cov_q.ncols()
            || cov_p.nrows() != cov_q.nrows()
        {
            return Err(SrpError::DimensionMismatch(
                "covariance pair wants two square matrices of equal size".into(),
            ));
        }
        for (c, name) in [(&cov_p, "cov(P~)"), (&cov_q, "cov(Q~)")] {
            let scale = 1.0 + c.norm();
            if (c.transpose() - c).norm() > 1e-10 * scale {
                return Err(SrpError::InvalidArgument(format!(
                    "{name} is not symmetric"
                )));
            }
            let eig = c.clone().symmetric_eigen();
            let min = eig.eigenvalues.min();
            if min < -1e-10 * scale {
                return Err(SrpError::InvalidArgument(format!(
                    "{name} is not positive semidefinite (min eigenvalue {min:.3e})"
                )));
            }
        }
        let sigma = numerics::svd(&cov_p)?.singular_values;
        let tau = numerics::svd(&cov_q)?.singular_values;
        Ok(Self {
            cov_p,
            cov_q,
            sigma,
            tau,
        })
    }

    /// Build from raw unpaired pools: `cov = (1/n) X X^T`, non-centered.
    pub fn from_pools(ptilde: &DMatrix<f64>, qtilde: &DMatrix<f64>) -> Result<Self> {
        if ptilde.nrows() != qtilde.nrows() {
            return Err(SrpError::DimensionMismatch(
                "pools want matching point dimension".into(),
            ));
        }
        if ptilde.ncols() == 0 || qtilde.ncols() == 0 {
            return Err(SrpError::InvalidArgument("pools want n >= 1".into()));
        }
        let cp = ptilde * ptilde.transpose() / ptilde.ncols() as f64;
        let cq = qtilde * qtilde.transpose() / qtilde.ncols() as f64;
        // (1/n) X X^T is symmetric up to rounding; symmetrize exactly.
        Self::new(0.5 * (&cp + cp.transpose()), 0.5 * (&cq + cq.transpose()))
    }

    pub fn dim(&self) -> usize {
        self.cov_p.nrows()
    }

    /// `max_{i,j} |sigma_i − tau_j|`, the denominator of the balancing
    /// factors.
    pub fn max_spectral_gap(&self) -> f64 {
        let mut gap: f64 = 0.0;
        for i in 0..self.sigma.len() {
            for j in 0..self.tau.len() {
                gap = gap.max((self.sigma[i] - self.tau[j]).abs());
            }
        }
        gap
    }
}

fn check_dims_motion(m: &RigidMotion, pts: &PointPairs) -> Result<()> {
    if m.dim() != pts.dim() {
        return Err(SrpError::DimensionMismatch(format!(
            "motion dimension {} vs points dimension {}",
            m.dim(),
            pts.dim()
        )));
    }
    Ok(())
}

fn check_dims_relaxed(
    a: &DMatrix<f64>,
    t: Option<&DVector<f64>>,
    s: Option<&DVector<f64>>,
    pts: &PointPairs,
) -> Result<()> {
    let d = pts.dim();
    if a.nrows() != d || a.ncols() != d {
        return Err(SrpError::DimensionMismatch(format!(
            "A is {}x{} but points live in dimension {d}",
            a.nrows(),
            a.ncols()
        )));
    }
    for (v, name) in [(t, "t"), (s, "s")] {
        if let Some(v) = v {
            if v.len() != d {
                return Err(SrpError::DimensionMismatch(format!(
                    "{name} has length {} but points live in dimension {d}",
                    v.len()
                )));
            }
        }
    }
    Ok(())
}

/// Robust rigid energy `E(R,t) = Σ ‖R p_i − q_i + t‖`.
pub fn energy_robust(m: &RigidMotion, pts: &PointPairs) -> Result<f64> {
    check_dims_motion(m, pts)?;
    let rp = &m.r * pts.p();
    Ok((0..pts.len())
        .map(|i| (rp.column(i) - pts.q().column(i) + &m.t).norm())
        .sum())
}

/// Least-squares Procrustes energy `Σ ‖R p_i − q_i + t‖²`.
pub fn energy_procrustes(m: &RigidMotion, pts: &PointPairs) -> Result<f64> {
    check_dims_motion(m, pts)?;
    let rp = &m.r * pts.p();
    Ok((0..pts.len())
        .map(|i| (rp.column(i) - pts.q().column(i) + &m.t).norm_squared())
        .sum())
}

/// Per-pair combination of the forward and backward residual norms.
fn term_value(p: NormPower, forward: f64, backward: f64) -> f64 {
    match p {
        NormPower::One => 0.5 * (forward + backward),
        NormPower::Two => (0.5 * (forward * forward + backward * backward)).sqrt(),
        NormPower::Inf => forward.max(backward),
    }
}

/// Symmetrized relaxed energy with translations,
/// `E_p(A,t,s) = Σ ((‖A p_i − q_i + t‖^p + ‖A^T q_i − p_i + s‖^p)/2)^{1/p}`.
pub fn energy_relaxed_rigid(
    a: &DMatrix<f64>,
    t: &DVector<f64>,
    s: &DVector<f64>,
    pts: &PointPairs,
    p: NormPower,
) -> Result<f64> {
    check_dims_relaxed(a, Some(t), Some(s), pts)?;
    let ap = a * pts.p();
    let atq = a.transpose() * pts.q();
    Ok((0..pts.len())
        .map(|i| {
            let forward = (ap.column(i) - pts.q().column(i) + t).norm();
            let backward = (atq.column(i) - pts.p().column(i) + s).norm();
            term_value(p, forward, backward)
        })
        .sum())
}

/// Symmetrized relaxed energy without translations, `E_p(A)`.
pub fn energy_relaxed_orth(a: &DMatrix<f64>, pts: &PointPairs, p: NormPower) -> Result<f64> {
    let d = pts.dim();
    energy_relaxed_rigid(a, &DVector::zeros(d), &DVector::zeros(d), pts, p)
}

/// Non-symmetrized relaxed energy `Σ ‖A p_i + t − q_i‖`.
pub fn energy_nonsym(a: &DMatrix<f64>, t: &DVector<f64>, pts: &PointPairs) -> Result<f64> {
    check_dims_relaxed(a, Some(t), None, pts)?;
    let ap = a * pts.p();
    Ok((0..pts.len())
        .map(|i| (ap.column(i) + t - pts.q().column(i)).norm())
        .sum())
}

/// Translated symmetrized energy `F_p(A, p0, q0)`: the points are shifted by
/// `−p0`, `−q0` before evaluating `E_p(A)`.
pub fn energy_translated(
    a: &DMatrix<f64>,
    p0: &DVector<f64>,
    q0: &DVector<f64>,
    pts: &PointPairs,
    p: NormPower,
) -> Result<f64> {
    check_dims_relaxed(a, Some(p0), Some(q0), pts)?;
    let ap0 = a * p0;
    let atq0 = a.transpose() * q0;
    let ap = a * pts.p();
    let atq = a.transpose() * pts.q();
    Ok((0..pts.len())
        .map(|i| {
            let forward = (ap.column(i) - &ap0 - (pts.q().column(i) - q0)).norm();
            let backward = (atq.column(i) - &atq0 - (pts.p().column(i) - p0)).norm();
            term_value(p, forward, backward)
        })
        .sum())
}

/// Covariance energy `E_cov(A) = ‖A·cov(P~) − cov(Q~)·A‖_F`.
pub fn covariance_energy(a: &DMatrix<f64>, cov: &CovariancePair) -> Result<f64> {
    if a.nrows() != cov.dim() || a.ncols() != cov.dim() {
        return Err(SrpError::DimensionMismatch(format!(
            "A is {}x{} but covariances are {}x{}",
            a.nrows(),
            a.ncols(),
            cov.dim(),
            cov.dim()
        )));
    }
    Ok((a * &cov.cov_p - &cov.cov_q * a).norm())
}

/// Which convex relaxation a solver or evaluator works on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RelaxKind {
    /// Symmetrized energy with the given norm power.
    Symmetrized(NormPower),
    /// Plain sum of forward residual norms.
    NonSym,
}

/// A convex problem instance: data, relaxation kind, whether translation
/// variables are present, and an optional covariance regularizer.
///
/// Variables are flattened as `x = [vec(A) column-major | t | s]`; `t` exists
/// only with translations, `s` only for symmetrized kinds with translations.
#[derive(Clone)]
pub struct SmoothedProblem<'a> {
    pub pts: &'a PointPairs,
    pub kind: RelaxKind,
    pub translations: bool,
    /// `(covariances, lambda)`; ignored when `lambda == 0`.
    pub cov: Option<(&'a CovariancePair, f64)>,
}

impl<'a> SmoothedProblem<'a> {
    pub fn new(pts: &'a PointPairs, kind: RelaxKind, translations: bool) -> Self {
        Self {
            pts,
            kind,
            translations,
            cov: None,
        }
    }

    pub fn with_cov(mut self, cov: &'a CovariancePair, lambda: f64) -> Self {
        self.cov = Some((cov, lambda));
        self
    }

    pub fn has_s(&self) -> bool {
        self.translations && matches!(self.kind, RelaxKind::Symmetrized(_))
    }

    pub fn dim_vars(&self) -> usize {
        let d = self.pts.dim();
        d * d + if self.translations { d } else { 0 } + if self.has_s() { d } else { 0 }
    }

    pub fn pack(&self, a: &DMatrix<f64>, t: &DVector<f64>, s: &DVector<f64>) -> DVector<f64> {
        let d = self.pts.dim();
        let mut x = DVector::zeros(self.dim_vars());
        x.rows_mut(0, d * d).copy_from_slice(a.as_slice());
        if self.translations {
            x.rows_mut(d * d, d).copy_from(t);
        }
        if self.has_s() {
            x.rows_mut(d * d + d, d).copy_from(s);
        }
        x
    }

    /// Split the flat variable vector into `(A, t, s)`; absent blocks are
    /// zero.
    pub fn unpack(&self, x: &DVector<f64>) -> (DMatrix<f64>, DVector<f64>, DVector<f64>) {
        let d = self.pts.dim();
        let a = DMatrix::from_column_slice(d, d, &x.as_slice()[0..d * d]);
        let t = if self.translations {
            x.rows(d * d, d).into_owned()
        } else {
            DVector::zeros(d)
        };
        let s = if self.has_s() {
            x.rows(d * d + d, d).into_owned()
        } else {
            DVector::zeros(d)
        };
        (a, t, s)
    }

    /// Exact (non-smoothed) objective value at `x`.
    pub fn true_value(&self, x: &DVector<f64>) -> f64 {
        let (a, t, s) = self.unpack(x);
        let mut v = match self.kind {
            RelaxKind::Symmetrized(p) => {
                energy_relaxed_rigid(&a, &t, &s, self.pts, p).expect("dims fixed by layout")
            }
            RelaxKind::NonSym => energy_nonsym(&a, &t, self.pts).expect("dims fixed by layout"),
        };
        if let Some((cov, lambda)) = self.cov {
            if lambda > 0.0 {
                v += lambda * covariance_energy(&a, cov).expect("dims checked at solve entry");
            }
        }
        v
    }

    /// Value and exact gradient of the eps-smoothed objective.
    ///
    /// Norms are smoothed as `‖v‖ → sqrt(‖v‖² + ε²)` and the per-pair max of
    /// `E_∞` as `(a+b+sqrt((a−b)²+ε²))/2`; for `p = ∞` the inner norms use
    /// scale `ε/2` so that every term shape obeys `0 ≤ smoothed − true ≤ ε`
    /// (constant `c = 1`), giving a total gap of at most `n·ε` (plus one ε
    /// for the covariance term when present).
    pub fn smoothed_value_and_gradient(
        &self,
        x: &DVector<f64>,
        eps: f64,
    ) -> Result<(f64, DVector<f64>)> {
        if !(eps > 0.0) {
            return Err(SrpError::InvalidArgument(
                "smoothing scale eps must be > 0".into(),
            ));
        }
        let d = self.pts.dim();
        let n = self.pts.len();
        let (a, t, s) = self.unpack(x);
        let symmetrized = matches!(self.kind, RelaxKind::Symmetrized(_));

        let ap = &a * self.pts.p();
        let atq = if symmetrized {
            Some(a.transpose() * self.pts.q())
        } else {
            None
        };

        let mut value = 0.0;
        let mut ga = DMatrix::<f64>::zeros(d, d);
        let mut gt = DVector::<f64>::zeros(d);
        let mut gs = DVector::<f64>::zeros(d);

        for i in 0..n {
            let rf = ap.column(i) + &t - self.pts.q().column(i);
            let nf = rf.norm();
            match self.kind {
                RelaxKind::NonSym => {
                    let sf = (nf * nf + eps * eps).sqrt();
                    value += sf;
                    let wf = 1.0 / sf;
                    ga += wf * &rf * self.pts.p().column(i).transpose();
                    if self.translations {
                        gt += wf * &rf;
                    }
                }
                RelaxKind::Symmetrized(p) => {
                    let rb = atq.as_ref().unwrap().column(i) + &s - self.pts.p().column(i);
                    let nb = rb.norm();
                    let (wf, wb) = match p {
                        NormPower::One => {
                            let sf = (nf * nf + eps * eps).sqrt();
                            let sb = (nb * nb + eps * eps).sqrt();
                            value += 0.5 * (sf + sb);
                            (0.5 / sf, 0.5 / sb)
                        }
                        NormPower::Two => {
                            let v = (0.5 * (nf * nf + nb * nb) + eps * eps).sqrt();
                            value += v;
                            (0.5 / v, 0.5 / v)
                        }
                        NormPower::Inf => {
                            let en = 0.5 * eps;
                            let sf = (nf * nf + en * en).sqrt();
                            let sb = (nb * nb + en * en).sqrt();
                            let gap = sf - sb;
                            let sm = (gap * gap + eps * eps).sqrt();
                            value += 0.5 * (sf + sb + sm);
                            let dvf = 0.5 * (1.0 + gap / sm);
                            let dvb = 0.5 * (1.0 - gap / sm);
                            (dvf / sf, dvb / sb)
                        }
                    };
                    ga += wf * &rf * self.pts.p().column(i).transpose();
                    ga += wb * self.pts.q().column(i) * rb.transpose();
                    if self.translations {
                        gt += wf * &rf;
                        gs += wb * &rb;
                    }
                }
            }
        }

        if let Some((cov, lambda)) = self.cov {
            if lambda > 0.0 {
                let m = &a * &cov.cov_p - &cov.cov_q * &a;
                let vc = (lambda * lambda * m.norm_squared() + eps * eps).sqrt();
                value += vc;
                ga += (lambda * lambda / vc) * (&m * &cov.cov_p - &cov.cov_q * &m);
            }
        }

        let mut g = DVector::zeros(self.dim_vars());
        g.rows_mut(0, d * d).copy_from_slice(ga.as_slice());
        if self.translations {
            g.rows_mut(d * d, d).copy_from(&gt);
        }
        if self.has_s() {
            g.rows_mut(d * d + d, d).copy_from(&gs);
        }
        Ok((value, g))
    }
}

/// Free-function form of [`SmoothedProblem::smoothed_value_and_gradient`].
pub fn smoothed_value_and_gradient(
    problem: &SmoothedProblem<'_>,
    x: &DVector<f64>,
    eps: f64,
) -> Result<(f64, DVector<f64>)> {
    problem.smoothed_value_and_gradient(x, eps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::random_orthogonal;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn gaussian_matrix<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> DMatrix<f64> {
        DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
    }

    fn gaussian_vector<R: Rng>(len: usize, rng: &mut R) -> DVector<f64> {
        DVector::from_fn(len, |_, _| rng.sample::<f64, _>(StandardNormal))
    }

    fn random_pairs<R: Rng>(d: usize, n: usize, rng: &mut R) -> PointPairs {
        PointPairs::new(gaussian_matrix(d, n, rng), gaussian_matrix(d, n, rng)).unwrap()
    }

    fn exact_fit_instance<R: Rng>(d: usize, n: usize, rng: &mut R) -> (PointPairs, RigidMotion) {
        let r0 = random_orthogonal(d, rng).unwrap();
        let t0 = gaussian_vector(d, rng);
        let p = gaussian_matrix(d, n, rng);
        let mut q = &r0 * &p;
        for mut col in q.column_iter_mut() {
            col += &t0;
        }
        (
            PointPairs::new(p, q).unwrap(),
            RigidMotion::new(r0, t0).unwrap(),
        )
    }

    const ALL_P: [NormPower; 3] = [NormPower::One, NormPower::Two, NormPower::Inf];

    #[test]
    fn point_pairs_validation() {
        assert!(PointPairs::new(DMatrix::zeros(2, 3), DMatrix::zeros(2, 2)).is_err());
        assert!(PointPairs::new(DMatrix::zeros(2, 0), DMatrix::zeros(2, 0)).is_err());
        let mut p = DMatrix::zeros(2, 2);
        p[(0, 0)] = f64::INFINITY;
        assert!(PointPairs::new(p, DMatrix::zeros(2, 2)).is_err());
    }

    #[test]
    fn rigid_motion_rejects_non_orthogonal() {
        let r = DMatrix::identity(2, 2) * 1.1;
        assert!(RigidMotion::new(r, DVector::zeros(2)).is_err());
    }

    #[test]
    fn energy_robust_exact_fit_is_zero() {
        let (pts, truth) = exact_fit_instance(3, 12, &mut rng(1));
        assert!(energy_robust(&truth, &pts).unwrap() <= 1e-12);
    }

    #[test]
    fn energy_robust_scalar_case() {
        let pts = PointPairs::new(
            DMatrix::from_vec(1, 1, vec![1.0]),
            DMatrix::from_vec(1, 1, vec![3.0]),
        )
        .unwrap();
        let m = RigidMotion::identity(1);
        assert_relative_eq!(energy_robust(&m, &pts).unwrap(), 2.0);
    }

    #[test]
    fn energy_robust_matches_naive_resummation() {
        let mut r = rng(2);
        let pts = random_pairs(3, 17, &mut r);
        let m = RigidMotion::new(random_orthogonal(3, &mut r).unwrap(), gaussian_vector(3, &mut r))
            .unwrap();
        let mut oracle = 0.0;
        for i in 0..pts.len() {
            let mut sq = 0.0;
            for k in 0..3 {
                let mut v = m.t[k] - pts.q()[(k, i)];
                for l in 0..3 {
                    v += m.r[(k, l)] * pts.p()[(l, i)];
                }
                sq += v * v;
            }
            oracle += sq.sqrt();
        }
        assert_relative_eq!(energy_robust(&m, &pts).unwrap(), oracle, epsilon = 1e-12);
    }

    #[test]
    fn energy_procrustes_cases() {
        let (pts, truth) = exact_fit_instance(2, 8, &mut rng(3));
        assert!(energy_procrustes(&truth, &pts).unwrap() <= 1e-24);

        let pts = PointPairs::new(
            DMatrix::from_vec(1, 2, vec![1.0, 2.0]),
            DMatrix::from_vec(1, 2, vec![0.0, 0.0]),
        )
        .unwrap();
        assert_relative_eq!(
            energy_procrustes(&RigidMotion::identity(1), &pts).unwrap(),
            5.0
        );
    }

    #[test]
    fn energy_procrustes_matches_naive_resummation() {
        let mut r = rng(4);
        let pts = random_pairs(2, 9, &mut r);
        let m = RigidMotion::new(random_orthogonal(2, &mut r).unwrap(), gaussian_vector(2, &mut r))
            .unwrap();
        let oracle: f64 = (0..pts.len())
            .map(|i| {
                (0..2)
                    .map(|k| {
                        let v = m.r[(k, 0)] * pts.p()[(0, i)] + m.r[(k, 1)] * pts.p()[(1, i)]
                            - pts.q()[(k, i)]
                            + m.t[k];
                        v * v
                    })
                    .sum::<f64>()
            })
            .sum();
        assert_relative_eq!(energy_procrustes(&m, &pts).unwrap(), oracle, epsilon = 1e-12);
    }

    #[test]
    fn relaxed_orth_coincides_with_robust_on_orthogonal_input() {
        let mut r = rng(5);
        let pts = random_pairs(3, 11, &mut r);
        let q = random_orthogonal(3, &mut r).unwrap();
        let robust = energy_robust(
            &RigidMotion::new(q.clone(), DVector::zeros(3)).unwrap(),
            &pts,
        )
        .unwrap();
        for p in ALL_P {
            assert_relative_eq!(
                energy_relaxed_orth(&q, &pts, p).unwrap(),
                robust,
                epsilon = 1e-10
            );
        }
    }

    #[test]
    fn relaxed_orth_at_zero_map() {
        let mut r = rng(6);
        let pts = random_pairs(3, 7, &mut r);
        let zero = DMatrix::zeros(3, 3);
        for p in ALL_P {
            let expected: f64 = (0..pts.len())
                .map(|i| {
                    let np = pts.p().column(i).norm();
                    let nq = pts.q().column(i).norm();
                    match p {
                        NormPower::One => 0.5 * (np + nq),
                        NormPower::Two => (0.5 * (np * np + nq * nq)).sqrt(),
                        NormPower::Inf => np.max(nq),
                    }
                })
                .sum();
            assert_relative_eq!(
                energy_relaxed_orth(&zero, &pts, p).unwrap(),
                expected,
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn relaxed_energy_is_monotone_in_p() {
        let mut r = rng(7);
        for _ in 0..1000 {
            let d = 1 + (r.random::<u32>() % 4) as usize;
            let pts = random_pairs(d, 1 + (r.random::<u32>() % 8) as usize, &mut r);
            let a = gaussian_matrix(d, d, &mut r);
            let t = gaussian_vector(d, &mut r);
            let s = gaussian_vector(d, &mut r);
            let e1 = energy_relaxed_rigid(&a, &t, &s, &pts, NormPower::One).unwrap();
            let e2 = energy_relaxed_rigid(&a, &t, &s, &pts, NormPower::Two).unwrap();
            let einf = energy_relaxed_rigid(&a, &t, &s, &pts, NormPower::Inf).unwrap();
            assert!(e1 <= e2 + 1e-12 && e2 <= einf + 1e-12);
        }
    }

    #[test]
    fn relaxed_rigid_coincides_on_feasible_set() {
        let mut r = rng(8);
        for _ in 0..1000 {
            let d = 1 + (r.random::<u32>() % 4) as usize;
            let pts = random_pairs(d, 1 + (r.random::<u32>() % 6) as usize, &mut r);
            let q = random_orthogonal(d, &mut r).unwrap();
            let t = gaussian_vector(d, &mut r);
            let s = -(q.transpose() * &t);
            let m = RigidMotion::new(q.clone(), t.clone()).unwrap();
            let robust = energy_robust(&m, &pts).unwrap();
            for p in ALL_P {
                let relaxed = energy_relaxed_rigid(&q, &t, &s, &pts, p).unwrap();
                assert!(
                    (relaxed - robust).abs() <= 1e-10 * (1.0 + robust),
                    "p={p} relaxed={relaxed} robust={robust}"
                );
            }
        }
    }

    #[test]
    fn relaxed_rigid_reduces_to_orth_at_zero_translations() {
        let mut r = rng(9);
        let pts = random_pairs(4, 6, &mut r);
        let a = gaussian_matrix(4, 4, &mut r);
        let z = DVector::zeros(4);
        for p in ALL_P {
            // Exact equality: the same code path with zero offsets.
            assert_eq!(
                energy_relaxed_rigid(&a, &z, &z, &pts, p).unwrap(),
                energy_relaxed_orth(&a, &pts, p).unwrap()
            );
        }
    }

    #[test]
    fn relaxed_rigid_matches_naive_resummation() {
        let mut r = rng(10);
        let pts = random_pairs(3, 13, &mut r);
        let a = gaussian_matrix(3, 3, &mut r);
        let t = gaussian_vector(3, &mut r);
        let s = gaussian_vector(3, &mut r);
        for p in ALL_P {
            let mut oracle = 0.0;
            for i in 0..pts.len() {
                let rf = (&a * pts.p().column(i) - pts.q().column(i) + &t).norm();
                let rb = (a.transpose() * pts.q().column(i) - pts.p().column(i) + &s).norm();
                oracle += match p {
                    NormPower::One => 0.5 * (rf + rb),
                    NormPower::Two => (0.5 * (rf * rf + rb * rb)).sqrt(),
                    NormPower::Inf => rf.max(rb),
                };
            }
            assert_relative_eq!(
                energy_relaxed_rigid(&a, &t, &s, &pts, p).unwrap(),
                oracle,
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn translated_energy_cases() {
        let mut r = rng(11);
        let pts = random_pairs(3, 9, &mut r);
        let a = gaussian_matrix(3, 3, &mut r);
        let z = DVector::zeros(3);
        for p in ALL_P {
            // Zero anchors reduce to the plain energy.
            assert_relative_eq!(
                energy_translated(&a, &z, &z, &pts, p).unwrap(),
                energy_relaxed_orth(&a, &pts, p).unwrap(),
                epsilon = 1e-12
            );

            // Anchoring at pair 1 kills its own term for any A.
            let p0 = pts.p().column(0).into_owned();
            let q0 = pts.q().column(0).into_owned();
            let anchored = energy_translated(&a, &p0, &q0, &pts, p).unwrap();
            let shifted_p = DMatrix::from_fn(3, pts.len(), |k, i| pts.p()[(k, i)] - p0[k]);
            let shifted_q = DMatrix::from_fn(3, pts.len(), |k, i| pts.q()[(k, i)] - q0[k]);
            let shifted = PointPairs::new(shifted_p, shifted_q).unwrap();
            let oracle = energy_relaxed_orth(&a, &shifted, p).unwrap();
            assert_relative_eq!(anchored, oracle, epsilon = 1e-12);
            // Term 1 of the anchored sum is zero, so dropping pair 1 changes
            // nothing.
            let keep: Vec<usize> = (1..pts.len()).collect();
            let rest = PointPairs::new(
                DMatrix::from_fn(3, keep.len(), |k, i| shifted.p()[(k, keep[i])]),
                DMatrix::from_fn(3, keep.len(), |k, i| shifted.q()[(k, keep[i])]),
            )
            .unwrap();
            assert_relative_eq!(
                anchored,
                energy_relaxed_orth(&a, &rest, p).unwrap(),
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn covariance_energy_vanishes_for_permuted_rotated_pool() {
        let mut r = rng(12);
        let d = 4;
        let n = 40;
        let r0 = random_orthogonal(d, &mut r).unwrap();
        let ptilde = gaussian_matrix(d, n, &mut r);
        // Q~ = R0 * P~ * Pi for a random permutation Pi.
        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let j = (r.random::<u64>() % (i as u64 + 1)) as usize;
            perm.swap(i, j);
        }
        let rp = &r0 * &ptilde;
        let qtilde = DMatrix::from_fn(d, n, |k, i| rp[(k, perm[i])]);
        let cov = CovariancePair::from_pools(&ptilde, &qtilde).unwrap();
        assert!(covariance_energy(&r0, &cov).unwrap() <= 1e-10);
    }

    #[test]
    fn covariance_energy_identity_covariances_commute() {
        let cov = CovariancePair::new(DMatrix::identity(3, 3), DMatrix::identity(3, 3)).unwrap();
        let a = gaussian_matrix(3, 3, &mut rng(13));
        assert_eq!(covariance_energy(&a, &cov).unwrap(), 0.0);
    }

    #[test]
    fn covariance_energy_matches_entrywise_oracle() {
        let mut r = rng(14);
        let ptilde = gaussian_matrix(3, 20, &mut r);
        let qtilde = gaussian_matrix(3, 25, &mut r);
        let cov = CovariancePair::from_pools(&ptilde, &qtilde).unwrap();
        let a = gaussian_matrix(3, 3, &mut r);
        let mut sq = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                let mut v = 0.0;
                for k in 0..3 {
                    v += a[(i, k)] * cov.cov_p[(k, j)] - cov.cov_q[(i, k)] * a[(k, j)];
                }
                sq += v * v;
            }
        }
        assert_relative_eq!(
            covariance_energy(&a, &cov).unwrap(),
            sq.sqrt(),
            epsilon = 1e-12
        );
    }

    fn all_problem_shapes<'a>(
        pts: &'a PointPairs,
        cov: &'a CovariancePair,
    ) -> Vec<SmoothedProblem<'a>> {
        let mut shapes = Vec::new();
        for p in ALL_P {
            for translations in [false, true] {
                shapes.push(SmoothedProblem::new(
                    pts,
                    RelaxKind::Symmetrized(p),
                    translations,
                ));
            }
        }
        shapes.push(SmoothedProblem::new(pts, RelaxKind::NonSym, false));
        shapes.push(SmoothedProblem::new(pts, RelaxKind::NonSym, true));
        shapes.push(
            SmoothedProblem::new(pts, RelaxKind::Symmetrized(NormPower::Two), false)
                .with_cov(cov, 0.7),
        );
        shapes
    }

    #[test]
    fn smoothed_gradient_matches_central_differences() {
        let mut r = rng(15);
        let pts = random_pairs(3, 5, &mut r);
        let ptilde = gaussian_matrix(3, 12, &mut r);
        let qtilde = gaussian_matrix(3, 12, &mut r);
        let cov = CovariancePair::from_pools(&ptilde, &qtilde).unwrap();
        let eps = 1e-6;
        let h = 1e-5;
        let mut checked = 0;
        for problem in all_problem_shapes(&pts, &cov) {
            for _ in 0..12 {
                let x = gaussian_vector(problem.dim_vars(), &mut r);
                let (_, g) = problem.smoothed_value_and_gradient(&x, eps).unwrap();
                for k in 0..x.len() {
                    let mut xp = x.clone();
                    let mut xm = x.clone();
                    xp[k] += h;
                    xm[k] -= h;
                    let (vp, _) = problem.smoothed_value_and_gradient(&xp, eps).unwrap();
                    let (vm, _) = problem.smoothed_value_and_gradient(&xm, eps).unwrap();
                    let fd = (vp - vm) / (2.0 * h);
                    assert!(
                        (fd - g[k]).abs() <= 1e-5,
                        "kind {:?} translations {} coord {k}: fd {fd} vs grad {}",
                        problem.kind,
                        problem.translations,
                        g[k]
                    );
                }
                checked += 1;
            }
        }
        assert!(checked >= 100);
    }

    #[test]
    fn smoothed_value_at_exact_fit_is_n_eps() {
        let (pts, truth) = exact_fit_instance(3, 9, &mut rng(16));
        let problem = SmoothedProblem::new(&pts, RelaxKind::Symmetrized(NormPower::Two), true);
        let s = -(truth.r.transpose() * &truth.t);
        let x = problem.pack(&truth.r, &truth.t, &s);
        for eps in [1e-2, 1e-5] {
            let (v, _) = problem.smoothed_value_and_gradient(&x, eps).unwrap();
            assert_relative_eq!(v, pts.len() as f64 * eps, max_relative = 1e-10);
        }
    }

    #[test]
    fn smoothed_value_dominates_true_value_within_n_eps() {
        let mut r = rng(17);
        let pts = random_pairs(2, 6, &mut r);
        let ptilde = gaussian_matrix(2, 9, &mut r);
        let qtilde = gaussian_matrix(2, 9, &mut r);
        let cov = CovariancePair::from_pools(&ptilde, &qtilde).unwrap();
        for problem in all_problem_shapes(&pts, &cov) {
            for _ in 0..40 {
                let x = gaussian_vector(problem.dim_vars(), &mut r);
                let truth = problem.true_value(&x);
                for eps in [1e-1, 1e-3, 1e-7] {
                    let (v, _) = problem.smoothed_value_and_gradient(&x, eps).unwrap();
                    assert!(v >= truth - 1e-12);
                    // n terms plus at most one covariance term.
                    assert!(v - truth <= (pts.len() as f64 + 1.0) * eps + 1e-12);
                }
            }
        }
    }

    #[test]
    fn smoothed_rejects_nonpositive_eps() {
        let pts = random_pairs(2, 3, &mut rng(18));
        let problem = SmoothedProblem::new(&pts, RelaxKind::NonSym, false);
        let x = DVector::zeros(problem.dim_vars());
        assert!(problem.smoothed_value_and_gradient(&x, 0.0).is_err());
    }

    #[test]
    fn energies_are_nonnegative_and_zero_only_at_exact_fit() {
        let (pts, truth) = exact_fit_instance(3, 6, &mut rng(19));
        let s = -(truth.r.transpose() * &truth.t);
        for p in ALL_P {
            assert!(energy_relaxed_rigid(&truth.r, &truth.t, &s, &pts, p).unwrap() <= 1e-12);
        }
        // Perturbing any residual makes the energy strictly positive.
        let mut r = rng(20);
        let a = &truth.r + gaussian_matrix(3, 3, &mut r) * 0.1;
        for p in ALL_P {
            assert!(energy_relaxed_rigid(&a, &truth.t, &s, &pts, p).unwrap() > 0.0);
        }
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let pts = random_pairs(3, 4, &mut rng(21));
        let a = DMatrix::zeros(2, 2);
        assert!(energy_relaxed_orth(&a, &pts, NormPower::Two).is_err());
        let m = RigidMotion::identity(2);
        assert!(energy_robust(&m, &pts).is_err());
    }

    #[test]
    fn covariance_pair_rejects_asymmetric_input() {
        let mut c = DMatrix::identity(3, 3);
        c[(0, 1)] = 0.5;
        assert!(CovariancePair::new(c, DMatrix::identity(3, 3)).is_err());
    }

    #[test]
    fn max_spectral_gap_of_diagonal_pair() {
        let cov = CovariancePair::new(
            DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 1.0])),
            DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 0.5])),
        )
        .unwrap();
        assert_relative_eq!(cov.max_spectral_gap(), 3.5, epsilon = 1e-12);
    }
}
