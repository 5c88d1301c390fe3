//! End-to-end alignment pipelines: relax-and-project with certified lower
//! bounds, the closed-form weighted Procrustes solve, the IRLS baseline, and
//! semi-supervised covariance-regularized alignment.
//!
//! Every pipeline returns the feasible motion together with the achieved
//! robust energy and the relaxation's certified lower bound; their quotient
//! is the observed approximation ratio (bounded by √2 for the p = 2
//! pipelines, 2√2 / 2 for p = ∞ rigid / orthogonal).

use nalgebra::{DMatrix, DVector};

use crate::numerics::{geometric_median, project_orthogonal, svd};
use crate::objectives::{
    energy_robust, CovariancePair, NormPower, PointPairs, RigidMotion,
};
use crate::solvers::{
    solve_nonsym, solve_relaxation_orth, solve_relaxation_rigid, solve_with_covariance,
    CovVariant, SolveReport, SolverConfig, Stopwatch,
};
use crate::{Result, SrpError};

/// Tolerance of the Weiszfeld solve for the translation subproblem.
const TRANSLATION_TOL: f64 = 1e-10;
const TRANSLATION_MAX_ITER: usize = 10_000;

/// Method roster shared by the pipelines and the benchmark harness.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MethodTag {
    Procrustes,
    Irls,
    IrlsSrp2Init,
    Srp1,
    Srp2,
    SrpInf,
    NonSym,
    SrpSquared,
    LowerBound2,
    LowerBoundInf,
    GroundTruth,
}

impl MethodTag {
    pub const ALL: [MethodTag; 11] = [
        MethodTag::Procrustes,
        MethodTag::Irls,
        MethodTag::IrlsSrp2Init,
        MethodTag::Srp1,
        MethodTag::Srp2,
        MethodTag::SrpInf,
        MethodTag::NonSym,
        MethodTag::SrpSquared,
        MethodTag::LowerBound2,
        MethodTag::LowerBoundInf,
        MethodTag::GroundTruth,
    ];
}

impl std::fmt::Display for MethodTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            MethodTag::Procrustes => "procrustes",
            MethodTag::Irls => "irls",
            MethodTag::IrlsSrp2Init => "irls_srp2_init",
            MethodTag::Srp1 => "srp1",
            MethodTag::Srp2 => "srp2",
            MethodTag::SrpInf => "srpinf",
            MethodTag::NonSym => "nonsym",
            MethodTag::SrpSquared => "srp_squared",
            MethodTag::LowerBound2 => "lower_bound_2",
            MethodTag::LowerBoundInf => "lower_bound_inf",
            MethodTag::GroundTruth => "ground_truth",
        };
        write!(f, "{s}")
    }
}

impl std::str::FromStr for MethodTag {
    type Err = SrpError;
    fn from_str(s: &str) -> Result<Self> {
        MethodTag::ALL
            .iter()
            .find(|m| m.to_string() == s)
            .copied()
            .ok_or_else(|| SrpError::Parse(format!("unknown method tag '{s}'")))
    }
}

fn srp_tag(p: NormPower) -> MethodTag {
    match p {
        NormPower::One => MethodTag::Srp1,
        NormPower::Two => MethodTag::Srp2,
        NormPower::Inf => MethodTag::SrpInf,
    }
}

/// A feasible rigid motion with its achieved robust energy, the certified
/// lower bound of the relaxation it came from, and the observed ratio.
#[derive(Debug, Clone)]
pub struct AlignmentResult {
    pub motion: RigidMotion,
    /// `E(R̂, t̂) = Σ ‖R̂ p_i − q_i + t̂‖`.
    pub achieved_energy: f64,
    /// Optimal value of the convex relaxation (0 for methods without one).
    pub lower_bound: f64,
    /// `achieved_energy / max(lower_bound, 1e-12)`. Meaningless on exact-fit
    /// instances and for methods without a certificate.
    pub ratio: f64,
    pub method: MethodTag,
    pub solve_report: Option<SolveReport>,
    /// Robust energy after each iteration (IRLS only).
    pub energy_trace: Vec<f64>,
}

fn make_result(
    motion: RigidMotion,
    pts: &PointPairs,
    lower_bound: f64,
    method: MethodTag,
    solve_report: Option<SolveReport>,
) -> Result<AlignmentResult> {
    let achieved_energy = energy_robust(&motion, pts)?;
    Ok(AlignmentResult {
        motion,
        achieved_energy,
        lower_bound,
        ratio: achieved_energy / lower_bound.max(1e-12),
        method,
        solve_report,
        energy_trace: Vec::new(),
    })
}

/// Exact minimizer of `t ↦ Σ ‖R p_i − q_i + t‖`: the geometric median of the
/// residuals `{q_i − R p_i}`.
pub fn optimal_translation(r: &DMatrix<f64>, pts: &PointPairs) -> Result<DVector<f64>> {
    let rp = r * pts.p();
    let residuals: Vec<DVector<f64>> = (0..pts.len())
        .map(|i| pts.q().column(i) - rp.column(i))
        .collect();
    geometric_median(&residuals, TRANSLATION_TOL, TRANSLATION_MAX_ITER)
}

/// Orthogonal relax-and-project: minimize `E_p(A)` globally, project onto
/// the nearest orthogonal matrix, report the feasible energy and the bound.
pub fn srp_orth(pts: &PointPairs, cfg: &SolverConfig) -> Result<AlignmentResult> {
    let report = solve_relaxation_orth(pts, cfg)?;
    let r = project_orthogonal(&report.solution.a)?;
    let motion = RigidMotion::new(r, DVector::zeros(pts.dim()))?;
    let lower = report.solution.objective;
    make_result(motion, pts, lower, srp_tag(cfg.p), Some(report))
}

/// Rigid relax-and-project: minimize `E_p(A,t,s)` globally, project `A`,
/// then take the exact translation minimizer given the projected rotation.
pub fn srp_rigid(pts: &PointPairs, cfg: &SolverConfig) -> Result<AlignmentResult> {
    let report = solve_relaxation_rigid(pts, cfg)?;
    let r = project_orthogonal(&report.solution.a)?;
    let t = optimal_translation(&r, pts)?;
    let motion = RigidMotion::new(r, t)?;
    let lower = report.solution.objective;
    make_result(motion, pts, lower, srp_tag(cfg.p), Some(report))
}

/// Closed-form minimizer of the weighted least-squares Procrustes problem
/// `Σ w_i ‖R p_i − q_i + t‖²` over `O(d) × R^d` (no determinant correction).
pub fn weighted_procrustes(pts: &PointPairs, w: &[f64]) -> Result<RigidMotion> {
    if w.len() != pts.len() {
        return Err(SrpError::DimensionMismatch(format!(
            "{} weights for {} pairs",
            w.len(),
            pts.len()
        )));
    }
    if w.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
        return Err(SrpError::InvalidArgument(
            "weights must be finite and nonnegative".into(),
        ));
    }
    let wsum: f64 = w.iter().sum();
    if !(wsum > 0.0) {
        return Err(SrpError::InvalidArgument("all weights are zero".into()));
    }
    let d = pts.dim();
    let mut p_bar = DVector::zeros(d);
    let mut q_bar = DVector::zeros(d);
    for i in 0..pts.len() {
        p_bar += pts.p().column(i) * w[i];
        q_bar += pts.q().column(i) * w[i];
    }
    p_bar /= wsum;
    q_bar /= wsum;
    let mut m = DMatrix::<f64>::zeros(d, d);
    for i in 0..pts.len() {
        m += w[i] * (pts.q().column(i) - &q_bar) * (pts.p().column(i) - &p_bar).transpose();
    }
    let f = svd(&m)?;
    let r = &f.u * f.v.transpose();
    let t = &q_bar - &r * &p_bar;
    RigidMotion::new(r, t)
}

/// Iteratively reweighted least squares for the robust rigid energy:
/// residual-derived weights `w_i = 1/max(r_i, delta)` alternate with the
/// closed-form weighted Procrustes solve.
///
/// `init = None` starts from the uniform-weight solve; `delta = None` uses
/// `1e-7 ×` the data's residual scale. The returned trace holds `E(R,t)`
/// after every iteration.
pub fn irls_rigid(
    pts: &PointPairs,
    init: Option<&RigidMotion>,
    delta: Option<f64>,
    max_iter: usize,
    tol: f64,
) -> Result<AlignmentResult> {
    let delta = match delta {
        Some(d) => {
            if !(d > 0.0) {
                return Err(SrpError::InvalidArgument("delta must be > 0".into()));
            }
            d
        }
        None => 1e-7 * pts.residual_scale(),
    };
    let watch = Stopwatch::start();
    let mut motion = match init {
        Some(m) => m.clone(),
        None => weighted_procrustes(pts, &vec![1.0; pts.len()])?,
    };
    let mut energy = energy_robust(&motion, pts)?;
    let mut trace = vec![energy];
    let mut best = motion.clone();
    let mut best_energy = energy;
    for _ in 0..max_iter {
        let rp = &motion.r * pts.p();
        let w: Vec<f64> = (0..pts.len())
            .map(|i| {
                let r = (rp.column(i) - pts.q().column(i) + &motion.t).norm();
                1.0 / r.max(delta)
            })
            .collect();
        motion = weighted_procrustes(pts, &w)?;
        let e = energy_robust(&motion, pts)?;
        trace.push(e);
        if e < best_energy {
            best_energy = e;
            best = motion.clone();
        }
        if energy - e <= tol * energy.abs().max(1.0) {
            break;
        }
        energy = e;
    }
    let mut result = make_result(best, pts, 0.0, MethodTag::Irls, None)?;
    result.energy_trace = trace;
    let _ = watch.seconds();
    Ok(result)
}

/// IRLS warm-started from the rigid SRP_2 solution; carries over that solve's
/// certified lower bound.
pub fn irls_srp2_init(pts: &PointPairs, cfg: &SolverConfig, max_iter: usize, tol: f64) -> Result<AlignmentResult> {
    let mut cfg2 = cfg.clone();
    cfg2.p = NormPower::Two;
    cfg2.use_translations = true;
    let seed = srp_rigid(pts, &cfg2)?;
    let mut out = irls_rigid(pts, Some(&seed.motion), None, max_iter, tol)?;
    out.method = MethodTag::IrlsSrp2Init;
    out.lower_bound = seed.lower_bound;
    out.ratio = out.achieved_energy / out.lower_bound.max(1e-12);
    out.solve_report = seed.solve_report;
    Ok(out)
}

/// Non-symmetrized relax-and-project; the translation is re-estimated by the
/// geometric median after projection (when `cfg.use_translations`).
pub fn nonsym_rigid_pipeline(pts: &PointPairs, cfg: &SolverConfig) -> Result<AlignmentResult> {
    let report = solve_nonsym(pts, cfg)?;
    let r = project_orthogonal(&report.solution.a)?;
    let t = if cfg.use_translations {
        optimal_translation(&r, pts)?
    } else {
        DVector::zeros(pts.dim())
    };
    let motion = RigidMotion::new(r, t)?;
    let lower = report.solution.objective;
    make_result(motion, pts, lower, MethodTag::NonSym, Some(report))
}

/// Squared-symmetrized relax-and-project (`λ = 0` unless covariances are
/// supplied). The squared objective is not a lower bound for the robust
/// energy, so `lower_bound` is reported as 0.
pub fn srp_squared_pipeline(
    pts: &PointPairs,
    cov: Option<(&CovariancePair, f64)>,
    cfg: &SolverConfig,
) -> Result<AlignmentResult> {
    let identity;
    let (cov_ref, lambda) = match cov {
        Some((c, l)) => (c, l),
        None => {
            let d = pts.dim();
            identity = CovariancePair::new(DMatrix::identity(d, d), DMatrix::identity(d, d))?;
            (&identity, 0.0)
        }
    };
    let mut cfg2 = cfg.clone();
    cfg2.lambda = lambda;
    let report = solve_with_covariance(pts, cov_ref, &cfg2, CovVariant::Squared)?;
    let r = project_orthogonal(&report.solution.a)?;
    let t = if cfg.use_translations {
        optimal_translation(&r, pts)?
    } else {
        DVector::zeros(pts.dim())
    };
    let motion = RigidMotion::new(r, t)?;
    make_result(motion, pts, 0.0, MethodTag::SrpSquared, Some(report))
}

/// Balancing factor α for the covariance weight `λ = λ̄·α`: the data energy
/// at `A = 0` divided by the spectral gap `max_{i,j}|σ_i − τ_j|` (squared for
/// the squared variant).
pub fn balancing_factor(
    variant: CovVariant,
    p: NormPower,
    pts: &PointPairs,
    cov: &CovariancePair,
) -> Result<f64> {
    let gap = cov.max_spectral_gap();
    if gap <= 0.0 {
        return Err(SrpError::Degenerate(
            "balancing factor denominator max|sigma_i - tau_j| is zero (identical covariance spectra)"
                .into(),
        ));
    }
    let numerator: f64 = match variant {
        CovVariant::SrpP => (0..pts.len())
            .map(|i| {
                let np = pts.p().column(i).norm();
                let nq = pts.q().column(i).norm();
                match p {
                    NormPower::One => 0.5 * (np + nq),
                    NormPower::Two => (0.5f64).sqrt() * (np * np + nq * nq).sqrt(),
                    NormPower::Inf => np.max(nq),
                }
            })
            .sum(),
        CovVariant::NonSym => (0..pts.len()).map(|i| pts.p().column(i).norm()).sum(),
        CovVariant::Squared => (0..pts.len())
            .map(|i| {
                0.5 * (pts.p().column(i).norm_squared() + pts.q().column(i).norm_squared())
            })
            .sum(),
    };
    let denom = if variant == CovVariant::Squared {
        gap * gap
    } else {
        gap
    };
    Ok(numerator / denom)
}

/// Semi-supervised alignment: covariances from the unpaired pools regularize
/// the relaxation with weight `λ = λ̄·α`; orthogonal-only output (`t = 0`).
pub fn srp_semisupervised(
    pts: &PointPairs,
    unpaired_p: &DMatrix<f64>,
    unpaired_q: &DMatrix<f64>,
    lambda_bar: f64,
    variant: CovVariant,
    cfg: &SolverConfig,
) -> Result<AlignmentResult> {
    if lambda_bar < 0.0 {
        return Err(SrpError::InvalidArgument("lambda_bar must be >= 0".into()));
    }
    let cov = CovariancePair::from_pools(unpaired_p, unpaired_q)?;
    let alpha = balancing_factor(variant, cfg.p, pts, &cov)?;
    let mut cfg2 = cfg.clone();
    cfg2.lambda = lambda_bar * alpha;
    cfg2.use_translations = false;
    let report = solve_with_covariance(pts, &cov, &cfg2, variant)?;
    let r = project_orthogonal(&report.solution.a)?;
    let motion = RigidMotion::new(r, DVector::zeros(pts.dim()))?;
    let method = match variant {
        CovVariant::SrpP => srp_tag(cfg.p),
        CovVariant::NonSym => MethodTag::NonSym,
        CovVariant::Squared => MethodTag::SrpSquared,
    };
    // The regularized optimum certifies nothing about the plain robust
    // energy; report no bound.
    make_result(motion, pts, 0.0, method, Some(report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{random_orthogonal, spectral_norm, sum_of_distances};
    use crate::objectives::energy_relaxed_orth;
    use crate::oracles::{grid_optimum_orth_2d, grid_optimum_rigid_2d};
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

    /// `n_in` exact/noisy inliers under a random rigid motion plus `n_out`
    /// Gaussian outliers.
    fn rigid_instance<R: Rng>(
        d: usize,
        n_in: usize,
        n_out: usize,
        sigma: f64,
        rng: &mut R,
    ) -> (PointPairs, RigidMotion) {
        let r0 = random_orthogonal(d, rng).unwrap();
        let t0 = gaussian_vector(d, rng) * 0.3;
        let n = n_in + n_out;
        let mut p = DMatrix::zeros(d, n);
        let mut q = DMatrix::zeros(d, n);
        for i in 0..n {
            let pi = gaussian_vector(d, rng) / (d as f64).sqrt();
            p.set_column(i, &pi);
            if i < n_in {
                let noise = gaussian_vector(d, rng) * (sigma / (d as f64).sqrt());
                q.set_column(i, &(&r0 * &pi + &t0 + noise));
            } else {
                q.set_column(i, &(gaussian_vector(d, rng) * (1.3 / (d as f64).sqrt())));
            }
        }
        (
            PointPairs::new(p, q).unwrap(),
            RigidMotion::new(r0, t0).unwrap(),
        )
    }

    #[test]
    fn srp_orth_exact_fit_recovers_rotation() {
        let mut r = rng(1);
        for p in [NormPower::One, NormPower::Two, NormPower::Inf] {
            let r0 = random_orthogonal(3, &mut r).unwrap();
            let pm = gaussian_matrix(3, 15, &mut r);
            let q = &r0 * &pm;
            let pts = PointPairs::new(pm, q).unwrap();
            let out = srp_orth(&pts, &SolverConfig::new(p)).unwrap();
            assert!(spectral_norm(&(&out.motion.r - &r0)) <= 1e-6, "p={p}");
            assert!(out.achieved_energy <= 1e-6);
            assert!(out.lower_bound <= 1e-6);
        }
    }

    #[test]
    fn srp_orth_ratio_within_sqrt2_on_noisy_instances() {
        let mut r = rng(2);
        for _ in 0..5 {
            let (pts, _) = rigid_instance(3, 40, 8, 0.05, &mut r);
            // Strip the translation for the orthogonal problem.
            let out = srp_orth(&pts, &SolverConfig::new(NormPower::Two)).unwrap();
            assert!(out.ratio <= 2f64.sqrt() + 1e-6, "ratio {}", out.ratio);
        }
    }

    #[test]
    fn srp_orth_sandwiched_by_grid_oracle_in_2d() {
        let mut r = rng(3);
        for _ in 0..3 {
            let (pts, _) = rigid_instance(2, 25, 5, 0.05, &mut r);
            let out = srp_orth(&pts, &SolverConfig::new(NormPower::Two)).unwrap();
            let (e_star, _) = grid_optimum_orth_2d(&pts, 10_000).unwrap();
            assert!(out.achieved_energy >= e_star - 1e-4);
            assert!(out.lower_bound <= e_star + 1e-4);
        }
    }

    #[test]
    fn srp_rigid_exact_fit_recovers_motion() {
        let mut r = rng(4);
        let (pts, truth) = rigid_instance(3, 30, 0, 0.0, &mut r);
        let cfg = SolverConfig::new(NormPower::Two).with_translations(true);
        let out = srp_rigid(&pts, &cfg).unwrap();
        assert!(spectral_norm(&(&out.motion.r - &truth.r)) <= 1e-6);
        assert!((&out.motion.t - &truth.t).norm() <= 1e-6);
    }

    #[test]
    fn srp_rigid_ratio_within_sqrt2_with_outliers_d7() {
        let mut r = rng(5);
        for _ in 0..3 {
            let (pts, _) = rigid_instance(7, 200, 50, 0.02, &mut r);
            let cfg = SolverConfig::new(NormPower::Two).with_translations(true);
            let out = srp_rigid(&pts, &cfg).unwrap();
            assert!(out.ratio <= 2f64.sqrt() + 1e-6, "ratio {}", out.ratio);
            assert!(out.lower_bound <= out.achieved_energy + 1e-6 * (1.0 + out.achieved_energy));
        }
    }

    #[test]
    fn srp_rigid_dominates_grid_oracle_in_2d() {
        let mut r = rng(6);
        for _ in 0..3 {
            let (pts, _) = rigid_instance(2, 20, 6, 0.05, &mut r);
            let cfg = SolverConfig::new(NormPower::Two).with_translations(true);
            let out = srp_rigid(&pts, &cfg).unwrap();
            let (e_star, _) = grid_optimum_rigid_2d(&pts, 2_000).unwrap();
            assert!(
                out.achieved_energy >= e_star - 1e-4,
                "achieved {} grid {}",
                out.achieved_energy,
                e_star
            );
            assert!(out.lower_bound <= e_star + 1e-4);
        }
    }

    #[test]
    fn weighted_procrustes_uniform_exact_fit() {
        let mut r = rng(7);
        let (pts, truth) = rigid_instance(4, 25, 0, 0.0, &mut r);
        let m = weighted_procrustes(&pts, &vec![1.0; pts.len()]).unwrap();
        assert!((&m.r - &truth.r).norm() <= 1e-10);
        assert!((&m.t - &truth.t).norm() <= 1e-10);
    }

    #[test]
    fn weighted_procrustes_ignores_zero_weighted_garbage() {
        let mut r = rng(8);
        let d = 3;
        let r0 = random_orthogonal(d, &mut r).unwrap();
        let t0 = gaussian_vector(d, &mut r);
        // d+1 affinely independent exact pairs followed by garbage.
        let n = d + 1 + 6;
        let mut p = DMatrix::zeros(d, n);
        let mut q = DMatrix::zeros(d, n);
        for k in 0..d {
            let e = DVector::from_fn(d, |i, _| if i == k { 1.0 } else { 0.0 });
            p.set_column(k, &e);
            q.set_column(k, &(&r0 * &e + &t0));
        }
        q.set_column(d, &t0); // p column d stays zero
        for i in (d + 1)..n {
            p.set_column(i, &(gaussian_vector(d, &mut r) * 10.0));
            q.set_column(i, &(gaussian_vector(d, &mut r) * 10.0));
        }
        let pts = PointPairs::new(p, q).unwrap();
        let mut w = vec![0.0; n];
        for wi in w.iter_mut().take(d + 1) {
            *wi = 1.0;
        }
        let m = weighted_procrustes(&pts, &w).unwrap();
        assert!((&m.r - &r0).norm() <= 1e-10);
        assert!((&m.t - &t0).norm() <= 1e-10);
    }

    #[test]
    fn weighted_procrustes_beats_sampled_orthogonal_candidates() {
        let mut r = rng(9);
        let (pts, _) = rigid_instance(3, 12, 4, 0.3, &mut r);
        let w: Vec<f64> = (0..pts.len()).map(|_| r.random::<f64>() + 0.01).collect();
        let weighted_energy = |m: &RigidMotion| -> f64 {
            let rp = &m.r * pts.p();
            (0..pts.len())
                .map(|i| w[i] * (rp.column(i) - pts.q().column(i) + &m.t).norm_squared())
                .sum()
        };
        let m = weighted_procrustes(&pts, &w).unwrap();
        let base = weighted_energy(&m);
        let wsum: f64 = w.iter().sum();
        for _ in 0..10_000 {
            let rc = random_orthogonal(3, &mut r).unwrap();
            // Optimal t for a fixed R in the weighted least-squares sense.
            let mut t = DVector::zeros(3);
            for i in 0..pts.len() {
                t += w[i] * (pts.q().column(i) - &rc * pts.p().column(i));
            }
            t /= wsum;
            let cand = RigidMotion::new(rc, t).unwrap();
            assert!(base <= weighted_energy(&cand) + 1e-9);
        }
    }

    #[test]
    fn weighted_procrustes_rejects_zero_weights() {
        let (pts, _) = rigid_instance(2, 5, 0, 0.0, &mut rng(10));
        assert!(weighted_procrustes(&pts, &vec![0.0; 5]).is_err());
        assert!(weighted_procrustes(&pts, &vec![1.0; 4]).is_err());
        assert!(weighted_procrustes(&pts, &[1.0, 1.0, 1.0, 1.0, -0.5]).is_err());
    }

    #[test]
    fn irls_exact_fit_converges_immediately() {
        let mut r = rng(11);
        let (pts, _) = rigid_instance(3, 20, 0, 0.0, &mut r);
        let out = irls_rigid(&pts, None, None, 100, 1e-10).unwrap();
        assert!(out.achieved_energy <= 1e-8);
        // Uniform init is already exact; at most two sweeps recorded.
        assert!(out.energy_trace.len() <= 3);
    }

    #[test]
    fn irls_energy_trace_is_nonincreasing_up_to_floor() {
        let mut r = rng(12);
        for _ in 0..100 {
            let d = 2 + (r.random::<u32>() % 3) as usize;
            let (pts, _) = rigid_instance(d, 15, 5, 0.1, &mut r);
            let out = irls_rigid(&pts, None, None, 50, 1e-12).unwrap();
            for w in out.energy_trace.windows(2) {
                assert!(w[1] <= w[0] + 1e-7 * (1.0 + w[0]));
            }
        }
    }

    #[test]
    fn irls_with_srp2_init_is_no_worse_than_uniform_on_recovery_regime() {
        let mut r = rng(13);
        let mut wins = 0;
        let trials = 10;
        for _ in 0..trials {
            let (pts, _) = rigid_instance(7, 100, 40, 0.0, &mut r);
            let plain = irls_rigid(&pts, None, None, 200, 1e-12).unwrap();
            let cfg = SolverConfig::new(NormPower::Two).with_translations(true);
            let seeded = irls_srp2_init(&pts, &cfg, 200, 1e-12).unwrap();
            if seeded.achieved_energy <= plain.achieved_energy + 1e-9 {
                wins += 1;
            }
            assert!(seeded.lower_bound > 0.0 || seeded.achieved_energy <= 1e-9);
        }
        assert!(wins * 2 >= trials, "srp2-init won only {wins}/{trials}");
    }

    #[test]
    fn nonsym_pipeline_exact_rigid_fit() {
        let mut r = rng(14);
        let (pts, truth) = rigid_instance(3, 25, 0, 0.0, &mut r);
        let cfg = SolverConfig::new(NormPower::Two).with_translations(true);
        let out = nonsym_rigid_pipeline(&pts, &cfg).unwrap();
        assert!(spectral_norm(&(&out.motion.r - &truth.r)) <= 1e-5);
        assert!(out.achieved_energy <= 1e-5);
    }

    #[test]
    fn nonsym_pipeline_gap_on_non_orthogonal_linear_fit() {
        let mut r = rng(15);
        // Q = M P for invertible M far from orthogonal: the non-symmetrized
        // relaxation reaches zero but no orthogonal matrix fits.
        let m = DMatrix::from_vec(2, 2, vec![3.0, 0.0, 0.0, 0.25]);
        let p = gaussian_matrix(2, 20, &mut r);
        let q = &m * &p;
        let pts = PointPairs::new(p, q).unwrap();
        let cfg = SolverConfig::new(NormPower::Two);
        let out = nonsym_rigid_pipeline(&pts, &cfg).unwrap();
        assert!(out.lower_bound <= 1e-6, "lower bound {}", out.lower_bound);
        assert!(out.achieved_energy > 0.1, "achieved {}", out.achieved_energy);
    }

    #[test]
    fn nonsym_pipeline_dominates_grid_oracle_in_2d() {
        let mut r = rng(16);
        let (pts, _) = rigid_instance(2, 15, 5, 0.1, &mut r);
        let cfg = SolverConfig::new(NormPower::Two).with_translations(true);
        let out = nonsym_rigid_pipeline(&pts, &cfg).unwrap();
        let (e_star, _) = grid_optimum_rigid_2d(&pts, 2_000).unwrap();
        assert!(out.achieved_energy >= e_star - 1e-4);
    }

    #[test]
    fn balancing_factor_formulas() {
        // Hand-checkable data: p1 = (3,0), q1 = (0,4); covariances with
        // spectra {4,1} and {2,0.5} so the gap is 3.5.
        let pts = PointPairs::new(
            DMatrix::from_vec(2, 1, vec![3.0, 0.0]),
            DMatrix::from_vec(2, 1, vec![0.0, 4.0]),
        )
        .unwrap();
        let cov = CovariancePair::new(
            DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 1.0])),
            DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 0.5])),
        )
        .unwrap();
        let gap = 3.5;
        let a2 = balancing_factor(CovVariant::SrpP, NormPower::Two, &pts, &cov).unwrap();
        assert!((a2 - (0.5f64).sqrt() * 5.0 / gap).abs() <= 1e-12);
        let ainf = balancing_factor(CovVariant::SrpP, NormPower::Inf, &pts, &cov).unwrap();
        assert!((ainf - 4.0 / gap).abs() <= 1e-12);
        let a1 = balancing_factor(CovVariant::SrpP, NormPower::One, &pts, &cov).unwrap();
        assert!((a1 - 3.5 / gap).abs() <= 1e-12);
        let an = balancing_factor(CovVariant::NonSym, NormPower::Two, &pts, &cov).unwrap();
        assert!((an - 3.0 / gap).abs() <= 1e-12);
        let asq = balancing_factor(CovVariant::Squared, NormPower::Two, &pts, &cov).unwrap();
        assert!((asq - 12.5 / (gap * gap)).abs() <= 1e-12);
    }

    #[test]
    fn balancing_factor_rejects_degenerate_spectra() {
        let pts = PointPairs::new(DMatrix::identity(2, 2), DMatrix::identity(2, 2)).unwrap();
        let cov = CovariancePair::new(DMatrix::identity(2, 2), DMatrix::identity(2, 2)).unwrap();
        let err = balancing_factor(CovVariant::SrpP, NormPower::Two, &pts, &cov).unwrap_err();
        assert!(err.to_string().contains("max|sigma_i - tau_j|"));
    }

    #[test]
    fn semisupervised_recovers_rotation_with_fewer_pairs_than_dimensions() {
        let mut r = rng(17);
        let d = 6;
        let r0 = random_orthogonal(d, &mut r).unwrap();
        let ptilde = gaussian_matrix(d, 60, &mut r);
        let mut perm: Vec<usize> = (0..60).collect();
        for i in (1..60).rev() {
            let j = (r.random::<u64>() % (i as u64 + 1)) as usize;
            perm.swap(i, j);
        }
        let rp = &r0 * &ptilde;
        let qtilde = DMatrix::from_fn(d, 60, |k, i| rp[(k, perm[i])]);
        let p = gaussian_matrix(d, 3, &mut r);
        let q = &r0 * &p;
        let pts = PointPairs::new(p, q).unwrap();

        let cfg = SolverConfig::new(NormPower::Two);
        let reg = srp_semisupervised(&pts, &ptilde, &qtilde, 0.2, CovVariant::SrpP, &cfg).unwrap();
        let err = spectral_norm(&(&reg.motion.r - &r0));
        assert!(err <= 1e-2, "semi-supervised error {err}");

        // Baseline without the covariance term cannot determine R from 3
        // pairs in dimension 6.
        let plain = srp_orth(&pts, &cfg).unwrap();
        let plain_err = spectral_norm(&(&plain.motion.r - &r0));
        assert!(plain_err > err, "plain {plain_err} vs regularized {err}");
    }

    #[test]
    fn geomed_lemma_holds_on_random_lists() {
        let mut r = rng(18);
        for _ in 0..100 {
            let d = 1 + (r.random::<u32>() % 10) as usize;
            let n = 2 + (r.random::<u32>() % 49) as usize;
            let pts: Vec<DVector<f64>> = (0..n).map(|_| gaussian_vector(d, &mut r)).collect();
            let v = geometric_median(&pts, 1e-10, 10_000).unwrap();
            let med_obj = sum_of_distances(&pts, &v);
            let best_anchor = pts
                .iter()
                .map(|x| sum_of_distances(&pts, x))
                .fold(f64::INFINITY, f64::min);
            assert!(best_anchor <= 2f64.sqrt() * med_obj + 1e-8);
        }
    }

    #[test]
    fn projection_lemma_holds_for_random_matrices() {
        let mut r = rng(19);
        for _ in 0..200 {
            let d = 1 + (r.random::<u32>() % 4) as usize;
            let n = 1 + (r.random::<u32>() % 10) as usize;
            let pts = PointPairs::new(
                gaussian_matrix(d, n, &mut r),
                gaussian_matrix(d, n, &mut r),
            )
            .unwrap();
            let a = gaussian_matrix(d, d, &mut r);
            let pi = project_orthogonal(&a).unwrap();
            let e = energy_robust(&RigidMotion::new(pi, DVector::zeros(d)).unwrap(), &pts).unwrap();
            for p in [NormPower::Two, NormPower::Inf] {
                let relaxed = energy_relaxed_orth(&a, &pts, p).unwrap();
                assert!(e <= 2.0 * relaxed + 1e-9, "d={d} n={n} p={p}");
            }
        }
    }
}
