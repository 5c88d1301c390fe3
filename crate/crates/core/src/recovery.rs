//! Synthetic instance generation, dominance-of-inliers (DIP) condition
//! checks, and recovery metrics.
//!
//! Generators follow a fixed scaling: all random vectors are drawn from
//! scaled coordinate-wise Gaussians such that `E‖p_i‖² = 1`,
//! `E‖t_0‖² = σ_t²`, `E‖ξ_i‖² = σ²`, and `E‖q_i‖² = 1 + σ_t² + σ²` for every
//! index, inlier or outlier. The second Gaussian parameter is read as a
//! standard deviation throughout (coordinates i.i.d. `N(0, (σ/√d)²)`), which
//! is what makes the second-moment identities above hold; the generator
//! tests pin this reading.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::numerics::{random_orthogonal, spectral_norm};
use crate::objectives::{PointPairs, RigidMotion};
use crate::srp::AlignmentResult;
use crate::{Result, SrpError};

/// Noise and size parameters of one synthetic instance.
#[derive(Debug, Clone)]
pub struct NoiseParams {
    /// Relative noise strength: inlier residual norms satisfy `E‖ξ‖² = σ²`.
    pub sigma: f64,
    /// Translation proportion: `E‖t_0‖² = σ_t²`.
    pub sigma_t: f64,
    pub n_inliers: usize,
    pub n_outliers: usize,
    pub d: usize,
    pub seed: u64,
}

impl NoiseParams {
    fn validate(&self) -> Result<()> {
        if self.sigma < 0.0 || self.sigma_t < 0.0 {
            return Err(SrpError::InvalidArgument(
                "noise strengths must be >= 0".into(),
            ));
        }
        if self.d == 0 {
            return Err(SrpError::InvalidArgument("d must be >= 1".into()));
        }
        if self.n_inliers + self.n_outliers == 0 {
            return Err(SrpError::InvalidArgument(
                "instance wants at least one pair".into(),
            ));
        }
        Ok(())
    }
}

/// A generated problem with its ground truth and inlier index set.
#[derive(Debug, Clone)]
pub struct SyntheticInstance {
    pub pts: PointPairs,
    pub truth: RigidMotion,
    pub inlier_set: Vec<usize>,
    pub params: NoiseParams,
}

fn gaussian_vec<R: Rng + ?Sized>(d: usize, std: f64, rng: &mut R) -> DVector<f64> {
    DVector::from_fn(d, |_, _| std * rng.sample::<f64, _>(StandardNormal))
}

/// Generate one synthetic rigid instance: Haar `R_0`, Gaussian `t_0`, inliers
/// `q_i = R_0 p_i + t_0 + ξ_i`, and outlier `q_i` drawn so that `E‖q_i‖²`
/// matches the inliers'. Inliers occupy the first `n_inliers` columns.
pub fn generate_instance(params: &NoiseParams) -> Result<SyntheticInstance> {
    params.validate()?;
    let d = params.d;
    let sqrt_d = (d as f64).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let r0 = random_orthogonal(d, &mut rng)?;
    let t0 = gaussian_vec(d, params.sigma_t / sqrt_d, &mut rng);

    let n = params.n_inliers + params.n_outliers;
    let mut p = DMatrix::zeros(d, n);
    let mut q = DMatrix::zeros(d, n);
    for i in 0..params.n_inliers {
        let pi = gaussian_vec(d, 1.0 / sqrt_d, &mut rng);
        let xi = gaussian_vec(d, params.sigma / sqrt_d, &mut rng);
        q.set_column(i, &(&r0 * &pi + &t0 + xi));
        p.set_column(i, &pi);
    }
    let outlier_q_std = (1.0 + params.sigma_t * params.sigma_t + params.sigma * params.sigma)
        .sqrt()
        / sqrt_d;
    for i in params.n_inliers..n {
        p.set_column(i, &gaussian_vec(d, 1.0 / sqrt_d, &mut rng));
        q.set_column(i, &gaussian_vec(d, outlier_q_std, &mut rng));
    }
    Ok(SyntheticInstance {
        pts: PointPairs::new(p, q)?,
        truth: RigidMotion::new(r0, t0)?,
        inlier_set: (0..params.n_inliers).collect(),
        params: params.clone(),
    })
}

fn random_permutation<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = (rng.random::<u64>() % (i as u64 + 1)) as usize;
        perm.swap(i, j);
    }
    perm
}

/// Semi-supervised instance: `n` noisy corresponding pairs plus `n_out`
/// mismatch outliers drawn (without replacement on each side) from two
/// corresponding pools of size `n_tilde`; the returned `Q~` pool is randomly
/// reordered so the pools carry no pairing. Zero translation.
pub fn generate_semisupervised(
    d: usize,
    n: usize,
    n_tilde: usize,
    n_out: usize,
    sigma: f64,
    seed: u64,
) -> Result<(PointPairs, DMatrix<f64>, DMatrix<f64>, RigidMotion)> {
    if d == 0 || n == 0 || n_tilde == 0 {
        return Err(SrpError::InvalidArgument(
            "semisupervised generator wants d, n, n_tilde >= 1".into(),
        ));
    }
    if n_out > n_tilde {
        return Err(SrpError::InvalidArgument(format!(
            "n_out = {n_out} exceeds the pool size {n_tilde}"
        )));
    }
    let sqrt_d = (d as f64).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r0 = random_orthogonal(d, &mut rng)?;

    // Corresponding pools: q~_i = R0 p~_i + noise.
    let mut ptilde = DMatrix::zeros(d, n_tilde);
    let mut qtilde = DMatrix::zeros(d, n_tilde);
    for i in 0..n_tilde {
        let pi = gaussian_vec(d, 1.0 / sqrt_d, &mut rng);
        let xi = gaussian_vec(d, sigma / sqrt_d, &mut rng);
        qtilde.set_column(i, &(&r0 * &pi + xi));
        ptilde.set_column(i, &pi);
    }

    let total = n + n_out;
    let mut p = DMatrix::zeros(d, total);
    let mut q = DMatrix::zeros(d, total);
    for i in 0..n {
        let pi = gaussian_vec(d, 1.0 / sqrt_d, &mut rng);
        let xi = gaussian_vec(d, sigma / sqrt_d, &mut rng);
        q.set_column(i, &(&r0 * &pi + xi));
        p.set_column(i, &pi);
    }
    // Mismatch outliers: pair p~^(a_k) with q~^(b_k) for independently drawn
    // index sequences.
    let a_idx = random_permutation(n_tilde, &mut rng);
    let b_idx = random_permutation(n_tilde, &mut rng);
    for k in 0..n_out {
        p.set_column(n + k, &ptilde.column(a_idx[k]));
        q.set_column(n + k, &qtilde.column(b_idx[k]));
    }

    // Destroy the pools' pairing.
    let reorder = random_permutation(n_tilde, &mut rng);
    let qtilde_shuffled = DMatrix::from_fn(d, n_tilde, |r, i| qtilde[(r, reorder[i])]);

    Ok((
        PointPairs::new(p, q)?,
        ptilde,
        qtilde_shuffled,
        RigidMotion::new(r0, DVector::zeros(d))?,
    ))
}

/// Result of a sampled dominance-of-inliers check. A positive `min_margin`
/// is sampled evidence only; a nonpositive one is a certified violation with
/// `worst_direction` as the witness (`u`, or `(u, α)` stacked for the affine
/// check).
#[derive(Debug, Clone)]
pub struct DipReport {
    pub holds_sampled: bool,
    pub min_margin: f64,
    pub worst_direction: DVector<f64>,
    pub probes: usize,
}

fn lift_columns(m: &DMatrix<f64>, affine: bool) -> Vec<DVector<f64>> {
    (0..m.ncols())
        .map(|i| {
            if affine {
                let mut v = DVector::zeros(m.nrows() + 1);
                v.rows_mut(0, m.nrows()).copy_from(&m.column(i));
                v[m.nrows()] = 1.0;
                v
            } else {
                m.column(i).into_owned()
            }
        })
        .collect()
}

fn one_sided_margin(points: &[DVector<f64>], inlier: &[bool], u: &DVector<f64>) -> f64 {
    let mut margin = 0.0;
    for (x, &is_in) in points.iter().zip(inlier) {
        let v = u.dot(x).abs();
        margin += if is_in { v } else { -v };
    }
    margin
}

fn one_sided_subgradient(
    points: &[DVector<f64>],
    inlier: &[bool],
    u: &DVector<f64>,
) -> DVector<f64> {
    let mut g = DVector::zeros(u.len());
    for (x, &is_in) in points.iter().zip(inlier) {
        let s = u.dot(x).signum() * if is_in { 1.0 } else { -1.0 };
        if u.dot(x) != 0.0 {
            g += s * x;
        }
    }
    g
}

struct DipProblem {
    lifted_p: Vec<DVector<f64>>,
    lifted_q: Vec<DVector<f64>>,
    inlier: Vec<bool>,
}

impl DipProblem {
    fn build(pts: &PointPairs, inlier_set: &[usize], affine: bool) -> Result<Self> {
        let n = pts.len();
        let mut inlier = vec![false; n];
        for &i in inlier_set {
            if i >= n {
                return Err(SrpError::InvalidArgument(format!(
                    "inlier index {i} out of range for {n} pairs"
                )));
            }
            inlier[i] = true;
        }
        Ok(Self {
            lifted_p: lift_columns(pts.p(), affine),
            lifted_q: lift_columns(pts.q(), affine),
            inlier,
        })
    }

    /// `min` of the P-side and Q-side margins at direction `u`.
    fn margin(&self, u: &DVector<f64>) -> f64 {
        let mp = one_sided_margin(&self.lifted_p, &self.inlier, u);
        let mq = one_sided_margin(&self.lifted_q, &self.inlier, u);
        mp.min(mq)
    }

    fn subgradient(&self, u: &DVector<f64>) -> DVector<f64> {
        let mp = one_sided_margin(&self.lifted_p, &self.inlier, u);
        let mq = one_sided_margin(&self.lifted_q, &self.inlier, u);
        if mp <= mq {
            one_sided_subgradient(&self.lifted_p, &self.inlier, u)
        } else {
            one_sided_subgradient(&self.lifted_q, &self.inlier, u)
        }
    }
}

fn check_dip(
    pts: &PointPairs,
    inlier_set: &[usize],
    probes: usize,
    refine_steps: usize,
    seed: u64,
    affine: bool,
) -> Result<DipReport> {
    if probes == 0 {
        return Err(SrpError::InvalidArgument("probes must be >= 1".into()));
    }
    let problem = DipProblem::build(pts, inlier_set, affine)?;
    let dim = pts.dim() + usize::from(affine);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut worst = DVector::zeros(dim);
    let mut min_margin = f64::INFINITY;
    let mut evaluated = 0usize;
    let mut consider = |u: DVector<f64>, min_margin: &mut f64, worst: &mut DVector<f64>| {
        let m = problem.margin(&u);
        if m < *min_margin {
            *min_margin = m;
            *worst = u;
        }
    };

    if affine {
        // The counting probe u = 0, α = 1 is always evaluated: the affine
        // condition forces |I| > |I^C| there.
        let mut e = DVector::zeros(dim);
        e[dim - 1] = 1.0;
        consider(e, &mut min_margin, &mut worst);
        evaluated += 1;
    }
    while evaluated < probes {
        let u = gaussian_vec(dim, 1.0, &mut rng);
        let norm = u.norm();
        if norm > 0.0 {
            consider(u / norm, &mut min_margin, &mut worst);
        }
        evaluated += 1;
    }

    // Local refinement from the worst probe: projected subgradient descent
    // on the margin over the unit sphere.
    let mut u = worst.clone();
    for k in 0..refine_steps {
        let g = problem.subgradient(&u);
        let gn = g.norm();
        if gn == 0.0 {
            break;
        }
        let step = 0.25 / (k as f64 + 1.0);
        let cand = &u - step * g / gn;
        let norm = cand.norm();
        if norm == 0.0 {
            break;
        }
        let cand = cand / norm;
        let m = problem.margin(&cand);
        if m < min_margin {
            min_margin = m;
            worst = cand.clone();
        }
        u = cand;
    }

    Ok(DipReport {
        holds_sampled: min_margin > 0.0,
        min_margin,
        worst_direction: worst,
        probes: evaluated,
    })
}

/// Sampled check of the linear dominance-of-inliers condition
/// `Σ_{i∈I} |⟨u,p_i⟩| > Σ_{i∉I} |⟨u,p_i⟩|` (and the same for `q`) over unit
/// directions `u`.
pub fn check_linear_dip(
    pts: &PointPairs,
    inlier_set: &[usize],
    probes: usize,
    refine_steps: usize,
    seed: u64,
) -> Result<DipReport> {
    check_dip(pts, inlier_set, probes, refine_steps, seed, false)
}

/// Sampled check of the affine dominance-of-inliers condition over unit
/// vectors `(u, α) ∈ R^{d+1}` (`|⟨u,p_i⟩ + α|` sums, both sides).
pub fn check_affine_dip(
    pts: &PointPairs,
    inlier_set: &[usize],
    probes: usize,
    refine_steps: usize,
    seed: u64,
) -> Result<DipReport> {
    check_dip(pts, inlier_set, probes, refine_steps, seed, true)
}

/// Margin of the linear DIP condition at one direction (min of both sides).
pub fn linear_dip_margin(pts: &PointPairs, inlier_set: &[usize], u: &DVector<f64>) -> Result<f64> {
    if u.len() != pts.dim() {
        return Err(SrpError::DimensionMismatch(format!(
            "direction has length {} but points live in dimension {}",
            u.len(),
            pts.dim()
        )));
    }
    let problem = DipProblem::build(pts, inlier_set, false)?;
    Ok(problem.margin(u))
}

/// Margin of the affine DIP condition at one `(u, α)` pair.
pub fn affine_dip_margin(
    pts: &PointPairs,
    inlier_set: &[usize],
    u: &DVector<f64>,
    alpha: f64,
) -> Result<f64> {
    if u.len() != pts.dim() {
        return Err(SrpError::DimensionMismatch(format!(
            "direction has length {} but points live in dimension {}",
            u.len(),
            pts.dim()
        )));
    }
    let problem = DipProblem::build(pts, inlier_set, true)?;
    let mut v = DVector::zeros(u.len() + 1);
    v.rows_mut(0, u.len()).copy_from(u);
    v[u.len()] = alpha;
    Ok(problem.margin(&v))
}

/// Recovery errors: `rot_err = ‖R̂ − R_0‖` (spectral) and
/// `trans_err = ‖t̂ − t_0‖/‖t_0‖` (plain `‖t̂‖` when `t_0 = 0`).
pub fn recovery_metrics(result: &AlignmentResult, truth: &RigidMotion) -> Result<(f64, f64)> {
    if result.motion.dim() != truth.dim() {
        return Err(SrpError::DimensionMismatch(
            "result and truth dimensions differ".into(),
        ));
    }
    let rot_err = spectral_norm(&(&result.motion.r - &truth.r));
    let t0_norm = truth.t.norm();
    let trans_err = if t0_norm > 0.0 {
        (&result.motion.t - &truth.t).norm() / t0_norm
    } else {
        result.motion.t.norm()
    };
    Ok((rot_err, trans_err))
}

// ───────────────────── certified DIP constructions ─────────────────────

/// An instance constructed to satisfy the linear DIP with a hand-certifiable
/// margin: inliers are `m` copies of `±e_k` per axis (so the inlier sum along
/// any unit `u` is `2m‖u‖₁ ≥ 2m`), outliers have per-axis ℓ1 mass strictly
/// below `2m` on both sides. Returns the instance and the certified margin
/// `min_k min(2m − c_k, 2m − c'_k) > 0`, a lower bound over all unit
/// directions.
pub fn certified_linear_dip_instance(
    d: usize,
    n_out: usize,
    seed: u64,
) -> Result<(SyntheticInstance, f64)> {
    if d == 0 {
        return Err(SrpError::InvalidArgument("d must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r0 = random_orthogonal(d, &mut rng)?;
    let m = n_out + 1;
    let n_in = 2 * d * m;
    let n = n_in + n_out;
    let mut p = DMatrix::zeros(d, n);
    let mut q = DMatrix::zeros(d, n);
    let mut col = 0usize;
    for _ in 0..m {
        for k in 0..d {
            for sign in [1.0, -1.0] {
                let e = DVector::from_fn(d, |i, _| if i == k { sign } else { 0.0 });
                q.set_column(col, &(&r0 * &e));
                p.set_column(col, &e);
                col += 1;
            }
        }
    }
    for i in n_in..n {
        let po = gaussian_vec(d, 1.0, &mut rng).normalize() * 0.3;
        let qo = gaussian_vec(d, 1.0, &mut rng).normalize() * 0.3;
        p.set_column(i, &po);
        q.set_column(i, &qo);
    }
    // Certified margin: per-axis outlier ℓ1 masses on the P side and on the
    // rotated-back Q side.
    let mut cert = f64::INFINITY;
    for k in 0..d {
        let mut c_p = 0.0;
        let mut c_q = 0.0;
        for i in n_in..n {
            c_p += p[(k, i)].abs();
            c_q += (r0.transpose() * q.column(i))[k].abs();
        }
        cert = cert.min(2.0 * m as f64 - c_p).min(2.0 * m as f64 - c_q);
    }
    let params = NoiseParams {
        sigma: 0.0,
        sigma_t: 0.0,
        n_inliers: n_in,
        n_outliers: n_out,
        d,
        seed,
    };
    Ok((
        SyntheticInstance {
            pts: PointPairs::new(p, q)?,
            truth: RigidMotion::new(r0, DVector::zeros(d))?,
            inlier_set: (0..n_in).collect(),
            params,
        },
        cert,
    ))
}

/// An instance constructed to satisfy the affine DIP with a certified
/// margin, for the rigid recovery tests. Inliers are `m = n_out + 1` copies
/// of `±e_k` mapped by `q = R_0 p + t_0` with `‖t_0‖ = 1/2`; outliers have
/// norm 0.3. The certificate follows from
/// `Σ_k 2m·max(|u_k|,|α|) ≥ m‖u‖₁ + dm|α|` against the outliers' per-axis
/// masses and counts, on both sides.
pub fn certified_affine_dip_instance(
    d: usize,
    n_out: usize,
    seed: u64,
) -> Result<(SyntheticInstance, f64)> {
    if d == 0 {
        return Err(SrpError::InvalidArgument("d must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r0 = random_orthogonal(d, &mut rng)?;
    let t0 = gaussian_vec(d, 1.0, &mut rng).normalize() * 0.5;
    let m = n_out + 1;
    let n_in = 2 * d * m;
    let n = n_in + n_out;
    let mut p = DMatrix::zeros(d, n);
    let mut q = DMatrix::zeros(d, n);
    let mut col = 0usize;
    for _ in 0..m {
        for k in 0..d {
            for sign in [1.0, -1.0] {
                let e = DVector::from_fn(d, |i, _| if i == k { sign } else { 0.0 });
                q.set_column(col, &(&r0 * &e + &t0));
                p.set_column(col, &e);
                col += 1;
            }
        }
    }
    for i in n_in..n {
        let po = gaussian_vec(d, 1.0, &mut rng).normalize() * 0.3;
        let qo = gaussian_vec(d, 1.0, &mut rng).normalize() * 0.3;
        p.set_column(i, &po);
        q.set_column(i, &qo);
    }
    // P-side certificate: margin ≥ Σ_k |u_k|(m − c_k) + |α|(dm − n_out);
    // Q-side: same in rotated coordinates with q-outliers shifted by −t_0,
    // costing a factor (1 − ‖t_0‖) = 1/2 on the unit sphere.
    let mf = m as f64;
    let mut p_cert = mf * d as f64 - n_out as f64;
    let mut q_cert = p_cert;
    for k in 0..d {
        let mut c_p = 0.0;
        let mut c_q = 0.0;
        for i in n_in..n {
            c_p += p[(k, i)].abs();
            c_q += (r0.transpose() * (q.column(i) - &t0))[k].abs();
        }
        p_cert = p_cert.min(mf - c_p);
        q_cert = q_cert.min(mf - c_q);
    }
    let cert = p_cert.min(0.5 * q_cert);
    let params = NoiseParams {
        sigma: 0.0,
        sigma_t: 0.5,
        n_inliers: n_in,
        n_outliers: n_out,
        d,
        seed,
    };
    Ok((
        SyntheticInstance {
            pts: PointPairs::new(p, q)?,
            truth: RigidMotion::new(r0, t0)?,
            inlier_set: (0..n_in).collect(),
            params,
        },
        cert,
    ))
}
