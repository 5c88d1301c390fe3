//! Benchmark harness: synthetic experiment sweeps over dimensions and
//! outlier counts, machine-readable result records, and the `bench` CLI.
//!
//! Trials are independent work items executed (optionally in parallel) with
//! per-trial seeds derived as `seed ⊕ splitmix64(trial)`; the record stream
//! is ordered by `(d, n_outliers, trial, method)` regardless of completion
//! order, so repeated runs with the same spec are byte-identical.

pub mod config;
pub mod csvio;

#[cfg(feature = "cli")]
pub mod cli;

use nalgebra::DMatrix;

use crate::objectives::{energy_robust, NormPower, PointPairs, RigidMotion};
use crate::recovery::{generate_instance, generate_semisupervised, recovery_metrics, NoiseParams};
use crate::solvers::{solve_relaxation_orth, solve_relaxation_rigid, SolverConfig, Stopwatch};
use crate::srp::{
    irls_rigid, irls_srp2_init, nonsym_rigid_pipeline, srp_rigid, srp_semisupervised,
    srp_squared_pipeline, weighted_procrustes, AlignmentResult, MethodTag,
};
use crate::solvers::CovVariant;
use crate::{Result, SrpError};

/// Which synthetic experiment family a spec runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentKind {
    ApproximationRatio,
    RecoveryNoiseless,
    RecoveryNoisy,
    Semisupervised,
}

impl std::fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            ExperimentKind::ApproximationRatio => "approximation_ratio",
            ExperimentKind::RecoveryNoiseless => "recovery_noiseless",
            ExperimentKind::RecoveryNoisy => "recovery_noisy",
            ExperimentKind::Semisupervised => "semisupervised",
        };
        write!(f, "{s}")
    }
}

impl std::str::FromStr for ExperimentKind {
    type Err = SrpError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "approximation_ratio" => Ok(ExperimentKind::ApproximationRatio),
            "recovery_noiseless" => Ok(ExperimentKind::RecoveryNoiseless),
            "recovery_noisy" => Ok(ExperimentKind::RecoveryNoisy),
            "semisupervised" => Ok(ExperimentKind::Semisupervised),
            other => Err(SrpError::Parse(format!("unknown experiment kind '{other}'"))),
        }
    }
}

/// Full description of one experiment sweep.
#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub kind: ExperimentKind,
    pub dims: Vec<usize>,
    pub outlier_counts: Vec<usize>,
    pub trials: usize,
    pub methods: Vec<MethodTag>,
    pub sigma: f64,
    pub sigma_t: f64,
    pub n_inliers: usize,
    /// Unpaired pool size (semisupervised kind only).
    pub pool_size: usize,
    pub lambda_bar: f64,
    pub seed: u64,
    pub output_path: String,
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(SrpError::InvalidArgument("trials must be >= 1".into()));
        }
        if self.methods.is_empty() {
            return Err(SrpError::InvalidArgument("methods must be nonempty".into()));
        }
        if self.dims.is_empty() || self.outlier_counts.is_empty() {
            return Err(SrpError::InvalidArgument(
                "dims and outlier_counts must be nonempty".into(),
            ));
        }
        if self.dims.iter().any(|&d| d == 0) {
            return Err(SrpError::InvalidArgument("dims must be >= 1".into()));
        }
        Ok(())
    }
}

/// One result row: a method evaluated on one trial instance. Numeric fields
/// are `None` when not applicable to the method.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub experiment: String,
    pub trial: usize,
    pub d: usize,
    pub n_outliers: usize,
    pub method: MethodTag,
    pub achieved_energy: Option<f64>,
    pub lower_bound: Option<f64>,
    pub ratio: Option<f64>,
    pub rot_err: Option<f64>,
    pub trans_err: Option<f64>,
    /// Kept in memory and summarized; written empty-marked in the results
    /// CSV so that reruns are byte-identical.
    pub wall_time_s: Option<f64>,
    pub converged: Option<bool>,
}

/// Per-cell arithmetic means over the trial records.
#[derive(Debug, Clone)]
pub struct SummaryRow {
    pub d: usize,
    pub n_outliers: usize,
    pub method: MethodTag,
    pub trials: usize,
    pub mean_achieved_energy: Option<f64>,
    pub mean_lower_bound: Option<f64>,
    pub mean_ratio: Option<f64>,
    pub mean_rot_err: Option<f64>,
    pub mean_trans_err: Option<f64>,
    pub mean_wall_time_s: Option<f64>,
    pub converged_count: usize,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub records: Vec<TrialRecord>,
    pub summary: Vec<SummaryRow>,
}

pub(crate) fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

fn solver_config(p: NormPower, seed: u64, translations: bool) -> SolverConfig {
    let mut cfg = SolverConfig::new(p).with_seed(seed);
    cfg.use_translations = translations;
    cfg
}

fn record_from_alignment(
    base: &TrialRecord,
    out: &AlignmentResult,
    truth: &RigidMotion,
) -> Result<TrialRecord> {
    let (rot_err, trans_err) = recovery_metrics(out, truth)?;
    let mut rec = base.clone();
    rec.achieved_energy = Some(out.achieved_energy);
    rec.lower_bound = Some(out.lower_bound);
    rec.ratio = if out.lower_bound > 1e-12 {
        Some(out.ratio)
    } else {
        None
    };
    rec.rot_err = Some(rot_err);
    rec.trans_err = Some(trans_err);
    rec.converged = Some(out.solve_report.as_ref().map_or(true, |r| r.converged));
    Ok(rec)
}

/// Run one method on one rigid-sweep instance.
fn run_method_rigid(
    method: MethodTag,
    pts: &PointPairs,
    truth: &RigidMotion,
    seed: u64,
    base: &TrialRecord,
) -> Result<TrialRecord> {
    let watch = Stopwatch::start();
    let mut rec = match method {
        MethodTag::Procrustes => {
            let motion = weighted_procrustes(pts, &vec![1.0; pts.len()])?;
            let out = AlignmentResult {
                achieved_energy: energy_robust(&motion, pts)?,
                motion,
                lower_bound: 0.0,
                ratio: 0.0,
                method,
                solve_report: None,
                energy_trace: Vec::new(),
            };
            record_from_alignment(base, &out, truth)?
        }
        MethodTag::Irls => {
            let out = irls_rigid(pts, None, None, 200, 1e-12)?;
            record_from_alignment(base, &out, truth)?
        }
        MethodTag::IrlsSrp2Init => {
            let cfg = solver_config(NormPower::Two, seed, true);
            let out = irls_srp2_init(pts, &cfg, 200, 1e-12)?;
            record_from_alignment(base, &out, truth)?
        }
        MethodTag::Srp1 | MethodTag::Srp2 | MethodTag::SrpInf => {
            let p = match method {
                MethodTag::Srp1 => NormPower::One,
                MethodTag::Srp2 => NormPower::Two,
                _ => NormPower::Inf,
            };
            let cfg = solver_config(p, seed, true);
            let out = srp_rigid(pts, &cfg)?;
            record_from_alignment(base, &out, truth)?
        }
        MethodTag::NonSym => {
            let cfg = solver_config(NormPower::Two, seed, true);
            let out = nonsym_rigid_pipeline(pts, &cfg)?;
            record_from_alignment(base, &out, truth)?
        }
        MethodTag::SrpSquared => {
            let cfg = solver_config(NormPower::Two, seed, true);
            let out = srp_squared_pipeline(pts, None, &cfg)?;
            record_from_alignment(base, &out, truth)?
        }
        MethodTag::LowerBound2 | MethodTag::LowerBoundInf => {
            let p = if method == MethodTag::LowerBound2 {
                NormPower::Two
            } else {
                NormPower::Inf
            };
            let cfg = solver_config(p, seed, true);
            let report = solve_relaxation_rigid(pts, &cfg)?;
            let mut rec = base.clone();
            rec.lower_bound = Some(report.solution.objective);
            rec.converged = Some(report.converged);
            rec
        }
        MethodTag::GroundTruth => {
            let out = AlignmentResult {
                motion: truth.clone(),
                achieved_energy: energy_robust(truth, pts)?,
                lower_bound: 0.0,
                ratio: 0.0,
                method,
                solve_report: None,
                energy_trace: Vec::new(),
            };
            record_from_alignment(base, &out, truth)?
        }
    };
    rec.wall_time_s = Some(watch.seconds());
    Ok(rec)
}

/// Run one method on one semisupervised instance (orthogonal setting,
/// covariance pools available).
fn run_method_semisup(
    method: MethodTag,
    pts: &PointPairs,
    pools: (&DMatrix<f64>, &DMatrix<f64>),
    truth: &RigidMotion,
    lambda_bar: f64,
    seed: u64,
    base: &TrialRecord,
) -> Result<TrialRecord> {
    let watch = Stopwatch::start();
    let (ptilde, qtilde) = pools;
    let mut rec = match method {
        MethodTag::Srp1 | MethodTag::Srp2 | MethodTag::SrpInf => {
            let p = match method {
                MethodTag::Srp1 => NormPower::One,
                MethodTag::Srp2 => NormPower::Two,
                _ => NormPower::Inf,
            };
            let cfg = solver_config(p, seed, false);
            let out = srp_semisupervised(pts, ptilde, qtilde, lambda_bar, CovVariant::SrpP, &cfg)?;
            record_from_alignment(base, &out, truth)?
        }
        MethodTag::NonSym => {
            let cfg = solver_config(NormPower::Two, seed, false);
            let out =
                srp_semisupervised(pts, ptilde, qtilde, lambda_bar, CovVariant::NonSym, &cfg)?;
            record_from_alignment(base, &out, truth)?
        }
        MethodTag::SrpSquared => {
            let cfg = solver_config(NormPower::Two, seed, false);
            let out =
                srp_semisupervised(pts, ptilde, qtilde, lambda_bar, CovVariant::Squared, &cfg)?;
            record_from_alignment(base, &out, truth)?
        }
        MethodTag::LowerBound2 | MethodTag::LowerBoundInf => {
            let p = if method == MethodTag::LowerBound2 {
                NormPower::Two
            } else {
                NormPower::Inf
            };
            let cfg = solver_config(p, seed, false);
            let report = solve_relaxation_orth(pts, &cfg)?;
            let mut rec = base.clone();
            rec.lower_bound = Some(report.solution.objective);
            rec.converged = Some(report.converged);
            rec
        }
        // Pool-free baselines run on the paired points alone.
        _ => return run_method_rigid(method, pts, truth, seed, base),
    };
    rec.wall_time_s = Some(watch.seconds());
    Ok(rec)
}

fn run_trial(spec: &ExperimentSpec, d: usize, n_out: usize, trial: usize) -> Result<Vec<TrialRecord>> {
    let trial_seed = spec.seed ^ splitmix64(trial as u64);
    let base = TrialRecord {
        experiment: spec.kind.to_string(),
        trial,
        d,
        n_outliers: n_out,
        method: spec.methods[0],
        achieved_energy: None,
        lower_bound: None,
        ratio: None,
        rot_err: None,
        trans_err: None,
        wall_time_s: None,
        converged: None,
    };
    let mut records = Vec::with_capacity(spec.methods.len());
    match spec.kind {
        ExperimentKind::Semisupervised => {
            let (pts, ptilde, qtilde, truth) = generate_semisupervised(
                d,
                spec.n_inliers,
                spec.pool_size,
                n_out,
                spec.sigma,
                trial_seed,
            )?;
            for &method in &spec.methods {
                let mut b = base.clone();
                b.method = method;
                records.push(run_method_semisup(
                    method,
                    &pts,
                    (&ptilde, &qtilde),
                    &truth,
                    spec.lambda_bar,
                    trial_seed,
                    &b,
                )?);
            }
        }
        _ => {
            let params = NoiseParams {
                sigma: spec.sigma,
                sigma_t: spec.sigma_t,
                n_inliers: spec.n_inliers,
                n_outliers: n_out,
                d,
                seed: trial_seed,
            };
            let inst = generate_instance(&params)?;
            for &method in &spec.methods {
                let mut b = base.clone();
                b.method = method;
                records.push(run_method_rigid(method, &inst.pts, &inst.truth, trial_seed, &b)?);
            }
        }
    }
    Ok(records)
}

fn worker_count() -> usize {
    std::env::var("SRP_THREADS")
        .ok()
        .and_then(|s| s.parse::<usize>().ok())
        .unwrap_or(0)
}

#[cfg(feature = "parallel")]
fn run_items(spec: &ExperimentSpec, items: &[(usize, usize, usize)]) -> Result<Vec<Vec<TrialRecord>>> {
    use rayon::prelude::*;
    let run = || {
        items
            .par_iter()
            .map(|&(d, k, t)| run_trial(spec, d, k, t))
            .collect::<Result<Vec<_>>>()
    };
    let threads = worker_count();
    if threads > 0 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| SrpError::InvalidArgument(format!("thread pool: {e}")))?;
        pool.install(run)
    } else {
        run()
    }
}

#[cfg(not(feature = "parallel"))]
fn run_items(spec: &ExperimentSpec, items: &[(usize, usize, usize)]) -> Result<Vec<Vec<TrialRecord>>> {
    items
        .iter()
        .map(|&(d, k, t)| run_trial(spec, d, k, t))
        .collect()
}

/// Run the full sweep. Deterministic given the spec (including its seed),
/// independent of the worker count.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentOutput> {
    spec.validate()?;
    let mut dims = spec.dims.clone();
    dims.sort_unstable();
    dims.dedup();
    let mut outlier_counts = spec.outlier_counts.clone();
    outlier_counts.sort_unstable();
    outlier_counts.dedup();

    let mut items = Vec::new();
    for &d in &dims {
        for &k in &outlier_counts {
            for t in 0..spec.trials {
                items.push((d, k, t));
            }
        }
    }
    let nested = run_items(spec, &items)?;
    let records: Vec<TrialRecord> = nested.into_iter().flatten().collect();
    let summary = summarize(spec, &dims, &outlier_counts, &records);
    Ok(ExperimentOutput { records, summary })
}

fn mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}

fn summarize(
    spec: &ExperimentSpec,
    dims: &[usize],
    outlier_counts: &[usize],
    records: &[TrialRecord],
) -> Vec<SummaryRow> {
    let mut rows = Vec::new();
    for &d in dims {
        for &k in outlier_counts {
            for &method in &spec.methods {
                let cell: Vec<&TrialRecord> = records
                    .iter()
                    .filter(|r| r.d == d && r.n_outliers == k && r.method == method)
                    .collect();
                if cell.is_empty() {
                    continue;
                }
                let collect = |f: fn(&TrialRecord) -> Option<f64>| -> Vec<f64> {
                    cell.iter().filter_map(|r| f(r)).collect()
                };
                rows.push(SummaryRow {
                    d,
                    n_outliers: k,
                    method,
                    trials: cell.len(),
                    mean_achieved_energy: mean(&collect(|r| r.achieved_energy)),
                    mean_lower_bound: mean(&collect(|r| r.lower_bound)),
                    mean_ratio: mean(&collect(|r| r.ratio)),
                    mean_rot_err: mean(&collect(|r| r.rot_err)),
                    mean_trans_err: mean(&collect(|r| r.trans_err)),
                    mean_wall_time_s: mean(&collect(|r| r.wall_time_s)),
                    converged_count: cell.iter().filter(|r| r.converged == Some(true)).count(),
                });
            }
        }
    }
    rows
}

/// Open the output files first (so an unwritable path fails before any
/// solve), run the sweep, then write the results CSV and a
/// `<output>.summary.csv` companion.
pub fn run_experiment_and_write(spec: &ExperimentSpec) -> Result<ExperimentOutput> {
    spec.validate()?;
    let results_file = std::fs::File::create(&spec.output_path)?;
    let summary_path = format!("{}.summary.csv", spec.output_path);
    let summary_file = std::fs::File::create(&summary_path)?;
    let output = run_experiment(spec)?;
    csvio::write_results_csv(results_file, &output.records)?;
    csvio::write_summary_csv(summary_file, &output.summary)?;
    Ok(output)
}
