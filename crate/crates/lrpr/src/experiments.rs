//! Monte-Carlo experiment harness and proof-identity checks.
//!
//! Experiments draw independent problem instances, solve them, and
//! aggregate the noise-normalized error `rho = error / (|eta|_2 / sqrt(p))`
//! into per-grid-point quantiles. Each trial derives every random object
//! (ensemble, target, noise, solver init) from a single trial seed, itself
//! derived from the master seed and trial index, so tables are pure
//! functions of (config, seed) and trials can run on any number of
//! threads without changing results.
//!
//! The check functions evaluate, on concrete random instances, the exact
//! inequalities and correlation statistics that drive the recovery
//! analysis: the sign-partition lower bounds on the amplitude residual,
//! noise-condition classifiers, and the positive-part-optimal correlation
//! sup. Violations indicate an implementation bug, not bad luck: the
//! inequalities are deterministic identities given the instance.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{LrprError, Result};
use crate::measurement::{fmt_f64, Dims, LowRankTarget, MeasurementEnsemble};
use crate::rng::{derive_rng, DOM_NOISE, DOM_SAMPLE, DOM_TRIAL};
use crate::solvers::{
    sign_ambiguous_error, sign_pm, solve_nuclear_ball, solve_nuclear_constrained,
    solve_nuclear_regularized, solve_rank_constrained, SolverConfig, SolverResult,
};
use crate::srip::{quantile, SetKind};

/// Noise generator attached to an experiment.
#[derive(Debug, Clone, PartialEq)]
pub enum NoiseKind {
    None,
    Gaussian {
        sigma: f64,
    },
    Constant {
        c: f64,
    },
    /// `amplitude * (+1, -1, +1, ...)`: large per-entry noise whose sum
    /// nearly cancels; the negative control for the unbounded-noise regime.
    Alternating {
        amplitude: f64,
    },
    Custom {
        values: Vec<f64>,
    },
}

impl NoiseKind {
    pub fn label(&self) -> &'static str {
        match self {
            NoiseKind::None => "none",
            NoiseKind::Gaussian { .. } => "gaussian",
            NoiseKind::Constant { .. } => "constant",
            NoiseKind::Alternating { .. } => "alternating",
            NoiseKind::Custom { .. } => "custom",
        }
    }

    /// Materializes the noise vector for one trial; `None` for noiseless.
    pub fn generate(&self, p: usize, trial_seed: u64) -> Result<Option<DVector<f64>>> {
        match self {
            NoiseKind::None => Ok(None),
            NoiseKind::Gaussian { sigma } => {
                if sigma.is_nan() || *sigma < 0.0 {
                    return Err(LrprError::Config(format!(
                        "gaussian sigma must be >= 0, got {sigma}"
                    )));
                }
                let mut rng = derive_rng(trial_seed, DOM_NOISE, 0, 0);
                Ok(Some(DVector::from_fn(p, |_, _| {
                    sigma * rng.sample::<f64, _>(StandardNormal)
                })))
            }
            NoiseKind::Constant { c } => Ok(Some(DVector::from_element(p, *c))),
            NoiseKind::Alternating { amplitude } => Ok(Some(DVector::from_fn(p, |i, _| {
                if i % 2 == 0 {
                    *amplitude
                } else {
                    -*amplitude
                }
            }))),
            NoiseKind::Custom { values } => {
                if values.len() != p {
                    return Err(LrprError::Config(format!(
                        "custom noise has {} entries, expected p={p}",
                        values.len()
                    )));
                }
                Ok(Some(DVector::from_column_slice(values)))
            }
        }
    }
}

/// Which estimator an experiment exercises.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Rank,
    Ball,
    Reg,
    Constrained,
}

impl ModelKind {
    pub fn label(&self) -> &'static str {
        match self {
            ModelKind::Rank => "rank",
            ModelKind::Ball => "ball",
            ModelKind::Reg => "reg",
            ModelKind::Constrained => "constrained",
        }
    }
}

/// One solved instance, as persisted to the experiment CSV.
#[derive(Debug, Clone)]
pub struct TrialRecord {
    pub dims: Dims,
    pub model: ModelKind,
    pub noise_kind: &'static str,
    pub trial: usize,
    pub seed: u64,
    pub error: f64,
    pub eta_norm: f64,
    pub eta_sum: f64,
    /// `error / (eta_norm / sqrt(p))`; `None` when `eta_norm = 0`.
    pub rho: Option<f64>,
    pub iters: usize,
    pub stationarity: f64,
}

impl TrialRecord {
    fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            self.dims.p,
            self.model.label(),
            self.noise_kind,
            self.trial,
            self.seed,
            fmt_f64(self.error),
            fmt_f64(self.eta_norm),
            fmt_f64(self.eta_sum),
            fmt_f64(self.rho.unwrap_or(f64::NAN)),
            self.iters,
            fmt_f64(self.stationarity),
        )
    }
}

pub const RECORD_CSV_HEADER: &str =
    "p,model,noise_kind,trial,seed,error,eta_norm,eta_sum,rho,iters,stationarity";

/// Writes records under the fixed header, floats at 17 significant digits.
pub fn write_records_csv(records: &[TrialRecord], path: &Path) -> Result<()> {
    let mut out = String::from(RECORD_CSV_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&r.csv_row());
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Measurement index sets split by the sign pair of `<A_i, X>` and
/// `<A_i, X0>`; zero counts as positive sign.
#[derive(Debug, Clone)]
pub struct SignPartition {
    /// Both positive.
    pub t1: Vec<usize>,
    /// Both negative.
    pub t2: Vec<usize>,
    /// `X` positive, `X0` negative.
    pub t3: Vec<usize>,
    /// `X` negative, `X0` positive.
    pub t4: Vec<usize>,
}

impl SignPartition {
    /// The partition always splits `[p]` into two halves, one of which
    /// holds at least `ceil(p/2)` indices.
    pub fn agreeing(&self) -> usize {
        self.t1.len() + self.t2.len()
    }

    pub fn disagreeing(&self) -> usize {
        self.t3.len() + self.t4.len()
    }
}

pub fn sign_partition(
    ensemble: &MeasurementEnsemble,
    x: &DMatrix<f64>,
    x0: &DMatrix<f64>,
) -> Result<SignPartition> {
    let zx = ensemble.apply(x)?;
    let z0 = ensemble.apply(x0)?;
    let mut part = SignPartition {
        t1: Vec::new(),
        t2: Vec::new(),
        t3: Vec::new(),
        t4: Vec::new(),
    };
    for i in 0..ensemble.dims.p {
        match (sign_pm(zx[i]) > 0.0, sign_pm(z0[i]) > 0.0) {
            (true, true) => part.t1.push(i),
            (false, false) => part.t2.push(i),
            (true, false) => part.t3.push(i),
            (false, true) => part.t4.push(i),
        }
    }
    Ok(part)
}

/// Numeric check of the two sign-partition lower bounds on the amplitude
/// residual. Both slacks (left minus right) must be nonnegative up to
/// rounding; the identity is exact per index, the inequality comes from
/// dropping the complementary sets' nonnegative terms.
#[derive(Debug, Clone)]
pub struct Lemma31Report {
    pub lhs: f64,
    pub slack_minus: f64,
    pub slack_plus: f64,
    pub set_sizes: [usize; 4],
    pub pass: bool,
}

pub fn check_lemma31(
    ensemble: &MeasurementEnsemble,
    x: &DMatrix<f64>,
    x0: &DMatrix<f64>,
    eta: &DVector<f64>,
) -> Result<Lemma31Report> {
    let p = ensemble.dims.p;
    if eta.len() != p {
        return Err(LrprError::Dimension(format!(
            "eta has length {}, expected p={p}",
            eta.len()
        )));
    }
    let zx = ensemble.apply(x)?;
    let z0 = ensemble.apply(x0)?;
    let y = DVector::from_iterator(p, (0..p).map(|i| z0[i].abs() + eta[i]));
    let lhs: f64 = (0..p).map(|i| (zx[i].abs() - y[i]).powi(2)).sum();

    let part = sign_partition(ensemble, x, x0)?;
    let h_minus = x - x0;
    let h_plus = x + x0;
    let zm = ensemble.apply(&h_minus)?;
    let zp = ensemble.apply(&h_plus)?;

    let mut rhs_minus = 0.0;
    for &i in part.t1.iter().chain(part.t2.iter()) {
        rhs_minus += zm[i] * zm[i] + eta[i] * eta[i];
    }
    for &i in &part.t1 {
        rhs_minus -= 2.0 * eta[i] * zm[i];
    }
    for &i in &part.t2 {
        rhs_minus += 2.0 * eta[i] * zm[i];
    }

    let mut rhs_plus = 0.0;
    for &i in part.t3.iter().chain(part.t4.iter()) {
        rhs_plus += zp[i] * zp[i] + eta[i] * eta[i];
    }
    for &i in &part.t3 {
        rhs_plus -= 2.0 * eta[i] * zp[i];
    }
    for &i in &part.t4 {
        rhs_plus += 2.0 * eta[i] * zp[i];
    }

    let slack_minus = lhs - rhs_minus;
    let slack_plus = lhs - rhs_plus;
    let tol = -1e-9 * lhs.abs().max(1.0);
    Ok(Lemma31Report {
        lhs,
        slack_minus,
        slack_plus,
        set_sizes: [part.t1.len(), part.t2.len(), part.t3.len(), part.t4.len()],
        pass: slack_minus >= tol && slack_plus >= tol,
    })
}

/// Which side of the noise dichotomy a vector falls on.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct NoiseClassification {
    /// `|sum eta| >= c0 sqrt(p) |eta|_2`: the aligned regime where no
    /// estimator can do better than the noise floor.
    pub satisfies_e_noiseone: bool,
    /// `|eta|_2 <= k1 sqrt(p)` and `|sum eta| <= k2 sqrt(p log p)`: the
    /// bounded regime the refined rate needs.
    pub satisfies_e_noise: bool,
    pub eta_sum: f64,
    pub eta_norm: f64,
}

pub fn classify_noise(eta: &DVector<f64>, c0: f64, k1: f64, k2: f64) -> NoiseClassification {
    let p = eta.len() as f64;
    let eta_sum: f64 = eta.iter().sum();
    let eta_norm = eta.norm();
    NoiseClassification {
        satisfies_e_noiseone: eta_sum.abs() >= c0 * p.sqrt() * eta_norm,
        satisfies_e_noise: eta_norm <= k1 * p.sqrt()
            && eta_sum.abs() <= k2 * (p * p.ln().max(0.0)).sqrt(),
        eta_sum,
        eta_norm,
    }
}

/// Runs one instance end to end. The trial seed feeds the ensemble, the
/// target, the noise, and any randomized solver component through
/// separate derived streams.
fn run_trial(
    dims: Dims,
    model: ModelKind,
    noise: &NoiseKind,
    trial: usize,
    trial_seed: u64,
    solver: &SolverConfig,
) -> Result<TrialRecord> {
    let ensemble = MeasurementEnsemble::generate(dims, trial_seed)?;
    let x0 = LowRankTarget::random_unit(dims.n, dims.m, dims.r, trial_seed)?;
    let eta = noise.generate(dims.p, trial_seed)?;
    let obs = ensemble.observe(&x0, eta.as_ref())?;

    let mut cfg = solver.clone();
    let solved: Result<SolverResult> = match model {
        ModelKind::Rank => solve_rank_constrained(&ensemble, &obs.y, &cfg),
        ModelKind::Ball => {
            if cfg.nuclear_radius.is_none() {
                cfg.nuclear_radius = Some(x0.nuclear_norm());
            }
            solve_nuclear_ball(&ensemble, &obs.y, &cfg)
        }
        ModelKind::Reg => solve_nuclear_regularized(&ensemble, &obs.y, &cfg),
        ModelKind::Constrained => {
            if cfg.noise_radius.is_none() {
                cfg.noise_radius = Some(eta.as_ref().map_or(0.0, |e| e.norm()));
            }
            solve_nuclear_constrained(&ensemble, &obs.y, &cfg)
        }
    };

    let eta_norm = eta.as_ref().map_or(0.0, |e| e.norm());
    let eta_sum = eta.as_ref().map_or(0.0, |e| e.iter().sum());
    let (error, iters, stationarity) = match solved {
        Ok(res) => (
            sign_ambiguous_error(&res.estimate, &x0.dense),
            res.iterations_used,
            res.stationarity_residual,
        ),
        // Divergence is recorded, not fatal; other errors abort the run.
        Err(LrprError::Divergence { history }) => {
            (f64::NAN, history.len().saturating_sub(1), f64::NAN)
        }
        Err(e) => return Err(e),
    };
    let rho = if eta_norm > 0.0 {
        Some(error / (eta_norm / (dims.p as f64).sqrt()))
    } else {
        None
    };
    Ok(TrialRecord {
        dims,
        model,
        noise_kind: noise.label(),
        trial,
        seed: trial_seed,
        error,
        eta_norm,
        eta_sum,
        rho,
        iters,
        stationarity,
    })
}

fn trial_seed(master: u64, index: u64) -> u64 {
    derive_rng(master, DOM_TRIAL, index, 0).gen::<u64>()
}

/// Runs `trials` instances at every grid point in parallel. Record order
/// is (grid point, trial), independent of scheduling.
fn run_grid<F: Fn(usize) -> Result<Dims> + Sync>(
    dims_of: F,
    p_grid: &[usize],
    trials: usize,
    model: ModelKind,
    noise: &NoiseKind,
    master_seed: u64,
    solver: &SolverConfig,
) -> Result<Vec<TrialRecord>> {
    if trials == 0 || p_grid.is_empty() {
        return Err(LrprError::Config(
            "need at least one grid point and one trial".into(),
        ));
    }
    let jobs: Vec<(usize, usize)> = p_grid
        .iter()
        .enumerate()
        .flat_map(|(pi, _)| (0..trials).map(move |t| (pi, t)))
        .collect();
    jobs.into_par_iter()
        .map(|(pi, t)| {
            let dims = dims_of(p_grid[pi])?;
            let seed = trial_seed(master_seed, (pi * trials + t) as u64);
            run_trial(dims, model, noise, t, seed, solver)
        })
        .collect()
}

/// Per-grid-point aggregate of the noise-normalized error.
#[derive(Debug, Clone, serde::Serialize)]
pub struct GridSummary {
    pub p: usize,
    pub median_error: f64,
    /// Median and interquartile range of rho; absent for noiseless runs.
    pub median_rho: Option<f64>,
    pub q25_rho: Option<f64>,
    pub q75_rho: Option<f64>,
    pub q10_rho: Option<f64>,
    pub trials: usize,
}

fn summarize(records: &[TrialRecord], p: usize) -> GridSummary {
    let subset: Vec<&TrialRecord> = records.iter().filter(|r| r.dims.p == p).collect();
    let mut errors: Vec<f64> = subset
        .iter()
        .map(|r| r.error)
        .filter(|e| e.is_finite())
        .collect();
    errors.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut rhos: Vec<f64> = subset
        .iter()
        .filter_map(|r| r.rho)
        .filter(|x| x.is_finite())
        .collect();
    rhos.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let rho_q = |q: f64| -> Option<f64> {
        if rhos.is_empty() {
            None
        } else {
            Some(quantile(&rhos, q))
        }
    };
    GridSummary {
        p,
        median_error: if errors.is_empty() {
            f64::NAN
        } else {
            quantile(&errors, 0.5)
        },
        median_rho: rho_q(0.5),
        q25_rho: rho_q(0.25),
        q75_rho: rho_q(0.75),
        q10_rho: rho_q(0.10),
        trials: subset.len(),
    }
}

#[derive(Debug, Clone)]
pub struct ScalingParams {
    pub n: usize,
    pub m: usize,
    pub r: usize,
    pub p_grid: Vec<usize>,
    pub trials: usize,
    pub noise: NoiseKind,
    pub model: ModelKind,
    pub seed: u64,
    pub solver: SolverConfig,
}

#[derive(Debug, Clone)]
pub struct ScalingResult {
    pub records: Vec<TrialRecord>,
    pub summaries: Vec<GridSummary>,
}

/// Error-scaling sweep over a grid of `p`. Requires the sample-complexity
/// margin `p >= 2 (m + n) r` at every grid point.
pub fn run_scaling_experiment(params: &ScalingParams) -> Result<ScalingResult> {
    let floor = 2 * (params.m + params.n) * params.r;
    for &p in &params.p_grid {
        if p < floor {
            return Err(LrprError::Config(format!(
                "grid point p={p} below the sample floor {floor} = 2(m+n)r"
            )));
        }
    }
    let records = run_grid(
        |p| Dims::new(params.n, params.m, p, params.r),
        &params.p_grid,
        params.trials,
        params.model,
        &params.noise,
        params.seed,
        &params.solver,
    )?;
    let summaries = params
        .p_grid
        .iter()
        .map(|&p| summarize(&records, p))
        .collect();
    Ok(ScalingResult { records, summaries })
}

#[derive(Debug, Clone)]
pub struct TightnessParams {
    pub n: usize,
    pub m: usize,
    pub r: usize,
    pub p_grid: Vec<usize>,
    pub trials: usize,
    /// Constant noise level; must keep `|eta|_2 / sqrt(p) = c <= |X0|_F`.
    pub c: f64,
    /// Threshold for the aligned-noise classifier; slightly below 1
    /// because constant noise sits exactly at the equality case.
    pub c0: f64,
    /// When set, every grid point's 10% rho quantile must reach it.
    pub floor: Option<f64>,
    pub seed: u64,
    pub solver: SolverConfig,
}

#[derive(Debug, Clone)]
pub struct TightnessResult {
    pub records: Vec<TrialRecord>,
    pub summaries: Vec<GridSummary>,
    /// True when every generated noise vector classifies as aligned.
    pub all_aligned: bool,
}

/// Lower-bound probe under constant (fully aligned) noise: the error
/// cannot be beaten below the noise floor, so the low quantile of rho
/// stays bounded away from zero.
pub fn run_tightness_experiment(params: &TightnessParams) -> Result<TightnessResult> {
    if params.c.is_nan() || params.c < 0.0 {
        return Err(LrprError::Config(format!(
            "constant noise level must be >= 0, got {}",
            params.c
        )));
    }
    if params.c > 1.0 {
        // Targets are unit Frobenius; larger noise would break the
        // experiment's floor hypothesis.
        return Err(LrprError::Config(format!(
            "constant noise level {} exceeds the unit target norm",
            params.c
        )));
    }
    if !(params.c0 > 0.0 && params.c0 < 1.0) {
        return Err(LrprError::Config(format!(
            "c0 must lie in (0, 1), got {}",
            params.c0
        )));
    }
    let noise = NoiseKind::Constant { c: params.c };
    let records = run_grid(
        |p| Dims::new(params.n, params.m, p, params.r),
        &params.p_grid,
        params.trials,
        ModelKind::Rank,
        &noise,
        params.seed,
        &params.solver,
    )?;
    let mut all_aligned = true;
    if params.c > 0.0 {
        for &p in &params.p_grid {
            let eta = noise.generate(p, 0)?.expect("constant noise present");
            if !classify_noise(&eta, params.c0, 1.0, 1.0).satisfies_e_noiseone {
                all_aligned = false;
            }
        }
    }
    let summaries: Vec<GridSummary> = params
        .p_grid
        .iter()
        .map(|&p| summarize(&records, p))
        .collect();
    if let Some(floor) = params.floor {
        for s in &summaries {
            match s.q10_rho {
                Some(q) if q >= floor => {}
                Some(q) => {
                    return Err(LrprError::AssertionFail(format!(
                        "tightness floor violated at p={}: 10% quantile {q} < {floor}",
                        s.p
                    )));
                }
                None => {
                    return Err(LrprError::AssertionFail(format!(
                        "tightness floor check at p={} has no defined rho",
                        s.p
                    )));
                }
            }
        }
    }
    Ok(TightnessResult {
        records,
        summaries,
        all_aligned,
    })
}

#[derive(Debug, Clone)]
pub struct RefinedParams {
    pub n: usize,
    pub m: usize,
    pub r: usize,
    pub p_grid: Vec<usize>,
    pub trials: usize,
    pub sigma: f64,
    pub seed: u64,
    pub solver: SolverConfig,
}

#[derive(Debug, Clone)]
pub struct RefinedResult {
    pub records: Vec<TrialRecord>,
    /// `(p, rate, median error)` per grid point, with
    /// `rate = sqrt((m+n+1) r log(p) / p)`.
    pub points: Vec<(usize, f64, f64)>,
    /// Least-squares fit of `log(median error)` on `log(rate)`; absent
    /// for the noiseless control where errors sit at the solver floor.
    pub slope: Option<f64>,
    pub intercept: Option<f64>,
}

/// Rate-matching regression: if errors track the refined bound, the
/// fitted slope is close to 1.
pub fn run_refined_experiment(params: &RefinedParams) -> Result<RefinedResult> {
    if !(params.sigma >= 0.0 && params.sigma <= 1.0) {
        return Err(LrprError::Config(format!(
            "sigma must lie in [0, 1] to keep the noise bounded, got {}",
            params.sigma
        )));
    }
    if params.p_grid.len() < 2 && params.sigma > 0.0 {
        return Err(LrprError::Config(
            "regression needs at least two grid points".into(),
        ));
    }
    let noise = if params.sigma == 0.0 {
        NoiseKind::None
    } else {
        NoiseKind::Gaussian {
            sigma: params.sigma,
        }
    };
    let records = run_grid(
        |p| Dims::new(params.n, params.m, p, params.r),
        &params.p_grid,
        params.trials,
        ModelKind::Rank,
        &noise,
        params.seed,
        &params.solver,
    )?;
    let dim_factor = ((params.m + params.n + 1) * params.r) as f64;
    let points: Vec<(usize, f64, f64)> = params
        .p_grid
        .iter()
        .map(|&p| {
            let rate = (dim_factor * (p as f64).ln() / p as f64).sqrt();
            (p, rate, summarize(&records, p).median_error)
        })
        .collect();
    let (slope, intercept) = if params.sigma == 0.0 {
        (None, None)
    } else {
        let xs: Vec<f64> = points.iter().map(|(_, rate, _)| rate.ln()).collect();
        let ys: Vec<f64> = points.iter().map(|(_, _, e)| e.ln()).collect();
        let (a, b) = least_squares(&xs, &ys)?;
        (Some(a), Some(b))
    };
    Ok(RefinedResult {
        records,
        points,
        slope,
        intercept,
    })
}

/// Slope and intercept of the least-squares line through `(x, y)` pairs.
fn least_squares(xs: &[f64], ys: &[f64]) -> Result<(f64, f64)> {
    let n = xs.len() as f64;
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(LrprError::Argument("regression needs >= 2 points".into()));
    }
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    if sxx == 0.0 {
        return Err(LrprError::Numeric(
            "degenerate regression: zero x variance".into(),
        ));
    }
    let slope = sxy / sxx;
    Ok((slope, my - slope * mx))
}

#[derive(Debug, Clone)]
pub struct LambdaSweepParams {
    pub n: usize,
    pub m: usize,
    pub r: usize,
    pub p: usize,
    pub lambdas: Vec<f64>,
    pub trials: usize,
    pub noise: NoiseKind,
    pub seed: u64,
    pub solver: SolverConfig,
}

#[derive(Debug, Clone)]
pub struct LambdaSweepResult {
    /// Regularized records for every lambda, then the rank baseline.
    pub records: Vec<TrialRecord>,
    /// `(lambda, median error)` in the given lambda order.
    pub medians: Vec<(f64, f64)>,
    pub baseline_median_error: f64,
    /// Fitted slope of median error against `lambda sqrt(r) / p`.
    pub slope_vs_scale: f64,
    /// Ratio of the smallest-lambda median to the baseline median.
    pub ratio_at_lambda_min: f64,
}

/// Over-regularization sweep. Every trial reuses one instance across all
/// lambdas and the rank baseline, so medians are paired. All lambdas must
/// clear the theory threshold `2 sqrt(2p) |eta|_2` for every realized
/// noise vector.
pub fn run_lambda_sweep(params: &LambdaSweepParams) -> Result<LambdaSweepResult> {
    if params.lambdas.is_empty() || params.trials == 0 {
        return Err(LrprError::Config(
            "need at least one lambda and one trial".into(),
        ));
    }
    if params.noise == NoiseKind::None {
        return Err(LrprError::Config(
            "lambda sweep needs noise; the threshold is zero without it".into(),
        ));
    }
    let dims = Dims::new(params.n, params.m, params.p, params.r)?;

    // The precondition must hold for the realized noise of every trial.
    let seeds: Vec<u64> = (0..params.trials)
        .map(|t| trial_seed(params.seed, t as u64))
        .collect();
    let mut max_eta_norm = 0.0f64;
    for &s in &seeds {
        let eta = params.noise.generate(params.p, s)?.expect("non-none noise");
        max_eta_norm = max_eta_norm.max(eta.norm());
    }
    let threshold = 2.0 * (2.0 * params.p as f64).sqrt() * max_eta_norm;
    for &l in &params.lambdas {
        if l <= threshold {
            return Err(LrprError::Config(format!(
                "lambda {l} is not above the threshold {threshold}"
            )));
        }
    }

    let mut jobs: Vec<(Option<f64>, usize)> = Vec::new();
    for &l in &params.lambdas {
        for t in 0..params.trials {
            jobs.push((Some(l), t));
        }
    }
    for t in 0..params.trials {
        jobs.push((None, t));
    }
    let records: Vec<TrialRecord> = jobs
        .into_par_iter()
        .map(|(lambda, t)| {
            let mut cfg = params.solver.clone();
            match lambda {
                Some(l) => {
                    cfg.lambda = Some(l);
                    run_trial(dims, ModelKind::Reg, &params.noise, t, seeds[t], &cfg)
                }
                None => run_trial(dims, ModelKind::Rank, &params.noise, t, seeds[t], &cfg),
            }
        })
        .collect::<Result<_>>()?;

    let median_of = |chunk: &[TrialRecord]| -> f64 {
        let mut errs: Vec<f64> = chunk
            .iter()
            .map(|r| r.error)
            .filter(|e| e.is_finite())
            .collect();
        errs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        quantile(&errs, 0.5)
    };
    let mut medians = Vec::new();
    for (i, &l) in params.lambdas.iter().enumerate() {
        medians.push((
            l,
            median_of(&records[i * params.trials..(i + 1) * params.trials]),
        ));
    }
    let baseline_median_error = median_of(&records[params.lambdas.len() * params.trials..]);

    let xs: Vec<f64> = params
        .lambdas
        .iter()
        .map(|l| l * (params.r as f64).sqrt() / params.p as f64)
        .collect();
    let ys: Vec<f64> = medians.iter().map(|(_, e)| *e).collect();
    let slope_vs_scale = if params.lambdas.len() >= 2 {
        least_squares(&xs, &ys)?.0
    } else {
        f64::NAN
    };
    let ratio_at_lambda_min = {
        let (i_min, _) = params
            .lambdas
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .expect("nonempty lambdas");
        medians[i_min].1 / baseline_median_error
    };
    Ok(LambdaSweepResult {
        records,
        medians,
        baseline_median_error,
        slope_vs_scale,
        ratio_at_lambda_min,
    })
}

/// Sample maxima of the two noise-correlation statistics, normalized by
/// their analytic envelopes.
#[derive(Debug, Clone, serde::Serialize)]
pub struct EtaCorrelationReport {
    /// `max_H sum_i max(eta_i <A_i, H>, 0) / (sqrt(p) |eta|_2)`; the inner
    /// index set choice is exactly optimal (positive-part selection).
    pub max_optimal_t_ratio: f64,
    /// `max_H |sum_i eta_i |<A_i, H>|| / (sqrt((m+n+1) r log p) |eta|_2 +
    /// |sum eta|)`.
    pub max_abs_corr_ratio: f64,
    pub samples: usize,
}

/// The exactly-optimal index set for `sum_{i in T} c_i` is `{i : c_i > 0}`.
pub fn optimal_t_value(products: &DVector<f64>) -> f64 {
    products.iter().map(|&v| v.max(0.0)).sum()
}

pub fn check_eta_correlation_bounds(
    ensemble: &MeasurementEnsemble,
    eta: &DVector<f64>,
    r: usize,
    samples: usize,
    set_kind: SetKind,
    seed: u64,
) -> Result<EtaCorrelationReport> {
    let (n, m, p) = (ensemble.dims.n, ensemble.dims.m, ensemble.dims.p);
    if samples == 0 {
        return Err(LrprError::Argument("need at least one sample".into()));
    }
    if eta.len() != p {
        return Err(LrprError::Dimension(format!(
            "eta has length {}, expected p={p}",
            eta.len()
        )));
    }
    let eta_norm = eta.norm();
    if eta_norm == 0.0 {
        return Ok(EtaCorrelationReport {
            max_optimal_t_ratio: 0.0,
            max_abs_corr_ratio: 0.0,
            samples,
        });
    }
    let eta_sum_abs: f64 = eta.iter().sum::<f64>().abs();
    let denom_t = (p as f64).sqrt() * eta_norm;
    let denom_corr = (((m + n + 1) * r) as f64 * (p as f64).ln()).sqrt() * eta_norm + eta_sum_abs;
    let stats: Vec<(f64, f64)> = (0..samples)
        .into_par_iter()
        .map(|k| {
            let mut rng = derive_rng(seed, DOM_SAMPLE, k as u64, 1);
            let h = match set_kind {
                SetKind::UR => crate::srip::sample_u_r(n, m, r, &mut rng),
                SetKind::NRStar => crate::srip::sample_n_r_star(n, m, r, &mut rng),
            };
            let z = ensemble.apply(&h)?;
            let products = DVector::from_iterator(p, (0..p).map(|i| eta[i] * z[i]));
            let corr: f64 = (0..p).map(|i| eta[i] * z[i].abs()).sum();
            Ok((optimal_t_value(&products), corr.abs()))
        })
        .collect::<Result<_>>()?;
    Ok(EtaCorrelationReport {
        max_optimal_t_ratio: stats.iter().map(|s| s.0).fold(0.0, f64::max) / denom_t,
        max_abs_corr_ratio: stats.iter().map(|s| s.1).fold(0.0, f64::max) / denom_corr,
        samples,
    })
}
