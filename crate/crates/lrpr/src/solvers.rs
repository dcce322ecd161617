//! Estimators for low-rank phase retrieval.
//!
//! All four estimators run the same projected/proximal amplitude-flow
//! iteration on the squared amplitude residual `|A(X)| - y`; they differ
//! only in the operator applied after each gradient step:
//!
//! - rank-constrained: truncated-SVD projection onto `rank <= r`,
//! - nuclear-ball: projection onto `{ |X|_* <= R }`,
//! - nuclear-regularized: singular value soft-thresholding,
//! - residual-constrained: bisection over the regularization weight,
//!   returning the smallest-nuclear-norm iterate that fits the data to
//!   within the requested radius.
//!
//! The step size backtracks from `1 / (2 L)` with `L` the squared top
//! singular value of the vectorized ensemble; descent is enforced every
//! iteration, so the recorded objective history is always nonincreasing.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{LrprError, Result};
use crate::measurement::{unvec_row_major, MeasurementEnsemble};
use crate::rng::{derive_rng, DOM_INIT};

/// How the iteration is seeded.
#[derive(Debug, Clone)]
pub enum InitStrategy {
    /// Power iteration on the amplitude-weighted second-moment operator.
    Spectral,
    /// Caller-supplied starting point.
    Provided(DMatrix<f64>),
    /// Gaussian matrix scaled to the observation energy.
    Random { seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepSize {
    /// `1 / (2 L)` from a power-iteration estimate of the operator norm.
    Auto,
    Fixed(f64),
}

#[derive(Debug, Clone)]
pub struct SolverConfig {
    pub max_iters: usize,
    pub step_size: StepSize,
    /// Stop when `|X_next - X|_F / max(|X|_F, 1e-12)` falls below this.
    pub tol_rel_change: f64,
    /// Rank budget for the rank-constrained model and for spectral
    /// truncation; defaults to the ensemble's `dims.r`.
    pub rank_budget: Option<usize>,
    /// Radius `R` for the nuclear-ball model.
    pub nuclear_radius: Option<f64>,
    /// Residual radius `eps` for the constrained model.
    pub noise_radius: Option<f64>,
    /// Weight `lambda` for the regularized model.
    pub lambda: Option<f64>,
    pub init: InitStrategy,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            max_iters: 5000,
            step_size: StepSize::Auto,
            tol_rel_change: 1e-8,
            rank_budget: None,
            nuclear_radius: None,
            noise_radius: None,
            lambda: None,
            init: InitStrategy::Spectral,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SolverResult {
    pub estimate: DMatrix<f64>,
    /// Objective at the initial point and after every accepted step.
    pub objective_history: Vec<f64>,
    pub iterations_used: usize,
    pub converged: bool,
    pub stationarity_residual: f64,
    /// Seconds spent inside the solve call.
    pub wall_time: f64,
    /// Regularization weight actually used (regularized and constrained
    /// models only).
    pub lambda_used: Option<f64>,
}

const ARMIJO_C: f64 = 1e-4;
const MAX_HALVINGS: usize = 30;
const DIVERGENCE_FACTOR: f64 = 1e3;
const REL_CHANGE_FLOOR: f64 = 1e-12;

/// Best rank-`r` approximation in Frobenius norm (truncated SVD). Returns
/// the input unchanged when `r >= min(n, m)`.
pub fn project_rank(x: &DMatrix<f64>, r: usize) -> DMatrix<f64> {
    let k = x.nrows().min(x.ncols());
    if r >= k {
        return x.clone();
    }
    let svd = x.clone().svd(true, true);
    let u = svd.u.as_ref().expect("svd with u");
    let vt = svd.v_t.as_ref().expect("svd with v_t");
    let mut s = svd.singular_values.clone();
    for i in r..s.len() {
        s[i] = 0.0;
    }
    u * DMatrix::from_diagonal(&s) * vt
}

/// Euclidean projection of nonnegative `s` onto the simplex-like set
/// `{ t >= 0, sum(t) <= z }`: identity when already inside, otherwise the
/// classical sorted water-filling step.
fn project_l1_ball_nonneg(s: &[f64], z: f64) -> Vec<f64> {
    let total: f64 = s.iter().sum();
    if total <= z {
        return s.to_vec();
    }
    let mut sorted = s.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (j, &v) in sorted.iter().enumerate() {
        cumsum += v;
        let candidate = (cumsum - z) / (j + 1) as f64;
        if v - candidate > 0.0 {
            theta = candidate;
        } else {
            break;
        }
    }
    s.iter().map(|&v| (v - theta).max(0.0)).collect()
}

/// Projection onto the nuclear-norm ball of radius `radius`: the singular
/// values are projected onto the l1 ball, the factors are kept.
pub fn project_nuclear_ball(x: &DMatrix<f64>, radius: f64) -> Result<DMatrix<f64>> {
    if radius.is_nan() || radius < 0.0 {
        return Err(LrprError::Argument(format!(
            "nuclear radius must be >= 0, got {radius}"
        )));
    }
    if radius == 0.0 {
        return Ok(DMatrix::zeros(x.nrows(), x.ncols()));
    }
    let svd = x.clone().svd(true, true);
    let s = svd.singular_values.as_slice();
    if s.iter().sum::<f64>() <= radius {
        return Ok(x.clone());
    }
    let projected = project_l1_ball_nonneg(s, radius);
    let u = svd.u.as_ref().expect("svd with u");
    let vt = svd.v_t.as_ref().expect("svd with v_t");
    Ok(u * DMatrix::from_diagonal(&DVector::from_vec(projected)) * vt)
}

/// Singular value soft-thresholding, the proximal map of `tau |.|_*`.
/// `tau = 0` is an exact identity (no SVD round-trip).
pub fn svt_prox(x: &DMatrix<f64>, tau: f64) -> Result<DMatrix<f64>> {
    if tau.is_nan() || tau < 0.0 {
        return Err(LrprError::Argument(format!(
            "svt threshold must be >= 0, got {tau}"
        )));
    }
    if tau == 0.0 {
        return Ok(x.clone());
    }
    let svd = x.clone().svd(true, true);
    let u = svd.u.as_ref().expect("svd with u");
    let vt = svd.v_t.as_ref().expect("svd with v_t");
    let s = svd.singular_values.map(|v| (v - tau).max(0.0));
    Ok(u * DMatrix::from_diagonal(&s) * vt)
}

/// Spectral initializer: power iteration on the amplitude-weighted
/// second-moment operator `X -> (1/p) sum_i y_i^2 <A_i, X> A_i`, whose top
/// eigenvector aligns with the target in expectation. The leading
/// direction is truncated to rank `r` and scaled so its Frobenius norm
/// matches the per-measurement observation energy `|y|_2 / sqrt(p)`.
pub fn spectral_init(
    ensemble: &MeasurementEnsemble,
    y: &DVector<f64>,
    r: usize,
) -> Result<DMatrix<f64>> {
    let (n, m, p) = (ensemble.dims.n, ensemble.dims.m, ensemble.dims.p);
    if y.len() != p {
        return Err(LrprError::Dimension(format!(
            "y has length {}, expected p={p}",
            y.len()
        )));
    }
    if r == 0 || r > n.min(m) {
        return Err(LrprError::Argument(format!(
            "spectral rank {r} out of range for {n}x{m}"
        )));
    }
    let ynorm = y.norm();
    if ynorm == 0.0 {
        return Ok(DMatrix::zeros(n, m));
    }
    let v_mat = ensemble.vectorized();
    let w = y.map(|v| v * v);
    let dim = n * m;
    let mut v = DVector::from_element(dim, 1.0 / (dim as f64).sqrt());
    for _ in 0..100 {
        let z = v_mat * &v;
        let weighted = DVector::from_iterator(p, (0..p).map(|i| w[i] * z[i]));
        let mut next = v_mat.tr_mul(&weighted) / p as f64;
        let norm = next.norm();
        if norm < 1e-300 {
            break;
        }
        next /= norm;
        v = next;
    }
    let x = unvec_row_major(&v, n, m);
    let x = project_rank(&x, r);
    let norm = x.norm();
    if norm == 0.0 {
        return Ok(x);
    }
    Ok(x * (ynorm / (p as f64).sqrt() / norm))
}

/// Squared operator norm of the vectorized ensemble (`sigma_max^2`) by 50
/// rounds of power iteration from a deterministic all-ones start.
pub fn operator_norm_sq(ensemble: &MeasurementEnsemble) -> f64 {
    let v_mat = ensemble.vectorized();
    let dim = v_mat.ncols();
    let mut v = DVector::from_element(dim, 1.0 / (dim as f64).sqrt());
    let mut lambda = 0.0;
    for _ in 0..50 {
        let z = v_mat * &v;
        lambda = z.norm_squared();
        let next = v_mat.tr_mul(&z);
        let norm = next.norm();
        if norm < 1e-300 {
            return 0.0;
        }
        v = next / norm;
    }
    lambda
}

/// `min(|xhat - x0|_F, |xhat + x0|_F)`: recovery error modulo the global
/// sign that amplitude measurements cannot determine.
pub fn sign_ambiguous_error(xhat: &DMatrix<f64>, x0: &DMatrix<f64>) -> f64 {
    let minus = (xhat - x0).norm();
    let plus = (xhat + x0).norm();
    minus.min(plus)
}

/// First-order stationarity diagnostic: `|sum_i (|z_i| - y_i) |z_i||`
/// normalized by `p |X|_F |y|_2`, with `z = A(X)`. Zero at `X = 0` by
/// convention; vanishes at stationary points of the residual objective.
pub fn stationarity_residual(
    ensemble: &MeasurementEnsemble,
    y: &DVector<f64>,
    x: &DMatrix<f64>,
) -> Result<f64> {
    let xnorm = x.norm();
    if xnorm == 0.0 {
        return Ok(0.0);
    }
    let z = ensemble.apply(x)?;
    let numerator: f64 = (0..z.len())
        .map(|i| (z[i].abs() - y[i]) * z[i].abs())
        .sum::<f64>()
        .abs();
    let denom = ensemble.dims.p as f64 * xnorm * y.norm();
    if denom == 0.0 {
        return Ok(if numerator == 0.0 { 0.0 } else { f64::INFINITY });
    }
    Ok(numerator / denom)
}

/// Sign convention shared by the gradient and the partition diagnostics:
/// zero counts as positive.
pub fn sign_pm(x: f64) -> f64 {
    if x >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

enum Model {
    Rank(usize),
    Ball(f64),
    Reg(f64),
}

impl Model {
    fn objective(&self, residual_sq: f64, x: &DMatrix<f64>) -> f64 {
        match self {
            Model::Rank(_) | Model::Ball(_) => residual_sq,
            Model::Reg(lambda) => residual_sq + lambda * nuclear_norm(x),
        }
    }

    fn step(&self, x: &DMatrix<f64>, g: &DMatrix<f64>, mu: f64) -> Result<DMatrix<f64>> {
        let moved = x - g * mu;
        match self {
            Model::Rank(r) => Ok(project_rank(&moved, *r)),
            Model::Ball(radius) => project_nuclear_ball(&moved, *radius),
            Model::Reg(lambda) => svt_prox(&moved, mu * lambda / 2.0),
        }
    }

    fn feasible_start(&self, x: DMatrix<f64>) -> Result<DMatrix<f64>> {
        match self {
            Model::Rank(r) => Ok(project_rank(&x, *r)),
            Model::Ball(radius) => project_nuclear_ball(&x, *radius),
            Model::Reg(_) => Ok(x),
        }
    }
}

pub fn nuclear_norm(x: &DMatrix<f64>) -> f64 {
    x.clone().svd(false, false).singular_values.iter().sum()
}

fn initial_point(
    ensemble: &MeasurementEnsemble,
    y: &DVector<f64>,
    config: &SolverConfig,
    rank: usize,
) -> Result<DMatrix<f64>> {
    let (n, m, p) = (ensemble.dims.n, ensemble.dims.m, ensemble.dims.p);
    match &config.init {
        InitStrategy::Spectral => spectral_init(ensemble, y, rank),
        InitStrategy::Provided(x) => {
            if x.shape() != (n, m) {
                return Err(LrprError::Dimension(format!(
                    "provided init is {}x{}, expected {n}x{m}",
                    x.nrows(),
                    x.ncols()
                )));
            }
            Ok(x.clone())
        }
        InitStrategy::Random { seed } => {
            let mut rng = derive_rng(*seed, DOM_INIT, 0, 0);
            let g = DMatrix::from_fn(n, m, |_, _| rng.sample::<f64, _>(StandardNormal));
            let gnorm = g.norm();
            if gnorm == 0.0 {
                return Ok(g);
            }
            Ok(g * (y.norm() / (p as f64).sqrt() / gnorm))
        }
    }
}

fn solve_with_model(
    ensemble: &MeasurementEnsemble,
    y: &DVector<f64>,
    config: &SolverConfig,
    model: Model,
) -> Result<SolverResult> {
    let start = Instant::now();
    let p = ensemble.dims.p;
    if y.len() != p {
        return Err(LrprError::Dimension(format!(
            "y has length {}, expected p={p}",
            y.len()
        )));
    }
    if config.max_iters == 0 {
        return Err(LrprError::Config("max_iters must be >= 1".into()));
    }
    if config.tol_rel_change.is_nan() || config.tol_rel_change <= 0.0 {
        return Err(LrprError::Config("tol_rel_change must be > 0".into()));
    }
    let rank = config.rank_budget.unwrap_or(ensemble.dims.r);
    if rank == 0 || rank > ensemble.dims.n.min(ensemble.dims.m) {
        return Err(LrprError::Config(format!(
            "rank budget {rank} out of range"
        )));
    }
    let mu0 = match config.step_size {
        StepSize::Auto => {
            let l = operator_norm_sq(ensemble);
            if l.is_nan() || l <= 0.0 {
                return Err(LrprError::Numeric(
                    "ensemble operator norm is zero; no auto step".into(),
                ));
            }
            1.0 / (2.0 * l)
        }
        StepSize::Fixed(s) => {
            if !s.is_finite() || s <= 0.0 {
                return Err(LrprError::Config(format!(
                    "step size must be positive and finite, got {s}"
                )));
            }
            s
        }
    };

    let mut x = model.feasible_start(initial_point(ensemble, y, config, rank)?)?;
    let mut z = ensemble.apply(&x)?;
    let residual_sq =
        |z: &DVector<f64>| -> f64 { (0..p).map(|i| (z[i].abs() - y[i]).powi(2)).sum() };
    let mut obj = model.objective(residual_sq(&z), &x);
    let obj0 = obj;
    let mut history = vec![obj];
    let mut converged = false;
    let mut iterations_used = 0;

    for _ in 0..config.max_iters {
        let signed_res =
            DVector::from_iterator(p, (0..p).map(|i| sign_pm(z[i]) * (z[i].abs() - y[i])));
        let g = ensemble.apply_adjoint(&signed_res)?;

        let mut mu = mu0;
        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let cand = model.step(&x, &g, mu)?;
            let zc = ensemble.apply(&cand)?;
            let obj_c = model.objective(residual_sq(&zc), &cand);
            let dist_sq = (&cand - &x).norm_squared();
            if obj_c <= obj - (ARMIJO_C / mu) * dist_sq {
                accepted = Some((cand, zc, obj_c));
                break;
            }
            mu /= 2.0;
        }
        let Some((cand, zc, obj_c)) = accepted else {
            break;
        };
        let rel = (&cand - &x).norm() / x.norm().max(REL_CHANGE_FLOOR);
        x = cand;
        z = zc;
        obj = obj_c;
        history.push(obj);
        iterations_used += 1;
        if obj > DIVERGENCE_FACTOR * obj0.max(f64::MIN_POSITIVE) {
            return Err(LrprError::Divergence { history });
        }
        if rel < config.tol_rel_change {
            converged = true;
            break;
        }
    }

    let stationarity = stationarity_residual(ensemble, y, &x)?;
    let lambda_used = match model {
        Model::Reg(l) => Some(l),
        _ => None,
    };
    Ok(SolverResult {
        estimate: x,
        objective_history: history,
        iterations_used,
        converged,
        stationarity_residual: stationarity,
        wall_time: start.elapsed().as_secs_f64(),
        lambda_used,
    })
}

/// Amplitude flow over the rank-`r` cone: gradient step, truncated-SVD
/// projection, Armijo backtracking.
pub fn solve_rank_constrained(
    ensemble: &MeasurementEnsemble,
    y: &DVector<f64>,
    config: &SolverConfig,
) -> Result<SolverResult> {
    let rank = config.rank_budget.unwrap_or(ensemble.dims.r);
    solve_with_model(ensemble, y, config, Model::Rank(rank))
}

/// Amplitude flow constrained to the nuclear-norm ball of radius
/// `config.nuclear_radius`. The returned estimate is feasible to `1e-8`.
pub fn solve_nuclear_ball(
    ensemble: &MeasurementEnsemble,
    y: &DVector<f64>,
    config: &SolverConfig,
) -> Result<SolverResult> {
    let radius = config
        .nuclear_radius
        .ok_or_else(|| LrprError::Config("nuclear-ball model needs nuclear_radius".into()))?;
    if radius.is_nan() || radius < 0.0 {
        return Err(LrprError::Config(format!(
            "nuclear_radius must be >= 0, got {radius}"
        )));
    }
    let result = solve_with_model(ensemble, y, config, Model::Ball(radius))?;
    let nuc = nuclear_norm(&result.estimate);
    if nuc > radius + 1e-8 {
        return Err(LrprError::AssertionFail(format!(
            "ball solution infeasible: |X|_* = {nuc} > {radius} + 1e-8"
        )));
    }
    Ok(result)
}

/// Proximal amplitude flow for the nuclear-regularized objective
/// `| |A(X)| - y |^2 + lambda |X|_*`.
pub fn solve_nuclear_regularized(
    ensemble: &MeasurementEnsemble,
    y: &DVector<f64>,
    config: &SolverConfig,
) -> Result<SolverResult> {
    let lambda = config
        .lambda
        .ok_or_else(|| LrprError::Config("regularized model needs lambda".into()))?;
    if lambda.is_nan() || lambda < 0.0 {
        return Err(LrprError::Config(format!(
            "lambda must be >= 0, got {lambda}"
        )));
    }
    solve_with_model(ensemble, y, config, Model::Reg(lambda))
}

/// Feasibility slack multiplier shared by the constrained solver and its
/// zero shortcut.
const FEAS_SLACK: f64 = 1.0 + 1e-6;

/// Nuclear-norm minimization subject to `| |A(X)| - y |_2 <= eps`, solved
/// by bisecting the regularization weight of the penalized problem over
/// `[0, 4 sqrt(2 p) |y|_2]` for at most 40 steps and keeping the feasible
/// iterate of smallest nuclear norm. Returns an infeasibility error (with
/// the closest residual seen) when even the unregularized fit misses.
pub fn solve_nuclear_constrained(
    ensemble: &MeasurementEnsemble,
    y: &DVector<f64>,
    config: &SolverConfig,
) -> Result<SolverResult> {
    let start = Instant::now();
    let eps = config
        .noise_radius
        .ok_or_else(|| LrprError::Config("constrained model needs noise_radius".into()))?;
    if eps.is_nan() || eps < 0.0 {
        return Err(LrprError::Config(format!(
            "noise_radius must be >= 0, got {eps}"
        )));
    }
    let p = ensemble.dims.p;
    if y.len() != p {
        return Err(LrprError::Dimension(format!(
            "y has length {}, expected p={p}",
            y.len()
        )));
    }
    let residual_at = |x: &DMatrix<f64>| -> Result<f64> {
        let z = ensemble.apply(x)?;
        Ok((0..p)
            .map(|i| (z[i].abs() - y[i]).powi(2))
            .sum::<f64>()
            .sqrt())
    };

    // X = 0 already fits: it has the smallest possible nuclear norm.
    if y.norm() <= eps * FEAS_SLACK {
        let x = DMatrix::zeros(ensemble.dims.n, ensemble.dims.m);
        let r0 = residual_at(&x)?;
        return Ok(SolverResult {
            estimate: x,
            objective_history: vec![r0 * r0],
            iterations_used: 0,
            converged: true,
            stationarity_residual: 0.0,
            wall_time: start.elapsed().as_secs_f64(),
            lambda_used: None,
        });
    }

    let mut lo = 0.0_f64;
    let mut hi = 4.0 * (2.0 * p as f64).sqrt() * y.norm();
    let mut closest_residual = f64::INFINITY;
    let mut warm: Option<DMatrix<f64>> = None;

    let eval = |lambda: f64, warm: &mut Option<DMatrix<f64>>| -> Result<(f64, SolverResult)> {
        let mut sub = config.clone();
        sub.lambda = Some(lambda);
        if let Some(w) = warm {
            sub.init = InitStrategy::Provided(w.clone());
        }
        let res = solve_nuclear_regularized(ensemble, y, &sub)?;
        *warm = Some(res.estimate.clone());
        let r = residual_at(&res.estimate)?;
        Ok((r, res))
    };

    // The unregularized endpoint is the best shot at feasibility; if it
    // misses, the whole family does.
    let (r_lo, res_lo) = eval(lo, &mut warm)?;
    closest_residual = closest_residual.min(r_lo);
    if r_lo > eps * FEAS_SLACK {
        return Err(LrprError::Infeasible { closest_residual });
    }
    // (nuclear norm, result, lambda) of the best feasible iterate so far.
    let mut best: Option<(f64, SolverResult, f64)> =
        Some((nuclear_norm(&res_lo.estimate), res_lo, lo));

    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        let (r_mid, res_mid) = eval(mid, &mut warm)?;
        closest_residual = closest_residual.min(r_mid);
        if r_mid <= eps * FEAS_SLACK {
            let nuc = nuclear_norm(&res_mid.estimate);
            let better = match &best {
                Some((b, _, _)) => nuc < *b,
                None => true,
            };
            if better {
                best = Some((nuc, res_mid, mid));
            }
            lo = mid;
        } else {
            hi = mid;
        }
    }

    let (_, mut result, lambda) = best.expect("feasible endpoint recorded above");
    result.lambda_used = Some(lambda);
    result.wall_time = start.elapsed().as_secs_f64();
    Ok(result)
}

/// Convenience wrapper used by tests and experiments: the vectorized view
/// of the gradient at `x` for the squared amplitude residual, i.e.
/// `A^T (sign(A x) . (|A x| - y))` divided by nothing. The full gradient
/// of `| |A(X)| - y |^2` is twice this.
pub fn half_gradient(
    ensemble: &MeasurementEnsemble,
    y: &DVector<f64>,
    x: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let z = ensemble.apply(x)?;
    let p = ensemble.dims.p;
    let signed = DVector::from_iterator(p, (0..p).map(|i| sign_pm(z[i]) * (z[i].abs() - y[i])));
    ensemble.apply_adjoint(&signed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measurement::{Dims, LowRankTarget};
    use approx::assert_relative_eq;

    fn random_matrix(n: usize, m: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = derive_rng(seed, 0xfb, 0, 0);
        DMatrix::from_fn(n, m, |_, _| rng.sample::<f64, _>(StandardNormal))
    }

    fn diag(entries: &[f64]) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_column_slice(entries))
    }

    #[test]
    fn project_rank_diagonal_oracle() {
        let x = diag(&[3.0, 2.0, 1.0]);
        let p = project_rank(&x, 2);
        assert_relative_eq!((&p - diag(&[3.0, 2.0, 0.0])).norm(), 0.0, epsilon = 1e-12);
        assert_relative_eq!((&x - &p).norm(), 1.0, max_relative = 1e-12);

        // Full-rank budget is the identity map.
        assert_eq!(project_rank(&x, 3), x);
    }

    #[test]
    fn project_rank_idempotent_and_tail_energy() {
        let x = random_matrix(6, 5, 1);
        let p2 = project_rank(&x, 2);
        let p2b = project_rank(&p2, 2);
        assert!((&p2 - &p2b).norm() < 1e-9);

        // Frobenius error equals the tail singular energy.
        let s = x.clone().svd(false, false).singular_values;
        let tail: f64 = s.iter().skip(2).map(|v| v * v).sum();
        assert_relative_eq!((&x - &p2).norm_squared(), tail, max_relative = 1e-9);
    }

    // Independent top singular pair via power iteration on X^T X.
    #[test]
    fn project_rank_one_matches_power_method() {
        let x = random_matrix(5, 4, 2);
        let mut v = DVector::from_element(4, 0.5);
        for _ in 0..200 {
            let w = x.tr_mul(&(&x * &v));
            v = &w / w.norm();
        }
        let sigma = (&x * &v).norm();
        let u = (&x * &v) / sigma;
        let rank1 = &u * sigma * v.transpose();
        assert!((project_rank(&x, 1) - rank1).norm() < 1e-8);
    }

    #[test]
    fn nuclear_ball_diagonal_oracle() {
        let x = diag(&[1.0, 1.0]);
        let p = project_nuclear_ball(&x, 1.0).unwrap();
        assert!((&p - diag(&[0.5, 0.5])).norm() < 1e-6);

        // Already inside: exact identity.
        let inside = diag(&[0.3, 0.2]);
        assert_eq!(project_nuclear_ball(&inside, 1.0).unwrap(), inside);

        // Zero radius: exact zero matrix.
        assert_eq!(project_nuclear_ball(&x, 0.0).unwrap(), DMatrix::zeros(2, 2));
    }

    // Brute-force grid oracle on the diagonal reduction of the projection.
    #[test]
    fn nuclear_ball_grid_oracle() {
        let cases = [(1.7, 0.9, 1.0), (2.0, 0.1, 1.5), (0.6, 0.55, 0.8)];
        for &(a, b, radius) in &cases {
            let x = diag(&[a, b]);
            let p = project_nuclear_ball(&x, radius).unwrap();
            let impl_obj = (&x - &p).norm_squared();

            let steps = 3000;
            let mut best = f64::INFINITY;
            for i in 0..=steps {
                let t1 = radius * i as f64 / steps as f64;
                for j in 0..=steps - i {
                    let t2 = radius * j as f64 / steps as f64;
                    let obj = (a - t1).powi(2) + (b - t2).powi(2);
                    if obj < best {
                        best = obj;
                    }
                }
            }
            assert!(impl_obj <= best + 1e-6, "impl {impl_obj} vs grid {best}");
            assert!(nuclear_norm(&p) <= radius + 1e-10);
        }
    }

    // Projections onto convex sets are nonexpansive.
    #[test]
    fn nuclear_ball_nonexpansive() {
        for k in 0..20 {
            let x = random_matrix(4, 3, 10 + k);
            let y = random_matrix(4, 3, 40 + k);
            let px = project_nuclear_ball(&x, 1.0).unwrap();
            let py = project_nuclear_ball(&y, 1.0).unwrap();
            assert!((px - py).norm() <= (&x - &y).norm() + 1e-12);
        }
    }

    #[test]
    fn svt_diagonal_oracle_and_identity() {
        let x = diag(&[3.0, 1.0]);
        let p = svt_prox(&x, 2.0).unwrap();
        assert!((&p - diag(&[1.0, 0.0])).norm() < 1e-12);

        // tau = 0 must be bit-exact identity.
        let g = random_matrix(3, 3, 3);
        assert_eq!(svt_prox(&g, 0.0).unwrap(), g);
    }

    // Moreau optimality: svt(X, tau) minimizes 0.5 |Z - X|^2 + tau |Z|_*.
    #[test]
    fn svt_minimizes_moreau_objective() {
        let x = random_matrix(4, 4, 4);
        let tau = 0.7;
        let z = svt_prox(&x, tau).unwrap();
        let h = |m: &DMatrix<f64>| 0.5 * (m - &x).norm_squared() + tau * nuclear_norm(m);
        let base = h(&z);
        for k in 0..50 {
            let d = random_matrix(4, 4, 100 + k);
            for delta in [1e-3, 1e-2, 0.1] {
                let zp = &z + &d * (delta / d.norm());
                assert!(
                    base <= h(&zp) + 1e-12,
                    "perturbation improved Moreau objective"
                );
            }
        }
    }

    #[test]
    fn spectral_init_close_on_clean_data() {
        let dims = Dims::new(8, 8, 640, 2).unwrap();
        let e = MeasurementEnsemble::generate(dims, 5).unwrap();
        let x0 = LowRankTarget::random_unit(8, 8, 2, 5).unwrap();
        let obs = e.observe(&x0, None).unwrap();
        let x_init = spectral_init(&e, &obs.y, 2).unwrap();
        let err = sign_ambiguous_error(&x_init, &x0.dense);
        assert!(err <= 0.9 * x0.norm_fro(), "init error {err}");

        // Truncation keeps the budget.
        let s = x_init.svd(false, false).singular_values;
        assert!(s.iter().skip(2).all(|&v| v < 1e-10));
    }

    #[test]
    fn spectral_init_zero_observation() {
        let dims = Dims::new(3, 3, 10, 1).unwrap();
        let e = MeasurementEnsemble::generate(dims, 6).unwrap();
        let x = spectral_init(&e, &DVector::zeros(10), 1).unwrap();
        assert_eq!(x, DMatrix::zeros(3, 3));
    }

    // Central finite differences against the analytic half-gradient at a
    // generic point (no measurement sits at the |.| kink).
    #[test]
    fn gradient_matches_finite_differences() {
        let dims = Dims::new(4, 3, 30, 2).unwrap();
        let e = MeasurementEnsemble::generate(dims, 7).unwrap();
        let x0 = LowRankTarget::random_unit(4, 3, 2, 7).unwrap();
        let obs = e.observe(&x0, None).unwrap();
        let x = random_matrix(4, 3, 8);
        let g = half_gradient(&e, &obs.y, &x).unwrap();
        let f = |m: &DMatrix<f64>| -> f64 {
            let z = e.apply(m).unwrap();
            (0..30).map(|i| (z[i].abs() - obs.y[i]).powi(2)).sum()
        };
        for k in 0..5 {
            let d = random_matrix(4, 3, 200 + k);
            let d = &d / d.norm();
            let h = 1e-6;
            let fd = (f(&(&x + &d * h)) - f(&(&x - &d * h))) / (2.0 * h);
            let analytic = 2.0 * (g.transpose() * &d).trace();
            assert_relative_eq!(fd, analytic, max_relative = 1e-4);
        }
    }

    #[test]
    fn rank_solver_recovers_noiseless() {
        let dims = Dims::new(4, 4, 80, 1).unwrap();
        let e = MeasurementEnsemble::generate(dims, 9).unwrap();
        let x0 = LowRankTarget::random_unit(4, 4, 1, 9).unwrap();
        let obs = e.observe(&x0, None).unwrap();
        let res = solve_rank_constrained(&e, &obs.y, &SolverConfig::default()).unwrap();
        let err = sign_ambiguous_error(&res.estimate, &x0.dense);
        assert!(err < 1e-6, "recovery error {err}");
        assert!(res.converged);
        assert!(res.stationarity_residual <= 1e-6);
        assert_eq!(res.objective_history.len(), res.iterations_used + 1);
        for w in res.objective_history.windows(2) {
            assert!(
                w[1] <= w[0] + 1e-9,
                "objective increased: {} -> {}",
                w[0],
                w[1]
            );
        }
    }

    // The solver cannot tell X0 from -X0; flipping the target sign leaves
    // the sign-ambiguous error unchanged.
    #[test]
    fn rank_solver_sign_symmetry() {
        let dims = Dims::new(4, 4, 80, 1).unwrap();
        let e = MeasurementEnsemble::generate(dims, 12).unwrap();
        let x0 = LowRankTarget::random_unit(4, 4, 1, 12).unwrap();
        let neg = -&x0.dense;
        let y_pos = e.apply(&x0.dense).unwrap().map(f64::abs);
        let y_neg = e.apply(&neg).unwrap().map(f64::abs);
        assert_eq!(y_pos, y_neg);
        let res = solve_rank_constrained(&e, &y_pos, &SolverConfig::default()).unwrap();
        let err_pos = sign_ambiguous_error(&res.estimate, &x0.dense);
        let err_neg = sign_ambiguous_error(&res.estimate, &neg);
        assert_relative_eq!(err_pos, err_neg, max_relative = 1e-12);
    }

    #[test]
    fn ball_solver_respects_radius_and_zero_radius() {
        let dims = Dims::new(4, 4, 120, 2).unwrap();
        let e = MeasurementEnsemble::generate(dims, 14).unwrap();
        let x0 = LowRankTarget::random_unit(4, 4, 2, 14).unwrap();
        let obs = e.observe(&x0, None).unwrap();
        let mut cfg = SolverConfig {
            nuclear_radius: Some(x0.nuclear_norm()),
            ..SolverConfig::default()
        };
        let res = solve_nuclear_ball(&e, &obs.y, &cfg).unwrap();
        assert!(nuclear_norm(&res.estimate) <= x0.nuclear_norm() + 1e-8);
        let err = sign_ambiguous_error(&res.estimate, &x0.dense);
        assert!(err < 1e-3, "ball recovery error {err}");

        cfg.nuclear_radius = Some(0.0);
        let res = solve_nuclear_ball(&e, &obs.y, &cfg).unwrap();
        assert_eq!(res.estimate, DMatrix::zeros(4, 4));
        assert!(res.converged);
    }

    #[test]
    fn regularized_solver_limits() {
        let dims = Dims::new(4, 4, 120, 2).unwrap();
        let e = MeasurementEnsemble::generate(dims, 15).unwrap();
        let x0 = LowRankTarget::random_unit(4, 4, 2, 15).unwrap();
        let obs = e.observe(&x0, None).unwrap();

        // Huge weight collapses to exactly zero.
        let cfg = SolverConfig {
            lambda: Some(1e6),
            ..SolverConfig::default()
        };
        let res = solve_nuclear_regularized(&e, &obs.y, &cfg).unwrap();
        assert_eq!(res.estimate, DMatrix::zeros(4, 4));
        assert_eq!(res.lambda_used, Some(1e6));

        // Zero weight reduces to the unregularized flow and fits the data.
        let cfg = SolverConfig {
            lambda: Some(0.0),
            ..SolverConfig::default()
        };
        let res = solve_nuclear_regularized(&e, &obs.y, &cfg).unwrap();
        let z = e.apply(&res.estimate).unwrap();
        let resid: f64 = (0..120)
            .map(|i| (z[i].abs() - obs.y[i]).powi(2))
            .sum::<f64>()
            .sqrt();
        assert!(resid < 1e-4, "residual {resid}");
    }

    #[test]
    fn constrained_solver_paths() {
        let dims = Dims::new(3, 3, 60, 1).unwrap();
        let e = MeasurementEnsemble::generate(dims, 16).unwrap();
        let x0 = LowRankTarget::random_unit(3, 3, 1, 16).unwrap();
        let obs = e.observe(&x0, None).unwrap();

        // Radius above the observation energy: zero is optimal.
        let cfg = SolverConfig {
            noise_radius: Some(obs.y.norm() * 1.01),
            ..SolverConfig::default()
        };
        let res = solve_nuclear_constrained(&e, &obs.y, &cfg).unwrap();
        assert_eq!(res.estimate, DMatrix::zeros(3, 3));
        assert_eq!(res.lambda_used, None);

        // Small radius on clean data: near-recovery with certified fit.
        let cfg = SolverConfig {
            noise_radius: Some(1e-3),
            ..SolverConfig::default()
        };
        let res = solve_nuclear_constrained(&e, &obs.y, &cfg).unwrap();
        let z = e.apply(&res.estimate).unwrap();
        let resid: f64 = (0..60)
            .map(|i| (z[i].abs() - obs.y[i]).powi(2))
            .sum::<f64>()
            .sqrt();
        assert!(resid <= 1e-3 * FEAS_SLACK, "residual {resid}");
        assert!(res.lambda_used.is_some());
        let err = sign_ambiguous_error(&res.estimate, &x0.dense);
        assert!(err < 0.05, "constrained recovery error {err}");

        // Unreachable data: every weight misses, so the call must fail
        // with the closest residual attached.
        let y_bad = DVector::from_fn(60, |i, _| 1.0 + i as f64);
        let cfg = SolverConfig {
            noise_radius: Some(1e-8),
            ..SolverConfig::default()
        };
        match solve_nuclear_constrained(&e, &y_bad, &cfg) {
            Err(LrprError::Infeasible { closest_residual }) => {
                assert!(closest_residual > 1e-8);
            }
            other => panic!("expected infeasibility, got {other:?}"),
        }
    }

    #[test]
    fn error_metric_basics() {
        let x = random_matrix(3, 3, 17);
        assert_eq!(sign_ambiguous_error(&x, &x), 0.0);
        assert_eq!(sign_ambiguous_error(&(-&x), &x), 0.0);
        let zero = DMatrix::zeros(3, 3);
        assert_relative_eq!(
            sign_ambiguous_error(&zero, &x),
            x.norm(),
            max_relative = 1e-12
        );
    }

    #[test]
    fn stationarity_conventions() {
        let dims = Dims::new(3, 3, 20, 1).unwrap();
        let e = MeasurementEnsemble::generate(dims, 18).unwrap();
        let y = DVector::from_element(20, 1.0);
        let zero = DMatrix::zeros(3, 3);
        assert_eq!(stationarity_residual(&e, &y, &zero).unwrap(), 0.0);

        let x = random_matrix(3, 3, 19);
        let s = stationarity_residual(&e, &DVector::zeros(20), &x).unwrap();
        assert!(s.is_infinite());
    }

    #[test]
    fn config_validation_errors() {
        let dims = Dims::new(3, 3, 10, 1).unwrap();
        let e = MeasurementEnsemble::generate(dims, 20).unwrap();
        let y = DVector::from_element(10, 1.0);
        let bad = SolverConfig {
            max_iters: 0,
            ..SolverConfig::default()
        };
        assert!(solve_rank_constrained(&e, &y, &bad).is_err());
        assert!(solve_nuclear_ball(&e, &y, &SolverConfig::default()).is_err());
        assert!(solve_nuclear_regularized(&e, &y, &SolverConfig::default()).is_err());
        let bad_step = SolverConfig {
            step_size: StepSize::Fixed(-1.0),
            ..SolverConfig::default()
        };
        assert!(solve_rank_constrained(&e, &y, &bad_step).is_err());
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(32))]

        #[test]
        fn prop_rank_projection_rank_bound(seed in 0u64..500, r in 1usize..4) {
            let x = random_matrix(5, 4, seed);
            let p = project_rank(&x, r);
            let s = p.svd(false, false).singular_values;
            let numerical_rank = s.iter().filter(|&&v| v > 1e-9 * s[0].max(1e-300)).count();
            proptest::prop_assert!(numerical_rank <= r);
        }

        #[test]
        fn prop_ball_projection_feasible(seed in 0u64..500, radius in 0.01f64..3.0) {
            let x = random_matrix(4, 4, seed);
            let p = project_nuclear_ball(&x, radius).unwrap();
            proptest::prop_assert!(nuclear_norm(&p) <= radius + 1e-9);
        }

        #[test]
        fn prop_svt_shrinks(seed in 0u64..500, tau in 0.0f64..2.0) {
            let x = random_matrix(4, 4, seed);
            let z = svt_prox(&x, tau).unwrap();
            proptest::prop_assert!(nuclear_norm(&z) <= nuclear_norm(&x) + 1e-9);
            proptest::prop_assert!(z.norm() <= x.norm() + 1e-9);
        }

        #[test]
        fn prop_error_sign_symmetric(seed in 0u64..500) {
            let a = random_matrix(3, 3, seed);
            let b = random_matrix(3, 3, seed + 1000);
            let e1 = sign_ambiguous_error(&a, &b);
            let e2 = sign_ambiguous_error(&(-&a), &b);
            proptest::prop_assert!((e1 - e2).abs() < 1e-12);
        }
    }
}
