//! Empirical subset-restricted isometry certification.
//!
//! The estimators' error analysis rests on the measurement map acting as a
//! near-isometry even after an adversary discards up to half the
//! measurements. This module estimates those two-sided levels by sampling
//! unit-norm low-rank (or nuclear-ball) test directions, and provides the
//! Gaussian concentration and order-statistic checks behind them:
//!
//! - over index sets `I` with `|I| >= p/2`, the minimum subset energy of a
//!   vector is attained by its `ceil(p/2)` smallest squared entries and
//!   the maximum by the full vector;
//! - for fixed unit `X`, `|A(X)|^2 / p` concentrates around 1 with
//!   explicit exponential tails;
//! - the expected root-energy of the lower half of squared Gaussian order
//!   statistics stays above an absolute constant, uniformly in `p`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{LrprError, Result};
use crate::measurement::{haar_frame, MeasurementEnsemble};
use crate::rng::{derive_rng, DOM_CHECK, DOM_SAMPLE};

/// Which family of unit test directions to certify over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum SetKind {
    /// Unit-Frobenius matrices of rank at most `r`.
    #[serde(rename = "U_r")]
    UR,
    /// Frobenius ball intersected with the nuclear ball of radius `sqrt(r)`.
    #[serde(rename = "N_r_star")]
    NRStar,
}

/// Empirical two-sided subset isometry levels over sampled directions.
#[derive(Debug, Clone, serde::Serialize)]
pub struct SripEstimate {
    pub theta_minus_hat: f64,
    pub theta_plus_hat: f64,
    pub samples: usize,
    pub rank_tested: usize,
    pub set_kind: SetKind,
    /// Samples whose lower ratio hit 0 or upper ratio reached 2.
    pub violations: usize,
    /// 1% quantile of the lower ratios: a robust floor estimate.
    pub q01_lower: f64,
    /// 99% quantile of the upper ratios.
    pub q99_upper: f64,
}

/// Tail frequency of a concentration event against its analytic bound.
#[derive(Debug, Clone, serde::Serialize)]
pub struct ConcentrationReport {
    pub t: f64,
    pub empirical_tail: f64,
    pub bound: f64,
    pub trials: usize,
}

/// Minimum of `sum_{i in I} v_i^2` over index sets with `|I| >= p/2`:
/// the `ceil(p/2)` smallest squared entries.
pub fn subset_min_energy(v: &DVector<f64>) -> Result<f64> {
    let p = v.len();
    if p == 0 {
        return Err(LrprError::Argument(
            "subset energy of an empty vector".into(),
        ));
    }
    let mut squares: Vec<f64> = v.iter().map(|x| x * x).collect();
    squares.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(squares.iter().take(p.div_ceil(2)).sum())
}

/// Maximum of the same quantity: taking every index is always allowed.
pub fn subset_max_energy(v: &DVector<f64>) -> Result<f64> {
    if v.is_empty() {
        return Err(LrprError::Argument(
            "subset energy of an empty vector".into(),
        ));
    }
    Ok(v.norm_squared())
}

/// Uniform draw from the unit-Frobenius rank-`r` manifold: Haar frames on
/// both sides, singular values a random nonnegative unit vector.
pub fn sample_u_r(n: usize, m: usize, r: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    let u = haar_frame(n, r, rng);
    let v = haar_frame(m, r, rng);
    let mut s: Vec<f64> = (0..r)
        .map(|_| rng.sample::<f64, _>(StandardNormal).abs())
        .collect();
    let norm = s.iter().map(|x| x * x).sum::<f64>().sqrt();
    for x in &mut s {
        *x /= norm;
    }
    &u * DMatrix::from_diagonal(&DVector::from_vec(s)) * v.transpose()
}

/// Draw from the boundary of `{ |H|_F <= 1, |H|_* <= sqrt(r) }`: a
/// Gaussian direction rescaled until the tighter of the two constraints
/// binds.
pub fn sample_n_r_star(n: usize, m: usize, r: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    let g = DMatrix::from_fn(n, m, |_, _| rng.sample::<f64, _>(StandardNormal));
    let fro = g.norm();
    let nuc = g
        .clone()
        .svd(false, false)
        .singular_values
        .iter()
        .sum::<f64>();
    let scale = (1.0 / fro).min((r as f64).sqrt() / nuc);
    g * scale
}

/// Interpolated quantile (the common linear rule) of an ascending slice.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty() && (0.0..=1.0).contains(&q));
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        let w = pos - lo as f64;
        sorted[lo] * (1.0 - w) + sorted[hi] * w
    }
}

/// Samples `samples` directions from the requested family and records the
/// extreme normalized subset energies of their measurements. Ratios are
/// normalized by `p |H|_F^2`, so ball samples with `|H|_F < 1` are still
/// compared on the isometry scale.
pub fn certify_srip(
    ensemble: &MeasurementEnsemble,
    r: usize,
    samples: usize,
    set_kind: SetKind,
    seed: u64,
) -> Result<SripEstimate> {
    let (n, m) = (ensemble.dims.n, ensemble.dims.m);
    if samples == 0 {
        return Err(LrprError::Argument("need at least one sample".into()));
    }
    if r == 0 || r > n.min(m) {
        return Err(LrprError::Argument(format!(
            "rank {r} out of range for {n}x{m}"
        )));
    }
    let p = ensemble.dims.p as f64;
    let ratios: Vec<(f64, f64)> = (0..samples)
        .into_par_iter()
        .map(|k| {
            let mut rng = derive_rng(seed, DOM_SAMPLE, k as u64, 0);
            let h = match set_kind {
                SetKind::UR => sample_u_r(n, m, r, &mut rng),
                SetKind::NRStar => sample_n_r_star(n, m, r, &mut rng),
            };
            let v = ensemble.apply(&h)?;
            let scale = p * h.norm_squared();
            Ok((
                subset_min_energy(&v)? / scale,
                subset_max_energy(&v)? / scale,
            ))
        })
        .collect::<Result<_>>()?;

    let mut lower: Vec<f64> = ratios.iter().map(|r| r.0).collect();
    let mut upper: Vec<f64> = ratios.iter().map(|r| r.1).collect();
    lower.sort_by(|a, b| a.partial_cmp(b).unwrap());
    upper.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let violations = ratios
        .iter()
        .filter(|(lo, hi)| *lo <= 0.0 || *hi >= 2.0)
        .count();
    Ok(SripEstimate {
        theta_minus_hat: lower[0],
        theta_plus_hat: upper[upper.len() - 1],
        samples,
        rank_tested: r,
        set_kind,
        violations,
        q01_lower: quantile(&lower, 0.01),
        q99_upper: quantile(&upper, 0.99),
    })
}

/// Universal floor for [`estimate_mu_p`]: `(1/18) sqrt(pi/2)`.
pub const MU_FLOOR: f64 = 0.06962856318419446;

/// Monte-Carlo estimate of `mu_p`: the expected root of the minimum
/// subset energy of a standard Gaussian vector, scaled by `1/sqrt(p)`.
/// `mu_1 = sqrt(2/pi)`; as `p` grows the value decreases toward roughly
/// `0.267`, staying above [`MU_FLOOR`].
pub fn estimate_mu_p(p: usize, trials: usize, seed: u64) -> Result<f64> {
    if p == 0 || trials == 0 {
        return Err(LrprError::Argument(
            "mu_p needs p >= 1 and trials >= 1".into(),
        ));
    }
    let sum: f64 = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = derive_rng(seed, DOM_CHECK, t as u64, 2);
            let g = DVector::from_fn(p, |_, _| rng.sample::<f64, _>(StandardNormal));
            Ok(subset_min_energy(&g)?.sqrt() / (p as f64).sqrt())
        })
        .collect::<Result<Vec<f64>>>()?
        .iter()
        .sum();
    Ok(sum / trials as f64)
}

/// Tail frequency of `| |A(X)|^2 / p - |X|_F^2 | >= t |X|_F^2` over fresh
/// ensembles, against the bound `2 exp(-(p/2)(t^2/2 - t^3/3))`. For fixed
/// unit `X` the measurement vector is exactly standard normal, so scalar
/// draws are an exact reduction, not an approximation.
pub fn check_concentration(
    p: usize,
    t: f64,
    trials: usize,
    seed: u64,
) -> Result<ConcentrationReport> {
    if p == 0 || trials == 0 {
        return Err(LrprError::Argument(
            "concentration needs p >= 1 and trials >= 1".into(),
        ));
    }
    if t.is_nan() || t <= 0.0 {
        return Err(LrprError::Argument(format!("t must be > 0, got {t}")));
    }
    let hits: usize = (0..trials)
        .into_par_iter()
        .map(|trial| {
            let mut rng = derive_rng(seed, DOM_CHECK, trial as u64, 0);
            let energy: f64 = (0..p)
                .map(|_| rng.sample::<f64, _>(StandardNormal))
                .map(|g: f64| g * g)
                .sum();
            usize::from((energy / p as f64 - 1.0).abs() >= t)
        })
        .sum();
    let exponent = (p as f64 / 2.0) * (t * t / 2.0 - t * t * t / 3.0);
    Ok(ConcentrationReport {
        t,
        empirical_tail: hits as f64 / trials as f64,
        bound: 2.0 * (-exponent).exp(),
        trials,
    })
}

/// Tail frequency of the coverage event failing, i.e. `|A(X)| / sqrt(p)`
/// leaving `[(1 - t) |X|_F, (1 + t) |X|_F]`, against `2 exp(-p t^2 / 2)`.
/// The bound exceeds 1 for small `p t^2` and is then vacuous.
pub fn check_coverage(p: usize, t: f64, trials: usize, seed: u64) -> Result<ConcentrationReport> {
    if p == 0 || trials == 0 {
        return Err(LrprError::Argument(
            "coverage needs p >= 1 and trials >= 1".into(),
        ));
    }
    if t.is_nan() || t <= 0.0 {
        return Err(LrprError::Argument(format!("t must be > 0, got {t}")));
    }
    let hits: usize = (0..trials)
        .into_par_iter()
        .map(|trial| {
            let mut rng = derive_rng(seed, DOM_CHECK, trial as u64, 1);
            let energy: f64 = (0..p)
                .map(|_| rng.sample::<f64, _>(StandardNormal))
                .map(|g: f64| g * g)
                .sum();
            let ratio = (energy / p as f64).sqrt();
            usize::from(!((1.0 - t)..=(1.0 + t)).contains(&ratio))
        })
        .sum();
    Ok(ConcentrationReport {
        t,
        empirical_tail: hits as f64 / trials as f64,
        bound: 2.0 * (-(p as f64) * t * t / 2.0).exp(),
        trials,
    })
}

/// Mean of `subset_min_energy(g) / p` for Gaussian `g`, alongside the
/// asymptotic constant `2 (Phi(a) - 1/2 - a phi(a))` with `a` the median
/// of `|N(0,1)|`; the mean approaches the constant from above as `p`
/// grows.
pub fn check_ordered_half_sum(p: usize, trials: usize, seed: u64) -> Result<(f64, f64)> {
    if p == 0 || trials == 0 {
        return Err(LrprError::Argument(
            "half-sum check needs p >= 1 and trials >= 1".into(),
        ));
    }
    let sum: f64 = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = derive_rng(seed, DOM_CHECK, t as u64, 3);
            let g = DVector::from_fn(p, |_, _| rng.sample::<f64, _>(StandardNormal));
            Ok(subset_min_energy(&g)? / p as f64)
        })
        .collect::<Result<Vec<f64>>>()?
        .iter()
        .sum();
    Ok((sum / trials as f64, HALF_SUM_CONST))
}

/// `2 (Phi(a) - 1/2 - a phi(a))` at `a = 0.6744897501960817`, the limit
/// of the normalized lower-half energy of squared Gaussian order
/// statistics. Frozen from high-precision quadrature.
pub const HALF_SUM_CONST: f64 = 0.0713259177442594;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measurement::Dims;
    use approx::assert_relative_eq;

    fn gaussian_vec(p: usize, seed: u64) -> DVector<f64> {
        let mut rng = derive_rng(seed, 0xfa, 0, 0);
        DVector::from_fn(p, |_, _| rng.sample::<f64, _>(StandardNormal))
    }

    // Exhaustive oracle: enumerate every index set with |I| >= p/2.
    fn exhaustive_min_energy(v: &DVector<f64>) -> f64 {
        let p = v.len();
        let mut best = f64::INFINITY;
        for mask in 0u32..(1 << p) {
            if (mask.count_ones() as usize) * 2 >= p {
                let energy: f64 = (0..p)
                    .filter(|i| mask >> i & 1 == 1)
                    .map(|i| v[i] * v[i])
                    .sum();
                best = best.min(energy);
            }
        }
        best
    }

    #[test]
    fn subset_energies_match_exhaustive() {
        for p in 1..=10 {
            for seed in 0..20 {
                let v = gaussian_vec(p, seed);
                let fast = subset_min_energy(&v).unwrap();
                let slow = exhaustive_min_energy(&v);
                assert_relative_eq!(fast, slow, max_relative = 1e-12);
                assert_relative_eq!(
                    subset_max_energy(&v).unwrap(),
                    v.norm_squared(),
                    max_relative = 1e-12
                );
            }
        }
    }

    #[test]
    fn subset_energy_ties_and_parity() {
        // All-equal entries: exactly ceil(p/2) survive.
        let v = DVector::from_element(6, 1.0);
        assert_relative_eq!(subset_min_energy(&v).unwrap(), 3.0, max_relative = 1e-15);
        let v = DVector::from_element(7, 1.0);
        assert_relative_eq!(subset_min_energy(&v).unwrap(), 4.0, max_relative = 1e-15);
        // Single entry: the set must keep it.
        let v = DVector::from_element(1, 2.0);
        assert_relative_eq!(subset_min_energy(&v).unwrap(), 4.0, max_relative = 1e-15);
    }

    #[test]
    fn subset_energy_invariances() {
        let v = gaussian_vec(9, 3);
        let base = subset_min_energy(&v).unwrap();

        // Permutation invariance.
        let mut rev: Vec<f64> = v.iter().copied().collect();
        rev.reverse();
        let vr = DVector::from_vec(rev);
        assert_relative_eq!(subset_min_energy(&vr).unwrap(), base, max_relative = 1e-12);

        // Quadratic scaling.
        let vs = &v * 3.0;
        assert_relative_eq!(
            subset_min_energy(&vs).unwrap(),
            9.0 * base,
            max_relative = 1e-12
        );
    }

    #[test]
    fn u_r_samples_live_on_the_manifold() {
        let mut rng = derive_rng(1, DOM_SAMPLE, 0, 0);
        for _ in 0..20 {
            let h = sample_u_r(5, 4, 2, &mut rng);
            assert_relative_eq!(h.norm(), 1.0, epsilon = 1e-12);
            let s = h.svd(false, false).singular_values;
            assert!(s.iter().skip(2).all(|&x| x < 1e-12));
        }
    }

    #[test]
    fn n_r_star_samples_feasible_and_binding() {
        let mut rng = derive_rng(2, DOM_SAMPLE, 0, 0);
        for _ in 0..20 {
            let h = sample_n_r_star(4, 4, 2, &mut rng);
            let fro = h.norm();
            let nuc = h
                .clone()
                .svd(false, false)
                .singular_values
                .iter()
                .sum::<f64>();
            let rt = 2.0f64.sqrt();
            assert!(fro <= 1.0 + 1e-12 && nuc <= rt + 1e-12);
            let slack = (1.0 - fro).min(rt - nuc);
            assert!(
                slack.abs() < 1e-9,
                "neither constraint binds: slack {slack}"
            );
        }
    }

    #[test]
    fn certify_on_gaussian_ensemble() {
        let dims = Dims::new(3, 3, 96, 1).unwrap();
        let e = MeasurementEnsemble::generate(dims, 30).unwrap();
        for kind in [SetKind::UR, SetKind::NRStar] {
            let est = certify_srip(&e, 1, 100, kind, 31).unwrap();
            assert!(
                est.theta_minus_hat > 0.0,
                "{kind:?}: {}",
                est.theta_minus_hat
            );
            assert!(est.theta_plus_hat < 2.0, "{kind:?}: {}", est.theta_plus_hat);
            assert_eq!(est.violations, 0);
            assert!(est.theta_minus_hat <= est.q01_lower);
            assert!(est.q99_upper <= est.theta_plus_hat);
        }
    }

    #[test]
    fn certify_is_deterministic() {
        let dims = Dims::new(3, 3, 64, 1).unwrap();
        let e = MeasurementEnsemble::generate(dims, 32).unwrap();
        let a = certify_srip(&e, 1, 50, SetKind::UR, 7).unwrap();
        let b = certify_srip(&e, 1, 50, SetKind::UR, 7).unwrap();
        assert_eq!(a.theta_minus_hat, b.theta_minus_hat);
        assert_eq!(a.theta_plus_hat, b.theta_plus_hat);
    }

    // A rank-deficient adversarial ensemble drives the lower level toward
    // zero while the Gaussian one stays bounded away.
    #[test]
    fn rank_deficient_ensemble_has_tiny_floor() {
        let mut a = DMatrix::zeros(3, 3);
        a[(0, 0)] = 1.0;
        let e = MeasurementEnsemble::from_matrices(vec![a; 40], 1).unwrap();
        let est = certify_srip(&e, 1, 200, SetKind::UR, 8).unwrap();
        let dims = Dims::new(3, 3, 40, 1).unwrap();
        let g = MeasurementEnsemble::generate(dims, 33).unwrap();
        let good = certify_srip(&g, 1, 200, SetKind::UR, 8).unwrap();
        assert!(est.theta_minus_hat < 0.1 * good.theta_minus_hat);
    }

    #[test]
    fn mu_estimates() {
        let mu1 = estimate_mu_p(1, 20_000, 9).unwrap();
        assert!(
            (mu1 - (2.0 / std::f64::consts::PI).sqrt()).abs() < 0.02,
            "mu_1 = {mu1}"
        );
        let mu100 = estimate_mu_p(100, 2_000, 10).unwrap();
        assert!(mu100 >= MU_FLOOR, "mu_100 = {mu100}");
        assert!(mu100 < mu1);
    }

    #[test]
    fn concentration_bound_formula_frozen() {
        let rep = check_concentration(200, 0.3, 10, 11).unwrap();
        // 2 exp(-100 (0.045 - 0.009)) pinned by direct evaluation.
        assert_relative_eq!(rep.bound, 0.05464744489458512, max_relative = 1e-12);
        let rep = check_coverage(500, 0.05, 10, 11).unwrap();
        assert_relative_eq!(rep.bound, 2.0 * (-0.625f64).exp(), max_relative = 1e-12);
    }

    #[test]
    fn concentration_tails_within_bounds() {
        let rep = check_concentration(200, 0.3, 2000, 12).unwrap();
        let se = (rep.bound * (1.0 - rep.bound) / rep.trials as f64).sqrt();
        assert!(
            rep.empirical_tail <= rep.bound + 3.0 * se,
            "tail {} vs bound {}",
            rep.empirical_tail,
            rep.bound
        );
        let rep = check_coverage(500, 0.05, 1000, 13).unwrap();
        assert!(rep.empirical_tail <= rep.bound.min(1.0) + 3.0 * 0.016);
    }

    #[test]
    fn half_sum_matches_asymptotic_constant() {
        let (mean, c) = check_ordered_half_sum(1000, 500, 14).unwrap();
        assert!((mean - c).abs() < 0.005, "mean {mean} vs {c}");
    }

    #[test]
    fn quantile_interpolation() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_relative_eq!(quantile(&v, 0.0), 1.0);
        assert_relative_eq!(quantile(&v, 1.0), 4.0);
        assert_relative_eq!(quantile(&v, 0.5), 2.5);
        assert_relative_eq!(quantile(&v, 0.25), 1.75);
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(64))]

        #[test]
        fn prop_min_le_max(seed in 0u64..1000, p in 1usize..16) {
            let v = gaussian_vec(p, seed);
            let lo = subset_min_energy(&v).unwrap();
            let hi = subset_max_energy(&v).unwrap();
            proptest::prop_assert!(lo <= hi + 1e-15);
        }

        #[test]
        fn prop_even_split_partitions_energy(seed in 0u64..1000, half in 1usize..8) {
            let p = 2 * half;
            let v = gaussian_vec(p, seed);
            let mut sq: Vec<f64> = v.iter().map(|x| x * x).collect();
            sq.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let top: f64 = sq.iter().skip(half).sum();
            let lo = subset_min_energy(&v).unwrap();
            proptest::prop_assert!((lo + top - v.norm_squared()).abs() < 1e-10);
        }
    }
}
