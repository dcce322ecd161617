//! Explicit epsilon-nets for the low-rank and nuclear-ball test sets.
//!
//! The rank-`r` Frobenius ball is netted through its factorization: every
//! element is `U diag(s) V^T` with orthonormal frames `U`, `V` and a
//! singular vector `s` in the nonnegative unit ball. Component nets at
//! resolution `eps/3` (frames measured in the max-column-norm metric)
//! assemble into a product net at resolution `eps`, with cardinality at
//! most `(1 + 6/eps)^((m+n+1) r)`.
//!
//! The nuclear-ball test set `{ |H|_F <= 1, |H|_* <= sqrt(r) }` is netted
//! by covering a higher-rank Frobenius ball at `eps/2`: truncating an
//! element to its top `t = ceil(r / eps^2)` singular values costs at most
//! `sqrt(r / (t + 1))` in Frobenius norm, so the rank-`t` net also covers
//! the nuclear set.
//!
//! Component nets come from greedy farthest-point packing over large
//! sampled pools at radius `0.9 * eps`: the result is a maximal packing,
//! hence a covering of the pool, with the 10% slack absorbing gaps
//! between pool samples. [`verify_covering`] measures the truth.

use std::io::{Read as _, Write as _};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{LrprError, Result};
use crate::measurement::haar_frame;
use crate::rng::{derive_rng, DOM_NET};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum NetSetKind {
    /// Nonnegative vectors in the unit l2 ball (singular value part).
    D,
    /// Orthonormal `dim x r` frames under the max-column-norm metric.
    #[serde(rename = "O_frame")]
    OFrame,
    /// Frobenius-ball matrices of rank at most `r`.
    #[serde(rename = "K_r")]
    KR,
    /// Frobenius ball intersected with the nuclear ball of radius `sqrt(r)`.
    #[serde(rename = "N_r_star")]
    NRStar,
}

impl NetSetKind {
    fn to_u8(self) -> u8 {
        match self {
            NetSetKind::D => 0,
            NetSetKind::OFrame => 1,
            NetSetKind::KR => 2,
            NetSetKind::NRStar => 3,
        }
    }

    fn from_u8(v: u8) -> Result<Self> {
        Ok(match v {
            0 => NetSetKind::D,
            1 => NetSetKind::OFrame,
            2 => NetSetKind::KR,
            3 => NetSetKind::NRStar,
            other => return Err(LrprError::Format(format!("unknown net kind byte {other}"))),
        })
    }
}

/// An explicit net: elements, target resolution, and the analytic
/// cardinality bound it was checked against.
#[derive(Debug, Clone)]
pub struct EpsilonNet {
    pub epsilon: f64,
    pub set_kind: NetSetKind,
    /// Rank parameter of the netted set.
    pub rank: usize,
    pub elements: Vec<DMatrix<f64>>,
    pub cardinality_bound: f64,
}

/// Distance used both for packing and covering, per set kind.
fn net_distance(kind: NetSetKind, a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    match kind {
        NetSetKind::OFrame => (0..a.ncols())
            .map(|j| (a.column(j) - b.column(j)).norm())
            .fold(0.0, f64::max),
        _ => (a - b).norm(),
    }
}

impl EpsilonNet {
    pub fn cardinality(&self) -> usize {
        self.elements.len()
    }

    /// Distance from `x` to the net.
    pub fn distance_to(&self, x: &DMatrix<f64>) -> f64 {
        self.elements
            .iter()
            .map(|e| net_distance(self.set_kind, e, x))
            .fold(f64::INFINITY, f64::min)
    }

    /// True as soon as some element is within `self.epsilon` of `x`;
    /// short-circuits, unlike [`distance_to`].
    pub fn covers(&self, x: &DMatrix<f64>) -> bool {
        self.elements
            .iter()
            .any(|e| net_distance(self.set_kind, e, x) <= self.epsilon)
    }

    /// Binary container: magic "LRNT", version u16, kind u8, rank u32,
    /// epsilon and bound f64, element shape u32 x u32, count u64, then
    /// little-endian row-major element payloads.
    pub fn write_file(&self, path: &Path) -> Result<()> {
        let (rows, cols) = match self.elements.first() {
            Some(e) => e.shape(),
            None => (0, 0),
        };
        let mut out = Vec::new();
        out.extend_from_slice(b"LRNT");
        out.extend_from_slice(&1u16.to_le_bytes());
        out.push(self.set_kind.to_u8());
        out.extend_from_slice(&(self.rank as u32).to_le_bytes());
        out.extend_from_slice(&self.epsilon.to_le_bytes());
        out.extend_from_slice(&self.cardinality_bound.to_le_bytes());
        out.extend_from_slice(&(rows as u32).to_le_bytes());
        out.extend_from_slice(&(cols as u32).to_le_bytes());
        out.extend_from_slice(&(self.elements.len() as u64).to_le_bytes());
        for e in &self.elements {
            for i in 0..rows {
                for j in 0..cols {
                    out.extend_from_slice(&e[(i, j)].to_le_bytes());
                }
            }
        }
        let mut f = std::fs::File::create(path)?;
        f.write_all(&out)?;
        Ok(())
    }

    pub fn read_file(path: &Path) -> Result<Self> {
        let mut buf = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut buf)?;
        if buf.len() < 47 || &buf[0..4] != b"LRNT" {
            return Err(LrprError::Format("not a net file (bad magic)".into()));
        }
        let version = u16::from_le_bytes([buf[4], buf[5]]);
        if version != 1 {
            return Err(LrprError::Format(format!(
                "unsupported net version {version}"
            )));
        }
        let set_kind = NetSetKind::from_u8(buf[6])?;
        let rank = u32::from_le_bytes(buf[7..11].try_into().unwrap()) as usize;
        let epsilon = f64::from_le_bytes(buf[11..19].try_into().unwrap());
        let bound = f64::from_le_bytes(buf[19..27].try_into().unwrap());
        let rows = u32::from_le_bytes(buf[27..31].try_into().unwrap()) as usize;
        let cols = u32::from_le_bytes(buf[31..35].try_into().unwrap()) as usize;
        let count = u64::from_le_bytes(buf[35..43].try_into().unwrap()) as usize;
        let expected = 43 + count * rows * cols * 8;
        if buf.len() != expected {
            return Err(LrprError::Format(format!(
                "net payload has {} bytes, expected {expected}",
                buf.len()
            )));
        }
        let mut elements = Vec::with_capacity(count);
        let mut off = 43;
        for _ in 0..count {
            let mut e = DMatrix::zeros(rows, cols);
            for i in 0..rows {
                for j in 0..cols {
                    e[(i, j)] = f64::from_le_bytes(buf[off..off + 8].try_into().unwrap());
                    off += 8;
                }
            }
            elements.push(e);
        }
        Ok(EpsilonNet {
            epsilon,
            set_kind,
            rank,
            elements,
            cardinality_bound: bound,
        })
    }

    /// Human-readable JSON sidecar describing the net.
    pub fn write_sidecar(&self, path: &Path) -> Result<()> {
        let (rows, cols) = self.elements.first().map_or((0, 0), |e| e.shape());
        let doc = serde_json::json!({
            "epsilon": self.epsilon,
            "set_kind": self.set_kind,
            "rank": self.rank,
            "cardinality": self.cardinality(),
            "cardinality_bound": self.cardinality_bound,
            "element_shape": [rows, cols],
        });
        let text = serde_json::to_string_pretty(&doc)
            .map_err(|e| LrprError::Format(format!("net sidecar serialization failed: {e}")))?;
        std::fs::write(path, text)?;
        Ok(())
    }
}

/// Knobs shared by the net builders.
#[derive(Debug, Clone, Copy)]
pub struct NetBuildParams {
    pub epsilon: f64,
    /// Hard cap on the materialized cardinality.
    pub cap: usize,
    /// Pool size per component for the packing step.
    pub pool: usize,
    pub seed: u64,
}

impl Default for NetBuildParams {
    fn default() -> Self {
        NetBuildParams {
            epsilon: 0.5,
            cap: 1_000_000,
            pool: 20_000,
            seed: 0,
        }
    }
}

/// Greedy farthest-point packing at radius `delta`: scan the pool, keep a
/// point when no kept point is within `delta` in the kind's metric. The
/// kept set is a maximal packing, hence covers the pool at `delta`.
fn greedy_pack(pool: Vec<DMatrix<f64>>, delta: f64, kind: NetSetKind) -> Vec<DMatrix<f64>> {
    let mut kept: Vec<DMatrix<f64>> = Vec::new();
    for q in pool {
        if kept.iter().all(|k| net_distance(kind, k, &q) > delta) {
            kept.push(q);
        }
    }
    kept
}

const PACK_SLACK: f64 = 0.9;

fn sample_d_point(r: usize, rng: &mut impl Rng, boundary: bool) -> DMatrix<f64> {
    let g = DVector::from_fn(r, |_, _| rng.sample::<f64, _>(StandardNormal).abs());
    let norm = g.norm();
    let radius: f64 = if boundary {
        1.0
    } else {
        rng.gen_range(0.0..=1.0)
    };
    let v = if norm == 0.0 { g } else { g * (radius / norm) };
    DMatrix::from_column_slice(r, 1, v.as_slice())
}

/// Net of the nonnegative unit l2 ball in `R^r` (elements stored `r x 1`).
pub fn build_net_component_d(r: usize, epsilon: f64, pool: usize, seed: u64) -> Result<EpsilonNet> {
    if r == 0 || epsilon.is_nan() || epsilon <= 0.0 {
        return Err(LrprError::Argument(
            "D net needs r >= 1 and epsilon > 0".into(),
        ));
    }
    let mut rng = derive_rng(seed, DOM_NET, 0, r as u64);
    let mut points = Vec::with_capacity(pool + 1);
    // The origin and the coordinate corners anchor the extremes.
    points.push(DMatrix::zeros(r, 1));
    for j in 0..r {
        let mut corner = DMatrix::zeros(r, 1);
        corner[(j, 0)] = 1.0;
        points.push(corner);
    }
    for k in 0..pool {
        points.push(sample_d_point(r, &mut rng, k % 2 == 0));
    }
    let elements = greedy_pack(points, PACK_SLACK * epsilon, NetSetKind::D);
    Ok(EpsilonNet {
        epsilon,
        set_kind: NetSetKind::D,
        rank: r,
        elements,
        cardinality_bound: (1.0 + 2.0 / epsilon).powi(r as i32),
    })
}

/// Net of the orthonormal `dim x r` frames under the max-column-norm
/// metric.
pub fn build_net_o_frame(
    dim: usize,
    r: usize,
    epsilon: f64,
    pool: usize,
    seed: u64,
) -> Result<EpsilonNet> {
    if r == 0 || r > dim || epsilon.is_nan() || epsilon <= 0.0 {
        return Err(LrprError::Argument(format!(
            "frame net needs 1 <= r <= dim, got r={r}, dim={dim}"
        )));
    }
    let mut rng = derive_rng(seed, DOM_NET, 1, (dim * 64 + r) as u64);
    let pool: Vec<DMatrix<f64>> = (0..pool).map(|_| haar_frame(dim, r, &mut rng)).collect();
    let elements = greedy_pack(pool, PACK_SLACK * epsilon, NetSetKind::OFrame);
    Ok(EpsilonNet {
        epsilon,
        set_kind: NetSetKind::OFrame,
        rank: r,
        elements,
        cardinality_bound: (1.0 + 2.0 / epsilon).powi((dim * r) as i32),
    })
}

/// Product net for the rank-`r` Frobenius ball on `n x m` matrices:
/// component nets at `eps/3` assembled as `U diag(s) V^T`. The analytic
/// cardinality bound `(1 + 6/eps)^((m+n+1) r)` is enforced on the actual
/// product count, as is `params.cap`.
pub fn build_net_k_r(n: usize, m: usize, r: usize, params: &NetBuildParams) -> Result<EpsilonNet> {
    let epsilon = params.epsilon;
    if !(epsilon > 0.0 && epsilon <= 1.0) {
        return Err(LrprError::Argument(format!(
            "K_r net needs 0 < epsilon <= 1, got {epsilon}"
        )));
    }
    if r == 0 || r > n.min(m) {
        return Err(LrprError::Argument(format!(
            "rank {r} out of range for {n}x{m}"
        )));
    }
    let comp_eps = epsilon / 3.0;
    let d_net = build_net_component_d(r, comp_eps, params.pool, params.seed)?;
    let u_net = build_net_o_frame(n, r, comp_eps, params.pool, params.seed.wrapping_add(1))?;
    let v_net = build_net_o_frame(m, r, comp_eps, params.pool, params.seed.wrapping_add(2))?;

    let count = d_net
        .cardinality()
        .checked_mul(u_net.cardinality())
        .and_then(|c| c.checked_mul(v_net.cardinality()))
        .ok_or_else(|| LrprError::Numeric("net cardinality overflow".into()))?;
    if count > params.cap {
        return Err(LrprError::SizeCap {
            required: count,
            cap: params.cap,
        });
    }
    let bound = (1.0 + 6.0 / epsilon).powi(((m + n + 1) * r) as i32);
    if count as f64 > bound {
        return Err(LrprError::AssertionFail(format!(
            "product net has {count} elements, above the bound {bound}"
        )));
    }

    let u_count = u_net.cardinality();
    let v_count = v_net.cardinality();
    let elements: Vec<DMatrix<f64>> = (0..count)
        .into_par_iter()
        .map(|idx| {
            let di = idx / (u_count * v_count);
            let ui = idx / v_count % u_count;
            let vi = idx % v_count;
            let s = DVector::from_column_slice(d_net.elements[di].as_slice());
            &u_net.elements[ui] * DMatrix::from_diagonal(&s) * v_net.elements[vi].transpose()
        })
        .collect();

    Ok(EpsilonNet {
        epsilon,
        set_kind: NetSetKind::KR,
        rank: r,
        elements,
        cardinality_bound: bound,
    })
}

/// Net for the nuclear test set `{ |H|_F <= 1, |H|_* <= sqrt(r) }`: an
/// `eps/2` net of the rank-`t` Frobenius ball with `t = ceil(r / eps^2)`
/// (clamped to full rank). The stored bound is `exp(24 (m+n+1) r / eps^3)`.
pub fn build_net_n_r_star(
    n: usize,
    m: usize,
    r: usize,
    params: &NetBuildParams,
) -> Result<EpsilonNet> {
    let epsilon = params.epsilon;
    if r == 0 || r > n.min(m) {
        return Err(LrprError::Argument(format!(
            "rank {r} out of range for {n}x{m}"
        )));
    }
    if epsilon.is_nan() || epsilon <= 0.0 || epsilon > (r as f64).sqrt() {
        return Err(LrprError::Argument(format!(
            "nuclear net needs 0 < epsilon <= sqrt(r), got {epsilon}"
        )));
    }
    let t = ((r as f64) / (epsilon * epsilon)).ceil() as usize;
    let t = t.clamp(1, n.min(m));
    let inner = NetBuildParams {
        epsilon: epsilon / 2.0,
        ..*params
    };
    let base = build_net_k_r(n, m, t, &inner)?;
    let bound = (24.0 * ((m + n + 1) * r) as f64 / epsilon.powi(3)).exp();
    if base.cardinality() as f64 > bound {
        return Err(LrprError::AssertionFail(format!(
            "nuclear net has {} elements, above the bound {bound}",
            base.cardinality()
        )));
    }
    Ok(EpsilonNet {
        epsilon,
        set_kind: NetSetKind::NRStar,
        rank: r,
        elements: base.elements,
        cardinality_bound: bound,
    })
}

/// Empirical covering quality of a net over random points of its set.
#[derive(Debug, Clone, serde::Serialize)]
pub struct CoveringReport {
    /// Largest distance from a sampled point to the net.
    pub max_gap: f64,
    /// Fraction of samples within `epsilon` of the net.
    pub covered_fraction: f64,
    pub samples: usize,
}

/// Draws `samples` points from the net's set (interior and boundary mixed)
/// and measures worst and average coverage. Sampling is deterministic in
/// `seed` and independent of the net construction stream.
///
/// Frobenius-metric nets go through a flattened element table and the
/// expansion `|a - x|^2 = |a|^2 + |x|^2 - 2 <a, x>`, which keeps the inner
/// loop allocation-free; large nets would otherwise dominate the runtime.
pub fn verify_covering(net: &EpsilonNet, samples: usize, seed: u64) -> Result<CoveringReport> {
    if samples == 0 {
        return Err(LrprError::Argument(
            "need at least one verification sample".into(),
        ));
    }
    if net.elements.is_empty() {
        return Err(LrprError::Argument("cannot verify an empty net".into()));
    }
    let (rows, cols) = net.elements[0].shape();
    let r = net.rank;
    let frobenius = !matches!(net.set_kind, NetSetKind::OFrame);
    let dim = rows * cols;
    let (flat, norms_sq): (Vec<f64>, Vec<f64>) = if frobenius {
        let mut flat = Vec::with_capacity(net.elements.len() * dim);
        let mut norms = Vec::with_capacity(net.elements.len());
        for e in &net.elements {
            flat.extend_from_slice(e.as_slice());
            norms.push(e.norm_squared());
        }
        (flat, norms)
    } else {
        (Vec::new(), Vec::new())
    };
    let gaps: Vec<f64> = (0..samples)
        .into_par_iter()
        .map(|k| {
            let mut rng = derive_rng(seed, DOM_NET, 2, k as u64);
            let boundary = k % 2 == 0;
            let x = match net.set_kind {
                NetSetKind::D => sample_d_point(rows, &mut rng, boundary),
                NetSetKind::OFrame => haar_frame(rows, cols, &mut rng),
                NetSetKind::KR => {
                    let h = crate::srip::sample_u_r(rows, cols, r, &mut rng);
                    let radius: f64 = if boundary {
                        1.0
                    } else {
                        rng.gen_range(0.0..=1.0)
                    };
                    h * radius
                }
                NetSetKind::NRStar => {
                    let h = crate::srip::sample_n_r_star(rows, cols, r, &mut rng);
                    let radius: f64 = if boundary {
                        1.0
                    } else {
                        rng.gen_range(0.0..=1.0)
                    };
                    h * radius
                }
            };
            if frobenius {
                let xs = x.as_slice();
                let xn = x.norm_squared();
                let mut best = f64::INFINITY;
                for (chunk, na) in flat.chunks_exact(dim).zip(norms_sq.iter()) {
                    let dot: f64 = chunk.iter().zip(xs.iter()).map(|(a, b)| a * b).sum();
                    let d2 = na + xn - 2.0 * dot;
                    if d2 < best {
                        best = d2;
                    }
                }
                best.max(0.0).sqrt()
            } else {
                net.distance_to(&x)
            }
        })
        .collect();
    let max_gap = gaps.iter().copied().fold(0.0, f64::max);
    let covered = gaps.iter().filter(|&&g| g <= net.epsilon).count();
    Ok(CoveringReport {
        max_gap,
        covered_fraction: covered as f64 / samples as f64,
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn d_net_covers_interval() {
        // r = 1: the set is [0, 1]; a 0.2-net must include everything
        // within 0.2 and respect the 1D bound.
        let net = build_net_component_d(1, 0.2, 2000, 1).unwrap();
        assert!(net.cardinality() as f64 <= net.cardinality_bound);
        for k in 0..=100 {
            let x = DMatrix::from_element(1, 1, k as f64 / 100.0);
            assert!(net.covers(&x), "uncovered point {}", k as f64 / 100.0);
        }
    }

    #[test]
    fn frame_metric_is_max_column_norm() {
        let e1 = DMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
        let e2 = DMatrix::from_column_slice(2, 1, &[0.0, 1.0]);
        assert_relative_eq!(
            net_distance(NetSetKind::OFrame, &e1, &e2),
            2.0f64.sqrt(),
            max_relative = 1e-15
        );
        assert_eq!(net_distance(NetSetKind::OFrame, &e1, &e1), 0.0);

        // Two-column case takes the worse column.
        let a = DMatrix::from_column_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let b = DMatrix::from_column_slice(2, 2, &[1.0, 0.0, 1.0, 0.0]);
        assert_relative_eq!(
            net_distance(NetSetKind::OFrame, &a, &b),
            2.0f64.sqrt(),
            max_relative = 1e-15
        );
    }

    #[test]
    fn frame_net_covers_circle() {
        // 2 x 1 frames are unit circle points.
        let net = build_net_o_frame(2, 1, 0.3, 5000, 2).unwrap();
        let mut rng = derive_rng(99, DOM_NET, 9, 9);
        for _ in 0..500 {
            let q = haar_frame(2, 1, &mut rng);
            assert!(net.covers(&q));
        }
    }

    #[test]
    fn k_net_assembles_and_covers() {
        let params = NetBuildParams {
            epsilon: 0.9,
            seed: 3,
            ..NetBuildParams::default()
        };
        let net = build_net_k_r(2, 2, 1, &params).unwrap();
        assert!(net.cardinality() as f64 <= net.cardinality_bound);
        let report = verify_covering(&net, 1000, 4).unwrap();
        assert_eq!(report.covered_fraction, 1.0, "max gap {}", report.max_gap);
        assert!(report.max_gap <= 0.9);

        // Every element must itself be rank <= r and inside the ball
        // (up to the diagonal part's unit bound).
        for e in net.elements.iter().step_by(50) {
            let s = e.clone().svd(false, false).singular_values;
            assert!(s.iter().skip(1).all(|&v| v < 1e-12));
            assert!(e.norm() <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn nuclear_net_covers() {
        let params = NetBuildParams {
            epsilon: 0.8,
            seed: 5,
            ..NetBuildParams::default()
        };
        let net = build_net_n_r_star(2, 2, 1, &params).unwrap();
        assert!((net.cardinality() as f64) <= net.cardinality_bound);
        let report = verify_covering(&net, 1000, 6).unwrap();
        assert_eq!(report.covered_fraction, 1.0, "max gap {}", report.max_gap);
    }

    #[test]
    fn size_cap_fires_before_materialization() {
        let params = NetBuildParams {
            epsilon: 0.5,
            cap: 10,
            seed: 7,
            ..NetBuildParams::default()
        };
        match build_net_k_r(2, 2, 1, &params) {
            Err(LrprError::SizeCap { required, cap }) => {
                assert!(required > 10);
                assert_eq!(cap, 10);
            }
            other => panic!("expected size cap error, got {other:?}"),
        }
    }

    #[test]
    fn parameter_validation() {
        let params = NetBuildParams::default();
        assert!(build_net_k_r(2, 2, 0, &params).is_err());
        let bad = NetBuildParams {
            epsilon: 1.5,
            ..params
        };
        assert!(build_net_k_r(2, 2, 1, &bad).is_err());
        // Nuclear net rejects epsilon above sqrt(r).
        let bad = NetBuildParams {
            epsilon: 1.2,
            ..params
        };
        assert!(build_net_n_r_star(2, 2, 1, &bad).is_err());
    }

    // The verifier must detect broken nets: removing elements can only
    // increase gaps, and a single-element net cannot cover the ball.
    #[test]
    fn decimated_net_detected() {
        let params = NetBuildParams {
            epsilon: 0.6,
            seed: 8,
            ..NetBuildParams::default()
        };
        let net = build_net_k_r(2, 2, 1, &params).unwrap();
        let full = verify_covering(&net, 2000, 9).unwrap();
        assert_eq!(full.covered_fraction, 1.0);

        let mut decimated = net.clone();
        decimated.elements = decimated
            .elements
            .iter()
            .enumerate()
            .filter(|(i, _)| i % 3 != 0)
            .map(|(_, e)| e.clone())
            .collect();
        let worse = verify_covering(&decimated, 2000, 9).unwrap();
        assert!(worse.max_gap >= full.max_gap);

        let mut broken = net.clone();
        broken.elements.truncate(1);
        let report = verify_covering(&broken, 2000, 9).unwrap();
        assert!(report.covered_fraction < 1.0);
        assert!(report.max_gap > net.epsilon);
    }

    #[test]
    fn net_file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let bin = dir.path().join("net.bin");
        let json = dir.path().join("net.json");
        let params = NetBuildParams {
            epsilon: 0.9,
            seed: 10,
            ..NetBuildParams::default()
        };
        let net = build_net_k_r(2, 2, 1, &params).unwrap();
        net.write_file(&bin).unwrap();
        net.write_sidecar(&json).unwrap();
        let back = EpsilonNet::read_file(&bin).unwrap();
        assert_eq!(back.set_kind, NetSetKind::KR);
        assert_eq!(back.rank, 1);
        assert_eq!(back.epsilon, net.epsilon);
        assert_eq!(back.cardinality(), net.cardinality());
        for (a, b) in back.elements.iter().zip(net.elements.iter()) {
            assert_eq!(a, b);
        }
        let sidecar: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(&json).unwrap()).unwrap();
        assert_eq!(sidecar["cardinality"], net.cardinality());
    }

    #[test]
    fn builders_are_deterministic() {
        let params = NetBuildParams {
            epsilon: 0.8,
            seed: 11,
            ..NetBuildParams::default()
        };
        let a = build_net_k_r(2, 2, 1, &params).unwrap();
        let b = build_net_k_r(2, 2, 1, &params).unwrap();
        assert_eq!(a.cardinality(), b.cardinality());
        for (x, y) in a.elements.iter().zip(b.elements.iter()) {
            assert_eq!(x, y);
        }
    }
}
