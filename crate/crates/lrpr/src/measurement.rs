//! Gaussian measurement ensembles and amplitude observations.
//!
//! An ensemble is a stack of `p` sensing matrices `A_i` of shape `n x m`.
//! The forward map sends a matrix `X` to the vector of Frobenius inner
//! products `<A_i, X> = tr(A_i^T X)`; the adjoint of a vector `b` is
//! `sum_i b_i A_i`. Observations are `y_i = |<A_i, X0>| + eta_i`; `y` is
//! kept as computed and may be negative when the noise pushes it below
//! zero, since every estimator consumes `y` only through `||A(X)| - y|`.

use std::io::{Read as _, Write as _};
use std::path::Path;
use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{LrprError, Result};
use crate::rng::{derive_rng, DOM_ENSEMBLE, DOM_TARGET};

/// Problem dimensions: `n x m` matrices, `p` measurements, rank budget `r`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Dims {
    pub n: usize,
    pub m: usize,
    pub p: usize,
    pub r: usize,
}

impl Dims {
    pub fn new(n: usize, m: usize, p: usize, r: usize) -> Result<Self> {
        let d = Dims { n, m, p, r };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.m == 0 {
            return Err(LrprError::Dimension(format!(
                "matrix shape must be positive, got {}x{}",
                self.n, self.m
            )));
        }
        if self.p == 0 {
            return Err(LrprError::Dimension("p must be >= 1".into()));
        }
        if self.r == 0 || self.r > self.n.min(self.m) {
            return Err(LrprError::Dimension(format!(
                "rank budget must satisfy 1 <= r <= min(n, m), got r={} for {}x{}",
                self.r, self.n, self.m
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnsembleKind {
    Gaussian,
    Custom,
}

impl EnsembleKind {
    fn to_u8(self) -> u8 {
        match self {
            EnsembleKind::Gaussian => 0,
            EnsembleKind::Custom => 1,
        }
    }

    fn from_u8(v: u8) -> Result<Self> {
        match v {
            0 => Ok(EnsembleKind::Gaussian),
            1 => Ok(EnsembleKind::Custom),
            other => Err(LrprError::Format(format!(
                "unknown ensemble kind byte {other}"
            ))),
        }
    }
}

/// The linear map `A` as `p` stacked sensing matrices.
///
/// A vectorized `p x (n*m)` view (row `i` = `A_i` flattened row-major) is
/// materialized on first demand; solvers use it for fast matrix-vector
/// products while subset/row access goes through the matrix list.
#[derive(Debug)]
pub struct MeasurementEnsemble {
    pub dims: Dims,
    pub matrices: Vec<DMatrix<f64>>,
    pub seed: u64,
    pub kind: EnsembleKind,
    vectorized: OnceLock<DMatrix<f64>>,
}

/// Flattens a matrix row-major, matching the ensemble file layout.
pub fn vec_row_major(x: &DMatrix<f64>) -> DVector<f64> {
    let (n, m) = x.shape();
    let mut v = DVector::zeros(n * m);
    for i in 0..n {
        for j in 0..m {
            v[i * m + j] = x[(i, j)];
        }
    }
    v
}

/// Inverse of [`vec_row_major`].
pub fn unvec_row_major(v: &DVector<f64>, n: usize, m: usize) -> DMatrix<f64> {
    let mut x = DMatrix::zeros(n, m);
    for i in 0..n {
        for j in 0..m {
            x[(i, j)] = v[i * m + j];
        }
    }
    x
}

impl MeasurementEnsemble {
    /// Draws `p` matrices of i.i.d. standard-normal entries. Matrix `i`
    /// fills from its own derived stream in row-major entry order, so the
    /// result is a pure function of `(dims, seed)` and matrices can be
    /// regenerated independently.
    pub fn generate(dims: Dims, seed: u64) -> Result<Self> {
        dims.validate()?;
        let matrices = (0..dims.p)
            .map(|i| {
                let mut rng = derive_rng(seed, DOM_ENSEMBLE, i as u64, 0);
                let mut a = DMatrix::zeros(dims.n, dims.m);
                for row in 0..dims.n {
                    for col in 0..dims.m {
                        a[(row, col)] = rng.sample(StandardNormal);
                    }
                }
                a
            })
            .collect();
        Ok(MeasurementEnsemble {
            dims,
            matrices,
            seed,
            kind: EnsembleKind::Gaussian,
            vectorized: OnceLock::new(),
        })
    }

    /// Wraps externally supplied sensing matrices (kind = custom).
    pub fn from_matrices(matrices: Vec<DMatrix<f64>>, r: usize) -> Result<Self> {
        if matrices.is_empty() {
            return Err(LrprError::Dimension(
                "ensemble needs at least one matrix".into(),
            ));
        }
        let (n, m) = matrices[0].shape();
        if matrices.iter().any(|a| a.shape() != (n, m)) {
            return Err(LrprError::Dimension(
                "all sensing matrices must share one shape".into(),
            ));
        }
        let dims = Dims::new(n, m, matrices.len(), r)?;
        Ok(MeasurementEnsemble {
            dims,
            matrices,
            seed: 0,
            kind: EnsembleKind::Custom,
            vectorized: OnceLock::new(),
        })
    }

    /// Classical vector phase retrieval: each `a_i` becomes the `n x 1`
    /// sensing matrix `a_i`, so `<A_i, x> = a_i^T x`.
    pub fn vector_case(a_list: Vec<DVector<f64>>) -> Result<Self> {
        if a_list.is_empty() {
            return Err(LrprError::Dimension(
                "vector case needs at least one vector".into(),
            ));
        }
        let n = a_list[0].len();
        if a_list.iter().any(|a| a.len() != n) {
            return Err(LrprError::Dimension(
                "all vectors must share one length".into(),
            ));
        }
        let matrices = a_list
            .into_iter()
            .map(|a| DMatrix::from_column_slice(n, 1, a.as_slice()))
            .collect();
        MeasurementEnsemble::from_matrices(matrices, 1)
    }

    /// Phase retrieval from quadratic measurements: `A_i = a_i a_i^T`, so
    /// for `X0 = x0 x0^T` the clean observation is `(a_i^T x0)^2`.
    pub fn rank_one_case(a_list: Vec<DVector<f64>>) -> Result<Self> {
        if a_list.is_empty() {
            return Err(LrprError::Dimension(
                "rank-one case needs at least one vector".into(),
            ));
        }
        let n = a_list[0].len();
        if a_list.iter().any(|a| a.len() != n) {
            return Err(LrprError::Dimension(
                "all vectors must share one length".into(),
            ));
        }
        let matrices = a_list.into_iter().map(|a| &a * a.transpose()).collect();
        MeasurementEnsemble::from_matrices(matrices, 1)
    }

    /// The `p x (n*m)` row-major vectorized view, built once on demand.
    pub fn vectorized(&self) -> &DMatrix<f64> {
        self.vectorized.get_or_init(|| {
            let Dims { n, m, p, .. } = self.dims;
            let mut v = DMatrix::zeros(p, n * m);
            for (i, a) in self.matrices.iter().enumerate() {
                for row in 0..n {
                    for col in 0..m {
                        v[(i, row * m + col)] = a[(row, col)];
                    }
                }
            }
            v
        })
    }

    fn check_shape(&self, x: &DMatrix<f64>) -> Result<()> {
        if x.shape() != (self.dims.n, self.dims.m) {
            return Err(LrprError::Dimension(format!(
                "expected {}x{} matrix, got {}x{}",
                self.dims.n,
                self.dims.m,
                x.nrows(),
                x.ncols()
            )));
        }
        Ok(())
    }

    /// Forward map: component `i` is `tr(A_i^T X)`.
    pub fn apply(&self, x: &DMatrix<f64>) -> Result<DVector<f64>> {
        self.check_shape(x)?;
        Ok(self.vectorized() * vec_row_major(x))
    }

    /// Adjoint map: `sum_i b_i A_i`.
    pub fn apply_adjoint(&self, b: &DVector<f64>) -> Result<DMatrix<f64>> {
        if b.len() != self.dims.p {
            return Err(LrprError::Dimension(format!(
                "expected length-{} vector, got {}",
                self.dims.p,
                b.len()
            )));
        }
        let v = self.vectorized().tr_mul(b);
        Ok(unvec_row_major(&v, self.dims.n, self.dims.m))
    }

    /// Restriction to an index subset, 0-based, strictly increasing.
    pub fn apply_subset(&self, indices: &[usize], x: &DMatrix<f64>) -> Result<DVector<f64>> {
        self.check_shape(x)?;
        if indices.is_empty() {
            return Err(LrprError::Argument("subset must be nonempty".into()));
        }
        if indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(LrprError::Argument(
                "subset indices must be strictly increasing".into(),
            ));
        }
        if *indices.last().unwrap() >= self.dims.p {
            return Err(LrprError::Argument(format!(
                "subset index {} out of range for p={}",
                indices.last().unwrap(),
                self.dims.p
            )));
        }
        let full = self.apply(x)?;
        Ok(DVector::from_iterator(
            indices.len(),
            indices.iter().map(|&i| full[i]),
        ))
    }

    /// Synthesizes `y_i = |<A_i, X0>| + eta_i`, caching the clean amplitudes.
    pub fn observe(
        &self,
        x0: &LowRankTarget,
        eta: Option<&DVector<f64>>,
    ) -> Result<AmplitudeObservation> {
        if let Some(e) = eta {
            if e.len() != self.dims.p {
                return Err(LrprError::Dimension(format!(
                    "noise length {} does not match p={}",
                    e.len(),
                    self.dims.p
                )));
            }
        }
        let clean = self.apply(&x0.dense)?.map(f64::abs);
        let y = match eta {
            Some(e) => {
                DVector::from_iterator(self.dims.p, (0..self.dims.p).map(|i| clean[i] + e[i]))
            }
            None => clean.clone(),
        };
        Ok(AmplitudeObservation {
            y,
            eta: eta.cloned(),
            clean_amplitudes: Some(clean),
        })
    }

    /// Binary container: magic "LRPR", version u16, n/m/p u32, seed u64,
    /// kind u8, then `p*n*m` little-endian f64 values row-major per matrix.
    pub fn write_file(&self, path: &Path) -> Result<()> {
        let mut out = Vec::with_capacity(27 + self.dims.p * self.dims.n * self.dims.m * 8);
        out.extend_from_slice(b"LRPR");
        out.extend_from_slice(&1u16.to_le_bytes());
        out.extend_from_slice(&(self.dims.n as u32).to_le_bytes());
        out.extend_from_slice(&(self.dims.m as u32).to_le_bytes());
        out.extend_from_slice(&(self.dims.p as u32).to_le_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
        out.push(self.kind.to_u8());
        for a in &self.matrices {
            for row in 0..self.dims.n {
                for col in 0..self.dims.m {
                    out.extend_from_slice(&a[(row, col)].to_le_bytes());
                }
            }
        }
        let mut f = std::fs::File::create(path)?;
        f.write_all(&out)?;
        Ok(())
    }

    /// Reads the binary container written by [`write_file`]. The rank
    /// budget is not stored; the caller supplies it.
    pub fn read_file(path: &Path, r: usize) -> Result<Self> {
        let mut buf = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut buf)?;
        if buf.len() < 27 || &buf[0..4] != b"LRPR" {
            return Err(LrprError::Format("not an ensemble file (bad magic)".into()));
        }
        let version = u16::from_le_bytes([buf[4], buf[5]]);
        if version != 1 {
            return Err(LrprError::Format(format!(
                "unsupported ensemble version {version}"
            )));
        }
        let n = u32::from_le_bytes(buf[6..10].try_into().unwrap()) as usize;
        let m = u32::from_le_bytes(buf[10..14].try_into().unwrap()) as usize;
        let p = u32::from_le_bytes(buf[14..18].try_into().unwrap()) as usize;
        let seed = u64::from_le_bytes(
            buf[18..26]
                .try_into()
                .map_err(|_| LrprError::Format("truncated header".into()))?,
        );
        let kind = EnsembleKind::from_u8(buf[26]);
        let kind = kind?;
        let expected = 27 + p * n * m * 8;
        if buf.len() != expected {
            return Err(LrprError::Format(format!(
                "ensemble payload has {} bytes, expected {expected}",
                buf.len()
            )));
        }
        let dims = Dims::new(n, m, p, r)?;
        let mut matrices = Vec::with_capacity(p);
        let mut off = 27;
        for _ in 0..p {
            let mut a = DMatrix::zeros(n, m);
            for row in 0..n {
                for col in 0..m {
                    a[(row, col)] = f64::from_le_bytes(buf[off..off + 8].try_into().unwrap());
                    off += 8;
                }
            }
            matrices.push(a);
        }
        Ok(MeasurementEnsemble {
            dims,
            matrices,
            seed,
            kind,
            vectorized: OnceLock::new(),
        })
    }
}

/// Ground truth `X0` in factored form with a dense cache.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct LowRankTarget {
    pub n: usize,
    pub m: usize,
    pub r: usize,
    /// `n x r`, orthonormal columns.
    pub left: Vec<Vec<f64>>,
    /// Nonnegative, nonincreasing.
    pub singulars: Vec<f64>,
    /// `m x r`, orthonormal columns.
    pub right: Vec<Vec<f64>>,
    #[serde(skip)]
    pub dense: DMatrix<f64>,
}

const ORTHO_TOL: f64 = 1e-10;

impl LowRankTarget {
    pub fn new(left: DMatrix<f64>, singulars: DVector<f64>, right: DMatrix<f64>) -> Result<Self> {
        let (n, r) = left.shape();
        let (m, r2) = right.shape();
        if r != r2 || singulars.len() != r || r == 0 {
            return Err(LrprError::Dimension(
                "factor shapes disagree on rank".into(),
            ));
        }
        if r > n.min(m) {
            return Err(LrprError::Dimension("rank exceeds min(n, m)".into()));
        }
        for (name, q) in [("left", &left), ("right", &right)] {
            let gram = q.tr_mul(q);
            let eye = DMatrix::identity(r, r);
            if (gram - eye).norm() > ORTHO_TOL {
                return Err(LrprError::Numeric(format!(
                    "{name} factor columns not orthonormal within {ORTHO_TOL}"
                )));
            }
        }
        if singulars.iter().any(|&s| s < 0.0) {
            return Err(LrprError::Argument(
                "singular values must be nonnegative".into(),
            ));
        }
        if singulars.as_slice().windows(2).any(|w| w[0] < w[1]) {
            return Err(LrprError::Argument(
                "singular values must be nonincreasing".into(),
            ));
        }
        let dense = &left * DMatrix::from_diagonal(&singulars) * right.transpose();
        Ok(LowRankTarget {
            n,
            m,
            r,
            left: matrix_to_rows(&left),
            singulars: singulars.as_slice().to_vec(),
            right: matrix_to_rows(&right),
            dense,
        })
    }

    /// Haar-random factors with `|X0|_F = 1`: QR of Gaussian blocks with
    /// the R-diagonal sign fixed positive, singular values `|N(0,1)|`
    /// sorted nonincreasing then normalized to unit l2.
    pub fn random_unit(n: usize, m: usize, r: usize, seed: u64) -> Result<Self> {
        Dims::new(n, m, 1, r)?;
        let mut rng = derive_rng(seed, DOM_TARGET, 0, 0);
        let left = haar_frame(n, r, &mut rng);
        let right = haar_frame(m, r, &mut rng);
        let mut s: Vec<f64> = (0..r)
            .map(|_| rng.sample::<f64, _>(StandardNormal).abs())
            .collect();
        s.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let norm = s.iter().map(|v| v * v).sum::<f64>().sqrt();
        let s = DVector::from_iterator(r, s.iter().map(|v| v / norm));
        LowRankTarget::new(left, s, right)
    }

    /// Scales the target (and its dense cache) by `c >= 0`.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        if c < 0.0 {
            return Err(LrprError::Argument("scale must be nonnegative".into()));
        }
        let left = rows_to_matrix(&self.left);
        let right = rows_to_matrix(&self.right);
        let s = DVector::from_iterator(self.r, self.singulars.iter().map(|v| v * c));
        LowRankTarget::new(left, s, right)
    }

    pub fn left_matrix(&self) -> DMatrix<f64> {
        rows_to_matrix(&self.left)
    }

    pub fn right_matrix(&self) -> DMatrix<f64> {
        rows_to_matrix(&self.right)
    }

    pub fn norm_fro(&self) -> f64 {
        self.dense.norm()
    }

    pub fn nuclear_norm(&self) -> f64 {
        self.singulars.iter().sum()
    }

    /// Rebuilds the dense cache after deserialization.
    pub fn rebuild_dense(&mut self) {
        let left = rows_to_matrix(&self.left);
        let right = rows_to_matrix(&self.right);
        let s = DVector::from_column_slice(&self.singulars);
        self.dense = &left * DMatrix::from_diagonal(&s) * right.transpose();
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| LrprError::Format(format!("target serialization failed: {e}")))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut t: LowRankTarget = serde_json::from_str(&text)
            .map_err(|e| LrprError::Format(format!("target parse failed: {e}")))?;
        t.rebuild_dense();
        Ok(t)
    }
}

fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

fn rows_to_matrix(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let n = rows.len();
    let m = rows[0].len();
    DMatrix::from_fn(n, m, |i, j| rows[i][j])
}

/// Haar-distributed `n x r` orthonormal frame: QR of a Gaussian block with
/// each column's sign fixed so the corresponding R diagonal is positive.
pub fn haar_frame(n: usize, r: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    let g = DMatrix::from_fn(n, r, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = g.qr();
    let mut q = qr.q();
    let rr = qr.r();
    for j in 0..r {
        if rr[(j, j)] < 0.0 {
            for i in 0..n {
                q[(i, j)] = -q[(i, j)];
            }
        }
    }
    q
}

/// Amplitude observation `y`, with the noise and clean amplitudes kept
/// alongside when they are known.
#[derive(Debug, Clone)]
pub struct AmplitudeObservation {
    pub y: DVector<f64>,
    pub eta: Option<DVector<f64>>,
    pub clean_amplitudes: Option<DVector<f64>>,
}

impl AmplitudeObservation {
    /// CSV with header `i,y,eta`; `i` is 1-based, floats carry 17
    /// significant digits, absent noise writes exact zeros.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("i,y,eta\n");
        for i in 0..self.y.len() {
            let eta = self.eta.as_ref().map_or(0.0, |e| e[i]);
            out.push_str(&format!(
                "{},{},{}\n",
                i + 1,
                fmt_f64(self.y[i]),
                fmt_f64(eta)
            ));
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_path(path)
            .map_err(|e| LrprError::Format(format!("observation csv: {e}")))?;
        {
            let head = rdr
                .headers()
                .map_err(|e| LrprError::Format(format!("observation csv: {e}")))?;
            if head.iter().collect::<Vec<_>>() != vec!["i", "y", "eta"] {
                return Err(LrprError::Format(
                    "observation csv must have header i,y,eta".into(),
                ));
            }
        }
        let mut y = Vec::new();
        let mut eta = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| LrprError::Format(format!("observation csv: {e}")))?;
            if rec.len() != 3 {
                return Err(LrprError::Format(
                    "observation csv rows need 3 fields".into(),
                ));
            }
            y.push(parse_f64(&rec[1])?);
            eta.push(parse_f64(&rec[2])?);
        }
        if y.is_empty() {
            return Err(LrprError::Format("observation csv has no rows".into()));
        }
        Ok(AmplitudeObservation {
            y: DVector::from_vec(y),
            eta: Some(DVector::from_vec(eta)),
            clean_amplitudes: None,
        })
    }
}

/// 17 significant digits; round-trips any finite f64.
pub fn fmt_f64(x: f64) -> String {
    format!("{:.16e}", x)
}

fn parse_f64(s: &str) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|e| LrprError::Format(format!("bad float {s:?}: {e}")))
}
