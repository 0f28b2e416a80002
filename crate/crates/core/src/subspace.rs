//! PCA over word descriptors: covariance, symmetric eigendecomposition,
//! dimension selection, projection, whitening and reconstruction error.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Eigenvalues smaller than this fraction of the largest are never retained.
pub const RETENTION_FLOOR: f64 = 1e-12;
/// Whitening regularizer as a fraction of the largest eigenvalue.
pub const EPSILON_FACTOR: f64 = 1e-8;
/// Default fraction of variance kept by [`Retention::Variance`].
pub const DEFAULT_VARIANCE: f64 = 0.95;

const SYMMETRY_TOL: f64 = 1e-9;
const NEGATIVE_EIGEN_TOL: f64 = 1e-9;
const ORTHONORMAL_TOL: f64 = 1e-9;
const JACOBI_TOL: f64 = 1e-12;
const MAX_SWEEPS: usize = 100;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PcaError {
    #[error("need at least 2 samples, got {0}")]
    InsufficientData(usize),
    #[error("vector has dimension {actual}, expected {expected}")]
    Dimension { expected: usize, actual: usize },
    #[error("matrix is not symmetric: |a[{i}][{j}] - a[{j}][{i}]| = {diff:e}")]
    Symmetry { i: usize, j: usize, diff: f64 },
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("eigenvalue spectrum is all zero")]
    DegenerateSpectrum,
    #[error("operation requires a whitened model")]
    Mode,
    #[error("invalid model: {0}")]
    Invalid(String),
}

/// Dense row-major square matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SquareMatrix {
    n: usize,
    data: Vec<f64>,
}

impl SquareMatrix {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, PcaError> {
        let n = rows.len();
        let mut data = Vec::with_capacity(n * n);
        for r in rows {
            if r.len() != n {
                return Err(PcaError::Dimension {
                    expected: n,
                    actual: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Self { n, data })
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] = v;
    }

    pub fn trace(&self) -> f64 {
        (0..self.n).map(|i| self.get(i, i)).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }
}

/// Sample mean and population covariance `(1/N) sum (x - mean)(x - mean)^T`.
pub fn compute_covariance<V: AsRef<[f64]>>(samples: &[V]) -> Result<(Vec<f64>, SquareMatrix), PcaError> {
    if samples.len() < 2 {
        return Err(PcaError::InsufficientData(samples.len()));
    }
    let n = samples[0].as_ref().len();
    let mut mean = vec![0.0; n];
    for s in samples {
        let s = s.as_ref();
        if s.len() != n {
            return Err(PcaError::Dimension {
                expected: n,
                actual: s.len(),
            });
        }
        for (m, v) in mean.iter_mut().zip(s) {
            *m += v;
        }
    }
    let count = samples.len() as f64;
    mean.iter_mut().for_each(|m| *m /= count);

    let mut cov = SquareMatrix::zeros(n);
    let mut centered = vec![0.0; n];
    for s in samples {
        for ((c, v), m) in centered.iter_mut().zip(s.as_ref()).zip(&mean) {
            *c = v - m;
        }
        for i in 0..n {
            let ci = centered[i];
            if ci == 0.0 {
                continue;
            }
            let row = &mut cov.data[i * n..(i + 1) * n];
            for j in i..n {
                row[j] += ci * centered[j];
            }
        }
    }
    for i in 0..n {
        for j in i..n {
            let v = cov.get(i, j) / count;
            cov.set(i, j, v);
            cov.set(j, i, v);
        }
    }
    Ok((mean, cov))
}

/// Eigenpairs of a symmetric matrix, eigenvalues descending.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricEigen {
    pub values: Vec<f64>,
    /// `vectors[i]` is the unit eigenvector for `values[i]`, with its
    /// largest-magnitude component positive.
    pub vectors: Vec<Vec<f64>>,
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix.
pub fn eigendecompose(matrix: &SquareMatrix) -> Result<SymmetricEigen, PcaError> {
    let n = matrix.n();
    let scale = matrix.max_abs().max(1.0);
    for i in 0..n {
        for j in i + 1..n {
            let diff = (matrix.get(i, j) - matrix.get(j, i)).abs();
            if diff > SYMMETRY_TOL * scale || diff.is_nan() {
                return Err(PcaError::Symmetry { i, j, diff });
            }
        }
    }
    if matrix.data.iter().any(|v| !v.is_finite()) {
        return Err(PcaError::Numerical("non-finite matrix entry".into()));
    }

    let mut a = matrix.clone();
    // Symmetrize exactly so rotations work on one triangle's worth of data.
    for i in 0..n {
        for j in i + 1..n {
            let v = 0.5 * (a.get(i, j) + a.get(j, i));
            a.set(i, j, v);
            a.set(j, i, v);
        }
    }
    let mut v = SquareMatrix::identity(n);

    let mut converged = n <= 1;
    for _ in 0..MAX_SWEEPS {
        let diag_max = (0..n).fold(0.0f64, |m, i| m.max(a.get(i, i).abs()));
        let off_max = (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .fold(0.0f64, |m, (i, j)| m.max(a.get(i, j).abs()));
        if off_max == 0.0 || off_max <= JACOBI_TOL * diag_max {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a.get(p, q);
                if apq == 0.0 {
                    continue;
                }
                let app = a.get(p, p);
                let aqq = a.get(q, q);
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                rotate(&mut a, &mut v, p, q, c, s, t);
            }
        }
    }
    if !converged {
        return Err(PcaError::Numerical(format!("jacobi did not converge in {MAX_SWEEPS} sweeps")));
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a.get(j, j).total_cmp(&a.get(i, i)).then(i.cmp(&j)));
    let values = order.iter().map(|&i| a.get(i, i)).collect();
    let vectors = order
        .iter()
        .map(|&k| {
            let mut col: Vec<f64> = (0..n).map(|r| v.get(r, k)).collect();
            let lead = col
                .iter()
                .enumerate()
                .fold((0, 0.0f64), |(bi, bv), (i, x)| if x.abs() > bv { (i, x.abs()) } else { (bi, bv) })
                .0;
            if col[lead] < 0.0 {
                col.iter_mut().for_each(|x| *x = -*x);
            }
            col
        })
        .collect();
    Ok(SymmetricEigen { values, vectors })
}

/// Applies the Jacobi rotation zeroing `a[p][q]`, accumulating into `v`.
fn rotate(a: &mut SquareMatrix, v: &mut SquareMatrix, p: usize, q: usize, c: f64, s: f64, t: f64) {
    let n = a.n();
    let apq = a.get(p, q);
    let tau = s / (1.0 + c);
    a.set(p, p, a.get(p, p) - t * apq);
    a.set(q, q, a.get(q, q) + t * apq);
    a.set(p, q, 0.0);
    a.set(q, p, 0.0);
    for r in 0..n {
        if r == p || r == q {
            continue;
        }
        let arp = a.get(r, p);
        let arq = a.get(r, q);
        let new_rp = arp - s * (arq + tau * arp);
        let new_rq = arq + s * (arp - tau * arq);
        a.set(r, p, new_rp);
        a.set(p, r, new_rp);
        a.set(r, q, new_rq);
        a.set(q, r, new_rq);
    }
    for r in 0..n {
        let vrp = v.get(r, p);
        let vrq = v.get(r, q);
        v.set(r, p, vrp - s * (vrq + tau * vrp));
        v.set(r, q, vrq + s * (vrp - tau * vrq));
    }
}

/// How many principal directions to keep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Retention {
    /// Smallest `m` whose leading eigenvalues hold at least this fraction of the total.
    Variance(f64),
    /// Exactly `m` directions (capped at the retention floor).
    Fixed(usize),
}

impl Default for Retention {
    fn default() -> Self {
        Retention::Variance(DEFAULT_VARIANCE)
    }
}

/// Chooses the retained dimension for a descending, non-negative spectrum.
pub fn select_dimension(eigenvalues: &[f64], retention: Retention) -> Result<usize, PcaError> {
    let total: f64 = eigenvalues.iter().sum();
    let lead = eigenvalues.first().copied().unwrap_or(0.0);
    if !(total > 0.0) || !(lead > 0.0) {
        return Err(PcaError::DegenerateSpectrum);
    }
    let usable = eigenvalues.iter().take_while(|&&l| l > RETENTION_FLOOR * lead).count();
    let m = match retention {
        Retention::Variance(tau) => {
            if !(tau > 0.0 && tau <= 1.0) {
                return Err(PcaError::Invalid(format!("variance target {tau} outside (0, 1]")));
            }
            let goal = tau * total * (1.0 - 1e-12);
            let mut cum = 0.0;
            let mut m = eigenvalues.len();
            for (i, l) in eigenvalues.iter().enumerate() {
                cum += l;
                if cum >= goal {
                    m = i + 1;
                    break;
                }
            }
            m
        }
        Retention::Fixed(m) => {
            if m == 0 || m > eigenvalues.len() {
                return Err(PcaError::Invalid(format!(
                    "fixed dimension {m} outside 1..={}",
                    eigenvalues.len()
                )));
            }
            m
        }
    };
    Ok(m.min(usable).max(1))
}

/// A fitted principal subspace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    mean: Vec<f64>,
    eigenvalues: Vec<f64>,
    basis: Vec<f64>,
    dim: usize,
    whitening_scales: Vec<f64>,
    epsilon: f64,
    whitened: bool,
}

impl PcaModel {
    /// Reassembles a model, checking its invariants.
    pub fn from_parts(
        mean: Vec<f64>,
        eigenvalues: Vec<f64>,
        basis: Vec<f64>,
        dim: usize,
        whitening_scales: Vec<f64>,
        epsilon: f64,
        whitened: bool,
    ) -> Result<Self, PcaError> {
        let n = mean.len();
        if eigenvalues.len() != n || basis.len() != dim * n || whitening_scales.len() != dim {
            return Err(PcaError::Invalid("inconsistent component lengths".into()));
        }
        if dim == 0 || dim > n {
            return Err(PcaError::Invalid(format!("retained dimension {dim} outside 1..={n}")));
        }
        if eigenvalues.windows(2).any(|w| w[0] < w[1]) || eigenvalues.iter().any(|&l| !(l >= 0.0)) {
            return Err(PcaError::Invalid("eigenvalues must be non-negative and descending".into()));
        }
        if !epsilon.is_finite() || epsilon < 0.0 || whitening_scales.iter().any(|s| !s.is_finite()) {
            return Err(PcaError::Invalid("non-finite whitening parameters".into()));
        }
        if mean.iter().chain(&basis).any(|v| !v.is_finite()) {
            return Err(PcaError::Invalid("non-finite mean or basis".into()));
        }
        let model = Self {
            mean,
            eigenvalues,
            basis,
            dim,
            whitening_scales,
            epsilon,
            whitened,
        };
        let err = model.orthonormality_error();
        if err > ORTHONORMAL_TOL {
            return Err(PcaError::Invalid(format!("basis not orthonormal (error {err:e})")));
        }
        Ok(model)
    }

    pub fn source_dim(&self) -> usize {
        self.mean.len()
    }

    /// Retained dimension `m`.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// Full spectrum, descending.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// Row-major `m x n` matrix of retained eigenvectors.
    pub fn basis(&self) -> &[f64] {
        &self.basis
    }

    pub fn basis_row(&self, i: usize) -> &[f64] {
        let n = self.source_dim();
        &self.basis[i * n..(i + 1) * n]
    }

    pub fn whitening_scales(&self) -> &[f64] {
        &self.whitening_scales
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn is_whitened(&self) -> bool {
        self.whitened
    }

    /// Largest `|<w_i, w_j> - delta_ij|` over retained basis rows.
    pub fn orthonormality_error(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.dim {
            for j in i..self.dim {
                let dot: f64 = self.basis_row(i).iter().zip(self.basis_row(j)).map(|(a, b)| a * b).sum();
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((dot - target).abs());
            }
        }
        worst
    }

    /// Fraction of total variance held by the retained directions.
    pub fn retained_variance(&self) -> f64 {
        let total: f64 = self.eigenvalues.iter().sum();
        if total == 0.0 {
            return 0.0;
        }
        self.eigenvalues[..self.dim].iter().sum::<f64>() / total
    }

    /// Mean squared reconstruction error: the sum of discarded eigenvalues.
    pub fn reconstruction_error(&self) -> f64 {
        self.eigenvalues[self.dim..].iter().sum()
    }

    fn check_len(&self, len: usize, expected: usize) -> Result<(), PcaError> {
        if len != expected {
            return Err(PcaError::Dimension { expected, actual: len });
        }
        Ok(())
    }

    /// `W' (x - mean)`, rescaled per coordinate when the model whitens.
    pub fn project(&self, x: &[f64]) -> Result<Vec<f64>, PcaError> {
        self.check_len(x.len(), self.source_dim())?;
        Ok(self.project_unchecked(x))
    }

    pub(crate) fn project_unchecked(&self, x: &[f64]) -> Vec<f64> {
        let n = self.source_dim();
        let centered: Vec<f64> = x.iter().zip(&self.mean).map(|(a, m)| a - m).collect();
        (0..self.dim)
            .map(|i| {
                let row = &self.basis[i * n..(i + 1) * n];
                let y: f64 = row.iter().zip(&centered).map(|(w, c)| w * c).sum();
                if self.whitened {
                    y * self.whitening_scales[i]
                } else {
                    y
                }
            })
            .collect()
    }

    /// `W'^T y + mean`. Coordinates of a whitening model are unscaled first.
    pub fn reconstruct(&self, y: &[f64]) -> Result<Vec<f64>, PcaError> {
        self.check_len(y.len(), self.dim)?;
        let n = self.source_dim();
        let mut out = self.mean.clone();
        for (i, &yi) in y.iter().enumerate() {
            let coeff = if self.whitened { yi / self.whitening_scales[i] } else { yi };
            for (o, w) in out.iter_mut().zip(&self.basis[i * n..(i + 1) * n]) {
                *o += coeff * w;
            }
        }
        Ok(out)
    }

    /// Euclidean distance between whitened projections.
    pub fn whitened_distance(&self, x1: &[f64], x2: &[f64]) -> Result<f64, PcaError> {
        if !self.whitened {
            return Err(PcaError::Mode);
        }
        let y1 = self.project(x1)?;
        let y2 = self.project(x2)?;
        Ok(y1.iter().zip(&y2).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
    }
}

/// Fits a principal subspace to `samples`.
pub fn fit_pca<V: AsRef<[f64]>>(samples: &[V], retention: Retention, whiten: bool) -> Result<PcaModel, PcaError> {
    let (mean, cov) = compute_covariance(samples)?;
    let eig = eigendecompose(&cov)?;
    let lead = eig.values.first().copied().unwrap_or(0.0);
    let tol = NEGATIVE_EIGEN_TOL * lead.max(1.0);
    let mut eigenvalues = Vec::with_capacity(eig.values.len());
    for &l in &eig.values {
        if l < -tol {
            return Err(PcaError::Numerical(format!("covariance eigenvalue {l:e} is negative")));
        }
        eigenvalues.push(l.max(0.0));
    }
    let dim = select_dimension(&eigenvalues, retention)?;
    let epsilon = EPSILON_FACTOR * eigenvalues[0];
    let basis: Vec<f64> = eig.vectors[..dim].iter().flatten().copied().collect();
    let whitening_scales = eigenvalues[..dim].iter().map(|l| 1.0 / (l + epsilon).sqrt()).collect();
    PcaModel::from_parts(mean, eigenvalues, basis, dim, whitening_scales, epsilon, whiten)
}

/// Refits a subspace on the positive examples of a feedback round.
///
/// This goes beyond the initialization-time fit: it is only attempted when
/// at least `min_count` positives are available, and returns `Ok(None)`
/// otherwise. The retention rule is applied to the positives' own spectrum.
pub fn refit_on_positives<V: AsRef<[f64]>>(
    positives: &[V],
    min_count: usize,
    retention: Retention,
    whiten: bool,
) -> Result<Option<PcaModel>, PcaError> {
    if positives.len() < min_count.max(2) {
        return Ok(None);
    }
    fit_pca(positives, retention, whiten).map(Some)
}
