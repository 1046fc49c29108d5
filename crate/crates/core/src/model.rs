//! Domain types shared by the estimators, plus epoch validation and
//! per-epoch standardization.
//!
//! All sequential state (parameter estimates and covariances) lives in the
//! standardized coordinates of the epoch that produced it. [`Scaler`] maps raw
//! predictors into those coordinates for prediction.

use std::fmt;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{self, SpdFactor};

/// Absolute tolerance used for symmetry checks on covariance matrices.
pub const SYMMETRY_TOL: f64 = 1e-10;

/// One epoch of observations: `n` rows of `p` predictors and the response.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochData {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub t: usize,
}

impl EpochData {
    /// Builds an epoch without validation; see [`validate_epoch`].
    pub fn new(x: DMatrix<f64>, y: DVector<f64>, t: usize) -> Self {
        Self { x, y, t }
    }

    /// Builds an epoch and rejects it if [`validate_epoch`] reports anything.
    pub fn try_new(x: DMatrix<f64>, y: DVector<f64>, t: usize) -> Result<Self> {
        let data = Self::new(x, y, t);
        let report = validate_epoch(&data, data.p());
        if report.is_valid() {
            Ok(data)
        } else {
            Err(Error::InvalidArgument(report.to_string()))
        }
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    /// Copy of the epoch restricted to the given rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let x = self.x.select_rows(rows.iter());
        let y = DVector::from_iterator(rows.len(), rows.iter().map(|&i| self.y[i]));
        Self { x, y, t: self.t }
    }
}

/// One problem found by [`validate_epoch`].
#[derive(Debug, Clone, PartialEq)]
pub enum ValidationIssue {
    Empty { rows: usize, cols: usize },
    RowResponseMismatch { rows: usize, responses: usize },
    NonFiniteEntry { row: usize, col: usize },
    NonFiniteResponse { row: usize },
    ColumnCount { expected: usize, found: usize },
}

impl fmt::Display for ValidationIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Empty { rows, cols } => write!(f, "empty design: {rows}x{cols}"),
            Self::RowResponseMismatch { rows, responses } => write!(
                f,
                "row/response mismatch: X has {rows} rows, y has {responses} entries"
            ),
            Self::NonFiniteEntry { row, col } => write!(f, "non-finite entry at ({row},{col})"),
            Self::NonFiniteResponse { row } => write!(f, "non-finite response at {row}"),
            Self::ColumnCount { expected, found } => {
                write!(f, "column count: expected {expected}, found {found}")
            }
        }
    }
}

/// Report-style result of [`validate_epoch`]; empty iff the epoch is valid.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub issues: Vec<ValidationIssue>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.issues.is_empty()
    }

    pub fn contains(&self, needle: &str) -> bool {
        self.issues.iter().any(|i| i.to_string().contains(needle))
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.issues.iter().map(ToString::to_string).collect();
        f.write_str(&parts.join("; "))
    }
}

/// Lists dimension problems, non-finite entries and a column-count mismatch.
pub fn validate_epoch(data: &EpochData, expected_p: usize) -> ValidationReport {
    let mut issues = Vec::new();
    let (rows, cols) = data.x.shape();
    if rows == 0 || cols == 0 {
        issues.push(ValidationIssue::Empty { rows, cols });
    }
    if rows != data.y.len() {
        issues.push(ValidationIssue::RowResponseMismatch {
            rows,
            responses: data.y.len(),
        });
    }
    for row in 0..rows {
        for col in 0..cols {
            if !data.x[(row, col)].is_finite() {
                issues.push(ValidationIssue::NonFiniteEntry { row, col });
            }
        }
    }
    for (row, v) in data.y.iter().enumerate() {
        if !v.is_finite() {
            issues.push(ValidationIssue::NonFiniteResponse { row });
        }
    }
    if cols != expected_p {
        issues.push(ValidationIssue::ColumnCount {
            expected: expected_p,
            found: cols,
        });
    }
    ValidationReport { issues }
}

/// Column centering/scaling learned from one epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct Scaler {
    pub col_means: DVector<f64>,
    pub col_stds: DVector<f64>,
    pub y_mean: f64,
    /// Zero-variance columns; these map to all-zero columns.
    pub constant: Vec<bool>,
}

impl Scaler {
    /// Maps raw predictors into the standardized coordinates of this scaler.
    pub fn transform(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| {
            if self.constant[j] {
                0.0
            } else {
                (x[(i, j)] - self.col_means[j]) / self.col_stds[j]
            }
        })
    }

    /// Response prediction on raw predictors for a standardized-coordinate `theta`.
    pub fn predict(&self, theta: &DVector<f64>, x_raw: &DMatrix<f64>) -> DVector<f64> {
        let mut yhat = self.transform(x_raw) * theta;
        yhat.add_scalar_mut(self.y_mean);
        yhat
    }

    pub fn constant_columns(&self) -> Vec<usize> {
        self.constant
            .iter()
            .enumerate()
            .filter_map(|(j, &c)| c.then_some(j))
            .collect()
    }
}

/// Centers and scales every column to mean 0 and sample variance 1 (n-1
/// denominator) and centers the response. Constant columns become zero.
pub fn standardize(data: &EpochData) -> Result<(EpochData, Scaler)> {
    let n = data.n();
    if n < 2 {
        return Err(Error::InsufficientRows(n));
    }
    if data.y.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "X has {n} rows, y has {} entries",
            data.y.len()
        )));
    }
    let p = data.p();
    let mut col_means = DVector::zeros(p);
    let mut col_stds = DVector::zeros(p);
    let mut constant = vec![false; p];
    for j in 0..p {
        let col = data.x.column(j);
        let mean = col.mean();
        let ss: f64 = col.iter().map(|v| (v - mean) * (v - mean)).sum();
        let sd = (ss / (n - 1) as f64).sqrt();
        col_means[j] = mean;
        col_stds[j] = sd;
        constant[j] = sd <= 1e-12 * mean.abs().max(1.0);
    }
    let y_mean = data.y.mean();
    let scaler = Scaler {
        col_means,
        col_stds,
        y_mean,
        constant,
    };
    let x = scaler.transform(&data.x);
    let y = data.y.add_scalar(-y_mean);
    Ok((EpochData { x, y, t: data.t }, scaler))
}

/// Noiseless mean response `X theta`.
pub fn predict_response(theta: &DVector<f64>, x: &DMatrix<f64>) -> Result<DVector<f64>> {
    if x.ncols() != theta.len() {
        return Err(Error::DimensionMismatch(format!(
            "X has {} columns, theta has {} entries",
            x.ncols(),
            theta.len()
        )));
    }
    Ok(x * theta)
}

/// State evolution `theta_t = F theta_{t-1} + nu`, `nu ~ N(0, Q)`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateTransition {
    pub f: DMatrix<f64>,
    pub q: DMatrix<f64>,
}

impl StateTransition {
    /// Validates shapes and symmetry of `q`; the stored `q` is symmetrized.
    pub fn new(f: DMatrix<f64>, q: DMatrix<f64>) -> Result<Self> {
        let p = linalg::check_square(&f, "F")?;
        let pq = linalg::check_square(&q, "Q")?;
        if p != pq {
            return Err(Error::DimensionMismatch(format!(
                "F is {p}x{p} but Q is {pq}x{pq}"
            )));
        }
        let asym = linalg::max_asymmetry(&q);
        if asym > SYMMETRY_TOL {
            return Err(Error::NotPsd(format!("Q asymmetric by {asym:.3e}")));
        }
        if q.diagonal().iter().any(|&v| v < 0.0) {
            return Err(Error::NotPsd("Q has a negative diagonal entry".into()));
        }
        if p <= 200 {
            let min_ev = linalg::min_eigenvalue(&q);
            if min_ev < -SYMMETRY_TOL * q.amax().max(1.0) {
                return Err(Error::NotPsd(format!("Q has eigenvalue {min_ev:.3e}")));
            }
        }
        Ok(Self {
            f,
            q: linalg::symmetrize(&q),
        })
    }

    /// `F = I`, `Q = q^2 I`.
    pub fn random_walk(p: usize, q: f64) -> Self {
        Self {
            f: DMatrix::identity(p, p),
            q: DMatrix::identity(p, p) * (q * q),
        }
    }

    pub fn dim(&self) -> usize {
        self.f.nrows()
    }
}

/// Response-noise covariance `W`.
#[derive(Debug, Clone, PartialEq)]
pub enum NoiseSpec {
    /// `W = w2 * I`.
    Iid(f64),
    /// Full `n x n` covariance.
    Full(DMatrix<f64>),
}

impl NoiseSpec {
    pub fn iid(w2: f64) -> Result<Self> {
        if !(w2 > 0.0 && w2.is_finite()) {
            return Err(Error::InvalidArgument(format!("w2 must be positive, got {w2}")));
        }
        Ok(Self::Iid(w2))
    }

    pub fn full(w: DMatrix<f64>) -> Result<Self> {
        linalg::check_square(&w, "W")?;
        let asym = linalg::max_asymmetry(&w);
        if asym > SYMMETRY_TOL {
            return Err(Error::NotPsd(format!("W asymmetric by {asym:.3e}")));
        }
        Ok(Self::Full(linalg::symmetrize(&w)))
    }

    /// Dense `W` for `n` observations.
    pub fn matrix(&self, n: usize) -> DMatrix<f64> {
        match self {
            Self::Iid(w2) => DMatrix::identity(n, n) * *w2,
            Self::Full(w) => w.clone(),
        }
    }

    /// Representative scalar variance: `w2`, or the mean diagonal of `W`.
    pub fn scale(&self) -> f64 {
        match self {
            Self::Iid(w2) => *w2,
            Self::Full(w) => w.diagonal().mean(),
        }
    }

    pub(crate) fn check_rows(&self, n: usize) -> Result<()> {
        match self {
            Self::Iid(w2) if !(*w2 > 0.0) => {
                Err(Error::InvalidArgument(format!("w2 must be positive, got {w2}")))
            }
            Self::Full(w) if w.nrows() != n || w.ncols() != n => Err(Error::DimensionMismatch(
                format!("W is {}x{} but the epoch has {n} rows", w.nrows(), w.ncols()),
            )),
            _ => Ok(()),
        }
    }

    /// Prepares `W^{-1}` for repeated application.
    pub(crate) fn inverse(&self, n: usize) -> Result<NoiseInverse> {
        self.check_rows(n)?;
        Ok(match self {
            Self::Iid(w2) => NoiseInverse::Iid(1.0 / w2),
            Self::Full(w) => NoiseInverse::Full(SpdFactor::require(w, true, "W")?),
        })
    }
}

/// Factored `W^{-1}`.
#[derive(Debug, Clone)]
pub(crate) enum NoiseInverse {
    Iid(f64),
    Full(SpdFactor),
}

impl NoiseInverse {
    pub(crate) fn apply_mat(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        match self {
            Self::Iid(inv) => m * *inv,
            Self::Full(f) => f.solve_mat(m),
        }
    }

    /// `r^T W^{-1} r`.
    pub(crate) fn quad(&self, r: &DVector<f64>) -> f64 {
        match self {
            Self::Iid(inv) => r.norm_squared() * inv,
            Self::Full(f) => r.dot(&f.solve_vec(r)),
        }
    }
}

/// Parameter estimate and covariance after an epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub theta: DVector<f64>,
    pub sigma: DMatrix<f64>,
    pub w2: f64,
    pub t: usize,
}

impl ModelState {
    /// Validates the covariance and stores its symmetrized form.
    pub fn new(theta: DVector<f64>, sigma: DMatrix<f64>, w2: f64, t: usize) -> Result<Self> {
        let p = linalg::check_square(&sigma, "sigma")?;
        if p != theta.len() {
            return Err(Error::DimensionMismatch(format!(
                "theta has {} entries, sigma is {p}x{p}",
                theta.len()
            )));
        }
        let asym = linalg::max_asymmetry(&sigma);
        if asym > SYMMETRY_TOL * sigma.amax().max(1.0) {
            return Err(Error::NotPsd(format!("sigma asymmetric by {asym:.3e}")));
        }
        if sigma.diagonal().iter().any(|&v| v < 0.0) {
            return Err(Error::NotPsd("sigma has a negative diagonal entry".into()));
        }
        if !(w2 > 0.0 && w2.is_finite()) {
            return Err(Error::InvalidArgument(format!("w2 must be positive, got {w2}")));
        }
        Ok(Self {
            theta,
            sigma: linalg::symmetrize(&sigma),
            w2,
            t,
        })
    }

    pub fn dim(&self) -> usize {
        self.theta.len()
    }
}

/// One-step-ahead state prediction `(F theta, F Sigma F^T + Q)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictedState {
    pub theta_pred: DVector<f64>,
    pub sigma_pred: DMatrix<f64>,
}

impl PredictedState {
    pub fn new(theta_pred: DVector<f64>, sigma_pred: DMatrix<f64>) -> Result<Self> {
        let p = linalg::check_square(&sigma_pred, "sigma_pred")?;
        if p != theta_pred.len() {
            return Err(Error::DimensionMismatch(format!(
                "theta_pred has {} entries, sigma_pred is {p}x{p}",
                theta_pred.len()
            )));
        }
        Ok(Self {
            theta_pred,
            sigma_pred: linalg::symmetrize(&sigma_pred),
        })
    }

    pub fn dim(&self) -> usize {
        self.theta_pred.len()
    }
}

/// Regularization pair: L1 weight `lambda` and inertia weight `tau`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hyperparams {
    pub lambda: f64,
    pub tau: f64,
}

impl Hyperparams {
    pub fn new(lambda: f64, tau: f64) -> Result<Self> {
        if !(lambda >= 0.0 && lambda.is_finite()) || !(tau >= 0.0 && tau.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "lambda and tau must be finite and non-negative, got ({lambda}, {tau})"
            )));
        }
        Ok(Self { lambda, tau })
    }

    /// Epoch-scaled inertia weight `tau * n / p`.
    pub fn tau_star(&self, n: usize, p: usize) -> f64 {
        self.tau * n as f64 / p as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn epoch(rows: usize, cols: usize, vals: &[f64], y: &[f64]) -> EpochData {
        EpochData::new(
            DMatrix::from_row_slice(rows, cols, vals),
            DVector::from_row_slice(y),
            0,
        )
    }

    #[test]
    fn valid_epoch_has_empty_report() {
        let d = epoch(3, 2, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0], &[1.0, 2.0, 3.0]);
        assert!(validate_epoch(&d, 2).is_valid());
    }

    #[test]
    fn row_response_mismatch_reported() {
        let d = epoch(3, 2, &[1.0; 6], &[1.0, 2.0, 3.0, 4.0]);
        let r = validate_epoch(&d, 2);
        assert!(r.contains("row/response mismatch"), "{r}");
    }

    #[test]
    fn non_finite_entry_reported_with_position() {
        let d = epoch(3, 2, &[1.0, 2.0, 3.0, f64::NAN, 5.0, 6.0], &[1.0, 2.0, 3.0]);
        let r = validate_epoch(&d, 2);
        assert!(r.contains("non-finite entry at (1,1)"), "{r}");
        assert!(validate_epoch(&epoch(3, 2, &[1.0; 6], &[1.0; 3]), 3).contains("column count"));
    }

    #[test]
    fn standardize_examples() {
        let d = epoch(3, 2, &[1.0, 5.0, 2.0, 5.0, 3.0, 5.0], &[2.0, 4.0, 6.0]);
        let (s, scaler) = standardize(&d).unwrap();
        assert_eq!(s.x.column(0).as_slice(), &[-1.0, 0.0, 1.0]);
        assert_eq!(s.x.column(1).as_slice(), &[0.0, 0.0, 0.0]);
        assert_eq!(scaler.constant, vec![false, true]);
        assert_eq!(s.y.as_slice(), &[-2.0, 0.0, 2.0]);
        assert_eq!(scaler.y_mean, 4.0);
    }

    #[test]
    fn standardize_needs_two_rows() {
        let d = epoch(1, 2, &[1.0, 2.0], &[1.0]);
        let err = standardize(&d).unwrap_err();
        assert!(err.to_string().contains("insufficient rows to standardize"));
    }

    #[test]
    fn predict_response_examples() {
        let i2 = DMatrix::identity(2, 2);
        let ones = DVector::from_vec(vec![1.0, 1.0]);
        assert_eq!(predict_response(&ones, &i2).unwrap(), ones);
        assert_eq!(
            predict_response(&DVector::zeros(2), &i2).unwrap(),
            DVector::zeros(2)
        );
        let x = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 3.0]);
        let th = DVector::from_vec(vec![2.0, -1.0]);
        assert_eq!(predict_response(&th, &x).unwrap().as_slice(), &[1.0, -3.0]);
        assert!(predict_response(&DVector::zeros(3), &x).is_err());
    }

    #[test]
    fn transition_checks() {
        let f = DMatrix::identity(2, 2);
        let q = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(StateTransition::new(f.clone(), q).is_err());
        assert!(StateTransition::new(f.clone(), DMatrix::identity(3, 3)).is_err());
        let indefinite = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(StateTransition::new(f, indefinite).is_err());
    }

    #[test]
    fn hyperparams_validation() {
        assert!(Hyperparams::new(-1.0, 0.0).is_err());
        let hp = Hyperparams::new(0.1, 2.0).unwrap();
        assert_eq!(hp.tau_star(50, 10), 10.0);
    }

    #[test]
    fn full_noise_dimension_checked() {
        let w = NoiseSpec::full(DMatrix::identity(3, 3)).unwrap();
        assert!(w.inverse(4).is_err());
        assert!(NoiseSpec::iid(0.0).is_err());
    }
}
