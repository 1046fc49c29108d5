//! Small dense linear-algebra helpers shared by the estimators.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Error, Result};

/// Diagonal jitter added on the single retry after a failed factorization.
pub const JITTER: f64 = 1e-10;

/// Smallest accepted squared Cholesky pivot of the unit-diagonal rescaled
/// matrix. Below this the matrix is treated as singular.
const MIN_PIVOT_RATIO: f64 = 1e-13;

/// Returns `(m + m^T) / 2`.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Largest absolute entry of `m - m^T`.
pub fn max_asymmetry(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows().min(m.ncols());
    let mut worst = 0.0_f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// Cholesky factorization of a symmetric positive-definite matrix `M`,
/// stored as `S M S = L L'` with `S = diag(M)^{-1/2}`.
#[derive(Debug, Clone)]
pub struct SpdFactor {
    chol: Cholesky<f64, Dyn>,
    scale: DVector<f64>,
    jittered: bool,
}

impl SpdFactor {
    /// Factorizes `m`. When `allow_jitter` is set and the first attempt fails,
    /// `JITTER * I` is added and the factorization is retried once.
    pub fn new(m: &DMatrix<f64>, allow_jitter: bool) -> Option<Self> {
        if let Some((chol, scale)) = equilibrated_cholesky(m) {
            return Some(Self {
                chol,
                scale,
                jittered: false,
            });
        }
        if !allow_jitter {
            return None;
        }
        let n = m.nrows();
        let shifted = m + DMatrix::<f64>::identity(n, n) * JITTER;
        equilibrated_cholesky(&shifted).map(|(chol, scale)| Self {
            chol,
            scale,
            jittered: true,
        })
    }

    /// Like [`SpdFactor::new`] but maps failure to [`Error::Singular`].
    pub fn require(m: &DMatrix<f64>, allow_jitter: bool, what: &str) -> Result<Self> {
        Self::new(m, allow_jitter).ok_or_else(|| Error::Singular(what.to_string()))
    }

    pub fn dim(&self) -> usize {
        self.scale.len()
    }

    /// Whether the retry with diagonal jitter was needed.
    pub fn jittered(&self) -> bool {
        self.jittered
    }

    pub fn solve_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        let mut x = self.chol.solve(&b.component_mul(&self.scale));
        x.component_mul_assign(&self.scale);
        x
    }

    pub fn solve_mat(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.scale_rows(self.chol.solve(&self.scale_rows(b.clone())))
    }

    /// Symmetrized inverse of the factored matrix.
    pub fn inverse(&self) -> DMatrix<f64> {
        let inv = self.chol.inverse();
        let s = &self.scale;
        symmetrize(&DMatrix::from_fn(inv.nrows(), inv.ncols(), |i, j| {
            s[i] * inv[(i, j)] * s[j]
        }))
    }

    fn scale_rows(&self, mut m: DMatrix<f64>) -> DMatrix<f64> {
        for (i, mut row) in m.row_iter_mut().enumerate() {
            row *= self.scale[i];
        }
        m
    }
}

fn equilibrated_cholesky(m: &DMatrix<f64>) -> Option<(Cholesky<f64, Dyn>, DVector<f64>)> {
    let n = m.nrows();
    if n == 0 || m.ncols() != n {
        return None;
    }
    let diag = m.diagonal();
    if diag.iter().any(|&d| !(d > 0.0 && d.is_finite())) {
        return None;
    }
    let scale = diag.map(|d| 1.0 / d.sqrt());
    let scaled = DMatrix::from_fn(n, n, |i, j| scale[i] * m[(i, j)] * scale[j]);
    let chol = Cholesky::new(scaled)?;
    let l = chol.l_dirty();
    let min_pivot = (0..n).map(|i| l[(i, i)] * l[(i, i)]).fold(f64::INFINITY, f64::min);
    if min_pivot < MIN_PIVOT_RATIO {
        return None;
    }
    Some((chol, scale))
}

/// Symmetric inverse square root `V diag(1/sqrt(ev)) V^T` of a symmetric
/// positive-definite matrix.
pub fn inv_sqrt_sym(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let eig = SymmetricEigen::new(symmetrize(m));
    let max_ev = eig.eigenvalues.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    let tol = max_ev.max(1.0) * 1e-14;
    if let Some(bad) = eig.eigenvalues.iter().find(|&&v| v <= tol) {
        return Err(Error::NotPsd(format!(
            "{what} has eigenvalue {bad:.3e}, cannot form inverse square root"
        )));
    }
    let scaled = DVector::from_iterator(
        eig.eigenvalues.len(),
        eig.eigenvalues.iter().map(|v| 1.0 / v.sqrt()),
    );
    let v = &eig.eigenvectors;
    let vs = DMatrix::from_fn(v.nrows(), v.ncols(), |i, j| v[(i, j)] * scaled[j]);
    Ok(symmetrize(&(vs * v.transpose())))
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(symmetrize(m))
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

pub(crate) fn check_square(m: &DMatrix<f64>, name: &str) -> Result<usize> {
    if m.nrows() != m.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "{name} must be square, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(m.nrows())
}
