//! Comparison estimators: the (weighted) Kalman filter in gain form and in
//! information form, and the epoch-local adaptive Lasso.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::estimator::descent::solve_from_anchor;
use crate::estimator::objective::SmoothPart;
use crate::estimator::step::{covariance_from_parts, predict_state, ridge_fallback_ols};
use crate::estimator::DescentConfig;
use crate::linalg::{self, SpdFactor};
use crate::model::{EpochData, ModelState, NoiseSpec, PredictedState, StateTransition};

/// `K = S X' (W + X S X' / tau*)^-1`, solved from the right without forming
/// the inverse.
pub fn kalman_gain(
    pred: &PredictedState,
    x: &DMatrix<f64>,
    w: &DMatrix<f64>,
    tau_star: f64,
) -> Result<DMatrix<f64>> {
    let (n, p) = x.shape();
    if pred.dim() != p || w.nrows() != n || w.ncols() != n {
        return Err(Error::DimensionMismatch(format!(
            "X is {n}x{p}, W is {}x{}, predicted state has dimension {}",
            w.nrows(),
            w.ncols(),
            pred.dim()
        )));
    }
    check_tau_star(tau_star)?;
    let sxt = &pred.sigma_pred * x.transpose();
    let inner = linalg::symmetrize(&(w + x * &sxt / tau_star));
    let factor = SpdFactor::require(&inner, true, "innovation covariance")?;
    // K = S X' M^-1 with M symmetric, so K' = M^-1 X S.
    Ok(factor.solve_mat(&sxt.transpose()).transpose())
}

/// Weighted Kalman update
/// `th = th_pred + K (y - X th_pred) / tau*`. The covariance is
/// `(I - K X) S_pred` at `tau* = 1`; other weights use the sparse-estimator
/// covariance with no L1 term.
pub fn kalman_step(
    prev: &ModelState,
    data: &EpochData,
    trans: &StateTransition,
    noise: &NoiseSpec,
    tau_star: f64,
) -> Result<ModelState> {
    check_tau_star(tau_star)?;
    check_state(prev, data)?;
    noise.check_rows(data.n())?;
    let pred = predict_state(prev, trans)?;
    let k = kalman_gain(&pred, &data.x, &noise.matrix(data.n()), tau_star)?;
    let innovation = &data.y - &data.x * &pred.theta_pred;
    let theta = &pred.theta_pred + &k * innovation / tau_star;
    let sigma = if tau_star == 1.0 {
        let p = prev.dim();
        let mut s = linalg::symmetrize(&((DMatrix::identity(p, p) - &k * &data.x) * &pred.sigma_pred));
        for i in 0..p {
            s[(i, i)] = s[(i, i)].max(0.0);
        }
        s
    } else {
        let tau = tau_star * data.p() as f64 / data.n() as f64;
        let smooth = SmoothPart::new(data, Some(&pred), noise, tau)?;
        covariance_from_parts(&smooth, &theta, &theta, 0.0, f64::MIN_POSITIVE)?
    };
    Ok(ModelState {
        theta,
        sigma,
        w2: noise.scale(),
        t: prev.t + 1,
    })
}

/// Information-form Kalman update (`tau* = 1`): only `p x p` systems are
/// factored. `th = A^-1 (X'W^-1 y + S^-1 th_pred)`, `Sigma = A^-1` with
/// `A = X'W^-1 X + S^-1`.
pub fn kalman_step_fast(
    prev: &ModelState,
    data: &EpochData,
    trans: &StateTransition,
    noise: &NoiseSpec,
) -> Result<ModelState> {
    check_state(prev, data)?;
    let pred = predict_state(prev, trans)?;
    let winv = noise.inverse(data.n())?;
    let wx = winv.apply_mat(&data.x);
    let prior = SpdFactor::require(&pred.sigma_pred, true, "predicted covariance")?;
    let sigma_inv = prior.inverse();
    let a = linalg::symmetrize(&(data.x.transpose() * &wx + &sigma_inv));
    let rhs = wx.transpose() * &data.y + &sigma_inv * &pred.theta_pred;
    let factor = SpdFactor::require(&a, true, "information matrix")?;
    Ok(ModelState {
        theta: factor.solve_vec(&rhs),
        sigma: factor.inverse(),
        w2: noise.scale(),
        t: prev.t + 1,
    })
}

/// Adaptive Lasso on one epoch alone:
/// `(1/2n) ||y - X th||^2 + (lambda/p) sum_i |th_i| / |th0_i|` with `th0` the
/// least-squares fit (ridge-stabilized when `X'X` is singular).
pub fn local_adaptive_lasso(
    data: &EpochData,
    lambda: f64,
    cfg: &DescentConfig,
) -> Result<DVector<f64>> {
    cfg.validate()?;
    if data.n() < 2 {
        return Err(Error::InvalidArgument(format!(
            "local Lasso needs at least 2 rows, got {}",
            data.n()
        )));
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "lambda must be non-negative, got {lambda}"
        )));
    }
    let smooth = SmoothPart::new(data, None, &NoiseSpec::Iid(1.0), 0.0)?;
    let anchor = ridge_fallback_ols(data)?;
    Ok(solve_from_anchor(&smooth, anchor, lambda, cfg).theta)
}

fn check_tau_star(tau_star: f64) -> Result<()> {
    if tau_star > 0.0 && tau_star.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "tau* must be positive, got {tau_star}"
        )))
    }
}

fn check_state(prev: &ModelState, data: &EpochData) -> Result<()> {
    if prev.dim() != data.p() || data.y.len() != data.n() {
        return Err(Error::DimensionMismatch(format!(
            "state has dimension {}, epoch is {}x{} with {} responses",
            prev.dim(),
            data.n(),
            data.p(),
            data.y.len()
        )));
    }
    Ok(())
}
