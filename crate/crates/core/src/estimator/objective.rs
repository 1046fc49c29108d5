//! Smooth part of the IRS loss, its gradient, the least-squares anchor and
//! the augmented-Lasso rewriting of the problem.

use nalgebra::{DMatrix, DVector};

use super::DEFAULT_ADAPT_FLOOR;
use crate::error::{Error, Result};
use crate::linalg::{self, SpdFactor};
use crate::model::{EpochData, Hyperparams, NoiseInverse, NoiseSpec, PredictedState};

/// Precomputed pieces of the smooth loss
/// `f(th) = (1/2n) r' W^-1 r + (tau/2p) d' Sigma_pred^-1 d`.
#[derive(Debug, Clone)]
pub(crate) struct SmoothPart {
    x: DMatrix<f64>,
    y: DVector<f64>,
    winv: NoiseInverse,
    /// `X' W^-1 X`.
    pub(crate) xtwx: DMatrix<f64>,
    /// `X' W^-1 y`.
    pub(crate) xtwy: DVector<f64>,
    n: usize,
    p: usize,
    tau: f64,
    theta_pred: DVector<f64>,
    /// `Sigma_pred^-1`; absent when `tau == 0`.
    pub(crate) sigma_inv: Option<DMatrix<f64>>,
}

impl SmoothPart {
    /// Inertial problem for one epoch. `pred` may be omitted only when `tau == 0`.
    pub(crate) fn new(
        data: &EpochData,
        pred: Option<&PredictedState>,
        noise: &NoiseSpec,
        tau: f64,
    ) -> Result<Self> {
        let (n, p) = data.x.shape();
        if n == 0 || p == 0 {
            return Err(Error::DimensionMismatch(format!("empty design {n}x{p}")));
        }
        if data.y.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "X has {n} rows, y has {} entries",
                data.y.len()
            )));
        }
        if !(tau >= 0.0 && tau.is_finite()) {
            return Err(Error::InvalidArgument(format!("tau must be non-negative, got {tau}")));
        }
        let theta_pred = match pred {
            Some(pr) => {
                if pr.dim() != p {
                    return Err(Error::DimensionMismatch(format!(
                        "predicted state has dimension {}, data has {p} columns",
                        pr.dim()
                    )));
                }
                pr.theta_pred.clone()
            }
            None => DVector::zeros(p),
        };
        let sigma_inv = if tau > 0.0 {
            let pr = pred.ok_or_else(|| {
                Error::InvalidArgument("a predicted state is required when tau > 0".into())
            })?;
            Some(SpdFactor::require(&pr.sigma_pred, true, "predicted covariance")?.inverse())
        } else {
            None
        };
        let winv = noise.inverse(n)?;
        let wx = winv.apply_mat(&data.x);
        let xtwx = linalg::symmetrize(&(data.x.transpose() * &wx));
        let xtwy = wx.transpose() * &data.y;
        Ok(Self {
            x: data.x.clone(),
            y: data.y.clone(),
            winv,
            xtwx,
            xtwy,
            n,
            p,
            tau,
            theta_pred,
            sigma_inv,
        })
    }

    pub(crate) fn dim(&self) -> usize {
        self.p
    }

    /// `tau * n / p`.
    pub(crate) fn tau_star(&self) -> f64 {
        self.tau * self.n as f64 / self.p as f64
    }

    /// Residual term and inertia term, each with its normalization.
    pub(crate) fn parts(&self, theta: &DVector<f64>) -> (f64, f64) {
        let r = &self.y - &self.x * theta;
        let fit = self.winv.quad(&r) / (2.0 * self.n as f64);
        let inertia = match &self.sigma_inv {
            Some(si) => {
                let d = theta - &self.theta_pred;
                self.tau / (2.0 * self.p as f64) * d.dot(&(si * &d))
            }
            None => 0.0,
        };
        (fit, inertia)
    }

    pub(crate) fn value(&self, theta: &DVector<f64>) -> f64 {
        let (a, b) = self.parts(theta);
        a + b
    }

    pub(crate) fn gradient(&self, theta: &DVector<f64>) -> DVector<f64> {
        let mut g = (&self.xtwx * theta - &self.xtwy) / self.n as f64;
        if let Some(si) = &self.sigma_inv {
            g += si * (theta - &self.theta_pred) * (self.tau / self.p as f64);
        }
        g
    }

    /// The inertia-regularized least-squares anchor
    /// `(X'W^-1 X + tau* S^-1)^-1 (X'W^-1 y + tau* S^-1 th_pred)`.
    pub(crate) fn anchor(&self) -> Result<DVector<f64>> {
        let ts = self.tau_star();
        let (a, b) = match &self.sigma_inv {
            Some(si) => (
                &self.xtwx + si * ts,
                &self.xtwy + si * &self.theta_pred * ts,
            ),
            None => (self.xtwx.clone(), self.xtwy.clone()),
        };
        // With tau > 0 the system is positive definite in exact arithmetic, so a
        // failed factorization is roundoff and the jitter retry applies.
        let factor = SpdFactor::new(&a, self.sigma_inv.is_some())
            .ok_or(Error::InertialOlsSingular)?;
        Ok(factor.solve_vec(&b))
    }
}

/// Per-coordinate L1 weights `lambda / (p * max(|th*_i|, floor))`, and the
/// coordinates pinned to zero because `|th*_i| < floor`.
pub(crate) fn adaptive_weights(
    lambda: f64,
    theta_star: &DVector<f64>,
    floor: f64,
) -> (Vec<f64>, Vec<bool>) {
    let p = theta_star.len() as f64;
    theta_star
        .iter()
        .map(|&a| (lambda / (p * a.abs().max(floor)), a.abs() < floor))
        .unzip()
}

pub(crate) fn l1_term(theta: &DVector<f64>, weights: &[f64]) -> f64 {
    theta.iter().zip(weights).map(|(t, w)| w * t.abs()).sum()
}

/// The three terms of the IRS loss at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParts {
    /// `(1/2n) (y - X th)' W^-1 (y - X th)`.
    pub fit: f64,
    /// `(tau/2p) (th - th_pred)' Sigma_pred^-1 (th - th_pred)`.
    pub inertia: f64,
    /// `(lambda/p) sum_i |th_i| / max(|th*_i|, floor)`.
    pub selection: f64,
}

impl LossParts {
    pub fn total(&self) -> f64 {
        self.fit + self.inertia + self.selection
    }
}

/// Least-squares anchor `th*` with inertia regularization only.
pub fn inertial_ols(
    data: &EpochData,
    pred: &PredictedState,
    noise: &NoiseSpec,
    tau: f64,
) -> Result<DVector<f64>> {
    SmoothPart::new(data, Some(pred), noise, tau)?.anchor()
}

/// Gradient of the smooth part of the loss.
pub fn loss_gradient(
    theta: &DVector<f64>,
    data: &EpochData,
    pred: &PredictedState,
    noise: &NoiseSpec,
    tau: f64,
) -> Result<DVector<f64>> {
    let smooth = SmoothPart::new(data, Some(pred), noise, tau)?;
    check_len(theta, smooth.dim())?;
    Ok(smooth.gradient(theta))
}

/// Each term of the loss, using `theta_star` for the adaptive L1 weights.
pub fn loss_parts(
    theta: &DVector<f64>,
    data: &EpochData,
    pred: &PredictedState,
    noise: &NoiseSpec,
    hp: &Hyperparams,
    theta_star: &DVector<f64>,
) -> Result<LossParts> {
    let smooth = SmoothPart::new(data, Some(pred), noise, hp.tau)?;
    check_len(theta, smooth.dim())?;
    check_len(theta_star, smooth.dim())?;
    let (fit, inertia) = smooth.parts(theta);
    let (weights, _) = adaptive_weights(hp.lambda, theta_star, DEFAULT_ADAPT_FLOOR);
    Ok(LossParts {
        fit,
        inertia,
        selection: l1_term(theta, &weights),
    })
}

/// Full IRS objective.
pub fn objective(
    theta: &DVector<f64>,
    data: &EpochData,
    pred: &PredictedState,
    noise: &NoiseSpec,
    hp: &Hyperparams,
    theta_star: &DVector<f64>,
) -> Result<f64> {
    loss_parts(theta, data, pred, noise, hp, theta_star).map(|p| p.total())
}

/// Stacked design and response whose plain residual sum of squares equals the
/// smooth part of the loss.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedData {
    pub x_tilde: DMatrix<f64>,
    pub y_tilde: DVector<f64>,
}

impl AugmentedData {
    /// `(y~ - X~ th)' (y~ - X~ th)`.
    pub fn rss(&self, theta: &DVector<f64>) -> f64 {
        (&self.y_tilde - &self.x_tilde * theta).norm_squared()
    }
}

/// Builds `X~ = [W^-1/2 X / sqrt(2n); sqrt(tau/2p) S^-1/2]` and the matching
/// `y~ = [W^-1/2 y / sqrt(2n); sqrt(tau/2p) S^-1/2 th_pred]`. With `tau == 0`
/// the lower block is zero.
pub fn augment_data(
    data: &EpochData,
    pred: &PredictedState,
    noise: &NoiseSpec,
    tau: f64,
) -> Result<AugmentedData> {
    let (n, p) = data.x.shape();
    if data.y.len() != n || pred.dim() != p {
        return Err(Error::DimensionMismatch(format!(
            "X is {n}x{p}, y has {} entries, predicted state has dimension {}",
            data.y.len(),
            pred.dim()
        )));
    }
    if !(tau >= 0.0) {
        return Err(Error::InvalidArgument(format!("tau must be non-negative, got {tau}")));
    }
    noise.check_rows(n)?;
    let top = 1.0 / (2.0 * n as f64).sqrt();
    let (wx, wy) = match noise {
        NoiseSpec::Iid(w2) => {
            let s = top / w2.sqrt();
            (&data.x * s, &data.y * s)
        }
        NoiseSpec::Full(w) => {
            let r = linalg::inv_sqrt_sym(w, "W")? * top;
            (&r * &data.x, &r * &data.y)
        }
    };
    let (sx, sy) = if tau > 0.0 {
        let bottom = (tau / (2.0 * p as f64)).sqrt();
        let r = linalg::inv_sqrt_sym(&pred.sigma_pred, "predicted covariance")? * bottom;
        let sy = &r * &pred.theta_pred;
        (r, sy)
    } else {
        (DMatrix::zeros(p, p), DVector::zeros(p))
    };
    let mut x_tilde = DMatrix::zeros(n + p, p);
    x_tilde.rows_mut(0, n).copy_from(&wx);
    x_tilde.rows_mut(n, p).copy_from(&sx);
    let mut y_tilde = DVector::zeros(n + p);
    y_tilde.rows_mut(0, n).copy_from(&wy);
    y_tilde.rows_mut(n, p).copy_from(&sy);
    Ok(AugmentedData { x_tilde, y_tilde })
}

fn check_len(v: &DVector<f64>, p: usize) -> Result<()> {
    if v.len() != p {
        return Err(Error::DimensionMismatch(format!(
            "vector has {} entries, expected {p}",
            v.len()
        )));
    }
    Ok(())
}
