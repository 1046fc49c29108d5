//! Per-epoch recursion: state prediction, noise estimate, sparse update and
//! the approximate covariance of the result.

use nalgebra::{DMatrix, DVector};

use super::descent::{solve_from_anchor, DescentOutcome};
use super::objective::SmoothPart;
use super::{DescentConfig, DEFAULT_ADAPT_FLOOR, W2_FLOOR};
use crate::error::{Error, Result};
use crate::linalg::{self, SpdFactor};
use crate::model::{EpochData, Hyperparams, ModelState, NoiseSpec, PredictedState, StateTransition};

/// Ridge added to `X'X` when the unregularized normal equations are singular.
pub const ANCHOR_RIDGE: f64 = 1e-6;

/// `(F th, F Sigma F' + Q)`.
pub fn predict_state(prev: &ModelState, trans: &StateTransition) -> Result<PredictedState> {
    let p = prev.dim();
    if trans.dim() != p || trans.q.nrows() != p || prev.sigma.nrows() != p {
        return Err(Error::DimensionMismatch(format!(
            "state has dimension {p}, transition has dimension {}",
            trans.dim()
        )));
    }
    let theta_pred = &trans.f * &prev.theta;
    let sigma_pred = &trans.f * &prev.sigma * trans.f.transpose() + &trans.q;
    PredictedState::new(theta_pred, sigma_pred)
}

/// Innovation variance `(y - X th)'(y - X th) / (n - 1)`, clamped below at
/// [`W2_FLOOR`].
pub fn innovation_variance(data: &EpochData, theta: &DVector<f64>) -> Result<f64> {
    let n = data.n();
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "noise estimate needs at least 2 rows, got {n}"
        )));
    }
    if theta.len() != data.p() {
        return Err(Error::DimensionMismatch(format!(
            "theta has {} entries, data has {} columns",
            theta.len(),
            data.p()
        )));
    }
    let rss = (&data.y - &data.x * theta).norm_squared();
    Ok((rss / (n - 1) as f64).max(W2_FLOOR))
}

/// Approximate covariance of a sparse estimate:
/// `A^-1 (X'W^-1 X + tau*^2 S^-1) A^-1` with
/// `A = X'W^-1 X + lambda D^-1 + tau* S^-1` and
/// `D_i = |th_i| |th*_i|` for selected coordinates, `|th*_i|^2` otherwise.
pub fn covariance_estimate(
    theta_hat: &DVector<f64>,
    theta_star: &DVector<f64>,
    data: &EpochData,
    pred: &PredictedState,
    noise: &NoiseSpec,
    hp: &Hyperparams,
) -> Result<DMatrix<f64>> {
    let smooth = SmoothPart::new(data, Some(pred), noise, hp.tau)?;
    covariance_from_parts(&smooth, theta_hat, theta_star, hp.lambda, DEFAULT_ADAPT_FLOOR)
}

pub(crate) fn covariance_from_parts(
    smooth: &SmoothPart,
    theta_hat: &DVector<f64>,
    theta_star: &DVector<f64>,
    lambda: f64,
    floor: f64,
) -> Result<DMatrix<f64>> {
    let p = smooth.dim();
    if theta_hat.len() != p || theta_star.len() != p {
        return Err(Error::DimensionMismatch(format!(
            "estimates have {} and {} entries, expected {p}",
            theta_hat.len(),
            theta_star.len()
        )));
    }
    let ts = smooth.tau_star();
    let mut a = smooth.xtwx.clone();
    let mut m = smooth.xtwx.clone();
    if let Some(si) = &smooth.sigma_inv {
        a += si * ts;
        m += si * (ts * ts);
    }
    if lambda > 0.0 {
        for i in 0..p {
            let anchor = theta_star[i].abs().max(floor);
            let d = if theta_hat[i] != 0.0 {
                theta_hat[i].abs() * anchor
            } else {
                anchor * anchor
            };
            a[(i, i)] += lambda / d;
        }
    }
    let factor = SpdFactor::require(&a, smooth.sigma_inv.is_some(), "covariance system A")?;
    let left = factor.solve_mat(&m);
    let mut sigma = linalg::symmetrize(&factor.solve_mat(&left.transpose()));
    for i in 0..p {
        sigma[(i, i)] = sigma[(i, i)].max(0.0);
    }
    Ok(sigma)
}

/// Full diagnostics of one sequential step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub state: ModelState,
    pub predicted: PredictedState,
    pub descent: DescentOutcome,
}

/// One IRS epoch: predict the state, estimate `w2` from the innovation,
/// solve the sparse problem and approximate the new covariance.
pub fn irs_step(
    prev: &ModelState,
    data: &EpochData,
    trans: &StateTransition,
    hp: &Hyperparams,
    cfg: &DescentConfig,
) -> Result<ModelState> {
    irs_step_detailed(prev, data, trans, hp, cfg).map(|r| r.state)
}

pub fn irs_step_detailed(
    prev: &ModelState,
    data: &EpochData,
    trans: &StateTransition,
    hp: &Hyperparams,
    cfg: &DescentConfig,
) -> Result<StepReport> {
    cfg.validate()?;
    if prev.dim() != data.p() {
        return Err(Error::DimensionMismatch(format!(
            "state has dimension {}, epoch has {} columns; expand the model first",
            prev.dim(),
            data.p()
        )));
    }
    let predicted = predict_state(prev, trans)?;
    let w2 = innovation_variance(data, &predicted.theta_pred)?;
    let noise = NoiseSpec::Iid(w2);
    let smooth = SmoothPart::new(data, Some(&predicted), &noise, hp.tau)?;
    let theta_star = smooth.anchor()?;
    let descent = solve_from_anchor(&smooth, theta_star, hp.lambda, cfg);
    let sigma = covariance_from_parts(
        &smooth,
        &descent.theta,
        &descent.theta_star,
        hp.lambda,
        cfg.adapt_floor,
    )?;
    let state = ModelState {
        theta: descent.theta.clone(),
        sigma,
        w2,
        t: prev.t + 1,
    };
    Ok(StepReport {
        state,
        predicted,
        descent,
    })
}

/// Starting state: least squares on the first epoch (ridge-stabilized when
/// singular), residual variance for `w2`, identity covariance, `t = 0`.
pub fn initial_state(data: &EpochData) -> Result<ModelState> {
    let theta = ridge_fallback_ols(data)?;
    let w2 = innovation_variance(data, &theta)?;
    let p = data.p();
    Ok(ModelState {
        theta,
        sigma: DMatrix::identity(p, p),
        w2,
        t: 0,
    })
}

/// `(X'X)^-1 X'y`, or `(X'X + ANCHOR_RIDGE I)^-1 X'y` when `X'X` is singular.
pub(crate) fn ridge_fallback_ols(data: &EpochData) -> Result<DVector<f64>> {
    let (n, p) = data.x.shape();
    if data.y.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "X has {n} rows, y has {} entries",
            data.y.len()
        )));
    }
    let xtx = linalg::symmetrize(&(data.x.transpose() * &data.x));
    let xty = data.x.transpose() * &data.y;
    if let Some(f) = SpdFactor::new(&xtx, false) {
        return Ok(f.solve_vec(&xty));
    }
    let ridged = xtx + DMatrix::identity(p, p) * ANCHOR_RIDGE;
    Ok(SpdFactor::require(&ridged, true, "ridge-stabilized normal equations")?.solve_vec(&xty))
}

/// Adds `n_new` uncorrelated coordinates with estimate 0 and variance
/// `prior_variance`; existing entries are unchanged.
pub fn expand_model(state: &ModelState, n_new: usize, prior_variance: f64) -> Result<ModelState> {
    if n_new == 0 {
        return Err(Error::InvalidArgument("n_new must be at least 1".into()));
    }
    if !(prior_variance > 0.0 && prior_variance.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "prior_variance must be positive, got {prior_variance}"
        )));
    }
    let p = state.dim();
    let q = p + n_new;
    let mut theta = DVector::zeros(q);
    theta.rows_mut(0, p).copy_from(&state.theta);
    let mut sigma = DMatrix::zeros(q, q);
    sigma.view_mut((0, 0), (p, p)).copy_from(&state.sigma);
    for i in p..q {
        sigma[(i, i)] = prior_variance;
    }
    Ok(ModelState {
        theta,
        sigma,
        w2: state.w2,
        t: state.t,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state(theta: &[f64], sigma: DMatrix<f64>) -> ModelState {
        ModelState::new(DVector::from_row_slice(theta), sigma, 1.0, 0).unwrap()
    }

    #[test]
    fn identity_transition() {
        let prev = state(&[1.0, 2.0], DMatrix::identity(2, 2));
        let pr = predict_state(&prev, &StateTransition::random_walk(2, 0.0)).unwrap();
        assert_eq!(pr.theta_pred.as_slice(), &[1.0, 2.0]);
        assert_eq!(pr.sigma_pred, DMatrix::identity(2, 2));
    }

    #[test]
    fn additive_process_noise() {
        let prev = state(&[1.0, 2.0], DMatrix::identity(2, 2));
        let pr = predict_state(&prev, &StateTransition::random_walk(2, 0.2)).unwrap();
        assert!((pr.sigma_pred - DMatrix::identity(2, 2) * 1.04).amax() < 1e-15);
    }

    #[test]
    fn scalar_transition() {
        let prev = state(&[3.0], DMatrix::from_element(1, 1, 2.0));
        let trans = StateTransition::new(
            DMatrix::from_element(1, 1, 2.0),
            DMatrix::from_element(1, 1, 1.0),
        )
        .unwrap();
        let pr = predict_state(&prev, &trans).unwrap();
        assert_eq!(pr.theta_pred[0], 6.0);
        assert_eq!(pr.sigma_pred[(0, 0)], 9.0);
    }

    #[test]
    fn expand_adds_uninformative_coordinate() {
        let prev = state(&[1.0, -2.0], DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 2.0]));
        let grown = expand_model(&prev, 1, 100.0).unwrap();
        assert_eq!(grown.dim(), 3);
        assert_eq!(grown.theta[2], 0.0);
        assert_eq!(grown.sigma[(2, 2)], 100.0);
        assert_eq!(grown.sigma[(0, 2)], 0.0);
        assert_eq!(grown.sigma[(1, 2)], 0.0);
        assert_eq!(grown.sigma.view((0, 0), (2, 2)), prev.sigma.view((0, 0), (2, 2)));
        assert!(expand_model(&prev, 0, 100.0).is_err());
    }

    #[test]
    fn no_information_keeps_prior_covariance() {
        // X = 0, lambda = 0, tau* = 1: A = S^-1 so Sigma_t = S.
        let data = EpochData::new(DMatrix::zeros(4, 2), DVector::from_vec(vec![1.0, 0.0, -1.0, 0.5]), 0);
        let sp = DMatrix::from_row_slice(2, 2, &[0.5, 0.1, 0.1, 0.8]);
        let pred = PredictedState::new(DVector::from_vec(vec![0.3, 0.0]), sp.clone()).unwrap();
        let hp = Hyperparams::new(0.0, 0.5).unwrap(); // tau* = 0.5 * 4 / 2 = 1
        let th = DVector::from_vec(vec![0.3, 0.0]);
        let s = covariance_estimate(&th, &th, &data, &pred, &NoiseSpec::Iid(1.0), &hp).unwrap();
        assert!((s - sp).amax() < 1e-12);
    }

    #[test]
    fn unselected_coordinate_keeps_positive_variance() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 0.2, -0.4, 1.0, 0.3, -0.5]);
        let data = EpochData::new(x, DVector::from_vec(vec![1.0, -0.2, 0.4]), 0);
        let pred = PredictedState::new(DVector::zeros(2), DMatrix::identity(2, 2)).unwrap();
        let hp = Hyperparams::new(0.5, 1.0).unwrap();
        let th_hat = DVector::from_vec(vec![0.8, 0.0]);
        let th_star = DVector::from_vec(vec![0.9, 0.05]);
        let s = covariance_estimate(&th_hat, &th_star, &data, &pred, &NoiseSpec::Iid(1.0), &hp)
            .unwrap();
        assert!(s[(1, 1)] > 0.0);
        assert!(s[(0, 0)] > 0.0);
    }

    #[test]
    fn zero_residual_fixed_point() {
        let x = DMatrix::from_row_slice(4, 2, &[1.0, 0.5, -0.3, 1.2, 0.8, -1.0, 0.1, 0.4]);
        let th = DVector::from_vec(vec![1.5, -0.5]);
        let data = EpochData::new(x.clone(), &x * &th, 1);
        let prev = ModelState::new(th.clone(), DMatrix::identity(2, 2), 1.0, 0).unwrap();
        let hp = Hyperparams::new(0.0, 1.0).unwrap();
        let out = irs_step(
            &prev,
            &data,
            &StateTransition::random_walk(2, 0.01),
            &hp,
            &DescentConfig::default(),
        )
        .unwrap();
        assert_eq!(out.w2, W2_FLOOR);
        assert!((out.theta - th).amax() < 1e-8);
        assert_eq!(out.t, 1);
    }

    #[test]
    fn step_rejects_dimension_change() {
        let prev = ModelState::new(DVector::zeros(2), DMatrix::identity(2, 2), 1.0, 0).unwrap();
        let data = EpochData::new(DMatrix::identity(3, 3), DVector::zeros(3), 1);
        let hp = Hyperparams::new(0.1, 1.0).unwrap();
        let err = irs_step(
            &prev,
            &data,
            &StateTransition::random_walk(2, 0.01),
            &hp,
            &DescentConfig::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch(_)));
    }
}
