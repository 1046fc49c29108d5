//! Proximal-gradient solver and the closed-form solution for orthonormal
//! designs.

use log::debug;
use nalgebra::{DMatrix, DVector};

use super::objective::{adaptive_weights, l1_term, SmoothPart};
use super::{DescentConfig, StepRule};
use crate::error::{Error, Result};
use crate::model::{EpochData, Hyperparams, NoiseSpec, PredictedState};

/// Proximal operator of `nu * |x|`.
pub fn soft_threshold(x: f64, nu: f64) -> f64 {
    if x > nu {
        x - nu
    } else if x < -nu {
        x + nu
    } else {
        0.0
    }
}

/// Result of [`proximal_descent`].
#[derive(Debug, Clone, PartialEq)]
pub struct DescentOutcome {
    pub theta: DVector<f64>,
    /// Inertia-regularized least-squares anchor used for the adaptive weights.
    pub theta_star: DVector<f64>,
    /// Accepted proximal iterations.
    pub iters: usize,
    /// Objective at the start point followed by one value per iteration.
    pub trace: Vec<f64>,
    /// Whether the relative-change tolerance was met before `max_iters`.
    pub converged: bool,
    pub final_step: f64,
}

/// Minimizes the IRS objective for one epoch, starting from the anchor `th*`.
pub fn proximal_descent(
    data: &EpochData,
    pred: &PredictedState,
    noise: &NoiseSpec,
    hp: &Hyperparams,
    cfg: &DescentConfig,
) -> Result<DescentOutcome> {
    cfg.validate()?;
    let smooth = SmoothPart::new(data, Some(pred), noise, hp.tau)?;
    let theta_star = smooth.anchor()?;
    Ok(solve_from_anchor(&smooth, theta_star, hp.lambda, cfg))
}

/// Runs the composite solver with adaptive weights derived from `theta_star`,
/// initialized at `theta_star`.
pub(crate) fn solve_from_anchor(
    smooth: &SmoothPart,
    theta_star: DVector<f64>,
    lambda: f64,
    cfg: &DescentConfig,
) -> DescentOutcome {
    let (weights, pinned) = adaptive_weights(lambda, &theta_star, cfg.adapt_floor);
    let (theta, iters, trace, converged, final_step) =
        minimize_composite(smooth, &weights, &pinned, &theta_star, cfg);
    DescentOutcome {
        theta,
        theta_star,
        iters,
        trace,
        converged,
        final_step,
    }
}

type Minimized = (DVector<f64>, usize, Vec<f64>, bool, f64);

/// Proximal gradient on `f(th) + sum_i w_i |th_i|` with pinned coordinates
/// held at zero.
fn minimize_composite(
    smooth: &SmoothPart,
    weights: &[f64],
    pinned: &[bool],
    start: &DVector<f64>,
    cfg: &DescentConfig,
) -> Minimized {
    let prox = |z: &DVector<f64>, step: f64| -> DVector<f64> {
        DVector::from_iterator(
            z.len(),
            z.iter().enumerate().map(|(i, &zi)| {
                if pinned[i] {
                    0.0
                } else {
                    soft_threshold(zi, step * weights[i])
                }
            }),
        )
    };
    let mut theta = DVector::from_iterator(
        start.len(),
        start
            .iter()
            .zip(pinned)
            .map(|(&v, &pin)| if pin { 0.0 } else { v }),
    );
    let mut f_cur = smooth.value(&theta);
    let mut obj = f_cur + l1_term(&theta, weights);
    let mut trace = vec![obj];
    let mut step = cfg.step0;
    let min_step = cfg.step0 * 1e-30;
    let mut iters = 0;
    let mut converged = false;

    while iters < cfg.max_iters {
        let grad = smooth.gradient(&theta);
        let accepted = loop {
            let cand = prox(&(&theta - &grad * step), step);
            let f_cand = smooth.value(&cand);
            let obj_cand = f_cand + l1_term(&cand, weights);
            if cfg.step_rule == StepRule::Constant {
                break Some((cand, f_cand, obj_cand));
            }
            let d = &cand - &theta;
            let majorizer = f_cur + grad.dot(&d) + d.norm_squared() / (2.0 * step);
            // Rounding in the objective is of order 1e-16 * |obj|; without the
            // slack, steps stall once the true decrease drops below it.
            let slack = 1e-14 * (1.0 + f_cur.abs());
            if f_cand <= majorizer + slack && obj_cand <= obj + 1e-14 * obj.abs() {
                break Some((cand, f_cand, obj_cand));
            }
            step *= 0.5;
            if step < min_step {
                break None;
            }
        };
        let Some((cand, f_cand, obj_cand)) = accepted else {
            // No step size makes progress: the current point is stationary to
            // machine precision.
            converged = true;
            break;
        };
        iters += 1;
        let rel = (obj - obj_cand).abs() / obj.abs().max(f64::MIN_POSITIVE);
        let settled = cfg.coef_tol <= 0.0
            || (&cand - &theta).amax() <= cfg.coef_tol * cand.amax().max(1.0);
        theta = cand;
        f_cur = f_cand;
        obj = obj_cand;
        trace.push(obj);
        if cfg.step_rule == StepRule::Adaptive {
            step = (step * 2.0).min(1e12);
        }
        if (rel < cfg.tol && settled) || obj == 0.0 {
            converged = true;
            break;
        }
    }
    if !converged {
        debug!(
            "proximal descent stopped at max_iters={} without meeting tol={}",
            cfg.max_iters, cfg.tol
        );
    }
    (theta, iters, trace, converged, step)
}

/// Closed-form IRS solution when `X'X = I`, `W = w2 I` and the predicted
/// covariance is diagonal with entries `rho`:
/// `th_i = sgn(th*_i) (|th*_i| - (lambda n / p) rho*_i / |th*_i|)^+`
/// with `1/rho*_i = 1/w2 + tau*/rho_i`.
pub fn closed_form_orthogonal(
    data: &EpochData,
    theta_pred: &DVector<f64>,
    rho: &DVector<f64>,
    w2: f64,
    hp: &Hyperparams,
) -> Result<DVector<f64>> {
    let (n, p) = data.x.shape();
    if theta_pred.len() != p || rho.len() != p || data.y.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "X is {n}x{p}, y has {}, theta_pred has {}, rho has {}",
            data.y.len(),
            theta_pred.len(),
            rho.len()
        )));
    }
    if !(w2 > 0.0) {
        return Err(Error::InvalidArgument(format!("w2 must be positive, got {w2}")));
    }
    let gram = data.x.transpose() * &data.x;
    let deviation = (gram - DMatrix::<f64>::identity(p, p)).amax();
    if deviation > 1e-8 {
        return Err(Error::OrthogonalityViolated(deviation));
    }
    let tau_star = hp.tau_star(n, p);
    if tau_star > 0.0 && rho.iter().any(|&r| !(r > 0.0)) {
        return Err(Error::InvalidArgument(
            "predicted variances must be positive when tau > 0".into(),
        ));
    }
    let xty = data.x.transpose() * &data.y;
    let shrink = hp.lambda * n as f64 / p as f64;
    Ok(DVector::from_fn(p, |i, _| {
        let prior_precision = if tau_star > 0.0 { tau_star / rho[i] } else { 0.0 };
        let rho_star = 1.0 / (1.0 / w2 + prior_precision);
        let anchor = rho_star * (xty[i] / w2 + prior_precision * theta_pred[i]);
        if anchor.abs() < super::DEFAULT_ADAPT_FLOOR {
            return 0.0;
        }
        let magnitude = (anchor.abs() - shrink * rho_star / anchor.abs()).max(0.0);
        anchor.signum() * magnitude
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn soft_threshold_branches() {
        assert_eq!(soft_threshold(5.0, 2.0), 3.0);
        assert_eq!(soft_threshold(0.5, 1.0), 0.0);
        assert_eq!(soft_threshold(-3.0, 1.0), -2.0);
        assert_eq!(soft_threshold(1.0, 1.0), 0.0);
        assert_eq!(soft_threshold(-0.7, 0.0), -0.7);
    }

    fn one_coordinate(xty: f64) -> EpochData {
        // n = p = 1 keeps lambda n / p = lambda and tau* = tau.
        EpochData::new(DMatrix::from_element(1, 1, 1.0), DVector::from_element(1, xty), 0)
    }

    #[test]
    fn closed_form_worked_example() {
        // w2 = 1, rho = 1, tau* = 1, X'y = 4, th_pred = 0, lambda n/p = 1
        // -> rho* = 0.5, th* = 2, th = 2 - 0.5/2 = 1.75
        let hp = Hyperparams::new(1.0, 1.0).unwrap();
        let th = closed_form_orthogonal(
            &one_coordinate(4.0),
            &DVector::zeros(1),
            &DVector::from_element(1, 1.0),
            1.0,
            &hp,
        )
        .unwrap();
        assert!((th[0] - 1.75).abs() < 1e-15);
    }

    #[test]
    fn closed_form_worked_example_matches_scalar_minimization() {
        // Ternary search on the per-coordinate objective
        // -th* th / rho* + th^2 / (2 rho*) + (lambda n/p) |th| / |th*|.
        let (anchor, rho_star, shrink) = (2.0_f64, 0.5_f64, 1.0_f64);
        let obj = |t: f64| -anchor * t / rho_star + t * t / (2.0 * rho_star) + shrink * t.abs() / anchor;
        let (mut lo, mut hi) = (-10.0_f64, 10.0_f64);
        for _ in 0..300 {
            let m1 = lo + (hi - lo) / 3.0;
            let m2 = hi - (hi - lo) / 3.0;
            if obj(m1) < obj(m2) {
                hi = m2;
            } else {
                lo = m1;
            }
        }
        assert!((0.5 * (lo + hi) - 1.75).abs() < 1e-6);
    }

    #[test]
    fn closed_form_zero_lambda_returns_anchor() {
        let hp = Hyperparams::new(0.0, 1.0).unwrap();
        let th = closed_form_orthogonal(
            &one_coordinate(4.0),
            &DVector::zeros(1),
            &DVector::from_element(1, 1.0),
            1.0,
            &hp,
        )
        .unwrap();
        assert_eq!(th[0], 2.0);
    }

    #[test]
    fn closed_form_dead_zone() {
        // th* = 0.5 * 0.6 = 0.3, |th*|^2 = 0.09 <= shrink * rho* = 1 * 0.5
        let hp = Hyperparams::new(1.0, 1.0).unwrap();
        let th = closed_form_orthogonal(
            &one_coordinate(0.6),
            &DVector::zeros(1),
            &DVector::from_element(1, 1.0),
            1.0,
            &hp,
        )
        .unwrap();
        assert_eq!(th[0], 0.0);
    }

    #[test]
    fn closed_form_rejects_non_orthonormal() {
        let d = EpochData::new(DMatrix::from_element(2, 1, 1.0), DVector::zeros(2), 0);
        let hp = Hyperparams::new(1.0, 1.0).unwrap();
        let err = closed_form_orthogonal(
            &d,
            &DVector::zeros(1),
            &DVector::from_element(1, 1.0),
            1.0,
            &hp,
        )
        .unwrap_err();
        assert!(err.to_string().contains("orthogonality violated"));
    }

    #[test]
    fn zero_lambda_returns_anchor() {
        let x = DMatrix::from_row_slice(4, 2, &[1.0, 0.2, -0.5, 1.1, 0.3, -0.7, 2.0, 0.4]);
        let d = EpochData::new(x, DVector::from_vec(vec![1.0, -0.5, 0.25, 2.0]), 0);
        let pred = PredictedState::new(
            DVector::from_vec(vec![0.5, 0.5]),
            DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 0.5]),
        )
        .unwrap();
        let hp = Hyperparams::new(0.0, 0.8).unwrap();
        let out =
            proximal_descent(&d, &pred, &NoiseSpec::Iid(0.5), &hp, &DescentConfig::default())
                .unwrap();
        assert!((&out.theta - &out.theta_star).amax() < 1e-8);
        assert!(out.converged);
    }
}
