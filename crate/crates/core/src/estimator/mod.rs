//! The inertial regularization and selection (IRS) estimator.
//!
//! Each epoch minimizes
//!
//! ```text
//! (1/2n) (y - X th)' W^-1 (y - X th)
//!   + (tau/2p) (th - th_pred)' Sigma_pred^-1 (th - th_pred)
//!   + (lambda/p) sum_i |th_i| / |th*_i|
//! ```
//!
//! where `th*` is the inertia-regularized least-squares anchor. The smooth
//! part lives in [`objective`], the proximal-gradient solver and the closed
//! form for orthonormal designs in [`descent`], and the per-epoch recursion
//! (prediction, noise estimate, covariance, structural changes) in [`step`].

pub mod descent;
pub mod objective;
pub mod step;

pub use descent::{closed_form_orthogonal, proximal_descent, soft_threshold, DescentOutcome};
pub use objective::{
    augment_data, inertial_ols, loss_gradient, loss_parts, objective, AugmentedData, LossParts,
};
pub use step::{
    covariance_estimate, expand_model, initial_state, innovation_variance, irs_step,
    irs_step_detailed, predict_state, StepReport,
};

use crate::error::{Error, Result};

/// Default floor on `|th*_i|`; coordinates below it are pinned to zero.
pub const DEFAULT_ADAPT_FLOOR: f64 = 1e-10;

/// Lower clamp on the per-epoch response-noise estimate.
pub const W2_FLOOR: f64 = 1e-12;

/// How the proximal step size evolves across iterations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StepRule {
    /// Fixed step; the objective trace may increase.
    Constant,
    /// Halve the step until the proximal majorization holds and the objective
    /// does not increase. Steps never grow.
    #[default]
    HalvingOnIncrease,
    /// As `HalvingOnIncrease`, but the step doubles after every accepted
    /// iteration. Useful when `step0` is far below `1/L`.
    Adaptive,
}

/// Settings for [`proximal_descent`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DescentConfig {
    pub max_iters: usize,
    pub step0: f64,
    pub step_rule: StepRule,
    /// Stop once the relative objective change drops below this.
    pub tol: f64,
    /// When positive, convergence also needs the largest coefficient move to
    /// fall below `coef_tol * max(1, |theta|_inf)`. Zero disables the check.
    pub coef_tol: f64,
    pub adapt_floor: f64,
}

impl Default for DescentConfig {
    fn default() -> Self {
        Self {
            max_iters: 500,
            step0: 1.0,
            step_rule: StepRule::HalvingOnIncrease,
            tol: 1e-8,
            coef_tol: 0.0,
            adapt_floor: DEFAULT_ADAPT_FLOOR,
        }
    }
}

impl DescentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters < 1 {
            return Err(Error::InvalidArgument("max_iters must be at least 1".into()));
        }
        for (name, v) in [
            ("step0", self.step0),
            ("tol", self.tol),
            ("adapt_floor", self.adapt_floor),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "{name} must be positive and finite, got {v}"
                )));
            }
        }
        if !(self.coef_tol >= 0.0 && self.coef_tol.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "coef_tol must be non-negative and finite, got {}",
                self.coef_tol
            )));
        }
        Ok(())
    }

    /// Tight settings used when a solution is compared against an oracle.
    pub fn precise() -> Self {
        Self {
            max_iters: 200_000,
            tol: 1e-15,
            coef_tol: 1e-12,
            ..Self::default()
        }
    }
}
