//! Stream runners: standardize each incoming epoch, carry the state forward
//! and predict on raw predictors.
//!
//! State is kept in the standardized coordinates of the most recent epoch.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::baselines::{kalman_step, kalman_step_fast, local_adaptive_lasso};
use crate::error::{Error, Result};
use crate::estimator::{expand_model, initial_state, innovation_variance, irs_step_detailed};
use crate::estimator::{predict_state, DescentConfig};
use crate::model::{standardize, EpochData, Hyperparams, ModelState, NoiseSpec, Scaler};
use crate::model::StateTransition;

/// Settings shared by every sequential method.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SequentialConfig {
    pub descent: DescentConfig,
    /// `q` in the random-walk transition `F = I`, `Q = q^2 I`.
    pub process_noise: f64,
    /// Variance given to coordinates added when an epoch has more columns.
    pub prior_variance: f64,
}

impl Default for SequentialConfig {
    fn default() -> Self {
        Self {
            descent: DescentConfig::default(),
            process_noise: 0.01,
            prior_variance: 100.0,
        }
    }
}

impl SequentialConfig {
    pub fn validate(&self) -> Result<()> {
        self.descent.validate()?;
        if !(self.process_noise >= 0.0 && self.process_noise.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "process_noise must be non-negative, got {}",
                self.process_noise
            )));
        }
        if !(self.prior_variance > 0.0 && self.prior_variance.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "prior_variance must be positive, got {}",
                self.prior_variance
            )));
        }
        Ok(())
    }
}

/// A sequential estimator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "kebab-case")]
pub enum Method {
    Irs { lambda: f64, tau: f64 },
    Kalman,
    KalmanFast,
    LassoLocal { lambda: f64 },
}

impl Method {
    pub fn irs(hp: Hyperparams) -> Self {
        Self::Irs {
            lambda: hp.lambda,
            tau: hp.tau,
        }
    }

    /// Short identifier used in reports.
    pub fn name(&self) -> &'static str {
        match self {
            Self::Irs { .. } => "irs",
            Self::Kalman => "kalman",
            Self::KalmanFast => "kalman-fast",
            Self::LassoLocal { .. } => "lasso-local",
        }
    }
}

/// Diagnostics of one [`SequentialModel::update`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateInfo {
    /// Proximal iterations; zero for the Kalman filters.
    pub iters: usize,
    pub converged: bool,
}

/// One stream's estimator state.
#[derive(Debug, Clone)]
pub struct SequentialModel {
    method: Method,
    cfg: SequentialConfig,
    state: Option<ModelState>,
    scaler: Option<Scaler>,
}

impl SequentialModel {
    pub fn new(method: Method, cfg: SequentialConfig) -> Result<Self> {
        cfg.validate()?;
        if let Method::Irs { lambda, tau } = method {
            Hyperparams::new(lambda, tau)?;
        }
        if let Method::LassoLocal { lambda } = method {
            Hyperparams::new(lambda, 0.0)?;
        }
        Ok(Self {
            method,
            cfg,
            state: None,
            scaler: None,
        })
    }

    /// Resumes from a saved state; the next epoch is treated as a continuation.
    pub fn with_state(mut self, state: ModelState) -> Self {
        self.state = Some(state);
        self
    }

    pub fn method(&self) -> Method {
        self.method
    }

    pub fn state(&self) -> Option<&ModelState> {
        self.state.as_ref()
    }

    pub fn scaler(&self) -> Option<&Scaler> {
        self.scaler.as_ref()
    }

    /// Standardizes `raw` and advances the state by one epoch. The first epoch
    /// also seeds the state (least-squares fit, identity covariance).
    pub fn update(&mut self, raw: &EpochData) -> Result<UpdateInfo> {
        let (data, scaler) = standardize(raw)?;
        let p = data.p();
        let prev = match self.state.take() {
            Some(s) if s.dim() < p => {
                expand_model(&s, p - s.dim(), self.cfg.prior_variance)?
            }
            Some(s) if s.dim() > p => {
                let dim = s.dim();
                self.state = Some(s);
                return Err(Error::DimensionMismatch(format!(
                    "epoch has {p} columns but the model has {dim}"
                )));
            }
            Some(s) => s,
            None => initial_state(&data)?,
        };
        let trans = StateTransition::random_walk(p, self.cfg.process_noise);
        let (next, info) = match self.method {
            Method::Irs { lambda, tau } => {
                let hp = Hyperparams::new(lambda, tau)?;
                let report = irs_step_detailed(&prev, &data, &trans, &hp, &self.cfg.descent);
                let report = self.restore_on_error(prev.clone(), report)?;
                let info = UpdateInfo {
                    iters: report.descent.iters,
                    converged: report.descent.converged,
                };
                (report.state, info)
            }
            Method::Kalman | Method::KalmanFast => {
                let pred = predict_state(&prev, &trans)?;
                let w2 = innovation_variance(&data, &pred.theta_pred)?;
                let noise = NoiseSpec::Iid(w2);
                let out = if self.method == Method::Kalman {
                    kalman_step(&prev, &data, &trans, &noise, 1.0)
                } else {
                    kalman_step_fast(&prev, &data, &trans, &noise)
                };
                let out = self.restore_on_error(prev.clone(), out)?;
                (out, UpdateInfo { iters: 0, converged: true })
            }
            Method::LassoLocal { lambda } => {
                let theta = local_adaptive_lasso(&data, lambda, &self.cfg.descent);
                let theta = self.restore_on_error(prev.clone(), theta)?;
                let state = ModelState {
                    theta,
                    sigma: DMatrix::identity(p, p),
                    w2: prev.w2,
                    t: prev.t + 1,
                };
                (state, UpdateInfo { iters: 0, converged: true })
            }
        };
        self.state = Some(next);
        self.scaler = Some(scaler);
        Ok(info)
    }

    fn restore_on_error<T>(&mut self, prev: ModelState, out: Result<T>) -> Result<T> {
        if out.is_err() {
            self.state = Some(prev);
        }
        out
    }

    /// Predicted responses for raw predictors, using the latest epoch's scaling.
    pub fn predict(&self, x_raw: &DMatrix<f64>) -> Result<DVector<f64>> {
        let (state, scaler) = match (&self.state, &self.scaler) {
            (Some(s), Some(sc)) => (s, sc),
            _ => {
                return Err(Error::InvalidArgument(
                    "the model has not been fitted to any epoch".into(),
                ))
            }
        };
        if x_raw.ncols() != state.dim() {
            return Err(Error::DimensionMismatch(format!(
                "X has {} columns, the model has {}",
                x_raw.ncols(),
                state.dim()
            )));
        }
        Ok(scaler.predict(&state.theta, x_raw))
    }
}
