//! Inertial regularization and selection (IRS) for sequential sparse linear
//! regression.
//!
//! A stream of epochs `(X_t, y_t)` is modeled by a linear state-space model
//! whose coefficients drift between epochs. Each epoch is fitted by a sparse
//! estimator that is pulled toward the previous estimate by a
//! covariance-weighted inertia term and selects predictors with an adaptive
//! L1 penalty. With no L1 term and unit inertia the update is the Kalman
//! filter.
//!
//! - [`model`]: shared types, validation, per-epoch standardization.
//! - [`estimator`]: the objective, its solvers and the sequential step.
//! - [`baselines`]: Kalman filter variants and the epoch-local adaptive Lasso.
//! - [`sequential`]: stream runners that wrap standardization and state.
//! - [`tuning`]: k-fold cross-validated grid search over `(lambda, tau)`.
//! - [`simgen`]: synthetic streams with known coefficient paths.

pub mod baselines;
pub mod error;
pub mod estimator;
pub mod linalg;
pub mod model;
pub mod sequential;
pub mod simgen;
pub mod tuning;

pub use error::{Error, Result};
pub use estimator::{DescentConfig, StepRule};
pub use model::{
    EpochData, Hyperparams, ModelState, NoiseSpec, PredictedState, Scaler, StateTransition,
};
