//! k-fold cross-validated grid search for the sequential estimators.
//!
//! Rows are split into folds within each epoch. Fold `f` of a run trains the
//! sequential model on the training rows of every prefix epoch in turn and,
//! after each epoch, predicts that epoch's held-out rows.

use log::debug;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{EpochData, Hyperparams};
use crate::sequential::{Method, SequentialConfig, SequentialModel};

/// Training and held-out row indices of one fold.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fold {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Shuffles `0..n` with `seed` and cuts it into `k` folds whose sizes differ
/// by at most one; the first `n % k` folds get the extra row. Indices within
/// each fold are sorted.
pub fn kfold_split(n: usize, k: usize, seed: u64) -> Result<Vec<Fold>> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!("k must be at least 2, got {k}")));
    }
    if k > n {
        return Err(Error::InvalidArgument(format!(
            "cannot split {n} rows into {k} folds"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (base, extra) = (n / k, n % k);
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let size = base + usize::from(f < extra);
        let mut test = order[start..start + size].to_vec();
        test.sort_unstable();
        let mut train: Vec<usize> = order[..start]
            .iter()
            .chain(&order[start + size..])
            .copied()
            .collect();
        train.sort_unstable();
        folds.push(Fold { train, test });
        start += size;
    }
    Ok(folds)
}

/// Fold seed of epoch `e`, so folds are drawn independently per epoch.
fn epoch_seed(seed: u64, e: usize) -> u64 {
    seed.wrapping_add((e as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// `k` folds for every epoch; epoch `e` is split with its own derived seed.
pub fn epoch_folds(epochs: &[EpochData], k: usize, seed: u64) -> Result<Vec<Vec<Fold>>> {
    epochs
        .iter()
        .enumerate()
        .map(|(e, d)| kfold_split(d.n(), k, epoch_seed(seed, e)))
        .collect()
}

/// Pooled held-out rMSE of `method` over the prefix epochs; `+inf` if any
/// fold fails numerically.
pub fn cv_score_method(
    prefix: &[EpochData],
    method: Method,
    k: usize,
    seed: u64,
    cfg: &SequentialConfig,
) -> f64 {
    match try_cv_score(prefix, method, k, seed, cfg) {
        Ok(v) if v.is_finite() => v,
        Ok(_) => f64::INFINITY,
        Err(e) => {
            debug!("{} scored +inf: {e}", method.name());
            f64::INFINITY
        }
    }
}

/// [`cv_score_method`] for the IRS estimator.
pub fn cv_score(
    prefix: &[EpochData],
    hp: &Hyperparams,
    k: usize,
    seed: u64,
    cfg: &SequentialConfig,
) -> f64 {
    cv_score_method(prefix, Method::irs(*hp), k, seed, cfg)
}

fn try_cv_score(
    prefix: &[EpochData],
    method: Method,
    k: usize,
    seed: u64,
    cfg: &SequentialConfig,
) -> Result<f64> {
    if prefix.is_empty() {
        return Err(Error::InvalidArgument("empty stream prefix".into()));
    }
    let splits = epoch_folds(prefix, k, seed)?;
    let mut sse = 0.0;
    let mut count = 0usize;
    for f in 0..k {
        let mut model = SequentialModel::new(method, *cfg)?;
        for (epoch, folds) in prefix.iter().zip(&splits) {
            let fold = &folds[f];
            model.update(&epoch.select_rows(&fold.train))?;
            let test = epoch.select_rows(&fold.test);
            let yhat = model.predict(&test.x)?;
            sse += (&test.y - yhat).norm_squared();
            count += test.y.len();
        }
    }
    Ok((sse / count as f64).sqrt())
}

/// Candidate values and protocol for [`grid_search`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub lambdas: Vec<f64>,
    pub taus: Vec<f64>,
    pub k: usize,
    /// Number of leading epochs used for scoring.
    pub n_epochs: usize,
    pub seed: u64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            lambdas: vec![0.001, 0.01, 0.1, 1.0, 10.0],
            taus: vec![0.01, 0.1, 1.0, 10.0, 100.0],
            k: 10,
            n_epochs: 3,
            seed: 0,
        }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if self.lambdas.is_empty() || self.taus.is_empty() {
            return Err(Error::InvalidArgument("grid lists must be non-empty".into()));
        }
        if self
            .lambdas
            .iter()
            .chain(&self.taus)
            .any(|v| !(*v >= 0.0 && v.is_finite()))
        {
            return Err(Error::InvalidArgument(
                "grid values must be finite and non-negative".into(),
            ));
        }
        if self.k < 2 {
            return Err(Error::InvalidArgument(format!("k must be at least 2, got {}", self.k)));
        }
        if self.n_epochs < 1 {
            return Err(Error::InvalidArgument("n_epochs must be at least 1".into()));
        }
        Ok(())
    }

    /// The first `n_epochs` epochs, checked against `k`.
    pub fn prefix<'a>(&self, stream: &'a [EpochData]) -> Result<&'a [EpochData]> {
        self.validate()?;
        if stream.is_empty() {
            return Err(Error::InvalidArgument("empty stream".into()));
        }
        let prefix = &stream[..self.n_epochs.min(stream.len())];
        let smallest = prefix.iter().map(EpochData::n).min().unwrap_or(0);
        if self.k > smallest {
            return Err(Error::InvalidArgument(format!(
                "k = {} exceeds the smallest epoch size {smallest}",
                self.k
            )));
        }
        Ok(prefix)
    }
}

/// One evaluated grid point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub lambda: f64,
    pub tau: f64,
    pub rmse: f64,
}

/// Lowest score; ties go to the larger `lambda`, then the larger `tau`.
pub fn select_best(table: &[ScoreRow]) -> Result<Hyperparams> {
    let best = table
        .iter()
        .filter(|r| r.rmse.is_finite())
        .min_by(|a, b| {
            a.rmse
                .total_cmp(&b.rmse)
                .then(b.lambda.total_cmp(&a.lambda))
                .then(b.tau.total_cmp(&a.tau))
        })
        .ok_or(Error::NoFeasibleHyperparameters)?;
    Hyperparams::new(best.lambda, best.tau)
}

/// Scores every `(lambda, tau)` pair on the stream prefix (in parallel) and
/// returns the winner with the table in grid order (lambda-major).
pub fn grid_search(
    stream: &[EpochData],
    grid: &GridSpec,
    cfg: &SequentialConfig,
) -> Result<(Hyperparams, Vec<ScoreRow>)> {
    let prefix = grid.prefix(stream)?;
    cfg.validate()?;
    let points: Vec<(f64, f64)> = grid
        .lambdas
        .iter()
        .flat_map(|&l| grid.taus.iter().map(move |&t| (l, t)))
        .collect();
    let table: Vec<ScoreRow> = points
        .par_iter()
        .map(|&(lambda, tau)| ScoreRow {
            lambda,
            tau,
            rmse: cv_score_method(prefix, Method::Irs { lambda, tau }, grid.k, grid.seed, cfg),
        })
        .collect();
    let best = select_best(&table)?;
    Ok((best, table))
}

/// Cross-validated `lambda` for the epoch-local adaptive Lasso, with the
/// same prefix, folds and tie rule as [`grid_search`].
pub fn tune_local_lasso(
    stream: &[EpochData],
    grid: &GridSpec,
    cfg: &SequentialConfig,
) -> Result<(f64, Vec<ScoreRow>)> {
    let prefix = grid.prefix(stream)?;
    cfg.validate()?;
    let table: Vec<ScoreRow> = grid
        .lambdas
        .par_iter()
        .map(|&lambda| ScoreRow {
            lambda,
            tau: 0.0,
            rmse: cv_score_method(prefix, Method::LassoLocal { lambda }, grid.k, grid.seed, cfg),
        })
        .collect();
    Ok((select_best(&table)?.lambda, table))
}
