//! Experiment protocol: per seed, tune on a stream prefix, then run every
//! method through per-epoch k-fold train/test splits and record held-out
//! metrics for each epoch.
//!
//! Within a fold the model is trained sequentially on that fold's training
//! rows of each epoch and scored on its held-out rows right after. An epoch's
//! metric is the mean of the fold metrics.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use irs_core::simgen::{gen_exp1_with, gen_exp2, DataStream, Exp1Config, Exp2Config};
use irs_core::tuning::{epoch_folds, grid_search, tune_local_lasso, Fold, GridSpec, ScoreRow};
use irs_core::sequential::{Method, SequentialConfig, SequentialModel};
use irs_core::{DescentConfig, EpochData, Hyperparams};
use log::{debug, info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bundle::{read_bundle, write_json};
use crate::checkpoint::Checkpoint;
use crate::error::{HarnessError, Result};
use crate::metrics::{mape, rmse};
use crate::report::{write_rows, ReportRow, ReportTable, Status};

/// Methods selectable in a config.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MethodKind {
    Irs,
    Kalman,
    KalmanFast,
    LassoLocal,
}

impl MethodKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Irs => "irs",
            Self::Kalman => "kalman",
            Self::KalmanFast => "kalman-fast",
            Self::LassoLocal => "lasso-local",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Rmse,
    Mape,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Self::Rmse => "rmse",
            Self::Mape => "mape",
        }
    }
}

/// Where each seed's stream comes from. Generated streams use the run seed;
/// a bundle is shared by all seeds, which then only change the folds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum StreamSpec {
    Exp1 {
        p: usize,
        #[serde(rename = "T")]
        n_epochs: usize,
        #[serde(default)]
        config: Exp1Config,
    },
    Exp2 {
        p: usize,
        #[serde(rename = "T")]
        n_epochs: usize,
        #[serde(default)]
        config: Exp2Config,
    },
    Bundle { path: PathBuf },
}

fn default_lambdas() -> Vec<f64> {
    GridSpec::default().lambdas
}

fn default_taus() -> Vec<f64> {
    GridSpec::default().taus
}

fn default_tune_epochs() -> usize {
    GridSpec::default().n_epochs
}

/// IRS hyperparameters: tuned on a grid or fixed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum HyperparamSpec {
    Grid {
        #[serde(default = "default_lambdas")]
        lambdas: Vec<f64>,
        #[serde(default = "default_taus")]
        taus: Vec<f64>,
        /// Leading epochs used for tuning.
        #[serde(default = "default_tune_epochs")]
        n_epochs: usize,
    },
    Fixed { lambda: f64, tau: f64 },
}

impl Default for HyperparamSpec {
    fn default() -> Self {
        Self::Grid {
            lambdas: default_lambdas(),
            taus: default_taus(),
            n_epochs: default_tune_epochs(),
        }
    }
}

/// Proximal-descent settings exposed in configs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DescentSettings {
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for DescentSettings {
    fn default() -> Self {
        let d = DescentConfig::default();
        Self {
            max_iters: d.max_iters,
            tol: d.tol,
        }
    }
}

fn default_folds() -> usize {
    10
}

fn default_process_noise() -> f64 {
    SequentialConfig::default().process_noise
}

fn default_prior_variance() -> f64 {
    SequentialConfig::default().prior_variance
}

fn default_metrics() -> Vec<Metric> {
    vec![Metric::Rmse]
}

fn default_true() -> bool {
    true
}

/// JSON experiment description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub methods: Vec<MethodKind>,
    pub stream: StreamSpec,
    #[serde(default)]
    pub hyperparams: HyperparamSpec,
    /// Fixed penalty of the local Lasso; tuned on the grid's lambdas when
    /// absent and the hyperparameters are on a grid, else the fixed IRS lambda.
    #[serde(default)]
    pub lasso_lambda: Option<f64>,
    #[serde(default = "default_folds")]
    pub folds: usize,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    /// `q` of the random-walk transition used by every method.
    #[serde(default = "default_process_noise")]
    pub process_noise: f64,
    #[serde(default = "default_prior_variance")]
    pub prior_variance: f64,
    #[serde(default)]
    pub descent: DescentSettings,
    #[serde(default = "default_metrics")]
    pub metrics: Vec<Metric>,
    /// Save the state of a fit on all rows of every epoch, per method and seed.
    #[serde(default = "default_true")]
    pub checkpoints: bool,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        let mut cfg: Self = serde_json::from_str(&text)
            .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        cfg.validate()?;
        Ok(cfg)
    }

    /// Makes relative bundle and output paths relative to `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let StreamSpec::Bundle { path } = &mut self.stream {
            fix(path);
        }
        if let Some(dir) = &mut self.output_dir {
            fix(dir);
        }
    }

    pub fn sequential_config(&self) -> SequentialConfig {
        SequentialConfig {
            descent: DescentConfig {
                max_iters: self.descent.max_iters,
                tol: self.descent.tol,
                ..DescentConfig::default()
            },
            process_noise: self.process_noise,
            prior_variance: self.prior_variance,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(HarnessError::Config(msg));
        if self.methods.is_empty() {
            return fail("at least one method is required".into());
        }
        if self.methods.iter().collect::<BTreeSet<_>>().len() != self.methods.len() {
            return fail("methods must not repeat".into());
        }
        if self.seeds.is_empty() {
            return fail("at least one seed is required".into());
        }
        if self.metrics.is_empty() {
            return fail("at least one metric is required".into());
        }
        if self.folds < 2 {
            return fail(format!("folds must be at least 2, got {}", self.folds));
        }
        self.sequential_config()
            .validate()
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        match &self.hyperparams {
            HyperparamSpec::Grid { .. } => {
                self.grid_spec(0)
                    .expect("grid mode")
                    .validate()
                    .map_err(|e| HarnessError::Config(e.to_string()))?;
            }
            HyperparamSpec::Fixed { lambda, tau } => {
                Hyperparams::new(*lambda, *tau).map_err(|e| HarnessError::Config(e.to_string()))?;
            }
        }
        if let Some(l) = self.lasso_lambda {
            Hyperparams::new(l, 0.0).map_err(|e| HarnessError::Config(e.to_string()))?;
        }
        match &self.stream {
            StreamSpec::Exp1 { config, .. } => config.validate(),
            StreamSpec::Exp2 { config, .. } => config.validate(),
            StreamSpec::Bundle { .. } => Ok(()),
        }
        .map_err(|e| HarnessError::Config(e.to_string()))
    }

    /// Tuning grid for one seed, when the hyperparameters are on a grid.
    pub fn grid_spec(&self, seed: u64) -> Option<GridSpec> {
        match &self.hyperparams {
            HyperparamSpec::Grid {
                lambdas,
                taus,
                n_epochs,
            } => Some(GridSpec {
                lambdas: lambdas.clone(),
                taus: taus.clone(),
                k: self.folds,
                n_epochs: *n_epochs,
                seed,
            }),
            HyperparamSpec::Fixed { .. } => None,
        }
    }

    fn uses(&self, m: MethodKind) -> bool {
        self.methods.contains(&m)
    }
}

/// Loads a bundle once, or generates the stream for `seed`.
pub fn obtain_stream(spec: &StreamSpec, seed: u64) -> Result<DataStream> {
    let stream = match spec {
        StreamSpec::Exp1 { p, n_epochs, config } => gen_exp1_with(*p, *n_epochs, seed, config),
        StreamSpec::Exp2 { p, n_epochs, config } => gen_exp2(*p, *n_epochs, seed, config),
        StreamSpec::Bundle { path } => return read_bundle(path).map(|(s, _)| s),
    };
    stream.map_err(|e| HarnessError::Config(e.to_string()))
}

/// Hyperparameters chosen for one seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub seed: u64,
    pub lambda: Option<f64>,
    pub tau: Option<f64>,
    pub lasso_lambda: Option<f64>,
    /// Set when tuning found no feasible grid point.
    pub tuning_error: Option<String>,
}

/// Everything computed for one seed.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedOutcome {
    pub seed: u64,
    pub rows: Vec<ReportRow>,
    pub selection: Selection,
    pub irs_scores: Vec<ScoreRow>,
    pub lasso_scores: Vec<ScoreRow>,
    /// Proximal iterations of every IRS update.
    pub irs_iterations: Vec<usize>,
    pub checkpoints: Vec<(MethodKind, Checkpoint)>,
}

/// Result of [`run_experiment`].
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub report: ReportTable,
    pub seeds: Vec<SeedOutcome>,
}

impl ExperimentResult {
    pub fn summary(&self, cfg: &ExperimentConfig) -> Summary {
        let mut iters: Vec<usize> = self
            .seeds
            .iter()
            .flat_map(|s| s.irs_iterations.iter().copied())
            .collect();
        iters.sort_unstable();
        Summary {
            methods: cfg.methods.iter().map(|m| m.name().to_string()).collect(),
            seeds: cfg.seeds.clone(),
            folds: cfg.folds,
            process_noise: cfg.process_noise,
            selections: self.seeds.iter().map(|s| s.selection.clone()).collect(),
            irs_iterations: (!iters.is_empty()).then(|| IterationStats {
                updates: iters.len(),
                median: iters[iters.len() / 2],
                max: iters[iters.len() - 1],
            }),
            failed_rows: self
                .report
                .rows
                .iter()
                .filter(|r| r.status == Status::Failed)
                .count(),
            not_implemented: vec!["enkf".into(), "particle-filter".into()],
            note: "ensemble Kalman filter and particle filter baselines are not implemented"
                .into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationStats {
    pub updates: usize,
    pub median: usize,
    pub max: usize,
}

/// Contents of `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub methods: Vec<String>,
    pub seeds: Vec<u64>,
    pub folds: usize,
    pub process_noise: f64,
    pub selections: Vec<Selection>,
    pub irs_iterations: Option<IterationStats>,
    pub failed_rows: usize,
    pub not_implemented: Vec<String>,
    pub note: String,
}

/// Runs the protocol for every seed (in parallel, collected in seed order)
/// and writes the outputs when `output_dir` is set. Fails with a numerical
/// error when every row failed.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    cfg.validate()?;
    let shared = match &cfg.stream {
        StreamSpec::Bundle { .. } => Some(obtain_stream(&cfg.stream, 0)?),
        _ => None,
    };
    let seeds: Vec<SeedOutcome> = cfg
        .seeds
        .par_iter()
        .map(|&seed| {
            let stream = match &shared {
                Some(s) => s.clone(),
                None => obtain_stream(&cfg.stream, seed)?,
            };
            run_seed(cfg, &stream, seed)
        })
        .collect::<Result<_>>()?;
    let report = ReportTable {
        rows: seeds.iter().flat_map(|s| s.rows.iter().cloned()).collect(),
    };
    let result = ExperimentResult { report, seeds };
    if let Some(dir) = &cfg.output_dir {
        write_outputs(cfg, &result, dir)?;
    }
    if result.report.rows.iter().all(|r| r.status == Status::Failed) {
        return Err(HarnessError::Numerical(
            "every method failed on every epoch".into(),
        ));
    }
    Ok(result)
}

/// Tunes IRS and the local Lasso for one seed as configured.
fn select(
    cfg: &ExperimentConfig,
    epochs: &[EpochData],
    seed: u64,
    seq: &SequentialConfig,
) -> Result<(Selection, Vec<ScoreRow>, Vec<ScoreRow>)> {
    let mut sel = Selection {
        seed,
        lambda: None,
        tau: None,
        lasso_lambda: cfg.lasso_lambda,
        tuning_error: None,
    };
    let (mut irs_scores, mut lasso_scores) = (Vec::new(), Vec::new());
    let config_err = |e: irs_core::Error| match e {
        irs_core::Error::NoFeasibleHyperparameters => None,
        other => Some(HarnessError::Config(other.to_string())),
    };
    match (&cfg.hyperparams, cfg.grid_spec(seed)) {
        (HyperparamSpec::Fixed { lambda, tau }, _) => {
            sel.lambda = Some(*lambda);
            sel.tau = Some(*tau);
            sel.lasso_lambda = sel.lasso_lambda.or(Some(*lambda));
        }
        (HyperparamSpec::Grid { .. }, Some(grid)) => {
            if cfg.uses(MethodKind::Irs) {
                match grid_search(epochs, &grid, seq) {
                    Ok((hp, table)) => {
                        sel.lambda = Some(hp.lambda);
                        sel.tau = Some(hp.tau);
                        irs_scores = table;
                    }
                    Err(e) => match config_err(e) {
                        Some(err) => return Err(err),
                        None => sel.tuning_error = Some("irs: no feasible grid point".into()),
                    },
                }
            }
            if cfg.uses(MethodKind::LassoLocal) && sel.lasso_lambda.is_none() {
                match tune_local_lasso(epochs, &grid, seq) {
                    Ok((lambda, table)) => {
                        sel.lasso_lambda = Some(lambda);
                        lasso_scores = table;
                    }
                    Err(e) => match config_err(e) {
                        Some(err) => return Err(err),
                        None => {
                            sel.tuning_error = Some("lasso-local: no feasible grid point".into())
                        }
                    },
                }
            }
        }
        (HyperparamSpec::Grid { .. }, None) => unreachable!("grid mode yields a grid spec"),
    }
    Ok((sel, irs_scores, lasso_scores))
}

fn resolve_method(kind: MethodKind, sel: &Selection) -> Option<Method> {
    match kind {
        MethodKind::Irs => Some(Method::Irs {
            lambda: sel.lambda?,
            tau: sel.tau?,
        }),
        MethodKind::Kalman => Some(Method::Kalman),
        MethodKind::KalmanFast => Some(Method::KalmanFast),
        MethodKind::LassoLocal => Some(Method::LassoLocal {
            lambda: sel.lasso_lambda?,
        }),
    }
}

fn run_seed(cfg: &ExperimentConfig, stream: &DataStream, seed: u64) -> Result<SeedOutcome> {
    let seq = cfg.sequential_config();
    let epochs = &stream.epochs;
    let smallest = epochs.iter().map(EpochData::n).min().unwrap_or(0);
    if cfg.folds > smallest {
        return Err(HarnessError::Config(format!(
            "folds = {} exceeds the smallest epoch size {smallest}",
            cfg.folds
        )));
    }
    let (selection, irs_scores, lasso_scores) = select(cfg, epochs, seed, &seq)?;
    let splits = epoch_folds(epochs, cfg.folds, seed)
        .map_err(|e| HarnessError::Config(e.to_string()))?;
    let mut rows = Vec::new();
    let mut irs_iterations = Vec::new();
    let mut checkpoints = Vec::new();
    for &kind in &cfg.methods {
        let Some(method) = resolve_method(kind, &selection) else {
            warn!("seed {seed}: {} has no hyperparameters; all epochs failed", kind.name());
            for e in 0..epochs.len() {
                for &m in &cfg.metrics {
                    rows.push(row(kind, e, seed, m, None));
                }
            }
            continue;
        };
        let eval = evaluate(epochs, method, &splits, &seq)?;
        if kind == MethodKind::Irs {
            irs_iterations.extend(&eval.iterations);
        }
        for e in 0..epochs.len() {
            for &m in &cfg.metrics {
                let value = match m {
                    Metric::Rmse => eval.rmse[e],
                    Metric::Mape => eval.mape[e],
                };
                rows.push(row(kind, e, seed, m, value));
            }
        }
        if cfg.checkpoints {
            match full_fit(epochs, method, &seq) {
                Ok(cp) => checkpoints.push((kind, cp)),
                Err(e) => warn!("seed {seed}: {} full-data fit failed: {e}", kind.name()),
            }
        }
    }
    info!("seed {seed} done");
    Ok(SeedOutcome {
        seed,
        rows,
        selection,
        irs_scores,
        lasso_scores,
        irs_iterations,
        checkpoints,
    })
}

fn row(kind: MethodKind, epoch: usize, seed: u64, metric: Metric, value: Option<f64>) -> ReportRow {
    let (value, status) = match value {
        Some(v) if v.is_finite() => (v, Status::Ok),
        _ => (f64::NAN, Status::Failed),
    };
    ReportRow {
        method: kind.name().into(),
        epoch: epoch + 1,
        seed,
        metric: metric.name().into(),
        value,
        status,
    }
}

/// Per-epoch fold means; `None` marks an epoch where some fold failed.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub rmse: Vec<Option<f64>>,
    pub mape: Vec<Option<f64>>,
    pub iterations: Vec<usize>,
}

/// Runs `method` through every fold of the stream. A failed update leaves
/// the fold's previous state in place for the next epoch.
pub fn evaluate(
    epochs: &[EpochData],
    method: Method,
    splits: &[Vec<Fold>],
    seq: &SequentialConfig,
) -> Result<Evaluation> {
    let t_len = epochs.len();
    let k = splits.first().map_or(0, Vec::len);
    let mut rmse_sum = vec![0.0; t_len];
    let mut rmse_failed = vec![false; t_len];
    let mut mape_vals: Vec<Vec<f64>> = vec![Vec::new(); t_len];
    let mut iterations = Vec::new();
    for f in 0..k {
        let mut model =
            SequentialModel::new(method, *seq).map_err(|e| HarnessError::Config(e.to_string()))?;
        for (e, epoch) in epochs.iter().enumerate() {
            let fold = &splits[e][f];
            match model.update(&epoch.select_rows(&fold.train)) {
                Ok(info) => iterations.push(info.iters),
                Err(err) => {
                    debug!("{} fold {f} epoch {}: {err}", method.name(), e + 1);
                    rmse_failed[e] = true;
                    continue;
                }
            }
            let test = epoch.select_rows(&fold.test);
            let yhat = match model.predict(&test.x) {
                Ok(v) => v,
                Err(_) => {
                    rmse_failed[e] = true;
                    continue;
                }
            };
            match rmse(&test.y, &yhat) {
                Ok(v) if v.is_finite() => rmse_sum[e] += v,
                _ => rmse_failed[e] = true,
            }
            if let Ok(m) = mape(&test.y, &yhat) {
                if m.value.is_finite() {
                    mape_vals[e].push(m.value);
                }
            }
        }
    }
    let rmse = (0..t_len)
        .map(|e| (!rmse_failed[e]).then(|| rmse_sum[e] / k as f64))
        .collect();
    let mape = (0..t_len)
        .map(|e| {
            let v = &mape_vals[e];
            (!rmse_failed[e] && !v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
        })
        .collect();
    Ok(Evaluation {
        rmse,
        mape,
        iterations,
    })
}

/// State after fitting every row of every epoch.
fn full_fit(epochs: &[EpochData], method: Method, seq: &SequentialConfig) -> Result<Checkpoint> {
    let mut model =
        SequentialModel::new(method, *seq).map_err(|e| HarnessError::Config(e.to_string()))?;
    for epoch in epochs {
        model
            .update(epoch)
            .map_err(|e| HarnessError::Numerical(e.to_string()))?;
    }
    model
        .state()
        .map(Checkpoint::from)
        .ok_or_else(|| HarnessError::Numerical("no state after fitting".into()))
}

/// Writes the report, aggregates, plot data, score tables, summary and
/// checkpoints into `dir`.
pub fn write_outputs(cfg: &ExperimentConfig, result: &ExperimentResult, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    result.report.write_csv(&dir.join("report.csv"))?;
    write_rows(&dir.join("aggregate.csv"), &result.report.aggregates())?;
    for &m in &cfg.metrics {
        let name = match m {
            Metric::Rmse => "plot_data.csv".to_string(),
            other => format!("plot_data_{}.csv", other.name()),
        };
        write_rows(&dir.join(name), &result.report.plot_data(m.name()))?;
    }
    for s in &result.seeds {
        if !s.irs_scores.is_empty() {
            write_rows(&dir.join(format!("scores_seed{}.csv", s.seed)), &s.irs_scores)?;
        }
        if !s.lasso_scores.is_empty() {
            write_rows(&dir.join(format!("lasso_scores_seed{}.csv", s.seed)), &s.lasso_scores)?;
        }
        if !s.checkpoints.is_empty() {
            let cp_dir = dir.join("checkpoints");
            fs::create_dir_all(&cp_dir).map_err(|e| HarnessError::io(&cp_dir, e))?;
            for (kind, cp) in &s.checkpoints {
                cp.save(&cp_dir.join(format!("{}_seed{}.json", kind.name(), s.seed)))?;
            }
        }
    }
    write_json(&dir.join("summary.json"), &result.summary(cfg))
}

/// Grid scores for the first seed's stream, as emitted by `irs tune`.
pub fn run_tuning(cfg: &ExperimentConfig) -> Result<(Hyperparams, Vec<ScoreRow>)> {
    cfg.validate()?;
    let seed = cfg.seeds[0];
    let grid = cfg.grid_spec(seed).ok_or_else(|| {
        HarnessError::Config("tuning requires hyperparams in grid mode".into())
    })?;
    let stream = obtain_stream(&cfg.stream, seed)?;
    grid_search(&stream.epochs, &grid, &cfg.sequential_config()).map_err(|e| match e {
        irs_core::Error::NoFeasibleHyperparameters => HarnessError::Numerical(e.to_string()),
        other => HarnessError::Config(other.to_string()),
    })
}
