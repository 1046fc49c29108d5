//! Synthetic streams with known coefficient paths.
//!
//! Both generators draw a sparse initial coefficient vector, evolve it across
//! epochs and observe it through i.i.d. standard normal designs with Gaussian
//! response noise. Every stream is a pure function of its arguments.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::EpochData;

/// Ordered epochs plus the coefficient vector that generated each one.
#[derive(Debug, Clone, PartialEq)]
pub struct DataStream {
    pub epochs: Vec<EpochData>,
    pub truth: Option<Vec<DVector<f64>>>,
    pub meta: StreamMeta,
}

impl DataStream {
    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }

    pub fn p(&self) -> usize {
        self.epochs.first().map_or(0, EpochData::p)
    }

    /// Checks that truth, when present, matches the epochs.
    pub fn validate(&self) -> Result<()> {
        if let Some(truth) = &self.truth {
            if truth.len() != self.epochs.len() {
                return Err(Error::DimensionMismatch(format!(
                    "{} truth vectors for {} epochs",
                    truth.len(),
                    self.epochs.len()
                )));
            }
            for (th, e) in truth.iter().zip(&self.epochs) {
                if th.len() != e.p() {
                    return Err(Error::DimensionMismatch(format!(
                        "truth of length {} for an epoch with {} columns",
                        th.len(),
                        e.p()
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Generator echo stored with a stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamMeta {
    pub p: usize,
    #[serde(rename = "T")]
    pub n_epochs: usize,
    pub seed: u64,
    pub source: StreamSource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum StreamSource {
    Exp1(Exp1Config),
    Exp2(Exp2Config),
    /// Loaded from files; the string names the origin.
    External { origin: String },
}

/// Initial coefficients, sample sizes and response noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Exp1Config {
    /// Fraction of nonzero coefficients at the first epoch.
    pub sparsity: f64,
    /// Variance of the per-epoch random-walk step of each active coefficient.
    pub walk_variance: f64,
    /// Sample sizes are uniform on `[ceil(n_min_factor p), floor(n_max_factor p)]`.
    pub n_min_factor: f64,
    pub n_max_factor: f64,
    /// Exchangeable correlation of the initial draw, in `[0, 1)`.
    pub init_correlation: f64,
    pub noise_sd: f64,
}

impl Default for Exp1Config {
    fn default() -> Self {
        Self {
            sparsity: 0.2,
            walk_variance: 1.0,
            n_min_factor: 1.8,
            n_max_factor: 2.1,
            init_correlation: 0.0,
            noise_sd: 1.0,
        }
    }
}

impl Exp1Config {
    pub fn validate(&self) -> Result<()> {
        let ok = (0.0..=1.0).contains(&self.sparsity)
            && self.walk_variance >= 0.0
            && self.n_min_factor > 0.0
            && self.n_max_factor >= self.n_min_factor
            && (0.0..1.0).contains(&self.init_correlation)
            && self.noise_sd >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid Exp-1 config: {self:?}")))
        }
    }

    /// Number of nonzero coefficients at the first epoch.
    pub fn active_count(&self, p: usize) -> usize {
        ceil_tol(self.sparsity * p as f64).min(p)
    }

    fn size_range(&self, p: usize) -> (usize, usize) {
        let lo = ceil_tol(self.n_min_factor * p as f64).max(2);
        let hi = floor_tol(self.n_max_factor * p as f64).max(lo);
        (lo, hi)
    }
}

/// How surviving coefficients move between epochs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum DriftMode {
    /// `th + e`.
    RandomWalk,
    /// `th (1 + g) + e` with `g ~ N(0, factor_var)` drawn per coordinate.
    Directional { factor_var: f64 },
}

/// Activation, deactivation and drift rules plus the sample-size schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Exp2Config {
    pub activation_prob: f64,
    pub deactivation_threshold: f64,
    pub deactivation_prob: f64,
    pub drift_mode: DriftMode,
    /// Standard deviation of the additive drift noise `e`.
    pub noise_sd: f64,
    /// Sample sizes fall linearly from `ceil(shrink_from p)` to
    /// `ceil(shrink_to p)`; otherwise they follow the Exp-1 range.
    pub shrink_samples: bool,
    pub shrink_from: f64,
    pub shrink_to: f64,
    pub init: Exp1Config,
}

impl Default for Exp2Config {
    fn default() -> Self {
        Self {
            activation_prob: 0.05,
            deactivation_threshold: 0.1,
            deactivation_prob: 0.1,
            drift_mode: DriftMode::Directional { factor_var: 0.1 },
            noise_sd: 1.0,
            shrink_samples: true,
            shrink_from: 2.0,
            shrink_to: 0.8,
            init: Exp1Config::default(),
        }
    }
}

impl Exp2Config {
    pub fn validate(&self) -> Result<()> {
        self.init.validate()?;
        let factor_ok = match self.drift_mode {
            DriftMode::RandomWalk => true,
            DriftMode::Directional { factor_var } => factor_var >= 0.0,
        };
        let ok = (0.0..=1.0).contains(&self.activation_prob)
            && (0.0..=1.0).contains(&self.deactivation_prob)
            && self.deactivation_threshold >= 0.0
            && self.noise_sd >= 0.0
            && self.shrink_from > 0.0
            && self.shrink_to > 0.0
            && factor_ok;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid Exp-2 config: {self:?}")))
        }
    }

    /// Sample size of epoch `t` (zero-based) out of `n_epochs`.
    pub fn shrink_size(&self, p: usize, t: usize, n_epochs: usize) -> usize {
        let a = self.shrink_from * p as f64;
        let b = self.shrink_to * p as f64;
        let frac = if n_epochs > 1 {
            t as f64 / (n_epochs - 1) as f64
        } else {
            0.0
        };
        ceil_tol(a + (b - a) * frac).max(2)
    }
}

/// Ceiling that ignores representation error just above an integer.
fn ceil_tol(x: f64) -> usize {
    (x - 1e-9).ceil().max(0.0) as usize
}

fn floor_tol(x: f64) -> usize {
    (x + 1e-9).floor().max(0.0) as usize
}

fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

/// Dense exchangeable-normal draw with the `ceil(sparsity p)` largest
/// magnitudes kept.
fn initial_theta<R: Rng + ?Sized>(p: usize, cfg: &Exp1Config, rng: &mut R) -> DVector<f64> {
    let common = normal(rng);
    let (a, b) = ((1.0 - cfg.init_correlation).sqrt(), cfg.init_correlation.sqrt());
    let dense = DVector::from_fn(p, |_, _| a * normal(rng) + b * common);
    let keep = cfg.active_count(p);
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&i, &j| dense[j].abs().total_cmp(&dense[i].abs()).then(i.cmp(&j)));
    let mut theta = DVector::zeros(p);
    for &i in &order[..keep] {
        theta[i] = dense[i];
    }
    theta
}

fn observe<R: Rng + ?Sized>(
    theta: &DVector<f64>,
    n: usize,
    noise_sd: f64,
    t: usize,
    rng: &mut R,
) -> EpochData {
    let p = theta.len();
    let x = DMatrix::from_fn(n, p, |_, _| normal(rng));
    let noise = DVector::from_fn(n, |_, _| noise_sd * normal(rng));
    let y = &x * theta + noise;
    EpochData::new(x, y, t)
}

/// Exp-1 stream with the default configuration.
pub fn gen_exp1(p: usize, n_epochs: usize, seed: u64) -> Result<DataStream> {
    gen_exp1_with(p, n_epochs, seed, &Exp1Config::default())
}

/// Sparse start, random walk on the active coefficients, sample sizes drawn
/// per epoch.
pub fn gen_exp1_with(p: usize, n_epochs: usize, seed: u64, cfg: &Exp1Config) -> Result<DataStream> {
    check_shape(p, n_epochs)?;
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = cfg.size_range(p);
    let walk_sd = cfg.walk_variance.sqrt();
    let mut theta = initial_theta(p, cfg, &mut rng);
    let mut epochs = Vec::with_capacity(n_epochs);
    let mut truth = Vec::with_capacity(n_epochs);
    for t in 0..n_epochs {
        if t > 0 {
            for v in theta.iter_mut().filter(|v| **v != 0.0) {
                *v += walk_sd * normal(&mut rng);
            }
        }
        let n = rng.random_range(lo..=hi);
        epochs.push(observe(&theta, n, cfg.noise_sd, t, &mut rng));
        truth.push(theta.clone());
    }
    Ok(DataStream {
        epochs,
        truth: Some(truth),
        meta: StreamMeta {
            p,
            n_epochs,
            seed,
            source: StreamSource::Exp1(*cfg),
        },
    })
}

/// One epoch of Exp-2 dynamics. Zero coefficients activate with a fresh
/// initial-distribution draw; small nonzero ones may deactivate; the rest
/// drift. Coordinates are processed in index order.
pub fn evolve_theta_exp2<R: Rng + ?Sized>(
    theta: &DVector<f64>,
    cfg: &Exp2Config,
    rng: &mut R,
) -> DVector<f64> {
    let mut next = theta.clone();
    for v in next.iter_mut() {
        if *v == 0.0 {
            if rng.random_bool(cfg.activation_prob) {
                *v = normal(rng);
            }
            continue;
        }
        if v.abs() < cfg.deactivation_threshold && rng.random_bool(cfg.deactivation_prob) {
            *v = 0.0;
            continue;
        }
        if let DriftMode::Directional { factor_var } = cfg.drift_mode {
            *v *= 1.0 + factor_var.sqrt() * normal(rng);
        }
        *v += cfg.noise_sd * normal(rng);
    }
    next
}

/// Exp-1 start followed by Exp-2 dynamics.
pub fn gen_exp2(p: usize, n_epochs: usize, seed: u64, cfg: &Exp2Config) -> Result<DataStream> {
    check_shape(p, n_epochs)?;
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = cfg.init.size_range(p);
    let mut theta = initial_theta(p, &cfg.init, &mut rng);
    let mut epochs = Vec::with_capacity(n_epochs);
    let mut truth = Vec::with_capacity(n_epochs);
    for t in 0..n_epochs {
        if t > 0 {
            theta = evolve_theta_exp2(&theta, cfg, &mut rng);
        }
        let n = if cfg.shrink_samples {
            cfg.shrink_size(p, t, n_epochs)
        } else {
            rng.random_range(lo..=hi)
        };
        epochs.push(observe(&theta, n, cfg.init.noise_sd, t, &mut rng));
        truth.push(theta.clone());
    }
    Ok(DataStream {
        epochs,
        truth: Some(truth),
        meta: StreamMeta {
            p,
            n_epochs,
            seed,
            source: StreamSource::Exp2(*cfg),
        },
    })
}

fn check_shape(p: usize, n_epochs: usize) -> Result<()> {
    if p < 2 || n_epochs < 1 {
        return Err(Error::InvalidArgument(format!(
            "need p >= 2 and T >= 1, got p = {p}, T = {n_epochs}"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exp1_desk_shape() {
        let s = gen_exp1(50, 9, 7).unwrap();
        assert_eq!(s.len(), 9);
        let truth = s.truth.as_ref().unwrap();
        assert_eq!(truth[0].iter().filter(|v| **v != 0.0).count(), 10);
        for e in &s.epochs {
            assert!((90..=105).contains(&e.n()));
        }
        s.validate().unwrap();
    }

    #[test]
    fn exp1_sparsity_pattern_is_preserved() {
        let s = gen_exp1(20, 5, 1).unwrap();
        let truth = s.truth.unwrap();
        let support = |v: &DVector<f64>| v.iter().map(|x| *x != 0.0).collect::<Vec<_>>();
        for th in &truth[1..] {
            assert_eq!(support(th), support(&truth[0]));
        }
    }

    #[test]
    fn size_bounds_tolerate_representation_error() {
        // 1.8 * 500 = 900.0000000000001 in floating point.
        let (lo, hi) = Exp1Config::default().size_range(500);
        assert_eq!((lo, hi), (900, 1050));
        assert_eq!(Exp1Config::default().active_count(500), 100);
    }

    #[test]
    fn exp2_all_dynamics_off_is_identity() {
        let cfg = Exp2Config {
            activation_prob: 0.0,
            deactivation_prob: 0.0,
            drift_mode: DriftMode::RandomWalk,
            noise_sd: 0.0,
            ..Exp2Config::default()
        };
        let th = DVector::from_vec(vec![0.0, 0.05, -1.2, 3.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(evolve_theta_exp2(&th, &cfg, &mut rng), th);
    }

    #[test]
    fn exp2_forced_activation() {
        let cfg = Exp2Config {
            activation_prob: 1.0,
            ..Exp2Config::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let out = evolve_theta_exp2(&DVector::zeros(30), &cfg, &mut rng);
        assert!(out.iter().all(|v| *v != 0.0));
    }

    #[test]
    fn exp2_shrinking_schedule() {
        let s = gen_exp2(50, 9, 2, &Exp2Config::default()).unwrap();
        let sizes: Vec<usize> = s.epochs.iter().map(EpochData::n).collect();
        assert_eq!(sizes[0], 100);
        assert_eq!(sizes[8], 40);
        assert!(sizes.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn rejects_degenerate_shapes() {
        assert!(gen_exp1(1, 3, 0).is_err());
        assert!(gen_exp1(5, 0, 0).is_err());
    }
}
