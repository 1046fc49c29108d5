//! Random instances shared by the integration tests.
#![allow(dead_code)]

use irs_core::{EpochData, ModelState, NoiseSpec, PredictedState};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_matrix(r: &mut ChaCha8Rng, n: usize, p: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, p, |_, _| r.sample(StandardNormal))
}

pub fn gaussian_vector(r: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| r.sample(StandardNormal))
}

/// Well-conditioned SPD matrix `B B' / p + 0.5 I`.
pub fn spd(r: &mut ChaCha8Rng, p: usize) -> DMatrix<f64> {
    let b = gaussian_matrix(r, p, p);
    &b * b.transpose() / p as f64 + DMatrix::identity(p, p) * 0.5
}

/// One epoch with a dense predicted state and i.i.d. noise.
pub struct Instance {
    pub data: EpochData,
    pub pred: PredictedState,
    pub noise: NoiseSpec,
    pub w2: f64,
}

pub fn instance(r: &mut ChaCha8Rng, n: usize, p: usize) -> Instance {
    let x = gaussian_matrix(r, n, p);
    let theta = gaussian_vector(r, p);
    let y = &x * &theta + gaussian_vector(r, n) * 0.5;
    let w2 = r.random_range(0.5..2.0);
    let pred = PredictedState::new(
        &theta + gaussian_vector(r, p) * 0.3,
        spd(r, p),
    )
    .unwrap();
    Instance {
        data: EpochData::new(x, y, 1),
        pred,
        noise: NoiseSpec::Iid(w2),
        w2,
    }
}

/// Previous state whose prediction under `F = I`, `Q = 0` is `pred`.
pub fn state_from(pred: &PredictedState, w2: f64) -> ModelState {
    ModelState::new(pred.theta_pred.clone(), pred.sigma_pred.clone(), w2, 1).unwrap()
}

/// Matrix with orthonormal columns from the QR factor of a Gaussian draw.
pub fn orthonormal(r: &mut ChaCha8Rng, n: usize, p: usize) -> DMatrix<f64> {
    gaussian_matrix(r, n, p).qr().q()
}

/// Coordinate-descent solution of `||y - X th||^2 + sum_i w_i |th_i|`.
pub fn coordinate_descent_lasso(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    weights: &[f64],
    start: &DVector<f64>,
) -> DVector<f64> {
    let p = x.ncols();
    let col_sq: Vec<f64> = (0..p).map(|j| x.column(j).norm_squared()).collect();
    let mut theta = start.clone();
    let mut resid = y - x * &theta;
    for _ in 0..100_000 {
        let mut max_change: f64 = 0.0;
        for j in 0..p {
            if col_sq[j] == 0.0 {
                continue;
            }
            let old = theta[j];
            let rho = x.column(j).dot(&resid) + col_sq[j] * old;
            let half = weights[j] / 2.0;
            let new = if rho > half {
                (rho - half) / col_sq[j]
            } else if rho < -half {
                (rho + half) / col_sq[j]
            } else {
                0.0
            };
            if new != old {
                resid.axpy(old - new, &x.column(j), 1.0);
                theta[j] = new;
                max_change = max_change.max((new - old).abs());
            }
        }
        if max_change < 1e-14 {
            break;
        }
    }
    theta
}

/// Minimizer of a unimodal function on `[lo, hi]` by golden-section search.
pub fn golden_section(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    while hi - lo > 1e-12 {
        let a = hi - g * (hi - lo);
        let b = lo + g * (hi - lo);
        if f(a) < f(b) {
            hi = b;
        } else {
            lo = a;
        }
    }
    (lo + hi) / 2.0
}
