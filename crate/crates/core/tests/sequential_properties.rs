//! Statistical and structural properties of the sequential estimator and the
//! cross-validation score.

mod common;

use common::*;
use irs_core::estimator::{expand_model, irs_step, loss_parts};
use irs_core::sequential::{Method, SequentialConfig, SequentialModel};
use irs_core::simgen::{gen_exp1, gen_exp1_with, Exp1Config};
use irs_core::tuning::{cv_score, epoch_folds};
use irs_core::{
    DescentConfig, EpochData, Hyperparams, ModelState, NoiseSpec, PredictedState, StateTransition,
};
use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

#[test]
fn loss_terms_have_constant_expectation_at_the_truth() {
    let (n, p, tau, w2) = (500, 50, 0.7, 2.0f64);
    let mut r = rng(31);
    let sigma = spd(&mut r, p);
    let chol = sigma.clone().cholesky().unwrap().l();
    let hp = Hyperparams::new(0.0, tau).unwrap();
    let (mut fit, mut inertia) = (0.0, 0.0);
    let reps = 200;
    for _ in 0..reps {
        let theta_pred = gaussian_vector(&mut r, p);
        let theta = &theta_pred + &chol * gaussian_vector(&mut r, p);
        let x = gaussian_matrix(&mut r, n, p);
        let y = &x * &theta + gaussian_vector(&mut r, n) * w2.sqrt();
        let data = EpochData::new(x, y, 0);
        let pred = PredictedState::new(theta_pred, sigma.clone()).unwrap();
        let parts = loss_parts(&theta, &data, &pred, &NoiseSpec::Iid(w2), &hp, &theta).unwrap();
        fit += parts.fit / reps as f64;
        inertia += parts.inertia / reps as f64;
    }
    assert!((fit - 0.5).abs() < 0.05 * 0.5, "fit term mean {fit}");
    assert!((inertia - tau / 2.0).abs() < 0.05 * tau / 2.0, "inertia term mean {inertia}");
}

#[test]
fn zero_column_added_by_expansion_stays_zero() {
    let mut r = rng(32);
    let (n, p) = (60, 4);
    let x = gaussian_matrix(&mut r, n, p);
    let y = &x * DVector::from_vec(vec![1.0, -2.0, 0.5, 0.0]) + gaussian_vector(&mut r, n) * 0.1;
    let prev = ModelState::new(gaussian_vector(&mut r, p), DMatrix::identity(p, p), 1.0, 1).unwrap();
    let expanded = expand_model(&prev, 1, 100.0).unwrap();
    let mut wide = DMatrix::zeros(n, p + 1);
    wide.view_mut((0, 0), (n, p)).copy_from(&x);
    let data = EpochData::new(wide, y, 2);
    for lambda in [0.0, 0.1, 1.0] {
        let hp = Hyperparams::new(lambda, 0.5).unwrap();
        let trans = StateTransition::random_walk(p + 1, 0.1);
        let next = irs_step(&expanded, &data, &trans, &hp, &DescentConfig::default()).unwrap();
        assert_eq!(next.theta[p], 0.0);
    }
}

/// Estimate of coordinate 0 after each epoch when its column is zeroed from
/// epoch `k` (zero-based) on.
fn dead_predictor_path(seed: u64, lambda: f64, tau: f64, k: usize) -> Vec<f64> {
    let mut r = rng(seed);
    let p = 10;
    let mut theta = DVector::zeros(p);
    theta[0] = 1.5;
    theta[1] = -1.0;
    theta[2] = 0.8;
    let cfg = SequentialConfig {
        process_noise: 1.0,
        ..SequentialConfig::default()
    };
    let mut model = SequentialModel::new(Method::Irs { lambda, tau }, cfg).unwrap();
    (0..8)
        .map(|t| {
            let mut x = gaussian_matrix(&mut r, 100, p);
            if t >= k {
                x.column_mut(0).fill(0.0);
            }
            let y = &x * &theta + gaussian_vector(&mut r, 100);
            model.update(&EpochData::new(x, y, t)).unwrap();
            model.state().unwrap().theta[0]
        })
        .collect()
}

#[test]
fn vanished_predictor_decays_to_exact_zero() {
    for lambda in [0.1, 1.0] {
        let paths: Vec<Vec<f64>> = (0..20).map(|s| dead_predictor_path(s, lambda, 0.1, 3)).collect();
        let zeroed = paths.iter().filter(|p| p[7] == 0.0).count();
        assert!(zeroed >= 18, "lambda {lambda}: {zeroed}/20 reached zero");
        let mean_abs: Vec<f64> = (3..8)
            .map(|t| paths.iter().map(|p| p[t].abs()).sum::<f64>() / 20.0)
            .collect();
        assert!(mean_abs.windows(2).all(|w| w[1] <= w[0] + 1e-12), "{mean_abs:?}");
    }
}

#[test]
fn held_out_error_falls_over_three_epochs() {
    let (p, seeds) = (20, 20);
    let mut first = 0.0;
    let mut third = 0.0;
    let cfg = SequentialConfig {
        process_noise: 1.0,
        ..SequentialConfig::default()
    };
    for seed in 0..seeds {
        let stream = gen_exp1(p, 3, seed).unwrap();
        let truth = stream.truth.as_ref().unwrap();
        let mut model = SequentialModel::new(Method::Irs { lambda: 0.1, tau: 1.0 }, cfg).unwrap();
        let mut r = rng(1000 + seed);
        for (t, epoch) in stream.epochs.iter().enumerate() {
            model.update(epoch).unwrap();
            let x = gaussian_matrix(&mut r, 500, p);
            let y = &x * &truth[t] + gaussian_vector(&mut r, 500);
            let err = (model.predict(&x).unwrap() - y).norm() / (500f64).sqrt();
            match t {
                0 => first += err / seeds as f64,
                2 => third += err / seeds as f64,
                _ => {}
            }
        }
    }
    assert!(third <= first, "epoch-3 {third} vs epoch-1 {first}");
}

fn seq_cfg() -> SequentialConfig {
    SequentialConfig::default()
}

#[test]
fn noiseless_stream_scores_near_zero() {
    let cfg = Exp1Config {
        noise_sd: 0.0,
        ..Exp1Config::default()
    };
    let stream = gen_exp1_with(10, 3, 4, &cfg).unwrap();
    let hp = Hyperparams::new(0.0, 1e-12).unwrap();
    let score = cv_score(&stream.epochs, &hp, 5, 0, &seq_cfg());
    assert!(score < 1e-6, "{score}");
}

#[test]
fn overwhelming_penalty_scores_as_the_mean_predictor() {
    let stream = gen_exp1(10, 3, 5).unwrap();
    let (k, seed) = (5, 9);
    let huge = cv_score(&stream.epochs, &Hyperparams::new(1e12, 1.0).unwrap(), k, seed, &seq_cfg());
    let folds = epoch_folds(&stream.epochs, k, seed).unwrap();
    let (mut sse, mut count) = (0.0, 0usize);
    for (epoch, splits) in stream.epochs.iter().zip(&folds) {
        for f in splits {
            let mean = f.train.iter().map(|&i| epoch.y[i]).sum::<f64>() / f.train.len() as f64;
            sse += f.test.iter().map(|&i| (epoch.y[i] - mean).powi(2)).sum::<f64>();
            count += f.test.len();
        }
    }
    let oracle = (sse / count as f64).sqrt();
    assert!((huge - oracle).abs() < 1e-10 * oracle, "{huge} vs {oracle}");
    let tuned = cv_score(&stream.epochs, &Hyperparams::new(0.1, 1.0).unwrap(), k, seed, &seq_cfg());
    assert!(tuned < huge);
}

#[test]
fn score_ignores_row_order_within_folds_without_penalties() {
    let stream = gen_exp1(6, 3, 6).unwrap();
    let (k, seed) = (4, 2);
    let hp = Hyperparams::new(0.0, 0.0).unwrap();
    let base = cv_score(&stream.epochs, &hp, k, seed, &seq_cfg());
    let folds = epoch_folds(&stream.epochs, k, seed).unwrap();
    let mut r = rng(77);
    let shuffled: Vec<EpochData> = stream
        .epochs
        .iter()
        .zip(&folds)
        .map(|(epoch, splits)| {
            let mut order: Vec<usize> = (0..epoch.n()).collect();
            for f in splits {
                let mut members = f.test.clone();
                members.shuffle(&mut r);
                for (&slot, &src) in f.test.iter().zip(&members) {
                    order[slot] = src;
                }
            }
            epoch.select_rows(&order)
        })
        .collect();
    let permuted = cv_score(&shuffled, &hp, k, seed, &seq_cfg());
    assert!((base - permuted).abs() < 1e-9 * base, "{base} vs {permuted}");
}

#[test]
fn scores_are_deterministic() {
    let stream = gen_exp1(8, 3, 7).unwrap();
    let hp = Hyperparams::new(0.1, 1.0).unwrap();
    let a = cv_score(&stream.epochs, &hp, 5, 3, &seq_cfg());
    let b = cv_score(&stream.epochs, &hp, 5, 3, &seq_cfg());
    assert_eq!(a.to_bits(), b.to_bits());
}

#[test]
fn rank_deficient_epoch_without_inertia_scores_infinite() {
    let mut r = rng(33);
    let x = DMatrix::from_fn(8, 12, |_, _| r.sample::<f64, _>(StandardNormal));
    let y = gaussian_vector(&mut r, 8);
    let epochs = vec![EpochData::new(x, y, 0)];
    let score = cv_score(&epochs, &Hyperparams::new(0.1, 0.0).unwrap(), 2, 0, &seq_cfg());
    assert!(score.is_infinite());
}
