//! Property tests for the invariants of the shared types, the folds and the
//! selection rule.

use irs_core::estimator::soft_threshold;
use irs_core::model::{predict_response, standardize, validate_epoch};
use irs_core::tuning::{kfold_split, select_best, ScoreRow};
use irs_core::EpochData;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn epoch_strategy() -> impl Strategy<Value = EpochData> {
    (2usize..12, 1usize..5).prop_flat_map(|(n, p)| {
        (
            prop::collection::vec(-100.0f64..100.0, n * p),
            prop::collection::vec(-100.0f64..100.0, n),
        )
            .prop_map(move |(xs, ys)| {
                EpochData::new(DMatrix::from_vec(n, p, xs), DVector::from_vec(ys), 0)
            })
    })
}

proptest! {
    #[test]
    fn standardize_is_idempotent(d in epoch_strategy()) {
        let (once, _) = standardize(&d).unwrap();
        let (twice, _) = standardize(&once).unwrap();
        prop_assert!((&once.x - &twice.x).amax() < 1e-10);
        prop_assert!((&once.y - &twice.y).amax() < 1e-10);
    }

    #[test]
    fn standardized_valid_epochs_stay_valid(d in epoch_strategy()) {
        prop_assume!(validate_epoch(&d, d.p()).is_valid());
        let (s, scaler) = standardize(&d).unwrap();
        prop_assert!(validate_epoch(&s, d.p()).is_valid());
        for j in 0..s.p() {
            let col = s.x.column(j);
            prop_assert!(col.mean().abs() < 1e-12);
            if !scaler.constant[j] {
                let var = col.norm_squared() / (s.n() - 1) as f64;
                prop_assert!((var - 1.0).abs() < 1e-10);
            }
        }
        prop_assert!(s.y.mean().abs() < 1e-12);
    }

    #[test]
    fn prediction_is_linear(
        d in epoch_strategy(),
        a in -3.0f64..3.0,
        b in -3.0f64..3.0,
        seed in any::<u64>(),
    ) {
        let p = d.p();
        let t1 = DVector::from_fn(p, |i, _| ((seed >> (i % 60)) & 7) as f64 - 3.5);
        let t2 = DVector::from_fn(p, |i, _| ((seed >> ((i + 3) % 60)) & 5) as f64 - 2.0);
        let lhs = predict_response(&(&t1 * a + &t2 * b), &d.x).unwrap();
        let rhs = predict_response(&t1, &d.x).unwrap() * a + predict_response(&t2, &d.x).unwrap() * b;
        let scale = lhs.amax().max(1.0);
        prop_assert!((lhs - rhs).amax() < 1e-12 * scale);
    }

    #[test]
    fn folds_partition_the_rows(n in 2usize..200, k_frac in 0.0f64..1.0, seed in any::<u64>()) {
        let k = 2 + ((n - 2) as f64 * k_frac) as usize;
        let folds = kfold_split(n, k, seed).unwrap();
        prop_assert_eq!(folds.len(), k);
        let mut seen = vec![0usize; n];
        for f in &folds {
            prop_assert_eq!(f.train.len() + f.test.len(), n);
            for &i in &f.test {
                seen[i] += 1;
            }
            prop_assert!(f.train.iter().all(|i| !f.test.contains(i)));
        }
        prop_assert!(seen.iter().all(|&c| c == 1));
        let sizes: Vec<usize> = folds.iter().map(|f| f.test.len()).collect();
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        prop_assert_eq!(kfold_split(n, k, seed).unwrap(), folds);
    }

    #[test]
    fn selection_ignores_table_order(
        rows in prop::collection::vec((0u8..4, 0u8..4, 0u8..3), 1..16),
        rotate in 0usize..16,
    ) {
        let table: Vec<ScoreRow> = rows
            .iter()
            .map(|&(l, t, s)| ScoreRow { lambda: l as f64, tau: t as f64, rmse: s as f64 })
            .collect();
        let mut shuffled = table.clone();
        shuffled.rotate_left(rotate % table.len());
        shuffled.reverse();
        prop_assert_eq!(select_best(&table).unwrap(), select_best(&shuffled).unwrap());
    }

    #[test]
    fn soft_threshold_shrinks_toward_zero(x in -1e3f64..1e3, nu in 0.0f64..1e3) {
        let s = soft_threshold(x, nu);
        prop_assert!(s.abs() <= x.abs());
        prop_assert!(s == 0.0 || s.signum() == x.signum());
        prop_assert!((x - s).abs() <= nu + 1e-12);
    }
}
