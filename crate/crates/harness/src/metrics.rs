//! Prediction-error metrics.

use nalgebra::DVector;

use crate::error::{HarnessError, Result};

/// Responses with `|y|` at or below this are excluded from MAPE.
pub const MAPE_ZERO_TOL: f64 = 1e-12;

/// `sqrt(mean((y - yhat)^2))`.
pub fn rmse(y: &DVector<f64>, yhat: &DVector<f64>) -> Result<f64> {
    check_lengths(y, yhat)?;
    Ok(((y - yhat).norm_squared() / y.len() as f64).sqrt())
}

/// Mean absolute percentage error as a fraction, with the number of
/// near-zero responses that were skipped.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mape {
    pub value: f64,
    pub skipped: usize,
}

pub fn mape(y: &DVector<f64>, yhat: &DVector<f64>) -> Result<Mape> {
    check_lengths(y, yhat)?;
    let mut total = 0.0;
    let mut used = 0usize;
    for (a, b) in y.iter().zip(yhat.iter()) {
        if a.abs() > MAPE_ZERO_TOL {
            total += ((a - b) / a).abs();
            used += 1;
        }
    }
    if used == 0 {
        return Err(HarnessError::Data(
            "MAPE undefined: every response is zero".into(),
        ));
    }
    Ok(Mape {
        value: total / used as f64,
        skipped: y.len() - used,
    })
}

fn check_lengths(y: &DVector<f64>, yhat: &DVector<f64>) -> Result<()> {
    if y.len() != yhat.len() || y.is_empty() {
        return Err(HarnessError::Data(format!(
            "metric inputs must have equal non-zero length, got {} and {}",
            y.len(),
            yhat.len()
        )));
    }
    Ok(())
}
