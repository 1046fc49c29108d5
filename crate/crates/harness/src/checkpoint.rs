//! Model-state checkpoints as JSON: `{theta, sigma (row-major), w2, t}`.

use std::path::Path;

use irs_core::ModelState;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::bundle::{read_json, write_json};
use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub theta: Vec<f64>,
    /// `p * p` entries in row-major order.
    pub sigma: Vec<f64>,
    pub w2: f64,
    pub t: usize,
}

impl From<&ModelState> for Checkpoint {
    fn from(state: &ModelState) -> Self {
        let p = state.dim();
        let sigma = (0..p)
            .flat_map(|i| (0..p).map(move |j| (i, j)))
            .map(|(i, j)| state.sigma[(i, j)])
            .collect();
        Self {
            theta: state.theta.iter().copied().collect(),
            sigma,
            w2: state.w2,
            t: state.t,
        }
    }
}

impl Checkpoint {
    pub fn to_state(&self) -> Result<ModelState> {
        let p = self.theta.len();
        if self.sigma.len() != p * p {
            return Err(HarnessError::Data(format!(
                "checkpoint sigma has {} entries, expected {}",
                self.sigma.len(),
                p * p
            )));
        }
        ModelState::new(
            DVector::from_vec(self.theta.clone()),
            DMatrix::from_row_slice(p, p, &self.sigma),
            self.w2,
            self.t,
        )
        .map_err(|e| HarnessError::Data(format!("invalid checkpoint: {e}")))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        read_json(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn row_major_round_trip() {
        let state = ModelState::new(
            DVector::from_vec(vec![0.5, -1.25]),
            DMatrix::from_row_slice(2, 2, &[2.0, 0.1, 0.1, 3.0]),
            0.7,
            4,
        )
        .unwrap();
        let cp = Checkpoint::from(&state);
        assert_eq!(cp.sigma, vec![2.0, 0.1, 0.1, 3.0]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("state.json");
        cp.save(&path).unwrap();
        assert_eq!(Checkpoint::load(&path).unwrap().to_state().unwrap(), state);
    }
}
