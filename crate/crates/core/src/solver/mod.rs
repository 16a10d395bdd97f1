//! Solution paths and the three solution routes: the truncated mild
//! equation, spectral Galerkin, and the transformed equation for `v = u - phi`.

mod galerkin;
mod mild;

pub use galerkin::{galerkin_solve, GalerkinConfig, Stepping};
pub use mild::{
    apply_a, contraction_bracket, global_solve, picard_solve, select_lambda, stochastic_convolution,
    stochastic_convolution_variance, transformed_solve, Iteration, LambdaChoice, LambdaMode, MildSystem, PicardConfig,
    PicardOutcome, StoppingRecord,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{SpatialGrid, TimeGrid};
use crate::model::{lp_norm, TruncationLevel};

/// Provenance carried alongside a path.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PathMeta {
    pub scheme: String,
    pub truncation: Option<TruncationLevel>,
    pub seed: Option<u64>,
    pub lambda: Option<f64>,
    pub iterations: Option<usize>,
}

/// Values `u(t_i, x_j)` on interior nodes for `i = 0..=N`.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldPath {
    time: TimeGrid,
    space: SpatialGrid,
    values: Vec<Vec<f64>>,
    pub meta: PathMeta,
}

impl FieldPath {
    pub fn new(time: TimeGrid, space: SpatialGrid, values: Vec<Vec<f64>>, meta: PathMeta) -> Result<Self> {
        let (n, m) = (time.steps(), space.len());
        if values.len() != n + 1 || values.iter().any(|r| r.len() != m) {
            return Err(Error::ShapeMismatch {
                expected: format!("{}x{m}", n + 1),
                actual: format!("{}x{}", values.len(), values.first().map_or(0, Vec::len)),
            });
        }
        for (i, row) in values.iter().enumerate() {
            if let Some(j) = row.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite { time_index: i, node: j });
            }
        }
        Ok(Self {
            time,
            space,
            values,
            meta,
        })
    }

    pub fn zeros(time: TimeGrid, space: SpatialGrid) -> Self {
        Self {
            time,
            space,
            values: vec![vec![0.0; space.len()]; time.steps() + 1],
            meta: PathMeta::default(),
        }
    }

    pub fn time(&self) -> &TimeGrid {
        &self.time
    }

    pub fn space(&self) -> &SpatialGrid {
        &self.space
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.values
    }

    pub fn value(&self, i: usize, j: usize) -> f64 {
        self.values[i][j]
    }

    pub fn initial(&self) -> &[f64] {
        &self.values[0]
    }

    pub fn into_rows(self) -> Vec<Vec<f64>> {
        self.values
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().flatten().fold(0.0f64, |a, v| a.max(v.abs()))
    }

    /// Discrete `L^p` norm of time slice `i`.
    pub fn lp_norm(&self, i: usize, p: f64) -> f64 {
        lp_norm(&self.values[i], self.space.h(), p)
    }

    fn check_same_grid(&self, other: &Self) -> Result<()> {
        if self.time != other.time || self.space != other.space {
            return Err(Error::ShapeMismatch {
                expected: format!("{}x{}", self.time.steps(), self.space.len()),
                actual: format!("{}x{}", other.time.steps(), other.space.len()),
            });
        }
        Ok(())
    }

    /// `max |self - other|` over all grid points.
    pub fn sup_diff(&self, other: &Self) -> Result<f64> {
        self.check_same_grid(other)?;
        Ok(self
            .values
            .iter()
            .flatten()
            .zip(other.values.iter().flatten())
            .fold(0.0f64, |a, (x, y)| a.max((x - y).abs())))
    }

    /// Pointwise `self + c * other`.
    pub fn combine(&self, c: f64, other: &Self) -> Result<Self> {
        self.check_same_grid(other)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x + c * y).collect())
            .collect();
        Ok(Self {
            time: self.time,
            space: self.space,
            values,
            meta: self.meta.clone(),
        })
    }
}
