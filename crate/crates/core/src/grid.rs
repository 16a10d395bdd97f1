//! Uniform space and time grids.
//!
//! The spatial grid only stores interior nodes; the Dirichlet boundary values
//! at `x = 0` and `x = 1` are implicitly zero everywhere in the crate.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// `m` interior nodes `x_j = j h`, `j = 1..=m`, with `h = 1/(m+1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpatialGrid {
    m: usize,
}

impl SpatialGrid {
    pub fn new(m: usize) -> Result<Self> {
        if m < 3 {
            return Err(invalid("m", format!("need at least 3 interior nodes, got {m}")));
        }
        Ok(Self { m })
    }

    pub fn len(&self) -> usize {
        self.m
    }

    pub fn is_empty(&self) -> bool {
        self.m == 0
    }

    pub fn h(&self) -> f64 {
        1.0 / (self.m as f64 + 1.0)
    }

    /// Position of the interior node with zero-based index `j` (i.e. `x_{j+1}`).
    pub fn node(&self, j: usize) -> f64 {
        (j as f64 + 1.0) * self.h()
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.m).map(|j| self.node(j)).collect()
    }

    /// Evaluates `f` on the interior nodes.
    pub fn sample(&self, f: impl Fn(f64) -> f64) -> Vec<f64> {
        (0..self.m).map(|j| f(self.node(j))).collect()
    }
}

/// `n_steps` uniform steps on `[0, T]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    n_steps: usize,
    horizon: f64,
}

impl TimeGrid {
    pub fn new(horizon: f64, n_steps: usize) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(invalid("T", format!("must be positive and finite, got {horizon}")));
        }
        if n_steps == 0 {
            return Err(invalid("N", "need at least one time step"));
        }
        Ok(Self { n_steps, horizon })
    }

    pub fn steps(&self) -> usize {
        self.n_steps
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.n_steps as f64
    }

    /// `t_i = i dt`; `t(N)` returns `T` exactly.
    pub fn t(&self, i: usize) -> f64 {
        if i == self.n_steps {
            self.horizon
        } else {
            i as f64 * self.dt()
        }
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.n_steps).map(|i| self.t(i)).collect()
    }
}
