use serde::{Deserialize, Serialize};

use super::ensemble_map;
use crate::error::{invalid, Error, Result};
use crate::noise::NoiseSheet;
use crate::solver::{picard_solve, FieldPath, MildSystem, PicardConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub paths: usize,
    /// Interior cells checked, summed over paths and ordered pairs.
    pub cells_checked: usize,
    pub violation_cells: usize,
    /// Largest `u - v` seen, positive or not.
    pub max_violation: f64,
    /// Largest per-path tolerance used.
    pub tol: f64,
    /// Seeds with at least one violating cell.
    pub violating_seeds: Vec<u64>,
}

/// `10 (h^2 + sqrt(dt)) scale`.
pub fn comparison_tolerance(h: f64, dt: f64, scale: f64) -> f64 {
    10.0 * (h * h + dt.sqrt()) * scale
}

/// Cells where `lower - upper > tol`, and the largest `lower - upper`.
pub fn compare_paths(lower: &FieldPath, upper: &FieldPath, tol: f64) -> Result<(usize, f64)> {
    lower.sup_diff(upper)?;
    let mut count = 0;
    let mut worst = f64::NEG_INFINITY;
    for (a, b) in lower.rows().iter().flatten().zip(upper.rows().iter().flatten()) {
        let e = a - b;
        worst = worst.max(e);
        if e > tol {
            count += 1;
        }
    }
    Ok((count, worst))
}

/// Solves every initial condition of the chain `inits[0] <= inits[1] <= ...`
/// on a shared sheet per seed and checks that the ordering persists.
/// `tol = None` selects [`comparison_tolerance`] per path.
pub fn ordering_check(
    inits: &[Vec<f64>],
    sys: &MildSystem<'_>,
    config: &PicardConfig,
    seeds: &[u64],
    tol: Option<f64>,
) -> Result<ComparisonReport> {
    if inits.len() < 2 {
        return Err(invalid("inits", "need at least two initial conditions"));
    }
    for pair in inits.windows(2) {
        if pair[0].len() != pair[1].len() {
            return Err(Error::ShapeMismatch {
                expected: pair[0].len().to_string(),
                actual: pair[1].len().to_string(),
            });
        }
        if let Some(j) = (0..pair[0].len()).find(|&j| pair[0][j] > pair[1][j]) {
            return Err(Error::OrderingHypothesis {
                node: j,
                u0: pair[0][j],
                v0: pair[1][j],
            });
        }
    }
    let time = *sys.table.time();
    let space = *sys.table.space();
    let per_seed = ensemble_map(seeds, |&seed| -> Result<(u64, usize, f64, f64)> {
        let sheet = NoiseSheet::sample(seed, time, space);
        let paths = inits
            .iter()
            .map(|u0| picard_solve(u0, &sheet, sys, config)?.require_converged())
            .collect::<Result<Vec<_>>>()?;
        let scale = paths.iter().map(FieldPath::sup_norm).fold(0.0, f64::max);
        let tol = tol.unwrap_or_else(|| comparison_tolerance(space.h(), time.dt(), scale));
        let (mut count, mut worst) = (0, f64::NEG_INFINITY);
        for pair in paths.windows(2) {
            let (c, w) = compare_paths(&pair[0], &pair[1], tol)?;
            count += c;
            worst = worst.max(w);
        }
        Ok((seed, count, worst, tol))
    });
    let mut report = ComparisonReport {
        paths: seeds.len(),
        cells_checked: seeds.len() * (inits.len() - 1) * (time.steps() + 1) * space.len(),
        violation_cells: 0,
        max_violation: f64::NEG_INFINITY,
        tol: 0.0,
        violating_seeds: Vec::new(),
    };
    for r in per_seed {
        let (seed, count, worst, tol) = r?;
        report.violation_cells += count;
        report.max_violation = report.max_violation.max(worst);
        report.tol = report.tol.max(tol);
        if count > 0 {
            report.violating_seeds.push(seed);
        }
    }
    Ok(report)
}

/// [`ordering_check`] for the pair `u0 <= v0`.
pub fn comparison_check(
    u0: &[f64],
    v0: &[f64],
    sys: &MildSystem<'_>,
    config: &PicardConfig,
    seeds: &[u64],
    tol: Option<f64>,
) -> Result<ComparisonReport> {
    ordering_check(&[u0.to_vec(), v0.to_vec()], sys, config, seeds, tol)
}
