use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::grid::{SpatialGrid, TimeGrid};
use crate::kernel::{KernelConfig, KernelTable};
use crate::model::{ModelParams, NoiseCoefficient};
use crate::noise::NoiseSheet;
use crate::solver::{galerkin_solve, picard_solve, FieldPath, GalerkinConfig, MildSystem, PicardConfig};

/// Least-squares slope of `log err` against `log step`.
pub fn observed_order(steps: &[f64], errors: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> = steps
        .iter()
        .zip(errors)
        .filter(|(s, e)| **s > 0.0 && **e > 0.0)
        .map(|(s, e)| (s.ln(), e.ln()))
        .collect();
    let n = pts.len() as f64;
    if pts.len() < 2 {
        return f64::NAN;
    }
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Refinement {
    /// Halve `h` only; the time grid stays at the finest level.
    Space,
    /// Halve `dt` only.
    Time,
    /// Halve both.
    Joint,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StudyScheme {
    Mild,
    Galerkin,
}

/// What each level is compared against.
#[derive(Clone, Copy)]
pub enum Reference<'f> {
    /// The finest level of the study.
    Finest,
    /// A known solution `u(t, x)`.
    Exact(&'f (dyn Fn(f64, f64) -> f64 + Sync)),
}

pub struct StudySpec<'a> {
    pub params: ModelParams,
    pub noise: &'a dyn NoiseCoefficient,
    pub u0: &'a (dyn Fn(f64) -> f64 + Sync),
    pub finest_m: usize,
    pub finest_n: usize,
    /// Number of levels, finest included.
    pub levels: usize,
    pub refinement: Refinement,
    pub scheme: StudyScheme,
    /// `None` runs the study on a zero sheet.
    pub seed: Option<u64>,
    pub reference: Reference<'a>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelError {
    pub m: usize,
    pub n: usize,
    pub h: f64,
    pub dt: f64,
    pub error: f64,
    /// Difference to the next finer level; `None` for exact references.
    pub increment: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub refinement: Refinement,
    pub scheme: StudyScheme,
    /// Coarsest first; the finest level is omitted when it is the reference.
    pub levels: Vec<LevelError>,
    /// Slope against `h` (space, joint) or `dt` (time), fitted to the
    /// errors for exact references and to the level increments otherwise.
    pub order: f64,
    /// False when errors fail to decrease monotonically under refinement.
    pub monotone: bool,
}

fn solve(spec: &StudySpec<'_>, sheet: &NoiseSheet) -> Result<FieldPath> {
    let space = *sheet.space();
    let u0 = space.sample(spec.u0);
    match spec.scheme {
        StudyScheme::Mild => {
            let table = KernelTable::new(
                space,
                *sheet.time(),
                spec.params.kernel_diffusivity(),
                KernelConfig::default(),
            )?;
            let sys = MildSystem::new(spec.params, spec.noise, &table)?;
            Ok(picard_solve(&u0, sheet, &sys, &PicardConfig::march())?.path)
        }
        StudyScheme::Galerkin => {
            galerkin_solve(&u0, sheet, &spec.params, spec.noise, &GalerkinConfig::new(space.len()))
        }
    }
}

/// `max |coarse - fine|` over coarse grid points, matched to fine nodes and times.
fn coupled_error(coarse: &FieldPath, fine: &FieldPath) -> f64 {
    let ts = fine.time().steps() / coarse.time().steps();
    let xs = (fine.space().len() + 1) / (coarse.space().len() + 1);
    let mut err = 0.0f64;
    for i in 0..=coarse.time().steps() {
        for j in 0..coarse.space().len() {
            err = err.max((coarse.value(i, j) - fine.value(i * ts, (j + 1) * xs - 1)).abs());
        }
    }
    err
}

fn exact_error(path: &FieldPath, exact: &dyn Fn(f64, f64) -> f64) -> f64 {
    let mut err = 0.0f64;
    for i in 0..=path.time().steps() {
        let t = path.time().t(i);
        for j in 0..path.space().len() {
            err = err.max((path.value(i, j) - exact(t, path.space().node(j))).abs());
        }
    }
    err
}

/// Solves on a hierarchy of grids whose noise is the finest sheet summed
/// onto coarser cells, and measures the error per level.
pub fn convergence_study(spec: &StudySpec<'_>) -> Result<ConvergenceReport> {
    let need = if matches!(spec.reference, Reference::Finest) {
        3
    } else {
        2
    };
    if spec.levels < need {
        return Err(invalid("levels", format!("need at least {need} refinement levels")));
    }
    let space = SpatialGrid::new(spec.finest_m)?;
    let time = TimeGrid::new(spec.params.horizon, spec.finest_n)?;
    let finest = match spec.seed {
        Some(s) => NoiseSheet::sample(s, time, space),
        None => NoiseSheet::zeros(time, space),
    };
    let mut sheets = vec![finest];
    for _ in 1..spec.levels {
        let last = sheets.last().expect("non-empty");
        let next = match spec.refinement {
            Refinement::Space => last.coarsen_space()?,
            Refinement::Time => last.coarsen_time()?,
            Refinement::Joint => last.coarsen()?,
        };
        sheets.push(next);
    }
    let paths = sheets.iter().map(|s| solve(spec, s)).collect::<Result<Vec<_>>>()?;
    let mut levels = Vec::new();
    for (k, path) in paths.iter().enumerate().rev() {
        let (error, increment) = match spec.reference {
            Reference::Finest if k == 0 => continue,
            Reference::Finest => (coupled_error(path, &paths[0]), Some(coupled_error(path, &paths[k - 1]))),
            Reference::Exact(f) => (exact_error(path, f), None),
        };
        levels.push(LevelError {
            m: path.space().len(),
            n: path.time().steps(),
            h: path.space().h(),
            dt: path.time().dt(),
            error,
            increment,
        });
    }
    let steps: Vec<f64> = levels
        .iter()
        .map(|l| if spec.refinement == Refinement::Time { l.dt } else { l.h })
        .collect();
    let errors: Vec<f64> = levels.iter().map(|l| l.error).collect();
    let fitted: Vec<f64> = levels.iter().map(|l| l.increment.unwrap_or(l.error)).collect();
    let order = observed_order(&steps, &fitted);
    let monotone = errors.windows(2).all(|w| w[1] <= w[0]);
    Ok(ConvergenceReport {
        refinement: spec.refinement,
        scheme: spec.scheme,
        levels,
        order,
        monotone,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_of_exact_power_law() {
        let h = [0.1, 0.05, 0.025];
        let e: Vec<f64> = h.iter().map(|x: &f64| 3.0 * x.powi(2)).collect();
        assert!((observed_order(&h, &e) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn zero_problem_has_zero_errors() {
        let params = ModelParams::new(1.0, 0.5, 0.5, 0.5, 1, 0.2).unwrap();
        let zero = |_x: f64| 0.0;
        let spec = StudySpec {
            params,
            noise: &crate::NoisePreset::Zero,
            u0: &zero,
            finest_m: 31,
            finest_n: 40,
            levels: 3,
            refinement: Refinement::Joint,
            scheme: StudyScheme::Mild,
            seed: Some(1),
            reference: Reference::Finest,
        };
        let r = convergence_study(&spec).unwrap();
        assert!(r.levels.iter().all(|l| l.error == 0.0));
    }
}
