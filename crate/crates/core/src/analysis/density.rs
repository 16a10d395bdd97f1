use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::ensemble_map;
use crate::error::{invalid, Error, Result};
use crate::noise::NoiseSheet;
use crate::solver::{picard_solve, MildSystem, PicardConfig};

const MIN_SAMPLES: usize = 200;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityEstimate {
    pub n_samples: usize,
    pub mean: f64,
    pub variance: f64,
    pub atom_detected: bool,
    /// Zero when an atom is detected.
    pub bandwidth: f64,
    pub grid: Vec<f64>,
    pub density: Vec<f64>,
    /// Trapezoid integral of `density` over `grid` (1 for an atom).
    pub integral: f64,
}

fn moments(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

fn is_atom(mean: f64, var: f64) -> bool {
    var < 1e-20 * (1.0 + mean * mean)
}

/// `1.06 sigma n^(-1/5)`.
pub fn silverman_bandwidth(samples: &[f64]) -> f64 {
    let (_, var) = moments(samples);
    1.06 * var.sqrt() * (samples.len() as f64).powf(-0.2)
}

fn default_grid(samples: &[f64], bw: f64) -> Vec<f64> {
    let lo = samples.iter().copied().fold(f64::INFINITY, f64::min) - 8.0 * bw;
    let hi = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max) + 8.0 * bw;
    let cells = ((hi - lo) / (bw / 8.0)).ceil() as usize;
    (0..=cells).map(|k| lo + (hi - lo) * k as f64 / cells as f64).collect()
}

fn kde_values(samples: &[f64], bw: f64, grid: &[f64]) -> Vec<f64> {
    let norm = 1.0 / (samples.len() as f64 * bw * (2.0 * PI).sqrt());
    grid.iter()
        .map(|&x| {
            norm * samples
                .iter()
                .map(|&s| {
                    let z = (x - s) / bw;
                    if z.abs() < 40.0 {
                        (-0.5 * z * z).exp()
                    } else {
                        0.0
                    }
                })
                .sum::<f64>()
        })
        .collect()
}

fn trapezoid(grid: &[f64], f: &[f64]) -> f64 {
    grid.windows(2)
        .zip(f.windows(2))
        .map(|(x, y)| 0.5 * (x[1] - x[0]) * (y[0] + y[1]))
        .sum()
}

/// Gaussian kernel density estimate. Without `bandwidth` the Silverman rule
/// is used; without `grid` the estimate is evaluated on
/// `[min - 8 bw, max + 8 bw]` with spacing at most `bw / 8`.
pub fn kde_density(samples: &[f64], bandwidth: Option<f64>, grid: Option<Vec<f64>>) -> Result<DensityEstimate> {
    if samples.len() < MIN_SAMPLES {
        return Err(Error::TooFewSamples(format!(
            "density estimation needs at least {MIN_SAMPLES} samples, got {}",
            samples.len()
        )));
    }
    if samples.iter().any(|x| !x.is_finite()) {
        return Err(invalid("samples", "non-finite sample"));
    }
    let (mean, variance) = moments(samples);
    if is_atom(mean, variance) {
        return Ok(DensityEstimate {
            n_samples: samples.len(),
            mean,
            variance,
            atom_detected: true,
            bandwidth: 0.0,
            grid: Vec::new(),
            density: Vec::new(),
            integral: 1.0,
        });
    }
    let bw = bandwidth.unwrap_or_else(|| silverman_bandwidth(samples));
    if !(bw > 0.0) {
        return Err(invalid("bandwidth", format!("must be > 0, got {bw}")));
    }
    let grid = grid.unwrap_or_else(|| default_grid(samples, bw));
    let density = kde_values(samples, bw, &grid);
    let integral = trapezoid(&grid, &density);
    Ok(DensityEstimate {
        n_samples: samples.len(),
        mean,
        variance,
        atom_detected: false,
        bandwidth: bw,
        grid,
        density,
        integral,
    })
}

/// `sup |f_bw - f_{bw/2}| / sup f_bw` on the grid of the halved bandwidth.
pub fn bandwidth_stability(samples: &[f64]) -> Result<f64> {
    let bw = silverman_bandwidth(samples);
    let fine = kde_density(samples, Some(0.5 * bw), None)?;
    if fine.atom_detected {
        return Ok(0.0);
    }
    let coarse = kde_values(samples, bw, &fine.grid);
    let peak = coarse.iter().copied().fold(0.0, f64::max);
    let change = coarse
        .iter()
        .zip(&fine.density)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    Ok(change / peak)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub t: f64,
    pub t_index: usize,
    pub noise_has_acted: bool,
    pub estimate: DensityEstimate,
    /// `None` for an atom.
    pub bandwidth_change: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DichotomyReport {
    pub x: f64,
    pub x_index: usize,
    pub seeds: usize,
    pub observations: Vec<Observation>,
}

/// Samples `u(t, x)` over seeded sheets at each observation time and
/// estimates its law. `t_obs` are snapped to the nearest grid time, `x` to
/// the nearest node.
pub fn dichotomy_experiment(
    u0: &[f64],
    sys: &MildSystem<'_>,
    config: &PicardConfig,
    t_obs: &[f64],
    x: f64,
    seeds: &[u64],
) -> Result<DichotomyReport> {
    let time = *sys.table.time();
    let space = *sys.table.space();
    let x_index = ((x / space.h()).round() as usize).clamp(1, space.len()) - 1;
    let t_index: Vec<usize> = t_obs
        .iter()
        .map(|&t| ((t / time.dt()).round() as usize).min(time.steps()))
        .collect();
    let runs = ensemble_map(seeds, |&seed| -> Result<Vec<f64>> {
        let sheet = NoiseSheet::sample(seed, time, space);
        let path = picard_solve(u0, &sheet, sys, config)?.require_converged()?;
        Ok(t_index.iter().map(|&i| path.value(i, x_index)).collect())
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let mut observations = Vec::with_capacity(t_obs.len());
    for (k, &i) in t_index.iter().enumerate() {
        let samples: Vec<f64> = runs.iter().map(|r| r[k]).collect();
        let estimate = kde_density(&samples, None, None)?;
        let bandwidth_change = if estimate.atom_detected {
            None
        } else {
            Some(bandwidth_stability(&samples)?)
        };
        let noise_has_acted = (0..i).any(|c| !sys.noise.vanishes_at(time.t(c)));
        observations.push(Observation {
            t: time.t(i),
            t_index: i,
            noise_has_acted,
            estimate,
            bandwidth_change,
        });
    }
    Ok(DichotomyReport {
        x: space.node(x_index),
        x_index,
        seeds: seeds.len(),
        observations,
    })
}
