use std::f64::consts::{PI, SQRT_2};

use serde::{Deserialize, Serialize};

use super::{FieldPath, PathMeta};
use crate::error::{invalid, Error, Result};
use crate::kernel::dot;
use crate::model::{advection_nonlinearity, reaction_expanded, ModelParams, NoiseCoefficient};
use crate::noise::NoiseSheet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stepping {
    /// Linear part integrated exactly, nonlinearity and noise explicit.
    #[default]
    Exponential,
    /// Backward Euler on the linear part.
    SemiImplicit,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GalerkinConfig {
    pub n_modes: usize,
    #[serde(default)]
    pub stepping: Stepping,
}

impl GalerkinConfig {
    pub fn new(n_modes: usize) -> Self {
        Self {
            n_modes,
            stepping: Stepping::Exponential,
        }
    }
}

/// Spectral Galerkin solve in the sine basis `sqrt(2) sin(q pi x)`, with the
/// nonlinear drift and noise evaluated on the grid and projected.
pub fn galerkin_solve(
    u0: &[f64],
    sheet: &NoiseSheet,
    params: &ModelParams,
    noise: &dyn NoiseCoefficient,
    config: &GalerkinConfig,
) -> Result<FieldPath> {
    params.validate()?;
    let space = *sheet.space();
    let time = *sheet.time();
    let m = space.len();
    let nq = config.n_modes;
    if nq == 0 || nq > m {
        return Err(invalid("n_modes", format!("need 1 <= n_modes <= m = {m}, got {nq}")));
    }
    if u0.len() != m {
        return Err(Error::ShapeMismatch {
            expected: format!("u0 with {m} nodes"),
            actual: u0.len().to_string(),
        });
    }
    if (time.horizon() - params.horizon).abs() > 1e-12 * params.horizon {
        return Err(invalid("T", "sheet horizon differs from the model horizon"));
    }
    let h = space.h();
    let dt = time.dt();
    let nu = params.kernel_diffusivity();
    let nodes = space.nodes();
    let sin_b: Vec<Vec<f64>> = (1..=nq)
        .map(|q| nodes.iter().map(|&y| SQRT_2 * (q as f64 * PI * y).sin()).collect())
        .collect();
    let cos_b: Vec<Vec<f64>> = (1..=nq)
        .map(|q| {
            let k = q as f64 * PI;
            nodes.iter().map(|&y| SQRT_2 * k * (k * y).cos()).collect()
        })
        .collect();
    let lam: Vec<f64> = (1..=nq).map(|q| nu * (q as f64 * PI).powi(2)).collect();
    let decay: Vec<f64> = lam.iter().map(|l| (-l * dt).exp()).collect();
    let half_decay: Vec<f64> = lam.iter().map(|l| (-0.5 * l * dt).exp()).collect();
    let phi_dt: Vec<f64> = lam.iter().map(|l| -(-l * dt).exp_m1() / l).collect();

    let mut a: Vec<f64> = sin_b.iter().map(|b| h * dot(b, u0)).collect();
    let mut rows = Vec::with_capacity(time.steps() + 1);
    rows.push(u0.to_vec());
    let mut u = u0.to_vec();
    let mut reac = vec![0.0; m];
    let mut adv = vec![0.0; m];
    let mut src = vec![0.0; m];
    let c_adv = params.alpha / (params.delta as f64 + 1.0);
    for i in 0..time.steps() {
        let t = time.t(i);
        for j in 0..m {
            reac[j] = params.beta * reaction_expanded(u[j], params.gamma, params.delta);
            adv[j] = c_adv * advection_nonlinearity(u[j], params.delta);
        }
        let noisy = !noise.vanishes_at(t);
        if noisy {
            let dw = sheet.row(i);
            for j in 0..m {
                src[j] = noise.evaluate(t, nodes[j], u[j]) * dw[j];
            }
        }
        for q in 0..nq {
            let drift = h * (dot(&sin_b[q], &reac) + dot(&cos_b[q], &adv));
            let kick = if noisy { dot(&sin_b[q], &src) } else { 0.0 };
            a[q] = match config.stepping {
                Stepping::Exponential => decay[q] * a[q] + phi_dt[q] * drift + half_decay[q] * kick,
                Stepping::SemiImplicit => (a[q] + dt * drift + kick) / (1.0 + lam[q] * dt),
            };
        }
        for (j, uj) in u.iter_mut().enumerate() {
            *uj = (0..nq).map(|q| a[q] * sin_b[q][j]).sum();
        }
        if let Some(j) = u.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                time_index: i + 1,
                node: j,
            });
        }
        rows.push(u.clone());
    }
    FieldPath::new(
        time,
        space,
        rows,
        PathMeta {
            scheme: "galerkin".into(),
            truncation: None,
            seed: sheet.seed(),
            lambda: None,
            iterations: None,
        },
    )
}
