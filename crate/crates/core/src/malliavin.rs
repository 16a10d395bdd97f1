//! First-variation (Malliavin) derivative of the discrete solution with
//! respect to a single noise cell, solved along a frozen base path.
//!
//! The derivative obeys the linearization of the discrete mild map: its
//! source is `G(t - (r + 1/2) dt, x, z) g(t_r, z, u(t_r, z))` and its
//! coefficients `beta c'(u)`, `alpha u^delta` and `dg/dr(u) dW` are frozen
//! from the base path. The result is the exact derivative of the marching
//! scheme, so a noise bump of size `eps` reproduces it up to `O(eps)`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::kernel::CellSources;
use crate::model::{ipow, reaction_derivative};
use crate::noise::NoiseSheet;
use crate::solver::{picard_solve, FieldPath, MildSystem, PathMeta, PicardConfig};

/// `D_{r,z} u(t_i, x_j)` for one source cell.
#[derive(Debug, Clone)]
pub struct DerivativeField {
    pub r_index: usize,
    pub z_index: usize,
    pub values: FieldPath,
}

/// `v(t_i, x_j) = h sum_{z_l in [a, b)} D_{r,z_l} u(t_i, x_j)`.
#[derive(Debug, Clone)]
pub struct IntegratedDerivative {
    pub r_index: usize,
    pub a: f64,
    pub b: f64,
    pub values: FieldPath,
}

fn check_base(base: &FieldPath, sheet: &NoiseSheet, sys: &MildSystem<'_>, r_index: usize) -> Result<()> {
    if base.time() != sys.table.time() || base.space() != sys.table.space() {
        return Err(Error::ShapeMismatch {
            expected: "base path on the kernel table grid".into(),
            actual: format!("{}x{}", base.time().steps(), base.space().len()),
        });
    }
    if sheet.time() != base.time() || sheet.space() != base.space() {
        return Err(Error::ShapeMismatch {
            expected: "sheet on the base path grid".into(),
            actual: format!("{}x{}", sheet.time().steps(), sheet.space().len()),
        });
    }
    let n = base.time().steps();
    if r_index >= n {
        return Err(Error::IndexOutOfRange {
            what: "r_index",
            index: r_index,
            limit: n,
        });
    }
    if let Some(tr) = &sys.trunc {
        for i in 0..=n {
            let norm = base.lp_norm(i, tr.p);
            if !tr.is_inside(norm) {
                return Err(Error::Localization {
                    level: tr.n,
                    norm,
                    time_index: i,
                });
            }
        }
    }
    Ok(())
}

/// Solves the linear equation with the given source weights at cell `r`
/// (`weights[l]` multiplies `g(t_r, y_l, u(t_r, y_l))`).
fn linear_solve(
    base: &FieldPath,
    sheet: &NoiseSheet,
    sys: &MildSystem<'_>,
    r_index: usize,
    weights: &[f64],
    scheme: &str,
) -> Result<FieldPath> {
    let time = *base.time();
    let space = *base.space();
    let n = time.steps();
    let m = space.len();
    let params = &sys.params;
    let mut rows = vec![vec![0.0; m]; n + 1];
    let mut conv = sys.table.convolver();
    let mut reaction = vec![0.0; m];
    let mut advection = vec![0.0; m];
    let mut noise = vec![0.0; m];

    let t_r = time.t(r_index);
    let u_r = base.row(r_index);
    if !sys.noise.vanishes_at(t_r) {
        for l in 0..m {
            if weights[l] != 0.0 {
                noise[l] = weights[l] * sys.noise.evaluate(t_r, space.node(l), u_r[l]);
            }
        }
    }
    for k in 0..r_index {
        conv.record(k, CellSources::none());
    }
    conv.record(
        r_index,
        CellSources {
            noise: Some(&noise),
            ..CellSources::none()
        },
    );
    for i in 1..=r_index {
        conv.evaluate(i, &mut rows[i]);
    }
    for i in r_index + 1..=n {
        if i > r_index + 1 {
            let k = i - 1;
            let t = time.t(k);
            let u = base.row(k);
            let d = &rows[k];
            let dw = sheet.row(k);
            let mut sources = CellSources::none();
            if params.beta != 0.0 {
                for j in 0..m {
                    reaction[j] = params.beta * reaction_derivative(u[j], params.gamma, params.delta) * d[j];
                }
                sources.reaction = Some(&reaction);
            }
            if params.alpha != 0.0 {
                for j in 0..m {
                    advection[j] = params.alpha * ipow(u[j], params.delta) * d[j];
                }
                sources.advection = Some(&advection);
            }
            if !sys.noise.vanishes_at(t) {
                for j in 0..m {
                    noise[j] = sys.noise.slope_in_r(t, space.node(j), u[j]) * d[j] * dw[j];
                }
                sources.noise = Some(&noise);
            }
            conv.record(k, sources);
        }
        conv.evaluate(i, &mut rows[i]);
        if let Some(j) = rows[i].iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { time_index: i, node: j });
        }
    }
    FieldPath::new(
        time,
        space,
        rows,
        PathMeta {
            scheme: scheme.into(),
            truncation: sys.trunc,
            seed: sheet.seed(),
            lambda: None,
            iterations: Some(1),
        },
    )
}

/// `D_{r,z} u` along `base`, which must solve the system on `sheet`.
pub fn derivative_solve(
    base: &FieldPath,
    sheet: &NoiseSheet,
    sys: &MildSystem<'_>,
    r_index: usize,
    z_index: usize,
) -> Result<DerivativeField> {
    check_base(base, sheet, sys, r_index)?;
    let m = base.space().len();
    if z_index >= m {
        return Err(Error::IndexOutOfRange {
            what: "z_index",
            index: z_index,
            limit: m,
        });
    }
    let mut w = vec![0.0; m];
    w[z_index] = 1.0;
    let values = linear_solve(base, sheet, sys, r_index, &w, "malliavin")?;
    Ok(DerivativeField {
        r_index,
        z_index,
        values,
    })
}

/// Node indices `l` with `y_l` in `[a, b)`.
pub fn interval_nodes(space: &crate::grid::SpatialGrid, a: f64, b: f64) -> std::ops::Range<usize> {
    let nodes = space.nodes();
    let lo = nodes.iter().position(|&y| y >= a).unwrap_or(nodes.len());
    let hi = nodes.iter().position(|&y| y >= b).unwrap_or(nodes.len());
    lo..hi.max(lo)
}

/// The z-integrated derivative over `[a, b)`, from one linear solve.
pub fn integrated_derivative(
    base: &FieldPath,
    sheet: &NoiseSheet,
    sys: &MildSystem<'_>,
    r_index: usize,
    a: f64,
    b: f64,
) -> Result<IntegratedDerivative> {
    if !(0.0 < a && a < b && b < 1.0) {
        return Err(invalid("interval", format!("need 0 < a < b < 1, got [{a}, {b}]")));
    }
    check_base(base, sheet, sys, r_index)?;
    let space = *base.space();
    let h = space.h();
    let mut w = vec![0.0; space.len()];
    for l in interval_nodes(&space, a, b) {
        w[l] = h;
    }
    let values = linear_solve(base, sheet, sys, r_index, &w, "malliavin-integrated")?;
    Ok(IntegratedDerivative { r_index, a, b, values })
}

fn march(u0: &[f64], sheet: &NoiseSheet, sys: &MildSystem<'_>) -> Result<FieldPath> {
    Ok(picard_solve(u0, sheet, sys, &PicardConfig::march())?.path)
}

/// `(u_eps - u) / (eps dt h)` with `u_eps` driven by the sheet bumped at `(r, z)`.
pub fn fd_oracle(
    u0: &[f64],
    sheet: &NoiseSheet,
    sys: &MildSystem<'_>,
    r_index: usize,
    z_index: usize,
    epsilon: f64,
) -> Result<DerivativeField> {
    fd_quotient(u0, sheet, sys, r_index, z_index, epsilon, false)
}

/// `(u_eps - u_{-eps}) / (2 eps dt h)`.
pub fn fd_oracle_central(
    u0: &[f64],
    sheet: &NoiseSheet,
    sys: &MildSystem<'_>,
    r_index: usize,
    z_index: usize,
    epsilon: f64,
) -> Result<DerivativeField> {
    fd_quotient(u0, sheet, sys, r_index, z_index, epsilon, true)
}

fn fd_quotient(
    u0: &[f64],
    sheet: &NoiseSheet,
    sys: &MildSystem<'_>,
    r_index: usize,
    z_index: usize,
    epsilon: f64,
    central: bool,
) -> Result<DerivativeField> {
    if !(epsilon > 0.0) {
        return Err(invalid("epsilon", format!("must be > 0, got {epsilon}")));
    }
    let plus = march(u0, &sheet.bump(r_index, z_index, epsilon)?, sys)?;
    let (minus, width) = if central {
        (march(u0, &sheet.bump(r_index, z_index, -epsilon)?, sys)?, 2.0 * epsilon)
    } else {
        (march(u0, sheet, sys)?, epsilon)
    };
    let scale = 1.0 / (width * sheet.time().dt() * sheet.space().h());
    let rows: Vec<Vec<f64>> = plus
        .rows()
        .iter()
        .zip(minus.rows())
        .map(|(p, q)| p.iter().zip(q).map(|(a, b)| (a - b) * scale).collect())
        .collect();
    let mut meta = plus.meta.clone();
    meta.scheme = if central { "fd-central" } else { "fd-forward" }.into();
    let values = FieldPath::new(*plus.time(), *plus.space(), rows, meta)?;
    Ok(DerivativeField {
        r_index,
        z_index,
        values,
    })
}

/// Relative discrete `L^2` distance `||a - b|| / ||b||` over rows after `r`.
pub fn relative_l2(a: &FieldPath, b: &FieldPath, r_index: usize) -> Result<f64> {
    let diff = a.combine(-1.0, b)?;
    let (mut num, mut den) = (0.0, 0.0);
    for i in r_index + 1..=a.time().steps() {
        num += diff.row(i).iter().map(|v| v * v).sum::<f64>();
        den += b.row(i).iter().map(|v| v * v).sum::<f64>();
    }
    Ok((num / den).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PositivityStats {
    pub fraction: f64,
    pub min: f64,
    pub median: f64,
    pub count: usize,
}

/// Share of grid points with `s` in `(s_lo, s_hi]` and `v > threshold`.
pub fn positivity_fraction(v: &FieldPath, s_lo: f64, s_hi: f64, threshold: f64) -> PositivityStats {
    let time = v.time();
    let mut vals: Vec<f64> = (0..=time.steps())
        .filter(|&i| time.t(i) > s_lo && time.t(i) <= s_hi)
        .flat_map(|i| v.row(i).iter().copied())
        .collect();
    if vals.is_empty() {
        return PositivityStats {
            fraction: 0.0,
            min: f64::NAN,
            median: f64::NAN,
            count: 0,
        };
    }
    let count = vals.len();
    let pos = vals.iter().filter(|&&x| x > threshold).count();
    vals.sort_by(f64::total_cmp);
    PositivityStats {
        fraction: pos as f64 / count as f64,
        min: vals[0],
        median: vals[count / 2],
        count,
    }
}
