use serde::{Deserialize, Serialize};

use super::{FieldPath, PathMeta};
use crate::error::{invalid, Error, Result};
use crate::kernel::{CellSources, Convolver, KernelTable};
use crate::model::{
    advection_nonlinearity, lp_norm_pow, reaction_expanded, truncate_in_place, ModelParams, NoiseCoefficient,
    TruncationLevel,
};
use crate::noise::NoiseSheet;

/// Everything the discrete mild map needs besides the data.
#[derive(Clone, Copy)]
pub struct MildSystem<'a> {
    pub params: ModelParams,
    pub noise: &'a dyn NoiseCoefficient,
    pub table: &'a KernelTable,
    pub trunc: Option<TruncationLevel>,
}

impl<'a> MildSystem<'a> {
    pub fn new(params: ModelParams, noise: &'a dyn NoiseCoefficient, table: &'a KernelTable) -> Result<Self> {
        params.validate()?;
        let d = params.kernel_diffusivity();
        if (table.diffusivity() - d).abs() > 1e-15 * d {
            return Err(invalid(
                "nu",
                format!(
                    "kernel table built for diffusivity {} but model uses {d}",
                    table.diffusivity()
                ),
            ));
        }
        if (table.time().horizon() - params.horizon).abs() > 1e-12 * params.horizon {
            return Err(invalid("T", "kernel table horizon differs from the model horizon"));
        }
        Ok(Self {
            params,
            noise,
            table,
            trunc: None,
        })
    }

    pub fn with_truncation(mut self, trunc: TruncationLevel) -> Self {
        self.trunc = Some(trunc);
        self
    }

    /// Exponent of the residual norm: the truncation's `p`, else `2 delta + 1`.
    pub fn exponent(&self) -> f64 {
        self.trunc.map_or(self.params.min_exponent(), |t| t.p)
    }

    pub(crate) fn check_field(&self, what: &str, len: usize) -> Result<()> {
        let m = self.table.space().len();
        if len != m {
            return Err(Error::ShapeMismatch {
                expected: format!("{what} with {m} nodes"),
                actual: len.to_string(),
            });
        }
        Ok(())
    }

    pub(crate) fn check_sheet(&self, sheet: &NoiseSheet) -> Result<()> {
        if sheet.time() != self.table.time() || sheet.space() != self.table.space() {
            return Err(Error::ShapeMismatch {
                expected: format!("sheet {}x{}", self.table.time().steps(), self.table.space().len()),
                actual: format!("{}x{}", sheet.time().steps(), sheet.space().len()),
            });
        }
        Ok(())
    }
}

/// Scratch rows for the per-cell sources.
pub(crate) struct SourceBuf {
    pub state: Vec<f64>,
    pub reaction: Vec<f64>,
    pub advection: Vec<f64>,
    pub noise: Vec<f64>,
    pub flags: [bool; 3],
}

impl SourceBuf {
    pub fn new(m: usize) -> Self {
        Self {
            state: vec![0.0; m],
            reaction: vec![0.0; m],
            advection: vec![0.0; m],
            noise: vec![0.0; m],
            flags: [false; 3],
        }
    }

    pub fn sources(&self) -> CellSources<'_> {
        CellSources {
            reaction: self.flags[0].then_some(&self.reaction[..]),
            advection: self.flags[1].then_some(&self.advection[..]),
            noise: self.flags[2].then_some(&self.noise[..]),
        }
    }
}

/// Fills `buf` with the sources of the cell starting at time `t` for state
/// `state + shift`, truncated by `pi_n`. `dw` enables the noise source.
fn fill_sources(
    sys: &MildSystem<'_>,
    t: f64,
    state: &[f64],
    shift: Option<&[f64]>,
    dw: Option<&[f64]>,
    buf: &mut SourceBuf,
) {
    let p = &sys.params;
    buf.state.copy_from_slice(state);
    if let Some(s) = shift {
        buf.state.iter_mut().zip(s).for_each(|(a, b)| *a += b);
    }
    if let Some(tr) = &sys.trunc {
        truncate_in_place(&mut buf.state, tr, sys.table.space().h());
    }
    buf.flags = [false; 3];
    if p.beta != 0.0 {
        for (o, &w) in buf.reaction.iter_mut().zip(&buf.state) {
            *o = p.beta * reaction_expanded(w, p.gamma, p.delta);
        }
        buf.flags[0] = true;
    }
    if p.alpha != 0.0 {
        let c = p.alpha / (p.delta as f64 + 1.0);
        for (o, &w) in buf.advection.iter_mut().zip(&buf.state) {
            *o = c * advection_nonlinearity(w, p.delta);
        }
        buf.flags[1] = true;
    }
    if let Some(dw) = dw {
        if !sys.noise.vanishes_at(t) {
            let space = sys.table.space();
            for (j, o) in buf.noise.iter_mut().enumerate() {
                *o = sys.noise.evaluate(t, space.node(j), buf.state[j]) * dw[j];
            }
            buf.flags[2] = true;
        }
    }
}

fn check_row(i: usize, row: &[f64]) -> Result<()> {
    match row.iter().position(|v| !v.is_finite()) {
        Some(j) => Err(Error::NonFinite { time_index: i, node: j }),
        None => Ok(()),
    }
}

/// One pass of the discrete mild map. With `prev = None` the pass is a
/// forward substitution whose sources come from the rows being built, which
/// yields the exact fixed point of the causal discrete system.
fn mild_pass(
    sys: &MildSystem<'_>,
    conv: &mut Convolver<'_>,
    init: &[Vec<f64>],
    prev: Option<&[Vec<f64>]>,
    sheet: Option<&NoiseSheet>,
    shift: Option<&FieldPath>,
) -> Result<Vec<Vec<f64>>> {
    let n = sys.table.time().steps();
    let m = sys.table.space().len();
    let time = *sys.table.time();
    let mut buf = SourceBuf::new(m);
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    out.push(init[0].clone());
    conv.reset();
    for i in 1..=n {
        let k = i - 1;
        let state = match prev {
            Some(p) => &p[k][..],
            None => &out[k][..],
        };
        fill_sources(
            sys,
            time.t(k),
            state,
            shift.map(|s| s.row(k)),
            sheet.map(|s| s.row(k)),
            &mut buf,
        );
        conv.record(k, buf.sources());
        let mut row = init[i].clone();
        conv.evaluate(i, &mut row);
        check_row(i, &row)?;
        out.push(row);
    }
    Ok(out)
}

/// How the discrete fixed point is reached.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Iteration {
    /// Whole-path iteration `u^{k+1} = A u^k` with a weighted-norm stopping rule.
    #[default]
    Picard,
    /// Forward substitution in time; exact for the causal discrete system.
    March,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum LambdaMode {
    Auto,
    Fixed { value: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PicardConfig {
    pub lambda: LambdaMode,
    pub tol: f64,
    pub max_iters: usize,
    pub iteration: Iteration,
}

impl Default for PicardConfig {
    fn default() -> Self {
        Self {
            lambda: LambdaMode::Auto,
            tol: 1e-8,
            max_iters: 50,
            iteration: Iteration::Picard,
        }
    }
}

impl PicardConfig {
    pub fn validate(&self) -> Result<()> {
        if let LambdaMode::Fixed { value } = self.lambda {
            if !(value > 0.0) {
                return Err(invalid("lambda", format!("must be > 0, got {value}")));
            }
        }
        if !(self.tol > 0.0) {
            return Err(invalid("tol", format!("must be > 0, got {}", self.tol)));
        }
        if self.max_iters == 0 {
            return Err(invalid("max_iters", "must be >= 1"));
        }
        Ok(())
    }

    pub fn march() -> Self {
        Self {
            iteration: Iteration::March,
            ..Self::default()
        }
    }
}

/// Gamma-function bound on the contraction factor of the truncated mild map
/// in the weight `exp(-lambda t)`, with unit prefactor:
///
/// ```text
/// sum_i c_i Gamma(a_i) / lambda^(a_i)
/// ```
///
/// over the reaction, advection and noise contributions.
pub fn contraction_bracket(lambda: f64, params: &ModelParams, trunc: &TruncationLevel, lipschitz: f64) -> f64 {
    let d = params.delta as f64;
    let p = trunc.p;
    let two_n = 2.0 * trunc.n;
    let theta = 0.25;
    let terms = [
        (
            params.beta * (1.0 + params.gamma) * (d + 1.0) * two_n.powf(d),
            1.0 - d / (2.0 * p),
        ),
        (params.beta * params.gamma, 1.0),
        (params.beta * (2.0 * d + 1.0) * two_n.powf(2.0 * d), 1.0 - d / p),
        (params.alpha * two_n.powf(d), 0.5 - d / (2.0 * p)),
        (2.0 * lipschitz, 0.5 - theta),
    ];
    terms
        .iter()
        .filter(|(c, _)| *c != 0.0)
        .map(|&(c, a)| c * libm::tgamma(a) / lambda.powf(a))
        .sum()
}

/// The weight exponent chosen for the residual norm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LambdaChoice {
    /// Root of `bracket(lambda) = 0.5` (zero when every term vanishes).
    pub bisection: f64,
    /// Value used: the root capped at `p / T` so late times stay visible.
    pub used: f64,
    /// Bracket evaluated at `used`.
    pub bracket_at_used: f64,
}

pub fn select_lambda(params: &ModelParams, trunc: &TruncationLevel, lipschitz: f64) -> LambdaChoice {
    let f = |l: f64| contraction_bracket(l, params, trunc, lipschitz) - 0.5;
    let cap = trunc.p / params.horizon;
    let bisection = if contraction_bracket(1.0, params, trunc, lipschitz) == 0.0 {
        0.0
    } else {
        let (mut lo, mut hi) = (1e-12f64, 1.0f64);
        while f(hi) > 0.0 {
            lo = hi;
            hi *= 2.0;
        }
        for _ in 0..200 {
            let mid = (lo * hi).sqrt();
            if f(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi / lo < 1.0 + 1e-13 {
                break;
            }
        }
        hi
    };
    let used = if bisection > 0.0 { bisection.min(cap) } else { cap };
    LambdaChoice {
        bisection,
        used,
        bracket_at_used: contraction_bracket(used, params, trunc, lipschitz),
    }
}

/// `(dt sum_i exp(-lambda t_i) ||a_i - b_i||_p^p)^(1/p)`; `b = None` measures `a`.
fn weighted_norm(a: &[Vec<f64>], b: Option<&[Vec<f64>]>, lambda: f64, p: f64, dt: f64, h: f64) -> f64 {
    let mut acc = 0.0;
    let mut diff = vec![0.0; a[0].len()];
    for (i, row) in a.iter().enumerate() {
        let w = (-lambda * i as f64 * dt).exp();
        let v = match b {
            Some(b) => {
                diff.iter_mut()
                    .zip(row.iter().zip(&b[i]))
                    .for_each(|(d, (x, y))| *d = x - y);
                lp_norm_pow(&diff, h, p)
            }
            None => lp_norm_pow(row, h, p),
        };
        acc += w * v;
    }
    (dt * acc).powf(1.0 / p)
}

#[derive(Debug, Clone)]
pub struct PicardOutcome {
    pub path: FieldPath,
    /// Weighted-norm residual `||u^{k+1} - u^k||` per sweep.
    pub residuals: Vec<f64>,
    pub converged: bool,
    pub lambda: Option<LambdaChoice>,
}

impl PicardOutcome {
    pub fn iterations(&self) -> usize {
        self.residuals.len()
    }

    /// The path, or [`Error::NoConvergence`] if the cap was hit.
    pub fn require_converged(self) -> Result<FieldPath> {
        if self.converged {
            Ok(self.path)
        } else {
            Err(Error::NoConvergence {
                iterations: self.residuals.len(),
                residual: self.residuals.last().copied().unwrap_or(f64::NAN),
            })
        }
    }
}

fn path_from(sys: &MildSystem<'_>, rows: Vec<Vec<f64>>, scheme: &str, seed: Option<u64>) -> Result<FieldPath> {
    FieldPath::new(
        *sys.table.time(),
        *sys.table.space(),
        rows,
        PathMeta {
            scheme: scheme.to_string(),
            truncation: sys.trunc,
            seed,
            lambda: None,
            iterations: None,
        },
    )
}

/// One application of the discrete mild map `A` to a whole path.
pub fn apply_a(u: &FieldPath, sheet: &NoiseSheet, sys: &MildSystem<'_>) -> Result<FieldPath> {
    sys.check_sheet(sheet)?;
    if u.time() != sys.table.time() || u.space() != sys.table.space() {
        return Err(Error::ShapeMismatch {
            expected: "path on the kernel table grid".into(),
            actual: format!("{}x{}", u.time().steps(), u.space().len()),
        });
    }
    let init = sys.table.initial_term(u.initial())?;
    let mut conv = sys.table.convolver();
    let rows = mild_pass(sys, &mut conv, &init, Some(u.rows()), Some(sheet), None)?;
    path_from(sys, rows, "mild-map", sheet.seed())
}

fn iterate(
    u0: &[f64],
    sheet: Option<&NoiseSheet>,
    shift: Option<&FieldPath>,
    sys: &MildSystem<'_>,
    config: &PicardConfig,
    scheme: &str,
) -> Result<PicardOutcome> {
    config.validate()?;
    sys.check_field("u0", u0.len())?;
    if let Some(s) = sheet {
        sys.check_sheet(s)?;
    }
    if let Some(u) = u0.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { time_index: 0, node: u });
    }
    let init = sys.table.initial_term(u0)?;
    let mut conv = sys.table.convolver();
    let seed = sheet.and_then(NoiseSheet::seed);

    if config.iteration == Iteration::March {
        let rows = mild_pass(sys, &mut conv, &init, None, sheet, shift)?;
        let mut path = path_from(sys, rows, scheme, seed)?;
        path.meta.iterations = Some(1);
        return Ok(PicardOutcome {
            path,
            residuals: Vec::new(),
            converged: true,
            lambda: None,
        });
    }

    let trunc = sys.trunc.unwrap_or(TruncationLevel {
        n: f64::INFINITY,
        p: sys.params.min_exponent(),
    });
    let lambda = match config.lambda {
        LambdaMode::Fixed { value } => LambdaChoice {
            bisection: value,
            used: value,
            bracket_at_used: contraction_bracket(value, &sys.params, &trunc, sys.noise.lipschitz()),
        },
        LambdaMode::Auto => {
            if trunc.n.is_finite() {
                select_lambda(&sys.params, &trunc, sys.noise.lipschitz())
            } else {
                let cap = trunc.p / sys.params.horizon;
                LambdaChoice {
                    bisection: f64::NAN,
                    used: cap,
                    bracket_at_used: f64::NAN,
                }
            }
        }
    };
    let p = sys.exponent();
    let dt = sys.table.time().dt();
    let h = sys.table.space().h();

    let mut current = init.clone();
    let mut residuals = Vec::new();
    let mut converged = false;
    for _ in 0..config.max_iters {
        let next = mild_pass(sys, &mut conv, &init, Some(&current), sheet, shift)?;
        let r = weighted_norm(&next, Some(&current), lambda.used, p, dt, h);
        let scale = weighted_norm(&current, None, lambda.used, p, dt, h);
        residuals.push(r);
        current = next;
        if r < config.tol * (1.0 + scale) {
            converged = true;
            break;
        }
    }
    let mut path = path_from(sys, current, scheme, seed)?;
    path.meta.lambda = Some(lambda.used);
    path.meta.iterations = Some(residuals.len());
    Ok(PicardOutcome {
        path,
        residuals,
        converged,
        lambda: Some(lambda),
    })
}

/// Solves the truncated discrete mild equation, starting Picard iteration
/// from the kernel-smoothed initial datum.
pub fn picard_solve(
    u0: &[f64],
    sheet: &NoiseSheet,
    sys: &MildSystem<'_>,
    config: &PicardConfig,
) -> Result<PicardOutcome> {
    iterate(u0, Some(sheet), None, sys, config, "picard-mild")
}

/// Solves the deterministic equation for `v = u - phi`: the mild map without
/// its stochastic term, with nonlinearities evaluated at `v + phi`.
pub fn transformed_solve(
    u0: &[f64],
    phi: &FieldPath,
    sys: &MildSystem<'_>,
    config: &PicardConfig,
) -> Result<FieldPath> {
    if phi.time() != sys.table.time() || phi.space() != sys.table.space() {
        return Err(Error::ShapeMismatch {
            expected: "phi on the kernel table grid".into(),
            actual: format!("{}x{}", phi.time().steps(), phi.space().len()),
        });
    }
    iterate(u0, None, Some(phi), sys, config, "transformed")?.require_converged()
}

/// `phi(t_i, x_j) = sum_{k<i} sum_l G(t_i - s_k, x_j, y_l) g(s_k, y_l, pi_n u(s_k, y_l)) dW[k][l]`
/// with the kernel at midpoint lags.
pub fn stochastic_convolution(sheet: &NoiseSheet, base: &FieldPath, sys: &MildSystem<'_>) -> Result<FieldPath> {
    sys.check_sheet(sheet)?;
    let n = sys.table.time().steps();
    let m = sys.table.space().len();
    let time = *sys.table.time();
    let space = *sys.table.space();
    let mut conv = sys.table.convolver();
    let mut state = vec![0.0; m];
    let mut src = vec![0.0; m];
    let mut rows = vec![vec![0.0; m]; n + 1];
    for i in 1..=n {
        let k = i - 1;
        let t = time.t(k);
        if sys.noise.vanishes_at(t) {
            conv.record(k, CellSources::none());
        } else {
            state.copy_from_slice(base.row(k));
            if let Some(tr) = &sys.trunc {
                truncate_in_place(&mut state, tr, space.h());
            }
            let dw = sheet.row(k);
            for j in 0..m {
                src[j] = sys.noise.evaluate(t, space.node(j), state[j]) * dw[j];
            }
            conv.record(
                k,
                CellSources {
                    noise: Some(&src),
                    ..CellSources::none()
                },
            );
        }
        conv.evaluate(i, &mut rows[i]);
    }
    path_from(sys, rows, "stochastic-convolution", sheet.seed())
}

/// `int_0^t int_0^1 G(t - s, x, y)^2 dy ds = int_0^t G(2 tau, x, x) d tau`, the
/// variance of the stochastic convolution with `g = 1`, by composite Simpson
/// after the substitution `tau = s^2`.
pub fn stochastic_convolution_variance(t: f64, x: f64, nu: f64, cfg: &crate::kernel::KernelConfig) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    let n = 4000;
    let b = t.sqrt();
    let hs = b / n as f64;
    let f = |s: f64| {
        if s == 0.0 {
            // 2 s (8 pi nu s^2)^(-1/2) as s -> 0
            1.0 / (2.0 * std::f64::consts::PI * nu).sqrt()
        } else {
            2.0 * s * crate::kernel::green_eval(2.0 * s * s, x, x, nu, cfg).unwrap_or(0.0)
        }
    };
    let mut acc = f(0.0) + f(b);
    for k in 1..n {
        let w = if k % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(k as f64 * hs);
    }
    acc * hs / 3.0
}

/// Exit record of the stopping-time construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoppingRecord {
    /// Levels tried, in order.
    pub levels: Vec<f64>,
    /// `tau^n` per tried level, as a grid time.
    pub tau: Vec<f64>,
    /// Grid index of `tau^n` per tried level (`N` when never reached).
    pub tau_index: Vec<usize>,
    /// The level whose path is returned.
    pub achieved_n: f64,
    /// True when the largest level was still reached before `T`.
    pub capped: bool,
    /// Set when the largest level's solve failed on non-finite values.
    pub blow_up: bool,
}

/// First index with `||u(t_i)||_p >= n`, else `N`.
fn exit_index(path: &FieldPath, trunc: &TruncationLevel) -> usize {
    let n = path.time().steps();
    (0..=n).find(|&i| path.lp_norm(i, trunc.p) >= trunc.n).unwrap_or(n)
}

/// Runs the truncated solve at each level of `schedule` until one level is
/// never reached before `T`.
pub fn global_solve(
    u0: &[f64],
    sheet: &NoiseSheet,
    sys: &MildSystem<'_>,
    config: &PicardConfig,
    schedule: &[f64],
) -> Result<(FieldPath, StoppingRecord)> {
    if schedule.is_empty() || schedule.windows(2).any(|w| w[1] <= w[0]) {
        return Err(invalid("n_schedule", "must be non-empty and strictly increasing"));
    }
    let p = sys.exponent();
    let mut record = StoppingRecord {
        levels: Vec::new(),
        tau: Vec::new(),
        tau_index: Vec::new(),
        achieved_n: schedule[0],
        capped: false,
        blow_up: false,
    };
    let mut best: Option<FieldPath> = None;
    for &n in schedule {
        let trunc = TruncationLevel::new(n, p, sys.params.delta)?;
        let level_sys = sys.with_truncation(trunc);
        let path = match picard_solve(u0, sheet, &level_sys, config).and_then(PicardOutcome::require_converged) {
            Ok(path) => path,
            Err(Error::NonFinite { .. }) => {
                record.blow_up = true;
                record.capped = true;
                break;
            }
            Err(e) => return Err(e),
        };
        let idx = exit_index(&path, &trunc);
        record.levels.push(n);
        record.tau_index.push(idx);
        record.tau.push(sys.table.time().t(idx));
        record.achieved_n = n;
        let reached = path.lp_norm(idx, p) >= n;
        best = Some(path);
        if !reached {
            record.capped = false;
            return Ok((best.expect("path just stored"), record));
        }
        record.capped = true;
    }
    match best {
        Some(path) => Ok((path, record)),
        None => Err(Error::NonFinite { time_index: 0, node: 0 }),
    }
}
