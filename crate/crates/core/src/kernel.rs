//! Dirichlet heat kernel on `[0, 1]`, its `y`-derivative, quadrature
//! weights for time convolutions, and a streaming convolution engine.
//!
//! Two representations of the same kernel are provided:
//!
//! ```text
//! image:    G(t,x,y) = (4 pi nu t)^(-1/2) sum_n [exp(-(y-x-2n)^2 / 4 nu t) - exp(-(y+x-2n)^2 / 4 nu t)]
//! spectral: G(t,x,y) = sum_k 2 exp(-nu k^2 pi^2 t) sin(k pi x) sin(k pi y)
//! ```
//!
//! The image sum converges fast for short lags, the spectral sum for long ones.

use std::f64::consts::PI;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{SpatialGrid, TimeGrid};

/// Exponents beyond this underflow to zero in `exp(-x)`.
const EXP_CUTOFF: f64 = 745.0;

/// How many lags of the convolution are handled by dense tables before the
/// separable spectral tail takes over.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DenseWindow {
    /// Pick the window minimizing the estimated per-step cost.
    Auto,
    /// Dense up to the representation crossover `t*`.
    Crossover,
    /// A fixed number of dense lags.
    Lags(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelConfig {
    /// Image pairs `M` in the image sum.
    pub image_pairs: usize,
    /// Crossover in diffusive time: the image sum is used for `nu * tau < crossover`.
    pub crossover: f64,
    /// Relative size of the neglected spectral tail.
    pub spectral_tol: f64,
    pub dense_window: DenseWindow,
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self {
            image_pairs: 20,
            crossover: 0.05,
            spectral_tol: 1e-16,
            dense_window: DenseWindow::Auto,
        }
    }
}

impl KernelConfig {
    /// Crossover lag `t* = crossover / nu`.
    pub fn crossover_lag(&self, nu: f64) -> f64 {
        self.crossover / nu
    }

    /// Modes needed by the spectral sum at the crossover lag.
    pub fn spectral_terms(&self) -> usize {
        spectral_modes_for(self.crossover, self.spectral_tol)
    }
}

/// Smallest `K` with `exp(-K^2 pi^2 s) < tol` at diffusive time `s = nu tau`.
pub fn spectral_modes_for(s: f64, tol: f64) -> usize {
    let k = ((-tol.ln()) / (PI * PI * s)).sqrt();
    let mut k = k.ceil().max(1.0) as usize;
    if (-(k as f64).powi(2) * PI * PI * s).exp() >= tol {
        k += 1;
    }
    k
}

fn check_lag(tau: f64) -> Result<()> {
    if tau > 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(Error::NonPositiveLag(tau))
    }
}

#[inline]
fn gauss(d: f64, s: f64) -> f64 {
    let e = d * d / (4.0 * s);
    if e > EXP_CUTOFF {
        0.0
    } else {
        (-e).exp()
    }
}

fn image_unchecked(s: f64, x: f64, y: f64, pairs: usize) -> f64 {
    let m = pairs as i64;
    let mut acc = 0.0;
    for n in -m..=m {
        let shift = 2.0 * n as f64;
        acc += gauss(y - x - shift, s) - gauss(y + x - shift, s);
    }
    acc / (4.0 * PI * s).sqrt()
}

fn image_dy_unchecked(s: f64, x: f64, y: f64, pairs: usize) -> f64 {
    let m = pairs as i64;
    let mut acc = 0.0;
    for n in -m..=m {
        let shift = 2.0 * n as f64;
        let d1 = y - x - shift;
        let d2 = y + x - shift;
        acc += -d1 * gauss(d1, s) + d2 * gauss(d2, s);
    }
    acc / (2.0 * s * (4.0 * PI * s).sqrt())
}

fn spectral_unchecked(s: f64, x: f64, y: f64, kmax: usize) -> f64 {
    (1..=kmax)
        .map(|k| {
            let kp = k as f64 * PI;
            2.0 * (-kp * kp * s).exp() * (kp * x).sin() * (kp * y).sin()
        })
        .sum()
}

fn spectral_dy_unchecked(s: f64, x: f64, y: f64, kmax: usize) -> f64 {
    (1..=kmax)
        .map(|k| {
            let kp = k as f64 * PI;
            2.0 * (-kp * kp * s).exp() * (kp * x).sin() * kp * (kp * y).cos()
        })
        .sum()
}

/// Image-sum kernel with `pairs` image pairs on each side.
pub fn green_image(tau: f64, x: f64, y: f64, nu: f64, pairs: usize) -> Result<f64> {
    check_lag(tau)?;
    Ok(image_unchecked(nu * tau, x, y, pairs))
}

/// Truncated eigenfunction expansion with `kmax` modes.
pub fn green_spectral(tau: f64, x: f64, y: f64, nu: f64, kmax: usize) -> Result<f64> {
    check_lag(tau)?;
    Ok(spectral_unchecked(nu * tau, x, y, kmax))
}

/// `dG/dy` from the term-wise differentiated image sum.
pub fn green_image_dy(tau: f64, x: f64, y: f64, nu: f64, pairs: usize) -> Result<f64> {
    check_lag(tau)?;
    Ok(image_dy_unchecked(nu * tau, x, y, pairs))
}

/// `dG/dy` from the term-wise differentiated spectral sum.
pub fn green_spectral_dy(tau: f64, x: f64, y: f64, nu: f64, kmax: usize) -> Result<f64> {
    check_lag(tau)?;
    Ok(spectral_dy_unchecked(nu * tau, x, y, kmax))
}

/// Kernel value, dispatching on `nu * tau` against the crossover.
pub fn green_eval(tau: f64, x: f64, y: f64, nu: f64, cfg: &KernelConfig) -> Result<f64> {
    check_lag(tau)?;
    Ok(eval_unchecked(nu * tau, x, y, cfg))
}

/// `dG/dy`, dispatching like [`green_eval`].
pub fn green_dy(tau: f64, x: f64, y: f64, nu: f64, cfg: &KernelConfig) -> Result<f64> {
    check_lag(tau)?;
    let s = nu * tau;
    Ok(if s < cfg.crossover {
        image_dy_unchecked(s, x, y, cfg.image_pairs)
    } else {
        spectral_dy_unchecked(s, x, y, cfg.spectral_terms())
    })
}

fn eval_unchecked(s: f64, x: f64, y: f64, cfg: &KernelConfig) -> f64 {
    if s < cfg.crossover {
        image_unchecked(s, x, y, cfg.image_pairs)
    } else {
        spectral_unchecked(s, x, y, cfg.spectral_terms())
    }
}

/// `int_0^s (4 pi r)^(-1/2) exp(-d^2 / 4r) dr`.
fn gauss_time_integral(s: f64, d: f64) -> f64 {
    if s <= 0.0 {
        return 0.0;
    }
    let ad = d.abs();
    let rs = s.sqrt();
    (s / PI).sqrt() * gauss(d, s) - 0.5 * ad * libm::erfc(ad / (2.0 * rs))
}

/// `int_0^s d/dd [(4 pi r)^(-1/2) exp(-d^2 / 4r)] dr`.
fn gauss_dd_time_integral(s: f64, d: f64) -> f64 {
    if s <= 0.0 || d == 0.0 {
        return 0.0;
    }
    -0.5 * d.signum() * libm::erfc(d.abs() / (2.0 * s.sqrt()))
}

/// `int_a^b G_nu(tau, x, y) d tau` in closed form, image by image.
pub fn green_cell_integral(a: f64, b: f64, x: f64, y: f64, nu: f64, pairs: usize) -> Result<f64> {
    if !(a >= 0.0 && b > a) {
        return Err(Error::NonPositiveLag(b - a));
    }
    let (sa, sb) = (nu * a, nu * b);
    let m = pairs as i64;
    let mut acc = 0.0;
    for n in -m..=m {
        let shift = 2.0 * n as f64;
        let d1 = y - x - shift;
        let d2 = y + x - shift;
        acc += (gauss_time_integral(sb, d1) - gauss_time_integral(sa, d1))
            - (gauss_time_integral(sb, d2) - gauss_time_integral(sa, d2));
    }
    Ok(acc / nu)
}

/// `int_a^b dG_nu/dy(tau, x, y) d tau` in closed form, image by image.
pub fn green_dy_cell_integral(a: f64, b: f64, x: f64, y: f64, nu: f64, pairs: usize) -> Result<f64> {
    if !(a >= 0.0 && b > a) {
        return Err(Error::NonPositiveLag(b - a));
    }
    let (sa, sb) = (nu * a, nu * b);
    let m = pairs as i64;
    let mut acc = 0.0;
    for n in -m..=m {
        let shift = 2.0 * n as f64;
        let d1 = y - x - shift;
        let d2 = y + x - shift;
        acc += (gauss_dd_time_integral(sb, d1) - gauss_dd_time_integral(sa, d1))
            - (gauss_dd_time_integral(sb, d2) - gauss_dd_time_integral(sa, d2));
    }
    Ok(acc / nu)
}

/// Empirical constants of the Gaussian-type kernel bounds on a sample grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundReport {
    pub ell: f64,
    pub theta: f64,
    /// `sup |G| t^(1/2) exp(|x-y|^2 / (ell t))`.
    pub a1: f64,
    /// `sup |dG/dy| t exp(|x-y|^2 / (ell t))`.
    pub a2: f64,
    /// `sup |dG/dt| t^(3/2) exp(|x-y|^2 / (ell t))`.
    pub a3: f64,
    /// `sup |d^2G/dy dt| t^2 exp(|x-y|^2 / (ell t))`.
    pub a4: f64,
    /// Spatial Holder bound on `G` with exponent `theta`.
    pub a5: f64,
    /// Spatial Holder bound on `dG/dz` with exponent `theta`.
    pub a6: f64,
    /// `sup ||exp(-|.|^2 / (ell t))||_{L^2(-1,1)} / t^(1/4)`.
    pub a7: f64,
    pub samples: usize,
    pub all_finite: bool,
}

/// Sample grid for [`measure_kernel_bounds`].
#[derive(Debug, Clone)]
pub struct BoundSamples {
    pub taus: Vec<f64>,
    pub points: Vec<f64>,
}

impl BoundSamples {
    /// `n_tau` geometric lags in `[tau_min, tau_max]` and `n_x` uniform points in `[0, 1]`.
    pub fn new(tau_min: f64, tau_max: f64, n_tau: usize, n_x: usize) -> Self {
        let n_tau = n_tau.max(2);
        let ratio = (tau_max / tau_min).ln() / (n_tau - 1) as f64;
        let taus = (0..n_tau).map(|i| tau_min * (ratio * i as f64).exp()).collect();
        let points = (0..n_x.max(2)).map(|i| i as f64 / (n_x.max(2) - 1) as f64).collect();
        Self { taus, points }
    }
}

/// `|value| * exp(w)` without overflowing the exponential weight.
fn weighted(value: f64, w: f64) -> f64 {
    if value == 0.0 {
        0.0
    } else {
        (value.abs().ln() + w).exp()
    }
}

/// Measures empirical constants for the Gaussian-type bounds on `G` and its
/// derivatives. Diagnostic only.
pub fn measure_kernel_bounds(cfg: &KernelConfig, nu: f64, ell: f64, theta: f64, samples: &BoundSamples) -> BoundReport {
    let g = |t: f64, x: f64, y: f64| eval_unchecked(nu * t, x, y, cfg);
    let gy = |t: f64, x: f64, y: f64| {
        let s = nu * t;
        if s < cfg.crossover {
            image_dy_unchecked(s, x, y, cfg.image_pairs)
        } else {
            spectral_dy_unchecked(s, x, y, cfg.spectral_terms())
        }
    };
    let mut r = BoundReport {
        ell,
        theta,
        a1: 0.0,
        a2: 0.0,
        a3: 0.0,
        a4: 0.0,
        a5: 0.0,
        a6: 0.0,
        a7: 0.0,
        samples: 0,
        all_finite: true,
    };
    for &t in &samples.taus {
        let dt = 1e-4 * t;
        for &x in &samples.points {
            for &y in &samples.points {
                let w = (x - y).powi(2) / (ell * t);
                let v1 = weighted(g(t, x, y), w) * t.sqrt();
                let v2 = weighted(gy(t, x, y), w) * t;
                let gt = (g(t + dt, x, y) - g(t - dt, x, y)) / (2.0 * dt);
                let v3 = weighted(gt, w) * t.powf(1.5);
                let gyt = (gy(t + dt, x, y) - gy(t - dt, x, y)) / (2.0 * dt);
                let v4 = weighted(gyt, w) * t * t;
                r.a1 = r.a1.max(v1);
                r.a2 = r.a2.max(v2);
                r.a3 = r.a3.max(v3);
                r.a4 = r.a4.max(v4);
                r.all_finite &= v1.is_finite() && v2.is_finite() && v3.is_finite() && v4.is_finite();
                r.samples += 1;
                if x == y {
                    continue;
                }
                let dx = (x - y).abs();
                for &z in &samples.points {
                    let wx = (x - z).powi(2) / (ell * t);
                    let wy = (y - z).powi(2) / (ell * t);
                    let wmax = -(wx.min(wy));
                    let diff = g(t, x, z) - g(t, y, z);
                    let v5 = weighted(diff, -wmax) / (dx.powf(theta) * t.powf(-0.5 * theta - 0.5));
                    let ddiff = gy(t, x, z) - gy(t, y, z);
                    let w6 = (dx * dx / (ell * t)).min(wx);
                    let v6 = weighted(ddiff, w6) / (dx.powf(theta) * t.powf(-1.0 - 0.5 * theta));
                    r.a5 = r.a5.max(v5);
                    r.a6 = r.a6.max(v6);
                    r.all_finite &= v5.is_finite() && v6.is_finite();
                }
            }
        }
        // Gaussian profile on (-1, 1) by the midpoint rule.
        let n = 4000;
        let hq = 2.0 / n as f64;
        let norm2: f64 = (0..n)
            .map(|k| {
                let s = -1.0 + (k as f64 + 0.5) * hq;
                (-2.0 * s * s / (ell * t)).exp()
            })
            .sum::<f64>()
            * hq;
        r.a7 = r.a7.max(norm2.sqrt() / t.powf(0.25));
    }
    r
}

/// Precomputed quadrature weights of the discrete mild map on a fixed
/// space-time grid.
///
/// Lags `l = 1..=dense_lags` are stored as dense `[l][y][x]` tables; longer
/// lags go through a separable spectral representation with `spectral_terms`
/// modes.
#[derive(Debug, Clone)]
pub struct KernelTable {
    space: SpatialGrid,
    time: TimeGrid,
    diffusivity: f64,
    config: KernelConfig,
    dense_lags: usize,
    kmax: usize,
    /// `h int_{(l-1)dt}^{l dt} G d tau`.
    w_reaction: Vec<f64>,
    /// `h int_{(l-1)dt}^{l dt} dG/dy d tau`.
    w_advection: Vec<f64>,
    /// `G((l - 1/2) dt)`.
    w_noise: Vec<f64>,
    /// `h G(t_i)` for `i = 1..dense_lags`.
    w_initial: Vec<f64>,
    /// `sqrt(2) sin(q pi x_j)`, `[q][j]`.
    sin_basis: Vec<f64>,
    /// `sqrt(2) q pi cos(q pi x_j)`, `[q][j]`.
    cos_basis: Vec<f64>,
    decay: Vec<f64>,
    drift_coef: Vec<f64>,
    noise_coef: Vec<f64>,
    entry: Vec<f64>,
}

impl KernelTable {
    pub fn new(space: SpatialGrid, time: TimeGrid, diffusivity: f64, config: KernelConfig) -> Result<Self> {
        if !(diffusivity > 0.0) {
            return Err(crate::error::invalid("nu", "kernel diffusivity must be positive"));
        }
        let m = space.len();
        let n_steps = time.steps();
        let dt = time.dt();
        let h = space.h();
        let cross_lags = ((config.crossover_lag(diffusivity) / dt).ceil() as usize).clamp(1, n_steps);
        let kmax_for = |lags: usize| spectral_modes_for(diffusivity * lags as f64 * dt, config.spectral_tol);
        let dense_lags = match config.dense_window {
            DenseWindow::Crossover => cross_lags,
            DenseWindow::Lags(l) => l.clamp(1, n_steps),
            DenseWindow::Auto => (1..=cross_lags)
                .min_by_key(|&l| 3 * l * m * m + 4 * m * kmax_for(l))
                .unwrap_or(1),
        };
        let kmax = kmax_for(dense_lags);
        let nodes = space.nodes();
        let pairs = config.image_pairs;

        let mut w_reaction = vec![0.0; dense_lags * m * m];
        let mut w_advection = vec![0.0; dense_lags * m * m];
        let mut w_noise = vec![0.0; dense_lags * m * m];
        let mut w_initial = vec![0.0; dense_lags.saturating_sub(1) * m * m];
        for l in 1..=dense_lags {
            let a = (l - 1) as f64 * dt;
            let b = l as f64 * dt;
            let s_mid = diffusivity * (l as f64 - 0.5) * dt;
            let base = (l - 1) * m * m;
            for (k, &y) in nodes.iter().enumerate() {
                for (j, &x) in nodes.iter().enumerate() {
                    let idx = base + k * m + j;
                    w_reaction[idx] = h * green_cell_integral(a, b, x, y, diffusivity, pairs)?;
                    w_advection[idx] = h * green_dy_cell_integral(a, b, x, y, diffusivity, pairs)?;
                    w_noise[idx] = eval_unchecked(s_mid, x, y, &config);
                    if l < dense_lags {
                        w_initial[base + k * m + j] = h * eval_unchecked(diffusivity * b, x, y, &config);
                    }
                }
            }
        }

        let mut sin_basis = vec![0.0; kmax * m];
        let mut cos_basis = vec![0.0; kmax * m];
        let mut decay = vec![0.0; kmax];
        let mut drift_coef = vec![0.0; kmax];
        let mut noise_coef = vec![0.0; kmax];
        let mut entry = vec![0.0; kmax];
        let sqrt2 = std::f64::consts::SQRT_2;
        for q in 0..kmax {
            let qp = (q + 1) as f64 * PI;
            for (j, &x) in nodes.iter().enumerate() {
                sin_basis[q * m + j] = sqrt2 * (qp * x).sin();
                cos_basis[q * m + j] = sqrt2 * qp * (qp * x).cos();
            }
            let lam = diffusivity * qp * qp;
            decay[q] = (-lam * dt).exp();
            drift_coef[q] = -(-lam * dt).exp_m1() / lam;
            noise_coef[q] = (-0.5 * lam * dt).exp();
            entry[q] = (-lam * dense_lags as f64 * dt).exp();
        }

        Ok(Self {
            space,
            time,
            diffusivity,
            config,
            dense_lags,
            kmax,
            w_reaction,
            w_advection,
            w_noise,
            w_initial,
            sin_basis,
            cos_basis,
            decay,
            drift_coef,
            noise_coef,
            entry,
        })
    }

    pub fn space(&self) -> &SpatialGrid {
        &self.space
    }

    pub fn time(&self) -> &TimeGrid {
        &self.time
    }

    pub fn diffusivity(&self) -> f64 {
        self.diffusivity
    }

    pub fn config(&self) -> &KernelConfig {
        &self.config
    }

    /// Number of lags held in dense tables.
    pub fn dense_lags(&self) -> usize {
        self.dense_lags
    }

    /// Modes of the spectral tail.
    pub fn spectral_terms(&self) -> usize {
        self.kmax
    }

    pub fn image_terms(&self) -> usize {
        self.config.image_pairs
    }

    pub fn crossover(&self) -> f64 {
        self.config.crossover_lag(self.diffusivity)
    }

    fn block<'t>(&self, table: &'t [f64], l: usize) -> &'t [f64] {
        let m = self.space.len();
        &table[(l - 1) * m * m..l * m * m]
    }

    /// `G((l - 1/2) dt, x_j, y_k)` as a row-major `[k][j]` block, `1 <= l <= dense_lags`.
    pub fn noise_block(&self, l: usize) -> &[f64] {
        self.block(&self.w_noise, l)
    }

    /// `h int G` over lag cell `l`, `[k][j]`.
    pub fn reaction_block(&self, l: usize) -> &[f64] {
        self.block(&self.w_reaction, l)
    }

    /// `h int dG/dy` over lag cell `l`, `[k][j]`.
    pub fn advection_block(&self, l: usize) -> &[f64] {
        self.block(&self.w_advection, l)
    }

    /// Mode `q` (1-based) of the sine basis sampled on the nodes.
    pub fn basis(&self, q: usize) -> &[f64] {
        let m = self.space.len();
        &self.sin_basis[(q - 1) * m..q * m]
    }

    /// Kernel-smoothed initial datum `h sum_k G(t_i, x_j, y_k) u0(y_k)` for
    /// every time index; row 0 is `u0` itself.
    pub fn initial_term(&self, u0: &[f64]) -> Result<Vec<Vec<f64>>> {
        let m = self.space.len();
        if u0.len() != m {
            return Err(Error::ShapeMismatch {
                expected: format!("{m} nodes"),
                actual: format!("{}", u0.len()),
            });
        }
        let h = self.space.h();
        let n = self.time.steps();
        let dt = self.time.dt();
        let mut rows = Vec::with_capacity(n + 1);
        rows.push(u0.to_vec());
        let coeffs: Vec<f64> = (0..self.kmax)
            .map(|q| h * dot(&self.sin_basis[q * m..(q + 1) * m], u0))
            .collect();
        for i in 1..=n {
            let mut row = vec![0.0; m];
            if i < self.dense_lags {
                let block = &self.w_initial[(i - 1) * m * m..i * m * m];
                for (k, &u) in u0.iter().enumerate() {
                    if u != 0.0 {
                        axpy(&mut row, u, &block[k * m..(k + 1) * m]);
                    }
                }
            } else {
                let t = i as f64 * dt;
                for (q, &c) in coeffs.iter().enumerate() {
                    let lam = self.diffusivity * ((q + 1) as f64 * PI).powi(2);
                    let a = c * (-lam * t).exp();
                    if a != 0.0 {
                        axpy(&mut row, a, &self.sin_basis[q * m..(q + 1) * m]);
                    }
                }
            }
            rows.push(row);
        }
        Ok(rows)
    }

    /// Dumps the dense lags as CSV rows `lag, x, y, G, dG/dy` at midpoint lags.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["lag", "x", "y", "G", "dG/dy"])?;
        let m = self.space.len();
        let nodes = self.space.nodes();
        let dt = self.time.dt();
        for l in 1..=self.dense_lags {
            let lag = (l as f64 - 0.5) * dt;
            let block = self.noise_block(l);
            for (k, &y) in nodes.iter().enumerate() {
                for (j, &x) in nodes.iter().enumerate() {
                    let dg = green_dy(lag, x, y, self.diffusivity, &self.config)?;
                    w.serialize((lag, x, y, block[k * m + j], dg))?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn convolver(&self) -> Convolver<'_> {
        Convolver::new(self)
    }
}

#[inline]
pub(crate) fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Per-cell sources of the discrete mild map, evaluated at the left end of
/// the time cell.
#[derive(Debug, Clone, Copy)]
pub struct CellSources<'s> {
    /// Integrated against `G` with the cell measure (`beta c(u)` in the mild map).
    pub reaction: Option<&'s [f64]>,
    /// Integrated against `dG/dy` with the cell measure.
    pub advection: Option<&'s [f64]>,
    /// Integrated against `G` at midpoint lag without measure (`g dW`).
    pub noise: Option<&'s [f64]>,
}

impl<'s> CellSources<'s> {
    pub fn none() -> Self {
        Self {
            reaction: None,
            advection: None,
            noise: None,
        }
    }
}

/// Streaming evaluation of the time-space convolutions
///
/// ```text
/// sum_{k < i} sum_y [ W_c(i-k) s_c[k] + W_p(i-k) s_p[k] + W_n(i-k) s_n[k] ]
/// ```
///
/// Cells are recorded in order and targets evaluated in increasing `i`;
/// evaluating `i` requires cells `0..i` to be recorded.
pub struct Convolver<'a> {
    table: &'a KernelTable,
    reaction: Vec<f64>,
    advection: Vec<f64>,
    noise: Vec<f64>,
    flags: Vec<[bool; 3]>,
    projections: Vec<f64>,
    acc: Vec<f64>,
    recorded: usize,
    next_target: usize,
}

impl<'a> Convolver<'a> {
    fn new(table: &'a KernelTable) -> Self {
        let m = table.space.len();
        let n = table.time.steps();
        Self {
            table,
            reaction: vec![0.0; n * m],
            advection: vec![0.0; n * m],
            noise: vec![0.0; n * m],
            flags: vec![[false; 3]; n],
            projections: vec![0.0; n * table.kmax],
            acc: vec![0.0; table.kmax],
            recorded: 0,
            next_target: 1,
        }
    }

    /// Forgets all recorded cells.
    pub fn reset(&mut self) {
        self.recorded = 0;
        self.next_target = 1;
        self.acc.iter_mut().for_each(|a| *a = 0.0);
    }

    /// Records the sources of cell `k`, which must be the next unrecorded cell.
    pub fn record(&mut self, k: usize, sources: CellSources<'_>) {
        assert_eq!(k, self.recorded, "cells must be recorded in order");
        let t = self.table;
        let m = t.space.len();
        let h = t.space.h();
        let kmax = t.kmax;
        let mut flags = [false; 3];
        let slots = [
            (sources.reaction, &mut self.reaction),
            (sources.advection, &mut self.advection),
            (sources.noise, &mut self.noise),
        ];
        for (f, (src, store)) in slots.into_iter().enumerate() {
            if let Some(s) = src {
                assert_eq!(s.len(), m);
                let row = &mut store[k * m..(k + 1) * m];
                row.copy_from_slice(s);
                flags[f] = s.iter().any(|&v| v != 0.0);
            }
        }
        self.flags[k] = flags;
        let proj = &mut self.projections[k * kmax..(k + 1) * kmax];
        for q in 0..kmax {
            let sb = &t.sin_basis[q * m..(q + 1) * m];
            let cb = &t.cos_basis[q * m..(q + 1) * m];
            let mut r = 0.0;
            if flags[0] {
                r += t.drift_coef[q] * h * dot(sb, &self.reaction[k * m..(k + 1) * m]);
            }
            if flags[1] {
                r += t.drift_coef[q] * h * dot(cb, &self.advection[k * m..(k + 1) * m]);
            }
            if flags[2] {
                r += t.noise_coef[q] * dot(sb, &self.noise[k * m..(k + 1) * m]);
            }
            proj[q] = r;
        }
        self.recorded += 1;
    }

    /// Adds the convolution at target time index `i` into `out`.
    pub fn evaluate(&mut self, i: usize, out: &mut [f64]) {
        assert_eq!(i, self.next_target, "targets must be evaluated in order");
        assert!(i <= self.recorded, "cell {} not recorded", i - 1);
        let t = self.table;
        let m = t.space.len();
        let kmax = t.kmax;
        let ld = t.dense_lags;

        for l in 1..=ld.min(i) {
            let k = i - l;
            let flags = self.flags[k];
            let blocks = [
                (flags[0], t.reaction_block(l), &self.reaction),
                (flags[1], t.advection_block(l), &self.advection),
                (flags[2], t.noise_block(l), &self.noise),
            ];
            for (active, block, store) in blocks {
                if !active {
                    continue;
                }
                let src = &store[k * m..(k + 1) * m];
                for (y, &s) in src.iter().enumerate() {
                    if s != 0.0 {
                        axpy(out, s, &block[y * m..(y + 1) * m]);
                    }
                }
            }
        }

        if i > ld {
            let k = i - ld - 1;
            let proj = &self.projections[k * kmax..(k + 1) * kmax];
            for q in 0..kmax {
                self.acc[q] = t.decay[q] * self.acc[q] + t.entry[q] * proj[q];
            }
            for q in 0..kmax {
                let a = self.acc[q];
                if a != 0.0 {
                    axpy(out, a, &t.sin_basis[q * m..(q + 1) * m]);
                }
            }
        }
        self.next_target += 1;
    }
}
