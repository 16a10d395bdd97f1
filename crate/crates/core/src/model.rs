//! Model parameters, polynomial nonlinearities, truncation operators and
//! the noise-coefficient contract.
//!
//! The equation being solved on `(0, T) x (0, 1)` is
//!
//! ```text
//! u_t = nu u_xx - alpha u^delta u_x + beta u (1 - u^delta)(u^delta - gamma) + g(t, x, u) W_tx
//! ```
//!
//! with homogeneous Dirichlet boundary values. The advection term is carried
//! in conservative form `-(alpha/(delta+1)) d/dx p(u)` with `p(u) = u^(delta+1)`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// How the diffusivity enters the heat kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelConvention {
    /// `G_nu(t, x, y) = G(nu t, x, y)`, the Dirichlet fundamental solution of `u_t = nu u_xx`.
    #[default]
    Scaled,
    /// Unit-diffusivity kernel regardless of `nu`.
    Unit,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub nu: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub delta: u32,
    #[serde(rename = "T")]
    pub horizon: f64,
    #[serde(default)]
    pub kernel: KernelConvention,
}

impl ModelParams {
    /// Validated constructor. `alpha` and `beta` may be zero (pure heat /
    /// pure advection reductions); everything else follows the model's
    /// standing assumptions.
    pub fn new(nu: f64, alpha: f64, beta: f64, gamma: f64, delta: u32, horizon: f64) -> Result<Self> {
        let p = Self {
            nu,
            alpha,
            beta,
            gamma,
            delta,
            horizon,
            kernel: KernelConvention::Scaled,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn with_kernel(mut self, kernel: KernelConvention) -> Self {
        self.kernel = kernel;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.nu > 0.0 && self.nu.is_finite()) {
            return Err(invalid("nu", format!("must be > 0, got {}", self.nu)));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(invalid("alpha", format!("must be >= 0, got {}", self.alpha)));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(invalid("beta", format!("must be >= 0, got {}", self.beta)));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(invalid("gamma", format!("must lie in (0, 1), got {}", self.gamma)));
        }
        if self.delta < 1 {
            return Err(invalid("delta", "must be an integer >= 1"));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(invalid("T", format!("must be > 0, got {}", self.horizon)));
        }
        Ok(())
    }

    /// Diffusivity seen by the heat kernel and the Galerkin eigenvalues.
    pub fn kernel_diffusivity(&self) -> f64 {
        match self.kernel {
            KernelConvention::Scaled => self.nu,
            KernelConvention::Unit => 1.0,
        }
    }

    /// The smallest admissible `L^p` exponent, `2 delta + 1`.
    pub fn min_exponent(&self) -> f64 {
        2.0 * self.delta as f64 + 1.0
    }
}

/// `u^k` by repeated multiplication.
#[inline]
pub fn ipow(u: f64, k: u32) -> f64 {
    let mut acc = 1.0;
    for _ in 0..k {
        acc *= u;
    }
    acc
}

/// `p(u) = u^(delta+1)`.
#[inline]
pub fn advection_nonlinearity(u: f64, delta: u32) -> f64 {
    ipow(u, delta + 1)
}

/// `c(u) = u (1 - u^delta)(u^delta - gamma)` in factored form.
#[inline]
pub fn reaction_nonlinearity(u: f64, gamma: f64, delta: u32) -> f64 {
    let ud = ipow(u, delta);
    u * (1.0 - ud) * (ud - gamma)
}

/// `(1+gamma) u^(delta+1) - gamma u - u^(2 delta + 1)`, the expanded form of `c`.
#[inline]
pub fn reaction_expanded(u: f64, gamma: f64, delta: u32) -> f64 {
    let ud = ipow(u, delta);
    (1.0 + gamma) * ud * u - gamma * u - ud * ud * u
}

/// `c'(u) = (1+gamma)(delta+1) u^delta - gamma - (2 delta + 1) u^(2 delta)`.
#[inline]
pub fn reaction_derivative(u: f64, gamma: f64, delta: u32) -> f64 {
    let ud = ipow(u, delta);
    let d = delta as f64;
    (1.0 + gamma) * (d + 1.0) * ud - gamma - (2.0 * d + 1.0) * ud * ud
}

/// Discrete `L^p(0,1)` norm with the rectangle rule: `(h sum |y_j|^p)^(1/p)`.
pub fn lp_norm(field: &[f64], h: f64, p: f64) -> f64 {
    lp_norm_pow(field, h, p).powf(1.0 / p)
}

/// `h sum |y_j|^p`.
pub fn lp_norm_pow(field: &[f64], h: f64, p: f64) -> f64 {
    h * field.iter().map(|y| y.abs().powf(p)).sum::<f64>()
}

/// Radius `n` and exponent `p` of the `L^p` ball used by the truncation `pi_n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruncationLevel {
    pub n: f64,
    pub p: f64,
}

/// Relative slack on the ball radius. Rescaling a field onto the sphere of
/// radius `n` lands within a few ulps of `n`; the slack makes the retraction
/// exactly idempotent.
const RADIUS_SLACK: f64 = 8.0 * f64::EPSILON;

impl TruncationLevel {
    pub fn new(n: f64, p: f64, delta: u32) -> Result<Self> {
        if !(n > 0.0) {
            return Err(invalid("n", format!("truncation radius must be > 0, got {n}")));
        }
        let pmin = 2.0 * delta as f64 + 1.0;
        if !(p >= pmin) {
            return Err(invalid("p", format!("need p >= 2 delta + 1 = {pmin}, got {p}")));
        }
        Ok(Self { n, p })
    }

    /// Level `n` with the minimal exponent `p = 2 delta + 1`.
    pub fn minimal(n: f64, params: &ModelParams) -> Result<Self> {
        Self::new(n, params.min_exponent(), params.delta)
    }

    /// Whether a field of norm `norm` is left untouched by `pi_n`.
    pub fn is_inside(&self, norm: f64) -> bool {
        norm <= self.n * (1.0 + RADIUS_SLACK)
    }

    /// Scale factor `pi_n y = factor * y` for a field of the given norm.
    pub fn scale_for_norm(&self, norm: f64) -> f64 {
        if self.is_inside(norm) {
            1.0
        } else {
            self.n / norm
        }
    }
}

/// Radial retraction onto the `L^p` ball of radius `n`.
pub fn truncate_field(y: &[f64], trunc: &TruncationLevel, h: f64) -> Vec<f64> {
    let mut out = y.to_vec();
    truncate_in_place(&mut out, trunc, h);
    out
}

/// In-place `pi_n`; returns the applied scale factor.
pub fn truncate_in_place(y: &mut [f64], trunc: &TruncationLevel, h: f64) -> f64 {
    let s = trunc.scale_for_norm(lp_norm(y, h, trunc.p));
    if s != 1.0 {
        y.iter_mut().for_each(|v| *v *= s);
    }
    s
}

/// `phi_n(r) = 1` on `[0, n^p]`, `n r^(-1/p)` beyond, so that `pi_n y = y phi_n(||y||^p)`.
pub fn phi_n(r: f64, trunc: &TruncationLevel) -> f64 {
    if r <= trunc.n.powf(trunc.p) {
        1.0
    } else {
        trunc.n * r.powf(-1.0 / trunc.p)
    }
}

/// Piecewise-linear cutoff: 1 on `[0, n]`, `n + 1 - x` on `(n, n+1]`, 0 beyond.
pub fn eta_n(x: f64, n: f64) -> f64 {
    if x <= n {
        1.0
    } else if x <= n + 1.0 {
        n + 1.0 - x
    } else {
        0.0
    }
}

/// `(p_n(u), c_n(u)) = (eta_n(|u|) p(u), eta_n(|u|) c(u))`.
pub fn truncated_nonlinearities(u: f64, n: f64, gamma: f64, delta: u32) -> (f64, f64) {
    let eta = eta_n(u.abs(), n);
    (
        eta * advection_nonlinearity(u, delta),
        eta * reaction_nonlinearity(u, gamma, delta),
    )
}

/// The multiplicative noise coefficient `g(t, x, r)` together with its
/// uniform bound `K` and Lipschitz constant `L` in `r`.
pub trait NoiseCoefficient: Send + Sync {
    fn evaluate(&self, t: f64, x: f64, r: f64) -> f64;

    fn bound(&self) -> f64;

    fn lipschitz(&self) -> f64;

    /// `dg/dr` when known in closed form.
    fn derivative_in_r(&self, _t: f64, _x: f64, _r: f64) -> Option<f64> {
        None
    }

    /// `dg/dr`, falling back to a central difference with step `1e-6 (1 + |r|)`.
    fn slope_in_r(&self, t: f64, x: f64, r: f64) -> f64 {
        self.derivative_in_r(t, x, r).unwrap_or_else(|| {
            let step = 1e-6 * (1.0 + r.abs());
            (self.evaluate(t, x, r + step) - self.evaluate(t, x, r - step)) / (2.0 * step)
        })
    }

    /// True when `g(t, ., .)` vanishes identically at time `t`.
    fn vanishes_at(&self, _t: f64) -> bool {
        false
    }
}

/// Named noise-coefficient presets with analytically known `(K, L)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "preset", rename_all = "kebab-case")]
pub enum NoisePreset {
    /// `g = 0`.
    Zero,
    /// `g = sigma`.
    Constant { sigma: f64 },
    /// `g = sigma (1 + sin(r)/2) sin(pi x)`.
    LipschitzSin { sigma: f64 },
    /// `g = 0` for `t < t_switch`, `sigma` afterwards.
    SwitchAtTime { sigma: f64, t_switch: f64 },
    /// `g = sigma (1 + sin(k pi x))`, state independent.
    Modulated { sigma: f64, k: f64 },
}

impl NoisePreset {
    pub fn name(&self) -> &'static str {
        match self {
            NoisePreset::Zero => "zero",
            NoisePreset::Constant { .. } => "constant",
            NoisePreset::LipschitzSin { .. } => "lipschitz-sin",
            NoisePreset::SwitchAtTime { .. } => "switch-at-time",
            NoisePreset::Modulated { .. } => "modulated",
        }
    }

    pub fn formula(&self) -> &'static str {
        match self {
            NoisePreset::Zero => "g(t,x,r) = 0",
            NoisePreset::Constant { .. } => "g(t,x,r) = sigma",
            NoisePreset::LipschitzSin { .. } => "g(t,x,r) = sigma*(1 + sin(r)/2)*sin(pi*x)",
            NoisePreset::SwitchAtTime { .. } => "g(t,x,r) = sigma if t >= t_switch else 0",
            NoisePreset::Modulated { .. } => "g(t,x,r) = sigma*(1 + sin(k*pi*x))",
        }
    }
}

impl NoiseCoefficient for NoisePreset {
    fn evaluate(&self, t: f64, x: f64, r: f64) -> f64 {
        use std::f64::consts::PI;
        match *self {
            NoisePreset::Zero => 0.0,
            NoisePreset::Constant { sigma } => sigma,
            NoisePreset::LipschitzSin { sigma } => sigma * (1.0 + 0.5 * r.sin()) * (PI * x).sin(),
            NoisePreset::SwitchAtTime { sigma, t_switch } => {
                if t >= t_switch {
                    sigma
                } else {
                    0.0
                }
            }
            NoisePreset::Modulated { sigma, k } => sigma * (1.0 + (k * PI * x).sin()),
        }
    }

    fn bound(&self) -> f64 {
        match *self {
            NoisePreset::Zero => 0.0,
            NoisePreset::Constant { sigma } | NoisePreset::SwitchAtTime { sigma, .. } => sigma.abs(),
            // sup |1 + sin(r)/2| = 3/2 and sup |sin(pi x)| = 1 on [0,1]
            NoisePreset::LipschitzSin { sigma } => 1.5 * sigma.abs(),
            NoisePreset::Modulated { sigma, .. } => 2.0 * sigma.abs(),
        }
    }

    fn lipschitz(&self) -> f64 {
        match *self {
            NoisePreset::LipschitzSin { sigma } => 0.5 * sigma.abs(),
            _ => 0.0,
        }
    }

    fn derivative_in_r(&self, _t: f64, x: f64, r: f64) -> Option<f64> {
        use std::f64::consts::PI;
        Some(match *self {
            NoisePreset::LipschitzSin { sigma } => sigma * 0.5 * r.cos() * (PI * x).sin(),
            _ => 0.0,
        })
    }

    fn vanishes_at(&self, t: f64) -> bool {
        match *self {
            NoisePreset::Zero => true,
            NoisePreset::Constant { sigma } | NoisePreset::LipschitzSin { sigma } => sigma == 0.0,
            NoisePreset::Modulated { sigma, .. } => sigma == 0.0,
            NoisePreset::SwitchAtTime { sigma, t_switch } => sigma == 0.0 || t < t_switch,
        }
    }
}

/// A noise coefficient assembled from closures, mostly for experiments and tests.
pub struct FnNoise<G> {
    pub g: G,
    pub bound: f64,
    pub lipschitz: f64,
}

impl<G> NoiseCoefficient for FnNoise<G>
where
    G: Fn(f64, f64, f64) -> f64 + Send + Sync,
{
    fn evaluate(&self, t: f64, x: f64, r: f64) -> f64 {
        (self.g)(t, x, r)
    }

    fn bound(&self) -> f64 {
        self.bound
    }

    fn lipschitz(&self) -> f64 {
        self.lipschitz
    }
}

/// Named initial data on the interior nodes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum InitialCondition {
    Zero,
    Constant {
        value: f64,
    },
    /// `amplitude sin(mode pi x)`.
    Sine {
        amplitude: f64,
        #[serde(default = "one")]
        mode: u32,
    },
}

fn one() -> u32 {
    1
}

impl InitialCondition {
    pub fn evaluate(&self, x: f64) -> f64 {
        match *self {
            InitialCondition::Zero => 0.0,
            InitialCondition::Constant { value } => value,
            InitialCondition::Sine { amplitude, mode } => amplitude * (mode as f64 * std::f64::consts::PI * x).sin(),
        }
    }

    pub fn sample(&self, space: &crate::grid::SpatialGrid) -> Vec<f64> {
        space.sample(|x| self.evaluate(x))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn nonlinearity_examples() {
        assert_eq!(advection_nonlinearity(2.0, 2), 8.0);
        assert_eq!(advection_nonlinearity(0.0, 5), 0.0);
        assert_eq!(advection_nonlinearity(-1.0, 1), 1.0);

        assert_eq!(reaction_nonlinearity(1.0, 0.5, 1), 0.0);
        assert_eq!(reaction_nonlinearity(0.5, 0.5, 1), 0.0);
        assert_eq!(reaction_nonlinearity(2.0, 0.5, 1), -3.0);

        assert_eq!(reaction_expanded(1.0, 0.5, 1), 0.0);
        assert_eq!(reaction_expanded(0.0, 0.3, 3), 0.0);
        assert_eq!(reaction_expanded(2.0, 0.5, 1), reaction_nonlinearity(2.0, 0.5, 1));
    }

    #[test]
    fn reaction_derivative_matches_difference_quotient() {
        for &(u, gamma, delta) in &[(0.3, 0.5, 1), (-0.7, 0.2, 2), (1.4, 0.9, 3)] {
            let e = 1e-6;
            let fd = (reaction_expanded(u + e, gamma, delta) - reaction_expanded(u - e, gamma, delta)) / (2.0 * e);
            assert!((fd - reaction_derivative(u, gamma, delta)).abs() < 1e-7);
        }
    }

    #[test]
    fn truncation_examples() {
        let h = 1.0 / 64.0;
        let m = 63;
        let t = TruncationLevel { n: 2.0, p: 2.0 };
        // L^2 norm of the constant 1 on the interior nodes is sqrt(m h) < 1.
        let ones = vec![1.0; m];
        assert_eq!(truncate_field(&ones, &t, h), ones);
        let fours = vec![4.0; m];
        let out = truncate_field(&fours, &t, h);
        let expected = 2.0 / lp_norm(&fours, h, 2.0) * 4.0;
        assert!(out.iter().all(|&v| (v - expected).abs() < 1e-14));
        let zeros = vec![0.0; m];
        assert_eq!(truncate_field(&zeros, &t, h), zeros);
    }

    #[test]
    fn truncation_of_constant_four_on_unit_measure() {
        // With the rectangle-rule measure summing to one, y = 4 has norm 4 and
        // the retraction halves it.
        let t = TruncationLevel { n: 2.0, p: 2.0 };
        let y = vec![4.0; 10];
        let out = truncate_field(&y, &t, 0.1);
        assert!(out.iter().all(|&v| (v - 2.0).abs() < 1e-15));
    }

    #[test]
    fn phi_n_examples() {
        let t = TruncationLevel { n: 2.0, p: 2.0 };
        assert_eq!(phi_n(3.0, &t), 1.0);
        assert!((phi_n(9.0, &t) - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(phi_n(4.0, &t), 1.0);
    }

    #[test]
    fn eta_n_examples() {
        assert_eq!(eta_n(1.5, 2.0), 1.0);
        assert_eq!(eta_n(2.5, 2.0), 0.5);
        assert_eq!(eta_n(3.5, 2.0), 0.0);
    }

    #[test]
    fn truncated_nonlinearity_examples() {
        assert_eq!(truncated_nonlinearities(1.0, 2.0, 0.5, 1), (1.0, 0.0));
        assert_eq!(truncated_nonlinearities(3.5, 2.0, 0.5, 1), (0.0, 0.0));
        let (p, c) = truncated_nonlinearities(2.5, 2.0, 0.5, 1);
        assert!((p - 3.125).abs() < 1e-14);
        assert!((c + 3.75).abs() < 1e-14);
    }

    #[test]
    fn params_validation() {
        assert!(ModelParams::new(1.0, 0.5, 0.5, 0.5, 1, 1.0).is_ok());
        assert!(ModelParams::new(0.0, 0.5, 0.5, 0.5, 1, 1.0).is_err());
        assert!(ModelParams::new(1.0, -0.5, 0.5, 0.5, 1, 1.0).is_err());
        assert!(ModelParams::new(1.0, 0.5, 0.5, 1.0, 1, 1.0).is_err());
        assert!(ModelParams::new(1.0, 0.5, 0.5, 0.5, 0, 1.0).is_err());
        assert!(ModelParams::new(1.0, 0.5, 0.5, 0.5, 1, -1.0).is_err());
        assert!(TruncationLevel::new(1.0, 2.9, 1).is_err());
        assert!(TruncationLevel::new(0.0, 3.0, 1).is_err());
    }

    #[test]
    fn lipschitz_sin_derivative_is_consistent() {
        let g = NoisePreset::LipschitzSin { sigma: 0.7 };
        let (t, x, r) = (0.1, 0.3, 0.8);
        let step = 1e-6;
        let fd = (g.evaluate(t, x, r + step) - g.evaluate(t, x, r - step)) / (2.0 * step);
        assert!((fd - g.slope_in_r(t, x, r)).abs() < 1e-9);
        let closure = FnNoise {
            g: |_t: f64, x: f64, r: f64| 0.7 * (1.0 + 0.5 * r.sin()) * (std::f64::consts::PI * x).sin(),
            bound: 1.05,
            lipschitz: 0.35,
        };
        assert!((closure.slope_in_r(t, x, r) - g.slope_in_r(t, x, r)).abs() < 1e-8);
    }

    fn field(len: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-5.0f64..5.0, len)
    }

    proptest! {
        #[test]
        fn expanded_reaction_agrees(u in -10.0f64..10.0, gamma in 0.01f64..0.99, delta in 1u32..=3) {
            let lhs = reaction_nonlinearity(u, gamma, delta);
            let rhs = reaction_expanded(u, gamma, delta);
            let scale = 1.0 + u.abs().powi(2 * delta as i32 + 1);
            prop_assert!((lhs - rhs).abs() <= 1e-12 * scale);
        }

        #[test]
        fn truncation_is_two_lipschitz(u in field(16), v in field(16), n in 0.1f64..4.0, p in 3.0f64..6.0) {
            let h = 1.0 / 17.0;
            let t = TruncationLevel { n, p };
            let tu = truncate_field(&u, &t, h);
            let tv = truncate_field(&v, &t, h);
            let d_out: Vec<f64> = tu.iter().zip(&tv).map(|(a, b)| a - b).collect();
            let d_in: Vec<f64> = u.iter().zip(&v).map(|(a, b)| a - b).collect();
            prop_assert!(lp_norm(&d_out, h, p) <= 2.0 * lp_norm(&d_in, h, p) + 1e-12);
            prop_assert!(lp_norm(&tu, h, p) <= n * (1.0 + 1e-14));
        }

        #[test]
        fn truncation_is_idempotent(y in field(16), n in 0.1f64..4.0, p in 3.0f64..6.0) {
            let h = 1.0 / 17.0;
            let t = TruncationLevel { n, p };
            let once = truncate_field(&y, &t, h);
            prop_assert_eq!(truncate_field(&once, &t, h), once);
        }

        #[test]
        fn truncation_equals_phi_scaling(y in field(16), n in 0.1f64..4.0, p in 3.0f64..6.0) {
            let h = 1.0 / 17.0;
            let t = TruncationLevel { n, p };
            let phi = phi_n(lp_norm_pow(&y, h, p), &t);
            for (a, b) in truncate_field(&y, &t, h).iter().zip(&y) {
                prop_assert!((a - b * phi).abs() <= 1e-13 * (1.0 + b.abs()));
            }
        }

        #[test]
        fn eta_is_one_lipschitz(x in 0.0f64..10.0, y in 0.0f64..10.0, n in 0.0f64..5.0) {
            prop_assert!((eta_n(x, n) - eta_n(y, n)).abs() <= (x - y).abs() + 1e-15);
        }

        #[test]
        fn presets_respect_bounds(t in 0.0f64..1.0, x in 0.0f64..1.0, r in -20.0f64..20.0, s in -20.0f64..20.0, sigma in 0.0f64..2.0) {
            let presets = [
                NoisePreset::Zero,
                NoisePreset::Constant { sigma },
                NoisePreset::LipschitzSin { sigma },
                NoisePreset::SwitchAtTime { sigma, t_switch: 0.5 },
                NoisePreset::Modulated { sigma, k: 2.0 },
            ];
            for g in presets {
                prop_assert!(g.evaluate(t, x, r).abs() <= g.bound() + 1e-14);
                prop_assert!((g.evaluate(t, x, r) - g.evaluate(t, x, s)).abs() <= g.lipschitz() * (r - s).abs() + 1e-14);
            }
        }
    }
}
