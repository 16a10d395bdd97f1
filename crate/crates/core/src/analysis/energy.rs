//! Pathwise `L^p` energy bound for the transformed solution `v = u - phi`.
//!
//! The left side at time `t` is
//!
//! ```text
//! ||v(t)||_p^p + (nu p (p-1) / 2) int_0^t || |v|^((p-2)/2) v_x ||_2^2
//!     + beta p gamma int_0^t ||v||_p^p + (beta p / 8) int_0^t ||v||_{p+2 delta}^{p+2 delta}
//! ```
//!
//! and the right side is the constant
//!
//! ```text
//! ||u_0||_p^p + p K1 T + p K2 T sup ||phi||_{p(delta+1)}^{p(delta+1)} + p K3 T sup ||phi||_{p+2 delta}^{p+2 delta}
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model::{lp_norm_pow, ModelParams};
use crate::solver::FieldPath;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyConstants {
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
}

/// `K1`, `K2`, `K3` of the energy bound. Requires `beta > 0` and `p >= 2 delta + 1`.
pub fn energy_constants(p: f64, params: &ModelParams) -> Result<EnergyConstants> {
    let d = params.delta as f64;
    if !(p >= 2.0 * d + 1.0) {
        return Err(invalid(
            "p",
            format!("need p >= 2 delta + 1 = {}, got {p}", 2.0 * d + 1.0),
        ));
    }
    let (alpha, beta, gamma, nu) = (params.alpha, params.beta, params.gamma, params.nu);
    if !(beta > 0.0) {
        return Err(invalid("beta", "energy constants need beta > 0"));
    }
    let a = 2f64.powf(d) * (p - 1.0).powi(2) * alpha * alpha;
    let q = p + 2.0 * d;

    let brace = a / (4.0 * nu)
        + 2f64.powf(2.0 * d) * beta * (1.0 + gamma).powi(2)
        + 2f64.powf(d) * beta * (1.0 + gamma)
        + 2f64.powf(2.0 * d - 1.0) * beta * (2.0 * d + 1.0);
    let k1 = 2.0 * d / q * (8.0 * p / q).powf(p / (2.0 * d)) * brace.powf(q / (2.0 * d));

    let k2 = 2f64.powf(d) * beta * (1.0 + gamma) / p * ((p - 1.0) / p).powf(p - 1.0)
        + a / (nu * p) * (2.0 * (p - 2.0) / p).powf(2.0 / (p - 2.0));

    let k3 = (1.0 / q)
        * ((4.0 * (q - 1.0) / (beta * q)).powf(q - 1.0) * (2f64.powf(2.0 * d - 1.0) * beta * (2.0 * d + 1.0)).powf(q)
            + 2.0 * (4.0 * (q - 2.0) / (beta * q)).powf((q - 2.0) / 2.0) * (a / (2.0 * nu)).powf(q / 2.0));

    Ok(EnergyConstants { k1, k2, k3 })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    pub p: f64,
    pub constants: EnergyConstants,
    pub times: Vec<f64>,
    pub lhs: Vec<f64>,
    pub rhs: f64,
    pub margin: Vec<f64>,
    pub phi_sup_advective: f64,
    pub phi_sup_reactive: f64,
}

impl EnergyReport {
    pub fn min_margin(&self) -> f64 {
        self.margin.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn holds(&self) -> bool {
        self.margin.iter().all(|&m| m > 0.0)
    }
}

/// `h sum_j |v_j|^(p-2) (v_x)_j^2`, centered differences inside and one-sided
/// at the first and last interior nodes.
fn dissipation(v: &[f64], h: f64, p: f64) -> f64 {
    let m = v.len();
    let grad = |j: usize| -> f64 {
        if j == 0 {
            (v[1] - v[0]) / h
        } else if j == m - 1 {
            (v[m - 1] - v[m - 2]) / h
        } else {
            (v[j + 1] - v[j - 1]) / (2.0 * h)
        }
    };
    h * (0..m).map(|j| v[j].abs().powf(p - 2.0) * grad(j).powi(2)).sum::<f64>()
}

/// Evaluates both sides of the energy bound along `v` with noise part `phi`.
pub fn energy_inequality_check(v: &FieldPath, phi: &FieldPath, params: &ModelParams, p: f64) -> Result<EnergyReport> {
    if v.time() != phi.time() || v.space() != phi.space() {
        return Err(Error::ShapeMismatch {
            expected: format!("{}x{}", v.time().steps(), v.space().len()),
            actual: format!("{}x{}", phi.time().steps(), phi.space().len()),
        });
    }
    let constants = energy_constants(p, params)?;
    let d = params.delta as f64;
    let q = p + 2.0 * d;
    let time = *v.time();
    let h = v.space().h();
    let dt = time.dt();
    let n = time.steps();

    let phi_sup_advective = (0..=n)
        .map(|i| lp_norm_pow(phi.row(i), h, p * (d + 1.0)))
        .fold(0.0, f64::max);
    let phi_sup_reactive = (0..=n).map(|i| lp_norm_pow(phi.row(i), h, q)).fold(0.0, f64::max);
    let t_end = params.horizon;
    let rhs = lp_norm_pow(v.row(0), h, p)
        + p * constants.k1 * t_end
        + p * constants.k2 * t_end * phi_sup_advective
        + p * constants.k3 * t_end * phi_sup_reactive;

    let diss_coef = params.nu * p * (p - 1.0) / 2.0;
    let mut integral = 0.0;
    let mut lhs = Vec::with_capacity(n + 1);
    for i in 0..=n {
        let row = v.row(i);
        let norm_p = lp_norm_pow(row, h, p);
        lhs.push(norm_p + integral);
        integral += dt
            * (diss_coef * dissipation(row, h, p)
                + params.beta * p * params.gamma * norm_p
                + params.beta * p / 8.0 * lp_norm_pow(row, h, q));
    }
    let margin = lhs.iter().map(|l| rhs - l).collect();
    Ok(EnergyReport {
        p,
        constants,
        times: time.times(),
        lhs,
        rhs,
        margin,
        phi_sup_advective,
        phi_sup_reactive,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs()
    }

    // Reference values from a 40-digit evaluation of the closed forms.
    #[test]
    fn constants_match_high_precision_oracle() {
        let cases = [
            (
                (1.0, 1.0),
                [7524.8324898299231177, 1.6296296296296296296, 163122.13073935819674],
            ),
            (
                (0.5, 0.5),
                [1170.1212343342889699, 0.51851851851851851852, 81541.476269241639676],
            ),
            (
                (1.0, 2.0),
                [37443.879498697247036, 2.0740740740740740741, 326165.9050769665587],
            ),
        ];
        for ((alpha, beta), want) in cases {
            let params = ModelParams::new(1.0, alpha, beta, 0.5, 1, 1.0).unwrap();
            let k = energy_constants(3.0, &params).unwrap();
            assert!(rel(k.k1, want[0]) < 1e-10, "K1 {} vs {}", k.k1, want[0]);
            assert!(rel(k.k2, want[1]) < 1e-10, "K2 {} vs {}", k.k2, want[1]);
            assert!(rel(k.k3, want[2]) < 1e-10, "K3 {} vs {}", k.k3, want[2]);
        }
        let params = ModelParams::new(1.0, 0.5, 0.5, 0.5, 2, 1.0).unwrap();
        let k = energy_constants(5.0, &params).unwrap();
        assert!(rel(k.k1, 15042.412372345574272) < 1e-10);
        assert!(rel(k.k2, 3.8593383509031494057) < 1e-10);
        assert!(rel(k.k3, 371986490565952559.27) < 1e-10);
    }

    #[test]
    fn k2_grows_with_alpha() {
        let k = |alpha| {
            let params = ModelParams::new(1.0, alpha, 1.0, 0.5, 1, 1.0).unwrap();
            energy_constants(3.0, &params).unwrap().k2
        };
        assert!(k(0.5) < k(1.0) && k(1.0) < k(2.0));
    }

    #[test]
    fn rejects_small_exponent_and_zero_beta() {
        let params = ModelParams::new(1.0, 1.0, 1.0, 0.5, 1, 1.0).unwrap();
        assert!(energy_constants(2.5, &params).is_err());
        let params = ModelParams::new(1.0, 1.0, 0.0, 0.5, 1, 1.0).unwrap();
        assert!(energy_constants(3.0, &params).is_err());
    }

    #[test]
    fn zero_paths_have_lhs_zero() {
        let space = crate::SpatialGrid::new(7).unwrap();
        let time = crate::TimeGrid::new(1.0, 10).unwrap();
        let zero = FieldPath::zeros(time, space);
        let params = ModelParams::new(1.0, 1.0, 1.0, 0.5, 1, 1.0).unwrap();
        let r = energy_inequality_check(&zero, &zero, &params, 3.0).unwrap();
        assert!(r.lhs.iter().all(|&l| l == 0.0));
        assert!((r.rhs - 3.0 * r.constants.k1).abs() < 1e-9 * r.rhs);
        assert!(r.holds());
    }
}
