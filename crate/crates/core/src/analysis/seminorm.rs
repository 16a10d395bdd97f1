use crate::error::{invalid, Result};
use crate::grid::SpatialGrid;

/// `h^2 sum_{j != k} |f_j - f_k|^p / |x_j - x_k|^(2 + eps)` over interior nodes.
pub fn fractional_seminorm(f: &[f64], space: &SpatialGrid, eps: f64, p: f64) -> Result<f64> {
    if !(p > 1.0 + eps) {
        return Err(invalid("p", format!("need p > 1 + eps, got p = {p}, eps = {eps}")));
    }
    if f.len() != space.len() {
        return Err(crate::error::Error::ShapeMismatch {
            expected: space.len().to_string(),
            actual: f.len().to_string(),
        });
    }
    let h = space.h();
    let mut acc = 0.0;
    for j in 0..f.len() {
        for k in j + 1..f.len() {
            let dx = (k - j) as f64 * h;
            acc += (f[j] - f[k]).abs().powf(p) / dx.powf(2.0 + eps);
        }
    }
    Ok(2.0 * h * h * acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn constant_has_zero_seminorm() {
        let g = SpatialGrid::new(31).unwrap();
        assert_eq!(fractional_seminorm(&vec![2.5; 31], &g, 0.5, 2.0).unwrap(), 0.0);
    }

    #[test]
    fn identity_converges_to_eight_thirds() {
        let errs: Vec<f64> = [63, 255, 1023]
            .iter()
            .map(|&m| {
                let g = SpatialGrid::new(m).unwrap();
                let f = g.nodes();
                (fractional_seminorm(&f, &g, 0.5, 2.0).unwrap() - 8.0 / 3.0).abs()
            })
            .collect();
        assert!(errs[1] < errs[0] && errs[2] < errs[1], "{errs:?}");
        // singular diagonal: error decays like h^(1/2)
        let order = (errs[0] / errs[2]).ln() / 16f64.ln();
        assert!((0.4..0.6).contains(&order), "{errs:?}");
    }

    #[test]
    fn rejects_small_exponent() {
        let g = SpatialGrid::new(7).unwrap();
        assert!(fractional_seminorm(&[0.0; 7], &g, 0.5, 1.5).is_err());
    }

    proptest! {
        #[test]
        fn homogeneous_of_degree_p(c in -3.0f64..3.0, p in 1.6f64..4.0) {
            let g = SpatialGrid::new(15).unwrap();
            let f: Vec<f64> = g.nodes().iter().map(|x| (3.0 * x).sin() + x * x).collect();
            let cf: Vec<f64> = f.iter().map(|v| c * v).collect();
            let a = fractional_seminorm(&cf, &g, 0.5, p).unwrap();
            let b = c.abs().powf(p) * fractional_seminorm(&f, &g, 0.5, p).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * b.abs().max(1e-300));
        }
    }
}
