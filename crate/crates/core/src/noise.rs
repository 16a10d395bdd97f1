//! Discrete Brownian sheet, Walsh sums and mode-projected Wiener paths.
//!
//! Randomness is stored at half-cell resolution: each row holds `2(m+1)`
//! half-cells of width `h/2` tiling `[0, 1]`, each `N(0, dt h / 2)`. The cell
//! of interior node `j` (1-based) is the pair of half-cells `2j-1, 2j`. A
//! coarse sheet on `(N/2, (m+1)/2 - 1)` is obtained by summing 2x2 blocks of
//! half-cells, so refined and coarse grids share one noise realization.

use std::f64::consts::{PI, SQRT_2};
use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::grid::{SpatialGrid, TimeGrid};

/// Gaussian sampling path, recorded in run metadata.
pub const GAUSSIAN_METHOD: &str =
    "ChaCha8 keyed by (seed, stream = time row, word position = 64 * half-cell), ziggurat StandardNormal";

const WORDS_PER_CELL: u128 = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSheet {
    time: TimeGrid,
    space: SpatialGrid,
    seed: Option<u64>,
    halves: Vec<f64>,
    cells: Vec<f64>,
}

fn half_count(space: &SpatialGrid) -> usize {
    2 * (space.len() + 1)
}

fn node_cells(halves: &[f64], n: usize, m: usize) -> Vec<f64> {
    let w = 2 * (m + 1);
    let mut cells = vec![0.0; n * m];
    for i in 0..n {
        let row = &halves[i * w..(i + 1) * w];
        for j in 0..m {
            cells[i * m + j] = row[2 * j + 1] + row[2 * j + 2];
        }
    }
    cells
}

/// Standard normal draw for half-cell `(i, k)` under `seed`.
fn keyed_normal(rng: &mut ChaCha8Rng, k: usize) -> f64 {
    rng.set_word_pos(WORDS_PER_CELL * k as u128);
    rng.sample(StandardNormal)
}

impl NoiseSheet {
    /// Samples a sheet whose every half-cell is a pure function of `(seed, i, k)`.
    pub fn sample(seed: u64, time: TimeGrid, space: SpatialGrid) -> Self {
        let n = time.steps();
        let w = half_count(&space);
        let scale = (0.5 * time.dt() * space.h()).sqrt();
        let mut halves = vec![0.0; n * w];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in 0..n {
            rng.set_stream(i as u64);
            for k in 0..w {
                halves[i * w + k] = scale * keyed_normal(&mut rng, k);
            }
        }
        let cells = node_cells(&halves, n, space.len());
        Self {
            time,
            space,
            seed: Some(seed),
            halves,
            cells,
        }
    }

    pub fn zeros(time: TimeGrid, space: SpatialGrid) -> Self {
        let n = time.steps();
        Self {
            time,
            space,
            seed: None,
            halves: vec![0.0; n * half_count(&space)],
            cells: vec![0.0; n * space.len()],
        }
    }

    /// Builds a sheet from explicit half-cell values, row-major `[i][k]`.
    pub fn from_half_cells(time: TimeGrid, space: SpatialGrid, halves: Vec<f64>) -> Result<Self> {
        let expected = time.steps() * half_count(&space);
        if halves.len() != expected {
            return Err(Error::ShapeMismatch {
                expected: format!("{expected} half-cells"),
                actual: halves.len().to_string(),
            });
        }
        let cells = node_cells(&halves, time.steps(), space.len());
        Ok(Self {
            time,
            space,
            seed: None,
            halves,
            cells,
        })
    }

    /// Builds a sheet from node increments `[i][j]`, splitting each evenly over
    /// its two half-cells. Boundary half-cells are zero.
    pub fn from_increments(time: TimeGrid, space: SpatialGrid, cells: Vec<f64>) -> Result<Self> {
        let (n, m) = (time.steps(), space.len());
        if cells.len() != n * m {
            return Err(Error::ShapeMismatch {
                expected: format!("{n}x{m}"),
                actual: cells.len().to_string(),
            });
        }
        let w = half_count(&space);
        let mut halves = vec![0.0; n * w];
        for i in 0..n {
            for j in 0..m {
                let v = 0.5 * cells[i * m + j];
                halves[i * w + 2 * j + 1] = v;
                halves[i * w + 2 * j + 2] = v;
            }
        }
        Ok(Self {
            time,
            space,
            seed: None,
            halves,
            cells,
        })
    }

    pub fn time(&self) -> &TimeGrid {
        &self.time
    }

    pub fn space(&self) -> &SpatialGrid {
        &self.space
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    /// `dW[i][j]` over `[t_i, t_{i+1}] x [y_j - h/2, y_j + h/2]`.
    pub fn increment(&self, i: usize, j: usize) -> f64 {
        self.cells[i * self.space.len() + j]
    }

    /// Node increments of time row `i`.
    pub fn row(&self, i: usize) -> &[f64] {
        let m = self.space.len();
        &self.cells[i * m..(i + 1) * m]
    }

    /// All node increments, row-major `[i][j]`.
    pub fn increments(&self) -> &[f64] {
        &self.cells
    }

    pub fn half_cells(&self) -> &[f64] {
        &self.halves
    }

    /// Copy with `dW[r][z] += epsilon dt h`.
    pub fn bump(&self, r_index: usize, z_index: usize, epsilon: f64) -> Result<Self> {
        let (n, m) = (self.time.steps(), self.space.len());
        if r_index >= n {
            return Err(Error::IndexOutOfRange {
                what: "r_index",
                index: r_index,
                limit: n,
            });
        }
        if z_index >= m {
            return Err(Error::IndexOutOfRange {
                what: "z_index",
                index: z_index,
                limit: m,
            });
        }
        let mut out = self.clone();
        let shift = epsilon * self.time.dt() * self.space.h();
        out.cells[r_index * m + z_index] += shift;
        let w = half_count(&self.space);
        out.halves[r_index * w + 2 * z_index + 1] += 0.5 * shift;
        out.halves[r_index * w + 2 * z_index + 2] += 0.5 * shift;
        Ok(out)
    }

    /// Sums pairs of time rows and pairs of half-cells: `(N, m) -> (N/2, (m+1)/2 - 1)`.
    pub fn coarsen(&self) -> Result<Self> {
        self.coarsen_time()?.coarsen_space()
    }

    /// Sums pairs of time rows.
    pub fn coarsen_time(&self) -> Result<Self> {
        let n = self.time.steps();
        if !n.is_multiple_of(2) || n < 2 {
            return Err(crate::error::invalid("N", format!("cannot halve {n} time steps")));
        }
        let w = half_count(&self.space);
        let mut halves = vec![0.0; n / 2 * w];
        for i in 0..n / 2 {
            for k in 0..w {
                halves[i * w + k] = self.halves[2 * i * w + k] + self.halves[(2 * i + 1) * w + k];
            }
        }
        let time = TimeGrid::new(self.time.horizon(), n / 2)?;
        Self::from_half_cells(time, self.space, halves)
    }

    /// Sums pairs of adjacent half-cells: `m -> (m+1)/2 - 1`.
    pub fn coarsen_space(&self) -> Result<Self> {
        let m = self.space.len();
        if !(m + 1).is_multiple_of(2) {
            return Err(crate::error::invalid(
                "m",
                format!("m + 1 must be even to coarsen, got m = {m}"),
            ));
        }
        let space = SpatialGrid::new(m.div_ceil(2) - 1)?;
        let n = self.time.steps();
        let w = half_count(&self.space);
        let wc = half_count(&space);
        let mut halves = vec![0.0; n * wc];
        for i in 0..n {
            for k in 0..wc {
                halves[i * wc + k] = self.halves[i * w + 2 * k] + self.halves[i * w + 2 * k + 1];
            }
        }
        Self::from_half_cells(self.time, space, halves)
    }

    /// Writes node increments: little-endian `u64 N`, `u64 m`, then `N m` `f64` row-major.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(&(self.time.steps() as u64).to_le_bytes())?;
        w.write_all(&(self.space.len() as u64).to_le_bytes())?;
        for v in &self.cells {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    /// Reads the layout of [`NoiseSheet::write_binary`]. Half-cells are
    /// reconstructed by even splitting, so replayed solves are exact but
    /// coarsening an imported sheet is not.
    pub fn read_binary<R: Read>(mut r: R, horizon: f64) -> Result<Self> {
        let (n, m) = read_header(&mut r)?;
        let cells = read_f64s(&mut r, n * m)?;
        Self::from_increments(TimeGrid::new(horizon, n)?, SpatialGrid::new(m)?, cells)
    }
}

pub(crate) fn read_header<R: Read>(r: &mut R) -> Result<(usize, usize)> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)
        .map_err(|e| Error::Format(format!("truncated header: {e}")))?;
    let n = u64::from_le_bytes(buf) as usize;
    r.read_exact(&mut buf)
        .map_err(|e| Error::Format(format!("truncated header: {e}")))?;
    let m = u64::from_le_bytes(buf) as usize;
    Ok((n, m))
}

pub(crate) fn read_f64s<R: Read>(r: &mut R, count: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(count);
    let mut buf = [0u8; 8];
    for k in 0..count {
        r.read_exact(&mut buf)
            .map_err(|_| Error::Format(format!("expected {count} values, found {k}")))?;
        out.push(f64::from_le_bytes(buf));
    }
    let mut extra = [0u8; 1];
    if r.read(&mut extra)? != 0 {
        return Err(Error::Format("trailing bytes after payload".into()));
    }
    Ok(out)
}

/// `sum_{i,j} w[i][j] dW[i][j]` with `weights` row-major `[i][j]`.
pub fn walsh_integral(weights: &[f64], sheet: &NoiseSheet) -> Result<f64> {
    let inc = sheet.increments();
    if weights.len() != inc.len() {
        return Err(Error::ShapeMismatch {
            expected: format!("{}x{}", sheet.time().steps(), sheet.space().len()),
            actual: weights.len().to_string(),
        });
    }
    Ok(weights.iter().zip(inc).map(|(w, d)| w * d).sum())
}

/// Wiener paths `W^k(t_i)` driven by the sheet through the sine basis.
#[derive(Debug, Clone)]
pub struct ProjectedWiener {
    /// `paths[k-1][i] = W^k(t_i)`, `i = 0..=N`.
    pub paths: Vec<Vec<f64>>,
}

impl ProjectedWiener {
    pub fn n_modes(&self) -> usize {
        self.paths.len()
    }

    /// `W^k(t_{i+1}) - W^k(t_i)` for 1-based mode `k`.
    pub fn increment(&self, k: usize, i: usize) -> f64 {
        self.paths[k - 1][i + 1] - self.paths[k - 1][i]
    }
}

/// `W^k` increments `sum_j sqrt(2) sin(k pi y_j) dW[i][j]`, cumulated in time.
pub fn project_modes(sheet: &NoiseSheet, n_modes: usize) -> Result<ProjectedWiener> {
    let m = sheet.space().len();
    if n_modes == 0 || n_modes > m {
        return Err(crate::error::invalid(
            "n_modes",
            format!("need 1 <= n_modes <= m = {m}, got {n_modes}"),
        ));
    }
    let nodes = sheet.space().nodes();
    let n = sheet.time().steps();
    let paths = (1..=n_modes)
        .map(|k| {
            let basis: Vec<f64> = nodes.iter().map(|&y| SQRT_2 * (k as f64 * PI * y).sin()).collect();
            let mut path = Vec::with_capacity(n + 1);
            path.push(0.0);
            let mut w = 0.0;
            for i in 0..n {
                w += crate::kernel::dot(&basis, sheet.row(i));
                path.push(w);
            }
            path
        })
        .collect();
    Ok(ProjectedWiener { paths })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grids(n: usize, m: usize) -> (TimeGrid, SpatialGrid) {
        (TimeGrid::new(1.0, n).unwrap(), SpatialGrid::new(m).unwrap())
    }

    #[test]
    fn same_seed_same_sheet() {
        let (t, s) = grids(20, 15);
        assert_eq!(NoiseSheet::sample(7, t, s), NoiseSheet::sample(7, t, s));
        assert_ne!(
            NoiseSheet::sample(7, t, s).increments(),
            NoiseSheet::sample(8, t, s).increments()
        );
    }

    #[test]
    fn cells_do_not_depend_on_grid_length() {
        // A longer run shares its leading rows with a shorter one.
        let s = SpatialGrid::new(7).unwrap();
        let short = NoiseSheet::sample(3, TimeGrid::new(1.0, 10).unwrap(), s);
        let long = NoiseSheet::sample(3, TimeGrid::new(2.0, 20).unwrap(), s);
        assert_eq!(short.half_cells(), &long.half_cells()[..short.half_cells().len()]);
    }

    #[test]
    fn variance_scales_with_cell_measure() {
        let (t, s) = grids(400, 255);
        let sheet = NoiseSheet::sample(11, t, s);
        let inc = sheet.increments();
        let n = inc.len() as f64;
        let mean = inc.iter().sum::<f64>() / n;
        let var = inc.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let target = t.dt() * s.h();
        assert!((var / target - 1.0).abs() < 0.04, "{}", var / target);
    }

    #[test]
    fn independent_seeds_are_uncorrelated() {
        let (t, s) = grids(100, 127);
        let a = NoiseSheet::sample(1, t, s);
        let b = NoiseSheet::sample(2, t, s);
        let dot: f64 = a.increments().iter().zip(b.increments()).map(|(x, y)| x * y).sum();
        let na: f64 = a.increments().iter().map(|x| x * x).sum();
        let nb: f64 = b.increments().iter().map(|x| x * x).sum();
        assert!((dot / (na * nb).sqrt()).abs() < 0.05);
    }

    #[test]
    fn bump_is_local_and_invertible() {
        let (t, s) = grids(10, 7);
        let sheet = NoiseSheet::sample(5, t, s);
        assert_eq!(sheet.bump(3, 2, 0.0).unwrap(), sheet);
        let b = sheet.bump(3, 2, 0.5).unwrap();
        for i in 0..10 {
            for j in 0..7 {
                if (i, j) != (3, 2) {
                    assert_eq!(b.increment(i, j).to_bits(), sheet.increment(i, j).to_bits());
                }
            }
        }
        assert!((b.increment(3, 2) - sheet.increment(3, 2) - 0.5 * t.dt() * s.h()).abs() < 1e-15);
        let back = b.bump(3, 2, -0.5).unwrap();
        assert!((back.increment(3, 2) - sheet.increment(3, 2)).abs() < 1e-15);
        assert!(sheet.bump(10, 0, 1.0).is_err());
        assert!(sheet.bump(0, 7, 1.0).is_err());
    }

    #[test]
    fn coarsening_sums_cells() {
        let (t, s) = grids(8, 15);
        let fine = NoiseSheet::sample(9, t, s);
        let coarse = fine.coarsen().unwrap();
        assert_eq!(coarse.time().steps(), 4);
        assert_eq!(coarse.space().len(), 7);
        // Coarse node J sits at fine node 2J; its cell spans half of fine cell
        // 2J-1, all of 2J and half of 2J+1.
        let w = 32;
        let h = fine.half_cells();
        for i in 0..4 {
            for jc in 0..7 {
                let lo = 4 * jc + 2;
                let mut expect = 0.0;
                for row in [2 * i, 2 * i + 1] {
                    for k in lo..lo + 4 {
                        expect += h[row * w + k];
                    }
                }
                assert!((coarse.increment(i, jc) - expect).abs() < 1e-15);
            }
        }
        let total_f: f64 = fine.half_cells().iter().sum();
        let total_c: f64 = coarse.half_cells().iter().sum();
        assert!((total_f - total_c).abs() < 1e-12);
        assert!(NoiseSheet::sample(1, TimeGrid::new(1.0, 3).unwrap(), s)
            .coarsen()
            .is_err());
        assert!(NoiseSheet::sample(1, t, SpatialGrid::new(6).unwrap())
            .coarsen()
            .is_err());
    }

    #[test]
    fn binary_round_trip() {
        let (t, s) = grids(6, 5);
        let sheet = NoiseSheet::sample(21, t, s);
        let mut buf = Vec::new();
        sheet.write_binary(&mut buf).unwrap();
        assert_eq!(buf.len(), 16 + 6 * 5 * 8);
        let back = NoiseSheet::read_binary(&buf[..], 1.0).unwrap();
        assert_eq!(back.increments(), sheet.increments());
        assert!(NoiseSheet::read_binary(&buf[..40], 1.0).is_err());
    }

    #[test]
    fn walsh_examples() {
        let (t, s) = grids(10, 7);
        let sheet = NoiseSheet::sample(4, t, s);
        assert_eq!(walsh_integral(&vec![0.0; 70], &sheet).unwrap(), 0.0);
        let total: f64 = sheet.increments().iter().sum();
        assert!((walsh_integral(&vec![1.0; 70], &sheet).unwrap() - total).abs() < 1e-15);
        assert!(walsh_integral(&[1.0; 3], &sheet).is_err());
    }

    #[test]
    fn projected_paths() {
        let (t, s) = grids(10, 7);
        let z = project_modes(&NoiseSheet::zeros(t, s), 3).unwrap();
        assert!(z.paths.iter().flatten().all(|&v| v == 0.0));
        let p = project_modes(&NoiseSheet::sample(2, t, s), 7).unwrap();
        assert!(p.paths.iter().all(|path| path[0] == 0.0 && path.len() == 11));
        assert!(project_modes(&NoiseSheet::zeros(t, s), 8).is_err());
        assert!(project_modes(&NoiseSheet::zeros(t, s), 0).is_err());
    }
}
