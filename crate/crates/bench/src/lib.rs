//! Fixed workloads shared by the benchmarks and their smoke test.

use std::f64::consts::PI;

use sgbh_core::malliavin::derivative_solve;
use sgbh_core::solver::{galerkin_solve, picard_solve};
use sgbh_core::{
    FieldPath, GalerkinConfig, KernelConfig, KernelTable, MildSystem, ModelParams, NoisePreset, NoiseSheet,
    PicardConfig, Result, SpatialGrid, TimeGrid, TruncationLevel,
};

pub struct Workload {
    pub params: ModelParams,
    pub noise: NoisePreset,
    pub space: SpatialGrid,
    pub time: TimeGrid,
    pub sheet: NoiseSheet,
    pub u0: Vec<f64>,
}

impl Workload {
    pub fn new(m: usize, n: usize) -> Result<Self> {
        let params = ModelParams::new(1.0, 0.5, 0.5, 0.5, 1, 0.25)?;
        let space = SpatialGrid::new(m)?;
        let time = TimeGrid::new(params.horizon, n)?;
        Ok(Self {
            params,
            noise: NoisePreset::LipschitzSin { sigma: 0.3 },
            space,
            time,
            sheet: NoiseSheet::sample(7, time, space),
            u0: space.sample(|x| 0.5 * (PI * x).sin()),
        })
    }

    pub fn table(&self) -> Result<KernelTable> {
        KernelTable::new(
            self.space,
            self.time,
            self.params.kernel_diffusivity(),
            KernelConfig::default(),
        )
    }

    fn system<'a>(&'a self, table: &'a KernelTable) -> Result<MildSystem<'a>> {
        Ok(MildSystem::new(self.params, &self.noise, table)?
            .with_truncation(TruncationLevel::minimal(10.0, &self.params)?))
    }

    pub fn march(&self, table: &KernelTable) -> Result<FieldPath> {
        Ok(picard_solve(&self.u0, &self.sheet, &self.system(table)?, &PicardConfig::march())?.path)
    }

    pub fn picard(&self, table: &KernelTable) -> Result<FieldPath> {
        picard_solve(&self.u0, &self.sheet, &self.system(table)?, &PicardConfig::default())?.require_converged()
    }

    pub fn galerkin(&self) -> Result<FieldPath> {
        galerkin_solve(
            &self.u0,
            &self.sheet,
            &self.params,
            &self.noise,
            &GalerkinConfig::new(self.space.len()),
        )
    }

    pub fn derivative(&self, table: &KernelTable, base: &FieldPath) -> Result<FieldPath> {
        let r = self.time.steps() / 4;
        Ok(derivative_solve(base, &self.sheet, &self.system(table)?, r, self.space.len() / 2)?.values)
    }
}
