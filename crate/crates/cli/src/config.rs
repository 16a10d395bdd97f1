use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use sgbh_core::analysis::Refinement;
use sgbh_core::solver::{Iteration, LambdaMode, Stepping};
use sgbh_core::{InitialCondition, ModelParams, NoiseCoefficient, NoisePreset, SpatialGrid, TruncationLevel};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    Picard,
    Galerkin,
    Transformed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Solve,
    Compare,
    Energy,
    Malliavin,
    Density,
    Dichotomy,
    Convergence,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Format {
    Csv,
    Binary,
    Json,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub m: usize,
    pub n: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub experiment: Experiment,
    #[serde(default = "default_scheme")]
    pub scheme: Scheme,
}

fn default_scheme() -> Scheme {
    Scheme::Picard
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PicardSection {
    #[serde(default = "default_lambda")]
    pub lambda: LambdaMode,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    #[serde(default)]
    pub iteration: Iteration,
    /// Increasing truncation levels; the first is the working level.
    #[serde(default = "default_schedule")]
    pub n_schedule: Vec<f64>,
    /// `L^p` exponent of the truncation ball; defaults to `2 delta + 1`.
    #[serde(default)]
    pub p: Option<f64>,
}

fn default_lambda() -> LambdaMode {
    LambdaMode::Auto
}
fn default_tol() -> f64 {
    1e-8
}
fn default_max_iters() -> usize {
    50
}
fn default_schedule() -> Vec<f64> {
    vec![10.0, 20.0, 40.0]
}

impl Default for PicardSection {
    fn default() -> Self {
        Self {
            lambda: default_lambda(),
            tol: default_tol(),
            max_iters: default_max_iters(),
            iteration: Iteration::default(),
            n_schedule: default_schedule(),
            p: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct GalerkinSection {
    /// Defaults to `m`.
    #[serde(default)]
    pub n_modes: Option<usize>,
    #[serde(default)]
    pub stepping: Stepping,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedSection {
    #[serde(default)]
    pub base: u64,
    #[serde(default = "one")]
    pub count: u64,
}

fn one() -> u64 {
    1
}

impl Default for SeedSection {
    fn default() -> Self {
        Self { base: 0, count: 1 }
    }
}

impl SeedSection {
    pub fn list(&self) -> Vec<u64> {
        (self.base..self.base + self.count).collect()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "default_dir")]
    pub directory: PathBuf,
    #[serde(default = "default_formats")]
    pub formats: Vec<Format>,
}

fn default_dir() -> PathBuf {
    PathBuf::from("sgbh-out")
}
fn default_formats() -> Vec<Format> {
    vec![Format::Csv, Format::Json]
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            directory: default_dir(),
            formats: default_formats(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareSection {
    /// The larger initial datum; `initial` is the smaller one.
    pub upper: InitialCondition,
    /// Overrides the grid-based tolerance.
    #[serde(default)]
    pub tol: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnergySection {
    #[serde(default)]
    pub p: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MalliavinSection {
    pub r_index: usize,
    pub z_index: usize,
    #[serde(default = "default_eps")]
    pub epsilons: Vec<f64>,
    #[serde(default)]
    pub interval: Option<[f64; 2]>,
    #[serde(default = "default_max_rel")]
    pub max_rel_error: f64,
}

fn default_eps() -> Vec<f64> {
    vec![1e-2, 5e-3, 2.5e-3]
}
fn default_max_rel() -> f64 {
    0.05
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DensitySection {
    pub t_obs: Vec<f64>,
    #[serde(default = "half")]
    pub x: f64,
}

fn half() -> f64 {
    0.5
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvergenceSection {
    #[serde(default = "three")]
    pub levels: usize,
    #[serde(default = "joint")]
    pub refinement: Refinement,
}

fn three() -> usize {
    3
}
fn joint() -> Refinement {
    Refinement::Joint
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub run: RunSection,
    pub model: ModelParams,
    pub noise: NoisePreset,
    pub initial: InitialCondition,
    pub grid: GridConfig,
    #[serde(default)]
    pub picard: PicardSection,
    #[serde(default)]
    pub galerkin: GalerkinSection,
    #[serde(default)]
    pub seeds: SeedSection,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(default)]
    pub compare: Option<CompareSection>,
    #[serde(default)]
    pub energy: Option<EnergySection>,
    #[serde(default)]
    pub malliavin: Option<MalliavinSection>,
    #[serde(default)]
    pub density: Option<DensitySection>,
    #[serde(default)]
    pub convergence: Option<ConvergenceSection>,
}

fn bad(field: &str, reason: impl Into<String>) -> CliError {
    CliError::Validation {
        field: field.to_string(),
        reason: reason.into(),
    }
}

fn finite_nonneg(field: &str, v: f64) -> Result<(), CliError> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(bad(field, format!("must be finite and >= 0, got {v}")))
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| bad("config", format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Exponent of the truncation ball.
    pub fn exponent(&self) -> f64 {
        self.picard.p.unwrap_or_else(|| self.model.min_exponent())
    }

    pub fn truncation(&self) -> TruncationLevel {
        TruncationLevel {
            n: self.picard.n_schedule[0],
            p: self.exponent(),
        }
    }

    pub fn n_modes(&self) -> usize {
        self.galerkin.n_modes.unwrap_or(self.grid.m)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.model.validate().map_err(|e| match e {
            sgbh_core::Error::InvalidParameter { name, reason } => bad(&format!("model.{name}"), reason),
            other => bad("model", other.to_string()),
        })?;
        if self.grid.m < 3 {
            return Err(bad(
                "grid.m",
                format!("need at least 3 interior nodes, got {}", self.grid.m),
            ));
        }
        if self.grid.n < 1 {
            return Err(bad("grid.n", "need at least one time step"));
        }
        match self.noise {
            NoisePreset::Zero => {}
            NoisePreset::Constant { sigma } | NoisePreset::LipschitzSin { sigma } => {
                finite_nonneg("noise.sigma", sigma)?
            }
            NoisePreset::Modulated { sigma, k } => {
                finite_nonneg("noise.sigma", sigma)?;
                if !k.is_finite() {
                    return Err(bad("noise.k", "must be finite"));
                }
            }
            NoisePreset::SwitchAtTime { sigma, t_switch } => {
                finite_nonneg("noise.sigma", sigma)?;
                finite_nonneg("noise.t_switch", t_switch)?;
            }
        }
        let ic_ok = |ic: &InitialCondition| match *ic {
            InitialCondition::Zero => true,
            InitialCondition::Constant { value } => value.is_finite(),
            InitialCondition::Sine { amplitude, mode } => amplitude.is_finite() && mode >= 1,
        };
        if !ic_ok(&self.initial) {
            return Err(bad("initial", "values must be finite and mode >= 1"));
        }
        if let LambdaMode::Fixed { value } = self.picard.lambda {
            if !(value > 0.0) {
                return Err(bad("picard.lambda.value", format!("must be > 0, got {value}")));
            }
        }
        if !(self.picard.tol > 0.0) {
            return Err(bad("picard.tol", format!("must be > 0, got {}", self.picard.tol)));
        }
        if self.picard.max_iters < 1 {
            return Err(bad("picard.max_iters", "must be >= 1"));
        }
        let s = &self.picard.n_schedule;
        if s.is_empty() || s[0] <= 0.0 || s.windows(2).any(|w| w[1] <= w[0]) {
            return Err(bad(
                "picard.n_schedule",
                "must be non-empty, positive and strictly increasing",
            ));
        }
        if let Some(p) = self.picard.p {
            if p < self.model.min_exponent() {
                return Err(bad(
                    "picard.p",
                    format!("need p >= 2 delta + 1 = {}", self.model.min_exponent()),
                ));
            }
        }
        let nm = self.n_modes();
        if nm < 1 || nm > self.grid.m {
            return Err(bad(
                "galerkin.n_modes",
                format!("need 1 <= n_modes <= m = {}", self.grid.m),
            ));
        }
        if self.seeds.count < 1 {
            return Err(bad("seeds.count", "must be >= 1"));
        }
        if self.output.formats.is_empty() {
            return Err(bad("output.formats", "list at least one format"));
        }
        self.validate_experiment()
    }

    fn validate_experiment(&self) -> Result<(), CliError> {
        let space = SpatialGrid::new(self.grid.m).map_err(|e| bad("grid.m", e.to_string()))?;
        let horizon = self.model.horizon;
        match self.run.experiment {
            Experiment::Solve => {}
            Experiment::Compare => {
                let c = self
                    .compare
                    .as_ref()
                    .ok_or_else(|| bad("compare", "section required for compare"))?;
                let lo = self.initial.sample(&space);
                let hi = c.upper.sample(&space);
                if let Some(j) = (0..lo.len()).find(|&j| lo[j] > hi[j]) {
                    return Err(bad(
                        "compare.upper",
                        format!("initial exceeds upper at node {j} ({} > {})", lo[j], hi[j]),
                    ));
                }
            }
            Experiment::Energy => {
                if !(self.model.beta > 0.0) {
                    return Err(bad("model.beta", "energy constants need beta > 0"));
                }
                if let Some(p) = self.energy.as_ref().and_then(|e| e.p) {
                    if p < self.model.min_exponent() {
                        return Err(bad("energy.p", format!("need p >= {}", self.model.min_exponent())));
                    }
                }
            }
            Experiment::Malliavin => {
                let m = self
                    .malliavin
                    .as_ref()
                    .ok_or_else(|| bad("malliavin", "section required for malliavin"))?;
                if m.r_index >= self.grid.n {
                    return Err(bad("malliavin.r_index", format!("must be < n = {}", self.grid.n)));
                }
                if m.z_index >= self.grid.m {
                    return Err(bad("malliavin.z_index", format!("must be < m = {}", self.grid.m)));
                }
                if m.epsilons.is_empty() || m.epsilons.iter().any(|e| !(*e > 0.0)) {
                    return Err(bad("malliavin.epsilons", "need positive values"));
                }
                if let Some([a, b]) = m.interval {
                    if !(0.0 < a && a < b && b < 1.0) {
                        return Err(bad("malliavin.interval", "need 0 < a < b < 1"));
                    }
                }
            }
            Experiment::Density | Experiment::Dichotomy => {
                let d = self
                    .density
                    .as_ref()
                    .ok_or_else(|| bad("density", "section required"))?;
                if d.t_obs.is_empty() || d.t_obs.iter().any(|t| !(*t >= 0.0 && *t <= horizon)) {
                    return Err(bad("density.t_obs", format!("times must lie in [0, {horizon}]")));
                }
                if !(d.x > 0.0 && d.x < 1.0) {
                    return Err(bad("density.x", "must lie in (0, 1)"));
                }
                if self.seeds.count < 200 {
                    return Err(bad("seeds.count", "density estimation needs at least 200 seeds"));
                }
                if self.run.experiment == Experiment::Dichotomy
                    && !matches!(self.noise, NoisePreset::SwitchAtTime { .. })
                {
                    return Err(bad("noise.preset", "dichotomy needs the switch-at-time preset"));
                }
            }
            Experiment::Convergence => {
                let c = self.convergence.clone().unwrap_or(ConvergenceSection {
                    levels: 3,
                    refinement: Refinement::Joint,
                });
                if c.levels < 3 {
                    return Err(bad("convergence.levels", "need at least 3 levels"));
                }
                let f = 1usize << (c.levels - 1);
                let space_ok = (self.grid.m + 1).is_multiple_of(f) && (self.grid.m + 1) / f >= 4;
                let time_ok = self.grid.n.is_multiple_of(f);
                let (need_space, need_time) = match c.refinement {
                    Refinement::Space => (true, false),
                    Refinement::Time => (false, true),
                    Refinement::Joint => (true, true),
                };
                if need_space && !space_ok {
                    return Err(bad(
                        "grid.m",
                        format!("m + 1 must be divisible by {f} with at least 3 coarse nodes"),
                    ));
                }
                if need_time && !time_ok {
                    return Err(bad("grid.n", format!("n must be divisible by {f}")));
                }
            }
        }
        Ok(())
    }
}

/// Text listing of the built-in presets.
pub fn preset_listing() -> String {
    let noise = [
        NoisePreset::Zero,
        NoisePreset::Constant { sigma: 1.0 },
        NoisePreset::LipschitzSin { sigma: 1.0 },
        NoisePreset::SwitchAtTime {
            sigma: 1.0,
            t_switch: 0.5,
        },
        NoisePreset::Modulated { sigma: 1.0, k: 1.0 },
    ];
    let mut out = String::from("noise presets (K = sup |g|, L = Lipschitz constant in r; shown per unit sigma)\n");
    for p in noise {
        let (k, l) = (p.bound(), p.lipschitz());
        let scale = |v: f64| -> String {
            match p {
                NoisePreset::Zero => format!("{v}"),
                _ => format!("{v}*sigma"),
            }
        };
        out.push_str(&format!(
            "  {:<15} {:<45} K={} L={}\n",
            p.name(),
            p.formula(),
            scale(k),
            scale(l)
        ));
    }
    out.push_str("initial conditions\n");
    out.push_str("  zero            u0(x) = 0\n");
    out.push_str("  constant        u0(x) = value\n");
    out.push_str("  sine            u0(x) = amplitude*sin(mode*pi*x)\n");
    out
}
