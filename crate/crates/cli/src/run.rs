use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use serde_json::{json, Value};

use sgbh_core::analysis::{
    comparison_check, convergence_study, dichotomy_experiment, energy_inequality_check, ensemble_map,
    ConvergenceReport, Reference, Refinement, StudyScheme, StudySpec,
};
use sgbh_core::io::{write_path_binary, write_path_csv, FieldKind, Sidecar};
use sgbh_core::malliavin::{derivative_solve, fd_oracle, integrated_derivative, positivity_fraction, relative_l2};
use sgbh_core::solver::{
    galerkin_solve, global_solve, picard_solve, stochastic_convolution, transformed_solve, StoppingRecord,
};
use sgbh_core::{
    FieldPath, GalerkinConfig, KernelConfig, KernelTable, MildSystem, NoiseSheet, PicardConfig, SpatialGrid, TimeGrid,
};

use crate::config::{Experiment, Format, RunConfig, Scheme};
use crate::error::CliError;

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

fn check(name: impl Into<String>, pass: bool, detail: impl Into<String>) -> Check {
    Check {
        name: name.into(),
        pass,
        detail: detail.into(),
    }
}

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub version: &'static str,
    pub status: &'static str,
    pub exit_code: i32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub config: Option<RunConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    pub wall_time_s: f64,
    pub summary: Value,
    pub checks: Vec<Check>,
    pub warnings: Vec<String>,
    pub artifacts: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl Manifest {
    pub fn write(&self, dir: &Path) -> Result<PathBuf, CliError> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join("manifest.json");
        serde_json::to_writer_pretty(BufWriter::new(File::create(&path)?), self)?;
        Ok(path)
    }
}

/// Collects artifacts and check outcomes while an experiment runs.
pub struct Outputs {
    dir: PathBuf,
    formats: Vec<Format>,
    pub artifacts: Vec<String>,
    pub checks: Vec<Check>,
    pub warnings: Vec<String>,
    pub lambda: Option<f64>,
    pub summary: Value,
}

impl Outputs {
    fn new(cfg: &RunConfig) -> Result<Self, CliError> {
        std::fs::create_dir_all(&cfg.output.directory).map_err(|e| CliError::Validation {
            field: "output.directory".into(),
            reason: format!("cannot create {}: {e}", cfg.output.directory.display()),
        })?;
        Ok(Self {
            dir: cfg.output.directory.clone(),
            formats: cfg.output.formats.clone(),
            artifacts: Vec::new(),
            checks: Vec::new(),
            warnings: Vec::new(),
            lambda: None,
            summary: Value::Null,
        })
    }

    fn wants(&self, f: Format) -> bool {
        self.formats.contains(&f)
    }

    fn create(&mut self, name: &str) -> Result<BufWriter<File>, CliError> {
        self.artifacts.push(name.to_string());
        Ok(BufWriter::new(File::create(self.dir.join(name))?))
    }

    fn field(&mut self, stem: &str, kind: FieldKind, path: &FieldPath) -> Result<(), CliError> {
        if self.wants(Format::Csv) {
            let w = self.create(&format!("{stem}.csv"))?;
            write_path_csv(path, w)?;
        }
        if self.wants(Format::Binary) {
            let w = self.create(&format!("{stem}.bin"))?;
            write_path_binary(path, kind, w)?;
        }
        if self.wants(Format::Binary) || self.wants(Format::Json) {
            let w = self.create(&format!("{stem}.json"))?;
            Sidecar::new(kind, path).write(w)?;
        }
        Ok(())
    }

    fn report<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let w = self.create(name)?;
        serde_json::to_writer_pretty(w, value)?;
        Ok(())
    }

    fn table(&mut self, name: &str, header: &[&str], rows: &[Vec<f64>]) -> Result<(), CliError> {
        use std::io::Write;
        if !self.wants(Format::Csv) {
            return Ok(());
        }
        let mut w = self.create(name)?;
        writeln!(w, "{}", header.join(","))?;
        for r in rows {
            let line: Vec<String> = r.iter().map(|v| format!("{v:e}")).collect();
            writeln!(w, "{}", line.join(","))?;
        }
        Ok(())
    }
}

struct Setup {
    space: SpatialGrid,
    time: TimeGrid,
    table: KernelTable,
    u0: Vec<f64>,
}

impl Setup {
    fn new(cfg: &RunConfig) -> Result<Self, CliError> {
        let space = SpatialGrid::new(cfg.grid.m)?;
        let time = TimeGrid::new(cfg.model.horizon, cfg.grid.n)?;
        let table = KernelTable::new(space, time, cfg.model.kernel_diffusivity(), KernelConfig::default())?;
        let u0 = cfg.initial.sample(&space);
        Ok(Self { space, time, table, u0 })
    }

    fn system<'a>(&'a self, cfg: &'a RunConfig) -> Result<MildSystem<'a>, CliError> {
        Ok(MildSystem::new(cfg.model, &cfg.noise, &self.table)?)
    }

    fn sheet(&self, seed: u64) -> NoiseSheet {
        NoiseSheet::sample(seed, self.time, self.space)
    }
}

fn picard_config(cfg: &RunConfig) -> PicardConfig {
    PicardConfig {
        lambda: cfg.picard.lambda,
        tol: cfg.picard.tol,
        max_iters: cfg.picard.max_iters,
        iteration: cfg.picard.iteration,
    }
}

/// Runs the configured experiment and returns the manifest. Errors carry
/// their exit code; the caller still writes a manifest for them.
pub fn execute(cfg: &RunConfig) -> (Manifest, Option<CliError>) {
    let started = Instant::now();
    let mut outputs = match Outputs::new(cfg) {
        Ok(o) => o,
        Err(e) => return (failure_manifest(Some(cfg.clone()), &e, started), Some(e)),
    };
    let result = match cfg.run.experiment {
        Experiment::Solve => solve(cfg, &mut outputs),
        Experiment::Compare => compare(cfg, &mut outputs),
        Experiment::Energy => energy(cfg, &mut outputs),
        Experiment::Malliavin => malliavin(cfg, &mut outputs),
        Experiment::Density | Experiment::Dichotomy => density(cfg, &mut outputs),
        Experiment::Convergence => convergence(cfg, &mut outputs),
    };
    let failed = outputs.checks.iter().any(|c| !c.pass);
    let (status, code, error) = match &result {
        Err(e) => (status_name(e.exit_code()), e.exit_code(), Some(e.to_string())),
        Ok(()) if failed => ("check-failed", 1, None),
        Ok(()) => ("pass", 0, None),
    };
    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION"),
        status,
        exit_code: code,
        config: Some(cfg.clone()),
        lambda: outputs.lambda,
        wall_time_s: started.elapsed().as_secs_f64(),
        summary: outputs.summary,
        checks: outputs.checks,
        warnings: outputs.warnings,
        artifacts: outputs.artifacts,
        error,
    };
    (manifest, result.err())
}

fn status_name(code: i32) -> &'static str {
    match code {
        0 => "pass",
        2 => "validation-failed",
        3 => "blow-up",
        _ => "check-failed",
    }
}

pub fn failure_manifest(config: Option<RunConfig>, e: &CliError, started: Instant) -> Manifest {
    Manifest {
        version: env!("CARGO_PKG_VERSION"),
        status: status_name(e.exit_code()),
        exit_code: e.exit_code(),
        config,
        lambda: None,
        wall_time_s: started.elapsed().as_secs_f64(),
        summary: Value::Null,
        checks: Vec::new(),
        warnings: Vec::new(),
        artifacts: Vec::new(),
        error: Some(e.to_string()),
    }
}

fn blow_up(e: sgbh_core::Error, what: &str) -> CliError {
    match e {
        sgbh_core::Error::NonFinite { .. } => CliError::BlowUp(format!("{what}: {e}")),
        other => other.into(),
    }
}

enum SeedRun {
    Picard(FieldPath, StoppingRecord),
    Galerkin(FieldPath),
    Transformed { u: FieldPath, phi: FieldPath, v: FieldPath },
}

fn solve_seed(cfg: &RunConfig, setup: &Setup, sys: &MildSystem<'_>, seed: u64) -> Result<SeedRun, CliError> {
    let sheet = setup.sheet(seed);
    let pc = picard_config(cfg);
    let tsys = sys.with_truncation(cfg.truncation());
    Ok(match cfg.run.scheme {
        Scheme::Picard => {
            let (path, record) = global_solve(&setup.u0, &sheet, &tsys, &pc, &cfg.picard.n_schedule)
                .map_err(|e| blow_up(e, "picard"))?;
            SeedRun::Picard(path, record)
        }
        Scheme::Galerkin => {
            let gc = GalerkinConfig {
                n_modes: cfg.n_modes(),
                stepping: cfg.galerkin.stepping,
            };
            SeedRun::Galerkin(
                galerkin_solve(&setup.u0, &sheet, &cfg.model, &cfg.noise, &gc).map_err(|e| blow_up(e, "galerkin"))?,
            )
        }
        Scheme::Transformed => {
            let u = picard_solve(&setup.u0, &sheet, &tsys, &pc)
                .map_err(|e| blow_up(e, "picard"))?
                .require_converged()?;
            let phi = stochastic_convolution(&sheet, &u, &tsys)?;
            let v = transformed_solve(&setup.u0, &phi, &tsys, &pc).map_err(|e| blow_up(e, "transformed"))?;
            SeedRun::Transformed { u, phi, v }
        }
    })
}

fn solve(cfg: &RunConfig, out: &mut Outputs) -> Result<(), CliError> {
    let setup = Setup::new(cfg)?;
    let sys = setup.system(cfg)?;
    let seeds = cfg.seeds.list();
    let runs = ensemble_map(&seeds, |&seed| solve_seed(cfg, &setup, &sys, seed));
    let mut per_seed = Vec::new();
    let mut failure = None;
    for (seed, run) in seeds.iter().zip(runs) {
        let run = match run {
            Ok(r) => r,
            Err(e) => {
                failure = Some(e);
                break;
            }
        };
        match run {
            SeedRun::Picard(path, record) => {
                out.lambda = out.lambda.or(path.meta.lambda);
                out.field(&format!("u_seed{seed}"), FieldKind::Solution, &path)?;
                if record.capped {
                    out.warnings.push(format!(
                        "seed {seed}: truncation budget exhausted at level {} (tau index {:?})",
                        record.achieved_n, record.tau_index
                    ));
                }
                let blew_up = record.blow_up;
                per_seed.push(json!({
                    "seed": seed,
                    "sup_norm": path.sup_norm(),
                    "iterations": path.meta.iterations,
                    "lambda": path.meta.lambda,
                    "stopping": record,
                }));
                if blew_up {
                    failure = Some(CliError::BlowUp(format!(
                        "seed {seed}: non-finite values at the largest level"
                    )));
                    break;
                }
            }
            SeedRun::Galerkin(path) => {
                out.field(&format!("u_seed{seed}"), FieldKind::Solution, &path)?;
                per_seed.push(json!({ "seed": seed, "sup_norm": path.sup_norm() }));
            }
            SeedRun::Transformed { u, phi, v } => {
                out.lambda = out.lambda.or(u.meta.lambda);
                let diff = v.combine(1.0, &phi)?.sup_diff(&u)?;
                let tol = 1e3 * cfg.picard.tol * (1.0 + u.sup_norm());
                out.checks.push(check(
                    format!("decomposition seed {seed}"),
                    diff <= tol,
                    format!("sup |v + phi - u| = {diff:.3e}"),
                ));
                out.field(&format!("u_seed{seed}"), FieldKind::Solution, &u)?;
                out.field(&format!("phi_seed{seed}"), FieldKind::StochasticConvolution, &phi)?;
                out.field(&format!("v_seed{seed}"), FieldKind::Transformed, &v)?;
                per_seed.push(json!({ "seed": seed, "sup_norm": u.sup_norm(), "decomposition_error": diff }));
            }
        }
    }
    out.summary = json!({ "scheme": cfg.run.scheme, "paths": per_seed });
    out.report("report.json", &out.summary.clone())?;
    failure.map_or(Ok(()), Err)
}

fn compare(cfg: &RunConfig, out: &mut Outputs) -> Result<(), CliError> {
    let setup = Setup::new(cfg)?;
    let sys = setup.system(cfg)?.with_truncation(cfg.truncation());
    let c = cfg.compare.as_ref().expect("validated");
    let v0 = c.upper.sample(&setup.space);
    let seeds = cfg.seeds.list();
    let report = comparison_check(&setup.u0, &v0, &sys, &picard_config(cfg), &seeds, c.tol)
        .map_err(|e| blow_up(e, "compare"))?;
    out.checks.push(check(
        "comparison ordering",
        report.violation_cells == 0,
        format!(
            "{} violating cells of {}, max(u - v) = {:.3e}, tol {:.3e}",
            report.violation_cells, report.cells_checked, report.max_violation, report.tol
        ),
    ));
    out.summary = serde_json::to_value(&report)?;
    out.report("report.json", &report)?;
    Ok(())
}

fn energy(cfg: &RunConfig, out: &mut Outputs) -> Result<(), CliError> {
    let setup = Setup::new(cfg)?;
    let sys = setup.system(cfg)?.with_truncation(cfg.truncation());
    let pc = picard_config(cfg);
    let p = cfg.energy.as_ref().and_then(|e| e.p).unwrap_or_else(|| cfg.exponent());
    let seeds = cfg.seeds.list();
    let reports = ensemble_map(&seeds, |&seed| -> Result<_, sgbh_core::Error> {
        let sheet = setup.sheet(seed);
        let u = picard_solve(&setup.u0, &sheet, &sys, &pc)?.require_converged()?;
        let phi = stochastic_convolution(&sheet, &u, &sys)?;
        let v = transformed_solve(&setup.u0, &phi, &sys, &pc)?;
        energy_inequality_check(&v, &phi, &cfg.model, p)
    });
    let mut rows = Vec::new();
    let mut summary = Vec::new();
    let mut constants = None;
    for (seed, r) in seeds.iter().zip(reports) {
        let r = r.map_err(|e| blow_up(e, "energy"))?;
        constants = Some(r.constants);
        out.checks.push(check(
            format!("energy margin seed {seed}"),
            r.holds(),
            format!("min margin {:.4e}", r.min_margin()),
        ));
        for (i, t) in r.times.iter().enumerate() {
            rows.push(vec![*seed as f64, *t, r.lhs[i], r.rhs, r.margin[i]]);
        }
        summary.push(json!({ "seed": seed, "min_margin": r.min_margin(), "rhs": r.rhs }));
    }
    out.table("energy.csv", &["seed", "t", "lhs", "rhs", "margin"], &rows)?;
    out.summary = json!({ "p": p, "constants": constants, "paths": summary });
    out.report("report.json", &out.summary.clone())?;
    Ok(())
}

fn malliavin(cfg: &RunConfig, out: &mut Outputs) -> Result<(), CliError> {
    let setup = Setup::new(cfg)?;
    let sys = setup.system(cfg)?.with_truncation(cfg.truncation());
    let pc = picard_config(cfg);
    let mc = cfg.malliavin.as_ref().expect("validated");
    let mut summary = Vec::new();
    for seed in cfg.seeds.list() {
        let sheet = setup.sheet(seed);
        let u = picard_solve(&setup.u0, &sheet, &sys, &pc)
            .map_err(|e| blow_up(e, "base path"))?
            .require_converged()?;
        let d = derivative_solve(&u, &sheet, &sys, mc.r_index, mc.z_index)?;
        let scale = 1.0 + u.sup_norm();
        let errs = mc
            .epsilons
            .iter()
            .map(|&e| {
                let fd = fd_oracle(&setup.u0, &sheet, &sys, mc.r_index, mc.z_index, e * scale)?;
                relative_l2(&fd.values, &d.values, mc.r_index)
            })
            .collect::<Result<Vec<f64>, _>>()?;
        let improving = errs.windows(2).all(|w| w[1] <= w[0]);
        out.checks.push(check(
            format!("bump oracle seed {seed}"),
            errs[0] < mc.max_rel_error && improving,
            format!(
                "relative L2 per epsilon [{}]",
                errs.iter().map(|e| format!("{e:.3e}")).collect::<Vec<_>>().join(", ")
            ),
        ));
        out.field(&format!("derivative_seed{seed}"), FieldKind::Derivative, &d.values)?;
        let mut entry = json!({ "seed": seed, "r_index": mc.r_index, "z_index": mc.z_index, "epsilons": mc.epsilons, "relative_l2": errs });
        if let Some([a, b]) = mc.interval {
            let v = integrated_derivative(&u, &sheet, &sys, mc.r_index, a, b)?;
            let t = setup.time;
            let stats = positivity_fraction(&v.values, t.t(mc.r_index) + 5.0 * t.dt(), t.horizon(), 0.0);
            entry["positivity"] = serde_json::to_value(stats)?;
            out.field(
                &format!("integrated_seed{seed}"),
                FieldKind::IntegratedDerivative,
                &v.values,
            )?;
        }
        summary.push(entry);
    }
    out.summary = json!({ "paths": summary });
    out.report("report.json", &out.summary.clone())?;
    Ok(())
}

fn density(cfg: &RunConfig, out: &mut Outputs) -> Result<(), CliError> {
    let setup = Setup::new(cfg)?;
    let sys = setup.system(cfg)?.with_truncation(cfg.truncation());
    let d = cfg.density.as_ref().expect("validated");
    let seeds = cfg.seeds.list();
    let report = dichotomy_experiment(&setup.u0, &sys, &picard_config(cfg), &d.t_obs, d.x, &seeds)
        .map_err(|e| blow_up(e, "density"))?;
    for (k, obs) in report.observations.iter().enumerate() {
        let label = format!("t = {:.4}", obs.t);
        out.checks.push(check(
            format!("atom iff no noise ({label})"),
            obs.estimate.atom_detected != obs.noise_has_acted,
            format!(
                "atom_detected = {}, noise has acted = {}",
                obs.estimate.atom_detected, obs.noise_has_acted
            ),
        ));
        if !obs.estimate.atom_detected {
            let change = obs.bandwidth_change.unwrap_or(f64::NAN);
            out.checks.push(check(
                format!("kde normalization ({label})"),
                (obs.estimate.integral - 1.0).abs() < 1e-6,
                format!("integral {:.9}", obs.estimate.integral),
            ));
            out.checks.push(check(
                format!("kde bandwidth stability ({label})"),
                change < 0.2,
                format!("sup change under halving {change:.3}"),
            ));
            let rows: Vec<Vec<f64>> = obs
                .estimate
                .grid
                .iter()
                .zip(&obs.estimate.density)
                .map(|(x, f)| vec![*x, *f])
                .collect();
            out.table(&format!("density_{k}.csv"), &["u", "density"], &rows)?;
        }
    }
    out.summary = serde_json::to_value(&report)?;
    if let Some(obj) = out.summary.get_mut("observations").and_then(Value::as_array_mut) {
        for o in obj {
            if let Some(est) = o.get_mut("estimate").and_then(Value::as_object_mut) {
                est.remove("grid");
                est.remove("density");
            }
        }
    }
    out.report("report.json", &out.summary.clone())?;
    Ok(())
}

fn convergence(cfg: &RunConfig, out: &mut Outputs) -> Result<(), CliError> {
    let c = cfg.convergence.clone().unwrap_or(crate::config::ConvergenceSection {
        levels: 3,
        refinement: Refinement::Joint,
    });
    let ic = cfg.initial;
    let u0 = move |x: f64| ic.evaluate(x);
    let spec = StudySpec {
        params: cfg.model,
        noise: &cfg.noise,
        u0: &u0,
        finest_m: cfg.grid.m,
        finest_n: cfg.grid.n,
        levels: c.levels,
        refinement: c.refinement,
        scheme: match cfg.run.scheme {
            Scheme::Galerkin => StudyScheme::Galerkin,
            _ => StudyScheme::Mild,
        },
        seed: Some(cfg.seeds.base),
        reference: Reference::Finest,
    };
    let report: ConvergenceReport = convergence_study(&spec).map_err(|e| blow_up(e, "convergence"))?;
    let all_zero = report.levels.iter().all(|l| l.error == 0.0);
    out.checks.push(check(
        "observed order positive",
        all_zero || report.order > 0.0,
        if all_zero {
            "all errors vanish".to_string()
        } else {
            format!("order {:.3}", report.order)
        },
    ));
    if !report.monotone {
        out.warnings.push("error sequence is not monotone".into());
    }
    let rows: Vec<Vec<f64>> = report
        .levels
        .iter()
        .map(|l| {
            vec![
                l.m as f64,
                l.n as f64,
                l.h,
                l.dt,
                l.error,
                l.increment.unwrap_or(f64::NAN),
            ]
        })
        .collect();
    out.table("convergence.csv", &["m", "n", "h", "dt", "error", "increment"], &rows)?;
    out.summary = serde_json::to_value(&report)?;
    out.report("report.json", &report)?;
    Ok(())
}
