//! Acceptance suite. Prints one line per criterion and exits non-zero if any fails.

use std::f64::consts::PI;
use std::time::Instant;

use sgbh_core::analysis::{
    comparison_check, convergence_study, dichotomy_experiment, energy_constants, energy_inequality_check, ensemble_map,
    Reference, Refinement, StudyScheme, StudySpec,
};
use sgbh_core::kernel::{green_eval, green_image, green_spectral};
use sgbh_core::malliavin::{derivative_solve, fd_oracle, integrated_derivative, positivity_fraction, relative_l2};
use sgbh_core::solver::{
    galerkin_solve, picard_solve, stochastic_convolution, transformed_solve, Iteration, LambdaMode,
};
use sgbh_core::{
    walsh_integral, GalerkinConfig, KernelConfig, KernelTable, MildSystem, ModelParams, NoisePreset, NoiseSheet,
    PicardConfig, SpatialGrid, TimeGrid, TruncationLevel,
};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn grids(m: usize, n: usize, t: f64) -> (SpatialGrid, TimeGrid) {
    (SpatialGrid::new(m).unwrap(), TimeGrid::new(t, n).unwrap())
}

fn table_for(params: &ModelParams, space: SpatialGrid, time: TimeGrid) -> KernelTable {
    KernelTable::new(space, time, params.kernel_diffusivity(), KernelConfig::default()).unwrap()
}

fn kernel_cross_representation() -> Outcome {
    let mut worst = 0.0f64;
    let mut count = 0;
    for k in 0..=20 {
        let s = 0.005 * (200f64).powf(k as f64 / 20.0);
        for a in 1..=21 {
            for b in (1..=21).step_by(2) {
                let (x, y) = (a as f64 / 22.0, b as f64 / 22.0);
                let i = green_image(s, x, y, 1.0, 20).unwrap();
                let sp = green_spectral(s, x, y, 1.0, 400).unwrap();
                worst = worst.max((i - sp).abs());
                count += 1;
            }
        }
    }
    outcome(
        worst < 1e-10 && count >= 400,
        format!("{count} points, max |image - spectral| = {worst:.2e}"),
    )
}

fn deterministic_oracle() -> Outcome {
    let params = ModelParams::new(1.0, 0.0, 0.0, 0.5, 1, 0.5).unwrap();
    let exact = |t: f64, x: f64| (-PI * PI * t).exp() * (PI * x).sin();
    let u0 = |x: f64| (PI * x).sin();
    let (space, time) = grids(63, 200, 0.5);
    let sheet = NoiseSheet::zeros(time, space);
    let gal = galerkin_solve(
        &space.sample(u0),
        &sheet,
        &params,
        &NoisePreset::Zero,
        &GalerkinConfig::new(63),
    )
    .unwrap();
    let mut gal_err = 0.0f64;
    for i in 0..=200 {
        for j in 0..63 {
            gal_err = gal_err.max((gal.value(i, j) - exact(time.t(i), space.node(j))).abs());
        }
    }
    let spec = StudySpec {
        params,
        noise: &NoisePreset::Zero,
        u0: &u0,
        finest_m: 127,
        finest_n: 200,
        levels: 3,
        refinement: Refinement::Space,
        scheme: StudyScheme::Mild,
        seed: None,
        reference: Reference::Exact(&exact),
    };
    let study = convergence_study(&spec).unwrap();
    let errs: Vec<f64> = study.levels.iter().map(|l| l.error).collect();
    let at63 = study.levels.iter().find(|l| l.m == 63).unwrap().error;
    let saturated = errs.iter().all(|&e| e <= 1e-10);
    let order_ok = study.order >= 1.8 || saturated;
    let detail = format!(
        "galerkin {gal_err:.2e}; mild errors m=31,63,127: {:.2e} {:.2e} {:.2e}; order {}",
        errs[0],
        errs[1],
        errs[2],
        if saturated {
            "saturated (errors at round-off)".to_string()
        } else {
            format!("{:.2}", study.order)
        }
    );
    outcome(gal_err < 1e-6 && at63 < 5e-3 && order_ok, detail)
}

fn picard_contraction() -> Outcome {
    let params = ModelParams::new(1.0, 0.5, 0.5, 0.5, 1, 0.5).unwrap();
    let (space, time) = grids(15, 50, 0.5);
    let table = table_for(&params, space, time);
    let g = NoisePreset::LipschitzSin { sigma: 0.5 };
    let trunc = TruncationLevel::minimal(5.0, &params).unwrap();
    let sys = MildSystem::new(params, &g, &table).unwrap().with_truncation(trunc);
    let u0 = space.sample(|x| 0.5 * (PI * x).sin());
    let cfg = PicardConfig {
        lambda: LambdaMode::Auto,
        tol: 1e-8,
        max_iters: 25,
        iteration: Iteration::Picard,
    };
    let mut ok = true;
    let mut worst_ratio = 0.0f64;
    let mut max_iters = 0;
    for seed in 0..20 {
        let sheet = NoiseSheet::sample(seed, time, space);
        let out = picard_solve(&u0, &sheet, &sys, &cfg).unwrap();
        for w in out.residuals.windows(2).skip(1) {
            worst_ratio = worst_ratio.max(w[1] / w[0]);
        }
        max_iters = max_iters.max(out.iterations());
        ok &= out.converged;
    }
    ok &= worst_ratio < 1.0;
    outcome(
        ok,
        format!("20 seeds, max iterations {max_iters}, max ratio after first sweep {worst_ratio:.3}"),
    )
}

fn truncation_consistency() -> Outcome {
    let params = ModelParams::new(1.0, 0.5, 0.5, 0.5, 1, 0.5).unwrap();
    let (space, time) = grids(31, 100, 0.5);
    let table = table_for(&params, space, time);
    let g = NoisePreset::LipschitzSin { sigma: 0.5 };
    let p = params.min_exponent();
    let sys = MildSystem::new(params, &g, &table).unwrap();
    let lo = sys.with_truncation(TruncationLevel::new(5.0, p, 1).unwrap());
    let hi = sys.with_truncation(TruncationLevel::new(10.0, p, 1).unwrap());
    let u0 = space.sample(|x| 0.5 * (PI * x).sin());
    let cfg = PicardConfig {
        tol: 1e-13,
        max_iters: 100,
        ..PicardConfig::default()
    };
    let (mut worst, mut used, mut seed) = (0.0f64, 0, 0u64);
    while used < 10 && seed < 100 {
        let sheet = NoiseSheet::sample(seed, time, space);
        seed += 1;
        let a = picard_solve(&u0, &sheet, &lo, &cfg).unwrap().path;
        if (0..=time.steps()).any(|i| a.lp_norm(i, p) >= 5.0) {
            continue;
        }
        let b = picard_solve(&u0, &sheet, &hi, &cfg).unwrap().path;
        worst = worst.max(a.sup_diff(&b).unwrap());
        used += 1;
    }
    outcome(
        used == 10 && worst < 1e-12,
        format!("{used} paths below n=5, max |u^5 - u^10| = {worst:.2e}"),
    )
}

struct Ensemble {
    params: ModelParams,
    g: NoisePreset,
    space: SpatialGrid,
    time: TimeGrid,
    table: KernelTable,
    trunc: TruncationLevel,
}

fn ensemble() -> Ensemble {
    let params = ModelParams::new(1.0, 0.5, 0.5, 0.5, 1, 0.5).unwrap();
    let (space, time) = grids(63, 400, 0.5);
    let table = table_for(&params, space, time);
    Ensemble {
        params,
        g: NoisePreset::Modulated { sigma: 0.1, k: 1.0 },
        space,
        time,
        table,
        trunc: TruncationLevel::minimal(10.0, &params).unwrap(),
    }
}

fn comparison(e: &Ensemble) -> Outcome {
    let sys = MildSystem::new(e.params, &e.g, &e.table)
        .unwrap()
        .with_truncation(e.trunc);
    let u0 = vec![0.0; e.space.len()];
    let v0 = vec![0.1; e.space.len()];
    let seeds: Vec<u64> = (0..100).collect();
    let r = comparison_check(&u0, &v0, &sys, &PicardConfig::march(), &seeds, None).unwrap();
    outcome(
        r.violation_cells == 0,
        format!(
            "{} paths, {} cells, violations {}, max(u - v) = {:.3e}, tol {:.2e}",
            r.paths, r.cells_checked, r.violation_cells, r.max_violation, r.tol
        ),
    )
}

fn energy(e: &Ensemble) -> Outcome {
    let p = 3.0;
    let k = energy_constants(p, &e.params).unwrap();
    let oracle = [1170.1212343342889699, 0.51851851851851851852, 81541.476269241639676];
    let rel = [k.k1, k.k2, k.k3]
        .iter()
        .zip(oracle)
        .map(|(a, b)| (a - b).abs() / b)
        .fold(0.0f64, f64::max);
    let sys = MildSystem::new(e.params, &e.g, &e.table)
        .unwrap()
        .with_truncation(e.trunc);
    let inits = [vec![0.0; e.space.len()], vec![0.1; e.space.len()]];
    let seeds: Vec<u64> = (0..100).collect();
    let margins = ensemble_map(&seeds, |&seed| {
        let sheet = NoiseSheet::sample(seed, e.time, e.space);
        inits
            .iter()
            .map(|u0| {
                let u = picard_solve(u0, &sheet, &sys, &PicardConfig::march()).unwrap().path;
                let phi = stochastic_convolution(&sheet, &u, &sys).unwrap();
                let v = transformed_solve(u0, &phi, &sys, &PicardConfig::march()).unwrap();
                energy_inequality_check(&v, &phi, &e.params, p).unwrap().min_margin()
            })
            .fold(f64::INFINITY, f64::min)
    });
    let min_margin = margins.iter().copied().fold(f64::INFINITY, f64::min);
    outcome(
        min_margin > 0.0 && rel < 1e-10,
        format!("200 paths, min margin {min_margin:.3e}, constants vs oracle max rel {rel:.1e}"),
    )
}

fn malliavin_correctness() -> Outcome {
    // linear case
    let params = ModelParams::new(1.0, 0.0, 0.0, 0.5, 1, 0.5).unwrap();
    let (space, time) = grids(31, 100, 0.5);
    let table = table_for(&params, space, time);
    let g = NoisePreset::Constant { sigma: 0.2 };
    let sys = MildSystem::new(params, &g, &table).unwrap();
    let sheet = NoiseSheet::sample(1, time, space);
    let u0 = space.sample(|x| (PI * x).sin());
    let u = picard_solve(&u0, &sheet, &sys, &PicardConfig::march()).unwrap().path;
    let (r, z) = (20, 12);
    let d = derivative_solve(&u, &sheet, &sys, r, z).unwrap();
    let cfg = KernelConfig::default();
    let (mut num, mut den) = (0.0, 0.0);
    for i in r + 1..=time.steps() {
        let lag = time.t(i) - (r as f64 + 0.5) * time.dt();
        for j in 0..space.len() {
            let want = 0.2 * green_eval(lag, space.node(j), space.node(z), 1.0, &cfg).unwrap();
            num += (d.values.value(i, j) - want).powi(2);
            den += want * want;
        }
    }
    let linear = (num / den).sqrt();

    // nonlinear case
    let params = ModelParams::new(1.0, 0.5, 0.5, 0.5, 1, 0.5).unwrap();
    let (space, time) = grids(31, 100, 0.5);
    let table = table_for(&params, space, time);
    let g = NoisePreset::LipschitzSin { sigma: 0.5 };
    let trunc = TruncationLevel::minimal(10.0, &params).unwrap();
    let sys = MildSystem::new(params, &g, &table).unwrap().with_truncation(trunc);
    let sheet = NoiseSheet::sample(5, time, space);
    let u0 = space.sample(|x| 0.8 * (PI * x).sin());
    let u = picard_solve(&u0, &sheet, &sys, &PicardConfig::march()).unwrap().path;
    let (r, z) = (20, 15);
    let d = derivative_solve(&u, &sheet, &sys, r, z).unwrap();
    let scale = 1.0 + u.sup_norm();
    let errs: Vec<f64> = [1e-2, 5e-3, 2.5e-3]
        .iter()
        .map(|&e| {
            let fd = fd_oracle(&u0, &sheet, &sys, r, z, e * scale).unwrap();
            relative_l2(&fd.values, &d.values, r).unwrap()
        })
        .collect();
    let improving = errs.windows(2).all(|w| w[1] < 0.75 * w[0]);
    outcome(
        linear < 1e-3 && errs[0] < 0.05 && improving,
        format!(
            "linear rel L2 {linear:.2e}; nonlinear eps-sweep rel L2 {:.2e} {:.2e} {:.2e}",
            errs[0], errs[1], errs[2]
        ),
    )
}

fn positivity() -> Outcome {
    let params = ModelParams::new(1.0, 0.5, 0.5, 0.5, 1, 0.5).unwrap();
    let (space, time) = grids(31, 200, 0.5);
    let table = table_for(&params, space, time);
    let g = NoisePreset::LipschitzSin { sigma: 0.5 };
    let trunc = TruncationLevel::minimal(10.0, &params).unwrap();
    let sys = MildSystem::new(params, &g, &table).unwrap().with_truncation(trunc);
    let u0 = space.sample(|x| 0.5 * (PI * x).sin());
    let r = time.steps() / 4;
    let seeds: Vec<u64> = (0..50).collect();
    let mut fractions = ensemble_map(&seeds, |&seed| {
        let sheet = NoiseSheet::sample(seed, time, space);
        let u = picard_solve(&u0, &sheet, &sys, &PicardConfig::march()).unwrap().path;
        let v = integrated_derivative(&u, &sheet, &sys, r, 0.4, 0.6).unwrap();
        positivity_fraction(&v.values, time.t(r) + 5.0 * time.dt(), time.horizon(), 0.0).fraction
    });
    fractions.sort_by(f64::total_cmp);
    let median = 0.5 * (fractions[24] + fractions[25]);
    outcome(
        median > 0.99,
        format!("50 seeds, median fraction {median:.4}, min {:.4}", fractions[0]),
    )
}

fn dichotomy() -> Outcome {
    let params = ModelParams::new(1.0, 0.5, 0.5, 0.5, 1, 0.5).unwrap();
    let (space, time) = grids(31, 100, 0.5);
    let table = table_for(&params, space, time);
    let g = NoisePreset::SwitchAtTime {
        sigma: 0.5,
        t_switch: 0.25,
    };
    let trunc = TruncationLevel::minimal(10.0, &params).unwrap();
    let sys = MildSystem::new(params, &g, &table).unwrap().with_truncation(trunc);
    let u0 = space.sample(|x| 0.5 * (PI * x).sin());
    let seeds: Vec<u64> = (0..1000).collect();
    let rep = dichotomy_experiment(&u0, &sys, &PicardConfig::march(), &[0.2, 0.45], 0.5, &seeds).unwrap();
    let before = &rep.observations[0];
    let after = &rep.observations[1];
    let change = after.bandwidth_change.unwrap_or(f64::NAN);
    let pass = before.estimate.atom_detected
        && !before.noise_has_acted
        && !after.estimate.atom_detected
        && (after.estimate.integral - 1.0).abs() < 1e-6
        && change < 0.2;
    outcome(
        pass,
        format!(
            "t=0.2 atom {}, t=0.45 atom {}, KDE mass {:.9}, bandwidth change {change:.3}",
            before.estimate.atom_detected, after.estimate.atom_detected, after.estimate.integral
        ),
    )
}

fn noise_statistics() -> Outcome {
    let (space, time) = grids(255, 400, 1.0);
    let sheet = NoiseSheet::sample(42, time, space);
    let cells = sheet.increments();
    let n = cells.len() as f64;
    let var = cells.iter().map(|v| v * v).sum::<f64>() / n;
    let target = time.dt() * space.h();
    let se = target * (2.0 / n).sqrt();
    let z_var = (var - target) / se;

    let (space, time) = grids(15, 20, 0.5);
    let weights: Vec<f64> = (0..20)
        .flat_map(|i| (0..15).map(move |j| (1.0 + i as f64 * 0.1) * ((j + 1) as f64 * 0.3).sin()))
        .collect();
    let expect = weights.iter().map(|w| w * w).sum::<f64>() * time.dt() * space.h();
    let seeds: Vec<u64> = (0..1000).collect();
    let squares: Vec<f64> = seeds
        .iter()
        .map(|&s| {
            walsh_integral(&weights, &NoiseSheet::sample(s, time, space))
                .unwrap()
                .powi(2)
        })
        .collect();
    let k = squares.len() as f64;
    let mean = squares.iter().sum::<f64>() / k;
    let sd = (squares.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (k - 1.0)).sqrt();
    let z_ito = (mean - expect) / (sd / k.sqrt());
    outcome(
        z_var.abs() < 4.0 && z_ito.abs() < 4.0 && cells.len() >= 100_000,
        format!(
            "{} cells, variance z = {z_var:.2}; isometry over 1000 seeds z = {z_ito:.2}",
            cells.len()
        ),
    )
}

type Criterion<'a> = Box<dyn Fn() -> Outcome + 'a>;

fn main() {
    let started = Instant::now();
    let e = ensemble();
    let criteria: Vec<(&str, Criterion)> = vec![
        ("1 kernel cross-representation", Box::new(kernel_cross_representation)),
        ("2 deterministic oracle", Box::new(deterministic_oracle)),
        ("3 picard contraction", Box::new(picard_contraction)),
        ("4 truncation consistency", Box::new(truncation_consistency)),
        ("5 comparison theorem", Box::new(|| comparison(&e))),
        ("6 energy inequality", Box::new(|| energy(&e))),
        ("7 malliavin correctness", Box::new(malliavin_correctness)),
        ("8 integrated-derivative positivity", Box::new(positivity)),
        ("9 density dichotomy", Box::new(dichotomy)),
        ("10 noise statistics", Box::new(noise_statistics)),
    ];
    let mut failed = 0;
    for (name, run) in &criteria {
        let t0 = Instant::now();
        let o = run();
        if !o.pass {
            failed += 1;
        }
        println!(
            "criterion {name}: {} ({}) [{:.1}s]",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            t0.elapsed().as_secs_f64()
        );
    }
    println!(
        "acceptance: {} passed, {failed} failed [{:.1}s]",
        criteria.len() - failed,
        started.elapsed().as_secs_f64()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
