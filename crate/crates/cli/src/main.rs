mod config;
mod error;
mod run;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};

use crate::config::RunConfig;

#[derive(Parser)]
#[command(
    name = "sgbh",
    version,
    about = "Stochastic generalized Burgers-Huxley solver and experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a TOML config.
    Run { config: PathBuf },
    /// Parse and validate a config without running it.
    Validate { config: PathBuf },
    /// List the built-in noise presets and initial conditions.
    ListPresets,
}

/// Output directory named in a config that failed to parse or validate.
fn fallback_directory(path: &Path) -> Option<PathBuf> {
    let text = std::fs::read_to_string(path).ok()?;
    let value: toml::Value = toml::from_str(&text).ok()?;
    value
        .get("output")
        .and_then(|o| o.get("directory"))
        .and_then(|d| d.as_str())
        .map(PathBuf::from)
}

fn run(path: &Path) -> i32 {
    let started = Instant::now();
    let cfg = match RunConfig::load(path) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e}");
            if let Some(dir) = fallback_directory(path) {
                let _ = run::failure_manifest(None, &e, started).write(&dir);
            }
            return e.exit_code();
        }
    };
    let (manifest, err) = run::execute(&cfg);
    for c in &manifest.checks {
        println!("{}: {} ({})", c.name, if c.pass { "PASS" } else { "FAIL" }, c.detail);
    }
    for w in &manifest.warnings {
        eprintln!("warning: {w}");
    }
    if let Some(e) = &err {
        eprintln!("error: {e}");
    }
    match manifest.write(&cfg.output.directory) {
        Ok(p) => println!("manifest: {}", p.display()),
        Err(e) => {
            eprintln!("error: cannot write manifest: {e}");
            return 1;
        }
    }
    manifest.exit_code
}

fn validate(path: &Path) -> i32 {
    match RunConfig::load(path) {
        Ok(cfg) => {
            println!(
                "ok: {:?} experiment with {:?} scheme",
                cfg.run.experiment, cfg.run.scheme
            );
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match &cli.command {
        Command::Run { config } => run(config),
        Command::Validate { config } => validate(config),
        Command::ListPresets => {
            print!("{}", config::preset_listing());
            0
        }
    };
    ExitCode::from(code as u8)
}
