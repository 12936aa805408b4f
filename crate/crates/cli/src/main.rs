use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use fbsim_core::budget::{budget_report, CalibrationData, FeedbackKind};
use fbsim_core::config::{parse_config, EngineKind};
use fbsim_core::continuum::{fit_decay_diffusion, fit_drift_diffusion, FitOptions};
use fbsim_core::csvio;
use fbsim_core::experiment::{compare_engines, run_experiment, write_fixtures, Tolerances};
use fbsim_core::Error;

#[derive(Parser)]
#[command(name = "fbsim", version, about = "Monitored random circuits with measurement feedback")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the output directory of the config.
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Run one config under several engines and compare the mean profiles.
    Compare {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated engines; the first one is the reference.
        #[arg(long, value_delimiter = ',', required = true)]
        engines: Vec<String>,
        #[arg(long, default_value_t = 1e-10)]
        density_tol: f64,
        #[arg(long, default_value_t = 1.0)]
        com_tol: f64,
        #[arg(long)]
        json: bool,
    },
    /// Fit a continuum model to a density CSV.
    Fit {
        #[arg(long)]
        densities: PathBuf,
        #[arg(long, value_enum)]
        model: FitModel,
        /// Highest derivative order of the drift–diffusion model.
        #[arg(long, default_value_t = 2)]
        order: usize,
        /// Duration of one layer for the decay–diffusion model.
        #[arg(long, default_value_t = 1.0)]
        dt_layer: f64,
        /// Realization to fit; the realization mean by default.
        #[arg(long)]
        realization: Option<usize>,
        #[arg(long, default_value_t = 0)]
        first_layer: usize,
        #[arg(long)]
        last_layer: Option<usize>,
        #[arg(long)]
        json: bool,
    },
    /// Time, error and survival-fidelity budget from calibration data.
    Budget {
        /// Calibration TOML; the reference calibration when omitted.
        #[arg(long)]
        calib: Option<PathBuf>,
        #[arg(long = "L")]
        sites: usize,
        #[arg(long)]
        p: f64,
        #[arg(long)]
        depth: usize,
        #[arg(long, default_value = "cond_x")]
        feedback: String,
        #[arg(long)]
        json: bool,
    },
    /// Regenerate the channel-oracle fixture CSVs.
    Fixtures {
        #[arg(long, default_value = "crates/core/tests/fixtures")]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum FitModel {
    Decay,
    Drift,
}

fn json<T: serde::Serialize>(value: &T) -> Result<String, Error> {
    serde_json::to_string_pretty(value).map_err(|e| Error::Io(e.to_string()))
}

fn run(config: &Path, output: Option<PathBuf>, workers: Option<usize>) -> Result<(), Error> {
    let mut cfg = parse_config(config)?;
    if let Some(dir) = output {
        cfg.output.dir = dir;
    }
    if workers.is_some() {
        cfg.workers = workers;
    }
    let manifest = run_experiment(&cfg)?;
    for (name, sum) in &manifest.files {
        println!("{}  {}", sum, cfg.output.dir.join(name).display());
    }
    Ok(())
}

fn compare(config: &Path, engines: &[String], tol: Tolerances, as_json: bool) -> Result<bool, Error> {
    if engines.len() < 2 {
        return Err(Error::Validation("compare needs at least two engines".into()));
    }
    let base = parse_config(config)?;
    let configs = engines
        .iter()
        .map(|e| {
            let mut c = base.clone();
            c.engine = e.parse::<EngineKind>()?;
            c.max_sites = None;
            c.validate()?;
            Ok(c)
        })
        .collect::<Result<Vec<_>, Error>>()?;
    let reports = compare_engines(&configs, tol)?;
    if as_json {
        println!("{}", json(&reports)?);
    } else {
        for r in &reports {
            print!("{}", r.to_text());
        }
    }
    Ok(reports.iter().all(|r| r.pass()))
}

#[allow(clippy::too_many_arguments)]
fn fit(
    densities: &Path,
    model: FitModel,
    order: usize,
    dt_layer: f64,
    realization: Option<usize>,
    first: usize,
    last: Option<usize>,
    as_json: bool,
) -> Result<(), Error> {
    let file = std::fs::File::open(densities).map_err(|e| Error::Io(format!("{}: {e}", densities.display())))?;
    let tables = csvio::read_densities(file)?;
    let table = tables
        .iter()
        .find(|t| t.realization == realization)
        .or_else(|| if realization.is_none() && tables.len() == 1 { tables.first() } else { None })
        .ok_or_else(|| Error::Validation(format!("no density series for realization {realization:?}")))?;
    let last = last.unwrap_or(table.series.depth);
    if first >= last || last > table.series.depth {
        return Err(Error::Validation(format!(
            "layer window {first}..={last} invalid for depth {}",
            table.series.depth
        )));
    }
    let frames = &table.series.values[first..=last];
    let result = match model {
        FitModel::Decay => fit_decay_diffusion(frames, dt_layer, &FitOptions::default())?,
        FitModel::Drift => fit_drift_diffusion(frames, order, &FitOptions::default())?,
    };
    if as_json {
        println!("{}", json(&result)?);
    } else {
        print!("{}", result.report());
    }
    Ok(())
}

fn budget(
    calib: Option<&Path>,
    sites: usize,
    p: f64,
    depth: usize,
    feedback: &str,
    as_json: bool,
) -> Result<(), Error> {
    let calib = match calib {
        Some(path) => CalibrationData::from_path(path)?,
        None => CalibrationData::reference(),
    };
    let feedback: FeedbackKind = feedback.parse()?;
    let report = budget_report(&calib, sites, p, depth, feedback)?;
    if as_json {
        println!("{}", json(&report)?);
    } else {
        print!("{}", report.to_text());
    }
    Ok(())
}

fn exit_for(err: &Error) -> ExitCode {
    eprintln!("error: {err}");
    let config_error = match err {
        Error::Io(_) => true,
        other => other.is_config_error(),
    };
    ExitCode::from(if config_error { 1 } else { 2 })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let outcome = match cli.command {
        Command::Run { config, output, workers } => run(&config, output, workers).map(|_| true),
        Command::Compare { config, engines, density_tol, com_tol, json } => compare(
            &config,
            &engines,
            Tolerances { density: density_tol, center_of_mass: com_tol },
            json,
        ),
        Command::Fit { densities, model, order, dt_layer, realization, first_layer, last_layer, json } => {
            fit(&densities, model, order, dt_layer, realization, first_layer, last_layer, json).map(|_| true)
        }
        Command::Budget { calib, sites, p, depth, feedback, json } => {
            budget(calib.as_deref(), sites, p, depth, &feedback, json).map(|_| true)
        }
        Command::Fixtures { out } => write_fixtures(&out).map(|paths| {
            for p in paths {
                println!("{}", p.display());
            }
            true
        }),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => exit_for(&e),
    }
}
