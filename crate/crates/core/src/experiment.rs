//! Running configured experiments: scheduling, aggregation, persistence and
//! engine comparison.
//!
//! Work units (one trajectory, or one realization for the channel and Markov
//! engines) run on a bounded rayon pool and are collected in index order, so
//! every reduction sees the same operands in the same order whatever the
//! worker count.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::channel;
use crate::circuit::{build_program, Architecture, CircuitProgram, CircuitSpec, InitialState};
use crate::config::{EngineKind, ExperimentConfig};
use crate::continuum::{fit_decay_diffusion, fit_drift_diffusion, FitOptions, FitResult};
use crate::csvio::{self, LabelledSeries};
use crate::error::{Error, Result};
use crate::markov::{self, AngleSource};
use crate::mps;
use crate::observables::{aggregate_realizations, DensitySeries, RealizationSummary};
use crate::statevector;
use crate::trajectory::{average_records, TrajectoryRecord};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const DENSITY_FILE: &str = "densities.csv";
pub const SCALAR_FILE: &str = "scalars.csv";
pub const TRAJECTORY_FILE: &str = "trajectories.csv";
pub const TRUNCATION_FILE: &str = "truncation.csv";
pub const FIT_FILE: &str = "fit.json";

/// Everything computed by one run, before anything touches the disk.
#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub engine: EngineKind,
    /// One series per realization, in realization order.
    pub realizations: Vec<DensitySeries>,
    /// Realization mean with the standard error of that mean.
    pub mean: DensitySeries,
    pub summary: RealizationSummary,
    /// Trajectory records in (realization, trajectory) order; empty for the
    /// channel and Markov engines.
    pub records: Vec<TrajectoryRecord>,
    pub fit: Option<FitResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: ExperimentConfig,
    pub master_seed: u64,
    pub engine: String,
    pub engine_version: String,
    pub complete: bool,
    pub error: Option<String>,
    /// SHA-256 of every written file, keyed by file name.
    pub files: BTreeMap<String, String>,
    /// SHA-256 of each realization's density table.
    pub realization_checksums: Vec<String>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn pool(workers: Option<usize>) -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = workers {
        builder = builder.num_threads(n);
    }
    builder.build().map_err(|e| Error::Io(format!("cannot start worker pool: {e}")))
}

fn at(realization: usize, trajectory: usize) -> impl FnOnce(Error) -> Error {
    move |e| Error::AtCoordinates { realization, trajectory, source: Box::new(e) }
}

/// Results arrive in index order; the first failure in that order wins.
fn first_error<T>(results: Vec<Result<T>>) -> Result<Vec<T>> {
    results.into_iter().collect()
}

fn run_trajectories(config: &ExperimentConfig, programs: &[CircuitProgram]) -> Result<Vec<TrajectoryRecord>> {
    let spec = &config.spec;
    let m = spec.trajectories;
    let limit = config.max_sites().unwrap_or(usize::MAX);
    let results: Vec<Result<TrajectoryRecord>> = (0..programs.len() * m)
        .into_par_iter()
        .map(|unit| {
            let (r, t) = (unit / m, unit % m);
            let program = &programs[r];
            match config.engine {
                EngineKind::Statevector => {
                    statevector::run_program_trajectory(program, spec.master_seed, r, t, limit)
                }
                _ => mps::run_program_trajectory(program, config.mps, spec.master_seed, r, t),
            }
            .map_err(at(r, t))
        })
        .collect();
    first_error(results)
}

fn realization_series(config: &ExperimentConfig) -> Result<(Vec<DensitySeries>, Vec<TrajectoryRecord>)> {
    let spec = &config.spec;
    let indices: Vec<usize> = (0..spec.realizations).collect();
    match config.engine {
        EngineKind::Channel => {
            let limit = config.max_sites().unwrap_or(channel::DEFAULT_CHANNEL_MAX_SITES);
            let series = indices
                .par_iter()
                .map(|&r| channel::evolve_channel_with_limit(spec, r, limit).map_err(at(r, 0)))
                .collect();
            Ok((first_error(series)?, Vec::new()))
        }
        EngineKind::Markov => {
            let series = indices
                .par_iter()
                .map(|&r| markov::run_markov_realization(spec, r, AngleSource::Matched).map_err(at(r, 0)))
                .collect();
            Ok((first_error(series)?, Vec::new()))
        }
        EngineKind::Statevector | EngineKind::Mps => {
            let programs = first_error(
                indices.par_iter().map(|&r| build_program(spec, r).map_err(at(r, 0))).collect(),
            )?;
            let records = run_trajectories(config, &programs)?;
            let series = records
                .chunks(spec.trajectories)
                .enumerate()
                .map(|(r, chunk)| average_records(config.engine.name(), chunk).map_err(at(r, 0)))
                .collect::<Result<Vec<_>>>()?;
            Ok((series, records))
        }
    }
}

/// Realization mean whose `stderr` is the standard error of that mean. A
/// single realization keeps its own within-realization error.
fn mean_with_stderr(series: &[DensitySeries], summary: &RealizationSummary) -> DensitySeries {
    if series.len() == 1 {
        let mut only = series[0].clone();
        only.realizations = 1;
        return only;
    }
    let mut mean = summary.mean.clone();
    let root = (series.len() as f64).sqrt();
    for row in &mut mean.stderr {
        for s in row.iter_mut() {
            *s /= root;
        }
    }
    mean
}

/// Fits the continuum model matching the architecture to the mean profile:
/// drift–diffusion (second order) for conditional SWAP, decay–diffusion with
/// one time unit per layer otherwise.
pub fn fit_mean_profile(architecture: Architecture, mean: &DensitySeries) -> Result<FitResult> {
    match architecture {
        Architecture::CondSwap => fit_drift_diffusion(&mean.values, 2, &FitOptions::default()),
        _ => fit_decay_diffusion(&mean.values, 1.0, &FitOptions::default()),
    }
}

/// Runs the configured engine and aggregates realizations without writing files.
pub fn simulate(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    config.validate()?;
    let pool = pool(config.workers)?;
    let (realizations, records) = pool.install(|| realization_series(config))?;
    let summary = aggregate_realizations(&realizations)?;
    let mean = mean_with_stderr(&realizations, &summary);
    let fit = if config.output.fits { Some(fit_mean_profile(config.spec.architecture, &mean)?) } else { None };
    Ok(ExperimentOutput { engine: config.engine, realizations, mean, summary, records, fit })
}

/// File name → contents of everything a run writes besides the manifest.
pub fn render_outputs(config: &ExperimentConfig, out: &ExperimentOutput) -> Result<Vec<(String, Vec<u8>)>> {
    let mut files = Vec::new();
    if config.output.densities {
        let mut tables: Vec<LabelledSeries> = out
            .realizations
            .iter()
            .enumerate()
            .map(|(r, s)| LabelledSeries { realization: Some(r), series: s.clone() })
            .collect();
        tables.push(LabelledSeries { realization: None, series: out.mean.clone() });
        let mut buf = Vec::new();
        csvio::write_densities(&mut buf, &tables)?;
        files.push((DENSITY_FILE.to_string(), buf));
    }
    if config.output.scalars {
        let mut buf = Vec::new();
        csvio::write_scalars(&mut buf, config.engine.name(), &out.summary.scalars())?;
        files.push((SCALAR_FILE.to_string(), buf));
    }
    if config.output.trajectories && !out.records.is_empty() {
        let mut buf = Vec::new();
        csvio::write_events(&mut buf, &out.records)?;
        files.push((TRAJECTORY_FILE.to_string(), buf));
    }
    if config.engine == EngineKind::Mps {
        let mut buf = Vec::new();
        csvio::write_truncation(&mut buf, &out.records)?;
        files.push((TRUNCATION_FILE.to_string(), buf));
    }
    if let Some(fit) = &out.fit {
        let json = serde_json::to_vec_pretty(fit).map_err(|e| Error::Io(e.to_string()))?;
        files.push((FIT_FILE.to_string(), json));
    }
    Ok(files)
}

fn realization_checksums(out: &ExperimentOutput) -> Result<Vec<String>> {
    out.realizations
        .iter()
        .enumerate()
        .map(|(r, s)| {
            let mut buf = Vec::new();
            csvio::write_densities(&mut buf, &[LabelledSeries { realization: Some(r), series: s.clone() }])?;
            Ok(sha256_hex(&buf))
        })
        .collect()
}

fn write_manifest(dir: &Path, manifest: &RunManifest) -> Result<()> {
    let json = serde_json::to_vec_pretty(manifest).map_err(|e| Error::Io(e.to_string()))?;
    std::fs::write(dir.join(MANIFEST_FILE), json)?;
    Ok(())
}

/// Validates, simulates and writes all outputs plus `manifest.json`. On a
/// runtime failure no data files are written; the manifest records the
/// error and `complete = false`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunManifest> {
    config.validate()?;
    config.prepare_output_dir()?;
    let dir = &config.output.dir;
    let mut manifest = RunManifest {
        config: config.clone(),
        master_seed: config.spec.master_seed,
        engine: config.engine.name().to_string(),
        engine_version: env!("CARGO_PKG_VERSION").to_string(),
        complete: false,
        error: None,
        files: BTreeMap::new(),
        realization_checksums: Vec::new(),
    };
    let rendered = simulate(config).and_then(|out| Ok((render_outputs(config, &out)?, realization_checksums(&out)?)));
    let (files, checksums) = match rendered {
        Ok(v) => v,
        Err(e) => {
            manifest.error = Some(e.to_string());
            write_manifest(dir, &manifest)?;
            return Err(e);
        }
    };
    for (name, bytes) in &files {
        std::fs::write(dir.join(name), bytes)?;
        manifest.files.insert(name.clone(), sha256_hex(bytes));
    }
    manifest.realization_checksums = checksums;
    manifest.complete = true;
    write_manifest(dir, &manifest)?;
    Ok(manifest)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    /// Largest allowed `|Δ⟨n_x(i)⟩|`.
    pub density: f64,
    /// Largest allowed `|ΔN^c(i)|` in sites.
    pub center_of_mass: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances { density: 1e-10, center_of_mass: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerComparison {
    pub layer: usize,
    pub max_density_diff: f64,
    pub com_diff: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub reference: String,
    pub other: String,
    pub layers: Vec<LayerComparison>,
    pub max_density_diff: f64,
    pub max_com_diff: f64,
    pub tolerances: Tolerances,
    pub density_pass: bool,
    pub com_pass: bool,
}

impl ComparisonReport {
    pub fn pass(&self) -> bool {
        self.density_pass && self.com_pass
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("{} vs {}\n{:>5} {:>14} {:>14}\n", self.reference, self.other, "layer", "max|dn|", "|dN^c|");
        for l in &self.layers {
            s.push_str(&format!("{:>5} {:>14.6e} {:>14.6e}\n", l.layer, l.max_density_diff, l.com_diff));
        }
        let verdict = |ok: bool| if ok { "pass" } else { "FAIL" };
        s.push_str(&format!(
            "density: max {:.3e} (tol {:.1e}) {}\ncenter of mass: max {:.3e} (tol {:.3}) {}\n",
            self.max_density_diff,
            self.tolerances.density,
            verdict(self.density_pass),
            self.max_com_diff,
            self.tolerances.center_of_mass,
            verdict(self.com_pass)
        ));
        s
    }
}

/// Layer-by-layer comparison of two realization-mean profiles.
pub fn compare_series(a: &DensitySeries, b: &DensitySeries, tol: Tolerances) -> Result<ComparisonReport> {
    if a.sites != b.sites || a.depth != b.depth {
        return Err(Error::ShapeMismatch(format!(
            "{} is {}×{}, {} is {}×{}",
            a.engine,
            a.depth + 1,
            a.sites,
            b.engine,
            b.depth + 1,
            b.sites
        )));
    }
    let (ca, cb) = (a.center_of_mass()?, b.center_of_mass()?);
    let layers: Vec<LayerComparison> = (0..=a.depth)
        .map(|i| LayerComparison {
            layer: i,
            max_density_diff: a.values[i].iter().zip(&b.values[i]).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max),
            com_diff: (ca[i] - cb[i]).abs(),
        })
        .collect();
    let max_density_diff = layers.iter().map(|l| l.max_density_diff).fold(0.0, f64::max);
    let max_com_diff = layers.iter().map(|l| l.com_diff).fold(0.0, f64::max);
    Ok(ComparisonReport {
        reference: a.engine.clone(),
        other: b.engine.clone(),
        layers,
        max_density_diff,
        max_com_diff,
        tolerances: tol,
        density_pass: max_density_diff <= tol.density,
        com_pass: max_com_diff <= tol.center_of_mass,
    })
}

/// Runs every config and compares each against the first. All configs must
/// share chain length, depth, architecture and master seed.
pub fn compare_engines(configs: &[ExperimentConfig], tol: Tolerances) -> Result<Vec<ComparisonReport>> {
    let first = configs
        .first()
        .ok_or_else(|| Error::ShapeMismatch("need at least two configurations to compare".into()))?;
    if configs.len() < 2 {
        return Err(Error::ShapeMismatch("need at least two configurations to compare".into()));
    }
    let key = |c: &ExperimentConfig| (c.spec.sites, c.spec.depth, c.spec.architecture, c.spec.master_seed);
    if let Some(bad) = configs.iter().find(|c| key(c) != key(first)) {
        return Err(Error::ShapeMismatch(format!(
            "{} run differs in (sites, depth, architecture, seed): {:?} vs {:?}",
            bad.engine.name(),
            key(bad),
            key(first)
        )));
    }
    for c in configs {
        c.validate()?;
    }
    let means: Vec<DensitySeries> = configs.iter().map(|c| simulate(c).map(|o| o.mean)).collect::<Result<_>>()?;
    means[1..].iter().map(|m| compare_series(&means[0], m, tol)).collect()
}

/// Channel-oracle reference profiles kept under version control: file name
/// and the spec that produces it (realization 0).
pub fn fixture_specs() -> Vec<(&'static str, CircuitSpec)> {
    let base = |arch| CircuitSpec::new(arch, 6, 5).with_init(InitialState::CenterBlock(2)).with_seed(2024);
    vec![
        ("channel_cond_x_L6.csv", base(Architecture::CondX).with_g(0.05)),
        ("channel_cond_swap_L6.csv", base(Architecture::CondSwap).with_p_swap(0.3)),
        ("channel_pure_measure_L6.csv", base(Architecture::PureMeasure).with_g(0.05)),
        ("channel_unitary_L6.csv", base(Architecture::Unitary)),
    ]
}

/// Regenerates the channel fixtures into `dir`, returning the written paths.
pub fn write_fixtures(dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    fixture_specs()
        .into_iter()
        .map(|(name, spec)| {
            let series = channel::evolve_channel(&spec, 0)?;
            let path = dir.join(name);
            let mut buf = Vec::new();
            csvio::write_densities(&mut buf, &[LabelledSeries { realization: Some(0), series }])?;
            std::fs::write(&path, buf)?;
            Ok(path)
        })
        .collect()
}
