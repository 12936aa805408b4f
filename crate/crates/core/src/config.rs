//! Experiment configuration files.
//!
//! ```toml
//! [circuit]
//! architecture = "cond_x"
//! sites = 20
//! depth = 10
//! g = 0.01
//!
//! [engine]
//! kind = "mps"
//!
//! [output]
//! dir = "out"
//! ```
//!
//! Unknown keys in any section are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::channel::DEFAULT_CHANNEL_MAX_SITES;
use crate::circuit::{Architecture, CircuitSpec, InitialState, SelectionMode, SwapOrder};
use crate::error::{Error, Result};
use crate::gates::BlockOrder;
use crate::mps::MpsConfig;
use crate::seed::{PROGRAM_STREAM, REALIZATION_BITS};
use crate::statevector::DEFAULT_STATEVECTOR_MAX_SITES;

/// Environment variable naming the output directory when the file omits it.
pub const OUTPUT_DIR_ENV: &str = "FBSIM_OUTPUT_DIR";
pub const DEFAULT_OUTPUT_DIR: &str = "fbsim-out";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EngineKind {
    Channel,
    Statevector,
    Mps,
    Markov,
}

impl EngineKind {
    pub fn name(self) -> &'static str {
        match self {
            EngineKind::Channel => "channel",
            EngineKind::Statevector => "statevector",
            EngineKind::Mps => "mps",
            EngineKind::Markov => "markov",
        }
    }

    /// Default size limit, `None` for engines that scale to any chain.
    pub fn default_max_sites(self) -> Option<usize> {
        match self {
            EngineKind::Channel => Some(DEFAULT_CHANNEL_MAX_SITES),
            EngineKind::Statevector => Some(DEFAULT_STATEVECTOR_MAX_SITES),
            EngineKind::Mps | EngineKind::Markov => None,
        }
    }
}

impl std::str::FromStr for EngineKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "channel" => Ok(EngineKind::Channel),
            "statevector" => Ok(EngineKind::Statevector),
            "mps" => Ok(EngineKind::Mps),
            "markov" => Ok(EngineKind::Markov),
            other => Err(Error::Parse(format!("unknown engine {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub densities: bool,
    pub scalars: bool,
    pub trajectories: bool,
    pub fits: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub spec: CircuitSpec,
    pub engine: EngineKind,
    pub mps: MpsConfig,
    /// Overrides the engine's default size limit.
    pub max_sites: Option<usize>,
    /// Worker threads; `None` uses the available parallelism.
    pub workers: Option<usize>,
    pub output: OutputConfig,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    circuit: RawCircuit,
    engine: RawEngine,
    #[serde(default)]
    output: RawOutput,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCircuit {
    architecture: Architecture,
    #[serde(alias = "L")]
    sites: usize,
    depth: usize,
    #[serde(default)]
    g: f64,
    #[serde(default)]
    p_swap: f64,
    #[serde(default = "default_theta_max")]
    theta_max: f64,
    #[serde(default)]
    init: InitialState,
    #[serde(default)]
    seed: u64,
    #[serde(default = "default_realizations")]
    realizations: usize,
    #[serde(default = "default_trajectories")]
    trajectories: usize,
    #[serde(default)]
    block_order: BlockOrder,
    #[serde(default)]
    swap_order: SwapOrder,
    #[serde(default)]
    selection: SelectionMode,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEngine {
    kind: EngineKind,
    #[serde(default = "default_chi_max")]
    chi_max: usize,
    #[serde(default = "default_trunc_tol")]
    trunc_tol: f64,
    max_sites: Option<usize>,
    workers: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOutput {
    dir: Option<PathBuf>,
    #[serde(default = "yes")]
    densities: bool,
    #[serde(default = "yes")]
    scalars: bool,
    #[serde(default)]
    trajectories: bool,
    #[serde(default)]
    fits: bool,
}

impl Default for RawOutput {
    fn default() -> Self {
        RawOutput { dir: None, densities: true, scalars: true, trajectories: false, fits: false }
    }
}

fn default_theta_max() -> f64 {
    CircuitSpec::DEFAULT_THETA_MAX
}

fn default_realizations() -> usize {
    CircuitSpec::DEFAULT_REALIZATIONS
}

fn default_trajectories() -> usize {
    CircuitSpec::DEFAULT_TRAJECTORIES
}

fn default_chi_max() -> usize {
    MpsConfig::default().chi_max
}

fn default_trunc_tol() -> f64 {
    MpsConfig::default().trunc_tol
}

fn yes() -> bool {
    true
}

fn default_output_dir() -> PathBuf {
    std::env::var_os(OUTPUT_DIR_ENV)
        .filter(|v| !v.is_empty())
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_DIR))
}

impl ExperimentConfig {
    /// Default engine settings around an existing spec.
    pub fn new(spec: CircuitSpec, engine: EngineKind, dir: impl Into<PathBuf>) -> Self {
        ExperimentConfig {
            spec,
            engine,
            mps: MpsConfig::default(),
            max_sites: None,
            workers: None,
            output: OutputConfig {
                dir: dir.into(),
                densities: true,
                scalars: true,
                trajectories: false,
                fits: false,
            },
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| Error::Parse(e.to_string().trim_end().to_string()))?;
        let c = raw.circuit;
        let spec = CircuitSpec {
            sites: c.sites,
            depth: c.depth,
            architecture: c.architecture,
            theta_max: c.theta_max,
            g: c.g,
            p_swap: c.p_swap,
            init: c.init,
            master_seed: c.seed,
            realizations: c.realizations,
            trajectories: c.trajectories,
            block_order: c.block_order,
            swap_order: c.swap_order,
            selection: c.selection,
        };
        let config = ExperimentConfig {
            spec,
            engine: raw.engine.kind,
            mps: MpsConfig { chi_max: raw.engine.chi_max, trunc_tol: raw.engine.trunc_tol },
            max_sites: raw.engine.max_sites,
            workers: raw.engine.workers,
            output: OutputConfig {
                dir: raw.output.dir.unwrap_or_else(default_output_dir),
                densities: raw.output.densities,
                scalars: raw.output.scalars,
                trajectories: raw.output.trajectories,
                fits: raw.output.fits,
            },
        };
        config.validate()?;
        Ok(config)
    }

    pub fn max_sites(&self) -> Option<usize> {
        self.max_sites.or(self.engine.default_max_sites())
    }

    /// Checks everything that can be checked without touching the filesystem.
    pub fn validate(&self) -> Result<()> {
        let s = &self.spec;
        s.validate().map_err(|e| match e {
            Error::InvalidSpec(msg) => Error::Validation(msg),
            other => other,
        })?;
        if s.depth == 0 {
            return Err(Error::Validation("depth must be at least 1".into()));
        }
        if s.realizations == 0 || s.realizations >= 1 << REALIZATION_BITS {
            return Err(Error::Validation(format!(
                "realizations must lie in 1..{}, got {}",
                1u64 << REALIZATION_BITS,
                s.realizations
            )));
        }
        if s.trajectories == 0 || s.trajectories as u64 >= PROGRAM_STREAM {
            return Err(Error::Validation(format!(
                "trajectories must lie in 1..{PROGRAM_STREAM}, got {}",
                s.trajectories
            )));
        }
        if let Some(limit) = self.max_sites() {
            if s.sites > limit {
                return Err(Error::Validation(format!(
                    "{} engine supports at most {limit} sites, got {}",
                    self.engine.name(),
                    s.sites
                )));
            }
        }
        if self.engine == EngineKind::Mps {
            self.mps.validate().map_err(|e| Error::Validation(e.to_string()))?;
        }
        if self.workers == Some(0) {
            return Err(Error::Validation("workers must be at least 1".into()));
        }
        Ok(())
    }

    /// Creates the output directory, failing with a validation error if it
    /// cannot be written.
    pub fn prepare_output_dir(&self) -> Result<()> {
        let dir = &self.output.dir;
        std::fs::create_dir_all(dir)
            .map_err(|e| Error::Validation(format!("output directory {} is not writable: {e}", dir.display())))?;
        let probe = dir.join(".fbsim-write-probe");
        std::fs::write(&probe, b"")
            .and_then(|_| std::fs::remove_file(&probe))
            .map_err(|e| Error::Validation(format!("output directory {} is not writable: {e}", dir.display())))
    }
}

pub fn parse_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    ExperimentConfig::from_toml_str(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[circuit]
architecture = "cond_x"
sites = 20
depth = 10
g = 0.01

[engine]
kind = "mps"

[output]
dir = "out"
"#;

    #[test]
    fn minimal_config_gets_defaults() {
        let c = ExperimentConfig::from_toml_str(MINIMAL).unwrap();
        assert_eq!(c.engine, EngineKind::Mps);
        assert_eq!(c.spec.architecture, Architecture::CondX);
        assert_eq!((c.spec.sites, c.spec.depth), (20, 10));
        assert_eq!(c.spec.theta_max, 1.0);
        assert_eq!(c.spec.trajectories, 200);
        assert_eq!(c.spec.realizations, 10);
        assert_eq!(c.mps.chi_max, 64);
        assert_eq!(c.spec.init, InitialState::CenterBlock(6));
        assert_eq!(c.output.dir, PathBuf::from("out"));
        assert!(c.output.densities && c.output.scalars && !c.output.trajectories);
    }

    #[test]
    fn unknown_key_is_named() {
        let text = MINIMAL.replace("g = 0.01", "gg = 0.01");
        match ExperimentConfig::from_toml_str(&text) {
            Err(Error::Parse(msg)) => assert!(msg.contains("gg"), "{msg}"),
            other => panic!("expected parse error, got {other:?}"),
        }
        let text = MINIMAL.replace("kind = \"mps\"", "kind = \"mps\"\nchi = 3");
        assert!(matches!(ExperimentConfig::from_toml_str(&text), Err(Error::Parse(m)) if m.contains("chi")));
    }

    #[test]
    fn steep_gradient_is_rejected() {
        let text = MINIMAL.replace("g = 0.01", "g = 0.06");
        assert!(matches!(ExperimentConfig::from_toml_str(&text), Err(Error::Validation(_))));
    }

    #[test]
    fn engine_size_guard() {
        let text = MINIMAL.replace("kind = \"mps\"", "kind = \"channel\"");
        assert!(matches!(ExperimentConfig::from_toml_str(&text), Err(Error::Validation(m)) if m.contains("channel")));
        let text = MINIMAL.replace("kind = \"mps\"", "kind = \"channel\"\nmax_sites = 20");
        assert!(ExperimentConfig::from_toml_str(&text).is_ok());
    }

    #[test]
    fn zero_depth_and_counts_are_rejected() {
        let text = MINIMAL.replace("depth = 10", "depth = 0");
        assert!(matches!(ExperimentConfig::from_toml_str(&text), Err(Error::Validation(_))));
        let text = MINIMAL.replace("g = 0.01", "g = 0.01\nrealizations = 0");
        assert!(matches!(ExperimentConfig::from_toml_str(&text), Err(Error::Validation(_))));
    }

    #[test]
    fn full_config_round_trip() {
        let text = r#"
[circuit]
architecture = "cond_swap"
L = 8
depth = 3
p_swap = 0.3
theta_max = 0.5
init = { right_edge_block = 2 }
seed = 99
realizations = 2
trajectories = 5
block_order = "cz_first"
swap_order = "even_first"
selection = "per_realization"

[engine]
kind = "statevector"
workers = 3

[output]
dir = "x"
trajectories = true
fits = true
"#;
        let c = ExperimentConfig::from_toml_str(text).unwrap();
        assert_eq!(c.spec.sites, 8);
        assert_eq!(c.spec.init, InitialState::RightEdgeBlock(2));
        assert_eq!(c.spec.block_order, BlockOrder::CzFirst);
        assert_eq!(c.spec.swap_order, SwapOrder::EvenFirst);
        assert_eq!(c.spec.selection, SelectionMode::PerRealization);
        assert_eq!(c.workers, Some(3));
        assert!(c.output.trajectories && c.output.fits);
    }
}
