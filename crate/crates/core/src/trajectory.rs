//! Born-rule sampling and feedback shared by the statevector and MPS engines.
//!
//! Both engines drive the same functions here with the same random streams,
//! so their outcome sequences coincide whenever their Born probabilities do.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::circuit::{CircuitProgram, FeedbackRule, MeasurementEvent, RandomLayer};
use crate::error::{Error, Result};
use crate::gates::{self, BlockOrder, Mat2, Mat4};
use crate::observables::DensitySeries;
use crate::seed::{derive_stream_seed, stream_rng, PROGRAM_STREAM};

/// Branches sampled with a probability below this are treated as corruption.
pub const MIN_BRANCH_PROB: f64 = 1e-14;

/// Operations a pure-state engine must provide.
pub trait TrajectoryState {
    fn sites(&self) -> usize;
    fn apply_site_gate(&mut self, site: usize, gate: &Mat2) -> Result<()>;
    fn apply_bond_gate(&mut self, bond: usize, gate: &Mat4) -> Result<()>;
    /// `⟨ψ|P_x[0]|ψ⟩`.
    fn prob_zero(&mut self, site: usize) -> Result<f64>;
    /// `|ψ⟩ ← P_x[m]|ψ⟩ / √prob`.
    fn project(&mut self, site: usize, outcome: u8, prob: f64) -> Result<()>;
    fn occupations(&mut self) -> Result<Vec<f64>>;
}

/// One entry of the measurement sweep. For conditional SWAP, `site` is the
/// left site of the measured bond.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SiteEvent {
    pub site: usize,
    pub measured: bool,
    pub outcome: Option<u8>,
    pub feedback_applied: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TruncationStats {
    pub discarded_weight: f64,
    pub max_bond: usize,
    pub truncation_events: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub master_seed: u64,
    pub realization: usize,
    pub trajectory: usize,
    /// Measurement sweep of each layer; empty for unitary layers.
    pub events: Vec<Vec<SiteEvent>>,
    /// `⟨n_x(i)⟩` for `i = 0..=depth`.
    pub densities: Vec<Vec<f64>>,
    /// Per-layer truncation statistics (MPS engine only).
    pub truncation: Option<Vec<TruncationStats>>,
}

pub fn apply_scrambling<S: TrajectoryState>(state: &mut S, layer: &RandomLayer, order: BlockOrder) -> Result<()> {
    if layer.sites() != state.sites() {
        return Err(Error::DimensionMismatch { expected: state.sites(), got: layer.sites() });
    }
    for bond in layer.bond_order() {
        state.apply_bond_gate(bond, &layer.block(bond, order))?;
    }
    Ok(())
}

/// Samples outcome `m` for `site` and collapses the state.
pub fn sample_and_project<S: TrajectoryState, R: Rng>(state: &mut S, site: usize, rng: &mut R) -> Result<u8> {
    let p0 = state.prob_zero(site)?.clamp(0.0, 1.0);
    let outcome = if rng.random::<f64>() < p0 { 0 } else { 1 };
    let prob = if outcome == 0 { p0 } else { 1.0 - p0 };
    if prob < MIN_BRANCH_PROB {
        return Err(Error::ZeroProbabilityBranch { site, prob });
    }
    state.project(site, outcome, prob)?;
    Ok(outcome)
}

/// Runs one measurement/feedback sweep. Every entry of the sweep consumes
/// one uniform for the selection draw and, when selected, one for the outcome.
pub fn measure_and_feedback<S: TrajectoryState, R: Rng>(
    state: &mut S,
    event: &MeasurementEvent,
    rng: &mut R,
) -> Result<Vec<SiteEvent>> {
    if event.profile.len() != state.sites() {
        return Err(Error::DimensionMismatch { expected: state.sites(), got: event.profile.len() });
    }
    if event.is_empty() {
        return Ok(Vec::new());
    }
    let mut out = Vec::with_capacity(event.profile.len());
    for site in event.sweep_order() {
        let measured = rng.random::<f64>() < event.profile.probs[site];
        let mut record = SiteEvent { site, measured, outcome: None, feedback_applied: false };
        if measured {
            let m = sample_and_project(state, site, rng)?;
            record.outcome = Some(m);
            if m == 0 {
                match event.rule {
                    FeedbackRule::None => {}
                    FeedbackRule::ConditionalX => {
                        state.apply_site_gate(site, &gates::pauli_x())?;
                        record.feedback_applied = true;
                    }
                    FeedbackRule::ConditionalSwap => {
                        state.apply_bond_gate(site, &gates::swap())?;
                        record.feedback_applied = true;
                    }
                }
            }
        }
        out.push(record);
    }
    Ok(out)
}

/// Random stream for one layer of one trajectory.
pub fn layer_rng(master_seed: u64, realization: usize, trajectory: usize, layer: usize) -> crate::seed::StreamRng {
    stream_rng(derive_stream_seed(master_seed, realization as u64, trajectory as u64, layer as u64))
}

/// Evolves `state` through `program`, recording densities after every layer.
/// `after_layer` is called once per layer (used for truncation bookkeeping).
pub fn run_program<S: TrajectoryState>(
    state: &mut S,
    program: &CircuitProgram,
    master_seed: u64,
    realization: usize,
    trajectory: usize,
    mut after_layer: impl FnMut(&mut S),
) -> Result<TrajectoryRecord> {
    if trajectory as u64 >= PROGRAM_STREAM {
        return Err(Error::OutOfRange { what: "trajectory", index: trajectory, limit: PROGRAM_STREAM as usize });
    }
    if state.sites() != program.sites {
        return Err(Error::DimensionMismatch { expected: program.sites, got: state.sites() });
    }
    let mut densities = Vec::with_capacity(program.depth() + 1);
    densities.push(state.occupations()?);
    let mut events = Vec::with_capacity(program.depth());
    for (i, layer) in program.layers.iter().enumerate() {
        let mut rng = layer_rng(master_seed, realization, trajectory, i);
        apply_scrambling(state, &layer.scramble, program.block_order)?;
        events.push(measure_and_feedback(state, &layer.event, &mut rng)?);
        after_layer(state);
        densities.push(state.occupations()?);
    }
    Ok(TrajectoryRecord { master_seed, realization, trajectory, events, densities, truncation: None })
}

/// Mean over trajectories with the standard error of the mean per entry.
pub fn average_records(engine: &str, records: &[TrajectoryRecord]) -> Result<DensitySeries> {
    let first = records
        .first()
        .ok_or_else(|| Error::ShapeMismatch("no trajectories to average".into()))?;
    let layers = first.densities.len();
    let sites = first.densities[0].len();
    let m = records.len() as f64;
    let mut sum = vec![vec![0.0; sites]; layers];
    let mut sq = vec![vec![0.0; sites]; layers];
    for rec in records {
        if rec.densities.len() != layers || rec.densities.iter().any(|r| r.len() != sites) {
            return Err(Error::ShapeMismatch("trajectory records differ in shape".into()));
        }
        for (i, row) in rec.densities.iter().enumerate() {
            for (x, &v) in row.iter().enumerate() {
                sum[i][x] += v;
                sq[i][x] += v * v;
            }
        }
    }
    let mut mean = sum.clone();
    let mut stderr = sq.clone();
    for i in 0..layers {
        for x in 0..sites {
            let mu = sum[i][x] / m;
            mean[i][x] = mu;
            stderr[i][x] = if records.len() > 1 {
                ((sq[i][x] / m - mu * mu).max(0.0) * m / (m - 1.0) / m).sqrt()
            } else {
                0.0
            };
        }
    }
    DensitySeries::new(engine, mean, stderr, 1)
}
