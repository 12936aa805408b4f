//! Classical stochastic model on bitstrings.
//!
//! A layer applies a scrambling kernel built from the squared moduli of the
//! bond blocks, followed by a feedback kernel: reset `b_x → 1` for
//! conditional X, or a conditional exchange for conditional SWAP. Pure
//! measurement leaves the bit distribution unchanged.
//!
//! Two modes are available: exact propagation of the full distribution
//! (small chains) and Monte Carlo sampling of `W` bitstrings.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::circuit::{
    build_program, swap_bond_order, CircuitProgram, CircuitSpec, FeedbackRule, MeasurementEvent,
    RandomLayer, SwapOrder,
};
use crate::error::{Error, Result};
use crate::gates::{self, BlockOrder};
use crate::observables::{DensitySeries, Stats};
use crate::seed::{derive_stream_seed, PROGRAM_STREAM};
use crate::trajectory::layer_rng;

pub const DEFAULT_EXACT_MAX_SITES: usize = 12;

/// Row-stochastic 4×4 kernel on the bit pair `(a, b)` of one bond, indexed `2a + b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BondTransitionMatrix {
    pub t: [[f64; 4]; 4],
    pub angles: (f64, f64),
}

impl BondTransitionMatrix {
    pub fn max_row_sum_error(&self) -> f64 {
        self.t.iter().map(|row| (row.iter().sum::<f64>() - 1.0).abs()).fold(0.0, f64::max)
    }

    /// Samples the output pair for input pair `from` with one uniform draw.
    pub fn sample<R: Rng>(&self, from: usize, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (to, &p) in self.t[from].iter().enumerate() {
            acc += p;
            if u < acc {
                return to;
            }
        }
        // rounding left u above the accumulated total: take the last reachable state
        (0..4).rev().find(|&to| self.t[from][to] > 0.0).unwrap_or(from)
    }
}

/// `T[(a,b)→(c,d)] = |⟨c,d| (R(θ_a) ⊗ R(θ_b)) · CZ |a,b⟩|²`.
pub fn transition_matrix(theta_a: f64, theta_b: f64) -> BondTransitionMatrix {
    transition_matrix_with_order(theta_a, theta_b, BlockOrder::CzFirst)
}

pub fn transition_matrix_with_order(theta_a: f64, theta_b: f64, order: BlockOrder) -> BondTransitionMatrix {
    let u = gates::bond_block(theta_a, theta_b, order);
    let mut t = [[0.0; 4]; 4];
    for (from, row) in t.iter_mut().enumerate() {
        for (to, v) in row.iter_mut().enumerate() {
            *v = u[to][from].norm_sqr();
        }
    }
    BondTransitionMatrix { t, angles: (theta_a, theta_b) }
}

fn layer_kernels(layer: &RandomLayer, order: BlockOrder) -> Vec<(usize, BondTransitionMatrix)> {
    layer
        .bond_order()
        .into_iter()
        .map(|bond| {
            (bond, transition_matrix_with_order(layer.angles[bond], layer.angles[bond + 1], order))
        })
        .collect()
}

/// Exact probability distribution `P(b)` over all `2^L` bitstrings; bit `x`
/// of the index is `b_x`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactDistribution {
    sites: usize,
    probs: Vec<f64>,
}

impl ExactDistribution {
    pub fn from_bits(bits: &[u8]) -> Self {
        let index = bits.iter().enumerate().fold(0usize, |acc, (x, &b)| acc | ((b as usize) << x));
        let mut probs = vec![0.0; 1 << bits.len()];
        probs[index] = 1.0;
        ExactDistribution { sites: bits.len(), probs }
    }

    pub fn from_probs(probs: Vec<f64>) -> Result<Self> {
        if !probs.len().is_power_of_two() || probs.len() < 2 {
            return Err(Error::DimensionMismatch { expected: probs.len().next_power_of_two(), got: probs.len() });
        }
        Ok(ExactDistribution { sites: probs.len().trailing_zeros() as usize, probs })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn total(&self) -> f64 {
        self.probs.iter().sum()
    }

    /// `⟨δ_{b_x,0}⟩`.
    pub fn occupation(&self, site: usize) -> f64 {
        self.probs.iter().enumerate().filter(|(i, _)| i >> site & 1 == 0).map(|(_, p)| p).sum()
    }

    pub fn occupations(&self) -> Vec<f64> {
        (0..self.sites).map(|x| self.occupation(x)).collect()
    }

    pub fn pair_occupation(&self, x: usize, y: usize) -> f64 {
        self.probs
            .iter()
            .enumerate()
            .filter(|(i, _)| i >> x & 1 == 0 && i >> y & 1 == 0)
            .map(|(_, p)| p)
            .sum()
    }

    pub fn apply_bond_kernel(&mut self, bond: usize, t: &BondTransitionMatrix) -> Result<()> {
        if bond + 1 >= self.sites {
            return Err(Error::OutOfRange { what: "bond", index: bond, limit: self.sites - 1 });
        }
        let (lo, hi) = (1usize << bond, 1usize << (bond + 1));
        for base in (0..self.probs.len()).filter(|i| i & (lo | hi) == 0) {
            let ids = [base, base | hi, base | lo, base | lo | hi];
            let p: [f64; 4] = std::array::from_fn(|n| self.probs[ids[n]]);
            for (to, &idx) in ids.iter().enumerate() {
                self.probs[idx] = (0..4).map(|from| p[from] * t.t[from][to]).sum();
            }
        }
        Ok(())
    }

    pub fn scramble(&mut self, layer: &RandomLayer, order: BlockOrder) -> Result<()> {
        if layer.sites() != self.sites {
            return Err(Error::DimensionMismatch { expected: self.sites, got: layer.sites() });
        }
        for (bond, t) in layer_kernels(layer, order) {
            self.apply_bond_kernel(bond, &t)?;
        }
        Ok(())
    }

    /// Independently per site, `b_x → 1` with probability `f(x)`.
    pub fn reset(&mut self, probs: &[f64]) -> Result<()> {
        if probs.len() != self.sites {
            return Err(Error::DimensionMismatch { expected: self.sites, got: probs.len() });
        }
        for (x, &f) in probs.iter().enumerate() {
            let bit = 1usize << x;
            for i in (0..self.probs.len()).filter(|i| i & bit == 0) {
                let moved = f * self.probs[i];
                self.probs[i] -= moved;
                self.probs[i | bit] += moved;
            }
        }
        Ok(())
    }

    /// On one bond: if `b_x = 0`, exchange `(b_x, b_{x+1})` with probability `p`.
    pub fn swap_bond(&mut self, bond: usize, p: f64) -> Result<()> {
        if bond + 1 >= self.sites {
            return Err(Error::OutOfRange { what: "bond", index: bond, limit: self.sites - 1 });
        }
        let (lo, hi) = (1usize << bond, 1usize << (bond + 1));
        // only (b_x, b_{x+1}) = (0, 1) changes: it becomes (1, 0)
        for base in (0..self.probs.len()).filter(|i| i & (lo | hi) == 0) {
            let moved = p * self.probs[base | hi];
            self.probs[base | hi] -= moved;
            self.probs[base | lo] += moved;
        }
        Ok(())
    }

    pub fn swap_brickwork(&mut self, probs: &[f64], order: SwapOrder) -> Result<()> {
        if probs.len() != self.sites {
            return Err(Error::DimensionMismatch { expected: self.sites, got: probs.len() });
        }
        for bond in swap_bond_order(self.sites, order) {
            self.swap_bond(bond, probs[bond])?;
        }
        Ok(())
    }

    pub fn apply_event(&mut self, event: &MeasurementEvent) -> Result<()> {
        match event.rule {
            FeedbackRule::None => Ok(()),
            FeedbackRule::ConditionalX => self.reset(&event.profile.probs),
            FeedbackRule::ConditionalSwap => self.swap_brickwork(&event.profile.probs, event.swap_order),
        }
    }
}

/// One sampled bitstring, `0` meaning occupied.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Bitstring(pub Vec<u8>);

impl Bitstring {
    pub fn scramble<R: Rng>(&mut self, kernels: &[(usize, BondTransitionMatrix)], rng: &mut R) {
        for (bond, t) in kernels {
            let from = 2 * self.0[*bond] as usize + self.0[bond + 1] as usize;
            let to = t.sample(from, rng);
            self.0[*bond] = (to >> 1) as u8;
            self.0[bond + 1] = (to & 1) as u8;
        }
    }

    pub fn apply_event<R: Rng>(&mut self, event: &MeasurementEvent, rng: &mut R) {
        match event.rule {
            FeedbackRule::None => {}
            FeedbackRule::ConditionalX => {
                for (b, &f) in self.0.iter_mut().zip(&event.profile.probs) {
                    if rng.random::<f64>() < f {
                        *b = 1;
                    }
                }
            }
            FeedbackRule::ConditionalSwap => {
                for bond in event.sweep_order() {
                    let hit = rng.random::<f64>() < event.profile.probs[bond];
                    if hit && self.0[bond] == 0 {
                        self.0.swap(bond, bond + 1);
                    }
                }
            }
        }
    }

    pub fn occupations(&self) -> impl Iterator<Item = f64> + '_ {
        self.0.iter().map(|&b| if b == 0 { 1.0 } else { 0.0 })
    }
}

/// Where the scrambling angles of a Markov realization come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AngleSource {
    /// Same angles as the quantum program of the same realization.
    #[default]
    Matched,
    /// Angles from an unrelated stream.
    Independent,
}

/// The program whose angles and measurement events drive one Markov realization.
pub fn markov_program(spec: &CircuitSpec, realization: usize, angles: AngleSource) -> Result<CircuitProgram> {
    match angles {
        AngleSource::Matched => build_program(spec, realization),
        AngleSource::Independent => {
            let reseeded = CircuitSpec {
                master_seed: derive_stream_seed(spec.master_seed, realization as u64, PROGRAM_STREAM - 1, 0),
                ..spec.clone()
            };
            build_program(&reseeded, realization)
        }
    }
}

/// Exact propagation of one realization's program; `order` selects the block
/// ordering used for the transition matrices.
pub fn evolve_exact(program: &CircuitProgram, max_sites: usize) -> Result<DensitySeries> {
    if program.sites > max_sites {
        return Err(Error::TooLarge { engine: "markov-exact", sites: program.sites, limit: max_sites });
    }
    let mut dist = ExactDistribution::from_bits(&program.initial_bits);
    let mut values = vec![dist.occupations()];
    for layer in &program.layers {
        dist.scramble(&layer.scramble, program.block_order)?;
        dist.apply_event(&layer.event)?;
        values.push(dist.occupations());
    }
    DensitySeries::exact("markov-exact", values)
}

/// Samples `walkers` bitstrings through one realization's program. Walker `w`
/// uses the stream of trajectory `w`, layer by layer.
pub fn sample_program(
    program: &CircuitProgram,
    master_seed: u64,
    realization: usize,
    walkers: usize,
) -> Result<DensitySeries> {
    if walkers == 0 {
        return Err(Error::InvalidSpec("the Markov ensemble needs at least one walker".into()));
    }
    if walkers as u64 >= PROGRAM_STREAM {
        return Err(Error::OutOfRange { what: "walker", index: walkers, limit: PROGRAM_STREAM as usize });
    }
    let sites = program.sites;
    let layers = program.depth() + 1;
    let kernels: Vec<Vec<(usize, BondTransitionMatrix)>> =
        program.layers.iter().map(|l| layer_kernels(&l.scramble, program.block_order)).collect();
    let mut sum = vec![vec![0.0; sites]; layers];
    for w in 0..walkers {
        let mut b = Bitstring(program.initial_bits.clone());
        for (x, o) in b.occupations().enumerate() {
            sum[0][x] += o;
        }
        for (i, layer) in program.layers.iter().enumerate() {
            let mut rng = layer_rng(master_seed, realization, w, i);
            b.scramble(&kernels[i], &mut rng);
            b.apply_event(&layer.event, &mut rng);
            for (x, o) in b.occupations().enumerate() {
                sum[i + 1][x] += o;
            }
        }
    }
    // occupations are Bernoulli, so the per-walker variance is μ(1 − μ)
    let m = walkers as f64;
    let values: Vec<Vec<f64>> = sum.iter().map(|row| row.iter().map(|s| s / m).collect()).collect();
    let stderr = values
        .iter()
        .map(|row| {
            row.iter()
                .map(|&mu| if walkers > 1 { (mu * (1.0 - mu) / (m - 1.0)).max(0.0).sqrt() } else { 0.0 })
                .collect()
        })
        .collect();
    DensitySeries::new("markov", values, stderr, 1)
}

/// Sampled series of one realization with `spec.trajectories` walkers.
pub fn run_markov_realization(spec: &CircuitSpec, realization: usize, angles: AngleSource) -> Result<DensitySeries> {
    let program = markov_program(spec, realization, angles)?;
    sample_program(&program, spec.master_seed, realization, spec.trajectories)
}

/// Realization-averaged sampled series; `stderr` is the standard error
/// across realizations (or across walkers for a single realization).
pub fn run_markov(spec: &CircuitSpec) -> Result<DensitySeries> {
    if spec.realizations == 0 {
        return Err(Error::InvalidSpec("need at least one realization".into()));
    }
    let runs: Vec<DensitySeries> = (0..spec.realizations)
        .map(|r| run_markov_realization(spec, r, AngleSource::Matched))
        .collect::<Result<_>>()?;
    if runs.len() == 1 {
        let mut only = runs.into_iter().next().expect("one realization");
        only.realizations = 1;
        return Ok(only);
    }
    let n = runs.len() as f64;
    let (layers, sites) = (runs[0].depth + 1, runs[0].sites);
    let mut values = vec![vec![0.0; sites]; layers];
    let mut stderr = values.clone();
    for i in 0..layers {
        for x in 0..sites {
            let column: Vec<f64> = runs.iter().map(|s| s.values[i][x]).collect();
            let stats = Stats::of(&column);
            values[i][x] = stats.mean;
            stderr[i][x] = stats.std_dev / n.sqrt();
        }
    }
    DensitySeries::new("markov", values, stderr, runs.len())
}
