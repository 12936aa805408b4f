//! Circuit specifications, random layers, measurement profiles and programs.
//!
//! Sites are 0-based. Bond `j` couples sites `j` and `j + 1`; odd bonds start
//! at odd `j`, even bonds at even `j`. A scrambling layer applies every odd
//! bond block and then every even bond block.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gates::{self, BlockOrder, Mat4};
use crate::seed::{derive_stream_seed, stream_rng, PROGRAM_STREAM};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    Unitary,
    PureMeasure,
    CondX,
    CondSwap,
}

impl Architecture {
    pub const ALL: [Architecture; 4] = [
        Architecture::Unitary,
        Architecture::PureMeasure,
        Architecture::CondX,
        Architecture::CondSwap,
    ];

    /// Whether the architecture uses the linear-gradient profile `f(x)`.
    pub fn uses_gradient(self) -> bool {
        matches!(self, Architecture::PureMeasure | Architecture::CondX)
    }

    pub fn feedback_rule(self) -> FeedbackRule {
        match self {
            Architecture::Unitary | Architecture::PureMeasure => FeedbackRule::None,
            Architecture::CondX => FeedbackRule::ConditionalX,
            Architecture::CondSwap => FeedbackRule::ConditionalSwap,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Architecture::Unitary => "unitary",
            Architecture::PureMeasure => "pure_measure",
            Architecture::CondX => "cond_x",
            Architecture::CondSwap => "cond_swap",
        }
    }
}

/// Initial occupation pattern. Occupied sites start in `|0⟩`, all others in `|1⟩`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialState {
    CenterBlock(usize),
    RightEdgeBlock(usize),
    ExplicitBits(Vec<u8>),
}

impl Default for InitialState {
    fn default() -> Self {
        InitialState::CenterBlock(6)
    }
}

impl InitialState {
    /// Computational-basis bits, `0` meaning occupied.
    pub fn bits(&self, sites: usize) -> Result<Vec<u8>> {
        let block = |start: usize, count: usize| {
            (0..sites)
                .map(|x| if x >= start && x < start + count { 0 } else { 1 })
                .collect()
        };
        match self {
            InitialState::CenterBlock(count) | InitialState::RightEdgeBlock(count)
                if *count > sites =>
            {
                Err(Error::InvalidSpec(format!(
                    "block of {count} occupied sites does not fit in {sites} sites"
                )))
            }
            InitialState::CenterBlock(count) => {
                let start = (sites / 2).saturating_sub(count / 2).min(sites - count);
                Ok(block(start, *count))
            }
            InitialState::RightEdgeBlock(count) => Ok(block(sites - count, *count)),
            InitialState::ExplicitBits(bits) => {
                if bits.len() != sites {
                    return Err(Error::InvalidSpec(format!(
                        "explicit initial state has {} bits, expected {sites}",
                        bits.len()
                    )));
                }
                if bits.iter().any(|&b| b > 1) {
                    return Err(Error::InvalidSpec("explicit bits must be 0 or 1".into()));
                }
                Ok(bits.clone())
            }
        }
    }

    pub fn occupations(&self, sites: usize) -> Result<Vec<f64>> {
        Ok(self
            .bits(sites)?
            .into_iter()
            .map(|b| if b == 0 { 1.0 } else { 0.0 })
            .collect())
    }
}

/// Application order of the two conditional-SWAP sublayers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SwapOrder {
    #[default]
    OddFirst,
    EvenFirst,
}

/// How the Bernoulli measurement-site choices are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMode {
    /// Fresh draws for every trajectory and layer.
    #[default]
    PerTrajectory,
    /// One pattern per realization and layer, shared by all trajectories.
    PerRealization,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CircuitSpec {
    pub sites: usize,
    pub depth: usize,
    pub architecture: Architecture,
    pub theta_max: f64,
    pub g: f64,
    pub p_swap: f64,
    pub init: InitialState,
    pub master_seed: u64,
    pub realizations: usize,
    /// Trajectories per realization, or the ensemble size `W` for the Markov engine.
    pub trajectories: usize,
    pub block_order: BlockOrder,
    pub swap_order: SwapOrder,
    pub selection: SelectionMode,
}

impl CircuitSpec {
    pub const DEFAULT_THETA_MAX: f64 = 1.0;
    pub const DEFAULT_REALIZATIONS: usize = 10;
    pub const DEFAULT_TRAJECTORIES: usize = 200;

    pub fn new(architecture: Architecture, sites: usize, depth: usize) -> Self {
        CircuitSpec {
            sites,
            depth,
            architecture,
            theta_max: Self::DEFAULT_THETA_MAX,
            g: 0.0,
            p_swap: 0.0,
            init: InitialState::default(),
            master_seed: 0,
            realizations: Self::DEFAULT_REALIZATIONS,
            trajectories: Self::DEFAULT_TRAJECTORIES,
            block_order: BlockOrder::default(),
            swap_order: SwapOrder::default(),
            selection: SelectionMode::default(),
        }
    }

    pub fn with_g(mut self, g: f64) -> Self {
        self.g = g;
        self
    }

    pub fn with_p_swap(mut self, p: f64) -> Self {
        self.p_swap = p;
        self
    }

    pub fn with_init(mut self, init: InitialState) -> Self {
        self.init = init;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.master_seed = seed;
        self
    }

    pub fn with_counts(mut self, realizations: usize, trajectories: usize) -> Self {
        self.realizations = realizations;
        self.trajectories = trajectories;
        self
    }

    /// Checks the structural invariants. `depth == 0` is accepted here so
    /// engines can report the bare initial state.
    pub fn validate(&self) -> Result<()> {
        if self.sites < 2 {
            return Err(Error::InvalidSpec(format!("need at least 2 sites, got {}", self.sites)));
        }
        if !(self.theta_max > 0.0 && self.theta_max.is_finite()) {
            return Err(Error::InvalidSpec(format!("theta_max must be positive, got {}", self.theta_max)));
        }
        if !(0.0..=1.0).contains(&self.p_swap) {
            return Err(Error::InvalidSpec(format!("p_swap must lie in [0, 1], got {}", self.p_swap)));
        }
        if self.architecture.uses_gradient() {
            if !(self.g >= 0.0) {
                return Err(Error::InvalidSpec(format!("g must be non-negative, got {}", self.g)));
            }
            if self.g * self.sites as f64 >= 1.0 {
                return Err(Error::InvalidSpec(format!(
                    "g·L = {} must stay below 1 so that f(0) < 1",
                    self.g * self.sites as f64
                )));
            }
        }
        self.init.bits(self.sites)?;
        Ok(())
    }

    pub fn initial_bits(&self) -> Result<Vec<u8>> {
        self.init.bits(self.sites)
    }
}

/// Rotation angles of one scrambling layer, one per site.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomLayer {
    pub angles: Vec<f64>,
}

impl RandomLayer {
    pub fn new(angles: Vec<f64>) -> Self {
        RandomLayer { angles }
    }

    pub fn uniform(sites: usize, theta: f64) -> Self {
        RandomLayer { angles: vec![theta; sites] }
    }

    pub fn sites(&self) -> usize {
        self.angles.len()
    }

    /// Bonds in application order: odd bonds, then even bonds.
    pub fn bond_order(&self) -> Vec<usize> {
        scramble_bond_order(self.sites())
    }

    pub fn block(&self, bond: usize, order: BlockOrder) -> Mat4 {
        gates::bond_block(self.angles[bond], self.angles[bond + 1], order)
    }
}

pub fn odd_bonds(sites: usize) -> impl Iterator<Item = usize> {
    (1..sites.saturating_sub(1)).step_by(2)
}

pub fn even_bonds(sites: usize) -> impl Iterator<Item = usize> {
    (0..sites.saturating_sub(1)).step_by(2)
}

pub fn scramble_bond_order(sites: usize) -> Vec<usize> {
    odd_bonds(sites).chain(even_bonds(sites)).collect()
}

pub fn swap_bond_order(sites: usize, order: SwapOrder) -> Vec<usize> {
    match order {
        SwapOrder::OddFirst => odd_bonds(sites).chain(even_bonds(sites)).collect(),
        SwapOrder::EvenFirst => even_bonds(sites).chain(odd_bonds(sites)).collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileKind {
    LinearGradient(f64),
    Uniform(f64),
    Explicit,
}

/// Per-site measurement probabilities. For conditional SWAP, entry `x` is
/// the probability for bond `x`; the last entry is never used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementProfile {
    pub probs: Vec<f64>,
    pub kind: ProfileKind,
}

impl MeasurementProfile {
    /// `f(x) = (L − x)·g`.
    pub fn linear_gradient(sites: usize, g: f64) -> Result<Self> {
        let probs: Vec<f64> = (0..sites).map(|x| (sites - x) as f64 * g).collect();
        Self::checked(probs, ProfileKind::LinearGradient(g))
    }

    pub fn uniform(sites: usize, p: f64) -> Result<Self> {
        Self::checked(vec![p; sites], ProfileKind::Uniform(p))
    }

    pub fn explicit(probs: Vec<f64>) -> Result<Self> {
        Self::checked(probs, ProfileKind::Explicit)
    }

    pub fn zeros(sites: usize) -> Self {
        MeasurementProfile { probs: vec![0.0; sites], kind: ProfileKind::Explicit }
    }

    fn checked(probs: Vec<f64>, kind: ProfileKind) -> Result<Self> {
        if let Some(p) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::InvalidSpec(format!("measurement probability {p} outside [0, 1]")));
        }
        Ok(MeasurementProfile { probs, kind })
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeedbackRule {
    None,
    /// Outcome 0 triggers an X on the measured site.
    ConditionalX,
    /// Outcome 0 triggers a SWAP with the right neighbour.
    ConditionalSwap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementEvent {
    pub profile: MeasurementProfile,
    pub rule: FeedbackRule,
    pub swap_order: SwapOrder,
}

impl MeasurementEvent {
    pub fn is_empty(&self) -> bool {
        self.rule == FeedbackRule::None && self.profile.probs.iter().all(|&p| p == 0.0)
    }

    /// Measured sites (or bonds, for conditional SWAP) in sweep order.
    pub fn sweep_order(&self) -> Vec<usize> {
        let sites = self.profile.len();
        match self.rule {
            FeedbackRule::ConditionalSwap => swap_bond_order(sites, self.swap_order),
            _ => (0..sites).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProgramLayer {
    pub scramble: RandomLayer,
    pub event: MeasurementEvent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CircuitProgram {
    pub sites: usize,
    pub architecture: Architecture,
    pub block_order: BlockOrder,
    pub initial_bits: Vec<u8>,
    pub layers: Vec<ProgramLayer>,
}

impl CircuitProgram {
    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn initial_occupations(&self) -> Vec<f64> {
        self.initial_bits.iter().map(|&b| if b == 0 { 1.0 } else { 0.0 }).collect()
    }
}

fn base_profile(spec: &CircuitSpec) -> Result<MeasurementProfile> {
    match spec.architecture {
        Architecture::Unitary => Ok(MeasurementProfile::zeros(spec.sites)),
        Architecture::PureMeasure | Architecture::CondX => {
            MeasurementProfile::linear_gradient(spec.sites, spec.g)
        }
        Architecture::CondSwap => MeasurementProfile::uniform(spec.sites, spec.p_swap),
    }
}

/// Builds the circuit of one realization. Angles are drawn uniformly from
/// `[0, θ_max)` per site and layer from a realization-level stream, so the
/// result depends only on `(spec, realization)`.
pub fn build_program(spec: &CircuitSpec, realization: usize) -> Result<CircuitProgram> {
    spec.validate()?;
    let profile = base_profile(spec)?;
    let rule = spec.architecture.feedback_rule();
    let mut layers = Vec::with_capacity(spec.depth);
    for layer in 0..spec.depth {
        let seed = derive_stream_seed(spec.master_seed, realization as u64, PROGRAM_STREAM, layer as u64);
        let mut rng = stream_rng(seed);
        let angles: Vec<f64> = (0..spec.sites)
            .map(|_| rng.random::<f64>() * spec.theta_max)
            .collect();
        let mut layer_profile = profile.clone();
        if spec.selection == SelectionMode::PerRealization && spec.architecture != Architecture::Unitary {
            let frozen = layer_profile
                .probs
                .iter()
                .map(|&p| if rng.random::<f64>() < p { 1.0 } else { 0.0 })
                .collect();
            layer_profile = MeasurementProfile { probs: frozen, kind: ProfileKind::Explicit };
        }
        layers.push(ProgramLayer {
            scramble: RandomLayer::new(angles),
            event: MeasurementEvent {
                profile: layer_profile,
                rule,
                swap_order: spec.swap_order,
            },
        });
    }
    Ok(CircuitProgram {
        sites: spec.sites,
        architecture: spec.architecture,
        block_order: spec.block_order,
        initial_bits: spec.initial_bits()?,
        layers,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NativeGate {
    Cz(usize, usize),
    SqrtX(usize),
    X(usize),
}

/// Native decomposition `[CZ · √X ⊗ √X]³` of a SWAP on `bond`, in time order.
pub fn compile_swap_native(bond: usize, sites: usize) -> Result<Vec<NativeGate>> {
    if bond + 1 >= sites {
        return Err(Error::OutOfRange { what: "bond", index: bond, limit: sites.saturating_sub(1) });
    }
    let mut seq = Vec::with_capacity(9);
    for _ in 0..3 {
        seq.push(NativeGate::SqrtX(bond));
        seq.push(NativeGate::SqrtX(bond + 1));
        seq.push(NativeGate::Cz(bond, bond + 1));
    }
    Ok(seq)
}

/// Unitary of a native sequence restricted to `bond`, composed in time order.
pub fn native_unitary(bond: usize, seq: &[NativeGate]) -> Mat4 {
    let mut u = gates::identity4();
    for gate in seq {
        let g = match *gate {
            NativeGate::Cz(..) => gates::cz(),
            NativeGate::SqrtX(s) if s == bond => gates::kron(&gates::sqrt_x(), &gates::identity2()),
            NativeGate::SqrtX(_) => gates::kron(&gates::identity2(), &gates::sqrt_x()),
            NativeGate::X(s) if s == bond => gates::kron(&gates::pauli_x(), &gates::identity2()),
            NativeGate::X(_) => gates::kron(&gates::identity2(), &gates::pauli_x()),
        };
        u = gates::mul4(&g, &u);
    }
    u
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GateCounts {
    pub cz: usize,
    pub sqrt_x: usize,
    /// `X` gates inserted in pairs (`I = X²`) on idle sites.
    pub padding_x: usize,
}

/// Gate accounting for one SWAP sublayer: every swapped bond is compiled
/// natively and every idle site receives an `X·X` identity pair.
pub fn compile_swap_sublayer(sites: usize, swapped_bonds: &[usize]) -> Result<(Vec<NativeGate>, GateCounts)> {
    let mut busy = vec![false; sites];
    let mut seq = Vec::new();
    for &bond in swapped_bonds {
        let native = compile_swap_native(bond, sites)?;
        if busy[bond] || busy[bond + 1] {
            return Err(Error::InvalidSpec(format!("bond {bond} overlaps another bond in the sublayer")));
        }
        busy[bond] = true;
        busy[bond + 1] = true;
        seq.extend(native);
    }
    let mut counts = GateCounts::default();
    for gate in &seq {
        match gate {
            NativeGate::Cz(..) => counts.cz += 1,
            NativeGate::SqrtX(_) => counts.sqrt_x += 1,
            NativeGate::X(_) => counts.padding_x += 1,
        }
    }
    if !swapped_bonds.is_empty() {
        for (site, _) in busy.iter().enumerate().filter(|(_, b)| !**b) {
            seq.push(NativeGate::X(site));
            seq.push(NativeGate::X(site));
            counts.padding_x += 2;
        }
    }
    Ok((seq, counts))
}
