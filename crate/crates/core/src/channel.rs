//! Exact density-matrix evolution of the full measurement/feedback channel.
//!
//! Every measurement block is applied as an explicit Kraus sum
//! `ρ ↦ Σ_k K_k ρ K_k†`, so this engine serves as the ground truth for the
//! trajectory engines.

use num_complex::Complex64 as C64;

use crate::circuit::{
    build_program, swap_bond_order, CircuitProgram, CircuitSpec, FeedbackRule, MeasurementEvent,
    MeasurementProfile, RandomLayer, SwapOrder,
};
use crate::error::{Error, Result};
use crate::gates::{self, BlockOrder, Mat2, Mat4};
use crate::observables::DensitySeries;

/// Default cap on the number of sites for the dense channel engine.
pub const DEFAULT_CHANNEL_MAX_SITES: usize = 12;

/// `√f P[0]`, `√f P[1]`, `√(1−f) I`.
pub fn pure_measure_kraus(f: f64) -> Vec<Mat2> {
    vec![
        gates::scale2(&gates::projector(0), f.sqrt()),
        gates::scale2(&gates::projector(1), f.sqrt()),
        gates::scale2(&gates::identity2(), (1.0 - f).sqrt()),
    ]
}

/// `√f X P[0]`, `√f P[1]`, `√(1−f) I`.
pub fn cond_x_kraus(f: f64) -> Vec<Mat2> {
    vec![
        gates::scale2(&gates::mul2(&gates::pauli_x(), &gates::projector(0)), f.sqrt()),
        gates::scale2(&gates::projector(1), f.sqrt()),
        gates::scale2(&gates::identity2(), (1.0 - f).sqrt()),
    ]
}

/// Bond Kraus set `√p SWAP P_x[0]`, `√p P_x[1]`, `√(1−p) I`, with the
/// measured site on the left of the bond.
pub fn cond_swap_kraus(p: f64) -> Vec<Mat4> {
    let p0 = gates::kron(&gates::projector(0), &gates::identity2());
    let p1 = gates::kron(&gates::projector(1), &gates::identity2());
    vec![
        gates::scale4(&gates::mul4(&gates::swap(), &p0), p.sqrt()),
        gates::scale4(&p1, p.sqrt()),
        gates::scale4(&gates::identity4(), (1.0 - p).sqrt()),
    ]
}

/// `max |Σ K†K − I|` over matrix entries.
pub fn completeness_error_1q(ops: &[Mat2]) -> f64 {
    let mut sum = [[C64::new(0.0, 0.0); 2]; 2];
    for k in ops {
        let p = gates::mul2(&gates::dagger2(k), k);
        for i in 0..2 {
            for j in 0..2 {
                sum[i][j] += p[i][j];
            }
        }
    }
    let id = gates::identity2();
    (0..4).map(|n| (sum[n / 2][n % 2] - id[n / 2][n % 2]).norm()).fold(0.0, f64::max)
}

pub fn completeness_error_2q(ops: &[Mat4]) -> f64 {
    let mut sum = [[C64::new(0.0, 0.0); 4]; 4];
    for k in ops {
        let p = gates::mul4(&gates::dagger4(k), k);
        for i in 0..4 {
            for j in 0..4 {
                sum[i][j] += p[i][j];
            }
        }
    }
    let id = gates::identity4();
    (0..16).map(|n| (sum[n / 4][n % 4] - id[n / 4][n % 4]).norm()).fold(0.0, f64::max)
}

/// Dense `2^L × 2^L` density matrix, row-major. Bit `x` of a basis index is
/// the state of site `x`.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    sites: usize,
    dim: usize,
    data: Vec<C64>,
}

impl DensityMatrix {
    pub fn from_bits(bits: &[u8]) -> Self {
        let sites = bits.len();
        let dim = 1usize << sites;
        let index = bits.iter().enumerate().fold(0usize, |acc, (x, &b)| acc | ((b as usize) << x));
        let mut data = vec![C64::new(0.0, 0.0); dim * dim];
        data[index * dim + index] = C64::new(1.0, 0.0);
        DensityMatrix { sites, dim, data }
    }

    /// `|ψ⟩⟨ψ|` for a normalized amplitude vector.
    pub fn from_pure(amplitudes: &[C64]) -> Result<Self> {
        let dim = amplitudes.len();
        if !dim.is_power_of_two() || dim < 2 {
            return Err(Error::DimensionMismatch { expected: dim.next_power_of_two(), got: dim });
        }
        let mut data = vec![C64::new(0.0, 0.0); dim * dim];
        for r in 0..dim {
            for c in 0..dim {
                data[r * dim + c] = amplitudes[r] * amplitudes[c].conj();
            }
        }
        Ok(DensityMatrix { sites: dim.trailing_zeros() as usize, dim, data })
    }

    /// Convex mixture of states with the given weights (normalized internally).
    pub fn mixture(states: &[(f64, DensityMatrix)]) -> Result<Self> {
        let first = &states
            .first()
            .ok_or_else(|| Error::ShapeMismatch("empty mixture".into()))?
            .1;
        let total: f64 = states.iter().map(|(w, _)| w).sum();
        let mut out = DensityMatrix { sites: first.sites, dim: first.dim, data: vec![C64::new(0.0, 0.0); first.data.len()] };
        for (w, rho) in states {
            if rho.dim != first.dim {
                return Err(Error::DimensionMismatch { expected: first.dim, got: rho.dim });
            }
            for (o, v) in out.data.iter_mut().zip(&rho.data) {
                *o += v * (w / total);
            }
        }
        Ok(out)
    }

    pub fn sites(&self) -> usize {
        self.sites
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entry(&self, r: usize, c: usize) -> C64 {
        self.data[r * self.dim + c]
    }

    pub fn trace(&self) -> C64 {
        (0..self.dim).map(|i| self.data[i * self.dim + i]).sum()
    }

    pub fn hermiticity_error(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for r in 0..self.dim {
            for c in r..self.dim {
                worst = worst.max((self.entry(r, c) - self.entry(c, r).conj()).norm());
            }
        }
        worst
    }

    /// Smallest eigenvalue; used for positivity checks in tests.
    pub fn min_eigenvalue(&self) -> f64 {
        let m = nalgebra::DMatrix::from_fn(self.dim, self.dim, |r, c| self.entry(r, c));
        let eig = nalgebra::SymmetricEigen::new(m);
        eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// `⟨n_x⟩ = Tr[|0⟩⟨0|_x ρ]`.
    pub fn occupation(&self, site: usize) -> f64 {
        (0..self.dim)
            .filter(|i| i >> site & 1 == 0)
            .map(|i| self.data[i * self.dim + i].re)
            .sum()
    }

    pub fn occupations(&self) -> Vec<f64> {
        (0..self.sites).map(|x| self.occupation(x)).collect()
    }

    /// `⟨n_x n_y⟩`.
    pub fn pair_occupation(&self, x: usize, y: usize) -> f64 {
        (0..self.dim)
            .filter(|i| i >> x & 1 == 0 && i >> y & 1 == 0)
            .map(|i| self.data[i * self.dim + i].re)
            .sum()
    }

    fn check_sites(&self, got: usize) -> Result<()> {
        if got != self.sites {
            return Err(Error::DimensionMismatch { expected: self.sites, got });
        }
        Ok(())
    }

    /// `ρ ↦ K ρ K†` for a single-site operator.
    fn conjugate_1q(&mut self, site: usize, k: &Mat2) {
        let dim = self.dim;
        let bit = 1usize << site;
        // K from the left, column by column
        for c in 0..dim {
            for r0 in (0..dim).filter(|r| r & bit == 0) {
                let r1 = r0 | bit;
                let (a, b) = (self.data[r0 * dim + c], self.data[r1 * dim + c]);
                self.data[r0 * dim + c] = k[0][0] * a + k[0][1] * b;
                self.data[r1 * dim + c] = k[1][0] * a + k[1][1] * b;
            }
        }
        // K† from the right, row by row
        for r in 0..dim {
            let row = &mut self.data[r * dim..(r + 1) * dim];
            for c0 in (0..dim).filter(|c| c & bit == 0) {
                let c1 = c0 | bit;
                let (a, b) = (row[c0], row[c1]);
                row[c0] = a * k[0][0].conj() + b * k[0][1].conj();
                row[c1] = a * k[1][0].conj() + b * k[1][1].conj();
            }
        }
    }

    /// `ρ ↦ K ρ K†` for an operator on bond `(bond, bond + 1)`.
    fn conjugate_2q(&mut self, bond: usize, k: &Mat4) {
        let dim = self.dim;
        let (lo, hi) = (1usize << bond, 1usize << (bond + 1));
        // local index 2a + b: a on `bond`, b on `bond + 1`
        let idx = |base: usize| [base, base | hi, base | lo, base | lo | hi];
        for c in 0..dim {
            for base in (0..dim).filter(|r| r & (lo | hi) == 0) {
                let ids = idx(base);
                let v: [C64; 4] = std::array::from_fn(|n| self.data[ids[n] * dim + c]);
                for (i, &row) in ids.iter().enumerate() {
                    self.data[row * dim + c] = (0..4).map(|j| k[i][j] * v[j]).sum();
                }
            }
        }
        for r in 0..dim {
            let row = &mut self.data[r * dim..(r + 1) * dim];
            for base in (0..dim).filter(|c| c & (lo | hi) == 0) {
                let ids = idx(base);
                let v: [C64; 4] = std::array::from_fn(|n| row[ids[n]]);
                for (i, &col) in ids.iter().enumerate() {
                    row[col] = (0..4).map(|j| v[j] * k[i][j].conj()).sum();
                }
            }
        }
    }

    fn kraus_sum_1q(&mut self, site: usize, ops: &[Mat2]) {
        let mut acc = vec![C64::new(0.0, 0.0); self.data.len()];
        for k in ops {
            if k.iter().flatten().all(|z| z.norm() == 0.0) {
                continue;
            }
            let mut branch = self.clone();
            branch.conjugate_1q(site, k);
            acc.iter_mut().zip(&branch.data).for_each(|(a, b)| *a += b);
        }
        self.data = acc;
    }

    fn kraus_sum_2q(&mut self, bond: usize, ops: &[Mat4]) {
        let mut acc = vec![C64::new(0.0, 0.0); self.data.len()];
        for k in ops {
            if k.iter().flatten().all(|z| z.norm() == 0.0) {
                continue;
            }
            let mut branch = self.clone();
            branch.conjugate_2q(bond, k);
            acc.iter_mut().zip(&branch.data).for_each(|(a, b)| *a += b);
        }
        self.data = acc;
    }

    /// Conjugation by one scrambling layer: odd bond blocks, then even ones.
    pub fn apply_scrambling(&mut self, layer: &RandomLayer, order: BlockOrder) -> Result<()> {
        self.check_sites(layer.sites())?;
        for bond in layer.bond_order() {
            self.conjugate_2q(bond, &layer.block(bond, order));
        }
        Ok(())
    }

    /// Apply an arbitrary two-site unitary on a bond.
    pub fn apply_bond_unitary(&mut self, bond: usize, u: &Mat4) -> Result<()> {
        if bond + 1 >= self.sites {
            return Err(Error::OutOfRange { what: "bond", index: bond, limit: self.sites - 1 });
        }
        self.conjugate_2q(bond, u);
        Ok(())
    }

    /// Per site, ascending: `ρ ← f(P0ρP0 + P1ρP1) + (1−f)ρ`.
    pub fn apply_pure_measure(&mut self, profile: &MeasurementProfile) -> Result<()> {
        self.check_sites(profile.len())?;
        for (site, &f) in profile.probs.iter().enumerate() {
            if f > 0.0 {
                self.kraus_sum_1q(site, &pure_measure_kraus(f));
            }
        }
        Ok(())
    }

    /// Per site, ascending: `ρ ← f(X P0ρP0 X + P1ρP1) + (1−f)ρ`.
    pub fn apply_cond_x(&mut self, profile: &MeasurementProfile) -> Result<()> {
        self.check_sites(profile.len())?;
        for (site, &f) in profile.probs.iter().enumerate() {
            if f > 0.0 {
                self.kraus_sum_1q(site, &cond_x_kraus(f));
            }
        }
        Ok(())
    }

    /// Conditional-SWAP channel on a single bond.
    pub fn apply_cond_swap_bond(&mut self, bond: usize, p: f64) -> Result<()> {
        if bond + 1 >= self.sites {
            return Err(Error::OutOfRange { what: "bond", index: bond, limit: self.sites - 1 });
        }
        if p > 0.0 {
            self.kraus_sum_2q(bond, &cond_swap_kraus(p));
        }
        Ok(())
    }

    /// Conditional-SWAP brickwork with uniform probability.
    pub fn apply_cond_swap(&mut self, p_swap: f64, order: SwapOrder) -> Result<()> {
        if !(0.0..=1.0).contains(&p_swap) {
            return Err(Error::InvalidSpec(format!("p_swap {p_swap} outside [0, 1]")));
        }
        for bond in swap_bond_order(self.sites, order) {
            self.apply_cond_swap_bond(bond, p_swap)?;
        }
        Ok(())
    }

    /// Conditional-SWAP brickwork with per-bond probabilities.
    pub fn apply_cond_swap_profile(&mut self, profile: &MeasurementProfile, order: SwapOrder) -> Result<()> {
        self.check_sites(profile.len())?;
        for bond in swap_bond_order(self.sites, order) {
            self.apply_cond_swap_bond(bond, profile.probs[bond])?;
        }
        Ok(())
    }

    pub fn apply_event(&mut self, event: &MeasurementEvent) -> Result<()> {
        match event.rule {
            FeedbackRule::None => self.apply_pure_measure(&event.profile),
            FeedbackRule::ConditionalX => self.apply_cond_x(&event.profile),
            FeedbackRule::ConditionalSwap => self.apply_cond_swap_profile(&event.profile, event.swap_order),
        }
    }
}

/// Evolves one program exactly and records `⟨n_x(i)⟩` for `i = 0..=depth`.
pub fn evolve_program(program: &CircuitProgram, max_sites: usize) -> Result<DensitySeries> {
    if program.sites > max_sites {
        return Err(Error::TooLarge { engine: "channel", sites: program.sites, limit: max_sites });
    }
    let mut rho = DensityMatrix::from_bits(&program.initial_bits);
    let mut values = vec![rho.occupations()];
    for layer in &program.layers {
        rho.apply_scrambling(&layer.scramble, program.block_order)?;
        rho.apply_event(&layer.event)?;
        values.push(rho.occupations());
    }
    DensitySeries::exact("channel", values)
}

pub fn evolve_channel(spec: &CircuitSpec, realization: usize) -> Result<DensitySeries> {
    evolve_channel_with_limit(spec, realization, DEFAULT_CHANNEL_MAX_SITES)
}

pub fn evolve_channel_with_limit(spec: &CircuitSpec, realization: usize, max_sites: usize) -> Result<DensitySeries> {
    if spec.sites > max_sites {
        return Err(Error::TooLarge { engine: "channel", sites: spec.sites, limit: max_sites });
    }
    evolve_program(&build_program(spec, realization)?, max_sites)
}
