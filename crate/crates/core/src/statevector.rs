//! Dense statevector trajectory engine.

use num_complex::Complex64 as C64;

use crate::circuit::{build_program, CircuitProgram, CircuitSpec};
use crate::error::{Error, Result};
use crate::gates::{Mat2, Mat4};
use crate::trajectory::{self, TrajectoryRecord, TrajectoryState};

pub const DEFAULT_STATEVECTOR_MAX_SITES: usize = 26;

/// Amplitudes over `2^L` basis states; bit `x` of the index is site `x`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    sites: usize,
    amps: Vec<C64>,
}

impl StateVector {
    pub fn from_bits(bits: &[u8]) -> Self {
        let index = bits.iter().enumerate().fold(0usize, |acc, (x, &b)| acc | ((b as usize) << x));
        let mut amps = vec![C64::new(0.0, 0.0); 1 << bits.len()];
        amps[index] = C64::new(1.0, 0.0);
        StateVector { sites: bits.len(), amps }
    }

    pub fn from_amplitudes(amps: Vec<C64>) -> Result<Self> {
        if !amps.len().is_power_of_two() || amps.len() < 2 {
            return Err(Error::DimensionMismatch { expected: amps.len().next_power_of_two(), got: amps.len() });
        }
        Ok(StateVector { sites: amps.len().trailing_zeros() as usize, amps })
    }

    pub fn amplitudes(&self) -> &[C64] {
        &self.amps
    }

    pub fn norm(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt()
    }

    fn check_site(&self, site: usize) -> Result<()> {
        if site >= self.sites {
            return Err(Error::OutOfRange { what: "site", index: site, limit: self.sites });
        }
        Ok(())
    }
}

impl TrajectoryState for StateVector {
    fn sites(&self) -> usize {
        self.sites
    }

    fn apply_site_gate(&mut self, site: usize, gate: &Mat2) -> Result<()> {
        self.check_site(site)?;
        let bit = 1usize << site;
        for i0 in (0..self.amps.len()).filter(|i| i & bit == 0) {
            let (a, b) = (self.amps[i0], self.amps[i0 | bit]);
            self.amps[i0] = gate[0][0] * a + gate[0][1] * b;
            self.amps[i0 | bit] = gate[1][0] * a + gate[1][1] * b;
        }
        Ok(())
    }

    fn apply_bond_gate(&mut self, bond: usize, gate: &Mat4) -> Result<()> {
        if bond + 1 >= self.sites {
            return Err(Error::OutOfRange { what: "bond", index: bond, limit: self.sites - 1 });
        }
        let (lo, hi) = (1usize << bond, 1usize << (bond + 1));
        for base in (0..self.amps.len()).filter(|i| i & (lo | hi) == 0) {
            let ids = [base, base | hi, base | lo, base | lo | hi];
            let v: [C64; 4] = std::array::from_fn(|n| self.amps[ids[n]]);
            for (i, &idx) in ids.iter().enumerate() {
                self.amps[idx] = gate[i][0] * v[0] + gate[i][1] * v[1] + gate[i][2] * v[2] + gate[i][3] * v[3];
            }
        }
        Ok(())
    }

    fn prob_zero(&mut self, site: usize) -> Result<f64> {
        self.check_site(site)?;
        Ok(self
            .amps
            .iter()
            .enumerate()
            .filter(|(i, _)| i >> site & 1 == 0)
            .map(|(_, a)| a.norm_sqr())
            .sum())
    }

    fn project(&mut self, site: usize, outcome: u8, prob: f64) -> Result<()> {
        self.check_site(site)?;
        let scale = 1.0 / prob.sqrt();
        for (i, a) in self.amps.iter_mut().enumerate() {
            if (i >> site & 1) as u8 == outcome {
                *a *= scale;
            } else {
                *a = C64::new(0.0, 0.0);
            }
        }
        Ok(())
    }

    fn occupations(&mut self) -> Result<Vec<f64>> {
        let mut occ = vec![0.0; self.sites];
        for (i, a) in self.amps.iter().enumerate() {
            let w = a.norm_sqr();
            for (x, o) in occ.iter_mut().enumerate() {
                if i >> x & 1 == 0 {
                    *o += w;
                }
            }
        }
        Ok(occ)
    }
}

pub fn run_program_trajectory(
    program: &CircuitProgram,
    master_seed: u64,
    realization: usize,
    trajectory: usize,
    max_sites: usize,
) -> Result<TrajectoryRecord> {
    if program.sites > max_sites {
        return Err(Error::TooLarge { engine: "statevector", sites: program.sites, limit: max_sites });
    }
    let mut state = StateVector::from_bits(&program.initial_bits);
    trajectory::run_program(&mut state, program, master_seed, realization, trajectory, |_| {})
}

/// One trajectory of realization `realization`; rebuilds the program each call.
pub fn run_trajectory(spec: &CircuitSpec, realization: usize, trajectory: usize) -> Result<TrajectoryRecord> {
    if spec.sites > DEFAULT_STATEVECTOR_MAX_SITES {
        return Err(Error::TooLarge { engine: "statevector", sites: spec.sites, limit: DEFAULT_STATEVECTOR_MAX_SITES });
    }
    let program = build_program(spec, realization)?;
    run_program_trajectory(&program, spec.master_seed, realization, trajectory, DEFAULT_STATEVECTOR_MAX_SITES)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circuit::{Architecture, FeedbackRule, InitialState, MeasurementEvent, MeasurementProfile, RandomLayer, SwapOrder};
    use crate::gates::{self, BlockOrder};
    use crate::seed::stream_rng;
    use crate::trajectory::{apply_scrambling, measure_and_feedback, sample_and_project};
    use rand::Rng;
    use std::f64::consts::{FRAC_1_SQRT_2, PI};

    fn random_state(sites: usize, seed: u64) -> StateVector {
        let mut rng = stream_rng(seed);
        let mut amps: Vec<C64> = (0..1 << sites)
            .map(|_| C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
            .collect();
        let n = amps.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        amps.iter_mut().for_each(|a| *a /= n);
        StateVector::from_amplitudes(amps).unwrap()
    }

    /// Full `2^L × 2^L` operator of a bond gate, built entry by entry.
    fn embed_bond(sites: usize, bond: usize, g: &Mat4) -> Vec<Vec<C64>> {
        let dim = 1 << sites;
        let mask = (1 << bond) | (1 << (bond + 1));
        let local = |i: usize| 2 * (i >> bond & 1) + (i >> (bond + 1) & 1);
        (0..dim)
            .map(|r| {
                (0..dim)
                    .map(|c| if r & !mask == c & !mask { g[local(r)][local(c)] } else { C64::new(0.0, 0.0) })
                    .collect()
            })
            .collect()
    }

    #[test]
    fn layer_matches_dense_operator_product() {
        let sites = 10;
        let mut rng = stream_rng(5);
        let layer = RandomLayer::new((0..sites).map(|_| rng.random::<f64>() * 2.0).collect());
        let mut psi = random_state(sites, 9);
        let mut dense: Vec<C64> = psi.amplitudes().to_vec();
        for bond in layer.bond_order() {
            let op = embed_bond(sites, bond, &layer.block(bond, BlockOrder::RotationsFirst));
            dense = op.iter().map(|row| row.iter().zip(&dense).map(|(a, b)| a * b).sum()).collect();
        }
        apply_scrambling(&mut psi, &layer, BlockOrder::RotationsFirst).unwrap();
        let err = psi.amplitudes().iter().zip(&dense).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        assert!(err < 1e-12, "max amplitude error {err}");
        assert!((psi.norm() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn zero_angles_keep_probabilities_and_pi_flips() {
        let mut psi = StateVector::from_bits(&[0, 1, 0, 1]);
        apply_scrambling(&mut psi, &RandomLayer::uniform(4, 0.0), BlockOrder::RotationsFirst).unwrap();
        assert_eq!(psi.occupations().unwrap(), vec![1.0, 0.0, 1.0, 0.0]);
        let mut psi = StateVector::from_bits(&[0, 0]);
        apply_scrambling(&mut psi, &RandomLayer::uniform(2, PI), BlockOrder::RotationsFirst).unwrap();
        assert!((psi.amplitudes()[3].norm() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn deterministic_cond_x_branch() {
        let mut psi = StateVector::from_bits(&[0]);
        let event = MeasurementEvent {
            profile: MeasurementProfile::explicit(vec![1.0]).unwrap(),
            rule: FeedbackRule::ConditionalX,
            swap_order: SwapOrder::OddFirst,
        };
        let ev = measure_and_feedback(&mut psi, &event, &mut stream_rng(1)).unwrap();
        assert_eq!(ev[0].outcome, Some(0));
        assert!(ev[0].feedback_applied);
        assert!((psi.amplitudes()[1].norm() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn forced_swap_moves_occupation_right() {
        let mut psi = StateVector::from_bits(&[1, 0, 1, 1]);
        let event = MeasurementEvent {
            profile: MeasurementProfile::explicit(vec![0.0, 1.0, 0.0, 0.0]).unwrap(),
            rule: FeedbackRule::ConditionalSwap,
            swap_order: SwapOrder::OddFirst,
        };
        measure_and_feedback(&mut psi, &event, &mut stream_rng(2)).unwrap();
        assert_eq!(psi.occupations().unwrap(), vec![0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn born_frequencies_on_plus_state() {
        let h = C64::new(FRAC_1_SQRT_2, 0.0);
        let mut rng = stream_rng(3);
        let m = 20_000;
        let mut zeros = 0;
        for _ in 0..m {
            let mut psi = StateVector::from_amplitudes(vec![h, h]).unwrap();
            if sample_and_project(&mut psi, 0, &mut rng).unwrap() == 0 {
                zeros += 1;
                assert_eq!(psi.amplitudes()[0], C64::new(1.0, 0.0));
            }
        }
        let freq = zeros as f64 / m as f64;
        assert!((freq - 0.5).abs() < 4.0 * (0.25 / m as f64).sqrt());
    }

    /// Always returns the largest value, so every uniform draw is just below 1.
    struct MaxRng;

    impl rand::RngCore for MaxRng {
        fn next_u32(&mut self) -> u32 {
            u32::MAX
        }
        fn next_u64(&mut self) -> u64 {
            u64::MAX
        }
        fn fill_bytes(&mut self, dst: &mut [u8]) {
            dst.fill(0xff);
        }
    }

    #[test]
    fn zero_probability_branch_is_reported() {
        let p1: f64 = 1e-15;
        let mut psi =
            StateVector::from_amplitudes(vec![C64::new((1.0 - p1).sqrt(), 0.0), C64::new(p1.sqrt(), 0.0)]).unwrap();
        assert!(matches!(
            sample_and_project(&mut psi, 0, &mut MaxRng),
            Err(Error::ZeroProbabilityBranch { site: 0, .. })
        ));
    }

    #[test]
    fn trajectories_are_reproducible_and_depth_zero_is_initial() {
        let spec = CircuitSpec::new(Architecture::CondX, 6, 4).with_g(0.05).with_init(InitialState::CenterBlock(2)).with_seed(3);
        let a = run_trajectory(&spec, 1, 7).unwrap();
        let b = run_trajectory(&spec, 1, 7).unwrap();
        assert_eq!(a, b);
        for layer in &a.events {
            for e in layer {
                assert!(!e.feedback_applied || (e.measured && e.outcome == Some(0)));
            }
        }
        let spec0 = CircuitSpec { depth: 0, ..spec };
        let r = run_trajectory(&spec0, 0, 0).unwrap();
        assert_eq!(r.densities, vec![vec![0.0, 0.0, 1.0, 1.0, 0.0, 0.0]]);
    }

    #[test]
    fn gates_keep_norm() {
        let mut psi = random_state(5, 4);
        psi.apply_bond_gate(2, &gates::bond_block(0.4, 1.3, BlockOrder::CzFirst)).unwrap();
        psi.apply_site_gate(4, &gates::sqrt_x()).unwrap();
        assert!((psi.norm() - 1.0).abs() < 1e-12);
        assert!(psi.apply_bond_gate(4, &gates::swap()).is_err());
    }
}
