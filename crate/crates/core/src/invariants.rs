//! Cross-module invariants on random inputs, and the stored channel fixtures.

use std::fs::File;
use std::path::Path;

use proptest::prelude::*;

use crate::channel::{evolve_channel, evolve_program, DensityMatrix};
use crate::circuit::{
    build_program, compile_swap_native, native_unitary, Architecture, CircuitSpec, FeedbackRule, InitialState,
    MeasurementProfile, SelectionMode, SwapOrder,
};
use crate::continuum::{
    fit_decay_diffusion, simulate_decay_diffusion, simulate_drift_diffusion, DecayDiffusion, DriftDiffusion,
    FitOptions, TimeGrid,
};
use crate::csvio::read_densities;
use crate::experiment::fixture_specs;
use crate::gates::{distance_up_to_phase, swap};
use crate::markov::{transition_matrix, ExactDistribution};
use crate::mps::{self, MpsConfig, MpsState};
use crate::observables::{center_of_mass, polarization};
use crate::statevector::{self, StateVector};
use crate::trajectory::run_program;

fn arch() -> impl Strategy<Value = Architecture> {
    prop_oneof![
        Just(Architecture::Unitary),
        Just(Architecture::PureMeasure),
        Just(Architecture::CondX),
        Just(Architecture::CondSwap),
    ]
}

/// Small random spec with a valid gradient and a non-empty initial block.
fn small_spec(max_sites: usize) -> impl Strategy<Value = CircuitSpec> {
    (arch(), 3..=max_sites, 1usize..5, 0.0f64..0.99, 0.0f64..=1.0, any::<u64>(), any::<bool>()).prop_map(
        |(a, sites, depth, gl, p, seed, frozen)| {
            let mut spec = CircuitSpec::new(a, sites, depth)
                .with_g(gl / sites as f64)
                .with_p_swap(p)
                .with_init(InitialState::CenterBlock(sites / 2))
                .with_seed(seed);
            if frozen {
                spec.selection = SelectionMode::PerRealization;
            }
            spec
        },
    )
}

fn occupations(bits: &[u8]) -> Vec<f64> {
    bits.iter().map(|&b| if b == 0 { 1.0 } else { 0.0 }).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn gradient_profile_peaks_at_the_left_edge(sites in 2usize..200, gl in 0.0f64..0.999) {
        let p = MeasurementProfile::linear_gradient(sites, gl / sites as f64).unwrap();
        prop_assert!(p.probs[0] < 1.0);
        prop_assert!(p.probs.iter().all(|&f| f <= p.probs[0]));
        if gl > 0.0 {
            prop_assert!(p.probs.windows(2).all(|w| w[1] < w[0]));
        }
    }

    #[test]
    fn programs_are_pure_functions(spec in small_spec(12), r in 0usize..50) {
        prop_assert_eq!(build_program(&spec, r).unwrap(), build_program(&spec, r).unwrap());
    }

    #[test]
    fn swap_sublayers_partition_all_bonds(sites in 2usize..40, even_first in any::<bool>()) {
        let order = if even_first { SwapOrder::EvenFirst } else { SwapOrder::OddFirst };
        let spec = CircuitSpec::new(Architecture::CondSwap, sites, 1).with_p_swap(0.5).with_init(InitialState::CenterBlock(1));
        let spec = CircuitSpec { swap_order: order, ..spec };
        let bonds = build_program(&spec, 0).unwrap().layers[0].event.sweep_order();
        let first_parity = if even_first { 0 } else { 1 };
        let split = bonds.iter().position(|b| b % 2 != first_parity).unwrap_or(bonds.len());
        prop_assert!(bonds[..split].iter().all(|b| b % 2 == first_parity));
        prop_assert!(bonds[split..].iter().all(|b| b % 2 != first_parity));
        let mut sorted = bonds.clone();
        sorted.sort_unstable();
        prop_assert_eq!(sorted, (0..sites - 1).collect::<Vec<_>>());
    }

    #[test]
    fn native_swap_matches_swap(sites in 2usize..30, pick in any::<prop::sample::Index>()) {
        let bond = pick.index(sites - 1);
        let seq = compile_swap_native(bond, sites).unwrap();
        prop_assert!(distance_up_to_phase(&native_unitary(bond, &seq), &swap()) < 1e-12);
    }

    #[test]
    fn channel_keeps_trace_and_hermiticity(spec in small_spec(6), r in 0usize..8) {
        let program = build_program(&spec, r).unwrap();
        let mut rho = DensityMatrix::from_bits(&program.initial_bits);
        for layer in &program.layers {
            rho.apply_scrambling(&layer.scramble, program.block_order).unwrap();
            rho.apply_event(&layer.event).unwrap();
            prop_assert!((rho.trace().re - 1.0).abs() < 1e-12 && rho.trace().im.abs() < 1e-12);
            prop_assert!(rho.hermiticity_error() < 1e-12);
            prop_assert!(rho.min_eigenvalue() > -1e-10);
        }
    }

    #[test]
    fn measurement_events_follow_their_occupation_laws(spec in small_spec(6), r in 0usize..8) {
        let program = build_program(&spec, r).unwrap();
        let mut rho = DensityMatrix::from_bits(&program.initial_bits);
        for layer in &program.layers {
            rho.apply_scrambling(&layer.scramble, program.block_order).unwrap();
            let before = rho.occupations();
            rho.apply_event(&layer.event).unwrap();
            let after = rho.occupations();
            match layer.event.rule {
                FeedbackRule::None => {
                    for (x, y) in before.iter().zip(&after) {
                        prop_assert!((x - y).abs() < 1e-12);
                    }
                }
                FeedbackRule::ConditionalX => {
                    for ((x, y), f) in before.iter().zip(&after).zip(&layer.event.profile.probs) {
                        prop_assert!((y - (1.0 - f) * x).abs() < 1e-12);
                    }
                }
                FeedbackRule::ConditionalSwap => {
                    let total = |v: &[f64]| v.iter().sum::<f64>();
                    prop_assert!((total(&before) - total(&after)).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn pure_measurement_matches_the_unitary_circuit_for_one_layer(spec in small_spec(6), r in 0usize..8) {
        let pure = CircuitSpec { architecture: Architecture::PureMeasure, depth: 1, ..spec.clone() };
        let unitary = CircuitSpec { architecture: Architecture::Unitary, depth: 1, ..spec };
        let a = evolve_program(&build_program(&pure, r).unwrap(), 12).unwrap();
        let b = evolve_program(&build_program(&unitary, r).unwrap(), 12).unwrap();
        for (x, y) in a.values.iter().flatten().zip(b.values.iter().flatten()) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn statevector_stays_normalized_and_feedback_follows_outcome_zero(spec in small_spec(8), r in 0usize..4, t in 0usize..100) {
        let program = build_program(&spec, r).unwrap();
        let mut state = StateVector::from_bits(&program.initial_bits);
        let mut norms = Vec::new();
        let rec = run_program(&mut state, &program, spec.master_seed, r, t, |s| norms.push(s.norm())).unwrap();
        prop_assert!(norms.iter().all(|n| (n - 1.0).abs() < 1e-10));
        let feedback = program.layers[0].event.rule != FeedbackRule::None;
        for e in rec.events.iter().flatten() {
            prop_assert_eq!(e.outcome.is_some(), e.measured);
            prop_assert_eq!(e.feedback_applied, feedback && e.outcome == Some(0));
        }
    }

    #[test]
    fn mps_matches_statevector_at_full_bond_dimension(spec in small_spec(8), r in 0usize..4, t in 0usize..100) {
        let program = build_program(&spec, r).unwrap();
        let full = MpsConfig { chi_max: 1 << (spec.sites / 2), trunc_tol: 0.0 };
        let a = statevector::run_program_trajectory(&program, spec.master_seed, r, t, 26).unwrap();
        let b = mps::run_program_trajectory(&program, full, spec.master_seed, r, t).unwrap();
        prop_assert_eq!(&a.events, &b.events);
        for (x, y) in a.densities.iter().flatten().zip(b.densities.iter().flatten()) {
            prop_assert!((x - y).abs() < 1e-10);
        }
        let mut state = MpsState::from_bits(&program.initial_bits, MpsConfig::default());
        let mut norms = Vec::new();
        run_program(&mut state, &program, spec.master_seed, r, t, |s| norms.push(s.norm_sqr())).unwrap();
        prop_assert!(norms.iter().all(|n| (n - 1.0).abs() < 1e-8));
    }

    #[test]
    fn markov_kernels_conserve_probability(spec in small_spec(8), r in 0usize..4) {
        let program = build_program(&spec, r).unwrap();
        let mut dist = ExactDistribution::from_bits(&program.initial_bits);
        for layer in &program.layers {
            dist.scramble(&layer.scramble, program.block_order).unwrap();
            prop_assert!((dist.total() - 1.0).abs() < 1e-12);
            dist.apply_event(&layer.event).unwrap();
            prop_assert!((dist.total() - 1.0).abs() < 1e-12);
            prop_assert!(dist.probs().iter().all(|&p| p >= -1e-15));
        }
    }

    #[test]
    fn transition_rows_sum_to_one(a in 0.0f64..7.0, b in 0.0f64..7.0) {
        prop_assert!(transition_matrix(a, b).max_row_sum_error() < 1e-12);
    }

    #[test]
    fn scalar_observables_stay_in_range(d in prop::collection::vec(0.0f64..=1.0, 2..40)) {
        prop_assume!(d.iter().sum::<f64>() > 1e-6);
        let l = d.len() as f64;
        let c = center_of_mass(&d).unwrap();
        prop_assert!((-1e-12..=l - 1.0 + 1e-12).contains(&c));
        prop_assert!((-1.0..=1.0).contains(&polarization(&d).unwrap()));
    }

    #[test]
    fn center_of_mass_translates(d in prop::collection::vec(0.0f64..=1.0, 2..20), pad in 0usize..10, k in 0usize..10) {
        prop_assume!(d.iter().sum::<f64>() > 1e-6);
        let mut base = vec![0.0; pad];
        base.extend(&d);
        base.extend(vec![0.0; k]);
        let mut shifted = vec![0.0; pad + k];
        shifted.extend(&d);
        let delta = center_of_mass(&shifted).unwrap() - center_of_mass(&base).unwrap();
        prop_assert!((delta - k as f64).abs() < 1e-9);
    }

    #[test]
    fn mirror_flips_polarization(d in prop::collection::vec(0.0f64..=1.0, 2..40)) {
        prop_assume!(d.iter().sum::<f64>() > 1e-6);
        let mirrored: Vec<f64> = d.iter().rev().cloned().collect();
        let l = d.len() as f64;
        prop_assert!((polarization(&mirrored).unwrap() + polarization(&d).unwrap()).abs() < 1e-12);
        prop_assert!((center_of_mass(&mirrored).unwrap() - (l - 1.0 - center_of_mass(&d).unwrap())).abs() < 1e-9);
    }

    #[test]
    fn lossless_solvers_conserve_mass(bits in prop::collection::vec(0u8..=1, 4..30), d in 0.0f64..3.0, layers in 1usize..8) {
        let n0 = occupations(&bits);
        prop_assume!(n0.iter().sum::<f64>() > 0.0);
        let mass: f64 = n0.iter().sum();
        let model = DecayDiffusion { gamma: 0.0, d };
        let sub = ((0.1 / model.max_stable_dt(n0.len())).ceil() as usize).max(1);
        let frames = simulate_decay_diffusion(model, &n0, layers, TimeGrid { dt_layer: 0.1, substeps: sub }).unwrap();
        prop_assert!(frames.iter().all(|f| (f.iter().sum::<f64>() - mass).abs() < 1e-8));
        let drift = DriftDiffusion::new(0.0, vec![d, 0.0, d / 4.0]).unwrap();
        let sub = ((1.0 / drift.max_stable_dt(1.0)).ceil() as usize).max(1);
        let frames = simulate_drift_diffusion(&drift, &n0, layers, 1.0, TimeGrid { dt_layer: 1.0, substeps: sub }).unwrap();
        prop_assert!(frames.iter().all(|f| (f.iter().sum::<f64>() - mass).abs() < 1e-8));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn fits_never_end_above_the_initial_residual(gamma in 0.0f64..2.0, d in 0.0f64..0.02, noise in any::<u64>()) {
        let n0 = occupations(&[1, 1, 1, 0, 0, 0, 1, 1, 1, 1, 1, 1]);
        let time = TimeGrid { dt_layer: 0.5, substeps: 200 };
        let mut data = simulate_decay_diffusion(DecayDiffusion { gamma, d }, &n0, 6, time).unwrap();
        // deterministic perturbation so the model is not exactly realizable
        let mut x = noise | 1;
        for v in data.iter_mut().flatten() {
            x ^= x << 13;
            x ^= x >> 7;
            x ^= x << 17;
            *v += 1e-3 * ((x >> 11) as f64 / (1u64 << 53) as f64);
        }
        let fit = fit_decay_diffusion(&data, 0.5, &FitOptions::default()).unwrap();
        prop_assert!(fit.residual_norm <= fit.initial_residual_norm);
    }
}

#[test]
fn stored_channel_fixtures_reproduce() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures");
    for (name, spec) in fixture_specs() {
        let stored = read_densities(File::open(dir.join(name)).unwrap()).unwrap();
        assert_eq!(stored.len(), 1, "{name}");
        let fresh = evolve_channel(&spec, 0).unwrap();
        let old = &stored[0].series;
        assert_eq!((old.sites, old.depth), (fresh.sites, fresh.depth), "{name}");
        for (a, b) in old.values.iter().flatten().zip(fresh.values.iter().flatten()) {
            assert!((a - b).abs() <= 1e-12, "{name}: {a} vs {b}");
        }
    }
}

#[test]
fn fixture_profiles_start_from_the_center_block() {
    for (name, spec) in fixture_specs() {
        let s = evolve_channel(&spec, 0).unwrap();
        assert_eq!(s.values[0], vec![0.0, 0.0, 1.0, 1.0, 0.0, 0.0], "{name}");
    }
}
