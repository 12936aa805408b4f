use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use fbsim_core::channel::evolve_channel;
use fbsim_core::circuit::{build_program, Architecture, CircuitSpec, InitialState};
use fbsim_core::markov::{run_markov_realization, AngleSource};
use fbsim_core::mps::{run_program_trajectory as mps_trajectory, MpsConfig};
use fbsim_core::statevector::run_program_trajectory as sv_trajectory;

fn spec(sites: usize, depth: usize) -> CircuitSpec {
    CircuitSpec::new(Architecture::CondX, sites, depth)
        .with_g(0.5 / sites as f64)
        .with_init(InitialState::CenterBlock(sites / 3))
        .with_seed(2024)
        .with_counts(1, 1)
}

fn statevector(c: &mut Criterion) {
    let mut group = c.benchmark_group("statevector");
    for sites in [10, 14, 18] {
        let s = spec(sites, 10);
        let program = build_program(&s, 0).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(sites), &program, |b, p| {
            b.iter(|| sv_trajectory(p, s.master_seed, 0, 0, 26).unwrap())
        });
    }
    group.finish();
}

fn mps(c: &mut Criterion) {
    let mut group = c.benchmark_group("mps");
    group.sample_size(10);
    for chi in [16, 64] {
        let s = spec(20, 10);
        let program = build_program(&s, 0).unwrap();
        let config = MpsConfig { chi_max: chi, ..MpsConfig::default() };
        group.bench_with_input(BenchmarkId::new("L20", chi), &program, |b, p| {
            b.iter(|| mps_trajectory(p, config, s.master_seed, 0, 0).unwrap())
        });
    }
    group.finish();
}

fn markov(c: &mut Criterion) {
    let mut group = c.benchmark_group("markov");
    group.sample_size(10);
    for sites in [50, 100] {
        let s = spec(sites, 10).with_counts(1, 2000);
        group.bench_with_input(BenchmarkId::from_parameter(sites), &s, |b, s| {
            b.iter(|| run_markov_realization(s, 0, AngleSource::Matched).unwrap())
        });
    }
    group.finish();
}

fn channel(c: &mut Criterion) {
    let mut group = c.benchmark_group("channel");
    group.sample_size(10);
    for sites in [6, 8] {
        let s = spec(sites, 5);
        group.bench_with_input(BenchmarkId::from_parameter(sites), &s, |b, s| b.iter(|| evolve_channel(s, 0).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, statevector, mps, markov, channel);
criterion_main!(benches);
