use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use hybrid_observer::design::{compute_rho, design_gain, RateSpec};
use hybrid_observer::matrix::mat_exp;
use hybrid_observer::plant::decompose_all;
use hybrid_observer::reference::*;
use hybrid_observer::{run_simulation, Averaging, GraphSchedule, Mat, Mode, SimSetup, TimingConfig};

fn matrix_exponential(c: &mut Criterion) {
    let mut group = c.benchmark_group("mat_exp");
    for n in [4, 8, 12] {
        let a = random_modal_plant(n as u64, 1, n).a().clone();
        group.bench_with_input(BenchmarkId::from_parameter(n), &a, |b, a| b.iter(|| mat_exp(black_box(a), 0.37).unwrap()));
    }
    group.finish();
}

fn rho(c: &mut Criterion) {
    let mut group = c.benchmark_group("compute_rho");
    let reference = decompose_all(&four_channel_plant(), &[None, None, None, None]).unwrap();
    let ps: Vec<Mat> = reference.iter().map(|d| d.p.clone()).collect();
    group.bench_function("reference_m4", |b| b.iter(|| compute_rho(black_box(&ps)).unwrap()));
    let plant = random_modal_plant(11, 3, 6);
    let ps: Vec<Mat> = decompose_all(&plant, &[None, None, None]).unwrap().into_iter().map(|d| d.p).collect();
    group.bench_function("random_m3_n6", |b| b.iter(|| compute_rho(black_box(&ps)).unwrap()));
    group.finish();
}

fn simulation(c: &mut Criterion) {
    let plant = four_channel_plant();
    let overrides: Vec<_> = (0..4).map(|i| Some(reference_l(i))).collect();
    let decs = decompose_all(&plant, &overrides).unwrap();
    let rates = RateSpec::new(2.0, 3.0).unwrap();
    let gains: Vec<Mat> = decs.iter().map(|d| design_gain(d, rates).unwrap().0).collect();
    let horizon = 3.0;
    let schedule = GraphSchedule::alternating(&[graph_a(), graph_b()], 1.0, horizon + 2.0).unwrap();
    let (w0, xhat0) = (reference_w0(), reference_xhat0());

    let mut group = c.benchmark_group("simulation");
    group.sample_size(10);
    for q in [1_000usize, 100_000] {
        let timing = TimingConfig::synchronous(4, 1.0, q);
        group.bench_with_input(BenchmarkId::new("sync_rounds", q), &timing, |b, timing| {
            b.iter(|| {
                run_simulation(&SimSetup {
                    plant: &plant,
                    decs: &decs,
                    gains: &gains,
                    schedule: &schedule,
                    timing,
                    mode: Mode::Sync,
                    averaging: Averaging::Straight,
                    events: &[],
                    lost_agents: Default::default(),
                    w0: &w0,
                    xhat0: &xhat0,
                    horizon,
                    sample_step: None,
                    log_rounds: 0,
                })
                .unwrap()
            })
        });
    }
    group.finish();
}

criterion_group!(benches, matrix_exponential, rho, simulation);
criterion_main!(benches);
