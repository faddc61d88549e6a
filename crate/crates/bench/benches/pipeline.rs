use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;
use kinmix_bench::fixture;
use kinmix_core::phantom::{default_input, NORMAL_PARAMS};
use kinmix_core::potts::{estimate_partition, gibbs_sweep, McConfig, NeighborGraph};
use kinmix_core::scf::{fit_image, lm_fit_voxel, FitConfig};
use kinmix_core::skms::{skms_fit_model, SkmsConfig};
use kinmix_core::smm::{initialize, Chain, McmcConfig, Priors, ProposalScales, SmmModel, DEFAULT_PROPOSAL_MULTIPLIER};
use kinmix_core::{frame_averaged_tac, FrameScheme};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn kinetics(c: &mut Criterion) {
    let input = default_input();
    let frames = FrameScheme::cardiac_default();
    c.bench_function("frame_averaged_tac/cardiac", |b| {
        b.iter(|| frame_averaged_tac(black_box(NORMAL_PARAMS), &input, &frames).unwrap())
    });
}

fn curve_fitting(c: &mut Criterion) {
    let f = fixture(0);
    let cfg = FitConfig::default();
    let voxel = f.noisy.dims().index(8, 10);
    c.bench_function("scf/voxel", |b| b.iter(|| lm_fit_voxel(black_box(f.noisy.tac(voxel)), &f.tac, &cfg).unwrap()));
    let mut group = c.benchmark_group("image");
    group.sample_size(10);
    group.bench_function("scf/32x32", |b| b.iter(|| fit_image(&f.noisy, &f.tac, &cfg)));
    let skms = SkmsConfig { g: 17, beta: 0.2, ..SkmsConfig::default() };
    group.bench_function("skms/32x32_g17", |b| b.iter(|| skms_fit_model(&f.noisy, &f.tac, &skms).unwrap()));
    group.finish();
}

fn potts(c: &mut Criterion) {
    let graph = NeighborGraph::new(kinmix_core::Dims::new(32, 32));
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut z = vec![0usize; graph.len()];
    c.bench_function("potts/gibbs_sweep_32x32_g3", |b| b.iter(|| gibbs_sweep(&mut z, 3, 0.5, &graph, &mut rng)));
    let small = NeighborGraph::new(kinmix_core::Dims::new(8, 8));
    let mut group = c.benchmark_group("partition");
    group.sample_size(10);
    group.bench_function("tdi_8x8_g3_step0.05", |b| {
        b.iter(|| estimate_partition(3, &small, 1.0, 0.05, McConfig { burn_in: 50, sweeps: 200, seed: 0 }).unwrap())
    });
    group.finish();
}

fn mcmc(c: &mut Criterion) {
    let f = fixture(0);
    let graph = NeighborGraph::new(f.noisy.dims());
    let table = estimate_partition(3, &graph, 1.0, 0.05, McConfig { burn_in: 20, sweeps: 50, seed: 0 }).unwrap();
    let priors = Priors::simulation();
    let scales = ProposalScales::simulation().scaled(DEFAULT_PROPOSAL_MULTIPLIER);
    let state = initialize(&f.noisy, &f.tac, &priors, &McmcConfig::map_only(3, 0)).unwrap();
    let model = SmmModel::new(&f.noisy, &f.tac, &graph, &table, &priors).unwrap();
    let mut chain = Chain::new(model, state).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    c.bench_function("smm/sweep_32x32_g3", |b| b.iter(|| chain.sweep(&scales, true, &mut rng)));
}

criterion_group!(benches, kinetics, curve_fitting, potts, mcmc);
criterion_main!(benches);
