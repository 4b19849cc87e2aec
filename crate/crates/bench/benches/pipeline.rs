use std::hint::black_box;

use bips_bench::{cluster_run, dimer_chain, equal_fragments, extended_chain, small_config};
use bips_core::analysis::sample_bips;
use bips_core::bips::{build_cluster_mpo, run_bips_pipeline, CmpoMethod};
use bips_core::hamio::build_hamiltonian_mpo;
use bips_core::mpsmpo::{dmrg_sweep, SweepSchedule};
use bips_core::{Direction, Index, Mps, QNum};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::SeedableRng;

fn dmrg(c: &mut Criterion) {
    let ints = dimer_chain(8, 0.5);
    let mpo = build_hamiltonian_mpo(&ints, &(0..8).collect::<Vec<_>>()).unwrap();
    let phys = vec![Index::spatial_site(Direction::In); 8];
    let mut g = c.benchmark_group("dmrg_8_sites");
    g.sample_size(10);
    for m in [16, 64] {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let init = Mps::random(&phys, QNum::new(8, 0), 16, &mut rng).unwrap();
        let sched = SweepSchedule::standard(m, 8);
        g.bench_with_input(BenchmarkId::from_parameter(m), &m, |b, _| {
            b.iter(|| dmrg_sweep(black_box(&init), &mpo, &sched, 1).unwrap())
        });
    }
    g.finish();
}

fn pipeline(c: &mut Criterion) {
    let ints = dimer_chain(8, 0.3);
    let part = equal_fragments(8, 2);
    let mut g = c.benchmark_group("pipeline_8_sites");
    g.sample_size(10);
    for n_state in [4, 8] {
        let cfg = small_config(n_state);
        g.bench_with_input(BenchmarkId::from_parameter(n_state), &n_state, |b, _| {
            b.iter(|| run_bips_pipeline(black_box(&ints), &part, &cfg).unwrap())
        });
    }
    g.finish();
}

fn cluster_mpo(c: &mut Criterion) {
    let ints = extended_chain(16);
    let part = equal_fragments(16, 4);
    let res = cluster_run(&ints, &part, 4);
    let order = part.order();
    let parent = build_hamiltonian_mpo(&ints, &order).unwrap();
    let mut g = c.benchmark_group("cluster_mpo_16_orbitals");
    for (name, method) in [("direct", CmpoMethod::Direct), ("deferred", CmpoMethod::DeferredIntegrals)] {
        g.bench_function(name, |b| b.iter(|| build_cluster_mpo(black_box(&parent), &res.bases, &order, method).unwrap()));
    }
    g.finish();
}

fn sampling(c: &mut Criterion) {
    let res = cluster_run(&dimer_chain(8, 0.5), &equal_fragments(8, 2), 8);
    let mut g = c.benchmark_group("sample_bips");
    for t in [0.1, 0.01, 0.001] {
        g.bench_with_input(BenchmarkId::from_parameter(t), &t, |b, &t| {
            b.iter(|| sample_bips(black_box(&res.states[0]), t).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, dmrg, pipeline, cluster_mpo, sampling);
criterion_main!(benches);
