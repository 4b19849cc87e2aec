//! Shared fixtures for the criterion benches.

use bips_core::bips::{run_bips_pipeline, PipelineConfig, PipelineResult};
use bips_core::embed::FragmentPartition;
use bips_core::hamio::{build_extended_hubbard, build_hubbard, dimerized_pattern};
use bips_core::Integrals;

/// Half-filled dimerized Hubbard chain with `t_intra = 1`, `U = 4`.
pub fn dimer_chain(n: usize, t_inter: f64) -> Integrals {
    build_hubbard(n, &dimerized_pattern(n, 1.0, t_inter), 4.0).expect("chain")
}

/// Dimerized chain with nearest-neighbour repulsion `v_nn = 1`.
pub fn extended_chain(n: usize) -> Integrals {
    build_extended_hubbard(&dimerized_pattern(n, 1.0, 0.5), 4.0, 1.0).expect("chain")
}

pub fn equal_fragments(n: usize, size: usize) -> FragmentPartition {
    FragmentPartition::contiguous(&vec![size; n / size]).expect("partition")
}

pub fn small_config(n_state: usize) -> PipelineConfig {
    PipelineConfig { m: 64, n_state, model_sweeps: 8, cluster_sweeps: 8, weight_threshold: 0.0, ..Default::default() }
}

pub fn cluster_run(ints: &Integrals, part: &FragmentPartition, n_state: usize) -> PipelineResult {
    run_bips_pipeline(ints, part, &small_config(n_state)).expect("pipeline")
}
