use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::embed::FragmentPartition;
use crate::fcioracle::fci_solve;
use crate::hamio::{build_hamiltonian_mpo, build_hubbard, dimerized_pattern, random_integrals, MpoChain};
use crate::mpsmpo::expectation;
use crate::symtensor::Direction;

fn phys(n: usize) -> Vec<Index> {
    vec![Index::spatial_site(Direction::In); n]
}

/// Bases from random states on fragment-plus-padding chains.
fn random_bases(sizes: &[usize], n_state: usize, seed: u64) -> Vec<LocalBasisSet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut start = 0;
    sizes
        .iter()
        .enumerate()
        .map(|(f, &k)| {
            let m = Mps::random(&phys(k + 2), QNum::new((k + 2) as i32, ((k + 2) % 2) as i32), 32, &mut rng).unwrap();
            let b = extract_local_basis(&[m], k, n_state, 0.0, f, (start..start + k).collect()).unwrap();
            start += k;
            b
        })
        .collect()
}

fn cluster_phys(c: &ClusterMpo) -> Vec<Index> {
    (0..c.len()).map(|i| c.phys_index(i).clone()).collect()
}

#[test]
fn identity_parent_gives_identity_cluster() {
    let bases = random_bases(&[2, 2], 5, 1);
    let parent = MpoChain::identity(&phys(4), 1.0);
    let c = build_cluster_mpo(&parent, &bases, &[0, 1, 2, 3], CmpoMethod::Direct).unwrap();
    for (w, b) in c.tensors.iter().zip(&bases) {
        assert_eq!(w.index(0).dim(), 1);
        let d = w.to_dense();
        let n = b.n_state;
        for i in 0..n {
            for j in 0..n {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((d[i * n + j] - want).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn methods_agree_on_random_integrals() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let ints = random_integrals(6, 6, 0, &mut rng);
    let parent = build_hamiltonian_mpo(&ints, &[0, 1, 2, 3, 4, 5]).unwrap();
    let bases = random_bases(&[2, 3, 1], 6, 9);
    let order: Vec<usize> = (0..6).collect();
    let a = build_cluster_mpo(&parent, &bases, &order, CmpoMethod::Direct).unwrap();
    let b = build_cluster_mpo(&parent, &bases, &order, CmpoMethod::DeferredIntegrals).unwrap();
    assert!(cmpo_max_diff(&a, &b).unwrap() < 1e-10);
}

#[test]
fn cluster_elements_match_orbital_expansion() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let ints = random_integrals(6, 6, 0, &mut rng);
    let order = [0, 1, 2, 3, 4, 5];
    let parent = build_hamiltonian_mpo(&ints, &order).unwrap();
    let bases = random_bases(&[2, 2, 2], 5, 11);
    let c = build_cluster_mpo(&parent, &bases, &order, CmpoMethod::DeferredIntegrals).unwrap();
    let cp = cluster_phys(&c);
    let target = QNum::new(6, 0);
    let mut prods = Vec::new();
    for a in 0..5 {
        for b in 0..5 {
            for d in 0..5 {
                let s = [a, b, d];
                let q = s.iter().zip(&cp).fold(QNum::ZERO, |q, (&x, p)| q + p.qnum(p.locate(x).unwrap().0));
                if q == target {
                    prods.push(s);
                }
            }
        }
    }
    assert!(prods.len() >= 2);
    for x in prods.iter().take(6) {
        for y in prods.iter().take(6) {
            let cb = Mps::product(&cp, x).unwrap();
            let ck = Mps::product(&cp, y).unwrap();
            let e1 = expectation(&cb, &c, &ck).unwrap();
            let ob = bips_product_mps(&bases, x).unwrap();
            let ok = bips_product_mps(&bases, y).unwrap();
            let e2 = expectation(&ob, &parent, &ok).unwrap();
            assert!((e1 - e2).abs() < 1e-9, "{e1} {e2}");
        }
    }
    let d = product_diagonal(&c, &prods[0]);
    let cb = Mps::product(&cp, &prods[0]).unwrap();
    assert!((d - expectation(&cb, &c, &cb).unwrap()).abs() < 1e-10);
}

#[test]
fn whole_system_fragment_gives_exact_spectrum() {
    let ints = build_hubbard(4, &[1.0, 0.7, 1.0], 4.0).unwrap();
    let cfg = PipelineConfig { n_state: 256, m: 64, weight_threshold: 0.0, ..Default::default() };
    let part = FragmentPartition::contiguous(&[4]).unwrap();
    let res = run_bips_pipeline(&ints, &part, &cfg).unwrap();
    let fci = fci_solve(&ints, 2, 2, 1).unwrap().energies[0];
    assert!((res.energies[0] - fci).abs() < 1e-9);
    assert!((res.fragments[0].model_energies[0] - fci).abs() < 1e-9);
    // cluster MPO is the full Hamiltonian in the rotated basis
    let h = DMatrix::from_row_slice(256, 256, &res.cmpo.to_dense());
    let (vals, _) = crate::symtensor::dense_symmetric_eigen(&h);
    assert!(vals[0] <= fci + 1e-9);
}

#[test]
fn full_local_bases_reproduce_fci() {
    let ints = build_hubbard(6, &dimerized_pattern(6, 1.0, 0.4), 4.0).unwrap();
    let cfg = PipelineConfig { n_state: 16, m_tilde: Some(64), weight_threshold: 0.0, ..Default::default() };
    let part = FragmentPartition::contiguous(&[2, 2, 2]).unwrap();
    let res = run_bips_pipeline(&ints, &part, &cfg).unwrap();
    let fci = fci_solve(&ints, 3, 3, 1).unwrap().energies[0];
    assert!((res.energies[0] - fci).abs() < 1e-8, "{} {}", res.energies[0], fci);
    for b in &res.bases {
        assert!((b.gram().unwrap() - DMatrix::identity(16, 16)).amax() < 1e-10);
    }
    assert!(res.to_text().contains("[results]"));
}

#[test]
fn truncated_bases_are_variational() {
    let ints = build_hubbard(6, &dimerized_pattern(6, 1.0, 0.2), 4.0).unwrap();
    let part = FragmentPartition::contiguous(&[2, 2, 2]).unwrap();
    let fci = fci_solve(&ints, 3, 3, 1).unwrap().energies[0];
    let mut last = f64::INFINITY;
    for n in [1, 4, 16] {
        let cfg = PipelineConfig { n_state: n, m_tilde: Some(64), weight_threshold: 0.0, ..Default::default() };
        let e = run_bips_pipeline(&ints, &part, &cfg).unwrap().energies[0];
        assert!(e >= fci - 1e-8);
        assert!(e <= last + 1e-8);
        last = e;
    }
}

#[test]
fn methods_agree_in_pipeline() {
    let ints = build_hubbard(8, &dimerized_pattern(8, 1.0, 0.3), 4.0).unwrap();
    let part = FragmentPartition::contiguous(&[2, 2, 2, 2]).unwrap();
    let cfg = PipelineConfig { n_state: 4, m: 32, cluster_sweeps: 2, ..Default::default() };
    let res = run_bips_pipeline(&ints, &part, &cfg).unwrap();
    let order = part.order();
    let parent = build_hamiltonian_mpo(&ints, &order).unwrap();
    let a = build_cluster_mpo(&parent, &res.bases, &order, CmpoMethod::Direct).unwrap();
    assert!(cmpo_max_diff(&a, &res.cmpo).unwrap() < 1e-10);
}

#[test]
fn order_and_sector_errors() {
    let bases = random_bases(&[2, 2], 4, 2);
    let parent = MpoChain::identity(&phys(4), 1.0);
    assert!(matches!(
        build_cluster_mpo(&parent, &bases, &[2, 3, 0, 1], CmpoMethod::Direct),
        Err(BipsError::OrderMismatch(_))
    ));
    let c = build_cluster_mpo(&parent, &bases, &[0, 1, 2, 3], CmpoMethod::Direct).unwrap();
    let err = cluster_dmrg(&c, &SweepSchedule::standard(4, 2), 1, ClusterInit::RandomQn, QNum::new(40, 0), 1);
    match err {
        Err(BipsError::UnreachableSector { nearest, .. }) => assert!(!nearest.is_empty()),
        other => panic!("{other:?}"),
    }
}

#[test]
fn product_initialization_reaches_same_energy() {
    let ints = build_hubbard(6, &dimerized_pattern(6, 1.0, 0.3), 4.0).unwrap();
    let part = FragmentPartition::contiguous(&[2, 2, 2]).unwrap();
    let base = PipelineConfig { n_state: 4, m_tilde: Some(16), ..Default::default() };
    let a = run_bips_pipeline(&ints, &part, &base).unwrap().energies[0];
    let cfg = PipelineConfig { init: ClusterInit::LowEnergyProducts, ..base };
    let b = run_bips_pipeline(&ints, &part, &cfg).unwrap().energies[0];
    assert!((a - b).abs() < 1e-7, "{a} {b}");
}

#[test]
fn product_mps_is_normalized() {
    let bases = random_bases(&[2, 1, 2], 3, 4);
    let m = bips_product_mps(&bases, &[0, 1, 2]).unwrap();
    assert!((m.norm().unwrap() - 1.0).abs() < 1e-10);
}
