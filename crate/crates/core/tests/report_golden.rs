use bips_core::analysis::{effective_hamiltonian, report, sample_bips, BipsLabel, ReportInput};
use bips_core::bips::{run_bips_pipeline, PipelineConfig};
use bips_core::embed::FragmentPartition;
use bips_core::fcioracle::fci_solve;
use bips_core::hamio::{build_hubbard, dimerized_pattern};

const GOLDEN: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/data/report_golden.txt");

fn toy_report() -> String {
    let ints = build_hubbard(4, &dimerized_pattern(4, 1.0, 0.8), 4.0).unwrap();
    let part = FragmentPartition::contiguous(&[2, 2]).unwrap();
    let cfg = PipelineConfig { n_state: 4, m_tilde: Some(8), weight_threshold: 0.0, ..Default::default() };
    let res = run_bips_pipeline(&ints, &part, &cfg).unwrap();
    let fci = fci_solve(&ints, 2, 2, 1).unwrap().energies[0];
    let sampled = sample_bips(&res.states[0], 0.05).unwrap();
    let basis: Vec<BipsLabel> = sampled.iter().map(|s| s.label.clone()).collect();
    let heff = effective_hamiltonian(&res.cmpo, &basis).unwrap();
    report(&ReportInput {
        result: &res,
        reference: Some(("FCI", fci)),
        threshold: 0.05,
        sampled: &[sampled],
        heff: Some(&heff),
    })
}

#[test]
fn toy_report_matches_golden_file() {
    let text = toy_report();
    if std::env::var_os("BIPS_WRITE_GOLDEN").is_some() {
        std::fs::write(GOLDEN, &text).unwrap();
    }
    let golden = std::fs::read_to_string(GOLDEN).expect("golden report missing");
    assert_eq!(text, golden);
}
