use std::fmt::Write as _;
use std::io::BufReader;

use bips_core::analysis::{self, effective_hamiltonian, sample_bips, AnalysisError, BipsLabel, ReportInput};
use bips_core::bips::{run_bips_pipeline, BipsError, PipelineConfig, PipelineResult};
use bips_core::embed::{EmbedError, FragmentPartition};
use bips_core::fcioracle::{fci_solve, FciError};
use bips_core::hamio::{
    build_extended_hubbard, build_hamiltonian_mpo, build_hubbard, dimerized_pattern, parse_fcidump,
    restricted_hartree_fock,
};
use bips_core::mpsmpo::{dmrg_sweep, SweepSchedule};
use bips_core::{Direction, HamError, Index, Integrals, Mps, MpsError, QNum};
use rand::SeedableRng;
use thiserror::Error;

use crate::config::{ConfigError, Fragments, Reference, RunConfig, Source};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Io(String),
    #[error(transparent)]
    Ham(#[from] HamError),
    #[error(transparent)]
    Fci(#[from] FciError),
    #[error(transparent)]
    Dmrg(#[from] MpsError),
    #[error(transparent)]
    Pipeline(#[from] BipsError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
}

impl RunError {
    pub fn class(&self) -> &'static str {
        match self {
            RunError::Config(_) | RunError::Usage(_) => "config",
            RunError::Input(_) => "input",
            RunError::Io(_) => "io",
            RunError::Ham(_) => "hamiltonian",
            RunError::Fci(_) => "fci",
            RunError::Dmrg(_) => "dmrg",
            RunError::Pipeline(_) => "pipeline",
            RunError::Analysis(_) => "analysis",
        }
    }

    /// 2 for anything wrong with the request itself, 1 for failed runs.
    pub fn exit_code(&self) -> u8 {
        match self {
            RunError::Config(_) | RunError::Usage(_) | RunError::Input(_) => 2,
            _ => 1,
        }
    }
}

type Result<T> = std::result::Result<T, RunError>;

/// Human-readable body plus `key = value` results.
#[derive(Default)]
pub struct Output {
    pub body: String,
    pub results: Vec<(String, String)>,
    pub extra_files: Vec<(String, String)>,
}

impl Output {
    fn put(&mut self, k: impl Into<String>, v: impl ToString) {
        self.results.push((k.into(), v.to_string()));
    }

    pub fn results_text(&self) -> String {
        self.results.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn text(&self, cfg: &RunConfig) -> String {
        let mut s = self.body.clone();
        if !s.ends_with('\n') {
            s.push('\n');
        }
        s.push_str("\n[config]\n");
        s.push_str(&cfg.to_text());
        s.push_str("\n[results]\n");
        s.push_str(&self.results_text());
        s
    }
}

fn e12(x: f64) -> String {
    format!("{x:.12e}")
}

fn hubbard(sites: usize, t_intra: f64, t_inter: f64, u: f64, v_nn: f64) -> Result<Integrals> {
    let pattern = dimerized_pattern(sites, t_intra, t_inter);
    Ok(if v_nn == 0.0 { build_hubbard(sites, &pattern, u)? } else { build_extended_hubbard(&pattern, u, v_nn)? })
}

fn with_target(cfg: &RunConfig, ints: Integrals) -> Result<Integrals> {
    if cfg.n_elec.is_none() && cfg.two_sz.is_none() {
        return Ok(ints);
    }
    let n = cfg.n_elec.unwrap_or(ints.n_elec);
    let sz = cfg.two_sz.unwrap_or((n % 2) as i32);
    ints.with_electrons(n, sz).map_err(|e| RunError::Usage(format!("target sector: {e}")))
}

pub fn integrals(cfg: &RunConfig) -> Result<Integrals> {
    let ints = match &cfg.source {
        Source::Fcidump(p) => {
            let f = std::fs::File::open(p).map_err(|e| RunError::Input(format!("{}: {e}", p.display())))?;
            parse_fcidump(BufReader::new(f)).map_err(|e| RunError::Input(format!("{}: {e}", p.display())))?
        }
        &Source::Hubbard { sites, t_intra, t_inter, u, v_nn } => hubbard(sites, t_intra, t_inter, u, v_nn)?,
    };
    with_target(cfg, ints)
}

fn partition(cfg: &RunConfig, n_orb: usize) -> Result<FragmentPartition> {
    let bad = |e: EmbedError| RunError::Input(format!("fragments: {e}"));
    let part = match &cfg.fragments {
        Fragments::Sizes(s) => FragmentPartition::contiguous(s).map_err(bad)?,
        Fragments::File(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| RunError::Input(format!("{}: {e}", p.display())))?;
            FragmentPartition::parse(&text, n_orb).map_err(bad)?
        }
        Fragments::Unset => return Err(RunError::Usage("this command needs `fragments` or `fragment_sizes`".into())),
    };
    if part.n_orb() != n_orb {
        return Err(RunError::Input(format!("fragments cover {} orbitals, the system has {n_orb}", part.n_orb())));
    }
    Ok(part)
}

fn pipeline_config(cfg: &RunConfig) -> PipelineConfig {
    let mut p = cfg.pipeline.clone();
    p.target = cfg.target();
    p
}

fn spins(ints: &Integrals) -> (usize, usize) {
    (ints.n_up(), ints.n_dn())
}

pub fn hf(cfg: &RunConfig) -> Result<Output> {
    let ints = integrals(cfg)?;
    let mf = restricted_hartree_fock(&ints)?;
    let mut out = Output::default();
    let b = &mut out.body;
    let _ = writeln!(b, "restricted Hartree-Fock, {} orbitals, {} electrons", ints.n_orb, ints.n_elec);
    let _ = writeln!(b, "E(HF) = {:.10}  ({} iterations)", mf.energy, mf.iterations);
    let _ = writeln!(b, "{:>5} {:>16} {:>5}", "orb", "energy", "occ");
    for (i, e) in mf.orbital_energies.iter().enumerate() {
        let occ = if i < mf.occupied_count { "*" } else { "" };
        let _ = writeln!(b, "{i:>5} {e:>16.10} {occ:>5}");
    }
    out.put("e_hf", e12(mf.energy));
    out.put("iterations", mf.iterations);
    out.put("occupied", mf.occupied_count);
    for (i, e) in mf.orbital_energies.iter().enumerate() {
        out.put(format!("orbital_energy.{i}"), e12(*e));
    }
    Ok(out)
}

fn fci_energies(ints: &Integrals, n_roots: usize) -> Result<(Vec<f64>, usize)> {
    let (up, dn) = spins(ints);
    let res = fci_solve(ints, up, dn, n_roots)?;
    Ok((res.energies, res.basis.len()))
}

pub fn fci(cfg: &RunConfig) -> Result<Output> {
    let ints = integrals(cfg)?;
    let (energies, dim) = fci_energies(&ints, cfg.pipeline.n_roots)?;
    let mut out = Output::default();
    let _ = writeln!(out.body, "full CI, {} orbitals, {} electrons, {dim} determinants", ints.n_orb, ints.n_elec);
    for (i, e) in energies.iter().enumerate() {
        let _ = writeln!(out.body, "E(root {i}) = {e:.10}");
    }
    out.put("determinants", dim);
    for (i, e) in energies.iter().enumerate() {
        out.put(format!("energy.{i}"), e12(*e));
    }
    Ok(out)
}

struct DmrgRun {
    energies: Vec<f64>,
    sweeps: usize,
    converged: bool,
    max_discarded_weight: f64,
    max_bond: usize,
}

fn run_dmrg(cfg: &RunConfig, ints: &Integrals) -> Result<DmrgRun> {
    let n = ints.n_orb;
    if n < 2 {
        return Err(RunError::Usage("dmrg needs at least two orbitals".into()));
    }
    let phys = vec![Index::spatial_site(Direction::In); n];
    let order: Vec<usize> = (0..n).collect();
    let mpo = build_hamiltonian_mpo(ints, &order)?;
    let target = QNum::new(ints.n_elec as i32, ints.two_sz);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(cfg.pipeline.seed);
    let init = Mps::random(&phys, target, cfg.pipeline.m.min(16), &mut rng)?;
    let schedule = SweepSchedule::standard(cfg.pipeline.m, cfg.dmrg_sweeps);
    let res = dmrg_sweep(&init, &mpo, &schedule, cfg.pipeline.n_roots)?;
    Ok(DmrgRun {
        energies: res.energies,
        sweeps: res.report.sweeps,
        converged: res.report.converged,
        max_discarded_weight: res.report.max_discarded_weight,
        max_bond: res.report.max_bond,
    })
}

pub fn dmrg(cfg: &RunConfig) -> Result<Output> {
    let ints = integrals(cfg)?;
    let r = run_dmrg(cfg, &ints)?;
    let mut out = Output::default();
    let _ = writeln!(out.body, "DMRG, {} orbitals, {} electrons, m = {}", ints.n_orb, ints.n_elec, cfg.pipeline.m);
    let _ = writeln!(
        out.body,
        "{} sweeps, converged {}, max bond {}, max discarded weight {:.3e}",
        r.sweeps, r.converged, r.max_bond, r.max_discarded_weight
    );
    for (i, e) in r.energies.iter().enumerate() {
        let _ = writeln!(out.body, "E(root {i}) = {e:.10}");
    }
    for (i, e) in r.energies.iter().enumerate() {
        out.put(format!("energy.{i}"), e12(*e));
    }
    out.put("sweeps", r.sweeps);
    out.put("converged", r.converged);
    out.put("max_bond", r.max_bond);
    out.put("max_discarded_weight", format!("{:.6e}", r.max_discarded_weight));
    Ok(out)
}

fn run_pipeline(cfg: &RunConfig, ints: &Integrals, verbose: bool) -> Result<PipelineResult> {
    let part = partition(cfg, ints.n_orb)?;
    let res = run_bips_pipeline(ints, &part, &pipeline_config(cfg))?;
    if verbose {
        let t = &res.timings;
        eprintln!(
            "timings/s: mean field {:.3}  embedding {:.3}  model dmrg {:.3}  extraction {:.3}  cluster mpo {:.3}  cluster dmrg {:.3}",
            t.mean_field.as_secs_f64(),
            t.embedding.as_secs_f64(),
            t.model_dmrg.as_secs_f64(),
            t.extraction.as_secs_f64(),
            t.cluster_mpo.as_secs_f64(),
            t.cluster_dmrg.as_secs_f64()
        );
    }
    Ok(res)
}

/// Splits the pipeline text at its `[results]` section.
fn pipeline_output(res: &PipelineResult) -> Output {
    let text = res.to_text();
    let (body, results) = text.split_once("\n[results]\n").unwrap_or((&text, ""));
    let mut out = Output { body: body.to_string(), ..Default::default() };
    for line in results.lines() {
        if let Some((k, v)) = line.split_once(" = ") {
            out.put(k, v);
        }
    }
    out
}

pub fn bips(cfg: &RunConfig, verbose: bool) -> Result<Output> {
    let ints = integrals(cfg)?;
    let res = run_pipeline(cfg, &ints, verbose)?;
    Ok(pipeline_output(&res))
}

fn sample_all(cfg: &RunConfig, res: &PipelineResult) -> Result<Vec<Vec<analysis::SampledState>>> {
    Ok(res.states.iter().map(|s| sample_bips(s, cfg.threshold)).collect::<std::result::Result<_, _>>()?)
}

fn put_samples(out: &mut Output, sampled: &[Vec<analysis::SampledState>]) {
    for (r, states) in sampled.iter().enumerate() {
        out.put(format!("sample.{r}.count"), states.len());
        for (i, s) in states.iter().enumerate() {
            out.put(format!("sample.{r}.{i}"), format!("{:.10e} {}", s.coefficient, s.label));
        }
    }
}

pub fn sample(cfg: &RunConfig, verbose: bool) -> Result<Output> {
    let ints = integrals(cfg)?;
    let res = run_pipeline(cfg, &ints, verbose)?;
    let sampled = sample_all(cfg, &res)?;
    let body = analysis::report(&ReportInput {
        result: &res,
        reference: None,
        threshold: cfg.threshold,
        sampled: &sampled,
        heff: None,
    });
    let mut out = Output { body, ..Default::default() };
    for (i, e) in res.energies.iter().enumerate() {
        out.put(format!("energy.{i}"), e12(*e));
    }
    put_samples(&mut out, &sampled);
    Ok(out)
}

pub fn effham(cfg: &RunConfig, verbose: bool) -> Result<Output> {
    let ints = integrals(cfg)?;
    let res = run_pipeline(cfg, &ints, verbose)?;
    let sampled = sample_all(cfg, &res)?;
    let mut basis: Vec<BipsLabel> = Vec::new();
    for s in sampled.iter().flatten() {
        if !basis.contains(&s.label) {
            basis.push(s.label.clone());
        }
    }
    if basis.is_empty() {
        return Err(AnalysisError::InvalidLabel(format!("no product state reaches |c| >= {}", cfg.threshold)).into());
    }
    let h = effective_hamiltonian(&res.cmpo, &basis)?;
    let body = analysis::report(&ReportInput {
        result: &res,
        reference: None,
        threshold: cfg.threshold,
        sampled: &sampled,
        heff: Some(&h),
    });
    let mut out = Output { body, ..Default::default() };
    for (i, e) in res.energies.iter().enumerate() {
        out.put(format!("energy.{i}"), e12(*e));
    }
    put_samples(&mut out, &sampled);
    out.put("heff.dim", h.dim());
    out.put("heff.reference_energy", e12(h.reference_energy));
    for (i, e) in h.eigenvalues().iter().enumerate() {
        out.put(format!("heff.eigenvalue.{i}"), e12(*e));
    }
    out.extra_files.push(("effham.csv".into(), analysis::matrix_csv(&h.matrix)));
    Ok(out)
}

pub fn scan(cfg: &RunConfig, verbose: bool) -> Result<Output> {
    let Source::Hubbard { sites, t_intra, t_inter, u, v_nn } = cfg.source else {
        return Err(RunError::Usage("scan needs model = hubbard".into()));
    };
    if cfg.scan_t_intra.is_empty() && cfg.scan_t_inter.is_empty() {
        return Err(RunError::Usage("scan needs `scan_t_inter` or `scan_t_intra`".into()));
    }
    let intra = if cfg.scan_t_intra.is_empty() { vec![t_intra] } else { cfg.scan_t_intra.clone() };
    let inter = if cfg.scan_t_inter.is_empty() { vec![t_inter] } else { cfg.scan_t_inter.clone() };
    let ref_name = match cfg.scan_reference {
        Reference::Fci => "fci",
        Reference::Dmrg => "dmrg",
    };
    let mut out = Output::default();
    let _ = writeln!(out.body, "scan over {} x {} hoppings, reference {ref_name}", intra.len(), inter.len());
    let _ = writeln!(
        out.body,
        "{:>4} {:>10} {:>10} {:>18} {:>18} {:>14}",
        "row", "t_intra", "t_inter", "E(reference)", "E(cluster)", "error/milli"
    );
    let mut row = 0;
    for &a in &intra {
        for &b in &inter {
            let ints = with_target(cfg, hubbard(sites, a, b, u, v_nn)?)?;
            let e_ref = match cfg.scan_reference {
                Reference::Fci => fci_energies(&ints, 1)?.0[0],
                Reference::Dmrg => run_dmrg(cfg, &ints)?.energies[0],
            };
            let e = run_pipeline(cfg, &ints, verbose)?.energies[0];
            let err = e - e_ref;
            if verbose {
                eprintln!("scan row {row}: t_intra {a} t_inter {b} error {err:.3e}");
            }
            let _ = writeln!(out.body, "{row:>4} {a:>10} {b:>10} {e_ref:>18.10} {e:>18.10} {:>14.6}", err * 1e3);
            out.put(format!("scan.{row}.t_intra"), a);
            out.put(format!("scan.{row}.t_inter"), b);
            out.put(format!("scan.{row}.e_reference"), e12(e_ref));
            out.put(format!("scan.{row}.e_cluster"), e12(e));
            out.put(format!("scan.{row}.error"), e12(err));
            row += 1;
        }
    }
    out.put("scan.rows", row);
    Ok(out)
}
