//! End-to-end driver: mean field, embedding, model DMRG, local bases,
//! cluster MPO and cluster DMRG.

use std::fmt::Write as _;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rayon::prelude::*;

use super::{
    build_cluster_mpo, cluster_dmrg, extract_local_basis, BipsError, ClusterInit, ClusterMpo, CmpoMethod,
    LocalBasisSet, LocalState, Result,
};
use crate::embed::{build_bath, build_embedded_problem, FragmentPartition};
use crate::hamio::{build_hamiltonian_mpo, restricted_hartree_fock, Integrals};
use crate::mpsmpo::{dmrg_sweep, Mps, SweepReport, SweepSchedule};
use crate::symtensor::{Direction, Index, QNum};

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    /// Bond dimension of the model-space DMRG.
    pub m: usize,
    pub n_state: usize,
    /// Cluster bond dimension; `None` means `n_roots * n_state`.
    pub m_tilde: Option<usize>,
    pub n_roots: usize,
    pub model_sweeps: usize,
    pub cluster_sweeps: usize,
    pub sv_cutoff: f64,
    /// Discarded-weight bound for local states; 0 keeps `n_state` states.
    pub weight_threshold: f64,
    pub init: ClusterInit,
    pub method: CmpoMethod,
    pub seed: u64,
    /// Cluster target sector; defaults to the electron count and spin of the integrals.
    pub target: Option<QNum>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            m: 256,
            n_state: 4,
            m_tilde: None,
            n_roots: 1,
            model_sweeps: 16,
            cluster_sweeps: 16,
            sv_cutoff: 1e-8,
            weight_threshold: 1e-12,
            init: ClusterInit::RandomQn,
            method: CmpoMethod::DeferredIntegrals,
            seed: 7,
            target: None,
        }
    }
}

impl PipelineConfig {
    pub fn cluster_bond(&self) -> usize {
        self.m_tilde.unwrap_or(self.n_roots * self.n_state)
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.n_state == 0 || self.n_roots == 0 || self.cluster_bond() == 0 {
            return Err(BipsError::Invalid("m, n_state, m_tilde and n_roots must be positive".into()));
        }
        if self.model_sweeps == 0 || self.cluster_sweeps == 0 {
            return Err(BipsError::Invalid("sweep counts must be positive".into()));
        }
        if !(self.sv_cutoff >= 0.0) || !(self.weight_threshold >= 0.0) {
            return Err(BipsError::Invalid("thresholds must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default)]
pub struct StageTimings {
    pub mean_field: Duration,
    pub embedding: Duration,
    pub model_dmrg: Duration,
    pub extraction: Duration,
    pub cluster_mpo: Duration,
    pub cluster_dmrg: Duration,
}

#[derive(Clone, Debug)]
pub struct FragmentSummary {
    pub fragment_id: usize,
    pub n_bath: usize,
    pub n_elec_model: usize,
    pub entanglement_spectrum: Vec<f64>,
    pub model_energies: Vec<f64>,
    pub spectrum: Vec<LocalState>,
    pub kept: Vec<LocalState>,
    pub discarded_weight: f64,
}

#[derive(Clone, Debug)]
pub struct PipelineResult {
    pub config: PipelineConfig,
    pub e_hf: f64,
    pub energies: Vec<f64>,
    pub report: SweepReport,
    pub fragments: Vec<FragmentSummary>,
    pub bases: Vec<LocalBasisSet>,
    pub cmpo: ClusterMpo,
    pub states: Vec<Mps>,
    pub timings: StageTimings,
}

struct FragmentOutcome {
    summary: FragmentSummary,
    basis: LocalBasisSet,
    embed: Duration,
    dmrg: Duration,
    extract: Duration,
}

fn solve_model(ints: &Integrals, target: QNum, cfg: &PipelineConfig, seed: u64) -> Result<(Vec<Mps>, Vec<f64>)> {
    let n = ints.n_orb;
    let phys = vec![Index::spatial_site(Direction::In); n];
    if n == 1 {
        // a single orbital has no bond to optimize; pick its lowest state
        let mpo = build_hamiltonian_mpo(ints, &[0])?;
        let mut best: Vec<(f64, usize)> = (0..4)
            .filter(|&s| phys[0].qnum(s) == target)
            .map(|s| (mpo.to_dense()[s * 4 + s], s))
            .collect();
        best.sort_by(|a, b| a.0.total_cmp(&b.0));
        let (e, s) = *best.first().ok_or(BipsError::Invalid(format!("model sector {target} is empty")))?;
        return Ok((vec![Mps::product(&phys, &[s])?], vec![e]));
    }
    let mpo = build_hamiltonian_mpo(ints, &(0..n).collect::<Vec<_>>())?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let init = Mps::random(&phys, target, cfg.m.min(16), &mut rng)?;
    let res = dmrg_sweep(&init, &mpo, &SweepSchedule::standard(cfg.m, cfg.model_sweeps), cfg.n_roots)?;
    Ok((res.states, res.energies))
}

fn run_fragment(
    ints: &Integrals,
    rdm1: &nalgebra::DMatrix<f64>,
    part: &FragmentPartition,
    f: usize,
    cfg: &PipelineConfig,
) -> Result<FragmentOutcome> {
    let t0 = Instant::now();
    let space = build_bath(rdm1, part, f, cfg.sv_cutoff)?;
    let problem = build_embedded_problem(ints, &space, rdm1)?;
    let t1 = Instant::now();
    let mi = &problem.integrals;
    let target = QNum::new(mi.n_elec as i32, mi.two_sz);
    let (states, energies) = solve_model(mi, target, cfg, cfg.seed.wrapping_add(f as u64 + 1))?;
    let t2 = Instant::now();
    let basis = extract_local_basis(
        &states,
        space.n_frag,
        cfg.n_state,
        cfg.weight_threshold,
        f,
        part.fragments[f].clone(),
    )?;
    let t3 = Instant::now();
    let summary = FragmentSummary {
        fragment_id: f,
        n_bath: space.n_bath,
        n_elec_model: problem.n_elec_model,
        entanglement_spectrum: space.entanglement_spectrum.clone(),
        model_energies: energies,
        spectrum: basis.spectrum.clone(),
        kept: basis.states.clone(),
        discarded_weight: basis.discarded_weight,
    };
    Ok(FragmentOutcome { summary, basis, embed: t1 - t0, dmrg: t2 - t1, extract: t3 - t2 })
}

pub fn run_bips_pipeline(ints: &Integrals, part: &FragmentPartition, cfg: &PipelineConfig) -> Result<PipelineResult> {
    cfg.validate()?;
    if part.n_orb() != ints.n_orb {
        return Err(BipsError::Invalid(format!(
            "partition covers {} orbitals, integrals have {}",
            part.n_orb(),
            ints.n_orb
        )));
    }
    let mut timings = StageTimings::default();
    let t = Instant::now();
    let mf = restricted_hartree_fock(ints)?;
    timings.mean_field = t.elapsed();

    let outcomes: Vec<FragmentOutcome> = (0..part.len())
        .into_par_iter()
        .map(|f| {
            run_fragment(ints, &mf.rdm1, part, f, cfg)
                .map_err(|e| BipsError::Fragment { fragment: f, source: Box::new(e) })
        })
        .collect::<Result<_>>()?;
    let mut fragments = Vec::new();
    let mut bases = Vec::new();
    for o in outcomes {
        timings.embedding += o.embed;
        timings.model_dmrg += o.dmrg;
        timings.extraction += o.extract;
        fragments.push(o.summary);
        bases.push(o.basis);
    }

    let t = Instant::now();
    let order = part.order();
    let parent = build_hamiltonian_mpo(ints, &order)?;
    let cmpo = build_cluster_mpo(&parent, &bases, &order, cfg.method)?;
    timings.cluster_mpo = t.elapsed();

    let t = Instant::now();
    let target = cfg.target.unwrap_or(QNum::new(ints.n_elec as i32, ints.two_sz));
    let schedule = SweepSchedule::standard(cfg.cluster_bond(), cfg.cluster_sweeps);
    let res = cluster_dmrg(&cmpo, &schedule, cfg.n_roots, cfg.init, target, cfg.seed)?;
    timings.cluster_dmrg = t.elapsed();

    Ok(PipelineResult {
        config: cfg.clone(),
        e_hf: mf.energy,
        energies: res.energies,
        report: res.report,
        fragments,
        bases,
        cmpo,
        states: res.states,
        timings,
    })
}

impl PipelineResult {
    /// Plain-text summary followed by a `[results]` section of `key = value`
    /// lines. Timings are left out so that equal inputs give equal text.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let c = &self.config;
        let _ = writeln!(s, "cluster DMRG over {} fragments", self.fragments.len());
        let _ = writeln!(
            s,
            "m = {}  n_state = {}  m_tilde = {}  n_roots = {}",
            c.m,
            c.n_state,
            c.cluster_bond(),
            c.n_roots
        );
        let _ = writeln!(s, "E(HF) = {:.10}", self.e_hf);
        for (i, e) in self.energies.iter().enumerate() {
            let _ = writeln!(s, "E(root {i}) = {e:.10}");
        }
        for f in &self.fragments {
            let _ = writeln!(
                s,
                "fragment {}: bath {}  model electrons {}  discarded {:.3e}",
                f.fragment_id, f.n_bath, f.n_elec_model, f.discarded_weight
            );
            for st in &f.kept {
                let _ = writeln!(s, "  {:>8}  {:.6e}", st.label.to_string(), st.weight);
            }
        }
        s.push_str("\n[results]\n");
        let _ = writeln!(s, "e_hf = {:.12e}", self.e_hf);
        for (i, e) in self.energies.iter().enumerate() {
            let _ = writeln!(s, "energy.{i} = {e:.12e}");
        }
        let _ = writeln!(s, "cluster.max_discarded_weight = {:.6e}", self.report.max_discarded_weight);
        let _ = writeln!(s, "cluster.sweeps = {}", self.report.sweeps);
        for f in &self.fragments {
            let id = f.fragment_id;
            let _ = writeln!(s, "fragment.{id}.n_bath = {}", f.n_bath);
            let _ = writeln!(s, "fragment.{id}.discarded_weight = {:.6e}", f.discarded_weight);
            let w: Vec<String> = f.kept.iter().map(|x| format!("{}:{:.6e}", x.label, x.weight)).collect();
            let _ = writeln!(s, "fragment.{id}.kept = {}", w.join(" "));
        }
        s
    }
}
