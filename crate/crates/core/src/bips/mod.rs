//! Coarse graining into fragment states: local bases from embedded
//! model-space DMRG, the cluster MPO, and DMRG over the cluster chain.

mod basis;
mod cmpo;
mod pipeline;

use std::collections::BTreeSet;

use rand::SeedableRng;
use thiserror::Error;

use crate::embed::EmbedError;
use crate::hamio::HamError;
use crate::mpsmpo::{dmrg_sweep, DmrgResult, Mps, MpsError, SweepSchedule};
use crate::symtensor::{Index, QNum, TensorError};

pub use basis::{extract_local_basis, fragment_density, LocalBasisSet, LocalState, MAX_FRAGMENT_SITES};
pub use cmpo::{build_cluster_mpo, cmpo_max_diff, ClusterMpo, CmpoMethod};
pub use pipeline::{run_bips_pipeline, FragmentSummary, PipelineConfig, PipelineResult, StageTimings};

#[derive(Debug, Error)]
pub enum BipsError {
    #[error("model wave function has zero norm")]
    ZeroNorm,
    #[error("fragment {0}: no local state kept")]
    EmptyBasis(usize),
    #[error("fragment of {0} sites is outside the supported range 1..={MAX_FRAGMENT_SITES}")]
    FragmentTooLarge(usize),
    #[error("basis order mismatch: {0}")]
    OrderMismatch(String),
    #[error("parent MPO carries no symbolic term list")]
    MissingSymbolic,
    #[error("target sector {target} is unreachable; nearest reachable: {}", fmt_sectors(.nearest))]
    UnreachableSector { target: QNum, nearest: Vec<QNum> },
    #[error("{0}")]
    Invalid(String),
    #[error("fragment {fragment}: {source}")]
    Fragment { fragment: usize, source: Box<BipsError> },
    #[error(transparent)]
    Mps(#[from] MpsError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Ham(#[from] HamError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
}

fn fmt_sectors(q: &[QNum]) -> String {
    q.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
}

pub type Result<T> = std::result::Result<T, BipsError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ClusterInit {
    /// Random tensors over every reachable sector.
    RandomQn,
    /// Lowest-diagonal product of local states.
    LowEnergyProducts,
}

/// Sectors reachable by products of the physical labels.
fn reachable(phys: &[Index]) -> BTreeSet<QNum> {
    let mut set = BTreeSet::from([QNum::ZERO]);
    for p in phys {
        let mut next = BTreeSet::new();
        for &q in &set {
            for &(l, _) in p.sectors() {
                next.insert(q + l);
            }
        }
        set = next;
    }
    set
}

pub(crate) fn check_reachable(phys: &[Index], target: QNum) -> Result<()> {
    let set = reachable(phys);
    if set.contains(&target) {
        return Ok(());
    }
    let mut near: Vec<QNum> = set.into_iter().collect();
    let dist = |q: &QNum| (q.n - target.n).abs() * 2 + (q.two_sz - target.two_sz).abs();
    near.sort_by_key(|q| (dist(q), *q));
    near.truncate(3);
    Err(BipsError::UnreachableSector { target, nearest: near })
}

/// `<p|cmpo|p>` for a product of dense physical positions.
pub fn product_diagonal(cmpo: &ClusterMpo, states: &[usize]) -> f64 {
    let mut v = vec![1.0];
    for (w, &a) in cmpo.tensors.iter().zip(states) {
        let (li, pi, ri) = (w.index(0), w.index(1), w.index(3));
        let (ps, po) = pi.locate(a).unwrap();
        let mut next = vec![0.0; ri.dim()];
        for (key, blk) in w.blocks() {
            if key[1] != ps || key[2] != ps {
                continue;
            }
            let sh = w.block_shape(key);
            let (lo, ro) = (li.offset(key[0]), ri.offset(key[3]));
            for l in 0..sh[0] {
                let x = v[lo + l];
                if x == 0.0 {
                    continue;
                }
                for r in 0..sh[3] {
                    next[ro + r] += x * blk[((l * sh[1] + po) * sh[2] + po) * sh[3] + r];
                }
            }
        }
        v = next;
    }
    v.iter().sum::<f64>() + cmpo.constant_shift
}

/// Lowest-diagonal product state in the target sector among the leading
/// local states of each site (at most about 1e5 candidates).
fn best_product(cmpo: &ClusterMpo, target: QNum) -> Option<Vec<usize>> {
    let n = cmpo.len();
    let dims: Vec<usize> = (0..n).map(|i| cmpo.phys_index(i).dim()).collect();
    let mut c = 1usize;
    while dims.iter().map(|&d| (c + 1).min(d)).product::<usize>() <= 100_000 && dims.iter().any(|&d| d > c) {
        c += 1;
    }
    let cand: Vec<usize> = dims.iter().map(|&d| c.min(d)).collect();
    let mut best: Option<(f64, Vec<usize>)> = None;
    let mut cur = vec![0usize; n];
    loop {
        let q = cur
            .iter()
            .enumerate()
            .fold(QNum::ZERO, |q, (i, &a)| {
                let p = cmpo.phys_index(i);
                q + p.qnum(p.locate(a).unwrap().0)
            });
        if q == target {
            let e = product_diagonal(cmpo, &cur);
            if best.as_ref().is_none_or(|b| e < b.0 - 1e-12) {
                best = Some((e, cur.clone()));
            }
        }
        let mut i = n;
        loop {
            if i == 0 {
                return best.map(|b| b.1);
            }
            i -= 1;
            cur[i] += 1;
            if cur[i] < cand[i] {
                break;
            }
            cur[i] = 0;
        }
    }
}

/// DMRG over the cluster chain in sector `target`.
pub fn cluster_dmrg(
    cmpo: &ClusterMpo,
    schedule: &SweepSchedule,
    n_roots: usize,
    init: ClusterInit,
    target: QNum,
    seed: u64,
) -> Result<DmrgResult> {
    schedule.validate()?;
    let phys: Vec<Index> = (0..cmpo.len()).map(|i| cmpo.phys_index(i).clone()).collect();
    check_reachable(&phys, target)?;
    let m = schedule.stages[0].max_bond;
    let mps = match init {
        ClusterInit::RandomQn => {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            Mps::random(&phys, target, m, &mut rng)?
        }
        ClusterInit::LowEnergyProducts => match best_product(cmpo, target) {
            Some(states) => Mps::product(&phys, &states)?,
            None => {
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
                Mps::random(&phys, target, m, &mut rng)?
            }
        },
    };
    Ok(dmrg_sweep(&mps, cmpo, schedule, n_roots)?)
}

/// Orbital-space MPS of a product of fragment states, `states[I]` being a
/// dense position in the open leg of `bases[I]`.
pub fn bips_product_mps(bases: &[LocalBasisSet], states: &[usize]) -> Result<Mps> {
    if bases.len() != states.len() {
        return Err(BipsError::Invalid("one state per fragment required".into()));
    }
    let mut tensors = Vec::new();
    let mut q = QNum::ZERO;
    for (b, &a) in bases.iter().zip(states) {
        let open = b.basis_index();
        let (sec, _) = open.locate(a).ok_or_else(|| BipsError::Invalid(format!("state {a} out of range")))?;
        let label = open.qnum(sec);
        let k = b.n_sites();
        for (i, t) in b.tensors.iter().enumerate() {
            let mut t = if i + 1 == k {
                let d = t.to_dense();
                let n = t.index(2).dim();
                let col: Vec<f64> = d.iter().skip(a).step_by(n).copied().collect();
                let right = Index::trivial(crate::symtensor::Direction::Out, label);
                crate::symtensor::BlockTensor::from_dense(
                    vec![t.index(0).clone(), t.index(1).clone(), right],
                    QNum::ZERO,
                    &col,
                )?
            } else {
                t.clone()
            };
            t.shift_leg(0, q);
            t.shift_leg(2, q);
            tensors.push(t);
        }
        q += label;
    }
    Ok(Mps { tensors, center: None, flux: q })
}

#[cfg(test)]
mod tests;
