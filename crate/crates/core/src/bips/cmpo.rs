//! Cluster MPO: the parent MPO sandwiched between fragment basis segments.

use std::collections::HashMap;

use nalgebra::DMatrix;
use rayon::prelude::*;

use super::{BipsError, LocalBasisSet, Result};
use crate::hamio::{channel_at, local_matrix, Channel, LocalOp, MpoChain, OpString, SymbolicMpo};
use crate::symtensor::{BlockTensor, Index};

/// Cluster MPO over fragment states; same layout as an orbital MPO.
pub type ClusterMpo = MpoChain;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CmpoMethod {
    /// Contract the numerical parent tensors site by site.
    Direct,
    /// Renormalize bare operator strings, then multiply by the integrals.
    DeferredIntegrals,
}

/// Sites of the parent chain covered by each basis.
fn fragment_ranges(parent: &MpoChain, bases: &[LocalBasisSet], order: &[usize]) -> Result<Vec<(usize, usize)>> {
    let mut ranges = Vec::with_capacity(bases.len());
    let mut start = 0;
    for b in bases {
        let end = start + b.n_sites();
        if end > order.len() || order[start..end] != b.orbitals[..] {
            return Err(BipsError::OrderMismatch(format!(
                "fragment {} orbitals {:?} are not contiguous at chain position {start}",
                b.fragment_id, b.orbitals
            )));
        }
        ranges.push((start, end));
        start = end;
    }
    if start != parent.len() || order.len() != parent.len() {
        return Err(BipsError::OrderMismatch(format!("bases cover {start} of {} sites", parent.len())));
    }
    Ok(ranges)
}

fn unit(idx: &Index) -> BlockTensor {
    let mut u = BlockTensor::new(vec![idx.flipped()], crate::symtensor::QNum::ZERO);
    u.insert_block(vec![0], vec![1.0]).unwrap();
    u
}

/// `W_I` by alternating MPS and MPO contractions through the segment.
fn sandwich(ws: &[BlockTensor], seg: &[BlockTensor]) -> Result<BlockTensor> {
    let a0 = &seg[0];
    let t = a0.contract(&ws[0], &[(1, 1)])?; // [a0, a1, bl, bra, br]
    let t = t.contract(&a0.dagger(), &[(3, 1)])?; // [a0, a1, bl, br, a0', a1']
    let t = t.contract(&unit(t.index(0)), &[(0, 0)])?;
    let t = t.contract(&unit(t.index(3)), &[(3, 0)])?; // [a1, bl, br, a1']
    let mut x = t.permute(&[1, 0, 2, 3])?; // [bl, ket, br, bra]
    for (a, w) in seg.iter().zip(ws).skip(1) {
        let t = x.contract(a, &[(1, 0)])?; // [bl, br, bra, s, a']
        let t = t.contract(w, &[(1, 0), (3, 1)])?; // [bl, bra, a', sb, br']
        x = t.contract(&a.dagger(), &[(1, 0), (3, 1)])?; // [bl, a', br', a'']
    }
    Ok(x.permute(&[0, 1, 3, 2])?)
}

fn build_direct(parent: &MpoChain, bases: &[LocalBasisSet], ranges: &[(usize, usize)]) -> Result<Vec<BlockTensor>> {
    ranges
        .par_iter()
        .zip(bases)
        .map(|(&(s, e), b)| sandwich(&parent.tensors[s..e], &b.tensors))
        .collect()
}

fn parity(ops: &[(u32, LocalOp)]) -> bool {
    ops.iter().filter(|o| o.1.is_odd()).count() % 2 == 1
}

/// Dense `A[sigma]` matrices of a segment tensor `(left, phys, right)`.
fn site_mats(t: &BlockTensor) -> Vec<DMatrix<f64>> {
    let (dl, d, dr) = (t.index(0).dim(), t.index(1).dim(), t.index(2).dim());
    let x = t.to_dense();
    (0..d).map(|s| DMatrix::from_fn(dl, dr, |a, b| x[(a * d + s) * dr + b])).collect()
}

/// `<alpha|O|beta>` of a bare operator string over the fragment, given as
/// one 4x4 `[bra][ket]` matrix per site.
fn renormalize(mats: &[Vec<DMatrix<f64>>], ops: &[[f64; 16]]) -> DMatrix<f64> {
    let mut e = DMatrix::from_element(1, 1, 1.0);
    for (a, op) in mats.iter().zip(ops) {
        let dr = a[0].ncols();
        let mut next = DMatrix::zeros(dr, dr);
        for bra in 0..4 {
            for ket in 0..4 {
                let f = op[bra * 4 + ket];
                if f == 0.0 {
                    continue;
                }
                let t = &e * &a[ket];
                next += f * a[bra].transpose() * t;
            }
        }
        e = next;
    }
    e
}

/// Per-site 4x4 operators of a string restricted to modes `[m0, m1)`.
fn site_operators(inside: &[(u32, LocalOp)], parity_after: bool, m0: u32, m1: u32) -> Vec<[f64; 16]> {
    let mut out = Vec::with_capacity(((m1 - m0) / 2) as usize);
    for site_mode in (m0..m1).step_by(2) {
        let mut mats = [[[0.0; 2]; 2]; 2];
        for (s, mat) in mats.iter_mut().enumerate() {
            let m = site_mode + s as u32;
            let op = inside.iter().find(|o| o.0 == m).map(|o| o.1);
            let right: Vec<(u32, LocalOp)> = inside.iter().copied().filter(|o| o.0 > m).collect();
            *mat = local_matrix(op, parity_after ^ parity(&right));
        }
        let (a, b) = (mats[0], mats[1]);
        let mut k = [0.0; 16];
        for ua in 0..2 {
            for da in 0..2 {
                for uk in 0..2 {
                    for dk in 0..2 {
                        k[(2 * ua + da) * 4 + 2 * uk + dk] = a[ua][uk] * b[da][dk];
                    }
                }
            }
        }
        out.push(k);
    }
    out
}

type PathKey = (Channel, Channel, OpString);

fn deferred_fragment(sym: &SymbolicMpo, parent: &MpoChain, basis: &LocalBasisSet, s: usize, e: usize) -> Result<BlockTensor> {
    let n_modes = sym.n_modes();
    let (m0, m1) = (2 * s as u32, 2 * e as u32);
    // integral-free paths and the coefficient each one carries
    let mut paths: HashMap<PathKey, (f64, bool)> = HashMap::new();
    for t in &sym.terms {
        let first = t.ops[0].0;
        let last = t.ops[t.ops.len() - 1].0;
        if last < m0 || first >= m1 {
            continue;
        }
        let cl = channel_at(&t.ops, m0, n_modes);
        let cr = channel_at(&t.ops, m1, n_modes);
        let inside: OpString = t.ops.iter().copied().filter(|o| o.0 >= m0 && o.0 < m1).collect();
        let after = parity(&t.ops[t.ops.iter().take_while(|o| o.0 < m1).count()..]);
        let switch = matches!(cl, Channel::Id | Channel::Left(_)) && matches!(cr, Channel::Right(_) | Channel::Done);
        let entry = paths.entry((cl, cr, inside)).or_insert((0.0, after));
        if switch {
            entry.0 += t.coeff;
        } else {
            entry.0 = 1.0;
        }
    }
    let (lb, rb) = (&sym.bonds[s], &sym.bonds[e]);
    for c in [Channel::Id, Channel::Done] {
        if lb.position.contains_key(&c) && rb.position.contains_key(&c) {
            paths.insert((c.clone(), c, OpString::new()), (1.0, false));
        }
    }

    let mats: Vec<Vec<DMatrix<f64>>> = basis.tensors.iter().map(site_mats).collect();
    let mut cache: HashMap<(OpString, bool), DMatrix<f64>> = HashMap::new();
    let phys = basis.basis_index();
    let left = parent.tensors[s].index(0).clone();
    let right = parent.tensors[e - 1].index(3).clone();
    let mut w = BlockTensor::new(vec![left.clone(), phys.flipped(), phys.clone(), right.clone()], Default::default());
    let mut keys: Vec<&PathKey> = paths.keys().collect();
    keys.sort();
    for key in keys {
        let (coeff, after) = paths[key];
        if coeff == 0.0 {
            continue;
        }
        let (cl, cr, inside) = key;
        let o = cache
            .entry((inside.clone(), after))
            .or_insert_with(|| renormalize(&mats, &site_operators(inside, after, m0, m1)));
        let (ls, lo) = lb.position[cl];
        let (rs, ro) = rb.position[cr];
        let (dl, dr) = (left.sector_dim(ls), right.sector_dim(rs));
        for ks in 0..phys.n_sectors() {
            for bs in 0..phys.n_sectors() {
                let blk = vec![ls, ks, bs, rs];
                if !w.allowed(&blk) {
                    continue;
                }
                let (dk, db) = (phys.sector_dim(ks), phys.sector_dim(bs));
                let (ko, bo) = (phys.offset(ks), phys.offset(bs));
                let mut any = false;
                for i in 0..dk {
                    for j in 0..db {
                        if o[(bo + j, ko + i)] != 0.0 {
                            any = true;
                        }
                    }
                }
                if !any {
                    continue;
                }
                if w.block(&blk).is_none() {
                    w.insert_block(blk.clone(), vec![0.0; dl * dk * db * dr])?;
                }
                let data = w.block_mut(&blk).unwrap();
                for i in 0..dk {
                    for j in 0..db {
                        data[((lo * dk + i) * db + j) * dr + ro] += coeff * o[(bo + j, ko + i)];
                    }
                }
            }
        }
    }
    Ok(w)
}

fn build_deferred(parent: &MpoChain, bases: &[LocalBasisSet], ranges: &[(usize, usize)]) -> Result<Vec<BlockTensor>> {
    let sym = parent.symbolic.as_ref().ok_or(BipsError::MissingSymbolic)?;
    ranges
        .par_iter()
        .zip(bases)
        .map(|(&(s, e), b)| deferred_fragment(sym, parent, b, s, e))
        .collect()
}

/// Cluster MPO for bases laid out along the parent chain, whose site `i`
/// holds orbital `order[i]`.
pub fn build_cluster_mpo(
    parent: &MpoChain,
    bases: &[LocalBasisSet],
    order: &[usize],
    method: CmpoMethod,
) -> Result<ClusterMpo> {
    let ranges = fragment_ranges(parent, bases, order)?;
    let tensors = match method {
        CmpoMethod::Direct => build_direct(parent, bases, &ranges)?,
        CmpoMethod::DeferredIntegrals => build_deferred(parent, bases, &ranges)?,
    };
    Ok(MpoChain { tensors, constant_shift: parent.constant_shift, symbolic: None })
}

/// Largest element-wise difference between two cluster MPOs.
pub fn cmpo_max_diff(a: &ClusterMpo, b: &ClusterMpo) -> Result<f64> {
    if a.len() != b.len() {
        return Err(BipsError::Invalid("cluster MPOs differ in length".into()));
    }
    let mut d = (a.constant_shift - b.constant_shift).abs();
    for (x, y) in a.tensors.iter().zip(&b.tensors) {
        d = d.max(x.max_abs_diff(y)?);
    }
    Ok(d)
}
