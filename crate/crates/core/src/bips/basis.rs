//! Renormalized fragment states from model-space wave functions.

use std::collections::BTreeMap;

use nalgebra::DMatrix;

use super::{BipsError, Result};
use crate::mpsmpo::Mps;
use crate::symtensor::{dense_symmetric_eigen, qr_split, BlockTensor, Direction, Index, QNum};

/// Largest fragment whose Fock space is handled densely.
pub const MAX_FRAGMENT_SITES: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LocalState {
    pub label: QNum,
    pub weight: f64,
}

/// Kept fragment states as a left-normalized MPS segment whose last tensor
/// has an open right leg running over the states.
#[derive(Clone, Debug)]
pub struct LocalBasisSet {
    pub fragment_id: usize,
    /// Parent orbitals covered, in chain order.
    pub orbitals: Vec<usize>,
    /// In the dense order of the open leg: by label, weight descending.
    pub states: Vec<LocalState>,
    pub tensors: Vec<BlockTensor>,
    pub n_state: usize,
    pub discarded_weight: f64,
    /// Full spectrum of the fragment density matrix, descending.
    pub spectrum: Vec<LocalState>,
}

impl LocalBasisSet {
    pub fn n_sites(&self) -> usize {
        self.tensors.len()
    }

    /// Physical index of the cluster site (incoming).
    pub fn basis_index(&self) -> Index {
        self.tensors.last().unwrap().index(2).with_dir(Direction::In)
    }

    /// Fragment Fock-space vectors as columns (`4^k x n_state`).
    pub fn dense_vectors(&self) -> Result<DMatrix<f64>> {
        let mut t = self.tensors[0].clone();
        for s in &self.tensors[1..] {
            let r = t.rank();
            t = t.contract(s, &[(r - 1, 0)])?;
        }
        let d = t.to_dense();
        let n = self.n_state;
        Ok(DMatrix::from_row_slice(d.len() / n, n, &d))
    }

    pub fn gram(&self) -> Result<DMatrix<f64>> {
        let v = self.dense_vectors()?;
        Ok(v.transpose() * v)
    }
}

/// Label of a dense fragment Fock index (site 0 most significant).
pub(crate) fn fock_label(mut x: usize, k: usize) -> QNum {
    let mut q = QNum::ZERO;
    for _ in 0..k {
        let d = x % 4;
        x /= 4;
        let (up, dn) = ((d >> 1) as i32, (d & 1) as i32);
        q += QNum::new(up + dn, up - dn);
    }
    q
}

fn dense_of(tensors: &[BlockTensor]) -> Result<Vec<f64>> {
    let mut t = tensors[0].clone();
    for s in &tensors[1..] {
        let r = t.rank();
        t = t.contract(s, &[(r - 1, 0)])?;
    }
    Ok(t.to_dense())
}

/// Spin-summed fragment density matrix in the fragment Fock space, averaged
/// over the given roots with equal weights. The fragment is sites `0..k`.
pub fn fragment_density(roots: &[Mps], k: usize) -> Result<DMatrix<f64>> {
    if k == 0 || k > MAX_FRAGMENT_SITES {
        return Err(BipsError::FragmentTooLarge(k));
    }
    let dim = 4usize.pow(k as u32);
    let mut rho = DMatrix::zeros(dim, dim);
    for root in roots {
        if k > root.len() {
            return Err(BipsError::Invalid(format!("fragment of {k} sites in a model of {}", root.len())));
        }
        let mut m = root.clone();
        let g = if k == m.len() {
            m.canonicalize(k - 1)?;
            let f = dense_of(&m.tensors[..k])?;
            let v = DMatrix::from_column_slice(dim, 1, &f);
            let nrm = v.norm_squared();
            if nrm == 0.0 {
                return Err(BipsError::ZeroNorm);
            }
            &v * v.transpose() / nrm
        } else {
            m.canonicalize(k)?;
            let c = &m.tensors[k];
            let nrm = c.norm_sqr();
            if nrm == 0.0 {
                return Err(BipsError::ZeroNorm);
            }
            let f = dense_of(&m.tensors[..k])?;
            let bond = c.index(0).dim();
            let fm = DMatrix::from_row_slice(dim, bond, &f);
            let cd = c.to_dense();
            let cm = DMatrix::from_row_slice(bond, cd.len() / bond, &cd);
            let x = fm * cm;
            &x * x.transpose() / nrm
        };
        rho += g;
    }
    Ok(rho / roots.len() as f64)
}

/// Left-normalized segment spanning the given orthonormal fragment vectors,
/// which are grouped by label in ascending label order.
pub(crate) fn segment_from_vectors(k: usize, v: &DMatrix<f64>, labels: &[QNum]) -> Result<Vec<BlockTensor>> {
    let phys = Index::spatial_site(Direction::In);
    let mut counts: BTreeMap<QNum, usize> = BTreeMap::new();
    for &q in labels {
        *counts.entry(q).or_default() += 1;
    }
    let open = Index::new(Direction::Out, counts.into_iter().collect())?;
    let mut legs = vec![Index::trivial(Direction::In, QNum::ZERO)];
    legs.extend(std::iter::repeat(phys).take(k));
    legs.push(open);
    let data: Vec<f64> = (0..v.nrows()).flat_map(|r| (0..v.ncols()).map(move |c| (r, c))).map(|(r, c)| v[(r, c)]).collect();
    let mut rest = BlockTensor::from_dense(legs, QNum::ZERO, &data)?;
    let mut out = Vec::with_capacity(k);
    for _ in 0..k - 1 {
        let (q, r) = qr_split(&rest, &[0, 1])?;
        out.push(q);
        rest = r;
    }
    out.push(rest);
    Ok(out)
}

/// Kept states of a fragment: `model` holds the fragment on its first
/// `boundary` sites. Several roots are averaged with equal weights.
pub fn extract_local_basis(
    model: &[Mps],
    boundary: usize,
    n_state: usize,
    weight_threshold: f64,
    fragment_id: usize,
    orbitals: Vec<usize>,
) -> Result<LocalBasisSet> {
    if n_state == 0 {
        return Err(BipsError::EmptyBasis(fragment_id));
    }
    if model.is_empty() {
        return Err(BipsError::Invalid("no model states".into()));
    }
    let k = boundary;
    let rho = fragment_density(model, k)?;
    let dim = rho.nrows();
    let mut sectors: BTreeMap<QNum, Vec<usize>> = BTreeMap::new();
    for x in 0..dim {
        sectors.entry(fock_label(x, k)).or_default().push(x);
    }
    // (weight, label, vector)
    let mut eig: Vec<(f64, QNum, Vec<f64>)> = Vec::with_capacity(dim);
    for (&q, xs) in &sectors {
        let block = DMatrix::from_fn(xs.len(), xs.len(), |i, j| rho[(xs[i], xs[j])]);
        let (vals, vecs) = dense_symmetric_eigen(&block);
        for i in (0..xs.len()).rev() {
            let mut full = vec![0.0; dim];
            for (r, &x) in xs.iter().enumerate() {
                full[x] = vecs[(r, i)];
            }
            eig.push((vals[i].max(0.0), q, full));
        }
    }
    let n_avg: f64 = eig.iter().map(|e| e.0 * e.1.n as f64).sum::<f64>() / eig.iter().map(|e| e.0).sum::<f64>();
    order_spectrum(&mut eig, n_avg);

    let total = eig.len();
    let mut keep = total;
    if weight_threshold > 0.0 {
        let mut tail = 0.0;
        keep = 0;
        for i in (0..total).rev() {
            tail += eig[i].0;
            if tail > weight_threshold {
                keep = i + 1;
                break;
            }
        }
        keep = keep.max(1);
    }
    let keep = keep.min(n_state);
    let discarded: f64 = eig[keep..].iter().map(|e| e.0).sum();
    let spectrum = eig.iter().map(|e| LocalState { label: e.1, weight: e.0 }).collect();

    // open-leg order: by label, then weight descending (stable from ordering)
    let mut kept: Vec<usize> = (0..keep).collect();
    kept.sort_by_key(|&i| eig[i].1);
    let v = DMatrix::from_fn(dim, keep, |r, c| eig[kept[c]].2[r]);
    let labels: Vec<QNum> = kept.iter().map(|&i| eig[i].1).collect();
    let tensors = segment_from_vectors(k, &v, &labels)?;
    let states = kept.iter().map(|&i| LocalState { label: eig[i].1, weight: eig[i].0 }).collect();
    Ok(LocalBasisSet { fragment_id, orbitals, states, tensors, n_state: keep, discarded_weight: discarded, spectrum })
}

/// Descending weight; near-equal weights prefer labels closer to the mean
/// electron count, then smaller `|2Sz|`, then label order.
fn order_spectrum(eig: &mut [(f64, QNum, Vec<f64>)], n_avg: f64) {
    eig.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut a = 0;
    while a < eig.len() {
        let w0 = eig[a].0;
        let mut b = a + 1;
        while b < eig.len() && w0 - eig[b].0 <= 1e-8 * w0 + 1e-14 {
            b += 1;
        }
        eig[a..b].sort_by(|x, y| {
            let kx = (x.1.n as f64 - n_avg).abs();
            let ky = (y.1.n as f64 - n_avg).abs();
            kx.total_cmp(&ky)
                .then(x.1.two_sz.abs().cmp(&y.1.two_sz.abs()))
                .then(x.1.cmp(&y.1))
                .then(y.0.total_cmp(&x.0))
        });
        a = b;
    }
}
