//! Matrix product states, canonical forms, expectation values and the DMRG
//! sweep engine.
//!
//! Site tensors have legs `(left bond: In, physical: In, right bond: Out)` and
//! zero flux. The left boundary carries label zero and the right boundary the
//! target `(N, 2Sz)`, so every bond label is the charge accumulated to its left.

mod checkpoint;
mod dmrg;
mod env;

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::Rng;
use thiserror::Error;

use crate::hamio::MpoChain;
use crate::symtensor::{qr_split, svd_truncate, BlockTensor, Direction, Index, Matricized, QNum, TensorError, TruncationSpec};

pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint};
pub use dmrg::{dmrg_sweep, Algorithm, DmrgResult, SweepSchedule, SweepStage, SweepReport};
pub use env::{apply_one_site, apply_two_site, extend_left, extend_right, left_boundary, right_boundary};

#[derive(Debug, Error)]
pub enum MpsError {
    #[error("state has zero norm")]
    ZeroNorm,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("target sector {0} is not reachable")]
    Unreachable(QNum),
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("io: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, MpsError>;

#[derive(Clone, Debug)]
pub struct Mps {
    pub tensors: Vec<BlockTensor>,
    /// Site holding the orthogonality center, if the gauge is known.
    pub center: Option<usize>,
    pub flux: QNum,
}

fn site_tensor(left: &Index, phys: &Index, right: &Index) -> BlockTensor {
    BlockTensor::new(
        vec![left.with_dir(Direction::In), phys.with_dir(Direction::In), right.with_dir(Direction::Out)],
        QNum::ZERO,
    )
}

impl Mps {
    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn phys_index(&self, i: usize) -> &Index {
        self.tensors[i].index(1)
    }

    pub fn phys_indices(&self) -> Vec<Index> {
        self.tensors.iter().map(|t| t.index(1).clone()).collect()
    }

    /// Product state; `states[i]` is a dense position in physical index `i`.
    pub fn product(phys: &[Index], states: &[usize]) -> Result<Self> {
        if phys.len() != states.len() || phys.is_empty() {
            return Err(MpsError::ShapeMismatch("one local state per site required".into()));
        }
        let mut q = QNum::ZERO;
        let mut tensors = Vec::with_capacity(phys.len());
        for (p, &s) in phys.iter().zip(states) {
            let (sec, off) = p
                .locate(s)
                .ok_or_else(|| MpsError::ShapeMismatch(format!("local state {s} out of range")))?;
            let left = Index::trivial(Direction::In, q);
            q += p.qnum(sec);
            let right = Index::trivial(Direction::Out, q);
            let mut t = site_tensor(&left, p, &right);
            let mut b = vec![0.0; p.sector_dim(sec)];
            b[off] = 1.0;
            t.insert_block(vec![0, sec, 0], b)?;
            tensors.push(t);
        }
        Ok(Mps { tensors, center: Some(0), flux: q })
    }

    /// Bond sectors reachable from both ends, each sector capped at `m`.
    pub fn bond_layout(phys: &[Index], target: QNum, m: usize) -> Result<Vec<BTreeMap<QNum, usize>>> {
        let n = phys.len();
        let mut left: Vec<BTreeMap<QNum, usize>> = vec![BTreeMap::from([(QNum::ZERO, 1)])];
        for p in phys {
            let mut next: BTreeMap<QNum, usize> = BTreeMap::new();
            for (&q, &d) in left.last().unwrap() {
                for &(qs, ds) in p.sectors() {
                    let e = next.entry(q + qs).or_default();
                    *e = (*e + d * ds).min(m);
                }
            }
            left.push(next);
        }
        let mut right: Vec<BTreeMap<QNum, usize>> = vec![BTreeMap::from([(target, 1)])];
        for p in phys.iter().rev() {
            let mut next: BTreeMap<QNum, usize> = BTreeMap::new();
            for (&q, &d) in right.last().unwrap() {
                for &(qs, ds) in p.sectors() {
                    let e = next.entry(q - qs).or_default();
                    *e = (*e + d * ds).min(m);
                }
            }
            right.push(next);
        }
        right.reverse();
        let mut bonds = Vec::with_capacity(n + 1);
        for b in 0..=n {
            let layout: BTreeMap<QNum, usize> = left[b]
                .iter()
                .filter_map(|(q, &d)| right[b].get(q).map(|&e| (*q, d.min(e))))
                .collect();
            if layout.is_empty() {
                return Err(MpsError::Unreachable(target));
            }
            bonds.push(layout);
        }
        Ok(bonds)
    }

    /// Random state containing every reachable sector, right-canonical and normalized.
    pub fn random<R: Rng + ?Sized>(phys: &[Index], target: QNum, m: usize, rng: &mut R) -> Result<Self> {
        let layout = Self::bond_layout(phys, target, m.max(1))?;
        let idx: Vec<Index> = layout.iter().map(|l| Index::merged(Direction::In, l.iter().map(|(&q, &d)| (q, d)))).collect();
        let tensors = phys
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let mut t = site_tensor(&idx[i], p, &idx[i + 1]);
                for key in t.allowed_keys() {
                    let n = t.block_len(&key);
                    t.insert_block(key, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
                }
                t
            })
            .collect();
        let mut mps = Mps { tensors, center: None, flux: target };
        mps.canonicalize(0)?;
        mps.normalize()?;
        Ok(mps)
    }

    pub fn bond_dims(&self) -> Vec<usize> {
        self.tensors.iter().take(self.len().saturating_sub(1)).map(|t| t.index(2).dim()).collect()
    }

    pub fn max_bond(&self) -> usize {
        self.bond_dims().into_iter().max().unwrap_or(1)
    }

    /// QR step making site `i` left-normalized and pushing the remainder right.
    pub fn move_center_right(&mut self, i: usize) -> Result<()> {
        let (q, r) = qr_split(&self.tensors[i], &[0, 1])?;
        self.tensors[i] = q;
        self.tensors[i + 1] = r.contract(&self.tensors[i + 1], &[(1, 0)])?;
        self.center = Some(i + 1);
        Ok(())
    }

    /// QR step making site `i` right-normalized and pushing the remainder left.
    pub fn move_center_left(&mut self, i: usize) -> Result<()> {
        let (b, r) = right_split(&self.tensors[i])?;
        self.tensors[i] = b;
        let mut prev = self.tensors[i - 1].contract(&r, &[(2, 1)])?;
        prev.set_dir(2, Direction::Out);
        self.tensors[i - 1] = prev;
        self.center = Some(i - 1);
        Ok(())
    }

    /// Mixed-canonical form with the center at `site`.
    pub fn canonicalize(&mut self, site: usize) -> Result<()> {
        let n = self.len();
        if site >= n {
            return Err(MpsError::ShapeMismatch(format!("site {site} outside chain of {n}")));
        }
        let (lo, hi) = match self.center {
            Some(c) => (c.min(site), c.max(site)),
            None => (0, n - 1),
        };
        for i in lo..site {
            self.move_center_right(i)?;
        }
        for i in (site + 1..=hi).rev() {
            self.move_center_left(i)?;
        }
        self.center = Some(site);
        if self.tensors[site].norm() == 0.0 {
            return Err(MpsError::ZeroNorm);
        }
        Ok(())
    }

    /// Bond-canonical form at `bond` (between sites `bond - 1` and `bond`).
    /// Leaves the center at site `bond` holding `S * B` and returns `S` per label.
    pub fn canonicalize_bond(&mut self, bond: usize) -> Result<Vec<(QNum, Vec<f64>)>> {
        if bond == 0 || bond >= self.len() {
            return Err(MpsError::ShapeMismatch(format!("bond {bond} is not internal")));
        }
        self.canonicalize(bond)?;
        let svd = svd_truncate(&self.tensors[bond], &[0], TruncationSpec::exact())?;
        let prev = self.tensors[bond - 1].contract(&svd.u, &[(2, 0)])?;
        self.tensors[bond - 1] = prev;
        self.tensors[bond] = svd.s_vt();
        Ok(svd.singular_values)
    }

    pub fn norm(&self) -> Result<f64> {
        Ok(overlap(self, self)?.max(0.0).sqrt())
    }

    pub fn normalize(&mut self) -> Result<f64> {
        let nrm = match self.center {
            Some(c) => self.tensors[c].norm(),
            None => self.norm()?,
        };
        if nrm == 0.0 {
            return Err(MpsError::ZeroNorm);
        }
        let c = self.center.unwrap_or(0);
        self.tensors[c].scale(1.0 / nrm);
        Ok(nrm)
    }

    /// Left-normalization defect of site `i`, max-abs of `A^T A - I`.
    pub fn left_defect(&self, i: usize) -> Result<f64> {
        let t = &self.tensors[i];
        let g = t.dagger().contract(t, &[(0, 0), (1, 1)])?;
        Ok(identity_defect(&g))
    }

    pub fn right_defect(&self, i: usize) -> Result<f64> {
        let t = &self.tensors[i];
        let g = t.contract(&t.dagger(), &[(1, 1), (2, 2)])?;
        Ok(identity_defect(&g))
    }
}

fn identity_defect(g: &BlockTensor) -> f64 {
    let id = BlockTensor::identity(g.index(0));
    let mut m = 0.0f64;
    for (k, b) in g.blocks() {
        let d = g.block_shape(k)[0];
        for i in 0..d {
            for j in 0..d {
                let target = if k[0] == k[1] && i == j { 1.0 } else { 0.0 };
                m = m.max((b[i * d + j] - target).abs());
            }
        }
    }
    for k in id.blocks().keys() {
        if g.block(k).is_none() {
            m = m.max(1.0);
        }
    }
    m
}

/// Splits a site tensor as `r * B` with `B` right-normalized. Returns
/// `(B, r)` where `r` has legs `(new: In, old left bond: In)`.
pub(crate) fn right_split(t: &BlockTensor) -> Result<(BlockTensor, BlockTensor)> {
    let (q, r) = qr_split(t, &[1, 2])?;
    let mut b = q.permute(&[2, 0, 1])?;
    b.set_dir(0, Direction::In);
    Ok((b, r))
}

/// `<bra|ket>`.
pub fn overlap(bra: &Mps, ket: &Mps) -> Result<f64> {
    check_pair(bra, ket)?;
    if bra.flux != ket.flux {
        return Ok(0.0);
    }
    let mut e = boundary_pair(ket.tensors[0].index(0), bra.tensors[0].index(0));
    for (b, k) in bra.tensors.iter().zip(&ket.tensors) {
        let t = e.contract(k, &[(0, 0)])?;
        e = t.contract(&b.dagger(), &[(0, 0), (1, 1)])?;
    }
    Ok(scalar_of(&e))
}

fn boundary_pair(ket: &Index, bra: &Index) -> BlockTensor {
    let mut e = BlockTensor::new(vec![ket.with_dir(Direction::Out), bra.with_dir(Direction::In)], QNum::ZERO);
    if e.allowed(&[0, 0]) {
        e.insert_block(vec![0, 0], vec![1.0]).unwrap();
    }
    e
}

fn scalar_of(t: &BlockTensor) -> f64 {
    t.blocks().values().flat_map(|b| b.iter()).sum()
}

fn check_pair(bra: &Mps, ket: &Mps) -> Result<()> {
    if bra.len() != ket.len() {
        return Err(MpsError::ShapeMismatch(format!("lengths {} and {}", bra.len(), ket.len())));
    }
    for i in 0..bra.len() {
        if !bra.phys_index(i).same_sectors(ket.phys_index(i)) {
            return Err(MpsError::ShapeMismatch(format!("physical index {i} differs")));
        }
    }
    Ok(())
}

/// `<bra|mpo|ket>` including the MPO constant shift.
pub fn expectation(bra: &Mps, mpo: &MpoChain, ket: &Mps) -> Result<f64> {
    check_pair(bra, ket)?;
    if mpo.len() != ket.len() {
        return Err(MpsError::ShapeMismatch(format!("MPO of length {} on MPS of length {}", mpo.len(), ket.len())));
    }
    for i in 0..ket.len() {
        if !mpo.phys_index(i).same_sectors(ket.phys_index(i)) {
            return Err(MpsError::ShapeMismatch(format!("MPO physical index {i} differs")));
        }
    }
    if bra.flux != ket.flux {
        return Ok(0.0);
    }
    let mut l = left_boundary(ket.tensors[0].index(0), mpo.tensors[0].index(0), bra.tensors[0].index(0));
    for i in 0..ket.len() {
        l = extend_left(&l, &ket.tensors[i], &mpo.tensors[i], &bra.tensors[i])?;
    }
    let value = scalar_of(&l);
    Ok(value + mpo.constant_shift * overlap(bra, ket)?)
}

/// Reduced density matrix of the sites left of `bond` in the basis of the
/// left Schmidt states, per bond label, and its eigenvalues (descending).
pub fn reduced_density_matrix(mps: &Mps, bond: usize) -> Result<(BTreeMap<QNum, DMatrix<f64>>, Vec<(QNum, Vec<f64>)>)> {
    let mut m = mps.clone();
    if bond == 0 || bond >= m.len() {
        return Err(MpsError::ShapeMismatch(format!("bond {bond} is not internal")));
    }
    m.canonicalize(bond)?;
    let nrm2 = m.tensors[bond].norm_sqr();
    if nrm2 == 0.0 {
        return Err(MpsError::ZeroNorm);
    }
    let mat = Matricized::new(&m.tensors[bond], &[0])?;
    let mut rho = BTreeMap::new();
    let mut eig = Vec::new();
    for (&q, x) in &mat.mats {
        let r = (x * x.transpose()) / nrm2;
        let label = -q;
        let (mut vals, _) = crate::symtensor::dense_symmetric_eigen(&r);
        vals.reverse();
        eig.push((label, vals));
        rho.insert(label, r);
    }
    Ok((rho, eig))
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::hamio::{build_hamiltonian_mpo, build_hubbard, Integrals};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn phys(n: usize) -> Vec<Index> {
        vec![Index::spatial_site(Direction::In); n]
    }

    fn dense(m: &Mps) -> Vec<f64> {
        crate::fcioracle::mps_to_dense(m).unwrap()
    }

    #[test]
    fn product_state_is_normalized() {
        let m = Mps::product(&phys(3), &[3, 0, 2]).unwrap();
        assert_eq!(m.flux, QNum::new(3, 1));
        assert!((m.norm().unwrap() - 1.0).abs() < 1e-14);
        let mut b = m.clone();
        for s in b.canonicalize_bond(1).unwrap() {
            assert_eq!(s.1, vec![1.0]);
        }
    }

    #[test]
    fn canonicalization_preserves_state() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut m = Mps::random(&phys(6), QNum::new(6, 0), 12, &mut rng).unwrap();
        let before = dense(&m);
        for target in [3, 5, 0, 2] {
            m.canonicalize(target).unwrap();
            let after = dense(&m);
            let d = before.iter().zip(&after).fold(0.0f64, |a, (x, y)| a.max((x - y).abs()));
            assert!(d < 1e-12, "{d}");
            for i in 0..target {
                assert!(m.left_defect(i).unwrap() < 1e-10);
            }
            for i in target + 1..6 {
                assert!(m.right_defect(i).unwrap() < 1e-10);
            }
        }
        let s = m.canonicalize_bond(3).unwrap();
        let tot: f64 = s.iter().flat_map(|x| x.1.iter()).map(|x| x * x).sum();
        assert!((tot - 1.0).abs() < 1e-12);
        let (_, eig) = reduced_density_matrix(&m, 3).unwrap();
        let mut a: Vec<f64> = s.iter().flat_map(|x| x.1.iter().map(|v| v * v)).collect();
        let mut b: Vec<f64> = eig.iter().flat_map(|x| x.1.iter().copied()).collect();
        a.sort_by(|x, y| y.total_cmp(x));
        b.sort_by(|x, y| y.total_cmp(x));
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn rdm_matches_dense_partial_trace() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m = Mps::random(&phys(6), QNum::new(6, 0), 10, &mut rng).unwrap();
        let v = dense(&m);
        // rows = first three sites
        let psi = DMatrix::from_row_slice(64, 64, &v);
        let rho = &psi * psi.transpose();
        let mut e: Vec<f64> = rho.symmetric_eigen().eigenvalues.iter().copied().filter(|x| *x > 1e-13).collect();
        e.sort_by(|a, b| b.total_cmp(a));
        let (_, eig) = reduced_density_matrix(&m, 3).unwrap();
        let mut f: Vec<f64> = eig.iter().flat_map(|x| x.1.iter().copied()).filter(|x| *x > 1e-13).collect();
        f.sort_by(|a, b| b.total_cmp(a));
        assert_eq!(e.len(), f.len());
        for (x, y) in e.iter().zip(&f) {
            assert!((x - y).abs() < 1e-10);
        }
        let total: f64 = eig.iter().flat_map(|x| x.1.iter()).sum();
        assert!((total - 1.0).abs() < 1e-10);
    }

    #[test]
    fn two_site_singlet_weights() {
        // (|up,dn> - |dn,up>)/sqrt2 on two sites
        let p = phys(2);
        let a = Mps::product(&p, &[2, 1]).unwrap();
        let b = Mps::product(&p, &[1, 2]).unwrap();
        let mut v = dense(&a);
        let w = dense(&b);
        for (x, y) in v.iter_mut().zip(&w) {
            *x = (*x - y) / 2f64.sqrt();
        }
        let m = crate::mpsmpo::tests::from_dense(&p, QNum::new(2, 0), &v);
        let (_, eig) = reduced_density_matrix(&m, 1).unwrap();
        let mut f: Vec<f64> = eig.iter().flat_map(|x| x.1.iter().copied()).filter(|x| *x > 1e-14).collect();
        f.sort_by(|a, b| b.total_cmp(a));
        assert_eq!(f.len(), 2);
        assert!((f[0] - 0.5).abs() < 1e-12 && (f[1] - 0.5).abs() < 1e-12);
    }

    /// Exact MPS of a dense vector by successive SVDs.
    pub(crate) fn from_dense(phys: &[Index], target: QNum, v: &[f64]) -> Mps {
        let n = phys.len();
        let mut psi = BlockTensor::new(
            std::iter::once(Index::trivial(Direction::In, QNum::ZERO))
                .chain(phys.iter().cloned())
                .chain(std::iter::once(Index::trivial(Direction::Out, target)))
                .collect(),
            QNum::ZERO,
        );
        psi = BlockTensor::from_dense(psi.indices().to_vec(), QNum::ZERO, v).unwrap();
        let mut tensors = Vec::new();
        let mut rest = psi;
        for _ in 0..n - 1 {
            let svd = svd_truncate(&rest, &[0, 1], TruncationSpec::exact()).unwrap();
            tensors.push(svd.u.clone());
            rest = svd.s_vt();
        }
        tensors.push(rest);
        Mps { tensors, center: Some(n - 1), flux: target }
    }

    #[test]
    fn expectation_of_constant_operator() {
        let mut ints = Integrals::zeros(4, 4, 0);
        ints.e_core = 2.25;
        let mpo = build_hamiltonian_mpo(&ints, &[0, 1, 2, 3]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = Mps::random(&phys(4), QNum::new(4, 0), 8, &mut rng).unwrap();
        assert!((expectation(&m, &mpo, &m).unwrap() - 2.25).abs() < 1e-12);
    }

    #[test]
    fn expectation_matches_dense() {
        let ints = build_hubbard(4, &[1.0, 0.4, 1.0], 4.0).unwrap();
        let mpo = build_hamiltonian_mpo(&ints, &[0, 1, 2, 3]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = Mps::random(&phys(4), QNum::new(4, 0), 6, &mut rng).unwrap();
        let b = Mps::random(&phys(4), QNum::new(4, 0), 6, &mut rng).unwrap();
        let (va, vb) = (dense(&a), dense(&b));
        let hb = mpo.apply_dense(&vb);
        let want: f64 = va.iter().zip(&hb).map(|(x, y)| x * y).sum();
        assert!((expectation(&a, &mpo, &b).unwrap() - want).abs() < 1e-12);
        let ba = expectation(&b, &mpo, &a).unwrap();
        assert!((ba - want).abs() < 1e-12);
        let ov: f64 = va.iter().zip(&vb).map(|(x, y)| x * y).sum();
        assert!((overlap(&a, &b).unwrap() - ov).abs() < 1e-12);
    }
}
