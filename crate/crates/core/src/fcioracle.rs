//! Exact diagonalization in an (N, 2Sz) determinant basis.
//!
//! A determinant is a bit pattern over spin orbitals `2 * p + s` and stands
//! for the ascending product of creation operators on the vacuum, which is
//! the same convention the MPO uses. With the identity orbital order a
//! determinant therefore maps onto the product (Fock) basis of an MPS without
//! any sign.

use rayon::prelude::*;
use thiserror::Error;

use crate::hamio::Integrals;
use crate::mpsmpo::Mps;
use crate::symtensor::{davidson, DavidsonOptions, TensorError};

pub const MAX_BASIS: usize = 4_000_000;
/// Largest chain for which dense Fock vectors are built.
pub const MAX_DENSE_SITES: usize = 10;

#[derive(Debug, Error)]
pub enum FciError {
    #[error("determinant basis of size {0} exceeds the limit")]
    BasisTooLarge(usize),
    #[error("dense embedding over {0} sites is too large")]
    TooLarge(usize),
    #[error("invalid request: {0}")]
    Invalid(String),
    #[error(transparent)]
    Solver(#[from] TensorError),
}

pub type Result<T> = std::result::Result<T, FciError>;

fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    (0..k).fold(1usize, |acc, i| acc * (n - i) / (i + 1))
}

fn combinations(n: usize, k: usize) -> Vec<u64> {
    let mut out = Vec::with_capacity(binomial(n, k));
    if k == 0 {
        out.push(0);
        return out;
    }
    // Gosper's hack
    let mut x: u64 = (1 << k) - 1;
    while x < (1u64 << n) {
        out.push(x);
        let c = x & x.wrapping_neg();
        let r = x + c;
        x = (((r ^ x) >> 2) / c) | r;
    }
    out
}

/// Spreads bit `p` of a spatial pattern to spin-orbital bit `2p + s`.
fn interleave(bits: u64, s: u32) -> u64 {
    let mut out = 0;
    let mut b = bits;
    while b != 0 {
        let p = b.trailing_zeros();
        out |= 1 << (2 * p + s);
        b &= b - 1;
    }
    out
}

#[derive(Clone, Debug)]
pub struct DeterminantBasis {
    pub n_orb: usize,
    pub n_up: usize,
    pub n_dn: usize,
    /// Spin-orbital occupation patterns, ascending.
    pub dets: Vec<u64>,
}

impl DeterminantBasis {
    pub fn new(n_orb: usize, n_up: usize, n_dn: usize) -> Result<Self> {
        if n_orb > 31 || n_up > n_orb || n_dn > n_orb {
            return Err(FciError::Invalid(format!("({n_up}, {n_dn}) electrons in {n_orb} orbitals")));
        }
        let size = binomial(n_orb, n_up) * binomial(n_orb, n_dn);
        if size > MAX_BASIS {
            return Err(FciError::BasisTooLarge(size));
        }
        let ups = combinations(n_orb, n_up);
        let dns = combinations(n_orb, n_dn);
        let mut dets = Vec::with_capacity(size);
        for &a in &ups {
            let a = interleave(a, 0);
            for &b in &dns {
                dets.push(a | interleave(b, 1));
            }
        }
        dets.sort_unstable();
        Ok(DeterminantBasis { n_orb, n_up, n_dn, dets })
    }

    pub fn len(&self) -> usize {
        self.dets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dets.is_empty()
    }

    pub fn index_of(&self, det: u64) -> Option<usize> {
        self.dets.binary_search(&det).ok()
    }
}

/// Sign of moving an electron between spin orbitals `from` and `to` of `det`.
#[inline]
fn hop_sign(det: u64, from: u32, to: u32) -> f64 {
    let (lo, hi) = if from < to { (from, to) } else { (to, from) };
    if hi - lo < 2 {
        return 1.0;
    }
    let mask = ((1u64 << hi) - 1) & !((1u64 << (lo + 1)) - 1);
    if (det & mask).count_ones() % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

/// Hamiltonian of one sector as an on-the-fly linear map.
pub struct FciHamiltonian {
    pub basis: DeterminantBasis,
    k: usize,
    /// Row `i` lists `(p * k + q, j, sign)` with `<j| E_pq |i> = sign`.
    link_start: Vec<usize>,
    links: Vec<(u32, u32, f64)>,
    diag: Vec<f64>,
    k_eff: Vec<f64>,
    v_half: Vec<f64>,
    e_core: f64,
}

impl FciHamiltonian {
    pub fn new(ints: &Integrals, n_up: usize, n_dn: usize) -> Result<Self> {
        let basis = DeterminantBasis::new(ints.n_orb, n_up, n_dn)?;
        let k = ints.n_orb;
        let rows: Vec<Vec<(u32, u32, f64)>> = basis
            .dets
            .par_iter()
            .map(|&det| {
                let mut row = Vec::new();
                for s in 0..2u32 {
                    for q in 0..k as u32 {
                        let mq = 2 * q + s;
                        if det & (1 << mq) == 0 {
                            continue;
                        }
                        for p in 0..k as u32 {
                            let mp = 2 * p + s;
                            if p != q && det & (1 << mp) != 0 {
                                continue;
                            }
                            let target = det & !(1 << mq) | (1 << mp);
                            let j = basis.index_of(target).expect("excitation stays in sector");
                            row.push((p * k as u32 + q, j as u32, hop_sign(det, mq, mp)));
                        }
                    }
                }
                row
            })
            .collect();
        let mut link_start = Vec::with_capacity(rows.len() + 1);
        let mut links = Vec::new();
        for r in rows {
            link_start.push(links.len());
            links.extend(r);
        }
        link_start.push(links.len());

        let mut k_eff = ints.h.clone();
        for p in 0..k {
            for q in 0..k {
                let c: f64 = (0..k).map(|r| ints.v(p, r, r, q)).sum();
                k_eff[p * k + q] -= 0.5 * c;
            }
        }
        let v_half: Vec<f64> = ints.v.iter().map(|x| 0.5 * x).collect();
        let diag = basis.dets.par_iter().map(|&d| diagonal_element(ints, d)).collect();
        Ok(FciHamiltonian { basis, k, link_start, links, diag, k_eff, v_half, e_core: ints.e_core })
    }

    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    pub fn diagonal(&self) -> &[f64] {
        &self.diag
    }

    /// `y = H x`.
    pub fn apply(&self, x: &[f64], y: &mut [f64]) {
        let k2 = self.k * self.k;
        let n = self.dim();
        // D_i[rs] = <i| E_rs |x>
        let mut d = vec![0.0; n * k2];
        d.par_chunks_mut(k2).enumerate().for_each(|(i, di)| {
            for &(pq, j, s) in &self.links[self.link_start[i]..self.link_start[i + 1]] {
                // <j|E_pq|i> = <i|E_qp|j>
                let (p, q) = (pq as usize / self.k, pq as usize % self.k);
                di[q * self.k + p] += s * x[j as usize];
            }
        });
        // G_i[pq] = k_pq x_i + 1/2 sum_rs (pq|rs) D_i[rs]
        let mut g = vec![0.0; n * k2];
        const CHUNK: usize = 256;
        g.par_chunks_mut(CHUNK * k2).zip(d.par_chunks(CHUNK * k2)).enumerate().for_each(
            |(c, (gc, dc))| {
                let rows = dc.len() / k2;
                unsafe {
                    matrixmultiply::dgemm(
                        rows,
                        k2,
                        k2,
                        1.0,
                        dc.as_ptr(),
                        k2 as isize,
                        1,
                        self.v_half.as_ptr(),
                        1,
                        k2 as isize,
                        0.0,
                        gc.as_mut_ptr(),
                        k2 as isize,
                        1,
                    );
                }
                for r in 0..rows {
                    let xi = x[c * CHUNK + r];
                    for (gv, kv) in gc[r * k2..(r + 1) * k2].iter_mut().zip(&self.k_eff) {
                        *gv += kv * xi;
                    }
                }
            },
        );
        y.par_iter_mut().enumerate().for_each(|(i, yi)| {
            let mut acc = self.e_core * x[i];
            for &(pq, j, s) in &self.links[self.link_start[i]..self.link_start[i + 1]] {
                let (p, q) = (pq as usize / self.k, pq as usize % self.k);
                acc += s * g[j as usize * k2 + q * self.k + p];
            }
            *yi = acc;
        });
    }

    /// Full matrix, for small sectors.
    pub fn to_dense(&self) -> Vec<f64> {
        let n = self.dim();
        let mut out = vec![0.0; n * n];
        let mut e = vec![0.0; n];
        let mut col = vec![0.0; n];
        for j in 0..n {
            e[j] = 1.0;
            self.apply(&e, &mut col);
            for i in 0..n {
                out[i * n + j] = col[i];
            }
            e[j] = 0.0;
        }
        out
    }
}

fn diagonal_element(ints: &Integrals, det: u64) -> f64 {
    let occ: Vec<(usize, u32)> =
        (0..2 * ints.n_orb as u32).filter(|m| det & (1 << m) != 0).map(|m| ((m / 2) as usize, m % 2)).collect();
    let mut e = ints.e_core;
    for (a, &(i, si)) in occ.iter().enumerate() {
        e += ints.h(i, i);
        for &(j, sj) in &occ[a + 1..] {
            e += ints.v(i, i, j, j);
            if si == sj {
                e -= ints.v(i, j, j, i);
            }
        }
    }
    e
}

#[derive(Clone, Debug)]
pub struct FciResult {
    pub energies: Vec<f64>,
    /// Eigenvectors over `basis.dets`.
    pub vectors: Vec<Vec<f64>>,
    pub basis: DeterminantBasis,
}

pub fn fci_solve(ints: &Integrals, n_up: usize, n_dn: usize, n_roots: usize) -> Result<FciResult> {
    let h = FciHamiltonian::new(ints, n_up, n_dn)?;
    if n_roots == 0 || n_roots > h.dim() {
        return Err(FciError::Invalid(format!("{n_roots} roots in a sector of dimension {}", h.dim())));
    }
    let mut f = |x: &[f64], y: &mut [f64]| h.apply(x, y);
    let mut opts = DavidsonOptions::new(n_roots, 1e-9);
    opts.max_iter = 2000;
    let res = davidson(&mut f, h.diagonal(), &[], opts)?;
    Ok(FciResult { energies: res.values, vectors: res.vectors, basis: h.basis })
}

/// Position of `det` in the product basis over sites holding orbitals
/// `order[0], order[1], ...` (site 0 slowest, local index `2 n_up + n_dn`),
/// together with the reordering sign.
pub fn det_to_fock(det: u64, order: &[usize]) -> (usize, f64) {
    let k = order.len();
    let mut site_of = vec![0usize; k];
    for (i, &o) in order.iter().enumerate() {
        site_of[o] = i;
    }
    let mut new_modes = Vec::new();
    let mut index = 0usize;
    for m in 0..2 * k as u32 {
        if det & (1 << m) != 0 {
            let (o, s) = ((m / 2) as usize, m % 2);
            let site = site_of[o];
            new_modes.push(2 * site as u32 + s);
            index += (if s == 0 { 2 } else { 1 }) * 4usize.pow((k - 1 - site) as u32);
        }
    }
    let mut inv = 0;
    for i in 0..new_modes.len() {
        for j in i + 1..new_modes.len() {
            if new_modes[i] > new_modes[j] {
                inv += 1;
            }
        }
    }
    (index, if inv % 2 == 0 { 1.0 } else { -1.0 })
}

/// Dense amplitudes of an MPS over the product of its physical indices.
pub fn mps_to_dense(mps: &Mps) -> Result<Vec<f64>> {
    let n = mps.len();
    let total: usize = (0..n).map(|i| mps.tensors[i].index(1).dim()).product();
    if n > MAX_DENSE_SITES && total > 4usize.pow(MAX_DENSE_SITES as u32) {
        return Err(FciError::TooLarge(n));
    }
    let mut cur = vec![1.0];
    let mut left = 1usize;
    for t in &mps.tensors {
        let (dl, d, dr) = (t.index(0).dim(), t.index(1).dim(), t.index(2).dim());
        if dl != left {
            return Err(FciError::Invalid("inconsistent MPS bonds".into()));
        }
        let td = t.to_dense();
        let prefix = cur.len() / dl;
        let mut next = vec![0.0; prefix * d * dr];
        unsafe {
            matrixmultiply::dgemm(
                prefix,
                dl,
                d * dr,
                1.0,
                cur.as_ptr(),
                dl as isize,
                1,
                td.as_ptr(),
                (d * dr) as isize,
                1,
                0.0,
                next.as_mut_ptr(),
                (d * dr) as isize,
                1,
            );
        }
        cur = next;
        left = dr;
    }
    if left != 1 {
        return Err(FciError::Invalid("right boundary is not one-dimensional".into()));
    }
    Ok(cur)
}

/// Projects a Fock-space vector onto the determinants of `basis`.
pub fn fock_to_determinants(fock: &[f64], basis: &DeterminantBasis, order: &[usize]) -> Vec<f64> {
    basis
        .dets
        .iter()
        .map(|&d| {
            let (i, s) = det_to_fock(d, order);
            s * fock[i]
        })
        .collect()
}

/// Fock-space vector of determinant amplitudes.
pub fn fock_from_determinants(coeffs: &[f64], basis: &DeterminantBasis, order: &[usize]) -> Vec<f64> {
    let mut fock = vec![0.0; 4usize.pow(order.len() as u32)];
    for (&d, &c) in basis.dets.iter().zip(coeffs) {
        let (i, s) = det_to_fock(d, order);
        fock[i] = s * c;
    }
    fock
}

/// `<vector|mps>` with the MPS sites holding orbitals in `order`.
pub fn dense_overlap(vector: &[f64], basis: &DeterminantBasis, mps: &Mps, order: &[usize]) -> Result<f64> {
    if order.len() != basis.n_orb || mps.len() != basis.n_orb {
        return Err(FciError::Invalid("orbital count mismatch".into()));
    }
    let fock = mps_to_dense(mps)?;
    let c = fock_to_determinants(&fock, basis, order);
    Ok(vector.iter().zip(&c).map(|(a, b)| a * b).sum())
}
