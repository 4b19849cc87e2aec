//! Symbolic construction of the Hamiltonian MPO.
//!
//! Spin orbitals are numbered `2 * site + s` with `s = 0` for up and `s = 1`
//! for down. Fermionic signs use a Jordan-Wigner string on lower-numbered
//! modes, so a determinant is the ascending product of creation operators.
//! Every operator string is routed through the chain by channels: before its
//! first operator it travels on the identity channel, while the left part is
//! the shorter one it is carried as a left operator string, once the right part
//! is shorter it is carried as a right string, and after its last operator it
//! travels on the finished channel. The coefficient is applied exactly once, at
//! the mode where the channel switches from the left side to the right side.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::Arc;

use super::{check_order, Integrals, Result};
use crate::symtensor::{BlockTensor, Direction, Index, QNum};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LocalOp {
    /// creation
    C,
    /// annihilation
    D,
    /// occupation number
    N,
    /// hole number `1 - n`
    M,
}

impl LocalOp {
    pub fn is_odd(self) -> bool {
        matches!(self, LocalOp::C | LocalOp::D)
    }

    fn matrix(self) -> [[f64; 2]; 2] {
        match self {
            LocalOp::C => [[0.0, 0.0], [1.0, 0.0]],
            LocalOp::D => [[0.0, 1.0], [0.0, 0.0]],
            LocalOp::N => [[0.0, 0.0], [0.0, 1.0]],
            LocalOp::M => [[1.0, 0.0], [0.0, 0.0]],
        }
    }
}

/// Operators on strictly ascending spin-orbital modes.
pub type OpString = Vec<(u32, LocalOp)>;

pub fn op_flux(mode: u32, op: LocalOp) -> QNum {
    let s = if mode % 2 == 0 { 1 } else { -1 };
    match op {
        LocalOp::C => QNum::new(1, s),
        LocalOp::D => QNum::new(-1, -s),
        LocalOp::N | LocalOp::M => QNum::ZERO,
    }
}

fn string_flux(ops: &[(u32, LocalOp)]) -> QNum {
    ops.iter().fold(QNum::ZERO, |q, &(m, o)| q + op_flux(m, o))
}

fn parity(ops: &[(u32, LocalOp)]) -> bool {
    ops.iter().filter(|o| o.1.is_odd()).count() % 2 == 1
}

/// `<bra|A P^parity|ket>` for one spin orbital, indexed `[bra][ket]`.
pub fn local_matrix(op: Option<LocalOp>, parity: bool) -> [[f64; 2]; 2] {
    let mut a = op.map(|o| o.matrix()).unwrap_or([[1.0, 0.0], [0.0, 1.0]]);
    if parity {
        a[0][1] = -a[0][1];
        a[1][1] = -a[1][1];
    }
    a
}

fn mul2(a: [[f64; 2]; 2], b: [[f64; 2]; 2]) -> [[f64; 2]; 2] {
    let mut c = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            c[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    c
}

/// Normal-orders a product of creation (`true`) and annihilation (`false`)
/// operators, leftmost first, into ascending modes. Returns the sign and the
/// merged string, or `None` when the product vanishes.
pub fn canonicalize_ops(raw: &[(u32, bool)]) -> Option<(f64, OpString)> {
    let n = raw.len();
    let mut inversions = 0;
    for i in 0..n {
        for j in i + 1..n {
            if raw[i].0 > raw[j].0 {
                inversions += 1;
            }
        }
    }
    let mut sorted: Vec<(u32, bool)> = raw.to_vec();
    sorted.sort_by_key(|x| x.0);
    let mut out = OpString::new();
    let mut i = 0;
    while i < n {
        let mode = sorted[i].0;
        let mut m = [[1.0, 0.0], [0.0, 1.0]];
        while i < n && sorted[i].0 == mode {
            let op = if sorted[i].1 { LocalOp::C } else { LocalOp::D };
            m = mul2(m, op.matrix());
            i += 1;
        }
        let op = [LocalOp::C, LocalOp::D, LocalOp::N, LocalOp::M]
            .into_iter()
            .find(|o| o.matrix() == m);
        match op {
            Some(o) => out.push((mode, o)),
            None => {
                debug_assert!(m.iter().flatten().all(|&x| x == 0.0));
                return None;
            }
        }
    }
    let sign = if inversions % 2 == 0 { 1.0 } else { -1.0 };
    Some((sign, out))
}

#[derive(Clone, Debug, PartialEq)]
pub struct OpTerm {
    pub coeff: f64,
    pub ops: OpString,
}

/// All normal-ordered spin-orbital strings of `H - e_core`, merged and sorted.
pub fn hamiltonian_terms(ints: &Integrals) -> Vec<OpTerm> {
    let k = ints.n_orb;
    let mut acc: HashMap<OpString, f64> = HashMap::new();
    let mut add = |coeff: f64, raw: &[(u32, bool)]| {
        if let Some((sign, ops)) = canonicalize_ops(raw) {
            *acc.entry(ops).or_default() += sign * coeff;
        }
    };
    for p in 0..k {
        for q in 0..k {
            let h = ints.h(p, q);
            if h == 0.0 {
                continue;
            }
            for s in 0..2u32 {
                add(h, &[(2 * p as u32 + s, true), (2 * q as u32 + s, false)]);
            }
        }
    }
    for p in 0..k {
        for q in 0..k {
            for r in 0..k {
                for s in 0..k {
                    let v = ints.v(p, q, r, s);
                    if v == 0.0 {
                        continue;
                    }
                    for sig in 0..2u32 {
                        for tau in 0..2u32 {
                            let (ps, qs) = (2 * p as u32 + sig, 2 * q as u32 + sig);
                            let (rt, st) = (2 * r as u32 + tau, 2 * s as u32 + tau);
                            if ps == rt || st == qs {
                                continue;
                            }
                            add(0.5 * v, &[(ps, true), (rt, true), (st, false), (qs, false)]);
                        }
                    }
                }
            }
        }
    }
    let mut terms: Vec<OpTerm> = acc
        .into_iter()
        .filter(|(_, c)| c.abs() > 1e-14)
        .map(|(ops, coeff)| OpTerm { coeff, ops })
        .collect();
    terms.sort_by(|a, b| a.ops.cmp(&b.ops));
    terms
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Channel {
    Id,
    Left(OpString),
    Right(OpString),
    Done,
}

impl Channel {
    /// Accumulated operator flux of everything left of the bond.
    pub fn qnum(&self) -> QNum {
        match self {
            Channel::Id | Channel::Done => QNum::ZERO,
            Channel::Left(p) => string_flux(p),
            Channel::Right(s) => -string_flux(s),
        }
    }

    fn is_left_side(&self) -> bool {
        matches!(self, Channel::Id | Channel::Left(_))
    }
}

/// Channel carrying `ops` across spin-orbital bond `bond` (bond `b` separates
/// modes `< b` from modes `>= b`).
pub fn channel_at(ops: &[(u32, LocalOp)], bond: u32, n_modes: u32) -> Channel {
    let n_l = ops.iter().take_while(|o| o.0 < bond).count();
    let n_r = ops.len() - n_l;
    if n_l == 0 {
        Channel::Id
    } else if n_r == 0 {
        Channel::Done
    } else if n_l < n_r || (n_l == n_r && (n_l == 1 || 2 * bond <= n_modes)) {
        Channel::Left(ops[..n_l].to_vec())
    } else {
        Channel::Right(ops[n_l..].to_vec())
    }
}

/// Channel layout of one link: sorted by label, then by channel.
#[derive(Clone, Debug)]
pub struct BondChannels {
    pub channels: Vec<Channel>,
    pub position: HashMap<Channel, (usize, usize)>,
    /// Sectors of the link (direction set by the leg using it).
    pub index: Index,
}

impl BondChannels {
    fn new(set: BTreeSet<Channel>) -> Self {
        let mut channels: Vec<Channel> = set.into_iter().collect();
        channels.sort_by(|a, b| a.qnum().cmp(&b.qnum()).then(a.cmp(b)));
        let mut dims: BTreeMap<QNum, usize> = BTreeMap::new();
        for c in &channels {
            *dims.entry(c.qnum()).or_default() += 1;
        }
        let index = Index::merged(Direction::In, dims.iter().map(|(&q, &d)| (q, d)));
        let mut position = HashMap::new();
        let mut off: BTreeMap<QNum, usize> = BTreeMap::new();
        for c in &channels {
            let q = c.qnum();
            let o = off.entry(q).or_default();
            position.insert(c.clone(), (index.find(q).unwrap(), *o));
            *o += 1;
        }
        BondChannels { channels, position, index }
    }

    fn trivial() -> Self {
        BondChannels {
            channels: vec![Channel::Id],
            position: HashMap::from([(Channel::Id, (0, 0))]),
            index: Index::trivial(Direction::In, QNum::ZERO),
        }
    }

    pub fn dim(&self) -> usize {
        self.channels.len()
    }
}

/// Term list plus the channel layout of every spatial bond.
#[derive(Clone, Debug)]
pub struct SymbolicMpo {
    pub n_sites: usize,
    pub terms: Vec<OpTerm>,
    /// Links at spatial bonds `0..=n_sites`.
    pub bonds: Vec<BondChannels>,
}

impl SymbolicMpo {
    pub fn n_modes(&self) -> u32 {
        2 * self.n_sites as u32
    }

    /// Channel of term `t` at spatial bond `b`.
    pub fn channel(&self, t: usize, b: usize) -> Channel {
        channel_at(&self.terms[t].ops, 2 * b as u32, self.n_modes())
    }
}

type Local2 = [[f64; 2]; 2];

fn kron(a: &Local2, b: &Local2) -> [f64; 16] {
    // site basis index = 2 * n_up + n_dn, stored [bra][ket]
    let mut out = [0.0; 16];
    for ua in 0..2 {
        for da in 0..2 {
            for uk in 0..2 {
                for dk in 0..2 {
                    out[(2 * ua + da) * 4 + 2 * uk + dk] = a[ua][uk] * b[da][dk];
                }
            }
        }
    }
    out
}

/// Rank-4 site tensors `(left link: In, ket: Out, bra: In, right link: Out)`.
/// Link labels are the operator flux accumulated to the left of the bond.
#[derive(Clone, Debug)]
pub struct MpoChain {
    pub tensors: Vec<BlockTensor>,
    pub constant_shift: f64,
    pub symbolic: Option<Arc<SymbolicMpo>>,
}

impl MpoChain {
    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Physical index of site `i` as seen by an MPS (incoming).
    pub fn phys_index(&self, i: usize) -> &Index {
        self.tensors[i].index(2)
    }

    /// Identity operator times `scale` on the given physical indices.
    pub fn identity(phys: &[Index], scale: f64) -> Self {
        let link = Index::trivial(Direction::In, QNum::ZERO);
        let tensors = phys
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let p = p.with_dir(Direction::In);
                let mut w = BlockTensor::new(
                    vec![link.clone(), p.flipped(), p.clone(), link.flipped()],
                    QNum::ZERO,
                );
                for s in 0..p.n_sectors() {
                    let d = p.sector_dim(s);
                    let mut b = vec![0.0; d * d];
                    let f = if i == 0 { scale } else { 1.0 };
                    for j in 0..d {
                        b[j * d + j] = f;
                    }
                    w.insert_block(vec![0, s, s, 0], b).unwrap();
                }
                w
            })
            .collect();
        MpoChain { tensors, constant_shift: 0.0, symbolic: None }
    }

    pub fn max_link_dim(&self) -> usize {
        self.tensors.iter().map(|w| w.index(3).dim()).max().unwrap_or(0)
    }

    pub fn phys_dims(&self) -> Vec<usize> {
        self.tensors.iter().map(|w| w.index(1).dim()).collect()
    }

    /// Applies the operator to a dense vector over the product basis (site 0 slowest).
    pub fn apply_dense(&self, x: &[f64]) -> Vec<f64> {
        let dims = self.phys_dims();
        let total: usize = dims.iter().product();
        assert_eq!(x.len(), total, "dense vector length");
        // working layout [prefix(bra), link, rest(ket)]
        let mut cur = x.to_vec();
        let mut prefix = 1usize;
        let mut link = 1usize;
        for (i, w) in self.tensors.iter().enumerate() {
            let d = dims[i];
            let dl = w.index(0).dim();
            let dr = w.index(3).dim();
            assert_eq!(dl, link);
            let rest_after: usize = dims[i + 1..].iter().product();
            let wd = w.to_dense(); // [dl, d(ket), d(bra), dr] -> K = dl*d, J = d*dr
            let (kk, jj) = (dl * d, d * dr);
            let mut next = vec![0.0; prefix * jj * rest_after];
            for p in 0..prefix {
                let xs = &cur[p * kk * rest_after..(p + 1) * kk * rest_after];
                let ys = &mut next[p * jj * rest_after..(p + 1) * jj * rest_after];
                unsafe {
                    matrixmultiply::dgemm(
                        jj,
                        kk,
                        rest_after,
                        1.0,
                        wd.as_ptr(),
                        1,
                        jj as isize,
                        xs.as_ptr(),
                        rest_after as isize,
                        1,
                        0.0,
                        ys.as_mut_ptr(),
                        rest_after as isize,
                        1,
                    );
                }
            }
            cur = next;
            prefix *= d;
            link = dr;
        }
        assert_eq!(link, 1);
        cur.iter().zip(x).map(|(y, xi)| y + self.constant_shift * xi).collect()
    }

    /// Dense matrix `[bra][ket]`, row-major. Intended for small chains.
    pub fn to_dense(&self) -> Vec<f64> {
        let n: usize = self.phys_dims().iter().product();
        let mut out = vec![0.0; n * n];
        let mut e = vec![0.0; n];
        for j in 0..n {
            e[j] = 1.0;
            let col = self.apply_dense(&e);
            for i in 0..n {
                out[i * n + j] = col[i];
            }
            e[j] = 0.0;
        }
        out
    }
}

/// Hamiltonian MPO over spatial orbitals taken in the sequence `order`
/// (site `i` holds orbital `order[i]`).
pub fn build_hamiltonian_mpo(ints: &Integrals, order: &[usize]) -> Result<MpoChain> {
    check_order(order, ints.n_orb)?;
    let permuted;
    let ints = if order.iter().enumerate().all(|(i, &o)| i == o) {
        ints
    } else {
        permuted = ints.permuted(order)?;
        &permuted
    };
    let terms = hamiltonian_terms(ints);
    Ok(mpo_from_terms(ints.n_orb, terms, ints.e_core))
}

/// Assembles the spatial-site MPO of a sum of normal-ordered strings.
pub fn mpo_from_terms(n_sites: usize, terms: Vec<OpTerm>, constant_shift: f64) -> MpoChain {
    let n_modes = 2 * n_sites as u32;
    let phys = Index::spatial_site(Direction::In);
    if terms.is_empty() {
        let link = Index::trivial(Direction::In, QNum::ZERO);
        let tensors = (0..n_sites)
            .map(|_| {
                BlockTensor::new(vec![link.clone(), phys.flipped(), phys.clone(), link.flipped()], QNum::ZERO)
            })
            .collect();
        let bonds = (0..=n_sites).map(|_| BondChannels::trivial()).collect();
        let sym = SymbolicMpo { n_sites, terms, bonds };
        return MpoChain { tensors, constant_shift, symbolic: Some(Arc::new(sym)) };
    }

    // channels on every spin-orbital bond
    let mut sets: Vec<BTreeSet<Channel>> = vec![BTreeSet::new(); n_modes as usize + 1];
    for t in &terms {
        for b in 0..=n_modes {
            sets[b as usize].insert(channel_at(&t.ops, b, n_modes));
        }
    }
    let bonds: Vec<BondChannels> = sets.into_iter().map(BondChannels::new).collect();

    // spin-orbital transfer entries: (in position, out position) -> 2x2
    let mut mode_entries: Vec<HashMap<(usize, usize), Local2>> =
        vec![HashMap::new(); n_modes as usize];
    let pos_of = |b: usize, c: &Channel| -> usize {
        let bc = &bonds[b];
        let (s, o) = bc.position[c];
        bc.index.offset(s) + o
    };
    let id_mat = local_matrix(None, false);
    for m in 0..n_modes {
        let (bi, bo) = (m as usize, m as usize + 1);
        if bonds[bi].position.contains_key(&Channel::Id) && bonds[bo].position.contains_key(&Channel::Id)
        {
            mode_entries[m as usize].insert((pos_of(bi, &Channel::Id), pos_of(bo, &Channel::Id)), id_mat);
        }
        if bonds[bi].position.contains_key(&Channel::Done)
            && bonds[bo].position.contains_key(&Channel::Done)
        {
            mode_entries[m as usize]
                .insert((pos_of(bi, &Channel::Done), pos_of(bo, &Channel::Done)), id_mat);
        }
    }
    for t in &terms {
        let first = t.ops[0].0;
        let last = t.ops[t.ops.len() - 1].0;
        for m in first..=last {
            let cin = channel_at(&t.ops, m, n_modes);
            let cout = channel_at(&t.ops, m + 1, n_modes);
            let op = t.ops.iter().find(|o| o.0 == m).map(|o| o.1);
            let r = parity(&t.ops[t.ops.iter().take_while(|o| o.0 <= m).count()..]);
            let local = local_matrix(op, r);
            let key = (pos_of(m as usize, &cin), pos_of(m as usize + 1, &cout));
            let entries = &mut mode_entries[m as usize];
            if cin.is_left_side() && !cout.is_left_side() {
                let e = entries.entry(key).or_insert([[0.0; 2]; 2]);
                for i in 0..2 {
                    for j in 0..2 {
                        e[i][j] += t.coeff * local[i][j];
                    }
                }
            } else {
                entries.insert(key, local);
            }
        }
    }

    // fuse up/down modes into spatial sites
    let mut tensors = Vec::with_capacity(n_sites);
    for site in 0..n_sites {
        let (lb, rb) = (&bonds[2 * site], &bonds[2 * site + 2]);
        let up = &mode_entries[2 * site];
        let dn = &mode_entries[2 * site + 1];
        let mut by_mid: HashMap<usize, Vec<(usize, &Local2)>> = HashMap::new();
        for (&(mid, out), mat) in dn {
            by_mid.entry(mid).or_default().push((out, mat));
        }
        let mut fused: BTreeMap<(usize, usize), [f64; 16]> = BTreeMap::new();
        for (&(inp, mid), a) in up {
            if let Some(list) = by_mid.get(&mid) {
                for &(out, b) in list {
                    let k = kron(a, b);
                    let e = fused.entry((inp, out)).or_insert([0.0; 16]);
                    for i in 0..16 {
                        e[i] += k[i];
                    }
                }
            }
        }
        let left = lb.index.with_dir(Direction::In);
        let right = rb.index.with_dir(Direction::Out);
        let mut w = BlockTensor::new(
            vec![left.clone(), phys.flipped(), phys.clone(), right.clone()],
            QNum::ZERO,
        );
        for ((inp, out), mat) in fused {
            let (ls, lo) = left.locate(inp).unwrap();
            let (rs, ro) = right.locate(out).unwrap();
            let (dl, dr) = (left.sector_dim(ls), right.sector_dim(rs));
            for bra in 0..4 {
                for ket in 0..4 {
                    let x = mat[bra * 4 + ket];
                    if x == 0.0 {
                        continue;
                    }
                    let key = vec![ls, ket, bra, rs];
                    if !w.allowed(&key) {
                        debug_assert!(false, "entry violates flux");
                        continue;
                    }
                    if w.block(&key).is_none() {
                        w.insert_block(key.clone(), vec![0.0; dl * dr]).unwrap();
                    }
                    w.block_mut(&key).unwrap()[lo * dr + ro] += x;
                }
            }
        }
        tensors.push(w);
    }
    let spatial_bonds = (0..=n_sites).map(|b| bonds[2 * b].clone()).collect();
    let sym = SymbolicMpo { n_sites, terms, bonds: spatial_bonds };
    MpoChain { tensors, constant_shift, symbolic: Some(Arc::new(sym)) }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hamio::{build_hubbard, Integrals};

    #[test]
    fn canonical_ordering_signs() {
        // a_2^+ a_0 = - a_0 a_2^+
        let (s, ops) = canonicalize_ops(&[(2, true), (0, false)]).unwrap();
        assert_eq!(s, -1.0);
        assert_eq!(ops, vec![(0, LocalOp::D), (2, LocalOp::C)]);
        let (s, ops) = canonicalize_ops(&[(1, true), (1, false)]).unwrap();
        assert_eq!((s, ops), (1.0, vec![(1, LocalOp::N)]));
        let (_, ops) = canonicalize_ops(&[(1, false), (1, true)]).unwrap();
        assert_eq!(ops, vec![(1, LocalOp::M)]);
        assert!(canonicalize_ops(&[(3, true), (3, true)]).is_none());
    }

    #[test]
    fn channel_routing() {
        let ops = vec![(0, LocalOp::C), (3, LocalOp::C), (5, LocalOp::D), (7, LocalOp::D)];
        assert_eq!(channel_at(&ops, 0, 8), Channel::Id);
        assert_eq!(channel_at(&ops, 1, 8), Channel::Left(ops[..1].to_vec()));
        assert_eq!(channel_at(&ops, 4, 8), Channel::Left(ops[..2].to_vec()));
        assert_eq!(channel_at(&ops, 5, 8), Channel::Right(ops[2..].to_vec()));
        assert_eq!(channel_at(&ops, 6, 8), Channel::Right(ops[3..].to_vec()));
        assert_eq!(channel_at(&ops, 8, 8), Channel::Done);
    }

    #[test]
    fn constant_only_operator() {
        let mut ints = Integrals::zeros(3, 2, 0);
        ints.e_core = -3.5;
        let mpo = build_hamiltonian_mpo(&ints, &[0, 1, 2]).unwrap();
        assert_eq!(mpo.max_link_dim(), 1);
        let x: Vec<f64> = (0..64).map(|i| (i as f64).sin()).collect();
        let y = mpo.apply_dense(&x);
        for (a, b) in x.iter().zip(&y) {
            assert!((b + 3.5 * a).abs() < 1e-14);
        }
    }

    #[test]
    fn dimer_hamiltonian_is_symmetric() {
        let ints = build_hubbard(2, &[1.0], 4.0).unwrap();
        let mpo = build_hamiltonian_mpo(&ints, &[0, 1]).unwrap();
        let h = mpo.to_dense();
        for i in 0..16 {
            for j in 0..16 {
                assert!((h[i * 16 + j] - h[j * 16 + i]).abs() < 1e-12);
            }
        }
        // doubly occupied site 0, empty site 1: energy U
        let idx = 3 * 4;
        assert!((h[idx * 16 + idx] - 4.0).abs() < 1e-12);
    }
}
