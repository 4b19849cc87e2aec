//! Block-sparse tensors labelled by Abelian quantum numbers `(N, 2Sz)`.

mod contract;
mod davidson;
mod linalg;
mod serial;

use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Add, AddAssign, Neg, Sub};

use rand::Rng;
use thiserror::Error;

pub use contract::permute_block;
pub use davidson::{davidson, hermitian_eigensolve_lowest, DavidsonOptions, EigenResult};
pub use linalg::{
    dense_symmetric_eigen, eigh_truncate, qr_split, select_spectrum, svd_truncate, LegGroup,
    Matricized, SvdResult, TruncationSpec,
};
pub use serial::{read_tensor, write_tensor};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("incompatible index: {0}")]
    IncompatibleIndex(String),
    #[error("rank error: {0}")]
    RankError(String),
    #[error("block violates flux rule: {0}")]
    FluxViolation(String),
    #[error("empty spectrum after truncation")]
    EmptySpectrum,
    #[error("eigensolver did not converge after {iterations} iterations (residual {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("malformed tensor data: {0}")]
    Malformed(String),
    #[error("io: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, TensorError>;

/// Conserved label: particle number and twice the spin projection.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct QNum {
    pub n: i32,
    pub two_sz: i32,
}

impl QNum {
    pub const ZERO: QNum = QNum { n: 0, two_sz: 0 };

    pub const fn new(n: i32, two_sz: i32) -> Self {
        QNum { n, two_sz }
    }

    pub(crate) fn scaled(self, s: i32) -> Self {
        QNum::new(self.n * s, self.two_sz * s)
    }
}

impl fmt::Display for QNum {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.n, self.two_sz)
    }
}

impl Add for QNum {
    type Output = QNum;
    fn add(self, o: QNum) -> QNum {
        QNum::new(self.n + o.n, self.two_sz + o.two_sz)
    }
}

impl AddAssign for QNum {
    fn add_assign(&mut self, o: QNum) {
        self.n += o.n;
        self.two_sz += o.two_sz;
    }
}

impl Sub for QNum {
    type Output = QNum;
    fn sub(self, o: QNum) -> QNum {
        QNum::new(self.n - o.n, self.two_sz - o.two_sz)
    }
}

impl Neg for QNum {
    type Output = QNum;
    fn neg(self) -> QNum {
        QNum::new(-self.n, -self.two_sz)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Direction {
    In,
    Out,
}

impl Direction {
    pub fn flip(self) -> Self {
        match self {
            Direction::In => Direction::Out,
            Direction::Out => Direction::In,
        }
    }

    /// +1 for outgoing legs, -1 for incoming legs.
    pub fn sign(self) -> i32 {
        match self {
            Direction::In => -1,
            Direction::Out => 1,
        }
    }
}

/// A tensor leg: direction plus sorted `(QNum, dim)` sectors.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Index {
    dir: Direction,
    sectors: Vec<(QNum, usize)>,
}

impl Index {
    pub fn new(dir: Direction, mut sectors: Vec<(QNum, usize)>) -> Result<Self> {
        sectors.sort_by_key(|s| s.0);
        for w in sectors.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(TensorError::IncompatibleIndex(format!(
                    "duplicate sector {}",
                    w[0].0
                )));
            }
        }
        if sectors.iter().any(|s| s.1 == 0) {
            return Err(TensorError::IncompatibleIndex("zero-dimensional sector".into()));
        }
        Ok(Index { dir, sectors })
    }

    /// Builds an index from sectors that may repeat; dimensions of equal labels are summed.
    pub fn merged(dir: Direction, sectors: impl IntoIterator<Item = (QNum, usize)>) -> Self {
        let mut map: BTreeMap<QNum, usize> = BTreeMap::new();
        for (q, d) in sectors {
            if d > 0 {
                *map.entry(q).or_default() += d;
            }
        }
        Index { dir, sectors: map.into_iter().collect() }
    }

    /// Single one-dimensional sector.
    pub fn trivial(dir: Direction, q: QNum) -> Self {
        Index { dir, sectors: vec![(q, 1)] }
    }

    /// Spatial orbital: vacuum, down, up, doubly occupied.
    pub fn spatial_site(dir: Direction) -> Self {
        Index {
            dir,
            sectors: vec![
                (QNum::new(0, 0), 1),
                (QNum::new(1, -1), 1),
                (QNum::new(1, 1), 1),
                (QNum::new(2, 0), 1),
            ],
        }
    }

    pub fn dir(&self) -> Direction {
        self.dir
    }

    pub fn sectors(&self) -> &[(QNum, usize)] {
        &self.sectors
    }

    pub fn n_sectors(&self) -> usize {
        self.sectors.len()
    }

    pub fn qnum(&self, s: usize) -> QNum {
        self.sectors[s].0
    }

    pub fn sector_dim(&self, s: usize) -> usize {
        self.sectors[s].1
    }

    pub fn dim(&self) -> usize {
        self.sectors.iter().map(|s| s.1).sum()
    }

    pub fn find(&self, q: QNum) -> Option<usize> {
        self.sectors.binary_search_by_key(&q, |s| s.0).ok()
    }

    /// Dense offset of sector `s`.
    pub fn offset(&self, s: usize) -> usize {
        self.sectors[..s].iter().map(|x| x.1).sum()
    }

    /// Sector id and in-sector position of dense position `i`.
    pub fn locate(&self, mut i: usize) -> Option<(usize, usize)> {
        for (s, &(_, d)) in self.sectors.iter().enumerate() {
            if i < d {
                return Some((s, i));
            }
            i -= d;
        }
        None
    }

    pub fn flipped(&self) -> Self {
        Index { dir: self.dir.flip(), sectors: self.sectors.clone() }
    }

    pub fn with_dir(&self, dir: Direction) -> Self {
        Index { dir, sectors: self.sectors.clone() }
    }

    /// Same direction, every label shifted by `q`.
    pub fn shifted(&self, q: QNum) -> Self {
        Index { dir: self.dir, sectors: self.sectors.iter().map(|&(p, d)| (p + q, d)).collect() }
    }

    pub fn same_sectors(&self, other: &Index) -> bool {
        self.sectors == other.sectors
    }
}

pub type BlockKey = Vec<usize>;

/// Block-sparse real tensor. Blocks are dense row-major arrays keyed by
/// per-leg sector ids; only blocks satisfying the flux rule may be stored.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockTensor {
    indices: Vec<Index>,
    flux: QNum,
    blocks: BTreeMap<BlockKey, Vec<f64>>,
}

impl BlockTensor {
    pub fn new(indices: Vec<Index>, flux: QNum) -> Self {
        BlockTensor { indices, flux, blocks: BTreeMap::new() }
    }

    /// Scalar (rank-0) tensor.
    pub fn scalar(v: f64) -> Self {
        let mut t = BlockTensor::new(vec![], QNum::ZERO);
        t.blocks.insert(vec![], vec![v]);
        t
    }

    /// All allowed blocks present and zero.
    pub fn zeros(indices: Vec<Index>, flux: QNum) -> Self {
        let mut t = BlockTensor::new(indices, flux);
        for key in t.allowed_keys() {
            let n = t.block_len(&key);
            t.blocks.insert(key, vec![0.0; n]);
        }
        t
    }

    pub fn random<R: Rng + ?Sized>(indices: Vec<Index>, flux: QNum, rng: &mut R) -> Self {
        let mut t = BlockTensor::new(indices, flux);
        for key in t.allowed_keys() {
            let n = t.block_len(&key);
            t.blocks.insert(key, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect());
        }
        t
    }

    /// Identity map between `idx` (incoming) and its outgoing copy.
    pub fn identity(idx: &Index) -> Self {
        let inn = idx.with_dir(Direction::In);
        let out = idx.with_dir(Direction::Out);
        let mut t = BlockTensor::new(vec![inn, out], QNum::ZERO);
        for s in 0..idx.n_sectors() {
            let d = idx.sector_dim(s);
            let mut b = vec![0.0; d * d];
            for i in 0..d {
                b[i * d + i] = 1.0;
            }
            t.blocks.insert(vec![s, s], b);
        }
        t
    }

    pub fn indices(&self) -> &[Index] {
        &self.indices
    }

    pub fn index(&self, leg: usize) -> &Index {
        &self.indices[leg]
    }

    pub fn rank(&self) -> usize {
        self.indices.len()
    }

    pub fn flux(&self) -> QNum {
        self.flux
    }

    pub fn blocks(&self) -> &BTreeMap<BlockKey, Vec<f64>> {
        &self.blocks
    }

    pub fn n_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn block(&self, key: &[usize]) -> Option<&[f64]> {
        self.blocks.get(key).map(|b| b.as_slice())
    }

    pub fn block_mut(&mut self, key: &[usize]) -> Option<&mut Vec<f64>> {
        self.blocks.get_mut(key)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.indices.iter().map(|i| i.dim()).collect()
    }

    pub fn block_shape(&self, key: &[usize]) -> Vec<usize> {
        key.iter().zip(&self.indices).map(|(&s, idx)| idx.sector_dim(s)).collect()
    }

    pub fn block_len(&self, key: &[usize]) -> usize {
        key.iter().zip(&self.indices).map(|(&s, idx)| idx.sector_dim(s)).product()
    }

    pub fn key_flux(&self, key: &[usize]) -> QNum {
        let mut q = QNum::ZERO;
        for (&s, idx) in key.iter().zip(&self.indices) {
            q += idx.qnum(s).scaled(idx.dir().sign());
        }
        q
    }

    pub fn allowed(&self, key: &[usize]) -> bool {
        key.len() == self.indices.len()
            && key.iter().zip(&self.indices).all(|(&s, i)| s < i.n_sectors())
            && self.key_flux(key) == self.flux
    }

    /// Every sector combination compatible with the flux, in lexicographic order.
    pub fn allowed_keys(&self) -> Vec<BlockKey> {
        allowed_keys_for(&self.indices, self.flux)
    }

    pub fn insert_block(&mut self, key: BlockKey, data: Vec<f64>) -> Result<()> {
        if !self.allowed(&key) {
            return Err(TensorError::FluxViolation(format!("{key:?}")));
        }
        if data.len() != self.block_len(&key) {
            return Err(TensorError::RankError(format!(
                "block {key:?} has {} values, expected {}",
                data.len(),
                self.block_len(&key)
            )));
        }
        self.blocks.insert(key, data);
        Ok(())
    }

    /// Adds `alpha * data` into block `key`, creating it if missing.
    pub fn add_to_block(&mut self, key: &[usize], alpha: f64, data: &[f64]) -> Result<()> {
        if let Some(b) = self.blocks.get_mut(key) {
            for (x, y) in b.iter_mut().zip(data) {
                *x += alpha * y;
            }
            return Ok(());
        }
        self.insert_block(key.to_vec(), data.iter().map(|x| alpha * x).collect())
    }

    pub fn remove_block(&mut self, key: &[usize]) -> Option<Vec<f64>> {
        self.blocks.remove(key)
    }

    pub fn retain_blocks(&mut self, mut f: impl FnMut(&BlockKey, &Vec<f64>) -> bool) {
        self.blocks.retain(|k, v| f(k, v));
    }

    /// Drops blocks whose entries are all exactly zero.
    pub fn prune_zero_blocks(&mut self) {
        self.blocks.retain(|_, b| b.iter().any(|&x| x != 0.0));
    }

    /// Element access by dense multi-index.
    pub fn get(&self, pos: &[usize]) -> f64 {
        let mut key = Vec::with_capacity(pos.len());
        let mut inner = Vec::with_capacity(pos.len());
        for (&p, idx) in pos.iter().zip(&self.indices) {
            let (s, i) = idx.locate(p).expect("position out of range");
            key.push(s);
            inner.push(i);
        }
        match self.blocks.get(&key) {
            None => 0.0,
            Some(b) => b[row_major_offset(&self.block_shape(&key), &inner)],
        }
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let shape = self.shape();
        let total: usize = shape.iter().product();
        let mut out = vec![0.0; total.max(1)];
        if self.indices.is_empty() {
            out[0] = self.blocks.get(&vec![]).map(|b| b[0]).unwrap_or(0.0);
            return out;
        }
        for (key, data) in &self.blocks {
            let bshape = self.block_shape(key);
            let offs: Vec<usize> =
                key.iter().zip(&self.indices).map(|(&s, idx)| idx.offset(s)).collect();
            for_each_multi_index(&bshape, |lin, mi| {
                let mut pos = 0;
                for d in 0..mi.len() {
                    pos = pos * shape[d] + offs[d] + mi[d];
                }
                out[pos] = data[lin];
            });
        }
        out
    }

    /// Copies the allowed blocks of a dense row-major array; entries outside
    /// allowed blocks are ignored and all-zero blocks are not stored.
    pub fn from_dense(indices: Vec<Index>, flux: QNum, data: &[f64]) -> Result<Self> {
        let shape: Vec<usize> = indices.iter().map(|i| i.dim()).collect();
        let total: usize = shape.iter().product();
        if data.len() != total.max(1) {
            return Err(TensorError::RankError(format!(
                "dense array has {} values, expected {}",
                data.len(),
                total
            )));
        }
        let mut t = BlockTensor::new(indices, flux);
        if t.indices.is_empty() {
            t.blocks.insert(vec![], vec![data[0]]);
            return Ok(t);
        }
        for key in t.allowed_keys() {
            let bshape = t.block_shape(&key);
            let offs: Vec<usize> =
                key.iter().zip(&t.indices).map(|(&s, idx)| idx.offset(s)).collect();
            let mut b = vec![0.0; bshape.iter().product()];
            for_each_multi_index(&bshape, |lin, mi| {
                let mut pos = 0;
                for d in 0..mi.len() {
                    pos = pos * shape[d] + offs[d] + mi[d];
                }
                b[lin] = data[pos];
            });
            if b.iter().any(|&x| x != 0.0) {
                t.blocks.insert(key, b);
            }
        }
        Ok(t)
    }

    pub fn scale(&mut self, alpha: f64) {
        for b in self.blocks.values_mut() {
            for x in b.iter_mut() {
                *x *= alpha;
            }
        }
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        let mut t = self.clone();
        t.scale(alpha);
        t
    }

    /// `self += alpha * other`; index structures must agree.
    pub fn axpy(&mut self, alpha: f64, other: &BlockTensor) -> Result<()> {
        self.check_same_structure(other)?;
        for (k, b) in &other.blocks {
            self.add_to_block(k, alpha, b)?;
        }
        Ok(())
    }

    pub fn dot(&self, other: &BlockTensor) -> Result<f64> {
        self.check_same_structure(other)?;
        let mut s = 0.0;
        for (k, a) in &self.blocks {
            if let Some(b) = other.blocks.get(k) {
                s += a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
            }
        }
        Ok(s)
    }

    pub fn norm_sqr(&self) -> f64 {
        self.blocks.values().flat_map(|b| b.iter()).map(|x| x * x).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.blocks.values().flat_map(|b| b.iter()).fold(0.0, |m, x| m.max(x.abs()))
    }

    /// Max-abs difference of dense embeddings, without forming them.
    pub fn max_abs_diff(&self, other: &BlockTensor) -> Result<f64> {
        self.check_same_structure(other)?;
        let mut m: f64 = 0.0;
        for (k, a) in &self.blocks {
            match other.blocks.get(k) {
                Some(b) => {
                    for (x, y) in a.iter().zip(b) {
                        m = m.max((x - y).abs());
                    }
                }
                None => m = m.max(a.iter().fold(0.0f64, |s, x| s.max(x.abs()))),
            }
        }
        for (k, b) in &other.blocks {
            if !self.blocks.contains_key(k) {
                m = m.max(b.iter().fold(0.0f64, |s, x| s.max(x.abs())));
            }
        }
        Ok(m)
    }

    fn check_same_structure(&self, other: &BlockTensor) -> Result<()> {
        if self.indices != other.indices || self.flux != other.flux {
            return Err(TensorError::IncompatibleIndex("tensor structures differ".into()));
        }
        Ok(())
    }

    /// Reorders legs: leg `i` of the result is leg `perm[i]` of `self`.
    pub fn permute(&self, perm: &[usize]) -> Result<Self> {
        check_perm(perm, self.rank())?;
        let indices = perm.iter().map(|&p| self.indices[p].clone()).collect();
        let mut t = BlockTensor::new(indices, self.flux);
        for (k, b) in &self.blocks {
            let shape = self.block_shape(k);
            let nk: Vec<usize> = perm.iter().map(|&p| k[p]).collect();
            t.blocks.insert(nk, permute_block(b, &shape, perm));
        }
        Ok(t)
    }

    /// Flips every leg direction and negates the flux.
    pub fn dagger(&self) -> Self {
        BlockTensor {
            indices: self.indices.iter().map(|i| i.flipped()).collect(),
            flux: -self.flux,
            blocks: self.blocks.clone(),
        }
    }

    /// Replaces the index of one leg with a relabelled copy; the flux changes so
    /// that every stored block stays allowed.
    pub fn shift_leg(&mut self, leg: usize, q: QNum) {
        let s = self.indices[leg].dir().sign();
        self.indices[leg] = self.indices[leg].shifted(q);
        self.flux += q.scaled(s);
    }

    pub fn set_dir(&mut self, leg: usize, dir: Direction) {
        let idx = &self.indices[leg];
        if idx.dir() == dir {
            return;
        }
        // Flip direction and label sign together so the flux rule is unchanged.
        let sectors: Vec<(QNum, usize)> = idx.sectors.iter().map(|&(q, d)| (-q, d)).collect();
        let n = sectors.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by_key(|&i| sectors[i].0);
        let mut new_pos = vec![0; n];
        for (p, &o) in order.iter().enumerate() {
            new_pos[o] = p;
        }
        self.indices[leg] = Index { dir, sectors: order.iter().map(|&o| sectors[o]).collect() };
        let old = std::mem::take(&mut self.blocks);
        for (mut k, b) in old {
            k[leg] = new_pos[k[leg]];
            self.blocks.insert(k, b);
        }
    }

    /// Flattened data of all blocks of `template` order; missing blocks read as zeros.
    pub fn flatten_like(&self, template: &BlockTensor) -> Vec<f64> {
        let mut v = Vec::new();
        for (k, b) in &template.blocks {
            match self.blocks.get(k) {
                Some(x) => v.extend_from_slice(x),
                None => v.extend(std::iter::repeat(0.0).take(b.len())),
            }
        }
        v
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.blocks.values().flat_map(|b| b.iter().copied()).collect()
    }

    /// Inverse of `flatten` with the block layout of `self`.
    pub fn unflatten(&self, data: &[f64]) -> Self {
        let mut t = BlockTensor::new(self.indices.clone(), self.flux);
        let mut off = 0;
        for (k, b) in &self.blocks {
            t.blocks.insert(k.clone(), data[off..off + b.len()].to_vec());
            off += b.len();
        }
        t
    }

    pub fn dense_len(&self) -> usize {
        self.blocks.values().map(|b| b.len()).sum()
    }

    /// Fills all allowed blocks that are missing with zeros.
    pub fn fill_allowed(&mut self) {
        for key in self.allowed_keys() {
            if !self.blocks.contains_key(&key) {
                let n = self.block_len(&key);
                self.blocks.insert(key, vec![0.0; n]);
            }
        }
    }

    pub fn contract(&self, other: &BlockTensor, pairs: &[(usize, usize)]) -> Result<BlockTensor> {
        contract::contract(self, other, pairs)
    }

    /// Groups `row_legs` into rows and the remaining legs into columns.
    pub fn matricize(&self, row_legs: &[usize]) -> Result<Matricized> {
        Matricized::new(self, row_legs)
    }
}

pub(crate) fn check_perm(perm: &[usize], rank: usize) -> Result<()> {
    let mut seen = vec![false; rank];
    if perm.len() != rank {
        return Err(TensorError::RankError(format!("permutation of length {} for rank {rank}", perm.len())));
    }
    for &p in perm {
        if p >= rank || seen[p] {
            return Err(TensorError::RankError(format!("invalid permutation {perm:?}")));
        }
        seen[p] = true;
    }
    Ok(())
}

pub(crate) fn row_major_offset(shape: &[usize], idx: &[usize]) -> usize {
    let mut o = 0;
    for d in 0..shape.len() {
        o = o * shape[d] + idx[d];
    }
    o
}

pub(crate) fn for_each_multi_index(shape: &[usize], mut f: impl FnMut(usize, &[usize])) {
    let total: usize = shape.iter().product();
    if total == 0 {
        return;
    }
    let mut mi = vec![0usize; shape.len()];
    for lin in 0..total {
        f(lin, &mi);
        for d in (0..shape.len()).rev() {
            mi[d] += 1;
            if mi[d] < shape[d] {
                break;
            }
            mi[d] = 0;
        }
    }
}

pub(crate) fn allowed_keys_for(indices: &[Index], flux: QNum) -> Vec<BlockKey> {
    let r = indices.len();
    if r == 0 {
        return if flux == QNum::ZERO { vec![vec![]] } else { vec![] };
    }
    let mut out = Vec::new();
    let mut key = vec![0usize; r];
    let last = &indices[r - 1];
    loop {
        let mut q = QNum::ZERO;
        for d in 0..r - 1 {
            q += indices[d].qnum(key[d]).scaled(indices[d].dir().sign());
        }
        // need q + s_last * q_last == flux
        let need = (flux - q).scaled(last.dir().sign());
        if let Some(s) = last.find(need) {
            key[r - 1] = s;
            out.push(key.clone());
        }
        let mut d = r - 1;
        loop {
            if d == 0 {
                return out;
            }
            d -= 1;
            key[d] += 1;
            if key[d] < indices[d].n_sectors() {
                break;
            }
            key[d] = 0;
        }
    }
}
