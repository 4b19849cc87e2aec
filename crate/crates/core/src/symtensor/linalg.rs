use std::collections::{BTreeMap, HashMap};

use nalgebra::DMatrix;

use super::contract::permute_block;
use super::{BlockTensor, Direction, Index, QNum, Result, TensorError};

/// Fused view of a group of legs: every sector combination is assigned a
/// fused label `sum(sign * q)` and a row range inside that label's block.
#[derive(Clone, Debug)]
pub struct LegGroup {
    pub legs: Vec<usize>,
    pub indices: Vec<Index>,
    parts: BTreeMap<QNum, Vec<(Vec<usize>, usize, usize)>>,
    pos: HashMap<Vec<usize>, (QNum, usize, usize)>,
    dims: BTreeMap<QNum, usize>,
}

impl LegGroup {
    pub fn new(legs: Vec<usize>, indices: Vec<Index>) -> Self {
        let mut parts: BTreeMap<QNum, Vec<(Vec<usize>, usize, usize)>> = BTreeMap::new();
        let mut pos = HashMap::new();
        let mut dims: BTreeMap<QNum, usize> = BTreeMap::new();
        let r = indices.len();
        let mut key = vec![0usize; r];
        loop {
            let mut q = QNum::ZERO;
            let mut size = 1;
            for d in 0..r {
                let s = indices[d].dir().sign();
                let l = indices[d].qnum(key[d]);
                q += QNum::new(l.n * s, l.two_sz * s);
                size *= indices[d].sector_dim(key[d]);
            }
            let off = dims.entry(q).or_default();
            parts.entry(q).or_default().push((key.clone(), *off, size));
            pos.insert(key.clone(), (q, *off, size));
            *off += size;
            let mut d = r;
            loop {
                if d == 0 {
                    return LegGroup { legs, indices, parts, pos, dims };
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

    pub fn dim(&self, q: QNum) -> usize {
        self.dims.get(&q).copied().unwrap_or(0)
    }

    pub fn labels(&self) -> impl Iterator<Item = QNum> + '_ {
        self.dims.keys().copied()
    }

    pub fn parts(&self, q: QNum) -> &[(Vec<usize>, usize, usize)] {
        self.parts.get(&q).map(|v| v.as_slice()).unwrap_or(&[])
    }

    pub fn locate(&self, subkey: &[usize]) -> Option<(QNum, usize, usize)> {
        self.pos.get(subkey).copied()
    }
}

/// A block tensor reshaped into one dense matrix per fused row label.
#[derive(Clone, Debug)]
pub struct Matricized {
    pub row: LegGroup,
    pub col: LegGroup,
    pub flux: QNum,
    pub mats: BTreeMap<QNum, DMatrix<f64>>,
}

impl Matricized {
    pub fn new(t: &BlockTensor, row_legs: &[usize]) -> Result<Self> {
        let r = t.rank();
        let mut is_row = vec![false; r];
        for &l in row_legs {
            if l >= r || is_row[l] {
                return Err(TensorError::RankError(format!("bad row legs {row_legs:?}")));
            }
            is_row[l] = true;
        }
        let col_legs: Vec<usize> = (0..r).filter(|&l| !is_row[l]).collect();
        let row = LegGroup::new(
            row_legs.to_vec(),
            row_legs.iter().map(|&l| t.index(l).clone()).collect(),
        );
        let col =
            LegGroup::new(col_legs.clone(), col_legs.iter().map(|&l| t.index(l).clone()).collect());
        let perm: Vec<usize> = row_legs.iter().chain(&col_legs).copied().collect();
        let mut mats: BTreeMap<QNum, DMatrix<f64>> = BTreeMap::new();
        for (key, data) in t.blocks() {
            let rk: Vec<usize> = row_legs.iter().map(|&l| key[l]).collect();
            let ck: Vec<usize> = col_legs.iter().map(|&l| key[l]).collect();
            let (q, ro, rs) = row.locate(&rk).expect("row combination");
            let (_, co, cs) = col.locate(&ck).expect("col combination");
            let p = permute_block(data, &t.block_shape(key), &perm);
            let (nr, nc) = (row.dim(q), col.dim(t.flux() - q));
            let m = mats.entry(q).or_insert_with(|| DMatrix::zeros(nr, nc));
            for i in 0..rs {
                for j in 0..cs {
                    m[(ro + i, co + j)] = p[i * cs + j];
                }
            }
        }
        Ok(Matricized { row, col, flux: t.flux(), mats })
    }

    /// Rebuilds a tensor with legs ordered rows first, then columns.
    pub fn to_tensor(&self) -> BlockTensor {
        let indices: Vec<Index> =
            self.row.indices.iter().chain(&self.col.indices).cloned().collect();
        let mut t = BlockTensor::new(indices, self.flux);
        for (&q, m) in &self.mats {
            for (rk, ro, rs) in self.row.parts(q) {
                for (ck, co, cs) in self.col.parts(self.flux - q) {
                    let mut b = vec![0.0; rs * cs];
                    for i in 0..*rs {
                        for j in 0..*cs {
                            b[i * cs + j] = m[(ro + i, co + j)];
                        }
                    }
                    if b.iter().any(|&x| x != 0.0) {
                        let mut key = rk.clone();
                        key.extend_from_slice(ck);
                        t.blocks.insert(key, b);
                    }
                }
            }
        }
        t
    }
}

/// Builds a tensor with legs `group` + one new outgoing leg from per-label
/// column blocks. The new leg carries label `-q` for fused row label `q`.
fn isometry_from_columns(group: &LegGroup, cols: &BTreeMap<QNum, DMatrix<f64>>) -> BlockTensor {
    let new_leg = Index::merged(Direction::Out, cols.iter().map(|(&q, m)| (-q, m.ncols())));
    let mut indices = group.indices.clone();
    indices.push(new_leg.clone());
    let mut t = BlockTensor::new(indices, QNum::ZERO);
    for (&q, m) in cols {
        if m.ncols() == 0 {
            continue;
        }
        let s = new_leg.find(-q).expect("new leg sector");
        let k = m.ncols();
        for (rk, ro, rs) in group.parts(q) {
            let mut b = vec![0.0; rs * k];
            for i in 0..*rs {
                for j in 0..k {
                    b[i * k + j] = m[(ro + i, j)];
                }
            }
            let mut key = rk.clone();
            key.push(s);
            t.blocks.insert(key, b);
        }
    }
    t
}

/// Tensor with one new incoming leg (matching `isometry_from_columns`) followed by `group`.
fn coisometry_from_rows(
    group: &LegGroup,
    flux: QNum,
    rows: &BTreeMap<QNum, DMatrix<f64>>,
) -> BlockTensor {
    let new_leg = Index::merged(Direction::In, rows.iter().map(|(&q, m)| (-q, m.nrows())));
    let mut indices = vec![new_leg.clone()];
    indices.extend(group.indices.iter().cloned());
    let mut t = BlockTensor::new(indices, flux);
    for (&q, m) in rows {
        if m.nrows() == 0 {
            continue;
        }
        let s = new_leg.find(-q).expect("new leg sector");
        let k = m.nrows();
        for (ck, co, cs) in group.parts(flux - q) {
            let mut b = vec![0.0; k * cs];
            for i in 0..k {
                for j in 0..*cs {
                    b[i * cs + j] = m[(i, co + j)];
                }
            }
            let mut key = vec![s];
            key.extend_from_slice(ck);
            t.blocks.insert(key, b);
        }
    }
    t
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TruncationSpec {
    pub max_states: usize,
    pub weight_threshold: f64,
}

impl TruncationSpec {
    pub fn new(max_states: usize, weight_threshold: f64) -> Self {
        TruncationSpec { max_states, weight_threshold }
    }

    pub fn exact() -> Self {
        TruncationSpec { max_states: usize::MAX, weight_threshold: 0.0 }
    }
}

/// Chooses how many values to keep per label. Values are weights (squared
/// singular values or density-matrix eigenvalues), descending within each
/// label. Returns kept counts and the discarded weight.
pub fn select_spectrum(
    weights: &BTreeMap<QNum, Vec<f64>>,
    spec: TruncationSpec,
) -> Result<(BTreeMap<QNum, usize>, f64)> {
    let mut all: Vec<(f64, QNum, usize)> = Vec::new();
    for (&q, w) in weights {
        for (i, &x) in w.iter().enumerate() {
            all.push((x.max(0.0), q, i));
        }
    }
    all.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let n = all.len();
    let mut tail = vec![0.0; n + 1];
    for i in (0..n).rev() {
        tail[i] = tail[i + 1] + all[i].0;
    }
    let mut k = (0..=n).find(|&k| tail[k] <= spec.weight_threshold).unwrap_or(n);
    k = k.min(spec.max_states);
    if k == 0 {
        if spec.max_states == 0 || n == 0 {
            return Err(TensorError::EmptySpectrum);
        }
        k = 1;
    }
    let mut kept: BTreeMap<QNum, usize> = BTreeMap::new();
    for &(_, q, _) in &all[..k] {
        *kept.entry(q).or_default() += 1;
    }
    Ok((kept, tail[k]))
}

/// Result of a block-wise SVD: `u` has the row legs plus a new outgoing leg,
/// `vt` a matching incoming leg followed by the column legs.
#[derive(Clone, Debug)]
pub struct SvdResult {
    pub u: BlockTensor,
    /// Singular values keyed by the label of the new leg, descending.
    pub singular_values: Vec<(QNum, Vec<f64>)>,
    pub vt: BlockTensor,
    pub discarded_weight: f64,
}

impl SvdResult {
    /// Singular values as a diagonal tensor between the new legs of `u` and `vt`.
    pub fn s_tensor(&self) -> BlockTensor {
        let leg = self.u.index(self.u.rank() - 1).clone();
        let mut t = BlockTensor::new(vec![leg.flipped(), leg.clone()], QNum::ZERO);
        for (q, s) in &self.singular_values {
            let sec = leg.find(*q).expect("sector");
            let d = s.len();
            let mut b = vec![0.0; d * d];
            for i in 0..d {
                b[i * d + i] = s[i];
            }
            t.blocks.insert(vec![sec, sec], b);
        }
        t
    }

    /// `vt` with the singular values multiplied into its rows.
    pub fn s_vt(&self) -> BlockTensor {
        let mut vt = self.vt.clone();
        let leg = self.vt.index(0).clone();
        let svals: HashMap<usize, &Vec<f64>> =
            self.singular_values.iter().map(|(q, s)| (leg.find(*q).unwrap(), s)).collect();
        for (key, b) in vt.blocks.iter_mut() {
            let s = svals[&key[0]];
            let cols = b.len() / s.len();
            for i in 0..s.len() {
                for x in &mut b[i * cols..(i + 1) * cols] {
                    *x *= s[i];
                }
            }
        }
        vt
    }

    /// `u` with the singular values multiplied into its columns.
    pub fn u_s(&self) -> BlockTensor {
        let mut u = self.u.clone();
        let last = u.rank() - 1;
        let leg = self.u.index(last).clone();
        let svals: HashMap<usize, &Vec<f64>> =
            self.singular_values.iter().map(|(q, s)| (leg.find(*q).unwrap(), s)).collect();
        for (key, b) in u.blocks.iter_mut() {
            let s = svals[&key[last]];
            let k = s.len();
            for (i, x) in b.iter_mut().enumerate() {
                *x *= s[i % k];
            }
        }
        u
    }
}

/// Block SVD across the bipartition `row_legs | rest` with global truncation.
pub fn svd_truncate(t: &BlockTensor, row_legs: &[usize], spec: TruncationSpec) -> Result<SvdResult> {
    let m = Matricized::new(t, row_legs)?;
    let mut full: BTreeMap<QNum, (DMatrix<f64>, Vec<f64>, DMatrix<f64>)> = BTreeMap::new();
    for (&q, a) in &m.mats {
        let svd = a.clone().svd(true, true);
        let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
        let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
        order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
        let s: Vec<f64> = order.iter().map(|&i| svd.singular_values[i]).collect();
        let u = DMatrix::from_fn(u.nrows(), order.len(), |r, c| u[(r, order[c])]);
        let vt = DMatrix::from_fn(order.len(), vt.ncols(), |r, c| vt[(order[r], c)]);
        full.insert(q, (u, s, vt));
    }
    // roundoff-level singular values count as exact zeros
    let smax = full.values().flat_map(|f| f.1.iter()).fold(0.0f64, |m, &x| m.max(x));
    let floor = 1e-14 * smax;
    let weights: BTreeMap<QNum, Vec<f64>> = full
        .iter()
        .map(|(&q, (_, s, _))| {
            (-q, s.iter().map(|&x| if x <= floor { 0.0 } else { x * x }).collect())
        })
        .collect();
    let (kept, discarded) = select_spectrum(&weights, spec)?;
    let mut ucols = BTreeMap::new();
    let mut vrows = BTreeMap::new();
    let mut svals = Vec::new();
    for (&q, (u, s, vt)) in &full {
        let k = kept.get(&-q).copied().unwrap_or(0);
        if k == 0 {
            continue;
        }
        ucols.insert(q, u.columns(0, k).into_owned());
        vrows.insert(q, vt.rows(0, k).into_owned());
        svals.push((-q, s[..k].to_vec()));
    }
    svals.sort_by_key(|x| x.0);
    Ok(SvdResult {
        u: isometry_from_columns(&m.row, &ucols),
        singular_values: svals,
        vt: coisometry_from_rows(&m.col, m.flux, &vrows),
        discarded_weight: discarded,
    })
}

/// Thin QR across `row_legs | rest`: returns `(q, r)` with `q` an isometry
/// carrying a new outgoing leg and `r` its incoming partner.
pub fn qr_split(t: &BlockTensor, row_legs: &[usize]) -> Result<(BlockTensor, BlockTensor)> {
    let m = Matricized::new(t, row_legs)?;
    let mut qs = BTreeMap::new();
    let mut rs = BTreeMap::new();
    for (&q, a) in &m.mats {
        let k = a.nrows().min(a.ncols());
        if k == 0 {
            continue;
        }
        let qr = a.clone().qr();
        let (qm, rm) = (qr.q(), qr.r());
        qs.insert(q, qm.columns(0, k).into_owned());
        rs.insert(q, rm.rows(0, k).into_owned());
    }
    Ok((isometry_from_columns(&m.row, &qs), coisometry_from_rows(&m.col, m.flux, &rs)))
}

/// Diagonalizes per-label symmetric matrices (e.g. reduced density
/// matrices over `group`) and keeps the dominant eigenvectors.
/// Returns the isometry (group legs + new outgoing leg), the kept eigenvalues
/// keyed by new-leg label, and the discarded weight.
pub fn eigh_truncate(
    group: &LegGroup,
    mats: &BTreeMap<QNum, DMatrix<f64>>,
    spec: TruncationSpec,
) -> Result<(BlockTensor, Vec<(QNum, Vec<f64>)>, f64)> {
    let mut full = BTreeMap::new();
    for (&q, a) in mats {
        let (vals, vecs) = dense_symmetric_eigen(a);
        // descending
        let n = vals.len();
        let v: Vec<f64> = (0..n).rev().map(|i| vals[i].max(0.0)).collect();
        let u = DMatrix::from_fn(vecs.nrows(), n, |r, c| vecs[(r, n - 1 - c)]);
        full.insert(q, (v, u));
    }
    let weights: BTreeMap<QNum, Vec<f64>> =
        full.iter().map(|(&q, (v, _))| (-q, v.clone())).collect();
    let (kept, discarded) = select_spectrum(&weights, spec)?;
    let mut cols = BTreeMap::new();
    let mut vals = Vec::new();
    for (&q, (v, u)) in &full {
        let k = kept.get(&-q).copied().unwrap_or(0);
        if k > 0 {
            cols.insert(q, u.columns(0, k).into_owned());
            vals.push((-q, v[..k].to_vec()));
        }
    }
    vals.sort_by_key(|x| x.0);
    Ok((isometry_from_columns(group, &cols), vals, discarded))
}

/// Eigen-decomposition of a symmetric matrix, eigenvalues ascending; column
/// `i` of the returned matrix is the eigenvector of eigenvalue `i`.
pub fn dense_symmetric_eigen(a: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = a.nrows();
    if n == 0 {
        return (vec![], DMatrix::zeros(0, 0));
    }
    let sym = (a + a.transpose()) * 0.5;
    let e = sym.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| e.eigenvalues[i].total_cmp(&e.eigenvalues[j]));
    let vals = order.iter().map(|&i| e.eigenvalues[i]).collect();
    let vecs = DMatrix::from_fn(n, n, |r, c| e.eigenvectors[(r, order[c])]);
    (vals, vecs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn idx(dir: Direction, s: &[((i32, i32), usize)]) -> Index {
        Index::new(dir, s.iter().map(|&((n, z), d)| (QNum::new(n, z), d)).collect()).unwrap()
    }

    fn diag_tensor(vals: &[f64]) -> BlockTensor {
        let i = idx(Direction::In, &[((0, 0), vals.len())]);
        let mut t = BlockTensor::new(vec![i.clone(), i.flipped()], QNum::ZERO);
        let n = vals.len();
        let mut b = vec![0.0; n * n];
        for (k, v) in vals.iter().enumerate() {
            b[k * n + k] = *v;
        }
        t.insert_block(vec![0, 0], b).unwrap();
        t
    }

    #[test]
    fn rank_one_keeps_single_value() {
        let i = idx(Direction::In, &[((0, 0), 3)]);
        let mut t = BlockTensor::new(vec![i.clone(), i.flipped()], QNum::ZERO);
        let u = [1.0, 2.0, -1.0];
        let v = [0.5, 1.0, 3.0];
        let b: Vec<f64> = (0..9).map(|k| u[k / 3] * v[k % 3]).collect();
        t.insert_block(vec![0, 0], b).unwrap();
        let r = svd_truncate(&t, &[0], TruncationSpec::new(8, 0.0)).unwrap();
        let n: usize = r.singular_values.iter().map(|s| s.1.len()).sum();
        assert_eq!(n, 1);
        assert!(r.discarded_weight < 1e-24);
    }

    #[test]
    fn diag_truncation_forced() {
        let t = diag_tensor(&[3.0, 2.0, 1.0]);
        let r = svd_truncate(&t, &[0], TruncationSpec::new(2, 0.0)).unwrap();
        assert_eq!(r.singular_values.len(), 1);
        let s = &r.singular_values[0].1;
        assert!((s[0] - 3.0).abs() < 1e-14 && (s[1] - 2.0).abs() < 1e-14);
        assert!((r.discarded_weight - 1.0).abs() < 1e-14);
    }

    #[test]
    fn empty_spectrum_error() {
        let i = idx(Direction::In, &[((0, 0), 2)]);
        let t = BlockTensor::zeros(vec![i.clone(), i.flipped()], QNum::ZERO);
        let e = svd_truncate(&t, &[0], TruncationSpec::new(0, 0.0));
        assert!(matches!(e, Err(TensorError::EmptySpectrum)));
    }

    #[test]
    fn ties_prefer_lower_label() {
        let a = idx(Direction::In, &[((0, 0), 1), ((1, 1), 1)]);
        let mut t = BlockTensor::new(vec![a.clone(), a.flipped()], QNum::ZERO);
        t.insert_block(vec![0, 0], vec![1.0]).unwrap();
        t.insert_block(vec![1, 1], vec![1.0]).unwrap();
        let r = svd_truncate(&t, &[0], TruncationSpec::new(1, 0.0)).unwrap();
        assert_eq!(r.singular_values.len(), 1);
        // new-leg label is minus the fused row label; the row leg is incoming
        assert_eq!(r.singular_values[0].0, QNum::new(0, 0));
    }

    #[test]
    fn random_blocked_svd_reconstructs() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let a = idx(Direction::In, &[((0, 0), 2), ((1, 1), 2), ((1, -1), 2)]);
        let b = idx(Direction::Out, &[((0, 0), 2), ((1, 1), 2), ((1, -1), 2)]);
        let t = BlockTensor::random(vec![a, b], QNum::ZERO, &mut rng);
        let r = svd_truncate(&t, &[0], TruncationSpec::new(100, 1e-12)).unwrap();
        let back = r.u_s().contract(&r.vt, &[(1, 0)]).unwrap();
        let d: f64 = back
            .to_dense()
            .iter()
            .zip(t.to_dense())
            .map(|(x, y)| (x - y) * (x - y))
            .sum();
        assert!(d <= 1e-12);
        // orthonormality
        let uu = r.u.dagger().contract(&r.u, &[(0, 0)]).unwrap();
        let n = uu.index(0).dim();
        let dd = uu.to_dense();
        for i in 0..n {
            for j in 0..n {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((dd[i * n + j] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn qr_reconstructs() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let a = idx(Direction::In, &[((0, 0), 1), ((1, 1), 2)]);
        let p = Index::spatial_site(Direction::In);
        let c = idx(Direction::Out, &[((0, 0), 1), ((1, 1), 2), ((1, -1), 1), ((2, 0), 3), ((3, 1), 2)]);
        let t = BlockTensor::random(vec![a, p, c], QNum::ZERO, &mut rng);
        let (q, r) = qr_split(&t, &[0, 1]).unwrap();
        let back = q.contract(&r, &[(2, 0)]).unwrap();
        for (x, y) in back.to_dense().iter().zip(t.to_dense()) {
            assert!((x - y).abs() < 1e-13);
        }
    }
}
