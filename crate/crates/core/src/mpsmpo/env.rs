//! Environment tensors and effective-Hamiltonian products.
//!
//! Left environments have legs `(ket: Out, mpo: Out, bra: In)`, right
//! environments `(ket: In, mpo: In, bra: Out)`. The bra is always the
//! conjugate (direction-flipped) copy of an MPS tensor.

use nalgebra::DMatrix;

use super::Result;
use crate::symtensor::{BlockTensor, Direction, Index, QNum};

fn boundary(ket: &Index, mpo: &Index, bra: &Index, dirs: [Direction; 3]) -> BlockTensor {
    let mut e = BlockTensor::new(
        vec![ket.with_dir(dirs[0]), mpo.with_dir(dirs[1]), bra.with_dir(dirs[2])],
        QNum::ZERO,
    );
    if ket.dim() == 1 && mpo.dim() == 1 && bra.dim() == 1 && e.allowed(&[0, 0, 0]) {
        e.insert_block(vec![0, 0, 0], vec![1.0]).unwrap();
    }
    e
}

/// Left edge from the left bond of the first ket, MPO and bra tensors.
pub fn left_boundary(ket: &Index, mpo: &Index, bra: &Index) -> BlockTensor {
    boundary(ket, mpo, bra, [Direction::Out, Direction::Out, Direction::In])
}

/// Right edge from the right bond of the last ket, MPO and bra tensors.
pub fn right_boundary(ket: &Index, mpo: &Index, bra: &Index) -> BlockTensor {
    boundary(ket, mpo, bra, [Direction::In, Direction::In, Direction::Out])
}

pub fn extend_left(l: &BlockTensor, ket: &BlockTensor, w: &BlockTensor, bra: &BlockTensor) -> Result<BlockTensor> {
    let t = l.contract(ket, &[(0, 0)])?;
    let t = t.contract(w, &[(0, 0), (2, 1)])?;
    Ok(t.contract(&bra.dagger(), &[(0, 0), (2, 1)])?)
}

pub fn extend_right(r: &BlockTensor, ket: &BlockTensor, w: &BlockTensor, bra: &BlockTensor) -> Result<BlockTensor> {
    let t = ket.contract(r, &[(2, 0)])?;
    let t = t.contract(w, &[(1, 1), (2, 3)])?;
    Ok(t.contract(&bra.dagger(), &[(1, 2), (3, 1)])?)
}

pub fn apply_one_site(l: &BlockTensor, w: &BlockTensor, r: &BlockTensor, x: &BlockTensor) -> Result<BlockTensor> {
    let t = l.contract(x, &[(0, 0)])?;
    let t = t.contract(w, &[(0, 0), (2, 1)])?;
    Ok(t.contract(r, &[(1, 0), (3, 1)])?)
}

pub fn apply_two_site(
    l: &BlockTensor,
    w1: &BlockTensor,
    w2: &BlockTensor,
    r: &BlockTensor,
    x: &BlockTensor,
) -> Result<BlockTensor> {
    let t = l.contract(x, &[(0, 0)])?;
    let t = t.contract(w1, &[(0, 0), (2, 1)])?;
    let t = t.contract(w2, &[(4, 0), (1, 1)])?;
    Ok(t.contract(r, &[(1, 0), (4, 1)])?)
}

/// `L W x` for a one-site center; rows `(bra bond, bra physical)` are legs `[0, 2]`.
pub(crate) fn perturbation_right(l: &BlockTensor, w: &BlockTensor, x: &BlockTensor) -> Result<(BlockTensor, [usize; 2])> {
    let t = l.contract(x, &[(0, 0)])?;
    Ok((t.contract(w, &[(0, 0), (2, 1)])?, [0, 2]))
}

/// `W x R` for a one-site center; `(bra physical, bra bond)` are legs `[3, 1]`.
pub(crate) fn perturbation_left(w: &BlockTensor, r: &BlockTensor, x: &BlockTensor) -> Result<(BlockTensor, [usize; 2])> {
    let t = x.contract(r, &[(2, 0)])?;
    Ok((t.contract(w, &[(1, 1), (2, 3)])?, [3, 1]))
}

/// `L W1 theta`; rows `(bra bond, first bra physical)` are legs `[0, 3]`.
pub(crate) fn perturbation_right2(l: &BlockTensor, w1: &BlockTensor, x: &BlockTensor) -> Result<(BlockTensor, [usize; 2])> {
    let t = l.contract(x, &[(0, 0)])?;
    Ok((t.contract(w1, &[(0, 0), (2, 1)])?, [0, 3]))
}

/// `theta W2 R`; `(second bra physical, bra bond)` are legs `[4, 2]`.
pub(crate) fn perturbation_left2(w2: &BlockTensor, r: &BlockTensor, x: &BlockTensor) -> Result<(BlockTensor, [usize; 2])> {
    let t = x.contract(r, &[(3, 0)])?;
    Ok((t.contract(w2, &[(2, 1), (3, 3)])?, [4, 2]))
}

/// `E[ket, mpo, ket]` diagonal of an environment as a dense `(ket, mpo)` matrix.
fn env_diagonal(e: &BlockTensor) -> DMatrix<f64> {
    let (k, m) = (e.index(0), e.index(1));
    let mut d = DMatrix::zeros(k.dim(), m.dim());
    for (key, blk) in e.blocks() {
        if key[0] != key[2] {
            continue;
        }
        let sh = e.block_shape(key);
        let (ko, mo) = (k.offset(key[0]), m.offset(key[1]));
        for i in 0..sh[0] {
            for j in 0..sh[1] {
                d[(ko + i, mo + j)] += blk[(i * sh[1] + j) * sh[2] + i];
            }
        }
    }
    d
}

/// `W[bl, s, s, br]` as one dense `(bl, br)` matrix per physical state.
fn mpo_diagonal(w: &BlockTensor) -> Vec<DMatrix<f64>> {
    let (l, p, r) = (w.index(0), w.index(1), w.index(3));
    let mut d = vec![DMatrix::zeros(l.dim(), r.dim()); p.dim()];
    for (key, blk) in w.blocks() {
        if key[1] != key[2] {
            continue;
        }
        let sh = w.block_shape(key);
        let (lo, po, ro) = (l.offset(key[0]), p.offset(key[1]), r.offset(key[3]));
        for a in 0..sh[0] {
            for s in 0..sh[1] {
                for b in 0..sh[3] {
                    d[po + s][(lo + a, ro + b)] += blk[((a * sh[1] + s) * sh[2] + s) * sh[3] + b];
                }
            }
        }
    }
    d
}

/// Writes `f(dense position per leg)` into every block of `template`.
fn fill_from(template: &BlockTensor, f: impl Fn(&[usize]) -> f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(template.dense_len());
    let rank = template.rank();
    let mut pos = vec![0usize; rank];
    for key in template.blocks().keys() {
        let sh = template.block_shape(key);
        let offs: Vec<usize> = (0..rank).map(|i| template.index(i).offset(key[i])).collect();
        let n: usize = sh.iter().product();
        for lin in 0..n {
            let mut rem = lin;
            for d in (0..rank).rev() {
                pos[d] = offs[d] + rem % sh[d];
                rem /= sh[d];
            }
            out.push(f(&pos));
        }
    }
    out
}

/// Diagonal of the one-site effective Hamiltonian, flattened like `template`.
pub(crate) fn diagonal_one_site(l: &BlockTensor, w: &BlockTensor, r: &BlockTensor, template: &BlockTensor) -> Vec<f64> {
    let (dl, dr) = (env_diagonal(l), env_diagonal(r));
    let rt = dr.transpose();
    // (s, ket_l, ket_r)
    let m: Vec<DMatrix<f64>> = mpo_diagonal(w).iter().map(|ws| &dl * ws * &rt).collect();
    fill_from(template, |p| m[p[1]][(p[0], p[2])])
}

/// Diagonal of the two-site effective Hamiltonian, flattened like `template`.
pub(crate) fn diagonal_two_site(
    l: &BlockTensor,
    w1: &BlockTensor,
    w2: &BlockTensor,
    r: &BlockTensor,
    template: &BlockTensor,
) -> Vec<f64> {
    let (dl, dr) = (env_diagonal(l), env_diagonal(r));
    let rt = dr.transpose();
    let a: Vec<DMatrix<f64>> = mpo_diagonal(w1).iter().map(|ws| &dl * ws).collect();
    let b: Vec<DMatrix<f64>> = mpo_diagonal(w2).iter().map(|ws| ws * &rt).collect();
    let m: Vec<Vec<DMatrix<f64>>> = a.iter().map(|x| b.iter().map(|y| x * y).collect()).collect();
    fill_from(template, |p| m[p[1]][p[2]][(p[0], p[3])])
}
