use std::borrow::Cow;
use std::collections::BTreeMap;

use super::{check_perm, BlockTensor, Result, TensorError};

/// Transposes a dense row-major block: axis `i` of the output is axis
/// `perm[i]` of the input.
pub fn permute_block(data: &[f64], shape: &[usize], perm: &[usize]) -> Vec<f64> {
    permute_cow(data, shape, perm).into_owned()
}

fn permute_cow<'a>(data: &'a [f64], shape: &[usize], perm: &[usize]) -> Cow<'a, [f64]> {
    let r = shape.len();
    if perm.iter().enumerate().all(|(i, &p)| i == p) {
        return Cow::Borrowed(data);
    }
    let mut in_strides = vec![1usize; r];
    for d in (0..r.saturating_sub(1)).rev() {
        in_strides[d] = in_strides[d + 1] * shape[d + 1];
    }
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let total = data.len();
    let mut out = Vec::with_capacity(total);
    if total == 0 {
        return Cow::Owned(out);
    }
    let last = r - 1;
    let (n_last, s_last) = (out_shape[last], strides[last]);
    let mut mi = vec![0usize; r];
    let mut base = 0usize;
    loop {
        let mut off = base;
        for _ in 0..n_last {
            out.push(data[off]);
            off += s_last;
        }
        // advance all but the innermost axis
        let mut d = last;
        loop {
            if d == 0 {
                return Cow::Owned(out);
            }
            d -= 1;
            mi[d] += 1;
            base += strides[d];
            if mi[d] < out_shape[d] {
                break;
            }
            base -= strides[d] * mi[d];
            mi[d] = 0;
        }
    }
}

/// `c += a * b` for row-major `a` (m x k) and `b` (k x n).
pub(crate) fn gemm_acc(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    if m == 0 || n == 0 || k == 0 {
        return;
    }
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            n as isize,
            1,
            1.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

pub(crate) fn contract(
    a: &BlockTensor,
    b: &BlockTensor,
    pairs: &[(usize, usize)],
) -> Result<BlockTensor> {
    let (ra, rb) = (a.rank(), b.rank());
    let mut used_a = vec![false; ra];
    let mut used_b = vec![false; rb];
    for &(ia, ib) in pairs {
        if ia >= ra || ib >= rb {
            return Err(TensorError::RankError(format!(
                "pair ({ia},{ib}) out of range for ranks ({ra},{rb})"
            )));
        }
        if used_a[ia] || used_b[ib] {
            return Err(TensorError::RankError(format!("leg used twice in pair ({ia},{ib})")));
        }
        used_a[ia] = true;
        used_b[ib] = true;
        let (x, y) = (a.index(ia), b.index(ib));
        if x.dir() == y.dir() {
            return Err(TensorError::IncompatibleIndex(format!(
                "legs ({ia},{ib}) have the same direction"
            )));
        }
        if !x.same_sectors(y) {
            return Err(TensorError::IncompatibleIndex(format!(
                "legs ({ia},{ib}) have different sectors"
            )));
        }
    }
    let a_con: Vec<usize> = pairs.iter().map(|p| p.0).collect();
    let b_con: Vec<usize> = pairs.iter().map(|p| p.1).collect();
    let a_free: Vec<usize> = (0..ra).filter(|&i| !used_a[i]).collect();
    let b_free: Vec<usize> = (0..rb).filter(|&i| !used_b[i]).collect();

    let indices = a_free
        .iter()
        .map(|&i| a.index(i).clone())
        .chain(b_free.iter().map(|&i| b.index(i).clone()))
        .collect();
    let mut out = BlockTensor::new(indices, a.flux() + b.flux());

    let a_perm: Vec<usize> = a_free.iter().chain(&a_con).copied().collect();
    let b_perm: Vec<usize> = b_con.iter().chain(&b_free).copied().collect();
    check_perm(&a_perm, ra)?;
    check_perm(&b_perm, rb)?;

    struct Piece<'a> {
        free_key: Vec<usize>,
        rows: usize,
        cols: usize,
        data: Cow<'a, [f64]>,
    }
    let mut shape = Vec::with_capacity(ra.max(rb));
    let mut b_groups: BTreeMap<Vec<usize>, Vec<Piece>> = BTreeMap::new();
    for (key, data) in b.blocks() {
        shape.clear();
        shape.extend(key.iter().zip(&b.indices).map(|(&s, idx)| idx.sector_dim(s)));
        let con_key: Vec<usize> = b_con.iter().map(|&i| key[i]).collect();
        let free_key: Vec<usize> = b_free.iter().map(|&i| key[i]).collect();
        let rows: usize = b_con.iter().map(|&i| shape[i]).product();
        let cols: usize = b_free.iter().map(|&i| shape[i]).product();
        b_groups.entry(con_key).or_default().push(Piece {
            free_key,
            rows,
            cols,
            data: permute_cow(data, &shape, &b_perm),
        });
    }

    let mut con_key = Vec::with_capacity(a_con.len());
    let mut rkey = Vec::with_capacity(out.rank());
    for (key, data) in a.blocks() {
        con_key.clear();
        con_key.extend(a_con.iter().map(|&i| key[i]));
        let Some(group) = b_groups.get(&con_key) else { continue };
        shape.clear();
        shape.extend(key.iter().zip(&a.indices).map(|(&s, idx)| idx.sector_dim(s)));
        let m: usize = a_free.iter().map(|&i| shape[i]).product();
        let k: usize = a_con.iter().map(|&i| shape[i]).product();
        let am = permute_cow(data, &shape, &a_perm);
        for piece in group {
            debug_assert_eq!(piece.rows, k);
            rkey.clear();
            rkey.extend(a_free.iter().map(|&i| key[i]));
            rkey.extend_from_slice(&piece.free_key);
            let c = match out.blocks.get_mut(&rkey) {
                Some(c) => c,
                None => out.blocks.entry(rkey.clone()).or_insert_with(|| vec![0.0; m * piece.cols]),
            };
            gemm_acc(m, k, piece.cols, &am, &piece.data, c);
        }
    }
    debug_assert!(out.blocks().keys().all(|k| out.allowed(k)));
    Ok(out)
}
