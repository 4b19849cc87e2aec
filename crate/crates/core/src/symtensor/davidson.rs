use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::linalg::dense_symmetric_eigen;
use super::{BlockTensor, Result, TensorError};

#[derive(Clone, Copy, Debug)]
pub struct DavidsonOptions {
    pub n_roots: usize,
    pub tol: f64,
    pub max_iter: usize,
    /// Problems up to this dimension are diagonalized densely.
    pub dense_cutoff: usize,
}

impl DavidsonOptions {
    pub fn new(n_roots: usize, tol: f64) -> Self {
        DavidsonOptions { n_roots, tol, max_iter: 500, dense_cutoff: 48 }
    }
}

#[derive(Clone, Debug)]
pub struct EigenResult {
    pub values: Vec<f64>,
    pub vectors: Vec<Vec<f64>>,
    pub residuals: Vec<f64>,
    pub iterations: usize,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Gram-Schmidt against `basis` (twice); returns the remaining norm.
fn orthogonalize(v: &mut [f64], basis: &[Vec<f64>]) -> f64 {
    for _ in 0..2 {
        for b in basis {
            let c = dot(v, b);
            axpy(v, -c, b);
        }
    }
    norm(v)
}

fn dense_solve(
    dim: usize,
    n_roots: usize,
    apply: &mut dyn FnMut(&[f64], &mut [f64]),
) -> EigenResult {
    let mut h = DMatrix::zeros(dim, dim);
    let mut e = vec![0.0; dim];
    let mut y = vec![0.0; dim];
    for j in 0..dim {
        e.iter_mut().for_each(|x| *x = 0.0);
        e[j] = 1.0;
        y.iter_mut().for_each(|x| *x = 0.0);
        apply(&e, &mut y);
        for i in 0..dim {
            h[(i, j)] = y[i];
        }
    }
    let (vals, vecs) = dense_symmetric_eigen(&h);
    let k = n_roots.min(dim);
    EigenResult {
        values: vals[..k].to_vec(),
        vectors: (0..k).map(|c| vecs.column(c).iter().copied().collect()).collect(),
        residuals: vec![0.0; k],
        iterations: 1,
    }
}

/// Davidson iteration for the lowest `n_roots` eigenpairs of a symmetric map.
/// `apply(x, y)` must write `A x` into `y` (which arrives zeroed).
pub fn davidson(
    apply: &mut dyn FnMut(&[f64], &mut [f64]),
    diag: &[f64],
    guesses: &[Vec<f64>],
    opts: DavidsonOptions,
) -> Result<EigenResult> {
    let dim = diag.len();
    let n_roots = opts.n_roots.max(1);
    if dim == 0 {
        return Err(TensorError::RankError("empty eigenproblem".into()));
    }
    if n_roots > dim {
        return Err(TensorError::RankError(format!("{n_roots} roots requested for dimension {dim}")));
    }
    if dim <= opts.dense_cutoff.max(n_roots) {
        return Ok(dense_solve(dim, n_roots, apply));
    }
    let max_sub = (20 * n_roots).max(n_roots + 4).min(dim);
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);

    let mut v: Vec<Vec<f64>> = Vec::new();
    let mut av: Vec<Vec<f64>> = Vec::new();
    let push = |x: Vec<f64>,
                    v: &mut Vec<Vec<f64>>,
                    av: &mut Vec<Vec<f64>>,
                    apply: &mut dyn FnMut(&[f64], &mut [f64])| {
        let mut y = vec![0.0; x.len()];
        apply(&x, &mut y);
        v.push(x);
        av.push(y);
    };
    for g in guesses {
        if v.len() >= n_roots {
            break;
        }
        let mut x = g.clone();
        if orthogonalize(&mut x, &v) > 1e-8 * norm(g).max(1e-300) {
            let n = norm(&x);
            x.iter_mut().for_each(|e| *e /= n);
            push(x, &mut v, &mut av, apply);
        }
    }
    while v.len() < n_roots {
        // lowest diagonal entries first, then random
        let mut x: Vec<f64> = (0..dim).map(|_| rng.gen_range(-0.5..0.5) * 1e-2).collect();
        let mut order: Vec<usize> = (0..dim).collect();
        order.sort_by(|&a, &b| diag[a].total_cmp(&diag[b]));
        x[order[v.len() % dim]] += 1.0;
        if orthogonalize(&mut x, &v) > 1e-10 {
            let n = norm(&x);
            x.iter_mut().for_each(|e| *e /= n);
            push(x, &mut v, &mut av, apply);
        }
    }

    let mut last_res = f64::INFINITY;
    for iter in 1..=opts.max_iter {
        let m = v.len();
        let mut h = DMatrix::zeros(m, m);
        for i in 0..m {
            for j in i..m {
                let x = dot(&v[i], &av[j]);
                h[(i, j)] = x;
                h[(j, i)] = x;
            }
        }
        let (theta, y) = dense_symmetric_eigen(&h);
        let mut ritz = Vec::with_capacity(n_roots);
        let mut aritz = Vec::with_capacity(n_roots);
        let mut residuals = Vec::with_capacity(n_roots);
        let mut res_vecs = Vec::with_capacity(n_roots);
        for k in 0..n_roots {
            let mut x = vec![0.0; dim];
            let mut ax = vec![0.0; dim];
            for i in 0..m {
                axpy(&mut x, y[(i, k)], &v[i]);
                axpy(&mut ax, y[(i, k)], &av[i]);
            }
            let mut r = ax.clone();
            axpy(&mut r, -theta[k], &x);
            residuals.push(norm(&r));
            res_vecs.push(r);
            ritz.push(x);
            aritz.push(ax);
        }
        last_res = residuals.iter().cloned().fold(0.0, f64::max);
        if last_res <= opts.tol {
            // re-orthonormalize the returned vectors
            let mut out: Vec<Vec<f64>> = Vec::new();
            for x in ritz {
                let mut x = x;
                let n = orthogonalize(&mut x, &out);
                x.iter_mut().for_each(|e| *e /= n);
                out.push(x);
            }
            return Ok(EigenResult {
                values: theta[..n_roots].to_vec(),
                vectors: out,
                residuals,
                iterations: iter,
            });
        }
        let mut new_dirs = Vec::new();
        for k in 0..n_roots {
            if residuals[k] <= opts.tol {
                continue;
            }
            let t: Vec<f64> = res_vecs[k]
                .iter()
                .zip(diag)
                .map(|(r, d)| {
                    let den = theta[k] - d;
                    if den.abs() < 1e-8 {
                        r / 1e-8_f64.copysign(den)
                    } else {
                        r / den
                    }
                })
                .collect();
            new_dirs.push(t);
        }
        if m + new_dirs.len() > max_sub {
            // restart from the lowest Ritz vectors
            let keep = (2 * n_roots).min(m);
            let mut nv = Vec::with_capacity(keep);
            let mut nav = Vec::with_capacity(keep);
            for k in 0..keep {
                let mut x = vec![0.0; dim];
                let mut ax = vec![0.0; dim];
                for i in 0..m {
                    axpy(&mut x, y[(i, k)], &v[i]);
                    axpy(&mut ax, y[(i, k)], &av[i]);
                }
                nv.push(x);
                nav.push(ax);
            }
            v = nv;
            av = nav;
        }
        let mut added = 0;
        for mut t in new_dirs {
            let n0 = norm(&t);
            if n0 == 0.0 || !n0.is_finite() {
                continue;
            }
            t.iter_mut().for_each(|e| *e /= n0);
            let n = orthogonalize(&mut t, &v);
            if n > 1e-6 {
                t.iter_mut().for_each(|e| *e /= n);
                push(t, &mut v, &mut av, apply);
                added += 1;
            }
        }
        if added == 0 {
            let mut x: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let n = orthogonalize(&mut x, &v);
            if n < 1e-10 || v.len() >= dim {
                break;
            }
            x.iter_mut().for_each(|e| *e /= n);
            push(x, &mut v, &mut av, apply);
        }
    }
    Err(TensorError::NoConvergence { iterations: opts.max_iter, residual: last_res })
}

/// Lowest eigenpairs of a symmetric linear map on block tensors with the block layout of `guess`.
pub fn hermitian_eigensolve_lowest(
    apply: &dyn Fn(&BlockTensor) -> BlockTensor,
    guess: &BlockTensor,
    n_roots: usize,
    tol: f64,
) -> Result<(Vec<f64>, Vec<BlockTensor>)> {
    let mut template = guess.clone();
    template.fill_allowed();
    let dim = template.dense_len();
    let mut f = |x: &[f64], y: &mut [f64]| {
        let t = apply(&template.unflatten(x));
        y.copy_from_slice(&t.flatten_like(&template));
    };
    // diagonal by probing is too costly in general; use a flat preconditioner
    let diag = vec![0.0; dim];
    let g = guess.flatten_like(&template);
    let opts = DavidsonOptions::new(n_roots, tol);
    let res = davidson(&mut f, &diag, &[g], opts)?;
    Ok((res.values, res.vectors.iter().map(|v| template.unflatten(v)).collect()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_dense(h: &DMatrix<f64>, n_roots: usize, cutoff: usize) -> EigenResult {
        let n = h.nrows();
        let diag: Vec<f64> = (0..n).map(|i| h[(i, i)]).collect();
        let mut f = |x: &[f64], y: &mut [f64]| {
            for i in 0..n {
                y[i] = (0..n).map(|j| h[(i, j)] * x[j]).sum();
            }
        };
        let mut o = DavidsonOptions::new(n_roots, 1e-10);
        o.dense_cutoff = cutoff;
        davidson(&mut f, &diag, &[], o).unwrap()
    }

    #[test]
    fn diagonal_map() {
        let h = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![-1.0, 0.0, 2.0]));
        let r = run_dense(&h, 1, 0);
        assert!((r.values[0] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn pauli_x() {
        let h = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let r = run_dense(&h, 2, 0);
        assert!((r.values[0] + 1.0).abs() < 1e-12);
        assert!((r.values[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn random_symmetric_matches_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let n = 50;
        let a = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        let h = (&a + a.transpose()) * 0.5;
        let (vals, _) = dense_symmetric_eigen(&h);
        let r = run_dense(&h, 3, 0);
        for k in 0..3 {
            assert!((r.values[k] - vals[k]).abs() < 1e-9, "{} vs {}", r.values[k], vals[k]);
        }
        for i in 0..3 {
            for j in 0..3 {
                let d = dot(&r.vectors[i], &r.vectors[j]);
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((d - want).abs() < 1e-10);
            }
        }
    }
}
