use nalgebra::{DMatrix, DVector};

use super::{HamError, Integrals, Result};
use crate::symtensor::dense_symmetric_eigen;

#[derive(Clone, Debug)]
pub struct MeanFieldResult {
    /// Columns are molecular orbitals in ascending orbital-energy order.
    pub orbital_coeffs: DMatrix<f64>,
    pub orbital_energies: Vec<f64>,
    pub occupied_count: usize,
    pub energy: f64,
    /// Spin-summed one-particle density matrix.
    pub rdm1: DMatrix<f64>,
    pub iterations: usize,
}

const DIIS_SIZE: usize = 8;
const MAX_CYCLES: usize = 200;
const CONV: f64 = 1e-10;

pub(crate) fn h_matrix(ints: &Integrals) -> DMatrix<f64> {
    DMatrix::from_row_slice(ints.n_orb, ints.n_orb, &ints.h)
}

/// Two-electron field `J - K/2` of a spin-summed density.
pub(crate) fn jk_field(ints: &Integrals, p: &DMatrix<f64>) -> DMatrix<f64> {
    let k = ints.n_orb;
    let mut g = DMatrix::zeros(k, k);
    for a in 0..k {
        for b in 0..=a {
            let mut x = 0.0;
            for r in 0..k {
                for s in 0..k {
                    let d = p[(r, s)];
                    if d != 0.0 {
                        x += d * (ints.v(a, b, r, s) - 0.5 * ints.v(a, r, b, s));
                    }
                }
            }
            g[(a, b)] = x;
            g[(b, a)] = x;
        }
    }
    g
}

fn density(c: &DMatrix<f64>, n_occ: usize) -> DMatrix<f64> {
    let occ = c.columns(0, n_occ);
    (&occ * occ.transpose()) * 2.0
}

fn solve_diis(errs: &[DMatrix<f64>], focks: &[DMatrix<f64>]) -> Option<DMatrix<f64>> {
    let n = errs.len();
    let mut b = DMatrix::zeros(n + 1, n + 1);
    for i in 0..n {
        for j in 0..n {
            b[(i, j)] = errs[i].dot(&errs[j]);
        }
        b[(i, n)] = -1.0;
        b[(n, i)] = -1.0;
    }
    let mut rhs = DVector::zeros(n + 1);
    rhs[n] = -1.0;
    let c = b.lu().solve(&rhs)?;
    if c.iter().any(|x| !x.is_finite()) {
        return None;
    }
    let mut f = DMatrix::zeros(focks[0].nrows(), focks[0].ncols());
    for i in 0..n {
        f += &focks[i] * c[i];
    }
    Some(f)
}

/// Restricted closed-shell SCF in an orthonormal basis with DIIS extrapolation.
pub fn restricted_hartree_fock(ints: &Integrals) -> Result<MeanFieldResult> {
    if ints.n_elec % 2 != 0 {
        return Err(HamError::Invalid(format!("restricted SCF needs an even electron count, got {}", ints.n_elec)));
    }
    let n_occ = ints.n_elec / 2;
    let h = h_matrix(ints);
    let (mut eps, mut c) = dense_symmetric_eigen(&h);
    let mut p = density(&c, n_occ);
    let mut errs: Vec<DMatrix<f64>> = Vec::new();
    let mut focks: Vec<DMatrix<f64>> = Vec::new();
    let mut last_error = f64::INFINITY;
    for it in 1..=MAX_CYCLES {
        let f = &h + jk_field(ints, &p);
        let e = &f * &p - &p * &f;
        last_error = e.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        if last_error < CONV {
            let energy = 0.5 * p.component_mul(&(&h + &f)).sum() + ints.e_core;
            return Ok(MeanFieldResult {
                orbital_coeffs: c,
                orbital_energies: eps,
                occupied_count: n_occ,
                energy,
                rdm1: p,
                iterations: it,
            });
        }
        errs.push(e);
        focks.push(f.clone());
        if errs.len() > DIIS_SIZE {
            errs.remove(0);
            focks.remove(0);
        }
        let fx = if errs.len() >= 2 { solve_diis(&errs, &focks).unwrap_or(f) } else { f };
        let (e2, c2) = dense_symmetric_eigen(&fx);
        eps = e2;
        c = c2;
        p = density(&c, n_occ);
    }
    Err(HamError::ScfNoConvergence { iterations: MAX_CYCLES, last_error })
}
