//! Hamiltonian matrix between fragment product states.

use nalgebra::DMatrix;
use rayon::prelude::*;

use super::{AnalysisError, BipsLabel, Result};
use crate::hamio::MpoChain;
use crate::mpsmpo::{expectation, Mps};
use crate::symtensor::Index;

#[derive(Clone, Debug)]
pub struct EffectiveHamiltonian {
    pub basis: Vec<BipsLabel>,
    pub matrix: DMatrix<f64>,
    /// Diagonal element of the first basis state.
    pub reference_energy: f64,
}

impl EffectiveHamiltonian {
    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.matrix.clone().symmetric_eigen().eigenvalues.iter().copied().collect();
        v.sort_by(f64::total_cmp);
        v
    }
}

/// `H[i][j] = <label_i| cmpo |label_j>` with bond-dimension-one product
/// states, symmetrized.
pub fn effective_hamiltonian(cmpo: &MpoChain, basis: &[BipsLabel]) -> Result<EffectiveHamiltonian> {
    if basis.is_empty() {
        return Err(AnalysisError::InvalidLabel("empty basis".into()));
    }
    let phys: Vec<Index> = (0..cmpo.len()).map(|i| cmpo.phys_index(i).clone()).collect();
    let states: Vec<Mps> = basis
        .iter()
        .map(|l| {
            let checked = BipsLabel::new(&phys, l.states.clone())?;
            if checked.qnums != l.qnums {
                return Err(AnalysisError::InvalidLabel(format!("quantum numbers of {l} do not match the cluster")));
            }
            Ok(Mps::product(&phys, &l.states)?)
        })
        .collect::<Result<_>>()?;
    let n = basis.len();
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i..n).map(move |j| (i, j))).collect();
    let vals: Vec<f64> = pairs
        .par_iter()
        .map(|&(i, j)| {
            let (a, b) = (expectation(&states[i], cmpo, &states[j])?, expectation(&states[j], cmpo, &states[i])?);
            Ok(0.5 * (a + b))
        })
        .collect::<Result<_>>()?;
    let mut m = DMatrix::zeros(n, n);
    for (&(i, j), v) in pairs.iter().zip(vals) {
        m[(i, j)] = v;
        m[(j, i)] = v;
    }
    Ok(EffectiveHamiltonian { basis: basis.to_vec(), reference_energy: m[(0, 0)], matrix: m })
}
