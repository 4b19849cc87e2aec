//! Deterministic enumeration of product-state coefficients.

use nalgebra::DMatrix;
use rayon::prelude::*;

use super::{AnalysisError, BipsLabel, Result, SampledState};
use crate::mpsmpo::{Mps, MpsError};
use crate::symtensor::Index;

/// Per-site `A[s]` matrices of a normalized, right-canonical copy of `state`.
fn right_canonical_mats(state: &Mps) -> Result<Vec<Vec<DMatrix<f64>>>> {
    let mut m = state.clone();
    match m.canonicalize(0) {
        Err(MpsError::ZeroNorm) => return Err(AnalysisError::ZeroNorm),
        r => r?,
    }
    if m.normalize().is_err() {
        return Err(AnalysisError::ZeroNorm);
    }
    Ok(m.tensors
        .iter()
        .map(|t| {
            let (dl, d, dr) = (t.index(0).dim(), t.index(1).dim(), t.index(2).dim());
            let x = t.to_dense();
            (0..d).map(|s| DMatrix::from_fn(dl, dr, |a, b| x[(a * d + s) * dr + b])).collect()
        })
        .collect())
}

struct Walker<'a> {
    mats: &'a [Vec<DMatrix<f64>>],
    threshold: f64,
}

impl Walker<'_> {
    /// Depth-first extension of the partial coefficient row `v` at `depth`.
    fn walk(&self, depth: usize, v: &DMatrix<f64>, path: &mut Vec<usize>, out: &mut Vec<(Vec<usize>, f64)>) {
        if depth == self.mats.len() {
            let c = v.sum();
            if c.abs() >= self.threshold {
                out.push((path.clone(), c));
            }
            return;
        }
        for (s, a) in self.mats[depth].iter().enumerate() {
            let w = v * a;
            // remaining sites are right-canonical: |c| <= ||w|| for every completion
            if w.norm() < self.threshold {
                continue;
            }
            path.push(s);
            self.walk(depth + 1, &w, path, out);
            path.pop();
        }
    }
}

fn sort_states(mut v: Vec<SampledState>) -> Vec<SampledState> {
    v.sort_by(|a, b| b.coefficient.abs().total_cmp(&a.coefficient.abs()).then_with(|| a.label.cmp(&b.label)));
    v
}

fn labelled(phys: &[Index], raw: Vec<(Vec<usize>, f64)>) -> Result<Vec<SampledState>> {
    raw.into_iter()
        .map(|(s, c)| Ok(SampledState { label: BipsLabel::new(phys, s)?, coefficient: c }))
        .collect()
}

/// All product states with `|c| >= threshold`, sorted by `|c|` descending
/// and then by label. Branches are dropped as soon as the norm of their
/// partial coefficient vector falls below the threshold.
pub fn sample_bips(state: &Mps, threshold: f64) -> Result<Vec<SampledState>> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(AnalysisError::ThresholdOutOfRange(threshold));
    }
    let mats = right_canonical_mats(state)?;
    let walker = Walker { mats: &mats, threshold };
    let start = DMatrix::from_element(1, 1, 1.0);
    let raw: Vec<(Vec<usize>, f64)> = (0..mats[0].len())
        .into_par_iter()
        .flat_map_iter(|s| {
            let mut out = Vec::new();
            let w = &start * &mats[0][s];
            if w.norm() >= threshold {
                let mut path = vec![s];
                walker.walk(1, &w, &mut path, &mut out);
            }
            out
        })
        .collect();
    Ok(sort_states(labelled(&state.phys_indices(), raw)?))
}
