//! Diabatic-state analysis of cluster wave functions: enumeration of the
//! dominant fragment product states, effective Hamiltonians between them,
//! and plain-text reports.

mod effham;
mod report;
mod sample;

use std::fmt;

use thiserror::Error;

use crate::mpsmpo::MpsError;
use crate::symtensor::{Index, QNum, TensorError};

pub use effham::{effective_hamiltonian, EffectiveHamiltonian};
pub use report::{parse_matrix_csv, report, matrix_csv, ReportInput};
pub use sample::sample_bips;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("cluster state has zero norm")]
    ZeroNorm,
    #[error("threshold {0} outside (0, 1]")]
    ThresholdOutOfRange(f64),
    #[error("invalid label: {0}")]
    InvalidLabel(String),
    #[error("malformed matrix text: {0}")]
    Parse(String),
    #[error(transparent)]
    Mps(#[from] MpsError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T> = std::result::Result<T, AnalysisError>;

/// One local state per fragment, as dense positions in the cluster
/// physical indices, with their quantum numbers.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BipsLabel {
    pub states: Vec<usize>,
    pub qnums: Vec<QNum>,
}

impl BipsLabel {
    pub fn new(phys: &[Index], states: Vec<usize>) -> Result<Self> {
        if phys.len() != states.len() {
            return Err(AnalysisError::InvalidLabel(format!(
                "{} states for {} fragments",
                states.len(),
                phys.len()
            )));
        }
        let qnums = states
            .iter()
            .zip(phys)
            .enumerate()
            .map(|(i, (&s, p))| {
                p.locate(s)
                    .map(|(sec, _)| p.qnum(sec))
                    .ok_or_else(|| AnalysisError::InvalidLabel(format!("state {s} of fragment {i} exceeds {}", p.dim())))
            })
            .collect::<Result<_>>()?;
        Ok(BipsLabel { states, qnums })
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn flux(&self) -> QNum {
        self.qnums.iter().fold(QNum::ZERO, |a, &q| a + q)
    }
}

impl fmt::Display for BipsLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, (s, q)) in self.states.iter().zip(&self.qnums).enumerate() {
            if i > 0 {
                write!(f, " ")?;
            }
            write!(f, "{s}{q}")?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampledState {
    pub label: BipsLabel,
    pub coefficient: f64,
}
