//! Text report of a cluster run: energies, dominant product states and the
//! effective Hamiltonian (aligned and comma-separated).

use std::fmt::Write as _;

use nalgebra::DMatrix;

use super::{AnalysisError, EffectiveHamiltonian, Result, SampledState};
use crate::bips::{CmpoMethod, PipelineResult};

pub struct ReportInput<'a> {
    pub result: &'a PipelineResult,
    /// Named reference energy for the delta column; root 0 is used otherwise.
    pub reference: Option<(&'a str, f64)>,
    pub threshold: f64,
    /// Sampled states per root.
    pub sampled: &'a [Vec<SampledState>],
    pub heff: Option<&'a EffectiveHamiltonian>,
}

/// Rows of comma-separated values in shortest round-trip form.
pub fn matrix_csv(m: &DMatrix<f64>) -> String {
    let mut s = String::new();
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|j| format!("{}", m[(i, j)] + 0.0)).collect();
        s.push_str(&row.join(","));
        s.push('\n');
    }
    s
}

pub fn parse_matrix_csv(text: &str) -> Result<DMatrix<f64>> {
    let rows: Vec<Vec<f64>> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .enumerate()
        .map(|(i, l)| {
            l.split(',')
                .map(|x| x.trim().parse::<f64>().map_err(|e| AnalysisError::Parse(format!("row {i}: {e}"))))
                .collect()
        })
        .collect::<Result<_>>()?;
    let n = rows.first().map_or(0, |r| r.len());
    if rows.iter().any(|r| r.len() != n) {
        return Err(AnalysisError::Parse("ragged rows".into()));
    }
    Ok(DMatrix::from_fn(rows.len(), n, |i, j| rows[i][j]))
}

pub fn report(input: &ReportInput) -> String {
    let r = input.result;
    let c = &r.config;
    let mut s = String::new();
    let method = match c.method {
        CmpoMethod::Direct => "direct",
        CmpoMethod::DeferredIntegrals => "deferred",
    };
    let _ = writeln!(s, "# cluster DMRG report");
    let _ = writeln!(
        s,
        "fragments {}  n_state {}  m_tilde {}  n_roots {}  cmpo {}",
        r.fragments.len(),
        c.n_state,
        c.cluster_bond(),
        c.n_roots,
        method
    );

    let (ref_name, ref_e) = input.reference.unwrap_or(("root 0", r.energies[0]));
    let _ = writeln!(s, "\n[energies]");
    let _ = writeln!(s, "{:<20} {:>18} {:>14}", "stage", "energy", "delta/milli");
    let mut rows = vec![(format!("reference ({ref_name})"), ref_e), ("HF".to_string(), r.e_hf)];
    rows.extend(r.energies.iter().enumerate().map(|(i, &e)| (format!("BIPS root {i}"), e)));
    for (name, e) in rows {
        let _ = writeln!(s, "{:<20} {:>18.10} {:>14.4}", name, e, (e - ref_e) * 1e3);
    }

    let _ = writeln!(s, "\n[sampled]");
    let _ = writeln!(s, "threshold {}", input.threshold);
    for (root, states) in input.sampled.iter().enumerate() {
        if states.is_empty() {
            let _ = writeln!(s, "root {root}: no state with |c| >= {}", input.threshold);
            continue;
        }
        let w: f64 = states.iter().map(|x| x.coefficient * x.coefficient).sum();
        let _ = writeln!(s, "root {root}: {} states, sum c^2 = {w:.6}", states.len());
        for (i, x) in states.iter().enumerate() {
            let _ = writeln!(s, "  {:>4} {:>12.6}  {}", i + 1, x.coefficient, x.label);
        }
    }

    if let Some(h) = input.heff {
        let _ = writeln!(s, "\n[effective_hamiltonian]");
        let _ = writeln!(s, "reference energy {:.10}; diagonal entries below are relative to it", h.reference_energy);
        for (i, l) in h.basis.iter().enumerate() {
            let _ = writeln!(s, "  {:>3}: {}", i + 1, l);
        }
        let n = h.dim();
        let _ = write!(s, "     ");
        for j in 0..n {
            let _ = write!(s, " {:>11}", j + 1);
        }
        s.push('\n');
        for i in 0..n {
            let _ = write!(s, "  {:>3}", i + 1);
            for j in 0..n {
                let v = if i == j { h.matrix[(i, j)] - h.reference_energy } else { h.matrix[(i, j)] };
                let _ = write!(s, " {:>11.6}", v);
            }
            s.push('\n');
        }
        let _ = writeln!(s, "\n[effective_hamiltonian.csv]");
        s.push_str(&matrix_csv(&h.matrix));
    }
    s
}
