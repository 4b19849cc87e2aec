//! Fragment partitions, one-shot DMET bath orbitals from a mean-field density
//! and the frozen-core Hamiltonian of each fragment-plus-bath model space.

use nalgebra::DMatrix;
use rayon::prelude::*;
use thiserror::Error;

use crate::hamio::{jk_field, HamError, Integrals};

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("invalid partition: {0}")]
    InvalidPartition(String),
    #[error("density matrix is not symmetric (max deviation {0:.3e})")]
    NonSymmetricRdm(f64),
    #[error("model-space electron count {0} is not an integer")]
    NonIntegerElectronCount(f64),
    #[error("dimension mismatch: {0}")]
    Mismatch(String),
    #[error(transparent)]
    Ham(#[from] HamError),
}

pub type Result<T> = std::result::Result<T, EmbedError>;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FragmentPartition {
    pub fragments: Vec<Vec<usize>>,
}

impl FragmentPartition {
    pub fn new(fragments: Vec<Vec<usize>>, n_orb: usize) -> Result<Self> {
        let mut seen = vec![false; n_orb];
        for (i, f) in fragments.iter().enumerate() {
            if f.is_empty() {
                return Err(EmbedError::InvalidPartition(format!("fragment {i} is empty")));
            }
            for &o in f {
                if o >= n_orb {
                    return Err(EmbedError::InvalidPartition(format!("orbital {o} outside 0..{n_orb}")));
                }
                if seen[o] {
                    return Err(EmbedError::InvalidPartition(format!("orbital {o} appears twice")));
                }
                seen[o] = true;
            }
        }
        if let Some(o) = seen.iter().position(|s| !s) {
            return Err(EmbedError::InvalidPartition(format!("orbital {o} is not covered")));
        }
        Ok(FragmentPartition { fragments })
    }

    /// Consecutive blocks of the given sizes.
    pub fn contiguous(sizes: &[usize]) -> Result<Self> {
        let mut start = 0;
        let mut fragments = Vec::new();
        for &s in sizes {
            fragments.push((start..start + s).collect());
            start += s;
        }
        Self::new(fragments, start)
    }

    pub fn len(&self) -> usize {
        self.fragments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fragments.is_empty()
    }

    pub fn n_orb(&self) -> usize {
        self.fragments.iter().map(|f| f.len()).sum()
    }

    pub fn size(&self, i: usize) -> usize {
        self.fragments[i].len()
    }

    /// Orbital order of the coarse-grained chain.
    pub fn order(&self) -> Vec<usize> {
        self.fragments.iter().flatten().copied().collect()
    }

    /// Parses `fragment <id>: <orbitals>` lines; `#` starts a comment line.
    pub fn parse(text: &str, n_orb: usize) -> Result<Self> {
        let mut entries: Vec<(usize, Vec<usize>)> = Vec::new();
        for (ln, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = || EmbedError::InvalidPartition(format!("line {}: '{raw}'", ln + 1));
            let rest = line.strip_prefix("fragment").ok_or_else(bad)?;
            let (id, orbs) = rest.split_once(':').ok_or_else(bad)?;
            let id: usize = id.trim().parse().map_err(|_| bad())?;
            let orbs = orbs
                .split_whitespace()
                .map(|t| t.parse::<usize>().map_err(|_| bad()))
                .collect::<Result<Vec<_>>>()?;
            entries.push((id, orbs));
        }
        entries.sort_by_key(|e| e.0);
        for (i, e) in entries.iter().enumerate() {
            if e.0 != i {
                return Err(EmbedError::InvalidPartition(format!("fragment ids must be 0..{}", entries.len())));
            }
        }
        Self::new(entries.into_iter().map(|e| e.1).collect(), n_orb)
    }

    pub fn to_text(&self) -> String {
        self.fragments
            .iter()
            .enumerate()
            .map(|(i, f)| {
                let o: Vec<String> = f.iter().map(|x| x.to_string()).collect();
                format!("fragment {i}: {}\n", o.join(" "))
            })
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct EmbeddingSpace {
    pub fragment_id: usize,
    /// Fragment unit vectors, then bath orbitals by descending singular value.
    pub rotation: DMatrix<f64>,
    pub n_frag: usize,
    pub n_bath: usize,
    pub core_orbitals: DMatrix<f64>,
    pub virtual_orbitals: DMatrix<f64>,
    pub entanglement_spectrum: Vec<f64>,
    /// Occupations of the unentangled environment orbitals (core first).
    pub env_occupations: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct EmbeddedProblem {
    pub integrals: Integrals,
    pub n_elec_model: usize,
    /// Parent orbital of each fragment column of the model space.
    pub fragment_orbitals: Vec<usize>,
    pub n_bath: usize,
}

/// Orthonormal basis of span(cols) built by projecting canonical unit
/// vectors in order, which makes degenerate subspaces reproducible.
fn canonical_basis(cols: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, k) = cols.shape();
    let mut out: Vec<nalgebra::DVector<f64>> = Vec::with_capacity(k);
    for j in 0..n {
        if out.len() == k {
            break;
        }
        let mut v = cols * cols.row(j).transpose();
        for u in &out {
            let d = u.dot(&v);
            v -= u * d;
        }
        let nrm = v.norm();
        if nrm > 1e-6 {
            out.push(v / nrm);
        }
    }
    DMatrix::from_columns(&out)
}

fn check_symmetric(rdm1: &DMatrix<f64>) -> Result<()> {
    if !rdm1.is_square() {
        return Err(EmbedError::Mismatch("density matrix is not square".into()));
    }
    let d = (rdm1 - rdm1.transpose()).amax();
    if d > 1e-10 {
        return Err(EmbedError::NonSymmetricRdm(d));
    }
    Ok(())
}

pub fn build_bath(rdm1: &DMatrix<f64>, part: &FragmentPartition, fragment_id: usize, sv_cutoff: f64) -> Result<EmbeddingSpace> {
    check_symmetric(rdm1)?;
    let k = rdm1.nrows();
    if part.n_orb() != k {
        return Err(EmbedError::Mismatch(format!("partition covers {} orbitals, density has {k}", part.n_orb())));
    }
    let frag = part
        .fragments
        .get(fragment_id)
        .ok_or_else(|| EmbedError::InvalidPartition(format!("no fragment {fragment_id}")))?;
    let env: Vec<usize> = (0..k).filter(|o| !frag.contains(o)).collect();
    let kf = frag.len();
    let ke = env.len();

    let mut spectrum = Vec::new();
    let mut bath_env = DMatrix::zeros(ke, 0);
    if ke > 0 {
        let block = DMatrix::from_fn(kf, ke, |i, j| rdm1[(frag[i], env[j])]);
        let svd = block.svd(false, true);
        let vt = svd.v_t.unwrap();
        let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
        order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
        spectrum = order.iter().map(|&i| svd.singular_values[i]).collect();
        let kept: Vec<usize> = order.iter().copied().filter(|&i| svd.singular_values[i] > sv_cutoff).collect();
        // canonicalize each cluster of equal singular values
        let mut cols: Vec<nalgebra::DVector<f64>> = Vec::new();
        let mut a = 0;
        while a < kept.len() {
            let s0 = svd.singular_values[kept[a]];
            let mut b = a + 1;
            while b < kept.len() && (svd.singular_values[kept[b]] - s0).abs() <= 1e-10 * s0.max(1.0) {
                b += 1;
            }
            let group = DMatrix::from_fn(ke, b - a, |r, c| vt[(kept[a + c], r)]);
            let g = canonical_basis(&group);
            cols.extend(g.column_iter().map(|c| c.into_owned()));
            a = b;
        }
        if !cols.is_empty() {
            bath_env = DMatrix::from_columns(&cols);
        }
    }
    let n_bath = bath_env.ncols();

    let mut rotation = DMatrix::zeros(k, kf + n_bath);
    for (j, &f) in frag.iter().enumerate() {
        rotation[(f, j)] = 1.0;
    }
    for b in 0..n_bath {
        for (r, &e) in env.iter().enumerate() {
            rotation[(e, kf + b)] = bath_env[(r, b)];
        }
    }

    // unentangled environment: complement of the bath inside the environment
    let n_rest = ke - n_bath;
    let (mut core, mut virt, mut occs) = (Vec::new(), Vec::new(), Vec::new());
    if n_rest > 0 {
        let mut q = DMatrix::<f64>::identity(ke, ke);
        q -= &bath_env * (bath_env.transpose() * &q);
        let (_, u) = crate::symtensor::dense_symmetric_eigen(&q);
        let comp_env = canonical_basis(&u.columns(ke - n_rest, n_rest).into_owned());
        let comp = DMatrix::from_fn(k, n_rest, |r, c| env.iter().position(|&e| e == r).map_or(0.0, |i| comp_env[(i, c)]));
        let pe = comp.transpose() * rdm1 * &comp;
        let (vals, vecs) = crate::symtensor::dense_symmetric_eigen(&pe);
        let rot = &comp * vecs;
        for i in (0..n_rest).rev() {
            if vals[i] > 1.0 {
                core.push(rot.column(i).into_owned());
                occs.push(vals[i]);
            }
        }
        let n_core = core.len();
        for i in 0..n_rest - n_core {
            virt.push(rot.column(i).into_owned());
        }
        occs.extend(vals[..n_rest - n_core].iter().rev());
    }
    let to_mat = |v: Vec<nalgebra::DVector<f64>>| if v.is_empty() { DMatrix::zeros(k, 0) } else { DMatrix::from_columns(&v) };
    Ok(EmbeddingSpace {
        fragment_id,
        rotation,
        n_frag: kf,
        n_bath,
        core_orbitals: to_mat(core),
        virtual_orbitals: to_mat(virt),
        entanglement_spectrum: spectrum,
        env_occupations: occs,
    })
}

/// Four-index transform `(pq|rs) -> (ab|cd)` with `R` of shape `k x n`.
pub fn transform_eri(v: &[f64], k: usize, r: &DMatrix<f64>) -> Vec<f64> {
    let n = r.ncols();
    let rt: Vec<f64> = (0..n).flat_map(|a| (0..k).map(move |p| (a, p))).map(|(a, p)| r[(p, a)]).collect();
    let mut data = v.to_vec();
    let mut dims = [k, k, k, k];
    for _ in 0..4 {
        let rest: usize = dims[1..].iter().product();
        // (n x k) * (k x rest), then transpose so the new index goes last
        let mut t = vec![0.0; n * rest];
        unsafe {
            matrixmultiply::dgemm(n, k, rest, 1.0, rt.as_ptr(), k as isize, 1, data.as_ptr(), rest as isize, 1, 0.0, t.as_mut_ptr(), rest as isize, 1);
        }
        let mut out = vec![0.0; n * rest];
        for a in 0..n {
            for j in 0..rest {
                out[j * n + a] = t[a * rest + j];
            }
        }
        data = out;
        dims = [dims[1], dims[2], dims[3], n];
    }
    data
}

pub fn build_embedded_problem(ints: &Integrals, space: &EmbeddingSpace, rdm1: &DMatrix<f64>) -> Result<EmbeddedProblem> {
    let k = ints.n_orb;
    let r = &space.rotation;
    if r.nrows() != k || rdm1.nrows() != k {
        return Err(EmbedError::Mismatch(format!("space over {} orbitals, integrals over {k}", r.nrows())));
    }
    let n = r.ncols();
    let h = DMatrix::from_row_slice(k, k, &ints.h);
    let core = &space.core_orbitals;
    let dc = core * core.transpose() * 2.0;
    let g = jk_field(ints, &dc);
    let e_core = ints.e_core + dc.component_mul(&h).sum() + 0.5 * dc.component_mul(&g).sum();
    let heff = r.transpose() * (&h + &g) * r;
    let nel = (r.transpose() * rdm1 * r).trace();
    let n_elec = nel.round();
    if (nel - n_elec).abs() > 1e-6 || n_elec < 0.0 {
        return Err(EmbedError::NonIntegerElectronCount(nel));
    }
    let n_elec = n_elec as usize;
    let mut model = Integrals::zeros(n, n_elec, (n_elec % 2) as i32);
    for a in 0..n {
        for b in 0..n {
            model.h[a * n + b] = 0.5 * (heff[(a, b)] + heff[(b, a)]);
        }
    }
    model.v = transform_eri(&ints.v, k, r);
    model.e_core = e_core;
    let frag_orbs = (0..space.n_frag)
        .map(|j| (0..k).find(|&p| r[(p, j)] == 1.0).expect("fragment column"))
        .collect();
    Ok(EmbeddedProblem { integrals: model, n_elec_model: n_elec, fragment_orbitals: frag_orbs, n_bath: space.n_bath })
}

/// Bath and embedded problem for every fragment, computed in parallel.
pub fn embed_all(
    ints: &Integrals,
    rdm1: &DMatrix<f64>,
    part: &FragmentPartition,
    sv_cutoff: f64,
) -> Result<Vec<(EmbeddingSpace, EmbeddedProblem)>> {
    (0..part.len())
        .into_par_iter()
        .map(|f| {
            let s = build_bath(rdm1, part, f, sv_cutoff)?;
            let p = build_embedded_problem(ints, &s, rdm1)?;
            Ok((s, p))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fcioracle::fci_solve;
    use crate::hamio::{build_hubbard, dimerized_pattern, restricted_hartree_fock};
    use rand::SeedableRng;

    #[test]
    fn partition_parsing() {
        let p = FragmentPartition::parse("# chain\nfragment 1: 2 3\nfragment 0: 0 1\n", 4).unwrap();
        assert_eq!(p.fragments, vec![vec![0, 1], vec![2, 3]]);
        assert_eq!(FragmentPartition::parse(&p.to_text(), 4).unwrap(), p);
        assert!(FragmentPartition::parse("fragment 0: 0 1\n", 4).is_err());
        assert!(FragmentPartition::parse("fragment 0: 0 1 1\nfragment 1: 2 3", 4).is_err());
        assert!(FragmentPartition::parse("frag 0: 0 1 2 3", 4).is_err());
    }

    #[test]
    fn disconnected_fragments_have_no_bath() {
        let mut p = DMatrix::zeros(4, 4);
        p[(0, 0)] = 1.0;
        p[(1, 1)] = 1.0;
        p[(0, 1)] = 1.0;
        p[(1, 0)] = 1.0;
        p[(2, 2)] = 2.0;
        let part = FragmentPartition::contiguous(&[2, 2]).unwrap();
        let s = build_bath(&p, &part, 0, 1e-8).unwrap();
        assert_eq!(s.n_bath, 0);
        assert!(s.entanglement_spectrum.iter().all(|&x| x <= 1e-8));
    }

    #[test]
    fn free_chain_bath() {
        let ints = build_hubbard(4, &[1.0; 3], 0.0).unwrap();
        let mf = restricted_hartree_fock(&ints).unwrap();
        let part = FragmentPartition::contiguous(&[2, 2]).unwrap();
        let s = build_bath(&mf.rdm1, &part, 0, 1e-8).unwrap();
        assert!(s.n_bath <= 2);
        for &o in &s.env_occupations {
            assert!(o.abs() < 1e-10 || (o - 2.0).abs() < 1e-10);
        }
        let rtr = s.rotation.transpose() * &s.rotation;
        assert!((rtr - DMatrix::identity(2 + s.n_bath, 2 + s.n_bath)).amax() < 1e-10);
    }

    #[test]
    fn random_idempotent_density_gives_integer_count() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        let k = 7;
        let a = DMatrix::from_fn(k, k, |_, _| rand::Rng::gen_range(&mut rng, -1.0..1.0));
        let q = a.qr().q();
        let occ = q.columns(0, 3);
        let p = occ * occ.transpose() * 2.0;
        let part = FragmentPartition::contiguous(&[2, 3, 2]).unwrap();
        for f in 0..3 {
            let s = build_bath(&p, &part, f, 1e-8).unwrap();
            assert!(s.n_bath <= part.size(f));
            let n = (s.rotation.transpose() * &p * &s.rotation).trace();
            assert!((n - n.round()).abs() < 1e-8, "{n}");
            for &o in &s.env_occupations {
                assert!(o.abs() < 1e-8 || (o - 2.0).abs() < 1e-8, "{f} {:?} {:?}", s.env_occupations, s.entanglement_spectrum);
            }
            let c = &s.core_orbitals;
            assert!((c.transpose() * &s.rotation).amax() < 1e-10);
        }
    }

    #[test]
    fn single_fragment_is_exact() {
        let ints = build_hubbard(6, &dimerized_pattern(6, 1.0, 0.3), 4.0).unwrap();
        let mf = restricted_hartree_fock(&ints).unwrap();
        let part = FragmentPartition::contiguous(&[6]).unwrap();
        let s = build_bath(&mf.rdm1, &part, 0, 1e-8).unwrap();
        let e = build_embedded_problem(&ints, &s, &mf.rdm1).unwrap();
        assert_eq!(e.n_elec_model, 6);
        let a = fci_solve(&ints, 3, 3, 1).unwrap().energies[0];
        let b = fci_solve(&e.integrals, 3, 3, 1).unwrap().energies[0];
        assert!((a - b).abs() < 1e-9);
    }

    #[test]
    fn non_interacting_model() {
        let ints = build_hubbard(6, &dimerized_pattern(6, 1.0, 0.5), 0.0).unwrap();
        let mf = restricted_hartree_fock(&ints).unwrap();
        let part = FragmentPartition::contiguous(&[2, 2, 2]).unwrap();
        let s = build_bath(&mf.rdm1, &part, 1, 1e-8).unwrap();
        let e = build_embedded_problem(&ints, &s, &mf.rdm1).unwrap();
        let h = DMatrix::from_row_slice(6, 6, &ints.h);
        let rot = s.rotation.transpose() * h * &s.rotation;
        let hm = DMatrix::from_row_slice(e.integrals.n_orb, e.integrals.n_orb, &e.integrals.h);
        assert!((rot - &hm).amax() < 1e-12);
        let (vals, _) = crate::symtensor::dense_symmetric_eigen(&hm);
        let nocc = e.n_elec_model / 2;
        let want: f64 = 2.0 * vals[..nocc].iter().sum::<f64>();
        let got = fci_solve(&e.integrals, nocc, nocc, 1).unwrap().energies[0] - e.integrals.e_core;
        assert!((want - got).abs() < 1e-9);
    }

    #[test]
    fn embedded_hamiltonian_matches_dense_construction() {
        let ints = build_hubbard(8, &dimerized_pattern(8, 1.0, 0.3), 4.0).unwrap();
        let mf = restricted_hartree_fock(&ints).unwrap();
        let part = FragmentPartition::contiguous(&[2, 2, 2, 2]).unwrap();
        let s = build_bath(&mf.rdm1, &part, 0, 1e-8).unwrap();
        let e = build_embedded_problem(&ints, &s, &mf.rdm1).unwrap();
        let k = 8;
        let r = &s.rotation;
        let n = r.ncols();
        // direct loops
        let dc = &s.core_orbitals * s.core_orbitals.transpose() * 2.0;
        let mut f = DMatrix::from_row_slice(k, k, &ints.h);
        let mut ec = ints.e_core;
        for p in 0..k {
            for q in 0..k {
                let mut j = 0.0;
                let mut x = 0.0;
                for a in 0..k {
                    for b in 0..k {
                        j += ints.v(p, q, a, b) * dc[(a, b)];
                        x += ints.v(p, a, q, b) * dc[(a, b)];
                    }
                }
                ec += dc[(p, q)] * ints.h(p, q) + 0.5 * dc[(p, q)] * (j - 0.5 * x);
                f[(p, q)] += j - 0.5 * x;
            }
        }
        assert!((e.integrals.e_core - ec).abs() < 1e-10);
        let hm = r.transpose() * f * r;
        for a in 0..n {
            for b in 0..n {
                assert!((e.integrals.h(a, b) - hm[(a, b)]).abs() < 1e-10);
            }
        }
        for a in 0..n {
            for b in 0..n {
                for c in 0..n {
                    for d in 0..n {
                        let mut x = 0.0;
                        for p in 0..k {
                            x += r[(p, a)] * r[(p, b)] * r[(p, c)] * r[(p, d)] * ints.v(p, p, p, p);
                        }
                        assert!((e.integrals.v(a, b, c, d) - x).abs() < 1e-10);
                    }
                }
            }
        }
        assert!(e.n_elec_model % 2 == 0);
        let half = e.n_elec_model / 2;
        assert!(fci_solve(&e.integrals, half, half, 1).unwrap().energies[0].is_finite());
    }
}
