//! Integrals, FCIDUMP files, lattice models, restricted Hartree-Fock and the
//! orbital-space Hamiltonian MPO.

mod fcidump;
mod mpo;
mod scf;

use thiserror::Error;

pub use fcidump::{format_fortran_e, parse_fcidump, write_fcidump};
pub use mpo::{
    build_hamiltonian_mpo, canonicalize_ops, channel_at, hamiltonian_terms, local_matrix,
    mpo_from_terms, op_flux, BondChannels, Channel, LocalOp, MpoChain, OpString, OpTerm,
    SymbolicMpo,
};
pub use scf::{restricted_hartree_fock, MeanFieldResult};
pub(crate) use scf::jk_field;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HamError {
    #[error("malformed FCIDUMP header: {0}")]
    MalformedHeader(String),
    #[error("malformed FCIDUMP line {line}: {msg}")]
    MalformedLine { line: usize, msg: String },
    #[error("orbital index out of range on line {line}: {index}")]
    IndexOutOfRange { line: usize, index: usize },
    #[error("conflicting duplicate integral {indices:?}: {first} vs {second}")]
    DuplicateConflict { indices: [usize; 4], first: f64, second: f64 },
    #[error("invalid integrals: {0}")]
    Invalid(String),
    #[error("SCF did not converge in {iterations} iterations (last DIIS error {last_error:.3e})")]
    ScfNoConvergence { iterations: usize, last_error: f64 },
    #[error("io: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, HamError>;

/// One- and two-electron integrals over `n_orb` orthonormal spatial orbitals.
/// Two-electron integrals use chemist notation `(pq|rs)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Integrals {
    pub n_orb: usize,
    pub h: Vec<f64>,
    pub v: Vec<f64>,
    pub e_core: f64,
    pub n_elec: usize,
    pub two_sz: i32,
}

impl Integrals {
    pub fn zeros(n_orb: usize, n_elec: usize, two_sz: i32) -> Self {
        Integrals {
            n_orb,
            h: vec![0.0; n_orb * n_orb],
            v: vec![0.0; n_orb.pow(4)],
            e_core: 0.0,
            n_elec,
            two_sz,
        }
    }

    #[inline]
    pub fn h(&self, p: usize, q: usize) -> f64 {
        self.h[p * self.n_orb + q]
    }

    #[inline]
    pub fn v(&self, p: usize, q: usize, r: usize, s: usize) -> f64 {
        let k = self.n_orb;
        self.v[((p * k + q) * k + r) * k + s]
    }

    pub fn set_h(&mut self, p: usize, q: usize, x: f64) {
        let k = self.n_orb;
        self.h[p * k + q] = x;
        self.h[q * k + p] = x;
    }

    /// Sets all eight permutation-equivalent entries.
    pub fn set_v(&mut self, p: usize, q: usize, r: usize, s: usize, x: f64) {
        let k = self.n_orb;
        for (a, b, c, d) in [
            (p, q, r, s),
            (q, p, r, s),
            (p, q, s, r),
            (q, p, s, r),
            (r, s, p, q),
            (s, r, p, q),
            (r, s, q, p),
            (s, r, q, p),
        ] {
            self.v[((a * k + b) * k + c) * k + d] = x;
        }
    }

    pub fn n_up(&self) -> usize {
        ((self.n_elec as i32 + self.two_sz) / 2) as usize
    }

    pub fn n_dn(&self) -> usize {
        ((self.n_elec as i32 - self.two_sz) / 2) as usize
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.n_orb;
        if self.h.len() != k * k || self.v.len() != k.pow(4) {
            return Err(HamError::Invalid("array sizes do not match n_orb".into()));
        }
        if self.n_elec > 2 * k {
            return Err(HamError::Invalid(format!("{} electrons in {k} orbitals", self.n_elec)));
        }
        if self.two_sz.unsigned_abs() as usize > self.n_elec
            || (self.n_elec as i32 - self.two_sz) % 2 != 0
            || self.n_up() > k
            || self.n_dn() > k
        {
            return Err(HamError::Invalid(format!(
                "2Sz = {} incompatible with {} electrons",
                self.two_sz, self.n_elec
            )));
        }
        for p in 0..k {
            for q in 0..k {
                if (self.h(p, q) - self.h(q, p)).abs() > 1e-12 {
                    return Err(HamError::Invalid(format!("h not symmetric at ({p},{q})")));
                }
            }
        }
        for p in 0..k {
            for q in 0..k {
                for r in 0..k {
                    for s in 0..k {
                        let x = self.v(p, q, r, s);
                        let d = [self.v(q, p, r, s), self.v(p, q, s, r), self.v(r, s, p, q)]
                            .iter()
                            .fold(0.0f64, |m, y| m.max((y - x).abs()));
                        if d > 1e-12 {
                            return Err(HamError::Invalid(format!(
                                "v lacks permutational symmetry at ({p},{q},{r},{s})"
                            )));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Integrals in a reordered basis: new orbital `i` is old orbital `order[i]`.
    pub fn permuted(&self, order: &[usize]) -> Result<Integrals> {
        let k = self.n_orb;
        check_order(order, k)?;
        let mut out = Integrals::zeros(k, self.n_elec, self.two_sz);
        out.e_core = self.e_core;
        for i in 0..k {
            for j in 0..k {
                out.h[i * k + j] = self.h(order[i], order[j]);
            }
        }
        for p in 0..k {
            for q in 0..k {
                for r in 0..k {
                    for s in 0..k {
                        out.v[((p * k + q) * k + r) * k + s] =
                            self.v(order[p], order[q], order[r], order[s]);
                    }
                }
            }
        }
        Ok(out)
    }

    pub fn with_electrons(mut self, n_elec: usize, two_sz: i32) -> Result<Self> {
        self.n_elec = n_elec;
        self.two_sz = two_sz;
        self.validate()?;
        Ok(self)
    }

    /// Largest |v| entry; zero means a non-interacting Hamiltonian.
    pub fn max_abs_v(&self) -> f64 {
        self.v.iter().fold(0.0, |m, x| m.max(x.abs()))
    }
}

pub(crate) fn check_order(order: &[usize], k: usize) -> Result<()> {
    let mut seen = vec![false; k];
    if order.len() != k {
        return Err(HamError::Invalid(format!("order has {} entries for {k} orbitals", order.len())));
    }
    for &o in order {
        if o >= k || seen[o] {
            return Err(HamError::Invalid(format!("order {order:?} is not a permutation")));
        }
        seen[o] = true;
    }
    Ok(())
}

/// Open-chain Hubbard model at half filling (lowest |2Sz| for odd sites).
pub fn build_hubbard(n_sites: usize, t_pattern: &[f64], u: f64) -> Result<Integrals> {
    if n_sites == 0 {
        return Err(HamError::Invalid("empty chain".into()));
    }
    if t_pattern.len() + 1 != n_sites {
        return Err(HamError::Invalid(format!(
            "{} hoppings for {n_sites} sites",
            t_pattern.len()
        )));
    }
    let mut ints = Integrals::zeros(n_sites, n_sites, (n_sites % 2) as i32);
    for (i, &t) in t_pattern.iter().enumerate() {
        ints.set_h(i, i + 1, -t);
    }
    for i in 0..n_sites {
        ints.set_v(i, i, i, i, u);
    }
    Ok(ints)
}

/// Dimerized chain: hoppings alternate `t_intra, t_inter, t_intra, ...`.
pub fn dimerized_pattern(n_sites: usize, t_intra: f64, t_inter: f64) -> Vec<f64> {
    (0..n_sites.saturating_sub(1)).map(|i| if i % 2 == 0 { t_intra } else { t_inter }).collect()
}

/// Chain with hopping, on-site `u` and nearest-neighbour density repulsion `v_nn`.
pub fn build_extended_hubbard(t_pattern: &[f64], u: f64, v_nn: f64) -> Result<Integrals> {
    let n = t_pattern.len() + 1;
    let mut ints = build_hubbard(n, t_pattern, u)?;
    for i in 0..n - 1 {
        ints.set_v(i, i, i + 1, i + 1, v_nn);
    }
    Ok(ints)
}

/// Dense random integrals with the full permutational symmetry (test systems).
pub fn random_integrals<R: rand::Rng + ?Sized>(n_orb: usize, n_elec: usize, two_sz: i32, rng: &mut R) -> Integrals {
    let mut ints = Integrals::zeros(n_orb, n_elec, two_sz);
    for p in 0..n_orb {
        for q in 0..=p {
            ints.set_h(p, q, rng.gen_range(-1.0..1.0));
        }
    }
    for p in 0..n_orb {
        for q in 0..=p {
            for r in 0..n_orb {
                for s in 0..=r {
                    if (r, s) <= (p, q) {
                        let x = if p == q && r == s { rng.gen_range(0.2..1.0) } else { rng.gen_range(-0.2..0.2) };
                        ints.set_v(p, q, r, s, x);
                    }
                }
            }
        }
    }
    ints.e_core = rng.gen_range(-1.0..1.0);
    ints
}
