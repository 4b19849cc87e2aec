use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use nalgebra::DMatrix;

use super::env::{
    apply_one_site, apply_two_site, diagonal_one_site, diagonal_two_site, extend_left, extend_right, left_boundary, perturbation_left,
    perturbation_left2, perturbation_right, perturbation_right2, right_boundary,
};
use super::{Mps, MpsError, Result};
use crate::hamio::MpoChain;
use crate::symtensor::{
    davidson, eigh_truncate, svd_truncate, BlockTensor, DavidsonOptions, Direction, LegGroup, Matricized, QNum,
    TruncationSpec,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Algorithm {
    OneSite,
    TwoSite,
}

/// Settings of one full (left-right-left) sweep.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SweepStage {
    pub max_bond: usize,
    pub weight_threshold: f64,
    pub noise: f64,
    pub algorithm: Algorithm,
    pub davidson_tol: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepSchedule {
    pub stages: Vec<SweepStage>,
}

impl SweepSchedule {
    /// Four noisy two-site warm-up sweeps, then one-site sweeps.
    pub fn standard(max_bond: usize, max_sweeps: usize) -> Self {
        let mut stages = Vec::new();
        for s in 0..max_sweeps.max(1) {
            let (algorithm, noise) = match s {
                0..=3 => (Algorithm::TwoSite, 1e-4 * 0.1f64.powi(s as i32)),
                4 | 5 => (Algorithm::OneSite, 1e-8),
                _ => (Algorithm::OneSite, 0.0),
            };
            stages.push(SweepStage { max_bond, weight_threshold: 0.0, noise, algorithm, davidson_tol: 1e-8 });
        }
        SweepSchedule { stages }
    }

    /// Noise-free two-site sweeps.
    pub fn two_site(max_bond: usize, sweeps: usize, davidson_tol: f64) -> Self {
        let stage =
            SweepStage { max_bond, weight_threshold: 0.0, noise: 0.0, algorithm: Algorithm::TwoSite, davidson_tol };
        SweepSchedule { stages: vec![stage; sweeps.max(1)] }
    }

    /// One-site sweeps whose density-matrix noise decays tenfold per sweep
    /// and is switched off for the last `quiet` sweeps.
    pub fn one_site(max_bond: usize, sweeps: usize, noise: f64, quiet: usize) -> Self {
        let stages = (0..sweeps.max(1))
            .map(|s| SweepStage {
                max_bond,
                weight_threshold: 0.0,
                noise: if s + quiet >= sweeps { 0.0 } else { noise * 0.1f64.powi(s as i32) },
                algorithm: Algorithm::OneSite,
                davidson_tol: 1e-8,
            })
            .collect();
        SweepSchedule { stages }
    }

    pub fn with_weight_threshold(mut self, w: f64) -> Self {
        self.stages.iter_mut().for_each(|s| s.weight_threshold = w);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages.is_empty() {
            return Err(MpsError::InvalidSchedule("no stages".into()));
        }
        for (i, s) in self.stages.iter().enumerate() {
            if s.max_bond == 0 || !(s.noise >= 0.0) || !(s.weight_threshold >= 0.0) || !(s.davidson_tol > 0.0) {
                return Err(MpsError::InvalidSchedule(format!("stage {i}: {s:?}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default)]
pub struct SweepReport {
    /// Energies of every root at the end of each half-sweep.
    pub half_sweep_energies: Vec<Vec<f64>>,
    pub max_discarded_weight: f64,
    pub max_bond: usize,
    pub sweeps: usize,
    pub converged: bool,
    pub wall_time: Duration,
}

#[derive(Clone, Debug)]
pub struct DmrgResult {
    /// One state per root; they share every tensor except the center.
    pub states: Vec<Mps>,
    pub energies: Vec<f64>,
    pub report: SweepReport,
}

struct Sweeper<'a> {
    mpo: &'a MpoChain,
    tensors: Vec<BlockTensor>,
    /// Center tensor of each root at site `center`.
    roots: Vec<BlockTensor>,
    center: usize,
    lenv: Vec<Option<BlockTensor>>,
    renv: Vec<Option<BlockTensor>>,
    energies: Vec<f64>,
    max_discarded: f64,
}

impl<'a> Sweeper<'a> {
    fn n(&self) -> usize {
        self.tensors.len()
    }

    fn l(&self, i: usize) -> &BlockTensor {
        self.lenv[i].as_ref().expect("left environment")
    }

    fn r(&self, i: usize) -> &BlockTensor {
        self.renv[i].as_ref().expect("right environment")
    }

    fn update_left(&mut self, i: usize) -> Result<()> {
        let a = &self.tensors[i];
        self.lenv[i + 1] = Some(extend_left(self.l(i), a, &self.mpo.tensors[i], a)?);
        Ok(())
    }

    fn update_right(&mut self, i: usize) -> Result<()> {
        let b = &self.tensors[i];
        self.renv[i] = Some(extend_right(self.r(i + 1), b, &self.mpo.tensors[i], b)?);
        Ok(())
    }

    fn solve(
        &self,
        guesses: &[BlockTensor],
        tol: f64,
        apply: &dyn Fn(&BlockTensor) -> Result<BlockTensor>,
        diagonal: &dyn Fn(&BlockTensor) -> Vec<f64>,
    ) -> Result<(Vec<f64>, Vec<BlockTensor>)> {
        let n_roots = guesses.len();
        let mut template = guesses[0].clone();
        template.fill_allowed();
        let dim = template.dense_len();
        if dim < n_roots {
            return Err(MpsError::ShapeMismatch(format!("{n_roots} roots in a local space of dimension {dim}")));
        }
        let shift = self.mpo.constant_shift;
        let mut failure = None;
        let mut f = |x: &[f64], y: &mut [f64]| {
            let xt = template.unflatten(x);
            match apply(&xt) {
                Ok(t) => {
                    let v = t.flatten_like(&template);
                    for ((yi, vi), xi) in y.iter_mut().zip(v).zip(x) {
                        *yi = vi + shift * xi;
                    }
                }
                Err(e) => failure = Some(e),
            }
        };
        let g: Vec<Vec<f64>> = guesses.iter().map(|t| t.flatten_like(&template)).collect();
        let diag: Vec<f64> = diagonal(&template).into_iter().map(|d| d + shift).collect();
        let res = davidson(&mut f, &diag, &g, DavidsonOptions::new(n_roots, tol));
        if let Some(e) = failure {
            return Err(e);
        }
        let res = res?;
        Ok((res.values, res.vectors.iter().map(|v| template.unflatten(v)).collect()))
    }

    /// Density matrices over the row legs of `xs`, with optional perturbations.
    fn density(
        xs: &[BlockTensor],
        rows: &[usize],
        perts: &[(BlockTensor, [usize; 2])],
        noise: f64,
    ) -> Result<(LegGroup, BTreeMap<QNum, DMatrix<f64>>)> {
        let w = 1.0 / xs.len() as f64;
        let mut rho: BTreeMap<QNum, DMatrix<f64>> = BTreeMap::new();
        let mut group = None;
        for x in xs {
            let m = Matricized::new(x, rows)?;
            for (&q, a) in &m.mats {
                let r = a * a.transpose() * w;
                rho.entry(q).and_modify(|e| *e += &r).or_insert(r);
            }
            group = Some(m.row);
        }
        let group = group.expect("at least one root");
        for (p, prow) in perts {
            let m = Matricized::new(p, prow)?;
            for (&q, a) in &m.mats {
                let n = group.dim(q);
                debug_assert_eq!(n, a.nrows());
                let r = a * a.transpose() * (noise * w);
                rho.entry(q).and_modify(|e| *e += &r).or_insert(r);
            }
        }
        Ok((group, rho))
    }

    fn spec(stage: &SweepStage) -> TruncationSpec {
        TruncationSpec::new(stage.max_bond, stage.weight_threshold)
    }

    /// One-site optimization at the center, then a move in direction `right`.
    fn one_site_step(&mut self, stage: &SweepStage, right: bool) -> Result<()> {
        let i = self.center;
        let n = self.n();
        let (vals, xs) = {
            let (l, w, r) = (self.l(i), &self.mpo.tensors[i], self.r(i + 1));
            self.solve(&self.roots, stage.davidson_tol, &|x| apply_one_site(l, w, r, x), &|t| {
                diagonal_one_site(l, w, r, t)
            })?
        };
        self.energies = vals;
        if right && i + 1 < n {
            let (a, carry) = if xs.len() == 1 && stage.noise == 0.0 {
                let svd = svd_truncate(&xs[0], &[0, 1], Self::spec(stage))?;
                self.max_discarded = self.max_discarded.max(svd.discarded_weight);
                (svd.u.clone(), vec![svd.s_vt()])
            } else {
                let perts = if stage.noise > 0.0 {
                    xs.iter()
                        .map(|x| perturbation_right(self.l(i), &self.mpo.tensors[i], x))
                        .collect::<Result<Vec<_>>>()?
                } else {
                    vec![]
                };
                let (group, rho) = Self::density(&xs, &[0, 1], &perts, stage.noise)?;
                let (a, _, disc) = eigh_truncate(&group, &rho, Self::spec(stage))?;
                self.max_discarded = self.max_discarded.max(disc);
                let ad = a.dagger();
                let carry = xs
                    .iter()
                    .map(|x| ad.contract(x, &[(0, 0), (1, 1)]))
                    .collect::<std::result::Result<Vec<_>, _>>()?;
                (a, carry)
            };
            self.tensors[i] = a;
            self.roots = carry
                .iter()
                .map(|c| c.contract(&self.tensors[i + 1], &[(1, 0)]))
                .collect::<std::result::Result<Vec<_>, _>>()?;
            self.update_left(i)?;
            self.center = i + 1;
        } else if !right && i > 0 {
            let (b, carry) = if xs.len() == 1 && stage.noise == 0.0 {
                let svd = svd_truncate(&xs[0], &[0], Self::spec(stage))?;
                self.max_discarded = self.max_discarded.max(svd.discarded_weight);
                (svd.vt.clone(), vec![svd.u_s()])
            } else {
                let perts = if stage.noise > 0.0 {
                    xs.iter()
                        .map(|x| perturbation_left(&self.mpo.tensors[i], self.r(i + 1), x))
                        .collect::<Result<Vec<_>>>()?
                } else {
                    vec![]
                };
                let (group, rho) = Self::density(&xs, &[1, 2], &perts, stage.noise)?;
                let (iso, _, disc) = eigh_truncate(&group, &rho, Self::spec(stage))?;
                self.max_discarded = self.max_discarded.max(disc);
                let mut b = iso.permute(&[2, 0, 1])?;
                b.set_dir(0, Direction::In);
                let bd = b.dagger();
                let carry = xs
                    .iter()
                    .map(|x| x.contract(&bd, &[(1, 1), (2, 2)]))
                    .collect::<std::result::Result<Vec<_>, _>>()?;
                (b, carry)
            };
            self.tensors[i] = b;
            self.roots = carry
                .iter()
                .map(|c| self.tensors[i - 1].contract(c, &[(2, 0)]))
                .collect::<std::result::Result<Vec<_>, _>>()?;
            self.update_right(i)?;
            self.center = i - 1;
        } else {
            self.roots = xs;
        }
        Ok(())
    }

    /// Two-site optimization of sites `(i, i + 1)`; the center ends on the
    /// site in the direction of travel.
    fn two_site_step(&mut self, stage: &SweepStage, i: usize, right: bool) -> Result<()> {
        let thetas: Vec<BlockTensor> = if self.center == i {
            self.roots.iter().map(|x| x.contract(&self.tensors[i + 1], &[(2, 0)])).collect::<std::result::Result<_, _>>()?
        } else {
            debug_assert_eq!(self.center, i + 1);
            self.roots.iter().map(|x| self.tensors[i].contract(x, &[(2, 0)])).collect::<std::result::Result<_, _>>()?
        };
        let (vals, xs) = {
            let (l, w1, w2, r) = (self.l(i), &self.mpo.tensors[i], &self.mpo.tensors[i + 1], self.r(i + 2));
            self.solve(&thetas, stage.davidson_tol, &|x| apply_two_site(l, w1, w2, r, x), &|t| {
                diagonal_two_site(l, w1, w2, r, t)
            })?
        };
        self.energies = vals;
        let single = xs.len() == 1 && stage.noise == 0.0;
        if right {
            let (a, carry) = if single {
                let svd = svd_truncate(&xs[0], &[0, 1], Self::spec(stage))?;
                self.max_discarded = self.max_discarded.max(svd.discarded_weight);
                (svd.u.clone(), vec![svd.s_vt()])
            } else {
                let perts = if stage.noise > 0.0 {
                    xs.iter()
                        .map(|x| perturbation_right2(self.l(i), &self.mpo.tensors[i], x))
                        .collect::<Result<Vec<_>>>()?
                } else {
                    vec![]
                };
                let (group, rho) = Self::density(&xs, &[0, 1], &perts, stage.noise)?;
                let (a, _, disc) = eigh_truncate(&group, &rho, Self::spec(stage))?;
                self.max_discarded = self.max_discarded.max(disc);
                let ad = a.dagger();
                let carry = xs
                    .iter()
                    .map(|x| ad.contract(x, &[(0, 0), (1, 1)]))
                    .collect::<std::result::Result<Vec<_>, _>>()?;
                (a, carry)
            };
            self.tensors[i] = a;
            self.tensors[i + 1] = carry[0].clone();
            self.roots = carry;
            self.update_left(i)?;
            self.center = i + 1;
        } else {
            let (b, carry) = if single {
                let svd = svd_truncate(&xs[0], &[0, 1], Self::spec(stage))?;
                self.max_discarded = self.max_discarded.max(svd.discarded_weight);
                (svd.vt.clone(), vec![svd.u_s()])
            } else {
                let perts = if stage.noise > 0.0 {
                    xs.iter()
                        .map(|x| perturbation_left2(&self.mpo.tensors[i + 1], self.r(i + 2), x))
                        .collect::<Result<Vec<_>>>()?
                } else {
                    vec![]
                };
                let (group, rho) = Self::density(&xs, &[2, 3], &perts, stage.noise)?;
                let (iso, _, disc) = eigh_truncate(&group, &rho, Self::spec(stage))?;
                self.max_discarded = self.max_discarded.max(disc);
                let mut b = iso.permute(&[2, 0, 1])?;
                b.set_dir(0, Direction::In);
                let bd = b.dagger();
                let carry = xs
                    .iter()
                    .map(|x| x.contract(&bd, &[(2, 1), (3, 2)]))
                    .collect::<std::result::Result<Vec<_>, _>>()?;
                (b, carry)
            };
            self.tensors[i + 1] = b;
            self.tensors[i] = carry[0].clone();
            self.roots = carry;
            self.update_right(i + 1)?;
            self.center = i;
        }
        Ok(())
    }

    fn half_sweep(&mut self, stage: &SweepStage, right: bool) -> Result<()> {
        let n = self.n();
        if n == 1 {
            return self.one_site_step(stage, right);
        }
        match (stage.algorithm, right) {
            (Algorithm::OneSite, true) => {
                while self.center + 1 < n {
                    self.one_site_step(stage, true)?;
                }
            }
            (Algorithm::OneSite, false) => {
                while self.center > 0 {
                    self.one_site_step(stage, false)?;
                }
            }
            (Algorithm::TwoSite, true) => {
                for i in self.center..n - 1 {
                    self.two_site_step(stage, i, true)?;
                }
            }
            (Algorithm::TwoSite, false) => {
                for i in (0..self.center).rev() {
                    self.two_site_step(stage, i, false)?;
                }
            }
        }
        Ok(())
    }
}

/// Ground (or lowest `n_roots`, state-averaged) DMRG starting from `mps`.
pub fn dmrg_sweep(mps: &Mps, mpo: &MpoChain, schedule: &SweepSchedule, n_roots: usize) -> Result<DmrgResult> {
    let start = Instant::now();
    schedule.validate()?;
    let n = mps.len();
    if mpo.len() != n || n == 0 {
        return Err(MpsError::ShapeMismatch(format!("MPO of length {} on MPS of length {n}", mpo.len())));
    }
    for i in 0..n {
        if !mpo.phys_index(i).same_sectors(mps.phys_index(i)) {
            return Err(MpsError::ShapeMismatch(format!("physical index {i} differs")));
        }
    }
    if n_roots == 0 {
        return Err(MpsError::ShapeMismatch("n_roots must be positive".into()));
    }
    let mut m = mps.clone();
    m.canonicalize(0)?;
    m.normalize()?;
    let first = &m.tensors[0];
    let last = &m.tensors[n - 1];
    let mut lenv = vec![None; n + 1];
    let mut renv = vec![None; n + 1];
    lenv[0] = Some(left_boundary(first.index(0), mpo.tensors[0].index(0), first.index(0)));
    renv[n] = Some(right_boundary(last.index(2), mpo.tensors[n - 1].index(3), last.index(2)));
    let mut roots = vec![m.tensors[0].clone()];
    // further roots start from perturbed copies; Davidson orthogonalizes them
    for k in 1..n_roots {
        let mut t = m.tensors[0].clone();
        t.fill_allowed();
        let len = t.dense_len();
        let v: Vec<f64> = (0..len).map(|j| ((j * 7919 + k * 104729) % 1000) as f64 / 1000.0 - 0.5).collect();
        roots.push(t.unflatten(&v));
    }
    let mut sw = Sweeper {
        mpo,
        tensors: m.tensors,
        roots,
        center: 0,
        lenv,
        renv,
        energies: vec![],
        max_discarded: 0.0,
    };
    for i in (1..n).rev() {
        sw.update_right(i)?;
    }
    let mut report = SweepReport::default();
    let mut prev: Option<Vec<f64>> = None;
    for stage in &schedule.stages {
        sw.half_sweep(stage, true)?;
        report.half_sweep_energies.push(sw.energies.clone());
        sw.half_sweep(stage, false)?;
        report.half_sweep_energies.push(sw.energies.clone());
        report.sweeps += 1;
        let e = sw.energies.clone();
        if let Some(p) = &prev {
            let delta = p.iter().zip(&e).fold(0.0f64, |a, (x, y)| a.max((x - y).abs()));
            if stage.noise == 0.0 && delta < stage.davidson_tol * 10.0 {
                report.converged = true;
                break;
            }
        }
        prev = Some(e);
    }
    report.max_discarded_weight = sw.max_discarded;
    report.max_bond = sw.tensors.iter().map(|t| t.index(2).dim()).max().unwrap_or(1);
    report.wall_time = start.elapsed();
    let center = sw.center;
    let states = sw
        .roots
        .iter()
        .map(|x| {
            let mut tensors = sw.tensors.clone();
            tensors[center] = x.clone();
            let mut s = Mps { tensors, center: Some(center), flux: mps.flux };
            s.normalize()?;
            Ok(s)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DmrgResult { states, energies: sw.energies, report })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fcioracle::{fci_solve, mps_to_dense};
    use crate::hamio::{build_hamiltonian_mpo, build_hubbard, Integrals};
    use crate::mpsmpo::{expectation, overlap};
    use crate::symtensor::Index;
    use rand::SeedableRng;

    fn phys(n: usize) -> Vec<Index> {
        vec![Index::spatial_site(Direction::In); n]
    }

    #[test]
    fn constant_operator_energy() {
        let mut ints = Integrals::zeros(4, 4, 0);
        ints.e_core = -3.5;
        let mpo = build_hamiltonian_mpo(&ints, &[0, 1, 2, 3]).unwrap();
        let mps = Mps::product(&phys(4), &[3, 0, 3, 0]).unwrap();
        for sched in [SweepSchedule::two_site(4, 1, 1e-8), SweepSchedule::one_site(1, 1, 0.0, 1)] {
            let r = dmrg_sweep(&mps, &mpo, &sched, 1).unwrap();
            assert!((r.energies[0] + 3.5).abs() < 1e-12);
        }
    }

    #[test]
    fn four_site_hubbard_two_roots() {
        let ints = build_hubbard(4, &[1.0, 1.0, 1.0], 4.0).unwrap();
        let mpo = build_hamiltonian_mpo(&ints, &[0, 1, 2, 3]).unwrap();
        let fci = fci_solve(&ints, 2, 2, 2).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        let mps = Mps::random(&phys(4), QNum::new(4, 0), 4, &mut rng).unwrap();
        let r = dmrg_sweep(&mps, &mpo, &SweepSchedule::two_site(64, 8, 1e-9), 2).unwrap();
        for k in 0..2 {
            assert!((r.energies[k] - fci.energies[k]).abs() < 1e-7, "{:?} {:?}", r.energies, fci.energies);
        }
        assert!(overlap(&r.states[0], &r.states[1]).unwrap().abs() < 1e-8);
    }

    #[test]
    fn one_site_with_noise_grows_bonds() {
        let ints = build_hubbard(6, &[1.0; 5], 4.0).unwrap();
        let mpo = build_hamiltonian_mpo(&ints, &[0, 1, 2, 3, 4, 5]).unwrap();
        let fci = fci_solve(&ints, 3, 3, 1).unwrap();
        let mps = Mps::product(&phys(6), &[2, 1, 2, 1, 2, 1]).unwrap();
        let r = dmrg_sweep(&mps, &mpo, &SweepSchedule::one_site(64, 14, 1e-3, 4), 1).unwrap();
        assert!(r.report.max_bond > 1);
        assert!((r.energies[0] - fci.energies[0]).abs() < 1e-6, "{} {}", r.energies[0], fci.energies[0]);
        let e = expectation(&r.states[0], &mpo, &r.states[0]).unwrap();
        assert!((e - r.energies[0]).abs() < 1e-9);
    }

    #[test]
    fn two_site_converged_state_overlaps_fci() {
        let ints = build_hubbard(6, &[1.0; 5], 4.0).unwrap();
        let mpo = build_hamiltonian_mpo(&ints, &[0, 1, 2, 3, 4, 5]).unwrap();
        let fci = fci_solve(&ints, 3, 3, 1).unwrap();
        let mps = Mps::product(&phys(6), &[3, 3, 3, 0, 0, 0]).unwrap();
        let r = dmrg_sweep(&mps, &mpo, &SweepSchedule::standard(256, 12), 1).unwrap();
        assert!((r.energies[0] - fci.energies[0]).abs() < 1e-8);
        let v = mps_to_dense(&r.states[0]).unwrap();
        let c = crate::fcioracle::fock_to_determinants(&v, &fci.basis, &[0, 1, 2, 3, 4, 5]);
        let ov: f64 = c.iter().zip(&fci.vectors[0]).map(|(a, b)| a * b).sum();
        assert!(ov.abs() > 1.0 - 1e-8);
        // energies never rise between noise-free half-sweeps
        let e = &r.report.half_sweep_energies;
        for w in e[8..].windows(2) {
            assert!(w[1][0] <= w[0][0] + 1e-10);
        }
    }
}
