//! Reduced operator and site tensors over spin multiplets.
//!
//! Wigner-Eckart convention: a rank-`k` tensor operator `T` has
//! `<j' m'| T_q |j m> = <j m; k q | j' m'> <j'||T||j>`. A reduced operator
//! tensor additionally carries MPO bond multiplets coupled as
//! `<S_l mu_l; k q | S_r mu_r>`, and a reduced site tensor couples
//! `<S_left m; S_phys s | S_right m'>`.

use super::{clebsch_gordan, phase_twice, triangle, wigner6j, wigner9j, HalfInt, Result, SpinError};

/// Reduced elements `[left bond][right bond][bra][ket]` of a rank-`rank` operator.
#[derive(Clone, Debug, PartialEq)]
pub struct ReducedOperator {
    pub rank: HalfInt,
    pub left: Vec<HalfInt>,
    pub right: Vec<HalfInt>,
    pub bra: Vec<HalfInt>,
    pub ket: Vec<HalfInt>,
    pub data: Vec<f64>,
}

/// Reduced elements `[left][physical][right]` of an MPS site tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct ReducedSite {
    pub left: Vec<HalfInt>,
    pub phys: Vec<HalfInt>,
    pub right: Vec<HalfInt>,
    pub data: Vec<f64>,
}

/// Dense m-resolved array with row-major `shape`. Each leg lists its
/// multiplets in order, with `m` running from `+S` down to `-S`.
#[derive(Clone, Debug, PartialEq)]
pub struct MResolved {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// `(multiplet, twice m)` for each m-resolved position of a leg.
fn m_states(spins: &[HalfInt]) -> Vec<(usize, i32)> {
    let mut v = Vec::new();
    for (i, s) in spins.iter().enumerate() {
        let t = s.twice() as i32;
        for k in 0..=t {
            v.push((i, t - 2 * k));
        }
    }
    v
}

fn check_len(what: &str, got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(SpinError::Shape(format!("{what}: {got} elements for {want} reduced entries")));
    }
    Ok(())
}

fn same(what: &str, a: &[HalfInt], b: &[HalfInt]) -> Result<()> {
    if a != b {
        return Err(SpinError::InconsistentSpinLabels(format!("{what}: {a:?} vs {b:?}")));
    }
    Ok(())
}

impl ReducedOperator {
    pub fn new(
        rank: HalfInt,
        left: Vec<HalfInt>,
        right: Vec<HalfInt>,
        bra: Vec<HalfInt>,
        ket: Vec<HalfInt>,
        data: Vec<f64>,
    ) -> Result<Self> {
        let op = ReducedOperator { rank, left, right, bra, ket, data };
        check_len("operator", op.data.len(), op.len())?;
        op.check_selection()?;
        Ok(op)
    }

    pub fn zeros(rank: HalfInt, left: Vec<HalfInt>, right: Vec<HalfInt>, bra: Vec<HalfInt>, ket: Vec<HalfInt>) -> Self {
        let n = left.len() * right.len() * bra.len() * ket.len();
        ReducedOperator { rank, left, right, bra, ket, data: vec![0.0; n] }
    }

    fn len(&self) -> usize {
        self.left.len() * self.right.len() * self.bra.len() * self.ket.len()
    }

    fn pos(&self, l: usize, r: usize, b: usize, k: usize) -> usize {
        ((l * self.right.len() + r) * self.bra.len() + b) * self.ket.len() + k
    }

    pub fn get(&self, l: usize, r: usize, b: usize, k: usize) -> f64 {
        self.data[self.pos(l, r, b, k)]
    }

    pub fn set(&mut self, l: usize, r: usize, b: usize, k: usize, v: f64) {
        let p = self.pos(l, r, b, k);
        self.data[p] = v;
    }

    /// Whether an element may be nonzero under the coupling rules.
    pub fn allowed(&self, l: usize, r: usize, b: usize, k: usize) -> bool {
        triangle(self.left[l], self.rank, self.right[r]) && triangle(self.ket[k], self.rank, self.bra[b])
    }

    fn check_selection(&self) -> Result<()> {
        for l in 0..self.left.len() {
            for r in 0..self.right.len() {
                for b in 0..self.bra.len() {
                    for k in 0..self.ket.len() {
                        if self.get(l, r, b, k) != 0.0 && !self.allowed(l, r, b, k) {
                            return Err(SpinError::InconsistentSpinLabels(format!(
                                "rank {} element ({l},{r},{b},{k}) couples bond {} -> {} and ket {} -> bra {}",
                                self.rank, self.left[l], self.right[r], self.ket[k], self.bra[b]
                            )));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// m-resolved array `[left][right][bra][ket]`.
    pub fn expand(&self) -> MResolved {
        let (ls, rs, bs, ks) = (m_states(&self.left), m_states(&self.right), m_states(&self.bra), m_states(&self.ket));
        let shape = vec![ls.len(), rs.len(), bs.len(), ks.len()];
        let mut data = vec![0.0; shape.iter().product()];
        let k = self.rank;
        let mut p = 0;
        for &(l, ml) in &ls {
            for &(r, mr) in &rs {
                let q = mr - ml;
                let bond = clebsch_gordan(self.left[l], ml, k, q, self.right[r], mr);
                for &(b, mb) in &bs {
                    for &(kk, mk) in &ks {
                        if bond != 0.0 {
                            let v = self.get(l, r, b, kk);
                            if v != 0.0 {
                                data[p] = bond * clebsch_gordan(self.ket[kk], mk, k, q, self.bra[b], mb) * v;
                            }
                        }
                        p += 1;
                    }
                }
            }
        }
        MResolved { shape, data }
    }
}

impl ReducedSite {
    pub fn new(left: Vec<HalfInt>, phys: Vec<HalfInt>, right: Vec<HalfInt>, data: Vec<f64>) -> Result<Self> {
        let s = ReducedSite { left, phys, right, data };
        check_len("site", s.data.len(), s.left.len() * s.phys.len() * s.right.len())?;
        for l in 0..s.left.len() {
            for p in 0..s.phys.len() {
                for r in 0..s.right.len() {
                    if s.get(l, p, r) != 0.0 && !triangle(s.left[l], s.phys[p], s.right[r]) {
                        return Err(SpinError::InconsistentSpinLabels(format!(
                            "site element ({l},{p},{r}) couples {} and {} to {}",
                            s.left[l], s.phys[p], s.right[r]
                        )));
                    }
                }
            }
        }
        Ok(s)
    }

    pub fn get(&self, l: usize, p: usize, r: usize) -> f64 {
        self.data[(l * self.phys.len() + p) * self.right.len() + r]
    }

    /// m-resolved array `[left][phys][right]`.
    pub fn expand(&self) -> MResolved {
        let (ls, ps, rs) = (m_states(&self.left), m_states(&self.phys), m_states(&self.right));
        let shape = vec![ls.len(), ps.len(), rs.len()];
        let mut data = Vec::with_capacity(shape.iter().product());
        for &(l, ml) in &ls {
            for &(p, mp) in &ps {
                for &(r, mr) in &rs {
                    let v = self.get(l, p, r);
                    data.push(if v == 0.0 {
                        0.0
                    } else {
                        clebsch_gordan(self.left[l], ml, self.phys[p], mp, self.right[r], mr) * v
                    });
                }
            }
        }
        MResolved { shape, data }
    }
}

/// Propagates a fragment operator of rank `k1` through one more site whose
/// primitive MPO tensor has rank `k2`, keeping the rank-`k` component:
///
/// `W'[bI, b', a*', a'] = sum (-1)^(S_bI + S_b' + k1 + k2) sqrt((2 S_b + 1)(2k + 1))
///   {S_bI k1 S_b; k2 S_b' k} [9j] W[bI, b, a*, a] U[a*, s*, a*'] V[b, b', s*, s] U[a, s, a']`
///
/// where `[9j]` is `{S_a S_s S_a'; k1 k2 k; S_a* S_s* S_a*'}` times
/// `sqrt((2 S_a' + 1)(2k + 1)(2 S_a* + 1)(2 S_s* + 1))`.
pub fn su2_cmpo_propagation_step(
    w_prev: &ReducedOperator,
    u: &ReducedSite,
    w_site: &ReducedOperator,
    k: HalfInt,
) -> Result<ReducedOperator> {
    let (k1, k2) = (w_prev.rank, w_site.rank);
    if !triangle(k1, k2, k) {
        return Err(SpinError::InconsistentSpinLabels(format!("ranks {k1} and {k2} cannot couple to {k}")));
    }
    same("inner bond", &w_prev.right, &w_site.left)?;
    same("previous ket vs site left", &w_prev.ket, &u.left)?;
    same("previous bra vs site left", &w_prev.bra, &u.left)?;
    same("site operator ket vs physical", &w_site.ket, &u.phys)?;
    same("site operator bra vs physical", &w_site.bra, &u.phys)?;
    w_prev.check_selection()?;
    w_site.check_selection()?;

    let mut out =
        ReducedOperator::zeros(k, w_prev.left.clone(), w_site.right.clone(), u.right.clone(), u.right.clone());
    let tk = k.twice() as i64;
    let (na, ns, nr) = (u.left.len(), u.phys.len(), u.right.len());
    for bi in 0..w_prev.left.len() {
        let sbi = w_prev.left[bi];
        for bo in 0..w_site.right.len() {
            let sbo = w_site.right[bo];
            if !triangle(sbi, k, sbo) {
                continue;
            }
            for bm in 0..w_prev.right.len() {
                let sbm = w_prev.right[bm];
                let six = wigner6j(sbi, k1, sbm, k2, sbo, k);
                if six == 0.0 {
                    continue;
                }
                let bond = phase_twice(sbi.twice() as i64 + sbo.twice() as i64 + k1.twice() as i64 + k2.twice() as i64)
                    * (((sbm.twice() + 1) as i64 * (tk + 1)) as f64).sqrt()
                    * six;
                for ab in 0..na {
                    for ak in 0..na {
                        let wp = w_prev.get(bi, bm, ab, ak);
                        if wp == 0.0 {
                            continue;
                        }
                        for sb in 0..ns {
                            for sk in 0..ns {
                                let ws = w_site.get(bm, bo, sb, sk);
                                if ws == 0.0 {
                                    continue;
                                }
                                for rb in 0..nr {
                                    let ub = u.get(ab, sb, rb);
                                    if ub == 0.0 {
                                        continue;
                                    }
                                    for rk in 0..nr {
                                        let uk = u.get(ak, sk, rk);
                                        if uk == 0.0 {
                                            continue;
                                        }
                                        let nine = wigner9j([
                                            [u.left[ak], u.phys[sk], u.right[rk]],
                                            [k1, k2, k],
                                            [u.left[ab], u.phys[sb], u.right[rb]],
                                        ]);
                                        if nine == 0.0 {
                                            continue;
                                        }
                                        let norm = ((u.right[rk].twice() + 1) as f64
                                            * (tk + 1) as f64
                                            * (u.left[ab].twice() + 1) as f64
                                            * (u.phys[sb].twice() + 1) as f64)
                                            .sqrt();
                                        let p = out.pos(bi, bo, rb, rk);
                                        out.data[p] += bond * nine * norm * wp * ws * ub * uk;
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}
