//! SU(2) coupling coefficients and the reduced-element cluster operator
//! propagation kernel.
//!
//! Spins are stored as twice their value. Clebsch-Gordan coefficients follow
//! the Condon-Shortley phase convention; 3j and 6j symbols are evaluated with
//! exact integer factorials and a single final square root.

mod reduced;

use std::fmt;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use thiserror::Error;

pub use reduced::{su2_cmpo_propagation_step, MResolved, ReducedOperator, ReducedSite};

#[derive(Debug, Error, PartialEq)]
pub enum SpinError {
    #[error("inconsistent spin labels: {0}")]
    InconsistentSpinLabels(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
}

pub type Result<T> = std::result::Result<T, SpinError>;

/// A non-negative integer or half-integer, stored as twice its value.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct HalfInt(u32);

impl HalfInt {
    pub const ZERO: HalfInt = HalfInt(0);
    pub const HALF: HalfInt = HalfInt(1);
    pub const ONE: HalfInt = HalfInt(2);

    pub const fn from_twice(twice: u32) -> Self {
        HalfInt(twice)
    }

    pub const fn int(n: u32) -> Self {
        HalfInt(2 * n)
    }

    pub const fn twice(self) -> u32 {
        self.0
    }

    pub fn value(self) -> f64 {
        self.0 as f64 / 2.0
    }

    pub fn is_integer(self) -> bool {
        self.0 % 2 == 0
    }

    /// Multiplet dimension `2j + 1`.
    pub fn dim(self) -> usize {
        self.0 as usize + 1
    }
}

impl fmt::Display for HalfInt {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0 % 2 == 0 {
            write!(f, "{}", self.0 / 2)
        } else {
            write!(f, "{}/2", self.0)
        }
    }
}

/// `|a - b| <= c <= a + b` with an integer perimeter.
pub fn triangle(a: HalfInt, b: HalfInt, c: HalfInt) -> bool {
    let (a, b, c) = (a.0 as i64, b.0 as i64, c.0 as i64);
    c <= a + b && c >= (a - b).abs() && (a + b + c) % 2 == 0
}

/// All `c` with `triangle(a, b, c)`.
pub fn coupled_range(a: HalfInt, b: HalfInt) -> impl Iterator<Item = HalfInt> {
    let lo = a.0.abs_diff(b.0);
    (lo..=a.0 + b.0).step_by(2).map(HalfInt)
}

fn factorial(n: i64) -> BigInt {
    debug_assert!(n >= 0);
    (2..=n).fold(BigInt::one(), |acc, k| acc * k)
}

/// Factorial of half a twice-value sum, which must be even and non-negative.
fn fact2(twice: i64) -> BigInt {
    debug_assert!(twice >= 0 && twice % 2 == 0);
    factorial(twice / 2)
}

fn sign(k: i64) -> i32 {
    if k.rem_euclid(2) == 0 {
        1
    } else {
        -1
    }
}

/// `s * sqrt(r)` for an exact rational `s` and non-negative rational `r`.
fn signed_sqrt(s: &BigRational, r: &BigRational) -> f64 {
    if s.is_zero() || r.is_zero() {
        return 0.0;
    }
    let mag = (s * s * r).to_f64().unwrap_or(f64::NAN).sqrt();
    if s.is_negative() {
        -mag
    } else {
        mag
    }
}

/// Squared triangle coefficient `(a+b-c)!(a-b+c)!(-a+b+c)!/(a+b+c+1)!`.
fn delta_sq(a: i64, b: i64, c: i64) -> BigRational {
    BigRational::new(fact2(a + b - c) * fact2(a - b + c) * fact2(-a + b + c), fact2(a + b + c + 2))
}

/// `<j1 m1; j2 m2 | j m>`; magnetic numbers are twice-values.
pub fn clebsch_gordan(j1: HalfInt, m1: i32, j2: HalfInt, m2: i32, j: HalfInt, m: i32) -> f64 {
    let (tj1, tj2, tj) = (j1.0 as i64, j2.0 as i64, j.0 as i64);
    let (m1, m2, m) = (m1 as i64, m2 as i64, m as i64);
    if m1 + m2 != m || !triangle(j1, j2, j) {
        return 0.0;
    }
    for (tjx, mx) in [(tj1, m1), (tj2, m2), (tj, m)] {
        if mx.abs() > tjx || (tjx + mx) % 2 != 0 {
            return 0.0;
        }
    }
    let pre = delta_sq(tj1, tj2, tj)
        * BigRational::from_integer(BigInt::from(tj + 1))
        * BigRational::from_integer(
            fact2(tj + m) * fact2(tj - m) * fact2(tj1 - m1) * fact2(tj1 + m1) * fact2(tj2 - m2) * fact2(tj2 + m2),
        );
    let mut sum = BigRational::zero();
    // k runs over twice-values with all denominators non-negative
    let lo = 0.max(tj2 - tj - m1).max(tj1 + m2 - tj);
    let hi = (tj1 + tj2 - tj).min(tj1 - m1).min(tj2 + m2);
    let mut k = lo;
    while k <= hi {
        let den = fact2(k)
            * fact2(tj1 + tj2 - tj - k)
            * fact2(tj1 - m1 - k)
            * fact2(tj2 + m2 - k)
            * fact2(tj - tj2 + m1 + k)
            * fact2(tj - tj1 - m2 + k);
        sum += BigRational::new(BigInt::from(sign(k / 2)), den);
        k += 2;
    }
    signed_sqrt(&sum, &pre)
}

/// Wigner 3j symbol `(j1 j2 j3; m1 m2 m3)`.
pub fn wigner3j(j1: HalfInt, j2: HalfInt, j3: HalfInt, m1: i32, m2: i32, m3: i32) -> f64 {
    if m1 + m2 + m3 != 0 {
        return 0.0;
    }
    let phase = sign(((j1.0 as i64) - (j2.0 as i64) - m3 as i64) / 2);
    phase as f64 * clebsch_gordan(j1, m1, j2, m2, j3, -m3) / ((j3.0 + 1) as f64).sqrt()
}

/// Wigner 6j symbol `{a b c; d e f}` by the Racah single sum.
pub fn wigner6j(a: HalfInt, b: HalfInt, c: HalfInt, d: HalfInt, e: HalfInt, f: HalfInt) -> f64 {
    if !(triangle(a, b, c) && triangle(a, e, f) && triangle(d, b, f) && triangle(d, e, c)) {
        return 0.0;
    }
    let [a, b, c, d, e, f] = [a, b, c, d, e, f].map(|x| x.0 as i64);
    let pre = delta_sq(a, b, c) * delta_sq(a, e, f) * delta_sq(d, b, f) * delta_sq(d, e, c);
    let tri = [a + b + c, a + e + f, d + b + f, d + e + c];
    let quad = [a + b + d + e, b + c + e + f, c + a + f + d];
    let lo = *tri.iter().max().unwrap();
    let hi = *quad.iter().min().unwrap();
    let mut sum = BigRational::zero();
    let mut t = lo;
    while t <= hi {
        let den = tri.iter().map(|&x| fact2(t - x)).product::<BigInt>()
            * quad.iter().map(|&x| fact2(x - t)).product::<BigInt>();
        sum += BigRational::new(BigInt::from(sign(t / 2)) * fact2(t + 2), den);
        t += 2;
    }
    signed_sqrt(&sum, &pre)
}

/// Wigner 9j symbol with rows `j[0]`, `j[1]`, `j[2]`, as a sum over
/// products of three 6j symbols.
pub fn wigner9j(j: [[HalfInt; 3]; 3]) -> f64 {
    let [[a, b, c], [d, e, f], [g, h, i]] = j;
    let rows = [[a, b, c], [d, e, f], [g, h, i]];
    let cols = [[a, d, g], [b, e, h], [c, f, i]];
    if !rows.iter().chain(&cols).all(|t| triangle(t[0], t[1], t[2])) {
        return 0.0;
    }
    let lo = a.0.abs_diff(i.0).max(d.0.abs_diff(h.0)).max(b.0.abs_diff(f.0));
    let hi = (a.0 + i.0).min(d.0 + h.0).min(b.0 + f.0);
    let mut sum = 0.0;
    let mut x = lo;
    while x <= hi {
        let hx = HalfInt(x);
        let p = wigner6j(a, b, c, f, i, hx) * wigner6j(d, e, f, b, hx, h) * wigner6j(g, h, i, hx, a, d);
        // (-1)^(2x) is +1 for integer x
        let s = if x % 2 == 0 { 1.0 } else { -1.0 };
        sum += s * (x + 1) as f64 * p;
        x += 2;
    }
    sum
}

/// `(-1)^(twice / 2)` for an even twice-value sum.
pub(crate) fn phase_twice(twice: i64) -> f64 {
    debug_assert!(twice % 2 == 0);
    sign(twice / 2) as f64
}
