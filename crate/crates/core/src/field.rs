//! Arithmetic in GF(2^61 - 1).
//!
//! The Mersenne modulus lets a 122-bit product be reduced with two shifts
//! and an add, which is what both the pairwise hash family and the
//! characteristic-polynomial code lean on.

use std::fmt;
use std::ops::{Add, AddAssign, Mul, MulAssign, Neg, Sub, SubAssign};

/// The field modulus 2^61 - 1.
pub const Q: u64 = (1 << 61) - 1;

#[inline]
fn reduce128(x: u128) -> u64 {
    let lo = (x as u64) & Q;
    let hi = (x >> 61) as u64;
    reduce(lo + hi)
}

/// Reduce any `u64` into `[0, Q)`.
#[inline]
pub fn reduce(x: u64) -> u64 {
    let r = (x & Q) + (x >> 61);
    if r >= Q {
        r - Q
    } else {
        r
    }
}

/// `a * b mod Q` for operands already below `Q`.
#[inline]
pub fn mul_mod(a: u64, b: u64) -> u64 {
    reduce128(a as u128 * b as u128)
}

/// An element of GF(2^61 - 1).
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Fp(u64);

impl Fp {
    pub const ZERO: Fp = Fp(0);
    pub const ONE: Fp = Fp(1);

    /// Builds an element, reducing `v` modulo `Q`.
    #[inline]
    pub fn new(v: u64) -> Fp {
        Fp(reduce(v))
    }

    #[inline]
    pub fn value(self) -> u64 {
        self.0
    }

    #[inline]
    pub fn is_zero(self) -> bool {
        self.0 == 0
    }

    pub fn pow(self, mut e: u64) -> Fp {
        let mut base = self;
        let mut acc = Fp::ONE;
        while e > 0 {
            if e & 1 == 1 {
                acc *= base;
            }
            base *= base;
            e >>= 1;
        }
        acc
    }

    /// Multiplicative inverse; `None` for zero.
    pub fn inv(self) -> Option<Fp> {
        if self.0 == 0 {
            None
        } else {
            Some(self.pow(Q - 2))
        }
    }
}

impl fmt::Debug for Fp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl fmt::Display for Fp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl Add for Fp {
    type Output = Fp;
    #[inline]
    fn add(self, rhs: Fp) -> Fp {
        let s = self.0 + rhs.0;
        Fp(if s >= Q { s - Q } else { s })
    }
}

impl Sub for Fp {
    type Output = Fp;
    #[inline]
    fn sub(self, rhs: Fp) -> Fp {
        if self.0 >= rhs.0 {
            Fp(self.0 - rhs.0)
        } else {
            Fp(self.0 + Q - rhs.0)
        }
    }
}

impl Neg for Fp {
    type Output = Fp;
    #[inline]
    fn neg(self) -> Fp {
        Fp::ZERO - self
    }
}

impl Mul for Fp {
    type Output = Fp;
    #[inline]
    fn mul(self, rhs: Fp) -> Fp {
        Fp(mul_mod(self.0, rhs.0))
    }
}

impl AddAssign for Fp {
    fn add_assign(&mut self, rhs: Fp) {
        *self = *self + rhs;
    }
}

impl SubAssign for Fp {
    fn sub_assign(&mut self, rhs: Fp) {
        *self = *self - rhs;
    }
}

impl MulAssign for Fp {
    fn mul_assign(&mut self, rhs: Fp) {
        *self = *self * rhs;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reduction_matches_u128_remainder() {
        let samples = [0u64, 1, Q - 1, Q, Q + 1, u64::MAX, 1 << 61, 12345678901234567];
        for &a in &samples {
            assert_eq!(reduce(a), a % Q);
            for &b in &samples {
                let (ra, rb) = (a % Q, b % Q);
                assert_eq!(mul_mod(ra, rb) as u128, (ra as u128 * rb as u128) % Q as u128);
            }
        }
    }

    #[test]
    fn inverse_roundtrip() {
        let mut x = 0x9e3779b97f4a7c15u64;
        for _ in 0..10_000 {
            x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let a = Fp::new(x);
            if a.is_zero() {
                continue;
            }
            assert_eq!(a * a.inv().unwrap(), Fp::ONE);
        }
        assert!(Fp::ZERO.inv().is_none());
    }

    #[test]
    fn subtraction_wraps() {
        assert_eq!(Fp::new(3) - Fp::new(5), Fp::new(Q - 2));
        assert_eq!(-Fp::ONE + Fp::ONE, Fp::ZERO);
    }
}
