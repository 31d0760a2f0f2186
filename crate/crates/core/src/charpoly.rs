//! Set reconciliation by characteristic polynomials over GF(2^61 - 1).
//!
//! Alice sends `chi_S(z_i)` at `d + 1` seed-derived points. Bob, knowing
//! `chi_T` at the same points, solves `chi_S(z) Q(z) = chi_T(z) P(z)` for
//! monic `P`, `Q` and reads `S \ T` off the roots of `P` and `T \ S` off
//! the roots of `Q`.
//!
//! Sizes of the two sides are not sent. For each total degree of the right
//! parity and each split of it between `P` and `Q` the linear system is
//! consistent only when the split matches `|S| - |T|`, and every consistent
//! solution equals the true pair times a common factor, which the gcd
//! removes.

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};
use crate::field::{Fp, Q};
use crate::rng_hash::Seed;

/// Universes up to this size are root-searched by exhaustive scan.
pub const SCAN_LIMIT: u64 = 1 << 20;

/// A polynomial over GF(q), coefficients from low to high degree, with no
/// trailing zeros.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct Poly(Vec<Fp>);

impl Poly {
    pub fn new(mut coeffs: Vec<Fp>) -> Poly {
        while coeffs.last().is_some_and(|c| c.is_zero()) {
            coeffs.pop();
        }
        Poly(coeffs)
    }

    pub fn zero() -> Poly {
        Poly(Vec::new())
    }

    pub fn one() -> Poly {
        Poly(vec![Fp::ONE])
    }

    /// `z - a`.
    pub fn linear(a: Fp) -> Poly {
        Poly(vec![-a, Fp::ONE])
    }

    /// `prod (z - r)` over `roots`.
    pub fn from_roots(roots: impl IntoIterator<Item = Fp>) -> Poly {
        roots.into_iter().fold(Poly::one(), |acc, r| acc.mul(&Poly::linear(r)))
    }

    pub fn coeffs(&self) -> &[Fp] {
        &self.0
    }

    pub fn is_zero(&self) -> bool {
        self.0.is_empty()
    }

    /// Degree; the zero polynomial reports `None`.
    pub fn degree(&self) -> Option<usize> {
        self.0.len().checked_sub(1)
    }

    fn lead(&self) -> Fp {
        *self.0.last().expect("zero polynomial has no leading coefficient")
    }

    pub fn eval(&self, z: Fp) -> Fp {
        self.0.iter().rev().fold(Fp::ZERO, |acc, &c| acc * z + c)
    }

    pub fn monic(&self) -> Poly {
        if self.is_zero() {
            return Poly::zero();
        }
        let inv = self.lead().inv().unwrap();
        Poly(self.0.iter().map(|&c| c * inv).collect())
    }

    pub fn add(&self, other: &Poly) -> Poly {
        let n = self.0.len().max(other.0.len());
        let at = |p: &Poly, i: usize| p.0.get(i).copied().unwrap_or(Fp::ZERO);
        Poly::new((0..n).map(|i| at(self, i) + at(other, i)).collect())
    }

    pub fn sub(&self, other: &Poly) -> Poly {
        let n = self.0.len().max(other.0.len());
        let at = |p: &Poly, i: usize| p.0.get(i).copied().unwrap_or(Fp::ZERO);
        Poly::new((0..n).map(|i| at(self, i) - at(other, i)).collect())
    }

    pub fn mul(&self, other: &Poly) -> Poly {
        if self.is_zero() || other.is_zero() {
            return Poly::zero();
        }
        let mut out = vec![Fp::ZERO; self.0.len() + other.0.len() - 1];
        for (i, &a) in self.0.iter().enumerate() {
            for (j, &b) in other.0.iter().enumerate() {
                out[i + j] += a * b;
            }
        }
        Poly::new(out)
    }

    /// Quotient and remainder; panics on a zero divisor.
    pub fn div_rem(&self, divisor: &Poly) -> (Poly, Poly) {
        let dd = divisor.degree().expect("division by the zero polynomial");
        let Some(nd) = self.degree() else { return (Poly::zero(), Poly::zero()) };
        if nd < dd {
            return (Poly::zero(), self.clone());
        }
        let inv = divisor.lead().inv().unwrap();
        let mut rem = self.0.clone();
        let mut quot = vec![Fp::ZERO; nd - dd + 1];
        for i in (0..=nd - dd).rev() {
            let c = rem[i + dd] * inv;
            quot[i] = c;
            if c.is_zero() {
                continue;
            }
            for (j, &b) in divisor.0.iter().enumerate() {
                rem[i + j] -= c * b;
            }
        }
        rem.truncate(dd);
        (Poly::new(quot), Poly::new(rem))
    }

    pub fn rem(&self, divisor: &Poly) -> Poly {
        self.div_rem(divisor).1
    }

    /// Monic gcd; `gcd(0, 0) = 0`.
    pub fn gcd(&self, other: &Poly) -> Poly {
        let (mut a, mut b) = (self.clone(), other.clone());
        while !b.is_zero() {
            let r = a.rem(&b);
            a = b;
            b = r;
        }
        a.monic()
    }

    /// `self^e mod m`.
    pub fn pow_mod(&self, mut e: u64, m: &Poly) -> Poly {
        let mut base = self.rem(m);
        let mut acc = Poly::one().rem(m);
        while e > 0 {
            if e & 1 == 1 {
                acc = acc.mul(&base).rem(m);
            }
            base = base.mul(&base).rem(m);
            e >>= 1;
        }
        acc
    }
}

/// Values of a characteristic polynomial at the shared points.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EvalVector {
    pub values: Vec<Fp>,
}

impl EvalVector {
    /// `u16` count followed by 8-byte little-endian values.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(2 + 8 * self.values.len());
        out.extend_from_slice(&(self.values.len() as u16).to_le_bytes());
        for v in &self.values {
            out.extend_from_slice(&v.value().to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<EvalVector> {
        let (head, rest) = bytes.split_at_checked(2).ok_or_else(|| Error::MalformedBytes("evals: truncated".into()))?;
        let n = u16::from_le_bytes([head[0], head[1]]) as usize;
        if rest.len() != 8 * n {
            return Err(Error::MalformedBytes(format!("evals: expected {n} values, got {} bytes", rest.len())));
        }
        let values = rest
            .chunks_exact(8)
            .map(|c| {
                let v = u64::from_le_bytes(c.try_into().unwrap());
                if v >= Q {
                    Err(Error::MalformedBytes("evals: value not reduced".into()))
                } else {
                    Ok(Fp::new(v))
                }
            })
            .collect::<Result<_>>()?;
        Ok(EvalVector { values })
    }

    /// Bits of evaluation values, excluding the count prefix.
    pub fn value_bits(&self) -> usize {
        64 * self.values.len()
    }
}

/// `count` evaluation points drawn from `seed`, avoiding the universe
/// `[0, universe)` whenever it is smaller than the field.
pub fn eval_points(seed: &Seed, count: usize, universe: u64) -> Vec<Fp> {
    let mut rng = seed.derive("charpoly-points", 0).rng();
    let lo = if universe < Q / 2 { universe } else { 0 };
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let z = rng.gen_range(lo..Q);
        if seen.insert(z) {
            out.push(Fp::new(z));
        }
    }
    out
}

/// `chi_S(z) = prod (z - x)` at each point.
pub fn evaluate(set: &[u64], points: &[Fp]) -> Result<EvalVector> {
    if let Some(&x) = set.iter().find(|&&x| x >= Q) {
        return Err(Error::RangeExceeded(format!("element {x} does not fit the field")));
    }
    let values = points.iter().map(|&z| set.iter().fold(Fp::ONE, |acc, &x| acc * (z - Fp::new(x)))).collect();
    Ok(EvalVector { values })
}

/// Particular solution of `A x = rhs` (free variables zero), or `None`
/// when the system is inconsistent.
fn solve(mut rows: Vec<Vec<Fp>>, cols: usize) -> Option<Vec<Fp>> {
    let mut pivots = Vec::new();
    let mut r = 0;
    for c in 0..cols {
        let Some(p) = (r..rows.len()).find(|&i| !rows[i][c].is_zero()) else { continue };
        rows.swap(r, p);
        let inv = rows[r][c].inv().unwrap();
        for v in rows[r][c..].iter_mut() {
            *v *= inv;
        }
        let pivot = rows[r].clone();
        for (i, row) in rows.iter_mut().enumerate() {
            if i != r && !row[c].is_zero() {
                let f = row[c];
                for (v, &pv) in row[c..].iter_mut().zip(&pivot[c..]) {
                    *v -= f * pv;
                }
            }
        }
        pivots.push(c);
        r += 1;
        if r == rows.len() {
            break;
        }
    }
    if rows[r..].iter().any(|row| !row[cols].is_zero()) {
        return None;
    }
    let mut x = vec![Fp::ZERO; cols];
    for (i, &c) in pivots.iter().enumerate() {
        x[c] = rows[i][cols];
    }
    Some(x)
}

/// Monic `(P, Q)` of degrees `(k, l)` with `a_i Q(z_i) = b_i P(z_i)`.
fn interpolate(points: &[Fp], a: &[Fp], b: &[Fp], k: usize, l: usize) -> Option<(Poly, Poly)> {
    let rows = points
        .iter()
        .zip(a.iter().zip(b))
        .map(|(&z, (&ai, &bi))| {
            let mut row = Vec::with_capacity(k + l + 1);
            let mut zp = Fp::ONE;
            let mut powers = Vec::with_capacity(k.max(l) + 1);
            for _ in 0..=k.max(l) {
                powers.push(zp);
                zp *= z;
            }
            row.extend(powers[..k].iter().map(|&p| -(bi * p)));
            row.extend(powers[..l].iter().map(|&p| ai * p));
            row.push(bi * powers[k] - ai * powers[l]);
            row
        })
        .collect();
    let x = solve(rows, k + l)?;
    let mut p = x[..k].to_vec();
    p.push(Fp::ONE);
    let mut q = x[k..].to_vec();
    q.push(Fp::ONE);
    Some((Poly::new(p), Poly::new(q)))
}

/// Recovers `(S \ T, T \ S)` from Alice's evaluations and Bob's set.
pub fn reconcile(alice: &EvalVector, points: &[Fp], bob: &[u64], d: usize, universe: u64) -> Result<(Vec<u64>, Vec<u64>)> {
    if alice.values.len() < d + 1 || points.len() < alice.values.len() {
        return Err(Error::InvalidParams(format!("need {} evaluations, got {}", d + 1, alice.values.len())));
    }
    let m = alice.values.len();
    let points = &points[..m];
    let b = evaluate(bob, points)?.values;
    let bob_set: HashSet<u64> = bob.iter().copied().collect();
    let mut found: Option<(Vec<u64>, Vec<u64>)> = None;
    for total in [d, d.wrapping_sub(1)] {
        if total > d {
            continue;
        }
        for k in 0..=total {
            let Some((p, q)) = interpolate(points, &alice.values, &b, k, total - k) else { continue };
            let g = p.gcd(&q);
            let p = p.div_rem(&g).0;
            let q = q.div_rem(&g).0;
            let Ok(only_a) = find_roots(&p, universe) else { continue };
            if only_a.iter().any(|x| bob_set.contains(x)) {
                continue;
            }
            let Some(only_b) = roots_among(&q, bob) else { continue };
            let mut cand = (only_a, only_b);
            cand.0.sort_unstable();
            cand.1.sort_unstable();
            match &found {
                None => found = Some(cand),
                Some(prev) if *prev == cand => {}
                Some(_) => return Err(Error::InterpolationFailure),
            }
        }
    }
    found.ok_or(Error::InterpolationFailure)
}

/// Distinct roots of `q` among `candidates`, or `None` if `q` does not
/// split into exactly those.
fn roots_among(q: &Poly, candidates: &[u64]) -> Option<Vec<u64>> {
    let deg = q.degree()?;
    if deg == 0 {
        return Some(Vec::new());
    }
    let roots: Vec<u64> = candidates.iter().copied().filter(|&x| q.eval(Fp::new(x)).is_zero()).collect();
    if roots.len() != deg {
        return None;
    }
    // Distinct candidate roots accounting for the full degree means q is
    // exactly their product.
    (Poly::from_roots(roots.iter().map(|&x| Fp::new(x))) == *q).then_some(roots)
}

/// All roots of `p` in `[0, universe)`, each of multiplicity one; fails if
/// `p` does not split into such roots.
pub fn find_roots(p: &Poly, universe: u64) -> Result<Vec<u64>> {
    let deg = p.degree().ok_or(Error::RootFailure)?;
    if deg == 0 {
        return Ok(Vec::new());
    }
    let p = p.monic();
    let mut roots = if universe <= SCAN_LIMIT {
        (0..universe).filter(|&x| p.eval(Fp::new(x)).is_zero()).collect::<Vec<_>>()
    } else {
        // gcd(p, z^q - z) is the product of the distinct linear factors.
        let z = Poly::new(vec![Fp::ZERO, Fp::ONE]);
        let zq = z.pow_mod(Q, &p);
        if p.gcd(&zq.sub(&z)) != p {
            return Err(Error::RootFailure);
        }
        let mut rng = ChaCha20Rng::seed_from_u64(deg as u64);
        let mut out = Vec::with_capacity(deg);
        split(&p, &mut rng, &mut out);
        out.into_iter().map(|r| r.value()).collect()
    };
    roots.sort_unstable();
    if roots.len() != deg || roots.iter().any(|&r| r >= universe) || roots.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::RootFailure);
    }
    Ok(roots)
}

/// Equal-degree splitting of a squarefree, fully split monic polynomial.
fn split(p: &Poly, rng: &mut ChaCha20Rng, out: &mut Vec<Fp>) {
    match p.degree() {
        Some(0) | None => {}
        Some(1) => out.push(-p.coeffs()[0]),
        Some(deg) => loop {
            let r = Fp::new(rng.gen_range(0..Q));
            let shifted = Poly::new(vec![r, Fp::ONE]);
            let h = shifted.pow_mod((Q - 1) / 2, p).sub(&Poly::one());
            let g = p.gcd(&h);
            if let Some(gd) = g.degree() {
                if gd > 0 && gd < deg {
                    let rest = p.div_rem(&g).0;
                    split(&g, rng, out);
                    split(&rest, rng, out);
                    return;
                }
            }
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::seq::SliceRandom;

    fn fp(v: u64) -> Fp {
        Fp::new(v)
    }

    #[test]
    fn evaluate_examples() {
        let pts = [fp(5), fp(7)];
        assert_eq!(evaluate(&[], &pts).unwrap().values, vec![Fp::ONE, Fp::ONE]);
        assert_eq!(evaluate(&[3], &pts[..1]).unwrap().values, vec![fp(2)]);
        assert_eq!(evaluate(&[1, 2, 4], &pts[1..]).unwrap().values, vec![fp(90)]);
        assert!(evaluate(&[Q], &pts).is_err());
    }

    #[test]
    fn evaluate_is_multiplicative() {
        let pts = eval_points(&Seed::from_u64(1), 10, 1 << 32);
        let (a, b) = ([1u64, 5, 9], [2u64, 77]);
        let joint: Vec<u64> = a.iter().chain(&b).copied().collect();
        let ea = evaluate(&a, &pts).unwrap().values;
        let eb = evaluate(&b, &pts).unwrap().values;
        let ej = evaluate(&joint, &pts).unwrap().values;
        for i in 0..pts.len() {
            assert_eq!(ej[i], ea[i] * eb[i]);
        }
    }

    #[test]
    fn points_avoid_the_universe() {
        let pts = eval_points(&Seed::from_u64(2), 100, 1 << 40);
        assert!(pts.iter().all(|p| p.value() >= 1 << 40));
        assert_eq!(pts, eval_points(&Seed::from_u64(2), 100, 1 << 40));
    }

    #[test]
    fn poly_division_roundtrip() {
        let a = Poly::from_roots([fp(2), fp(7), fp(11)]);
        let b = Poly::from_roots([fp(7)]);
        let (q, r) = a.div_rem(&b);
        assert!(r.is_zero());
        assert_eq!(q, Poly::from_roots([fp(2), fp(11)]));
        assert_eq!(a.gcd(&Poly::from_roots([fp(11), fp(3)])), Poly::linear(fp(11)));
    }

    #[test]
    fn roots_examples() {
        for universe in [1u64 << 10, 1 << 40] {
            assert_eq!(find_roots(&Poly::linear(fp(9)), universe).unwrap(), vec![9]);
            let p = Poly::from_roots([fp(2), fp(7), fp(11)]);
            assert_eq!(find_roots(&p, universe).unwrap(), vec![2, 7, 11]);
            let double = Poly::from_roots([fp(4), fp(4)]);
            assert!(matches!(find_roots(&double, universe), Err(Error::RootFailure)));
        }
        // z^2 - n with n a non-residue: q = 3 mod 4, so -1 is one.
        let irreducible = Poly::new(vec![Fp::ONE, Fp::ZERO, Fp::ONE]);
        assert!(matches!(find_roots(&irreducible, 1 << 40), Err(Error::RootFailure)));
        assert!(matches!(find_roots(&irreducible, 1 << 10), Err(Error::RootFailure)));
        let outside = Poly::linear(fp(5000));
        assert!(find_roots(&outside, 1000).is_err());
    }

    #[test]
    fn roots_of_random_products() {
        let mut rng = Seed::from_u64(3).rng();
        for deg in [1usize, 2, 5, 16, 33] {
            let mut roots: Vec<u64> = (0..deg).map(|_| rng.gen_range(0..1u64 << 61)).collect();
            roots.sort_unstable();
            roots.dedup();
            let p = Poly::from_roots(roots.iter().map(|&r| fp(r)));
            assert_eq!(find_roots(&p, Q).unwrap(), roots);
        }
    }

    fn run(s: &[u64], t: &[u64], d: usize, universe: u64, seed: u64) -> Result<(Vec<u64>, Vec<u64>)> {
        let pts = eval_points(&Seed::from_u64(seed), d + 1, universe);
        let evals = evaluate(s, &pts).unwrap();
        reconcile(&evals, &pts, t, d, universe)
    }

    #[test]
    fn reconcile_examples() {
        assert_eq!(run(&[1, 2, 3], &[1, 2, 3], 4, 100, 1).unwrap(), (vec![], vec![]));
        assert_eq!(run(&[1, 2], &[1, 3], 2, 100, 1).unwrap(), (vec![2], vec![3]));
        assert_eq!(run(&[], &[], 0, 100, 1).unwrap(), (vec![], vec![]));
        assert_eq!(run(&[5], &[], 1, 100, 1).unwrap(), (vec![5], vec![]));
        assert_eq!(run(&[], &[5], 1, 100, 1).unwrap(), (vec![], vec![5]));
    }

    #[test]
    fn reconcile_random_within_bound() {
        let mut rng = Seed::from_u64(4).rng();
        for trial in 0..60 {
            let d = rng.gen_range(0..=12usize);
            let diff = rng.gen_range(0..=d);
            let mut pool: Vec<u64> = (0..200 + diff as u64).map(|_| rng.gen_range(0..1u64 << 32)).collect();
            pool.sort_unstable();
            pool.dedup();
            pool.shuffle(&mut rng);
            let common = &pool[diff..];
            let k = rng.gen_range(0..=diff);
            let mut s: Vec<u64> = common.iter().chain(&pool[..k]).copied().collect();
            let t: Vec<u64> = common.iter().chain(&pool[k..diff]).copied().collect();
            s.shuffle(&mut rng);
            let (mut ea, mut eb) = (pool[..k].to_vec(), pool[k..diff].to_vec());
            ea.sort_unstable();
            eb.sort_unstable();
            assert_eq!(run(&s, &t, d, 1 << 32, trial).unwrap(), (ea, eb), "trial {trial}");
        }
    }

    #[test]
    fn undercapacity_is_detected() {
        let mut rng = Seed::from_u64(5).rng();
        let mut failures = 0;
        for trial in 0..300 {
            let common: Vec<u64> = (0..30).map(|_| rng.gen_range(0..1u64 << 32)).collect();
            let extra: Vec<u64> = (0..5).map(|_| rng.gen_range(0..1u64 << 32)).collect();
            let s: Vec<u64> = common.iter().chain(&extra[..3]).copied().collect();
            let t: Vec<u64> = common.iter().chain(&extra[3..]).copied().collect();
            match run(&s, &t, 3, 1 << 32, 1000 + trial) {
                Err(_) => failures += 1,
                Ok((a, b)) => {
                    // Anything returned must not reproduce Alice's set.
                    let mut rebuilt: Vec<u64> = t.iter().filter(|x| !b.contains(x)).chain(&a).copied().collect();
                    let mut truth = s.clone();
                    rebuilt.sort_unstable();
                    truth.sort_unstable();
                    assert_ne!(rebuilt, truth);
                }
            }
        }
        assert!(failures > 250);
    }

    #[test]
    fn eval_bytes_roundtrip() {
        let e = EvalVector { values: vec![fp(1), fp(Q - 1), fp(0)] };
        let bytes = e.to_bytes();
        assert_eq!(bytes.len(), 2 + 24);
        assert_eq!(EvalVector::from_bytes(&bytes).unwrap(), e);
        assert!(EvalVector::from_bytes(&bytes[..5]).is_err());
        assert_eq!(e.value_bits(), 192);
    }
}
