//! Shared randomness and hash families.
//!
//! Both parties start from one 256-bit [`Seed`] and derive every hash
//! function they need along labeled paths, so identical labels give
//! identical functions on both sides without any extra communication.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::field::{self, mul_mod, Q};

/// A 256-bit seed, either a session root or the value reached by following
/// a derivation path from one.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Seed([u8; 32]);

impl Seed {
    pub fn from_bytes(bytes: [u8; 32]) -> Seed {
        Seed(bytes)
    }

    /// Convenience root seed for tests and sweeps.
    pub fn from_u64(x: u64) -> Seed {
        let mut h = Sha256::new();
        h.update(b"sosync-root");
        h.update(x.to_le_bytes());
        Seed(h.finalize().into())
    }

    /// Parses 64 hex characters (surrounding whitespace ignored).
    pub fn from_hex(s: &str) -> Result<Seed> {
        let s = s.trim();
        if s.len() != 64 {
            return Err(Error::InvalidParams(format!("seed must be 64 hex characters, got {}", s.len())));
        }
        let mut out = [0u8; 32];
        hex::decode_to_slice(s, &mut out).map_err(|e| Error::InvalidParams(format!("bad seed hex: {e}")))?;
        Ok(Seed(out))
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    /// Child seed for `(label, index)`.
    pub fn derive(&self, label: &str, index: u64) -> Seed {
        derive(self, label, index)
    }

    /// Short identifier carried in serialized headers so that mismatched
    /// parameters are caught on decode.
    pub fn id(&self) -> u64 {
        u64::from_le_bytes(self.0[..8].try_into().unwrap())
    }

    pub fn rng(&self) -> ChaCha20Rng {
        ChaCha20Rng::from_seed(self.0)
    }
}

impl fmt::Debug for Seed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Seed({})", &self.to_hex()[..16])
    }
}

/// Derives the child seed at `(label, index)`.
pub fn derive(seed: &Seed, label: &str, index: u64) -> Seed {
    debug_assert!(!label.is_empty(), "derivation labels must be nonempty");
    let mut h = Sha256::new();
    h.update(seed.0);
    h.update((label.len() as u32).to_le_bytes());
    h.update(label.as_bytes());
    h.update(index.to_le_bytes());
    Seed(h.finalize().into())
}

/// Which role a hash function plays. The arithmetic is the same affine map
/// modulo 2^61 - 1 in every case; the kind fixes how the output is shaped.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HashKind {
    Pairwise,
    Checksum,
    Bucket,
}

/// Polynomial fingerprint of word or byte sequences, evaluated at a seeded
/// point of GF(2^61 - 1). Two distinct sequences of length at most `L`
/// collide with probability at most about `2L / 2^61`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Fingerprinter {
    r: u64,
}

impl Fingerprinter {
    pub fn new(seed: &Seed) -> Fingerprinter {
        let mut rng = seed.derive("fingerprint", 0).rng();
        Fingerprinter { r: rng.gen_range(1..Q) }
    }

    #[inline]
    fn step(&self, acc: u64, w: u64) -> u64 {
        debug_assert!(w < Q);
        let v = mul_mod(acc, self.r) + w;
        if v >= Q {
            v - Q
        } else {
            v
        }
    }

    /// Fingerprint of a word sequence; each word is fed as two 32-bit halves.
    pub fn words(&self, words: &[u64]) -> u64 {
        let mut acc = 0;
        for &w in words {
            acc = self.step(acc, w >> 32);
            acc = self.step(acc, w & 0xffff_ffff);
        }
        self.step(acc, words.len() as u64 & 0xffff_ffff)
    }

    /// Fingerprint of a byte string, in 7-byte chunks.
    pub fn bytes(&self, data: &[u8]) -> u64 {
        let mut acc = 0;
        for chunk in data.chunks(7) {
            let mut buf = [0u8; 8];
            buf[..chunk.len()].copy_from_slice(chunk);
            acc = self.step(acc, u64::from_le_bytes(buf));
        }
        self.step(acc, data.len() as u64 % Q)
    }
}

/// A member of the affine family `x -> (a*x + b) mod (2^61 - 1)`.
///
/// Outputs wider than 61 bits XOR in a second independent evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HashFn {
    kind: HashKind,
    a: [u64; 2],
    b: [u64; 2],
    bits: u32,
    fp: Fingerprinter,
}

impl HashFn {
    /// Draws the parameters from `seed`.
    pub fn new(kind: HashKind, seed: &Seed, bits: u32) -> HashFn {
        assert!((1..=64).contains(&bits), "output bits must be in 1..=64");
        let mut rng = seed.rng();
        let a = [rng.gen_range(1..Q), rng.gen_range(1..Q)];
        let b = [rng.gen_range(0..Q), rng.gen_range(0..Q)];
        HashFn { kind, a, b, bits, fp: Fingerprinter::new(seed) }
    }

    pub fn pairwise(seed: &Seed, bits: u32) -> HashFn {
        HashFn::new(HashKind::Pairwise, seed, bits)
    }

    pub fn checksum(seed: &Seed) -> HashFn {
        HashFn::new(HashKind::Checksum, seed, 64)
    }

    pub fn bucket(seed: &Seed) -> HashFn {
        HashFn::new(HashKind::Bucket, seed, 61)
    }

    /// A pairwise function with explicit parameters; bits above 61 use the
    /// same `(a, b)` for both halves.
    pub fn with_params(a: u64, b: u64, bits: u32) -> HashFn {
        assert!((1..=64).contains(&bits));
        HashFn { kind: HashKind::Pairwise, a: [a % Q, a % Q], b: [b % Q, b % Q], bits, fp: Fingerprinter { r: 1 } }
    }

    pub fn kind(&self) -> HashKind {
        self.kind
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    /// The untruncated 61-bit value of the first affine map.
    #[inline]
    pub fn raw(&self, x: u64) -> u64 {
        let v = mul_mod(self.a[0], field::reduce(x)) + self.b[0];
        if v >= Q {
            v - Q
        } else {
            v
        }
    }

    /// Hash of a single word, truncated to `bits`.
    #[inline]
    pub fn word(&self, x: u64) -> u64 {
        let v = self.raw(x);
        if self.bits <= 61 {
            v & mask(self.bits)
        } else {
            let v2 = mul_mod(self.a[1], field::reduce(x)) + self.b[1];
            let v2 = if v2 >= Q { v2 - Q } else { v2 };
            (v ^ (v2 << 3)) & mask(self.bits)
        }
    }

    /// Hash of a byte string: seeded fingerprint, then the affine map.
    pub fn bytes(&self, data: &[u8]) -> u64 {
        self.word(self.fp.bytes(data))
    }

    /// Hash of a word sequence: seeded fingerprint, then the affine map.
    pub fn words(&self, words: &[u64]) -> u64 {
        self.word(self.fp.words(words))
    }

    /// Uniform bucket in `[0, m)` by multiply-shift on the 61-bit value.
    #[inline]
    pub fn bucket_of(&self, x: u64, m: usize) -> usize {
        ((self.raw(x) as u128 * m as u128) >> 61) as usize
    }
}

#[inline]
fn mask(bits: u32) -> u64 {
    if bits >= 64 {
        u64::MAX
    } else {
        (1u64 << bits) - 1
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn derive_is_deterministic_and_path_sensitive() {
        let s = Seed::from_u64(7);
        assert_eq!(s.derive("iblt", 0), s.derive("iblt", 0));
        assert_ne!(s.derive("iblt", 0), s.derive("iblt", 1));
        assert_ne!(s.derive("iblt", 0), s.derive("iblu", 0));
        assert_ne!(s.derive("ab", 0), s.derive("a", 0).derive("b", 0));
    }

    #[test]
    fn million_derivations_do_not_collide() {
        let s = Seed::from_u64(1);
        let labels = ["iblt", "sketch", "points", "child", "parent", "verify", "graph", "forest", "cascade", "multi"];
        let mut seen = HashSet::with_capacity(1_000_000);
        for label in labels {
            for i in 0..100_000u64 {
                assert!(seen.insert(s.derive(label, i)));
            }
        }
        assert_eq!(seen.len(), 1_000_000);
    }

    #[test]
    fn hex_roundtrip() {
        let s = Seed::from_u64(99);
        assert_eq!(Seed::from_hex(&s.to_hex()).unwrap(), s);
        assert_eq!(Seed::from_hex(&format!("{}\n", s.to_hex())).unwrap(), s);
        assert!(Seed::from_hex("abcd").is_err());
        assert!(Seed::from_hex(&"zz".repeat(32)).is_err());
    }

    #[test]
    fn identity_parameters_reduce_mod_q() {
        let h = HashFn::with_params(1, 0, 64);
        for x in [0u64, 5, Q - 1, Q, Q + 3, 1 << 61] {
            assert_eq!(h.raw(x), x % Q);
        }
        let h = HashFn::with_params(1, 0, 61);
        assert_eq!(h.word(123456789), 123456789);
    }

    #[test]
    fn outputs_respect_width() {
        let s = Seed::from_u64(3);
        for bits in [1, 8, 32, 61, 62, 64] {
            let h = HashFn::pairwise(&s, bits);
            for x in 0..1000u64 {
                let v = h.word(x);
                assert_eq!(v, h.word(x));
                if bits < 64 {
                    assert!(v < 1 << bits);
                }
            }
        }
    }

    #[test]
    fn golden_values() {
        let s = Seed::from_u64(0);
        assert_eq!(s.to_hex(), GOLDEN_ROOT);
        let h = HashFn::pairwise(&s.derive("golden", 0), 64);
        assert_eq!([h.word(0), h.word(1), h.word(1 << 40)], GOLDEN_WORDS);
        assert_eq!(h.bytes(b"sosync"), GOLDEN_BYTES);
    }

    const GOLDEN_ROOT: &str = "250ee356bc3457522b74645e221390b64f924d67bb9e8ab9fb8ebd2114dbc398";
    const GOLDEN_WORDS: [u64; 3] = [8437744631316668814, 3561238470137292971, 12543286969091649461];
    const GOLDEN_BYTES: u64 = 14606546690647853081;

    #[test]
    fn pairwise_collision_rate_near_ideal() {
        // Random members of the 16-bit family on a fixed pair of inputs.
        let mut rng = Seed::from_u64(11).rng();
        let trials = 1_000_000u64;
        let mut collisions = 0u64;
        for _ in 0..trials {
            let h = HashFn::with_params(rng.gen_range(1..Q), rng.gen_range(0..Q), 16);
            if h.word(12345) == h.word(987654321) {
                collisions += 1;
            }
        }
        let expected = trials as f64 / 65536.0;
        let ratio = collisions as f64 / expected;
        assert!((0.1..10.0).contains(&ratio), "collisions {collisions}, expected {expected}");

        // At 32 bits the expected count over 10^5 pairs is far below one.
        let h = HashFn::pairwise(&Seed::from_u64(12), 32);
        let hits = (0..100_000u64).filter(|&i| h.word(2 * i) == h.word(2 * i + 1)).count();
        assert!(hits <= 1);
    }

    #[test]
    fn buckets_pass_chi_squared() {
        let h = HashFn::bucket(&Seed::from_u64(5));
        let m = 100;
        let mut counts = vec![0u64; m];
        let mut rng = Seed::from_u64(6).rng();
        let draws = 1_000_000;
        for _ in 0..draws {
            counts[h.bucket_of(rng.gen::<u64>() >> 3, m)] += 1;
        }
        let e = draws as f64 / m as f64;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - e).powi(2) / e).sum();
        // 99 degrees of freedom, upper 1% point.
        assert!(chi2 < 134.64, "chi2 = {chi2}");
    }

    #[test]
    fn fingerprints_separate_lengths_and_contents() {
        let f = Fingerprinter::new(&Seed::from_u64(8));
        assert_ne!(f.bytes(b""), f.bytes(b"\0"));
        assert_ne!(f.bytes(b"abc"), f.bytes(b"abd"));
        assert_ne!(f.words(&[]), f.words(&[0]));
        assert_ne!(f.words(&[1, 2]), f.words(&[2, 1]));
        assert_eq!(f.words(&[5, 6, 7]), f.words(&[5, 6, 7]));
    }
}
