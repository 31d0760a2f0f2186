//! Exhaustive protocol for tiny graphs.
//!
//! Alice sends one evaluation `p_A(r) mod q` of the polynomial whose
//! coefficients are the bits of her canonical adjacency string. Bob walks
//! every graph within `d` edge edits of his own, canonicalizes each by
//! trying all vertex permutations, and keeps the first whose polynomial
//! agrees at `r`.

use rand::Rng;

use super::Graph;
use crate::error::{Error, Result};
use crate::rng_hash::Seed;
use crate::transport::{Endpoint, MsgType};

pub const MAX_N: usize = 8;
pub const MAX_D: usize = 2;

/// Upper-triangle bits in row-major order, first pair most significant.
pub fn adjacency_string(g: &Graph, perm: &[usize]) -> u64 {
    let n = g.n();
    let mut inv = vec![0; n];
    perm.iter().enumerate().for_each(|(v, &p)| inv[p] = v);
    let mut s = 0u64;
    for i in 0..n {
        for j in i + 1..n {
            s = (s << 1) | g.has_edge(inv[i], inv[j]) as u64;
        }
    }
    s
}

/// Lexicographically least adjacency string over all relabelings.
pub fn canonical_string(g: &Graph) -> u64 {
    let n = g.n();
    let adj: Vec<u32> = (0..n).map(|u| g.neighbors(u).iter().fold(0u32, |m, &v| m | 1 << v)).collect();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = u64::MAX;
    // `perm[i]` is the old vertex placed at position i.
    permute_all(&mut perm, 0, &mut |p| {
        let mut s = 0u64;
        for i in 0..n {
            for j in i + 1..n {
                s = (s << 1) | (adj[p[i]] >> p[j] & 1) as u64;
            }
        }
        best = best.min(s);
    });
    best
}

fn permute_all(p: &mut [usize], k: usize, f: &mut impl FnMut(&[usize])) {
    if k == p.len() {
        f(p);
        return;
    }
    for i in k..p.len() {
        p.swap(k, i);
        permute_all(p, k + 1, f);
        p.swap(k, i);
    }
}

pub fn is_isomorphic(a: &Graph, b: &Graph) -> bool {
    a.n() == b.n() && a.edge_count() == b.edge_count() && canonical_string(a) == canonical_string(b)
}

fn mul_mod(a: u64, b: u64, q: u64) -> u64 {
    ((a as u128 * b as u128) % q as u128) as u64
}

fn pow_mod(mut a: u64, mut e: u64, q: u64) -> u64 {
    let mut r = 1 % q;
    while e > 0 {
        if e & 1 == 1 {
            r = mul_mod(r, a, q);
        }
        a = mul_mod(a, a, q);
        e >>= 1;
    }
    r
}

/// Deterministic Miller-Rabin for all 64-bit inputs.
pub fn is_prime(n: u64) -> bool {
    if n < 2 {
        return false;
    }
    const BASES: [u64; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];
    for p in BASES {
        if n.is_multiple_of(p) {
            return n == p;
        }
    }
    let (mut m, mut s) = (n - 1, 0);
    while m % 2 == 0 {
        m /= 2;
        s += 1;
    }
    'witness: for a in BASES {
        let mut x = pow_mod(a, m, n);
        if x == 1 || x == n - 1 {
            continue;
        }
        for _ in 1..s {
            x = mul_mod(x, x, n);
            if x == n - 1 {
                continue 'witness;
            }
        }
        return false;
    }
    true
}

/// Smallest prime at least `n^(2d+3)`.
pub fn modulus(n: usize, d: usize) -> Result<u64> {
    let bound = (n.max(1) as u64)
        .checked_pow(2 * d as u32 + 3)
        .filter(|&b| b < 1 << 62)
        .ok_or_else(|| Error::OracleScaleExceeded(format!("n = {n}, d = {d} overflows the modulus")))?;
    Ok((bound..).find(|&x| is_prime(x)).expect("a prime follows every bound below 2^62"))
}

/// Bits per field element, `ceil(log2 q)`.
pub fn element_bits(q: u64) -> u32 {
    u64::BITS - (q - 1).leading_zeros()
}

/// `sum_k s_k r^k mod q`, where `s_0` is the most significant of `bits` bits.
pub fn eval_string(s: u64, bits: usize, r: u64, q: u64) -> u64 {
    let (mut acc, mut pow) = (0u64, 1 % q);
    for k in 0..bits {
        if s >> (bits - 1 - k) & 1 == 1 {
            acc = (acc + pow) % q;
        }
        pow = mul_mod(pow, r, q);
    }
    acc
}

/// The two field elements packed into `2 * element_bits(q)` bits,
/// little-endian, zero-padded to whole bytes.
pub fn pack(r: u64, value: u64, q: u64) -> Vec<u8> {
    let b = element_bits(q);
    let word = r as u128 | (value as u128) << b;
    word.to_le_bytes()[..(2 * b as usize).div_ceil(8)].to_vec()
}

pub fn unpack(bytes: &[u8], q: u64) -> Result<(u64, u64)> {
    let b = element_bits(q);
    if bytes.len() != (2 * b as usize).div_ceil(8) {
        return Err(Error::MalformedBytes(format!("fingerprint of {} bytes", bytes.len())));
    }
    let mut buf = [0u8; 16];
    buf[..bytes.len()].copy_from_slice(bytes);
    let word = u128::from_le_bytes(buf);
    let mask = (1u128 << b) - 1;
    if word >> (2 * b) != 0 {
        return Err(Error::MalformedBytes("fingerprint padding".into()));
    }
    let (r, v) = ((word & mask) as u64, (word >> b & mask) as u64);
    if r >= q || v >= q {
        return Err(Error::MalformedBytes("fingerprint element outside the field".into()));
    }
    Ok((r, v))
}

fn check_scale(n: usize, d: usize) -> Result<()> {
    if n > MAX_N || d > MAX_D {
        return Err(Error::OracleScaleExceeded(format!("n = {n}, d = {d}; the oracle handles n <= {MAX_N}, d <= {MAX_D}")));
    }
    Ok(())
}

fn pairs(n: usize) -> usize {
    n * n.saturating_sub(1) / 2
}

pub fn alice(ep: &mut Endpoint, g: &Graph, d: usize, seed: &Seed) -> Result<()> {
    check_scale(g.n(), d)?;
    let q = modulus(g.n(), d)?;
    let r = seed.derive("oracle-point", 0).rng().gen_range(0..q);
    let value = eval_string(canonical_string(g), pairs(g.n()), r, q);
    ep.send(1, MsgType::GRAPH_FP, pack(r, value, q))
}

/// Bob's side: the first graph within `d` edits, in order of edit count
/// then lexicographic edit list, whose fingerprint matches.
pub fn bob(ep: &mut Endpoint, g: &Graph, d: usize) -> Result<Graph> {
    check_scale(g.n(), d)?;
    let q = modulus(g.n(), d)?;
    let (r, value) = unpack(&ep.expect(MsgType::GRAPH_FP)?.payload, q)?;
    let n = g.n();
    let all: Vec<(usize, usize)> = (0..n).flat_map(|u| (u + 1..n).map(move |v| (u, v))).collect();
    let bits = all.len();
    let mut chosen = Vec::with_capacity(d);
    for i in 0..=d.min(bits) {
        if let Some(hit) = search(g, &all, &mut chosen, 0, i, &|c: &Graph| eval_string(canonical_string(c), bits, r, q) == value) {
            return Ok(hit);
        }
    }
    Err(Error::NoMatch)
}

fn search(g: &Graph, all: &[(usize, usize)], chosen: &mut Vec<usize>, from: usize, left: usize, ok: &impl Fn(&Graph) -> bool) -> Option<Graph> {
    if left == 0 {
        let mut c = g.clone();
        chosen.iter().for_each(|&k| c.toggle(all[k].0, all[k].1));
        return ok(&c).then_some(c);
    }
    for k in from..all.len() {
        chosen.push(k);
        let hit = search(g, all, chosen, k + 1, left - 1, ok);
        chosen.pop();
        if hit.is_some() {
            return hit;
        }
    }
    None
}

/// Every unlabeled graph on `n` vertices, as canonical representatives.
pub fn all_graphs(n: usize) -> Vec<Graph> {
    assert!(n <= 6, "enumeration is exhaustive over labeled graphs");
    let bits = pairs(n);
    let all: Vec<(usize, usize)> = (0..n).flat_map(|u| (u + 1..n).map(move |v| (u, v))).collect();
    let mut seen = std::collections::BTreeMap::new();
    for mask in 0u64..1 << bits {
        let g = Graph::from_edges(n, (0..bits).filter(|k| mask >> k & 1 == 1).map(|k| all[k])).expect("pairs are in range");
        seen.entry(canonical_string(&g)).or_insert(g);
    }
    seen.into_values().collect()
}

#[cfg(test)]
mod tests {
    use super::super::{reconcile, GraphConfig, Scheme};
    use super::*;
    use crate::transport::Backend;

    #[test]
    fn primes_and_moduli() {
        let small: Vec<u64> = (0..40).filter(|&x| is_prime(x)).collect();
        assert_eq!(small, vec![2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37]);
        assert!(is_prime((1 << 61) - 1));
        assert!(!is_prime(3215031751));
        assert_eq!(modulus(5, 1).unwrap(), 3137);
        assert_eq!(modulus(1, 0).unwrap(), 2);
        assert!(modulus(8, 2).unwrap() >= 8u64.pow(7));
    }

    #[test]
    fn canonical_forms_count_unlabeled_graphs() {
        let counts: Vec<usize> = (1..=5).map(|n| all_graphs(n).len()).collect();
        assert_eq!(counts, vec![1, 2, 4, 11, 34]);
        let connected = all_graphs(5).into_iter().filter(Graph::is_connected).count();
        assert_eq!(connected, 21);
    }

    #[test]
    #[allow(clippy::unusual_byte_groupings)]
    fn canonical_string_ignores_labels() {
        let g = Graph::from_edges(5, [(0, 1), (1, 2), (2, 3), (3, 4)]).unwrap();
        let h = g.permute(&[3, 0, 4, 1, 2]);
        assert_eq!(canonical_string(&g), canonical_string(&h));
        assert_eq!(adjacency_string(&g, &[0, 1, 2, 3, 4]), 0b1000_100_10_1);
    }

    #[test]
    fn pack_round_trip() {
        let q = modulus(6, 1).unwrap();
        let bytes = pack(q - 1, 17, q);
        assert_eq!(bytes.len(), (2 * element_bits(q) as usize).div_ceil(8));
        assert_eq!(unpack(&bytes, q).unwrap(), (q - 1, 17));
        assert!(unpack(&bytes[1..], q).is_err());
    }

    #[test]
    fn path_plus_edge_recovers_the_path() {
        let path = Graph::from_edges(5, [(0, 1), (1, 2), (2, 3), (3, 4)]).unwrap();
        let mut bob = path.permute(&[2, 4, 0, 1, 3]);
        bob.toggle(0, 3);
        let cfg = GraphConfig::new(1, 0.5);
        let (out, tr) = reconcile(Scheme::Oracle, &cfg, &path, &bob, &Seed::from_u64(1), Backend::InProc).unwrap();
        assert!(is_isomorphic(&out.graph, &path));
        let q = modulus(5, 1).unwrap();
        assert_eq!(tr.summary().payload_total(), (2 * element_bits(q) as u64).div_ceil(8));
    }

    #[test]
    fn identical_graphs_return_bobs_graph() {
        let g = Graph::from_edges(4, [(0, 1), (2, 3)]).unwrap();
        let cfg = GraphConfig::new(0, 0.5);
        let (out, _) = reconcile(Scheme::Oracle, &cfg, &g, &g, &Seed::from_u64(2), Backend::InProc).unwrap();
        assert_eq!(out.graph, g);
    }

    #[test]
    fn out_of_range_inputs() {
        let far = Graph::from_edges(5, [(0, 1), (1, 2), (2, 3), (3, 4), (0, 4)]).unwrap();
        let cfg = GraphConfig::new(0, 0.5);
        let err = reconcile(Scheme::Oracle, &cfg, &far, &Graph::empty(5), &Seed::from_u64(3), Backend::InProc).unwrap_err();
        assert!(matches!(err, Error::NoMatch), "{err:?}");
        let big = Graph::empty(9);
        let err = reconcile(Scheme::Oracle, &cfg, &big, &big, &Seed::from_u64(3), Backend::InProc).unwrap_err();
        assert!(matches!(err, Error::OracleScaleExceeded(_)), "{err:?}");
    }
}
