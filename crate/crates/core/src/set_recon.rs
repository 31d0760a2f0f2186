//! One-level set and multiset reconciliation sessions.
//!
//! * known `d`: Alice sends a capacity-`d` IBLT of her set (one message);
//! * unknown `d`: Bob first sends a difference sketch of his set, Alice
//!   answers with an IBLT sized at twice the estimate, and a failed decode
//!   triggers one `RETRY` at double capacity;
//! * polynomial: Alice sends `d + 1` characteristic-polynomial values.
//!
//! Every variant can prefix a whole-set hash (`VERIFY`) so a checksum
//! failure in the table is reported instead of returned.

use std::collections::HashSet;

use rand::Rng;
use serde::Serialize;

use crate::charpoly::{self, EvalVector};
use crate::diff_estimator::{DiffSketch, Side, SketchShape};
use crate::error::{Error, Result};
use crate::field::Q;
use crate::iblt::{Iblt, KEY_LIMIT};
use crate::rng_hash::{HashFn, Seed};
use crate::transport::{run_session, until_disconnect, Backend, Endpoint, Frame, MsgType, ProtocolId, Transcript};

/// Bits of a multiset element in the pair encoding.
pub const ELEMENT_BITS: u32 = 41;
/// Bits of a multiplicity in the pair encoding.
pub const MULT_BITS: u32 = 20;
/// Factor applied to the estimator output to size the unknown-d table.
pub const SAFETY: u64 = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Method {
    Iblt,
    CharPoly,
}

/// Session parameters; `d_bound` present means the known-d protocol.
#[derive(Clone, Debug, PartialEq)]
pub struct ReconConfig {
    pub method: Method,
    pub d_bound: Option<usize>,
    pub delta: f64,
    pub verify: bool,
    /// Elements lie in `[0, universe)`; only the polynomial path uses it.
    pub universe: u64,
    /// Replaces the estimator output on Alice's side; for fault injection.
    pub estimate_override: Option<u64>,
}

impl ReconConfig {
    pub fn known(d: usize) -> ReconConfig {
        ReconConfig { method: Method::Iblt, d_bound: Some(d), delta: 0.01, verify: true, universe: KEY_LIMIT, estimate_override: None }
    }

    pub fn unknown() -> ReconConfig {
        ReconConfig { d_bound: None, ..ReconConfig::known(0) }
    }

    pub fn poly(d: usize, universe: u64) -> ReconConfig {
        ReconConfig { method: Method::CharPoly, universe, ..ReconConfig::known(d) }
    }
}

/// What Bob ends up with.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct SetOutcome {
    /// Alice's set as recovered by Bob, sorted.
    pub recovered: Vec<u64>,
    pub only_alice: Vec<u64>,
    pub only_bob: Vec<u64>,
    /// Capacity of the table (or `d` of the evaluations) that decoded.
    pub capacity: usize,
    pub retries: usize,
}

/// Order-independent hash of a multiset of words: the sum of per-element
/// 64-bit hashes.
pub fn set_hash(seed: &Seed, items: &[u64]) -> u64 {
    let h = HashFn::checksum(&seed.derive("set-verify", 0));
    items.iter().fold(0u64, |acc, &x| acc.wrapping_add(h.word(x)))
}

fn check_keys(items: &[u64], limit: u64) -> Result<()> {
    match items.iter().find(|&&x| x >= limit) {
        Some(x) => Err(Error::RangeExceeded(format!("element {x} is not below {limit}"))),
        None => Ok(()),
    }
}

fn table_seed(seed: &Seed, attempt: u64) -> Seed {
    seed.derive("set-iblt", attempt)
}

fn build_table(items: &[u64], capacity: usize, seed: &Seed) -> Iblt {
    let mut t = Iblt::new(capacity, seed);
    items.iter().for_each(|&x| t.insert(x));
    t
}

/// Applies a decoded difference to Bob's set, checking it is consistent.
fn apply_difference(bob: &[u64], only_alice: Vec<u64>, only_bob: Vec<u64>, stage: &'static str) -> Result<SetOutcome> {
    let bob_set: HashSet<u64> = bob.iter().copied().collect();
    if only_alice.iter().any(|x| bob_set.contains(x)) || only_bob.iter().any(|x| !bob_set.contains(x)) {
        return Err(Error::DecodeFailed { stage });
    }
    let removed: HashSet<u64> = only_bob.iter().copied().collect();
    let mut recovered: Vec<u64> = bob.iter().copied().filter(|x| !removed.contains(x)).chain(only_alice.iter().copied()).collect();
    recovered.sort_unstable();
    let (mut only_alice, mut only_bob) = (only_alice, only_bob);
    only_alice.sort_unstable();
    only_bob.sort_unstable();
    Ok(SetOutcome { recovered, only_alice, only_bob, capacity: 0, retries: 0 })
}

fn decode_against(table: &Iblt, bob: &[u64], stage: &'static str) -> Result<SetOutcome> {
    let mut diff = table.clone();
    bob.iter().for_each(|&x| diff.delete(x));
    let res = diff.decode();
    if !res.is_complete() {
        return Err(Error::DecodeFailed { stage });
    }
    apply_difference(bob, res.positives, res.negatives, stage)
}

fn check_verify(expected: Option<u64>, seed: &Seed, out: &SetOutcome, stage: &'static str) -> Result<()> {
    match expected {
        Some(h) if h != set_hash(seed, &out.recovered) => Err(Error::VerifyMismatch { stage }),
        _ => Ok(()),
    }
}

fn read_verify(ep: &mut Endpoint, verify: bool) -> Result<Option<u64>> {
    if !verify {
        return Ok(None);
    }
    let f = ep.expect(MsgType::VERIFY)?;
    let bytes: [u8; 8] = f.payload.as_slice().try_into().map_err(|_| Error::MalformedBytes("verify hash length".into()))?;
    Ok(Some(u64::from_le_bytes(bytes)))
}

fn send_verify(ep: &mut Endpoint, round: u8, seed: &Seed, items: &[u64]) -> Result<()> {
    ep.send(round, MsgType::VERIFY, set_hash(seed, items).to_le_bytes().to_vec())
}

/// Alice's side as a server: [`SetServer::open`] sends the first answer,
/// [`SetServer::on_frame`] handles a `RETRY`.
pub struct SetServer {
    cfg: ReconConfig,
    items: Vec<u64>,
    seed: Seed,
    capacity: usize,
}

impl SetServer {
    pub fn new(cfg: ReconConfig, items: Vec<u64>, seed: Seed) -> Result<SetServer> {
        let limit = match cfg.method {
            Method::Iblt => KEY_LIMIT,
            Method::CharPoly => cfg.universe.min(Q),
        };
        check_keys(&items, limit)?;
        Ok(SetServer { cfg, items, seed, capacity: 0 })
    }

    /// Sends the unsolicited messages; in the unknown-d variant this first
    /// waits for Bob's sketch.
    pub fn open(&mut self, ep: &mut Endpoint) -> Result<()> {
        let (cfg, items, seed) = (&self.cfg, self.items.as_slice(), &self.seed);
        match (cfg.method, cfg.d_bound) {
            (Method::Iblt, Some(d)) => {
                if cfg.verify {
                    send_verify(ep, 1, seed, items)?;
                }
                ep.send(1, MsgType::IBLT, build_table(items, d, &table_seed(seed, 0)).to_bytes())
            }
            (Method::CharPoly, Some(d)) => {
                if cfg.verify {
                    send_verify(ep, 1, seed, items)?;
                }
                let points = charpoly::eval_points(seed, d + 1, cfg.universe);
                ep.send(1, MsgType::EVALS, charpoly::evaluate(items, &points)?.to_bytes())
            }
            (Method::Iblt, None) => {
                let f = ep.expect(MsgType::ESTIMATOR)?;
                let theirs = DiffSketch::from_bytes(&f.payload, &sketch_seed(seed))?;
                let mine = DiffSketch::from_items(theirs.shape(), &sketch_seed(seed), items.iter().copied(), Side::One);
                let counts = DiffSketch::merged_level_counts(&mine, &theirs)?;
                let estimate = cfg.estimate_override.unwrap_or_else(|| DiffSketch::count_estimate(&counts, theirs.shape()));
                self.capacity = (SAFETY * estimate) as usize;
                if cfg.verify {
                    send_verify(ep, 2, seed, items)?;
                }
                ep.send(2, MsgType::IBLT, build_table(items, self.capacity, &table_seed(seed, 0)).to_bytes())
            }
            (Method::CharPoly, None) => Err(Error::InvalidParams("the polynomial protocol needs a difference bound".into())),
        }
    }

    /// Answers a `RETRY` with a table of twice the capacity. Returns
    /// `false` for frames that are not meant for this server.
    pub fn on_frame(&mut self, ep: &mut Endpoint, frame: &Frame) -> Result<bool> {
        if frame.msg_type != MsgType::RETRY as u8 || self.cfg.d_bound.is_some() {
            return Ok(false);
        }
        self.capacity = (2 * self.capacity).max(1);
        let table = build_table(&self.items, self.capacity, &table_seed(&self.seed, 1));
        ep.send(frame.round + 1, MsgType::IBLT, table.to_bytes())?;
        Ok(true)
    }
}

/// Alice's side of every set protocol.
pub fn alice(ep: &mut Endpoint, cfg: &ReconConfig, items: &[u64], seed: &Seed) -> Result<()> {
    let mut server = SetServer::new(cfg.clone(), items.to_vec(), *seed)?;
    server.open(ep)?;
    until_disconnect((|| loop {
        let f = ep.recv()?;
        if !server.on_frame(ep, &f)? {
            return Err(Error::ProtocolViolation(format!("unexpected message type {}", f.msg_type)));
        }
    })())
}

fn sketch_seed(seed: &Seed) -> Seed {
    seed.derive("set-sketch", 0)
}

/// Bob's side of every set protocol.
pub fn bob(ep: &mut Endpoint, cfg: &ReconConfig, items: &[u64], seed: &Seed) -> Result<SetOutcome> {
    match (cfg.method, cfg.d_bound) {
        (Method::Iblt, Some(d)) => {
            let (expected, table) = read_known(ep, cfg.verify)?;
            let mut out = decode_known(expected, &table, items, seed)?;
            out.capacity = d;
            Ok(out)
        }
        (Method::CharPoly, Some(d)) => {
            check_keys(items, cfg.universe.min(Q))?;
            let expected = read_verify(ep, cfg.verify)?;
            let f = ep.expect(MsgType::EVALS)?;
            let evals = EvalVector::from_bytes(&f.payload)?;
            let points = charpoly::eval_points(seed, evals.values.len(), cfg.universe);
            let (only_a, only_b) = charpoly::reconcile(&evals, &points, items, d, cfg.universe)?;
            let mut out = apply_difference(items, only_a, only_b, "evals")?;
            check_verify(expected, seed, &out, "evals")?;
            out.capacity = d;
            Ok(out)
        }
        (Method::Iblt, None) => {
            check_keys(items, KEY_LIMIT)?;
            let sketch = DiffSketch::from_items(SketchShape::COMPACT, &sketch_seed(seed), items.iter().copied(), Side::Two);
            ep.send(1, MsgType::ESTIMATOR, sketch.to_bytes())?;
            let mut retries = 0;
            let expected = read_verify(ep, cfg.verify)?;
            loop {
                let f = ep.expect(MsgType::IBLT)?;
                let table = Iblt::from_bytes(&f.payload, &table_seed(seed, retries as u64))?;
                let attempt = decode_against(&table, items, "iblt").and_then(|out| check_verify(expected, seed, &out, "iblt").map(|_| out));
                match attempt {
                    Ok(mut out) => {
                        out.retries = retries;
                        out.capacity = capacity_of(&table);
                        return Ok(out);
                    }
                    Err(_) if retries == 0 => {
                        retries += 1;
                        ep.send(f.round + 1, MsgType::RETRY, Vec::new())?;
                    }
                    Err(e) => return Err(e),
                }
            }
        }
        (Method::CharPoly, None) => Err(Error::InvalidParams("the polynomial protocol needs a difference bound".into())),
    }
}

/// Reads the known-d messages without decoding them, for callers that
/// only learn their own items later in the session.
pub fn read_known(ep: &mut Endpoint, verify: bool) -> Result<(Option<u64>, Vec<u8>)> {
    let expected = read_verify(ep, verify)?;
    Ok((expected, ep.expect(MsgType::IBLT)?.payload))
}

/// Decodes a known-d table received by [`read_known`] against `items`.
pub fn decode_known(expected: Option<u64>, table: &[u8], items: &[u64], seed: &Seed) -> Result<SetOutcome> {
    check_keys(items, KEY_LIMIT)?;
    let table = Iblt::from_bytes(table, &table_seed(seed, 0))?;
    let out = decode_against(&table, items, "iblt")?;
    check_verify(expected, seed, &out, "iblt")?;
    Ok(out)
}

/// Largest capacity whose table has `t`'s cell count.
fn capacity_of(t: &Iblt) -> usize {
    let mut c = 0;
    while crate::iblt::cells_for_capacity(c + 1) <= t.m() {
        c += 1;
    }
    c
}

/// Runs a whole session over `backend`.
pub fn reconcile(cfg: &ReconConfig, alice_set: &[u64], bob_set: &[u64], seed: &Seed, backend: Backend) -> Result<(SetOutcome, Transcript)> {
    run_session(backend, ProtocolId::SET_RECON, |ep| alice(ep, cfg, alice_set, seed), |ep| bob(ep, cfg, bob_set, seed))
}

pub fn reconcile_known(a: &[u64], b: &[u64], d: usize, seed: &Seed) -> Result<(SetOutcome, Transcript)> {
    reconcile(&ReconConfig::known(d), a, b, seed, Backend::InProc)
}

pub fn reconcile_unknown(a: &[u64], b: &[u64], delta: f64, seed: &Seed) -> Result<(SetOutcome, Transcript)> {
    reconcile(&ReconConfig { delta, ..ReconConfig::unknown() }, a, b, seed, Backend::InProc)
}

pub fn reconcile_poly(a: &[u64], b: &[u64], d: usize, universe: u64, seed: &Seed) -> Result<(SetOutcome, Transcript)> {
    reconcile(&ReconConfig::poly(d, universe), a, b, seed, Backend::InProc)
}

/// Seeded pair of sorted sets over `[0, universe)`: Alice holds `n`
/// elements, Bob shares all but `ceil(d/2)` of them and holds `floor(d/2)`
/// of his own.
pub fn perturbed_sets(n: usize, d: usize, universe: u64, seed: &Seed) -> Result<(Vec<u64>, Vec<u64>)> {
    let only_a = d.div_ceil(2).min(n);
    let only_b = d - only_a;
    let total = n + only_b;
    if total as u64 > universe / 2 {
        return Err(Error::InvalidParams(format!("{total} elements do not fit a universe of {universe}")));
    }
    let mut rng = seed.derive("set-pair", 0).rng();
    let mut seen = HashSet::with_capacity(total);
    let mut pool = Vec::with_capacity(total);
    while pool.len() < total {
        let x = rng.gen_range(0..universe);
        if seen.insert(x) {
            pool.push(x);
        }
    }
    let mut a = pool[..n].to_vec();
    let mut b: Vec<u64> = pool[only_a..].to_vec();
    a.sort_unstable();
    b.sort_unstable();
    Ok((a, b))
}

/// Packs `(element, multiplicity)` pairs into words.
pub fn encode_multiset(items: &[(u64, u64)]) -> Result<Vec<u64>> {
    items
        .iter()
        .map(|&(x, k)| {
            if x >> ELEMENT_BITS != 0 {
                return Err(Error::RangeExceeded(format!("multiset element {x} needs more than {ELEMENT_BITS} bits")));
            }
            if k == 0 || k >> MULT_BITS != 0 {
                return Err(Error::RangeExceeded(format!("multiplicity {k} outside 1..2^{MULT_BITS}")));
            }
            Ok((x << MULT_BITS) | k)
        })
        .collect()
}

pub fn decode_multiset(words: &[u64]) -> Vec<(u64, u64)> {
    let mut out: Vec<(u64, u64)> = words.iter().map(|&w| (w >> MULT_BITS, w & ((1 << MULT_BITS) - 1))).collect();
    out.sort_unstable();
    out
}

/// Pair-encodes a multiset given as a list with repeats.
pub fn encode_counts(items: &[u64]) -> Result<Vec<u64>> {
    let mut sorted = items.to_vec();
    sorted.sort_unstable();
    let mut pairs: Vec<(u64, u64)> = Vec::new();
    for x in sorted {
        match pairs.last_mut() {
            Some((y, k)) if *y == x => *k += 1,
            _ => pairs.push((x, 1)),
        }
    }
    encode_multiset(&pairs)
}

/// Inverse of [`encode_counts`]: the multiset as a sorted list with repeats.
pub fn decode_counts(words: &[u64]) -> Vec<u64> {
    decode_multiset(words).into_iter().flat_map(|(x, k)| std::iter::repeat_n(x, k as usize)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::iblt::serialized_len;

    fn instance(n: usize, only_a: usize, only_b: usize, seed: u64) -> (Vec<u64>, Vec<u64>) {
        let mut rng = Seed::from_u64(seed).rng();
        let mut pool: Vec<u64> = (0..n + only_a + only_b).map(|_| rng.gen_range(0..1u64 << 60)).collect();
        pool.sort_unstable();
        pool.dedup();
        let common = &pool[only_a + only_b..];
        let a = common.iter().chain(&pool[..only_a]).copied().collect();
        let b = common.iter().chain(&pool[only_a..only_a + only_b]).copied().collect();
        (a, b)
    }

    fn sorted(v: &[u64]) -> Vec<u64> {
        let mut v = v.to_vec();
        v.sort_unstable();
        v
    }

    #[test]
    fn identical_sets_with_zero_capacity() {
        let (a, _) = instance(500, 0, 0, 1);
        let (out, t) = reconcile_known(&a, &a, 0, &Seed::from_u64(1)).unwrap();
        assert_eq!(out.recovered, sorted(&a));
        let s = t.summary();
        assert_eq!(s.rounds_actual, 1);
        assert_eq!(s.payload_by_type["IBLT"], serialized_len(0) as u64);
    }

    #[test]
    fn known_d_recovers_and_sizes_by_d_only() {
        for (n, seed) in [(100usize, 2u64), (3000, 3)] {
            let (a, b) = instance(n, 12, 8, seed);
            let (out, t) = reconcile_known(&a, &b, 20, &Seed::from_u64(seed)).unwrap();
            assert_eq!(out.recovered, sorted(&a));
            assert_eq!(set_hash(&Seed::from_u64(9), &out.recovered), set_hash(&Seed::from_u64(9), &a));
            assert_eq!(t.summary().payload_by_type["IBLT"], serialized_len(20) as u64);
            assert_eq!(t.summary().payload_total(), serialized_len(20) as u64 + 8);
        }
    }

    #[test]
    fn undercapacity_never_returns_a_wrong_set() {
        let mut detected = 0;
        for seed in 0..100 {
            let (a, b) = instance(300, 10, 10, 100 + seed);
            match reconcile_known(&a, &b, 2, &Seed::from_u64(seed)) {
                Ok((out, _)) => assert_eq!(out.recovered, sorted(&a)),
                Err(Error::DecodeFailed { .. } | Error::VerifyMismatch { .. }) => detected += 1,
                Err(e) => panic!("unexpected error {e}"),
            }
        }
        assert!(detected >= 95);
    }

    #[test]
    fn unknown_d_two_rounds() {
        let (a, b) = instance(2000, 70, 50, 4);
        let (out, t) = reconcile_unknown(&a, &b, 0.01, &Seed::from_u64(4)).unwrap();
        assert_eq!(out.recovered, sorted(&a));
        assert_eq!(out.retries, 0);
        assert_eq!(t.summary().rounds_actual, 2);
        let (same, t) = reconcile_unknown(&a, &a, 0.01, &Seed::from_u64(5)).unwrap();
        assert_eq!(same.recovered, sorted(&a));
        assert_eq!(t.summary().payload_by_type["IBLT"], serialized_len(0) as u64);
    }

    #[test]
    fn low_estimate_triggers_one_retry() {
        let (a, b) = instance(1000, 30, 30, 6);
        let cfg = ReconConfig { estimate_override: Some(2), ..ReconConfig::unknown() };
        let r = reconcile(&cfg, &a, &b, &Seed::from_u64(6), Backend::InProc);
        assert!(matches!(r, Err(Error::DecodeFailed { .. } | Error::VerifyMismatch { .. })));
        let cfg = ReconConfig { estimate_override: Some(8), ..ReconConfig::unknown() };
        let (out, t) = reconcile(&cfg, &a, &b, &Seed::from_u64(6), Backend::InProc).unwrap();
        assert_eq!(out.recovered, sorted(&a));
        assert_eq!(out.retries, 1);
        assert_eq!(t.summary().rounds_actual, 4);
        assert_eq!(t.frames_of(MsgType::RETRY).count(), 1);
    }

    #[test]
    fn poly_examples() {
        let (out, t) = reconcile_poly(&[1, 2], &[1, 3], 2, 100, &Seed::from_u64(7)).unwrap();
        assert_eq!((out.only_alice, out.only_bob), (vec![2], vec![3]));
        assert_eq!(t.summary().payload_by_type["EVALS"], 2 + 3 * 8);
        let (a, b) = instance(400, 3, 4, 8);
        let (out, _) = reconcile_poly(&a, &b, 9, 1 << 60, &Seed::from_u64(8)).unwrap();
        assert_eq!(out.recovered, sorted(&a));
        assert!(reconcile_poly(&a, &b, 3, 1 << 60, &Seed::from_u64(8)).is_err());
    }

    #[test]
    fn out_of_range_elements_are_rejected() {
        assert!(matches!(reconcile_known(&[1 << 61], &[], 1, &Seed::from_u64(1)), Err(Error::RangeExceeded(_))));
        assert!(matches!(reconcile_poly(&[500], &[], 1, 100, &Seed::from_u64(1)), Err(Error::RangeExceeded(_))));
    }

    #[test]
    fn multiset_encoding() {
        assert_eq!(encode_multiset(&[(7, 1)]).unwrap(), vec![(7 << 20) | 1]);
        let m = [(3u64, 2u64), (5, 1)];
        assert_eq!(decode_multiset(&encode_multiset(&m).unwrap()), m.to_vec());
        assert!(encode_multiset(&[(1 << 41, 1)]).is_err());
        assert!(encode_multiset(&[(1, 1 << 20)]).is_err());
        assert!(encode_multiset(&[(1, 0)]).is_err());
        assert_eq!(decode_counts(&encode_counts(&[5, 3, 5, 9]).unwrap()), vec![3, 5, 5, 9]);
    }

    #[test]
    fn multiset_reconciliation_through_pairs() {
        let mut rng = Seed::from_u64(10).rng();
        for trial in 0..20 {
            let a: Vec<(u64, u64)> = (0..200).map(|i| (i * 31 + 7, rng.gen_range(1..5))).collect();
            let mut b = a.clone();
            for _ in 0..10 {
                let i = rng.gen_range(0..b.len());
                b[i].1 += 1;
            }
            let (ea, eb) = (encode_multiset(&a).unwrap(), encode_multiset(&b).unwrap());
            let (out, _) = reconcile_known(&ea, &eb, 20, &Seed::from_u64(trial)).unwrap();
            assert_eq!(decode_multiset(&out.recovered), a);
        }
    }

    #[test]
    fn perturbed_sets_have_the_requested_difference() {
        for d in [0, 1, 7, 20] {
            let (a, b) = perturbed_sets(300, d, 1 << 32, &Seed::from_u64(d as u64)).unwrap();
            assert_eq!(a.len(), 300);
            let only_a = a.iter().filter(|x| b.binary_search(x).is_err()).count();
            let only_b = b.iter().filter(|x| a.binary_search(x).is_err()).count();
            assert_eq!((only_a, only_b), (d.div_ceil(2), d / 2));
        }
        assert!(perturbed_sets(100, 2, 150, &Seed::from_u64(0)).is_err());
    }
}
