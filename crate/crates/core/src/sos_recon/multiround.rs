//! Multi-round protocol.
//!
//! 1. Alice sends IBLTs of her child hashes (`HASH_IBLT`, replicated).
//! 2. Bob replies with the hashes of Alice's children he cannot resolve
//!    and, for each of his own differing children, a list of difference
//!    sketches (`EST_LIST`).
//! 3. Alice pairs each listed child with the partner of smallest estimated
//!    difference `d_i` and sends a child IBLT when `d_i >= ceil(sqrt d)`,
//!    polynomial evaluations otherwise, then `DONE`.
//!
//! Without a known bound Bob opens with a sketch of his child hashes and
//! `d` becomes the sum of the `d_i`.

use std::collections::HashMap;

use super::{assemble, parent_hash, read_verify, send_verify, AliceServer, SetOfSets, SosConfig, SosOutcome};
use crate::charpoly::{self, EvalVector};
use crate::diff_estimator::{DiffSketch, Side, SketchShape};
use crate::error::{Error, Result};
use crate::iblt::Iblt;
use crate::rng_hash::{HashFn, Seed};
use crate::set_recon::MULT_BITS;
use crate::transport::{bytes_to_words, put_blob, words_to_bytes, Cursor, Endpoint, Frame, MsgType};

/// Width of the child hashes exchanged in the first round.
pub const HASH_BITS: u32 = 32;

/// Replicas of the child-hash table: `ceil(ln(1/delta) / ln d_hat)`.
pub fn hash_replicas(d_hat: usize, delta: f64) -> usize {
    ((1.0 / delta).ln() / (d_hat.max(2) as f64).ln()).ceil().max(1.0) as usize
}

/// Sketches per differing child: `ceil(ln(d_hat^2 / delta))`.
pub fn sketch_replicas(d_hat: usize, delta: f64) -> usize {
    ((d_hat.max(1) as f64).powi(2) / delta).ln().ceil().max(1.0) as usize
}

/// Replicas of each child table: `ceil(ln(1/delta) / ln d)`.
pub fn child_replicas(d: usize, delta: f64) -> usize {
    hash_replicas(d, delta)
}

/// `ceil(sqrt(x))`.
pub fn ceil_sqrt(x: usize) -> usize {
    let r = x.isqrt();
    if r * r == x {
        r
    } else {
        r + 1
    }
}

fn child_hash(seed: &Seed) -> HashFn {
    HashFn::pairwise(&seed.derive("multi-hash", 0), HASH_BITS)
}

fn hash_table_seed(seed: &Seed, d: usize, rep: usize) -> Seed {
    seed.derive("multi-hash-iblt", d as u64).derive("rep", rep as u64)
}

fn estimator_seed(seed: &Seed) -> Seed {
    seed.derive("multi-estimator", 0)
}

fn sketch_seed(seed: &Seed, rep: usize) -> Seed {
    seed.derive("multi-child-sketch", rep as u64)
}

fn child_seed(seed: &Seed, d: usize, i: usize) -> Seed {
    seed.derive("multi-child", d as u64).derive("child", i as u64)
}

/// Child-hash keys: hash in the high bits, occurrence index in the low
/// `MULT_BITS` bits.
fn keys(seed: &Seed, parent: &SetOfSets) -> Result<Vec<u64>> {
    let h = child_hash(seed);
    parent
        .children
        .iter()
        .zip(parent.occurrences())
        .map(|(c, j)| {
            if j >> MULT_BITS != 0 {
                return Err(Error::RangeExceeded(format!("{j} copies of one child")));
            }
            Ok(h.words(c) << MULT_BITS | j)
        })
        .collect()
}

/// Header of a per-child frame in the last round.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ChildHeader {
    /// Position in Bob's list of Alice's children.
    pub i: u32,
    /// Partner index into Bob's differing children; equal to their count
    /// for the empty set.
    pub b: u32,
    pub d_i: u32,
    pub bound: u32,
}

impl ChildHeader {
    fn write(&self, out: &mut Vec<u8>) {
        for v in [self.i, self.b, self.d_i, self.bound] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }

    pub fn parse(payload: &[u8]) -> Result<(ChildHeader, &[u8])> {
        let mut c = Cursor::new(payload);
        let h = ChildHeader { i: c.u32()?, b: c.u32()?, d_i: c.u32()?, bound: c.u32()? };
        Ok((h, c.rest()))
    }
}

/// Threshold carried by the `DONE` payload.
pub fn parse_done(payload: &[u8]) -> Result<u32> {
    let mut c = Cursor::new(payload);
    let d = c.u32()?;
    c.finish()?;
    Ok(d)
}

struct EstList {
    alice_keys: Vec<u64>,
    partners: Vec<(u64, Vec<DiffSketch>)>,
}

fn write_est_list(alice_keys: &[u64], partners: &[(u64, Vec<DiffSketch>)]) -> Vec<u8> {
    let mut out = (alice_keys.len() as u32).to_le_bytes().to_vec();
    out.extend(words_to_bytes(alice_keys));
    out.extend_from_slice(&(partners.len() as u32).to_le_bytes());
    for (key, sketches) in partners {
        out.extend_from_slice(&key.to_le_bytes());
        out.push(sketches.len() as u8);
        sketches.iter().for_each(|s| put_blob(&mut out, &s.to_bytes()));
    }
    out
}

fn parse_est_list(payload: &[u8], seed: &Seed) -> Result<EstList> {
    let mut c = Cursor::new(payload);
    let n = c.u32()? as usize;
    let alice_keys = bytes_to_words(c.take(8 * n)?)?;
    let m = c.u32()? as usize;
    let mut partners = Vec::with_capacity(m);
    for _ in 0..m {
        let key = c.u64()?;
        let r = c.u8()? as usize;
        let sketches = (0..r).map(|rep| DiffSketch::from_bytes(c.blob()?, &sketch_seed(seed, rep))).collect::<Result<Vec<_>>>()?;
        partners.push((key, sketches));
    }
    c.finish()?;
    Ok(EstList { alice_keys, partners })
}

fn child_sketches(seed: &Seed, child: &[u64], reps: usize, side: Side) -> Vec<DiffSketch> {
    (0..reps).map(|r| DiffSketch::from_items(SketchShape::CHILD, &sketch_seed(seed, r), child.iter().copied(), side)).collect()
}

/// Median of per-replica difference estimates.
fn median_estimate(mine: &[DiffSketch], theirs: &[DiffSketch]) -> Result<u64> {
    let mut v = mine
        .iter()
        .zip(theirs)
        .map(|(a, b)| Ok(DiffSketch::count_estimate(&DiffSketch::merged_level_counts(a, b)?, a.shape())))
        .collect::<Result<Vec<u64>>>()?;
    if v.is_empty() {
        return Err(Error::MalformedBytes("empty sketch list".into()));
    }
    v.sort_unstable();
    Ok(v[(v.len() - 1) / 2])
}

pub struct Alice<'a> {
    cfg: &'a SosConfig,
    parent: &'a SetOfSets,
    seed: Seed,
    keys: Vec<u64>,
    /// Attempt bound (`None` for unknown d) and the round of the hash tables.
    attempt: Option<(Option<usize>, u8)>,
}

impl<'a> Alice<'a> {
    pub fn new(cfg: &'a SosConfig, parent: &'a SetOfSets, seed: &Seed) -> Alice<'a> {
        Alice { cfg, parent, seed: *seed, keys: Vec::new(), attempt: None }
    }

    fn answer(&self, ep: &mut Endpoint, frame: &Frame, d: Option<usize>, round: u8) -> Result<()> {
        let list = parse_est_list(&frame.payload, &self.seed)?;
        let by_key: HashMap<u64, usize> = self.keys.iter().enumerate().map(|(i, &k)| (k, i)).collect();
        let reps = list.partners.first().map_or(1, |p| p.1.len());
        let sketch_side = |c: &[u64]| child_sketches(&self.seed, c, reps, Side::One);

        let mut plans = Vec::with_capacity(list.alice_keys.len());
        for (i, key) in list.alice_keys.iter().enumerate() {
            let &ci = by_key.get(key).ok_or_else(|| Error::ProtocolViolation(format!("unknown child key {key:#x}")))?;
            let child = &self.parent.children[ci];
            let mine = sketch_side(child);
            let mut best = (child.len() as u64, list.partners.len());
            for (b, (_, theirs)) in list.partners.iter().enumerate() {
                let est = median_estimate(&mine, theirs)?;
                if est < best.0 || (est == best.0 && b < best.1) {
                    best = (est, b);
                }
            }
            plans.push((i, ci, best.1, best.0 as usize));
        }
        let d_used = d.unwrap_or_else(|| plans.iter().map(|p| p.3).sum::<usize>().max(1));
        let threshold = ceil_sqrt(d_used);
        let reps = child_replicas(d_used, self.cfg.delta);
        for (i, ci, b, d_i) in plans {
            let child = &self.parent.children[ci];
            let empty = b == list.partners.len();
            let bound = if empty { child.len() } else { d_i + ceil_sqrt(d_i) };
            let mut payload = Vec::new();
            ChildHeader { i: i as u32, b: b as u32, d_i: d_i as u32, bound: bound as u32 }.write(&mut payload);
            let cs = child_seed(&self.seed, d_used, i);
            let ty = if empty {
                payload.extend(words_to_bytes(child));
                MsgType::CHILD_DATA
            } else if d_i >= threshold {
                payload.push(reps as u8);
                for r in 0..reps {
                    let mut t = Iblt::new(bound, &cs.derive("iblt", r as u64));
                    child.iter().for_each(|&x| t.insert(x));
                    put_blob(&mut payload, &t.to_bytes());
                }
                MsgType::CHILD_IBLT
            } else {
                let points = charpoly::eval_points(&cs, bound + 1, self.cfg.params.u);
                payload.extend(charpoly::evaluate(child, &points)?.to_bytes());
                MsgType::CHILD_EVALS
            };
            ep.send(round, ty, payload)?;
        }
        ep.send(round, MsgType::DONE, (d_used as u32).to_le_bytes().to_vec())
    }
}

impl AliceServer for Alice<'_> {
    fn open(&mut self, ep: &mut Endpoint, d: Option<usize>) -> Result<()> {
        self.keys = keys(&self.seed, self.parent)?;
        let (d_hat, round) = match d {
            Some(d) => (self.cfg.d_hat(d), 1),
            None => {
                let f = ep.expect(MsgType::ESTIMATOR)?;
                let theirs = DiffSketch::from_bytes(&f.payload, &estimator_seed(&self.seed))?;
                let mine = DiffSketch::from_items(theirs.shape(), &estimator_seed(&self.seed), self.keys.iter().copied(), Side::One);
                let est = DiffSketch::count_estimate(&DiffSketch::merged_level_counts(&mine, &theirs)?, theirs.shape());
                (est as usize, f.round + 1)
            }
        };
        send_verify(ep, round, &self.seed, self.parent)?;
        let reps = hash_replicas(d_hat, self.cfg.delta);
        let table_d = d.unwrap_or(0);
        for rep in 0..reps {
            let mut t = Iblt::new(2 * d_hat, &hash_table_seed(&self.seed, table_d, rep));
            self.keys.iter().for_each(|&k| t.insert(k));
            let mut payload = vec![rep as u8, reps as u8];
            t.write_to(&mut payload);
            ep.send(round, MsgType::HASH_IBLT, payload)?;
        }
        self.attempt = Some((d, round + 2));
        Ok(())
    }

    fn on_frame(&mut self, ep: &mut Endpoint, frame: Frame) -> Result<()> {
        match (frame.msg_type(), self.attempt) {
            (Some(MsgType::EST_LIST), Some((d, round))) => self.answer(ep, &frame, d, round),
            _ => Err(Error::ProtocolViolation(format!("unexpected message type {}", frame.msg_type))),
        }
    }
}

/// Recovers Alice's child from one last-round frame.
fn recover_child(frame: &Frame, cfg: &SosConfig, seed: &Seed, d_used: usize, partner: &[u64], header: &ChildHeader, body: &[u8]) -> Result<Vec<u64>> {
    let cs = child_seed(seed, d_used, header.i as usize);
    match frame.msg_type() {
        Some(MsgType::CHILD_DATA) => {
            let mut child = bytes_to_words(body)?;
            child.sort_unstable();
            Ok(child)
        }
        Some(MsgType::CHILD_IBLT) => {
            let mut c = Cursor::new(body);
            let reps = c.u8()? as usize;
            for r in 0..reps {
                let mut t = Iblt::from_bytes(c.blob()?, &cs.derive("iblt", r as u64))?;
                partner.iter().for_each(|&x| t.delete(x));
                let res = t.decode();
                if !res.is_complete() {
                    continue;
                }
                if let Some(child) = apply(partner, &res.positives, &res.negatives) {
                    return Ok(child);
                }
            }
            Err(Error::VerifyMismatch { stage: "child-iblt" })
        }
        Some(MsgType::CHILD_EVALS) => {
            let evals = EvalVector::from_bytes(body)?;
            let points = charpoly::eval_points(&cs, evals.values.len(), cfg.params.u);
            let (only_a, only_b) = charpoly::reconcile(&evals, &points, partner, header.bound as usize, cfg.params.u)
                .map_err(|_| Error::VerifyMismatch { stage: "child-evals" })?;
            apply(partner, &only_a, &only_b).ok_or(Error::VerifyMismatch { stage: "child-evals" })
        }
        _ => Err(Error::ProtocolViolation(format!("unexpected message type {}", frame.msg_type))),
    }
}

fn apply(partner: &[u64], add: &[u64], remove: &[u64]) -> Option<Vec<u64>> {
    if remove.iter().any(|x| partner.binary_search(x).is_err()) || add.iter().any(|x| partner.binary_search(x).is_ok()) {
        return None;
    }
    let mut child: Vec<u64> = partner.iter().copied().filter(|x| !remove.contains(x)).chain(add.iter().copied()).collect();
    child.sort_unstable();
    Some(child)
}

pub fn bob(ep: &mut Endpoint, cfg: &SosConfig, parent: &SetOfSets, seed: &Seed, d: Option<usize>) -> Result<SosOutcome> {
    let my_keys = keys(seed, parent)?;
    let index: HashMap<u64, usize> = my_keys.iter().enumerate().map(|(i, &k)| (k, i)).collect();
    let by_hash: HashMap<u64, usize> = my_keys.iter().enumerate().map(|(i, &k)| (k >> MULT_BITS, i)).rev().collect();
    if d.is_none() {
        let sketch = DiffSketch::from_items(SketchShape::COMPACT, &estimator_seed(seed), my_keys.iter().copied(), Side::Two);
        ep.send(1, MsgType::ESTIMATOR, sketch.to_bytes())?;
    }
    let expected = read_verify(ep)?;
    let mut tables = Vec::new();
    let round = loop {
        let f = ep.expect(MsgType::HASH_IBLT)?;
        let mut c = Cursor::new(&f.payload);
        let (rep, reps) = (c.u8()?, c.u8()?);
        tables.push(Iblt::from_bytes(c.rest(), &hash_table_seed(seed, d.unwrap_or(0), rep as usize))?);
        if rep + 1 >= reps {
            break f.round;
        }
    };
    let decoded = tables.iter().find_map(|t| {
        let mut diff = t.clone();
        my_keys.iter().for_each(|&k| diff.delete(k));
        let res = diff.decode();
        (res.is_complete() && res.negatives.iter().all(|k| index.contains_key(k)) && res.positives.iter().all(|k| !index.contains_key(k))).then_some(res)
    });
    let res = decoded.ok_or(Error::DecodeFailed { stage: "hash-iblt" })?;

    let mut d_b: Vec<usize> = res.negatives.iter().map(|k| index[k]).collect();
    d_b.sort_unstable();
    let mut added = Vec::new();
    let mut needed = Vec::new();
    for &k in &res.positives {
        match by_hash.get(&(k >> MULT_BITS)) {
            Some(&i) => added.push(parent.children[i].clone()),
            None => needed.push(k),
        }
    }
    let d_hat = d.map_or(d_b.len().max(needed.len()), |d| cfg.d_hat(d));
    let reps = sketch_replicas(d_hat, cfg.delta);
    let partners: Vec<(u64, Vec<DiffSketch>)> = d_b.iter().map(|&i| (my_keys[i], child_sketches(seed, &parent.children[i], reps, Side::Two))).collect();
    ep.send(round + 1, MsgType::EST_LIST, write_est_list(&needed, &partners))?;

    let mut frames = Vec::new();
    let d_used = loop {
        let f = ep.recv()?;
        if f.msg_type() == Some(MsgType::DONE) {
            break parse_done(&f.payload)? as usize;
        }
        frames.push(f);
    };
    if frames.len() != needed.len() {
        return Err(Error::ProtocolViolation(format!("{} child frames for {} children", frames.len(), needed.len())));
    }
    let empty = Vec::new();
    for f in &frames {
        let (header, body) = ChildHeader::parse(&f.payload)?;
        let key = *needed.get(header.i as usize).ok_or_else(|| Error::ProtocolViolation("child index out of range".into()))?;
        let partner = d_b.get(header.b as usize).map_or(&empty, |&i| &parent.children[i]);
        let child = recover_child(f, cfg, seed, d_used, partner, &header, body)?;
        if child_hash(seed).words(&child) != key >> MULT_BITS {
            return Err(Error::VerifyMismatch { stage: "child" });
        }
        added.push(child);
    }
    let recovered = assemble(parent, &d_b, added);
    if parent_hash(seed, &recovered) != expected {
        return Err(Error::VerifyMismatch { stage: "parent" });
    }
    Ok(SosOutcome { recovered, ..SosOutcome::default() })
}
