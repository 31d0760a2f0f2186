//! IBLT of IBLTs: one parent table over child encodings with capacity-`d`
//! child tables.

use std::collections::HashMap;

use super::{
    assemble, fetch, key_index, parent_hash, parse_encodings, parse_verbatim, read_verify, send_verify, AliceServer, Codec, SetOfSets, SosConfig, SosOutcome,
    REQ_ENCODING, REQ_VERBATIM,
};
use crate::error::{Error, Result};
use crate::iblt::Iblt;
use crate::rng_hash::Seed;
use crate::transport::{Endpoint, Frame, MsgType};

/// Width of the child hash stored beside each child table.
pub const HASH_BITS: u32 = 32;

fn codec(seed: &Seed, d: usize) -> Codec {
    Codec::new(seed, "iblt2", d as u64, d, HASH_BITS)
}

fn parent_seed(seed: &Seed, d: usize) -> Seed {
    seed.derive("iblt2-parent", d as u64)
}

/// A parent table payload: level byte, then the table.
pub(crate) fn table_payload(level: u8, table: &Iblt) -> Vec<u8> {
    let mut out = vec![level];
    table.write_to(&mut out);
    out
}

pub(crate) fn parse_table(payload: &[u8], seed: &Seed) -> Result<(u8, Iblt)> {
    let (&level, rest) = payload.split_first().ok_or_else(|| Error::MalformedBytes("empty parent table".into()))?;
    Ok((level, Iblt::from_bytes(rest, seed)?))
}

pub struct Alice<'a> {
    cfg: &'a SosConfig,
    parent: &'a SetOfSets,
    seed: Seed,
    state: Option<(Codec, HashMap<u64, (usize, u64)>)>,
}

impl<'a> Alice<'a> {
    pub fn new(cfg: &'a SosConfig, parent: &'a SetOfSets, seed: &Seed) -> Alice<'a> {
        Alice { cfg, parent, seed: *seed, state: None }
    }
}

impl AliceServer for Alice<'_> {
    fn open(&mut self, ep: &mut Endpoint, d: Option<usize>) -> Result<()> {
        let d = d.ok_or_else(|| Error::InvalidParams("iblt2 needs a difference bound".into()))?;
        let codec = codec(&self.seed, d);
        let keys = super::keyed(&codec, self.parent);
        let mut table = Iblt::new(2 * self.cfg.d_hat(d), &parent_seed(&self.seed, d));
        keys.iter().for_each(|k| table.insert(k.0));
        send_verify(ep, 1, &self.seed, self.parent)?;
        ep.send(1, MsgType::PARENT_IBLT, table_payload(0, &table))?;
        self.state = Some((codec, key_index(&keys)));
        Ok(())
    }

    fn on_frame(&mut self, ep: &mut Endpoint, frame: Frame) -> Result<()> {
        let (codec, index) = self.state.as_ref().ok_or_else(|| Error::ProtocolViolation("request before open".into()))?;
        super::answer(ep, &frame, self.parent, |level| (level == 0).then_some((Some(codec), index)))
    }
}

/// Bob's encodings of his own children, with lookups by key and by bytes.
pub(crate) struct BobView {
    pub keys: Vec<(u64, usize, u64)>,
    pub index: HashMap<u64, (usize, u64)>,
    pub by_encoding: HashMap<Vec<u8>, usize>,
}

impl BobView {
    pub fn new(codec: &Codec, parent: &SetOfSets) -> BobView {
        let mut keys = Vec::with_capacity(parent.len());
        let mut by_encoding = HashMap::new();
        for (i, (c, j)) in parent.children.iter().zip(parent.occurrences()).enumerate() {
            let enc = codec.encode(c);
            keys.push((codec.key(&enc, j), i, j));
            by_encoding.entry(enc).or_insert(i);
        }
        let index = key_index(&keys);
        BobView { keys, index, by_encoding }
    }
}

/// Recovers each fetched encoding from Bob's own copy or by cross-decoding
/// against `partners` then the empty set. Returns the recovered children
/// with their keys and occurrence indexes, and the keys that matched
/// nothing.
pub(crate) fn match_encodings(
    codec: &Codec,
    bob: &SetOfSets,
    view: &BobView,
    partners: &[usize],
    keys: &[u64],
    encodings: Vec<(u64, Vec<u8>)>,
    cross_decodes: &mut usize,
) -> Result<(Vec<(u64, u64, Vec<u64>)>, Vec<u64>)> {
    if encodings.len() != keys.len() {
        return Err(Error::MalformedBytes("encoding count".into()));
    }
    let mut found = Vec::new();
    let mut unmatched = Vec::new();
    for (&key, (j, enc)) in keys.iter().zip(encodings) {
        if codec.key(&enc, j) != key {
            return Err(Error::VerifyMismatch { stage: "encoding" });
        }
        if let Some(&i) = view.by_encoding.get(&enc) {
            found.push((key, j, bob.children[i].clone()));
            continue;
        }
        let parsed = codec.parse(&enc)?;
        let empty: &[u64] = &[];
        let candidates = partners.iter().map(|&i| bob.children[i].as_slice()).chain(std::iter::once(empty));
        let mut hit = None;
        for partner in candidates {
            *cross_decodes += 1;
            if let Some(child) = codec.cross_decode(&parsed, partner) {
                hit = Some(child);
                break;
            }
        }
        match hit {
            Some(child) => found.push((key, j, child)),
            None => unmatched.push(key),
        }
    }
    Ok((found, unmatched))
}

/// Bob's differing children ordered by child hash.
pub(crate) fn partner_order(codec: &Codec, bob: &SetOfSets, differing: &[usize]) -> Vec<usize> {
    let mut order: Vec<(u64, usize)> = differing.iter().map(|&i| (codec.child_hash(&bob.children[i]), i)).collect();
    order.sort_unstable();
    order.into_iter().map(|(_, i)| i).collect()
}

/// Fetches children verbatim and checks each against its key.
pub(crate) fn fetch_verbatim(ep: &mut Endpoint, level: u8, keys: &[u64], key_of: impl Fn(&[u64], u64) -> u64) -> Result<Vec<(u64, Vec<u64>)>> {
    let children = parse_verbatim(&fetch(ep, REQ_VERBATIM, level, keys)?)?;
    if children.len() != keys.len() {
        return Err(Error::MalformedBytes("verbatim child count".into()));
    }
    children.into_iter().zip(keys).map(|((j, c), &k)| if key_of(&c, j) == k { Ok((j, c)) } else { Err(Error::VerifyMismatch { stage: "verbatim" }) }).collect()
}

pub fn bob(ep: &mut Endpoint, cfg: &SosConfig, parent: &SetOfSets, seed: &Seed, d: usize) -> Result<SosOutcome> {
    let expected = read_verify(ep)?;
    let (_, table) = parse_table(&ep.expect(MsgType::PARENT_IBLT)?.payload, &parent_seed(seed, d))?;
    let codec = codec(seed, d);
    let view = BobView::new(&codec, parent);
    let mut diff = table;
    view.keys.iter().for_each(|k| diff.delete(k.0));
    let res = diff.decode();
    if !res.is_complete() || res.negatives.iter().any(|k| !view.index.contains_key(k)) || res.positives.iter().any(|k| view.index.contains_key(k)) {
        return Err(Error::DecodeFailed { stage: "parent" });
    }
    let removed: Vec<usize> = res.negatives.iter().map(|k| view.index[k].0).collect();
    let mut out = SosOutcome::default();
    let mut added = Vec::new();
    if !res.positives.is_empty() {
        let encodings = parse_encodings(&fetch(ep, REQ_ENCODING, 0, &res.positives)?)?;
        let partners = partner_order(&codec, parent, &removed);
        let (found, unmatched) = match_encodings(&codec, parent, &view, &partners, &res.positives, encodings, &mut out.cross_decodes)?;
        added.extend(found.into_iter().map(|(_, _, c)| c));
        if !unmatched.is_empty() {
            if !cfg.fallback {
                return Err(Error::NoMatchFound);
            }
            out.verbatim = unmatched.len();
            let fetched = fetch_verbatim(ep, 0, &unmatched, |c, j| codec.key(&codec.encode(c), j))?;
            added.extend(fetched.into_iter().map(|(_, c)| c));
        }
    }
    out.recovered = assemble(parent, &removed, added);
    if parent_hash(seed, &out.recovered) != expected {
        return Err(Error::VerifyMismatch { stage: "parent" });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::super::*;
    use crate::transport::MsgType;

    #[test]
    fn identical_parents_decode_to_nothing() {
        let params = SosParams { s: 30, h: 10, u: 1000 };
        let a = random_parent(&params, &Seed::from_u64(1));
        let (out, tr) = reconcile(SosProtocol::Iblt2, &SosConfig::new(params, Some(3)), &a, &a, &Seed::from_u64(2), Backend::InProc).unwrap();
        assert!(out.recovered.same_as(&a));
        assert_eq!(out.cross_decodes, 0);
        assert_eq!(tr.frames_of(MsgType::ENC_REQUEST).count(), 0);
    }

    #[test]
    fn small_perturbations_recover_within_cross_decode_budget() {
        let params = SosParams { s: 100, h: 50, u: 1 << 32 };
        let mut ok = 0;
        for seed in 0..60 {
            let inst = perturbed_instance(params, &[4, 3, 4], &Seed::from_u64(seed));
            let cfg = SosConfig { fallback: false, ..SosConfig::new(params, Some(12)) };
            if let Ok((out, _)) = reconcile(SosProtocol::Iblt2, &cfg, &inst.alice, &inst.bob, &Seed::from_u64(seed + 7), Backend::InProc) {
                assert!(out.recovered.same_as(&inst.alice));
                assert!(out.cross_decodes <= 9);
                ok += 1;
            }
        }
        assert!(ok >= 57, "{ok}/60");
    }

    #[test]
    fn unmatched_child_falls_back_to_verbatim() {
        let params = SosParams { s: 20, h: 48, u: 1 << 20 };
        let inst = replacement_instance(params, 1, &Seed::from_u64(4));
        let strict = SosConfig { fallback: false, ..SosConfig::new(params, Some(2)) };
        let err = reconcile(SosProtocol::Iblt2, &strict, &inst.alice, &inst.bob, &Seed::from_u64(5), Backend::InProc).unwrap_err();
        assert!(matches!(err, Error::NoMatchFound), "{err:?}");
        let (out, _) = reconcile(SosProtocol::Iblt2, &SosConfig::new(params, Some(2)), &inst.alice, &inst.bob, &Seed::from_u64(5), Backend::InProc).unwrap();
        assert!(out.recovered.same_as(&inst.alice));
        assert_eq!(out.verbatim, 1);
    }

    #[test]
    fn extra_copy_of_a_shared_child_is_copied() {
        let a = SetOfSets::new(vec![vec![1, 2, 3], vec![1, 2, 3], vec![7]]);
        let b = SetOfSets::new(vec![vec![1, 2, 3], vec![7]]);
        let params = SosParams { s: 3, h: 3, u: 10 };
        let (out, _) = reconcile(SosProtocol::Iblt2, &SosConfig::new(params, Some(3)), &a, &b, &Seed::from_u64(6), Backend::InProc).unwrap();
        assert!(out.recovered.same_as(&a));
        assert_eq!(out.cross_decodes, 0);
    }
}
