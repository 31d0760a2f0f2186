//! Cascading IBLTs of IBLTs: parent tables `T_1..T_t` whose child tables
//! double in capacity, plus a verbatim table `T_*` when `d >= h`.
//!
//! Bob walks the levels in order. The first table that decodes fixes his
//! differing children `D_B`; every later table has Bob's other children and
//! the children already recovered deleted, so it only holds Alice's
//! children that are still missing.

use std::collections::HashMap;

use super::iblt2::{fetch_verbatim, match_encodings, parse_table, partner_order, table_payload, BobView};
use super::{
    assemble, content_key, fetch, key_index, keyed, parent_hash, parse_encodings, read_verify, send_verify, AliceServer, Codec, SetOfSets, SosConfig,
    SosOutcome, SosParams, REQ_ENCODING,
};
use crate::error::{Error, Result};
use crate::iblt::Iblt;
use crate::rng_hash::Seed;
use crate::transport::{Endpoint, Frame, MsgType};

pub const HASH_BITS: u32 = 32;
/// Smallest parent table capacity beyond the first level.
pub const MIN_PARENT_CAPACITY: usize = 8;

const STAR_LABEL: &str = "cascade-star";

/// Per-level (parent capacity, child capacity) for levels `1..=t`.
pub fn levels(d: usize, params: &SosParams) -> Vec<(usize, usize)> {
    let m = d.min(params.h).max(1);
    let t = (usize::BITS - (m - 1).leading_zeros()).max(1) as usize;
    let d_hat = d.min(params.s);
    (1..=t)
        .map(|i| {
            let parent = if i == 1 { 2 * d_hat } else { (1.5 * d as f64 / (1u64 << (i - 1)) as f64).ceil() as usize };
            let parent = if i == 1 { parent } else { parent.min(d_hat).max(MIN_PARENT_CAPACITY) };
            (parent, 1usize << i)
        })
        .collect()
}

/// Capacity of `T_*`, present only when `d >= h`.
pub fn star_capacity(d: usize, params: &SosParams) -> Option<usize> {
    (d >= params.h).then(|| (2 * d).div_ceil(params.h.max(1)).max(MIN_PARENT_CAPACITY))
}

fn level_seed(seed: &Seed, d: usize) -> Seed {
    seed.derive("cascade", d as u64)
}

fn codec(seed: &Seed, d: usize, level: usize, child_cap: usize) -> Codec {
    Codec::new(&level_seed(seed, d), "level", level as u64, child_cap, HASH_BITS)
}

fn table_seed(seed: &Seed, d: usize, level: usize) -> Seed {
    level_seed(seed, d).derive("parent", level as u64)
}

fn star_key(seed: &Seed, child: &[u64], j: u64) -> u64 {
    content_key(seed, STAR_LABEL, child, j)
}

type Index = HashMap<u64, (usize, u64)>;

pub struct Alice<'a> {
    cfg: &'a SosConfig,
    parent: &'a SetOfSets,
    seed: Seed,
    levels: Vec<(Codec, Index)>,
    star: Index,
}

impl<'a> Alice<'a> {
    pub fn new(cfg: &'a SosConfig, parent: &'a SetOfSets, seed: &Seed) -> Alice<'a> {
        Alice { cfg, parent, seed: *seed, levels: Vec::new(), star: Index::new() }
    }
}

impl AliceServer for Alice<'_> {
    fn open(&mut self, ep: &mut Endpoint, d: Option<usize>) -> Result<()> {
        let d = d.ok_or_else(|| Error::InvalidParams("cascade needs a difference bound".into()))?;
        send_verify(ep, 1, &self.seed, self.parent)?;
        self.levels.clear();
        for (i, (parent_cap, child_cap)) in levels(d, &self.cfg.params).into_iter().enumerate() {
            let level = i + 1;
            let codec = codec(&self.seed, d, level, child_cap);
            let keys = keyed(&codec, self.parent);
            let mut table = Iblt::new(parent_cap, &table_seed(&self.seed, d, level));
            keys.iter().for_each(|k| table.insert(k.0));
            ep.send(1, MsgType::PARENT_IBLT, table_payload(level as u8, &table))?;
            self.levels.push((codec, key_index(&keys)));
        }
        let star: Vec<(u64, usize, u64)> =
            self.parent.children.iter().zip(self.parent.occurrences()).enumerate().map(|(i, (c, j))| (star_key(&self.seed, c, j), i, j)).collect();
        if let Some(cap) = star_capacity(d, &self.cfg.params) {
            let mut table = Iblt::new(cap, &table_seed(&self.seed, d, 0));
            star.iter().for_each(|k| table.insert(k.0));
            ep.send(1, MsgType::STAR_IBLT, table_payload(0, &table))?;
        }
        self.star = key_index(&star);
        Ok(())
    }

    fn on_frame(&mut self, ep: &mut Endpoint, frame: Frame) -> Result<()> {
        let (levels, star) = (&self.levels, &self.star);
        super::answer(ep, &frame, self.parent, |level| match level {
            0 => Some((None, star)),
            l => levels.get(l as usize - 1).map(|(c, i)| (Some(c), i)),
        })
    }
}

pub fn bob(ep: &mut Endpoint, cfg: &SosConfig, parent: &SetOfSets, seed: &Seed, d: usize) -> Result<SosOutcome> {
    let expected = read_verify(ep)?;
    let shape = levels(d, &cfg.params);
    let mut tables = Vec::with_capacity(shape.len());
    for level in 1..=shape.len() {
        let (l, t) = parse_table(&ep.expect(MsgType::PARENT_IBLT)?.payload, &table_seed(seed, d, level))?;
        if l as usize != level {
            return Err(Error::ProtocolViolation(format!("parent table for level {l} where {level} was due")));
        }
        tables.push(t);
    }
    let star = match star_capacity(d, &cfg.params) {
        Some(_) => Some(parse_table(&ep.expect(MsgType::STAR_IBLT)?.payload, &table_seed(seed, d, 0))?.1),
        None => None,
    };

    let mut out = SosOutcome::default();
    let mut d_b: Option<Vec<usize>> = None;
    // Recovered Alice children with their occurrence index.
    let mut recovered: Vec<(u64, Vec<u64>)> = Vec::new();
    for (i, (table, &(_, child_cap))) in tables.into_iter().zip(&shape).enumerate() {
        let level = i + 1;
        let codec = codec(seed, d, level, child_cap);
        let view = BobView::new(&codec, parent);
        let mut diff = table;
        delete_known(&mut diff, &view.keys, d_b.as_deref());
        recovered.iter().for_each(|(j, c)| diff.delete(codec.key(&codec.encode(c), *j)));
        let res = diff.decode();
        if !res.is_complete() {
            continue;
        }
        let partners = match &d_b {
            None => {
                if res.negatives.iter().any(|k| !view.index.contains_key(k)) {
                    continue;
                }
                let mut db: Vec<usize> = res.negatives.iter().map(|k| view.index[k].0).collect();
                db.sort_unstable();
                d_b.insert(db)
            }
            Some(db) if res.negatives.is_empty() => db,
            Some(_) => continue,
        };
        if res.positives.is_empty() {
            continue;
        }
        let encodings = parse_encodings(&fetch(ep, REQ_ENCODING, level as u8, &res.positives)?)?;
        let order = partner_order(&codec, parent, partners);
        let (found, _) = match_encodings(&codec, parent, &view, &order, &res.positives, encodings, &mut out.cross_decodes)?;
        for (_, j, child) in found {
            recovered.push((j, child));
            out.levels.push(level);
        }
    }

    if let Some(mut diff) = star {
        let keys: Vec<(u64, usize, u64)> =
            parent.children.iter().zip(parent.occurrences()).enumerate().map(|(i, (c, j))| (star_key(seed, c, j), i, j)).collect();
        delete_known(&mut diff, &keys, d_b.as_deref());
        recovered.iter().for_each(|(j, c)| diff.delete(star_key(seed, c, *j)));
        let res = diff.decode();
        let index = key_index(&keys);
        if res.is_complete() && (d_b.is_some() || res.negatives.iter().all(|k| index.contains_key(k))) {
            if d_b.is_none() {
                d_b = Some(res.negatives.iter().map(|k| index[k].0).collect());
            }
            if !res.positives.is_empty() {
                for (j, child) in fetch_verbatim(ep, 0, &res.positives, |c, j| star_key(seed, c, j))? {
                    recovered.push((j, child));
                    out.levels.push(0);
                    out.verbatim += 1;
                }
            }
        }
    }

    let d_b = d_b.ok_or(Error::DecodeFailed { stage: "cascade" })?;
    out.recovered = assemble(parent, &d_b, recovered.into_iter().map(|(_, c)| c).collect());
    if parent_hash(seed, &out.recovered) != expected {
        return Err(Error::ResidualChildren);
    }
    Ok(out)
}

/// Deletes Bob's children outside `D_B` (all of them while it is unknown).
fn delete_known(table: &mut Iblt, keys: &[(u64, usize, u64)], d_b: Option<&[usize]>) {
    for &(k, i, _) in keys {
        if d_b.is_none_or(|db| db.binary_search(&i).is_err()) {
            table.delete(k);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::super::*;
    use super::*;

    #[test]
    fn level_shapes() {
        let params = SosParams { s: 256, h: 128, u: 1 << 32 };
        let l = levels(64, &params);
        assert_eq!(l.len(), 6);
        assert_eq!(l[0], (128, 2));
        assert_eq!(l[1], (48, 4));
        assert_eq!(l[5], (8, 64));
        assert_eq!(star_capacity(64, &params), None);
        assert_eq!(levels(1024, &params).len(), 7);
        assert_eq!(star_capacity(1024, &params), Some(16));
        assert_eq!(levels(1, &params), vec![(2, 2)]);
    }

    #[test]
    fn concentrated_difference_recovers_at_log_d() {
        let params = SosParams { s: 64, h: 64, u: 1 << 32 };
        for (cost, want) in [(3usize, 2usize), (16, 4), (40, 6)] {
            let inst = perturbed_instance(params, &[cost], &Seed::from_u64(cost as u64));
            let cfg = SosConfig::new(params, Some(cost));
            let (out, _) = reconcile(SosProtocol::Cascade, &cfg, &inst.alice, &inst.bob, &Seed::from_u64(1), Backend::InProc).unwrap();
            assert!(out.recovered.same_as(&inst.alice));
            assert_eq!(out.levels.len(), 1);
            assert!(out.levels[0] <= want && out.levels[0] + 2 >= want, "cost {cost} at level {}", out.levels[0]);
        }
    }

    #[test]
    fn spread_instances_recover() {
        let params = SosParams { s: 128, h: 64, u: 1 << 32 };
        let mut ok = 0;
        for seed in 0..40 {
            let inst = spread_instance(params, 32, &Seed::from_u64(seed));
            let cfg = SosConfig::new(params, Some(32));
            if let Ok((out, _)) = reconcile(SosProtocol::Cascade, &cfg, &inst.alice, &inst.bob, &Seed::from_u64(seed + 100), Backend::InProc) {
                assert!(out.recovered.same_as(&inst.alice));
                ok += 1;
            }
        }
        assert!(ok >= 36, "{ok}/40");
    }

    #[test]
    fn replaced_children_go_through_the_star_table() {
        let params = SosParams { s: 40, h: 8, u: 1 << 32 };
        let inst = replacement_instance(params, 3, &Seed::from_u64(8));
        let cfg = SosConfig::new(params, Some(inst.d));
        let (out, _) = reconcile(SosProtocol::Cascade, &cfg, &inst.alice, &inst.bob, &Seed::from_u64(9), Backend::InProc).unwrap();
        assert!(out.recovered.same_as(&inst.alice));
    }

    #[test]
    fn too_small_a_bound_reports_residual_children() {
        let params = SosParams { s: 40, h: 32, u: 1 << 32 };
        let inst = perturbed_instance(params, &[20], &Seed::from_u64(10));
        let cfg = SosConfig::new(params, Some(2));
        let err = reconcile(SosProtocol::Cascade, &cfg, &inst.alice, &inst.bob, &Seed::from_u64(11), Backend::InProc).unwrap_err();
        assert!(matches!(err, Error::ResidualChildren), "{err:?}");
    }
}
