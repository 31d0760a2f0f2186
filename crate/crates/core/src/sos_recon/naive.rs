//! Naive protocol: every child becomes one 61-bit key, the keys are
//! reconciled as a flat set, and the children behind Alice's extra keys
//! are then sent verbatim.

use std::collections::HashMap;

use super::{assemble, content_key, fetch, key_index, parse_verbatim, AliceServer, SetOfSets, SosConfig, SosOutcome, REQ_VERBATIM};
use crate::error::{Error, Result};
use crate::rng_hash::Seed;
use crate::set_recon::{self, ReconConfig, SetServer};
use crate::transport::{Endpoint, Frame};

const KEY_LABEL: &str = "naive-key";

fn set_seed(seed: &Seed) -> Seed {
    seed.derive("naive-set", 0)
}

/// Key-level configuration: at most `d_hat` children differ on each side.
fn set_config(cfg: &SosConfig, d: Option<usize>) -> ReconConfig {
    match d {
        Some(d) => ReconConfig::known(2 * cfg.d_hat(d)),
        None => ReconConfig { delta: cfg.delta, ..ReconConfig::unknown() },
    }
}

fn keys(parent: &SetOfSets, seed: &Seed) -> Vec<(u64, usize, u64)> {
    parent.children.iter().zip(parent.occurrences()).enumerate().map(|(i, (c, j))| (content_key(seed, KEY_LABEL, c, j), i, j)).collect()
}

pub struct Alice<'a> {
    cfg: &'a SosConfig,
    parent: &'a SetOfSets,
    seed: Seed,
    keys: Vec<u64>,
    index: HashMap<u64, (usize, u64)>,
    set: Option<SetServer>,
}

impl<'a> Alice<'a> {
    pub fn new(cfg: &'a SosConfig, parent: &'a SetOfSets, seed: &Seed) -> Alice<'a> {
        let keyed = keys(parent, seed);
        Alice { cfg, parent, seed: *seed, keys: keyed.iter().map(|k| k.0).collect(), index: key_index(&keyed), set: None }
    }
}

impl AliceServer for Alice<'_> {
    fn open(&mut self, ep: &mut Endpoint, d: Option<usize>) -> Result<()> {
        let mut server = SetServer::new(set_config(self.cfg, d), self.keys.clone(), set_seed(&self.seed))?;
        server.open(ep)?;
        self.set = Some(server);
        Ok(())
    }

    fn on_frame(&mut self, ep: &mut Endpoint, frame: Frame) -> Result<()> {
        if let Some(server) = self.set.as_mut() {
            if server.on_frame(ep, &frame)? {
                return Ok(());
            }
        }
        let index = &self.index;
        super::answer(ep, &frame, self.parent, |_| Some((None, index)))
    }
}

pub fn bob(ep: &mut Endpoint, cfg: &SosConfig, parent: &SetOfSets, seed: &Seed, d: Option<usize>) -> Result<SosOutcome> {
    let keyed = keys(parent, seed);
    let words: Vec<u64> = keyed.iter().map(|k| k.0).collect();
    let set = set_recon::bob(ep, &set_config(cfg, d), &words, &set_seed(seed))?;
    let index = key_index(&keyed);
    let removed: Vec<usize> = set.only_bob.iter().map(|k| index[k].0).collect();
    let mut added = Vec::new();
    if !set.only_alice.is_empty() {
        let children = parse_verbatim(&fetch(ep, REQ_VERBATIM, 0, &set.only_alice)?)?;
        if children.len() != set.only_alice.len() {
            return Err(Error::MalformedBytes("verbatim child count".into()));
        }
        for ((j, child), &k) in children.into_iter().zip(&set.only_alice) {
            if content_key(seed, KEY_LABEL, &child, j) != k {
                return Err(Error::VerifyMismatch { stage: "naive-child" });
            }
            added.push(child);
        }
    }
    let verbatim = added.len();
    Ok(SosOutcome { recovered: assemble(parent, &removed, added), verbatim, ..SosOutcome::default() })
}

#[cfg(test)]
mod tests {
    use super::super::*;
    use crate::transport::MsgType;

    fn params() -> SosParams {
        SosParams { s: 50, h: 20, u: 1 << 32 }
    }

    #[test]
    fn identical_parents_need_no_follow_up() {
        let a = random_parent(&params(), &Seed::from_u64(1));
        let cfg = SosConfig::new(params(), Some(4));
        let (out, tr) = reconcile(SosProtocol::Naive, &cfg, &a, &a, &Seed::from_u64(2), Backend::InProc).unwrap();
        assert!(out.recovered.same_as(&a));
        assert_eq!(tr.frames_of(MsgType::ENC_REQUEST).count(), 0);
    }

    #[test]
    fn one_changed_element_sends_one_child() {
        let inst = perturbed_instance(params(), &[1], &Seed::from_u64(3));
        let cfg = SosConfig::new(params(), Some(1));
        let (out, tr) = reconcile(SosProtocol::Naive, &cfg, &inst.alice, &inst.bob, &Seed::from_u64(4), Backend::InProc).unwrap();
        assert!(out.recovered.same_as(&inst.alice));
        assert_eq!(out.verbatim, 1);
        assert_eq!(tr.frames_of(MsgType::CHILD_DATA).count(), 1);
    }

    #[test]
    fn replacements_with_known_and_unknown_d() {
        for seed in 0..20 {
            let inst = replacement_instance(params(), 10, &Seed::from_u64(seed));
            for d in [Some(10), None] {
                let cfg = SosConfig::new(params(), d);
                let (out, _) = reconcile(SosProtocol::Naive, &cfg, &inst.alice, &inst.bob, &Seed::from_u64(seed + 50), Backend::InProc).unwrap();
                assert!(out.recovered.same_as(&inst.alice));
            }
        }
    }

    #[test]
    fn duplicate_children_are_kept() {
        let a = SetOfSets::new(vec![vec![1, 2], vec![1, 2], vec![3]]);
        let b = SetOfSets::new(vec![vec![1, 2], vec![3], vec![4]]);
        let cfg = SosConfig::new(SosParams { s: 3, h: 2, u: 10 }, Some(3));
        let (out, _) = reconcile(SosProtocol::Naive, &cfg, &a, &b, &Seed::from_u64(9), Backend::InProc).unwrap();
        assert!(out.recovered.same_as(&a));
    }
}
