//! Reconciliation of sets of sets.
//!
//! Alice and Bob each hold a parent multiset of child sets. Four protocols
//! let Bob recover Alice's parent:
//!
//! * [`naive`]: each child hashed to one key, keys reconciled as a set;
//! * [`iblt2`]: a parent table of child-IBLT encodings;
//! * [`cascade`]: a ladder of parent tables with growing child capacity;
//! * [`multiround`]: child hashes, then per-child estimates, then per-child
//!   IBLTs or polynomial evaluations.
//!
//! Parent tables hold 61-bit keys of child encodings rather than the
//! encodings themselves. After decoding a parent table Bob asks for the
//! encodings behind the keys he is missing (`ENC_REQUEST`, round `0x1B`),
//! so only differing encodings cross the wire.

pub mod cascade;
pub mod iblt2;
pub mod multiround;
pub mod naive;

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::iblt::{Iblt, IbltHasher};
use crate::rng_hash::{HashFn, Seed};
use crate::set_recon::set_hash;
use crate::transport::{
    bytes_to_words, put_blob, run_session, until_disconnect, words_to_bytes, Backend, Cursor, Endpoint, Frame, MsgType, ProtocolId, Transcript, ROUND_1B,
};

/// Largest parent the matching oracle accepts.
pub const ORACLE_MAX_S: usize = 64;

/// A parent multiset of child sets. Children are kept sorted and free of
/// repeated elements.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SetOfSets {
    pub children: Vec<Vec<u64>>,
}

impl SetOfSets {
    pub fn new(children: Vec<Vec<u64>>) -> SetOfSets {
        let children = children
            .into_iter()
            .map(|mut c| {
                c.sort_unstable();
                c.dedup();
                c
            })
            .collect();
        SetOfSets { children }
    }

    pub fn len(&self) -> usize {
        self.children.len()
    }

    pub fn is_empty(&self) -> bool {
        self.children.is_empty()
    }

    /// Total element count `n`.
    pub fn total_elements(&self) -> usize {
        self.children.iter().map(Vec::len).sum()
    }

    /// Children in sorted order; equal as multisets iff equal here.
    pub fn canonical(&self) -> Vec<Vec<u64>> {
        let mut c = self.children.clone();
        c.sort();
        c
    }

    pub fn same_as(&self, other: &SetOfSets) -> bool {
        self.canonical() == other.canonical()
    }

    /// Occurrence index of each child among identical earlier children.
    pub fn occurrences(&self) -> Vec<u64> {
        let mut seen: HashMap<&[u64], u64> = HashMap::new();
        self.children
            .iter()
            .map(|c| {
                let e = seen.entry(c.as_slice()).or_default();
                *e += 1;
                *e - 1
            })
            .collect()
    }
}

/// Binary instance file: `s`, `h`, `u` and the child count as u64, then
/// each child as its length followed by its sorted elements.
pub fn write_instance(w: &mut impl std::io::Write, params: &SosParams, parent: &SetOfSets) -> Result<()> {
    let mut words = vec![params.s as u64, params.h as u64, params.u, parent.len() as u64];
    for c in &parent.children {
        words.push(c.len() as u64);
        words.extend_from_slice(c);
    }
    w.write_all(&words_to_bytes(&words))?;
    Ok(())
}

pub fn read_instance(r: &mut impl std::io::Read) -> Result<(SosParams, SetOfSets)> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    let words = bytes_to_words(&buf)?;
    let bad = |what: &str| Error::MalformedBytes(format!("instance {what}"));
    if words.len() < 4 {
        return Err(bad("header"));
    }
    let params = SosParams { s: words[0] as usize, h: words[1] as usize, u: words[2] };
    let count = words[3] as usize;
    let mut rest = &words[4..];
    let mut children = Vec::with_capacity(count.min(rest.len()));
    for _ in 0..count {
        let (&len, tail) = rest.split_first().ok_or_else(|| bad("child length"))?;
        let len = len as usize;
        if tail.len() < len {
            return Err(bad("child body"));
        }
        let child = tail[..len].to_vec();
        if child.windows(2).any(|w| w[0] >= w[1]) || child.iter().any(|&x| x >= params.u) {
            return Err(bad("child elements"));
        }
        children.push(child);
        rest = &tail[len..];
    }
    if !rest.is_empty() || count > params.s || children.iter().any(|c| c.len() > params.h) {
        return Err(bad("shape"));
    }
    Ok((params, SetOfSets { children }))
}

/// Public instance parameters: at most `s` children of at most `h`
/// elements from `[0, u)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SosParams {
    pub s: usize,
    pub h: usize,
    pub u: u64,
}

/// 64-bit fingerprint of a child's contents.
pub fn child_fingerprint(seed: &Seed, child: &[u64]) -> u64 {
    HashFn::checksum(&seed.derive("child-fp", 0)).words(child)
}

/// Order-independent hash of a whole parent.
pub fn parent_hash(seed: &Seed, parent: &SetOfSets) -> u64 {
    let fps: Vec<u64> = parent.children.iter().map(|c| child_fingerprint(seed, c)).collect();
    set_hash(&seed.derive("parent-verify", 0), &fps)
}

/// The four protocols.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SosProtocol {
    Naive,
    Iblt2,
    Cascade,
    Multiround,
}

impl SosProtocol {
    pub const ALL: [SosProtocol; 4] = [SosProtocol::Naive, SosProtocol::Iblt2, SosProtocol::Cascade, SosProtocol::Multiround];

    pub fn id(self) -> ProtocolId {
        match self {
            SosProtocol::Naive => ProtocolId::SSR_NAIVE,
            SosProtocol::Iblt2 => ProtocolId::SSR_IBLT2,
            SosProtocol::Cascade => ProtocolId::SSR_CASCADE,
            SosProtocol::Multiround => ProtocolId::SSR_MULTI,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SosProtocol::Naive => "naive",
            SosProtocol::Iblt2 => "iblt2",
            SosProtocol::Cascade => "cascade",
            SosProtocol::Multiround => "multiround",
        }
    }
}

impl std::str::FromStr for SosProtocol {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<SosProtocol, String> {
        SosProtocol::ALL.into_iter().find(|p| p.name() == s).ok_or_else(|| format!("unknown protocol {s:?}"))
    }
}

/// Session options shared by the protocols.
#[derive(Clone, Debug, PartialEq)]
pub struct SosConfig {
    pub params: SosParams,
    /// Bound on the matching distance; `None` runs the unknown-d variant
    /// where one exists.
    pub d: Option<usize>,
    pub delta: f64,
    /// Lets IBLT-of-IBLTs ship an unmatched child verbatim.
    pub fallback: bool,
}

impl SosConfig {
    pub fn new(params: SosParams, d: Option<usize>) -> SosConfig {
        SosConfig { params, d, delta: 0.1, fallback: true }
    }

    /// `min(d, s)`, the bound on differing children.
    pub fn d_hat(&self, d: usize) -> usize {
        d.min(self.params.s)
    }
}

/// What Bob ends up with, plus counters for tests and reports.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct SosOutcome {
    pub recovered: SetOfSets,
    /// Attempts made by the doubling driver (1 otherwise).
    pub attempts: usize,
    /// Bound used by the attempt that succeeded.
    pub d_used: Option<usize>,
    /// Child-table decodes tried while matching encodings to partners.
    pub cross_decodes: usize,
    /// Level at which each recovered child was found (cascade; `0` = T_*).
    pub levels: Vec<usize>,
    /// Children shipped verbatim after failing to match.
    pub verbatim: usize,
}

/// Alice's side of a protocol: unsolicited frames per attempt, then
/// answers to Bob's requests.
pub trait AliceServer {
    fn open(&mut self, ep: &mut Endpoint, d: Option<usize>) -> Result<()>;
    fn on_frame(&mut self, ep: &mut Endpoint, frame: Frame) -> Result<()>;
}

/// Opens one attempt and serves Bob until he hangs up. A `RETRY` frame
/// with a 4-byte payload restarts the protocol at the bound it carries.
pub fn serve(ep: &mut Endpoint, server: &mut dyn AliceServer, d: Option<usize>, doubling: bool) -> Result<()> {
    server.open(ep, d)?;
    until_disconnect((|| loop {
        let frame = ep.recv()?;
        if doubling && frame.msg_type == MsgType::RETRY as u8 && frame.payload.len() == 4 {
            let next = Cursor::new(&frame.payload).u32()? as usize;
            server.open(ep, Some(next))?;
        } else {
            server.on_frame(ep, frame)?;
        }
    })())
}

/// Alice's protocol state for one session.
pub fn alice_server<'a>(protocol: SosProtocol, cfg: &'a SosConfig, parent: &'a SetOfSets, seed: &'a Seed) -> Box<dyn AliceServer + 'a> {
    match protocol {
        SosProtocol::Naive => Box::new(naive::Alice::new(cfg, parent, seed)),
        SosProtocol::Iblt2 => Box::new(iblt2::Alice::new(cfg, parent, seed)),
        SosProtocol::Cascade => Box::new(cascade::Alice::new(cfg, parent, seed)),
        SosProtocol::Multiround => Box::new(multiround::Alice::new(cfg, parent, seed)),
    }
}

/// Bob's side of one attempt.
pub fn bob_attempt(protocol: SosProtocol, ep: &mut Endpoint, cfg: &SosConfig, parent: &SetOfSets, seed: &Seed, d: Option<usize>) -> Result<SosOutcome> {
    let mut out = match protocol {
        SosProtocol::Naive => naive::bob(ep, cfg, parent, seed, d)?,
        SosProtocol::Iblt2 => iblt2::bob(ep, cfg, parent, seed, d.ok_or_else(|| needs_d(protocol))?)?,
        SosProtocol::Cascade => cascade::bob(ep, cfg, parent, seed, d.ok_or_else(|| needs_d(protocol))?)?,
        SosProtocol::Multiround => multiround::bob(ep, cfg, parent, seed, d)?,
    };
    out.attempts = 1;
    out.d_used = d;
    Ok(out)
}

fn needs_d(protocol: SosProtocol) -> Error {
    Error::InvalidParams(format!("{} needs a difference bound; use the doubling driver", protocol.name()))
}

/// Runs one protocol session over `backend`.
pub fn reconcile(
    protocol: SosProtocol,
    cfg: &SosConfig,
    alice: &SetOfSets,
    bob: &SetOfSets,
    seed: &Seed,
    backend: Backend,
) -> Result<(SosOutcome, Transcript)> {
    run_session(
        backend,
        protocol.id(),
        |ep| serve(ep, alice_server(protocol, cfg, alice, seed).as_mut(), cfg.d, false),
        |ep| bob_attempt(protocol, ep, cfg, bob, seed, cfg.d),
    )
}

/// Errors after which a larger bound may succeed.
fn retryable(e: &Error) -> bool {
    matches!(
        e,
        Error::DecodeFailed { .. }
            | Error::VerifyMismatch { .. }
            | Error::NoMatchFound
            | Error::ResidualChildren
            | Error::InterpolationFailure
            | Error::RootFailure
    )
}

/// Bob's side of the doubling driver: bounds 1, 2, 4, ... until an
/// attempt verifies, giving up once the bound passes `n`.
pub fn bob_doubling(protocol: SosProtocol, ep: &mut Endpoint, cfg: &SosConfig, parent: &SetOfSets, seed: &Seed) -> Result<SosOutcome> {
    let limit = (parent.total_elements() + parent.len()).max(1);
    let mut d = 1usize;
    let mut attempts = 0;
    loop {
        attempts += 1;
        match bob_attempt(protocol, ep, cfg, parent, seed, Some(d)) {
            Ok(mut out) => {
                out.attempts = attempts;
                return Ok(out);
            }
            Err(e) if retryable(&e) => {
                d *= 2;
                if d > 2 * limit {
                    return Err(Error::GiveUp(d as u64));
                }
                ep.send(attempts as u8 + 1, MsgType::RETRY, (d as u32).to_le_bytes().to_vec())?;
            }
            Err(e) => return Err(e),
        }
    }
}

/// Runs a known-d protocol at `d = 1, 2, 4, ...` in one session.
pub fn with_doubling(
    protocol: SosProtocol,
    cfg: &SosConfig,
    alice: &SetOfSets,
    bob: &SetOfSets,
    seed: &Seed,
    backend: Backend,
) -> Result<(SosOutcome, Transcript)> {
    run_session(
        backend,
        protocol.id(),
        |ep| serve(ep, alice_server(protocol, cfg, alice, seed).as_mut(), Some(1), true),
        |ep| bob_doubling(protocol, ep, cfg, bob, seed),
    )
}

/// Minimum total symmetric difference over perfect matchings of the
/// children, padding the smaller side with empty sets.
pub fn min_matching_distance(a: &SetOfSets, b: &SetOfSets) -> Result<u64> {
    let n = a.len().max(b.len());
    if n > ORACLE_MAX_S {
        return Err(Error::OracleScaleExceeded(format!("{n} children exceed the matching oracle limit of {ORACLE_MAX_S}")));
    }
    let empty = Vec::new();
    let get = |p: &SetOfSets, i: usize| p.children.get(i).unwrap_or(&empty).clone();
    let cost: Vec<Vec<i64>> = (0..n).map(|i| (0..n).map(|j| sym_diff(&get(a, i), &get(b, j)) as i64).collect()).collect();
    Ok(hungarian(&cost) as u64)
}

/// Size of the symmetric difference of two sorted lists.
pub fn sym_diff(a: &[u64], b: &[u64]) -> usize {
    let (mut i, mut j, mut common) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                common += 1;
                i += 1;
                j += 1;
            }
        }
    }
    a.len() + b.len() - 2 * common
}

/// Minimum-cost perfect matching on a square matrix (Kuhn-Munkres with
/// potentials).
pub fn hungarian(cost: &[Vec<i64>]) -> i64 {
    let n = cost.len();
    if n == 0 {
        return 0;
    }
    let inf = i64::MAX / 4;
    let (mut u, mut v) = (vec![0i64; n + 1], vec![0i64; n + 1]);
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    (1..=n).map(|j| cost[p[j] - 1][j - 1]).sum()
}

/// A generated pair with its ground truth.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SosInstance {
    pub params: SosParams,
    pub alice: SetOfSets,
    pub bob: SetOfSets,
    /// Element changes per perturbed child.
    pub costs: Vec<usize>,
    /// Total element changes, an upper bound on the matching distance.
    pub d: usize,
}

fn random_child(params: &SosParams, rng: &mut impl Rng) -> Vec<u64> {
    let size = rng.gen_range((params.h / 2).max(1)..=params.h.max(1)).min(params.u as usize);
    let mut c: Vec<u64> = Vec::with_capacity(size);
    while c.len() < size {
        let x = rng.gen_range(0..params.u);
        if !c.contains(&x) {
            c.push(x);
        }
    }
    c.sort_unstable();
    c
}

/// `s` random children of between `h/2` and `h` elements.
pub fn random_parent(params: &SosParams, seed: &Seed) -> SetOfSets {
    let mut rng = seed.derive("sos-parent", 0).rng();
    SetOfSets::new((0..params.s).map(|_| random_child(params, &mut rng)).collect())
}

/// Applies `cost` single-element insertions or deletions to a child, fewer
/// only when every element is already in it or already touched.
fn toggle(child: &mut Vec<u64>, cost: usize, params: &SosParams, rng: &mut impl Rng) {
    let mut touched: Vec<u64> = Vec::new();
    let mut removed = 0u64;
    for _ in 0..cost {
        let can_add = child.len() < params.h && (child.len() as u64) + removed < params.u;
        let removable: Vec<usize> = (0..child.len()).filter(|&i| !touched.contains(&child[i])).collect();
        let add = can_add && (removable.is_empty() || rng.gen_bool(0.5));
        if add {
            loop {
                let x = rng.gen_range(0..params.u);
                if !child.contains(&x) && !touched.contains(&x) {
                    child.push(x);
                    touched.push(x);
                    break;
                }
            }
        } else if let Some(&i) = removable.choose(rng) {
            touched.push(child[i]);
            child.swap_remove(i);
            removed += 1;
        }
    }
    child.sort_unstable();
}

/// Per-child costs whose total is at most `d`: each child draws a scale
/// `2^j` up to `min(d, h)` uniformly and a cost in `(2^(j-1), 2^j]`.
pub fn spread_costs(d: usize, params: &SosParams, rng: &mut impl Rng) -> Vec<usize> {
    let top = d.min(params.h).max(1);
    let levels = usize::BITS - top.leading_zeros();
    let mut left = d;
    let mut costs = Vec::new();
    while left > 0 && costs.len() < params.s {
        let j = rng.gen_range(0..levels);
        let hi = (1usize << j).min(top);
        let lo = if j == 0 { 1 } else { (1usize << (j - 1)) + 1 };
        let c = rng.gen_range(lo.min(hi)..=hi).min(left);
        costs.push(c);
        left -= c;
    }
    costs
}

/// Number of costs in `(2^(j-1), 2^j]`, indexed by `j >= 1`; the group
/// for `j = 0` holds costs of exactly 1.
pub fn cost_groups(costs: &[usize]) -> Vec<usize> {
    let mut groups = vec![0usize; 65];
    for &c in costs {
        let j = if c <= 1 { 0 } else { (usize::BITS - (c - 1).leading_zeros()) as usize };
        groups[j] += 1;
    }
    groups
}

/// Bob's parent is Alice's with the given per-child costs applied to
/// distinct random children.
pub fn perturbed_instance(params: SosParams, costs: &[usize], seed: &Seed) -> SosInstance {
    let alice = random_parent(&params, seed);
    let mut rng = seed.derive("sos-perturb", 0).rng();
    let mut idx: Vec<usize> = (0..alice.len()).collect();
    idx.shuffle(&mut rng);
    let mut bob = alice.clone();
    for (&i, &c) in idx.iter().zip(costs) {
        toggle(&mut bob.children[i], c, &params, &mut rng);
    }
    bob.children.shuffle(&mut rng);
    let d = costs.iter().sum();
    SosInstance { params, alice, bob, costs: costs.to_vec(), d }
}

/// Instance with at most `d` element changes spread by [`spread_costs`].
/// Asserts the group bound `|S_j| <= d / 2^(j-1)`.
pub fn spread_instance(params: SosParams, d: usize, seed: &Seed) -> SosInstance {
    let mut rng = seed.derive("sos-spread", 0).rng();
    let costs = spread_costs(d, &params, &mut rng);
    for (j, &g) in cost_groups(&costs).iter().enumerate().skip(1) {
        assert!(g << (j - 1) <= d, "group {j} holds {g} children, above d/2^(j-1)");
    }
    perturbed_instance(params, &costs, seed)
}

/// Instance where `k` of Alice's children are replaced by fresh ones.
pub fn replacement_instance(params: SosParams, k: usize, seed: &Seed) -> SosInstance {
    let alice = random_parent(&params, seed);
    let mut rng = seed.derive("sos-replace", 0).rng();
    let mut bob = alice.clone();
    let mut idx: Vec<usize> = (0..bob.len()).collect();
    idx.shuffle(&mut rng);
    let mut d = 0;
    for &i in idx.iter().take(k) {
        let fresh = random_child(&params, &mut rng);
        d += sym_diff(&bob.children[i], &fresh);
        bob.children[i] = fresh;
    }
    SosInstance { params, alice, bob, costs: vec![], d }
}

/// Per-level child encoding: a child IBLT, a truncated child hash, and the
/// 61-bit parent key derived from both plus the occurrence index.
#[derive(Clone, Debug)]
pub(crate) struct Codec {
    pub child_cap: usize,
    hasher: IbltHasher,
    hash: HashFn,
    hash_bytes: usize,
    fp: HashFn,
    key: HashFn,
}

impl Codec {
    pub fn new(seed: &Seed, label: &str, level: u64, child_cap: usize, hash_bits: u32) -> Codec {
        let s = seed.derive(label, level);
        Codec {
            child_cap,
            hasher: IbltHasher::new(&s.derive("child-iblt", 0)),
            hash: HashFn::pairwise(&s.derive("child-hash", 0), hash_bits),
            hash_bytes: hash_bits.div_ceil(8) as usize,
            fp: HashFn::checksum(&s.derive("encoding-fp", 0)),
            key: HashFn::pairwise(&s.derive("parent-key", 0), 61),
        }
    }

    pub fn child_hash(&self, child: &[u64]) -> u64 {
        self.hash.words(child)
    }

    pub fn table(&self, child: &[u64]) -> Iblt {
        let mut t = Iblt::with_hasher(self.child_cap, self.hasher);
        child.iter().for_each(|&x| t.insert(x));
        t
    }

    pub fn encode(&self, child: &[u64]) -> Vec<u8> {
        let mut out = self.table(child).to_bytes();
        out.extend_from_slice(&self.child_hash(child).to_le_bytes()[..self.hash_bytes]);
        out
    }

    pub fn key(&self, encoding: &[u8], occurrence: u64) -> u64 {
        self.key.words(&[self.fp.bytes(encoding), occurrence])
    }

    pub fn parse(&self, encoding: &[u8]) -> Result<(Iblt, u64)> {
        let (t, used) = Iblt::read_prefix(encoding, self.hasher)?;
        let rest = &encoding[used..];
        if rest.len() != self.hash_bytes {
            return Err(Error::MalformedBytes("child encoding hash length".into()));
        }
        let mut h = [0u8; 8];
        h[..self.hash_bytes].copy_from_slice(rest);
        Ok((t, u64::from_le_bytes(h)))
    }

    /// Alice's child if `table - partner` decodes to a difference that
    /// reproduces her hash.
    pub fn cross_decode(&self, alice: &(Iblt, u64), partner: &[u64]) -> Option<Vec<u64>> {
        let mut diff = alice.0.clone();
        partner.iter().for_each(|&x| diff.delete(x));
        let res = diff.decode();
        if !res.is_complete() {
            return None;
        }
        let mut child: Vec<u64> = partner.iter().copied().filter(|x| !res.negatives.contains(x)).collect();
        if child.len() + res.negatives.len() != partner.len() {
            return None;
        }
        for &x in &res.positives {
            if partner.binary_search(&x).is_ok() {
                return None;
            }
            child.push(x);
        }
        child.sort_unstable();
        (self.child_hash(&child) == alice.1).then_some(child)
    }
}

/// Keys of every child of a parent at one codec, with child index and
/// occurrence.
pub(crate) fn keyed(codec: &Codec, parent: &SetOfSets) -> Vec<(u64, usize, u64)> {
    parent.children.iter().zip(parent.occurrences()).enumerate().map(|(i, (c, j))| (codec.key(&codec.encode(c), j), i, j)).collect()
}

/// Keys of the children themselves, for verbatim tables.
pub(crate) fn content_key(seed: &Seed, label: &str, child: &[u64], occurrence: u64) -> u64 {
    let fp = child_fingerprint(seed, child);
    HashFn::pairwise(&seed.derive(label, 0), 61).words(&[fp, occurrence])
}

/// `ENC_REQUEST` payload kinds.
pub(crate) const REQ_ENCODING: u8 = 0;
pub(crate) const REQ_VERBATIM: u8 = 1;

pub(crate) fn request_payload(kind: u8, level: u8, keys: &[u64]) -> Vec<u8> {
    let mut out = vec![kind, level];
    out.extend_from_slice(&(keys.len() as u32).to_le_bytes());
    out.extend(words_to_bytes(keys));
    out
}

pub(crate) fn parse_request(payload: &[u8]) -> Result<(u8, u8, Vec<u64>)> {
    let mut c = Cursor::new(payload);
    let (kind, level) = (c.u8()?, c.u8()?);
    let n = c.u32()? as usize;
    let keys = bytes_to_words(c.take(8 * n)?)?;
    c.finish()?;
    Ok((kind, level, keys))
}

/// Encodings behind `keys`, each with its occurrence index.
pub(crate) fn encoding_response(codec: &Codec, parent: &SetOfSets, index: &HashMap<u64, (usize, u64)>, keys: &[u64]) -> Result<Vec<u8>> {
    let mut out = (keys.len() as u32).to_le_bytes().to_vec();
    for k in keys {
        let &(i, j) = index.get(k).ok_or_else(|| Error::ProtocolViolation(format!("request for unknown key {k:#x}")))?;
        out.extend_from_slice(&(j as u32).to_le_bytes());
        put_blob(&mut out, &codec.encode(&parent.children[i]));
    }
    Ok(out)
}

pub(crate) fn parse_encodings(payload: &[u8]) -> Result<Vec<(u64, Vec<u8>)>> {
    let mut c = Cursor::new(payload);
    let n = c.u32()? as usize;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let j = c.u32()? as u64;
        out.push((j, c.blob()?.to_vec()));
    }
    c.finish()?;
    Ok(out)
}

/// Children behind `keys`, verbatim.
pub(crate) fn verbatim_response(parent: &SetOfSets, index: &HashMap<u64, (usize, u64)>, keys: &[u64]) -> Result<Vec<u8>> {
    let mut out = (keys.len() as u32).to_le_bytes().to_vec();
    for k in keys {
        let &(i, j) = index.get(k).ok_or_else(|| Error::ProtocolViolation(format!("request for unknown key {k:#x}")))?;
        out.extend_from_slice(&(j as u32).to_le_bytes());
        put_blob(&mut out, &words_to_bytes(&parent.children[i]));
    }
    Ok(out)
}

pub(crate) fn parse_verbatim(payload: &[u8]) -> Result<Vec<(u64, Vec<u64>)>> {
    parse_encodings(payload)?.into_iter().map(|(j, b)| Ok((j, bytes_to_words(&b)?))).collect()
}

/// Asks Alice for the encodings (or children) behind `keys`.
pub(crate) fn fetch(ep: &mut Endpoint, kind: u8, level: u8, keys: &[u64]) -> Result<Vec<u8>> {
    ep.send(ROUND_1B, MsgType::ENC_REQUEST, request_payload(kind, level, keys))?;
    let reply = if kind == REQ_VERBATIM { MsgType::CHILD_DATA } else { MsgType::ENC_RESPONSE };
    Ok(ep.expect(reply)?.payload)
}

/// Answers an `ENC_REQUEST` from per-level codecs and key indexes.
pub(crate) fn answer<'a>(
    ep: &mut Endpoint,
    frame: &Frame,
    parent: &SetOfSets,
    lookup: impl Fn(u8) -> Option<(Option<&'a Codec>, &'a HashMap<u64, (usize, u64)>)>,
) -> Result<()> {
    if frame.msg_type != MsgType::ENC_REQUEST as u8 {
        return Err(Error::ProtocolViolation(format!("unexpected message type {}", frame.msg_type)));
    }
    let (kind, level, keys) = parse_request(&frame.payload)?;
    let (codec, index) = lookup(level).ok_or_else(|| Error::ProtocolViolation(format!("request for unknown level {level}")))?;
    match (kind, codec) {
        (REQ_ENCODING, Some(codec)) => ep.send(ROUND_1B, MsgType::ENC_RESPONSE, encoding_response(codec, parent, index, &keys)?),
        (REQ_VERBATIM, _) => ep.send(ROUND_1B, MsgType::CHILD_DATA, verbatim_response(parent, index, &keys)?),
        _ => Err(Error::ProtocolViolation(format!("bad request kind {kind}"))),
    }
}

pub(crate) fn send_verify(ep: &mut Endpoint, round: u8, seed: &Seed, parent: &SetOfSets) -> Result<()> {
    ep.send(round, MsgType::VERIFY, parent_hash(seed, parent).to_le_bytes().to_vec())
}

pub(crate) fn read_verify(ep: &mut Endpoint) -> Result<u64> {
    let f = ep.expect(MsgType::VERIFY)?;
    let mut c = Cursor::new(&f.payload);
    let h = c.u64()?;
    c.finish()?;
    Ok(h)
}

/// Bob's parent with `removed` children dropped and `added` appended.
pub(crate) fn assemble(bob: &SetOfSets, removed: &[usize], added: Vec<Vec<u64>>) -> SetOfSets {
    let mut drop = vec![false; bob.len()];
    removed.iter().for_each(|&i| drop[i] = true);
    let mut children: Vec<Vec<u64>> = bob.children.iter().zip(&drop).filter(|(_, &d)| !d).map(|(c, _)| c.clone()).collect();
    children.extend(added);
    SetOfSets { children }
}

/// Index from parent key to (child, occurrence).
pub(crate) fn key_index(keys: &[(u64, usize, u64)]) -> HashMap<u64, (usize, u64)> {
    keys.iter().map(|&(k, i, j)| (k, (i, j))).collect()
}
