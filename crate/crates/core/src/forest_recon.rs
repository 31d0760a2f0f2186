//! Reconciliation of rooted forests.
//!
//! Each vertex gets an AHU-style signature, a hash of the sorted list of
//! its children's signatures. Every vertex then contributes one child
//! multiset: its own signature with a parent marker plus its children's
//! signatures. Those multisets are pair-encoded and reconciled with the
//! cascade protocol; Bob rebuilds a forest from Alice's collection by
//! handing out vertices of each signature to the parents that ask for them.

use std::collections::HashMap;
use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng_hash::{Fingerprinter, Seed};
use crate::set_recon::{decode_counts, encode_counts};
use crate::sos_recon::{cascade, serve, SetOfSets, SosConfig, SosParams};
use crate::transport::{bytes_to_words, run_session, Backend, Endpoint, ProtocolId, Transcript};

/// Bits kept of each 64-bit signature inside a child multiset.
pub const SIG_BITS: u32 = 40;
/// Set on the entry carrying the vertex's own signature.
pub const PARENT_MARKER: u64 = 1 << SIG_BITS;
const SIG_MASK: u64 = PARENT_MARKER - 1;

/// A rooted forest; `parent[v]` is `None` for roots.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Forest {
    parent: Vec<Option<usize>>,
}

impl Forest {
    pub fn new(parent: Vec<Option<usize>>) -> Result<Forest> {
        let n = parent.len();
        if let Some(v) = parent.iter().flatten().find(|&&p| p >= n) {
            return Err(Error::InvalidParams(format!("parent {v} outside {n} vertices")));
        }
        let f = Forest { parent };
        if f.try_depths().is_none() {
            return Err(Error::InvalidParams("parent relation has a cycle".into()));
        }
        Ok(f)
    }

    pub fn n(&self) -> usize {
        self.parent.len()
    }

    pub fn parent(&self, v: usize) -> Option<usize> {
        self.parent[v]
    }

    pub fn edge_count(&self) -> usize {
        self.parent.iter().flatten().count()
    }

    pub fn children(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.n()];
        for (v, p) in self.parent.iter().enumerate() {
            if let Some(p) = p {
                out[*p].push(v);
            }
        }
        out
    }

    fn try_depths(&self) -> Option<Vec<usize>> {
        let kids = self.children();
        let mut depth = vec![usize::MAX; self.n()];
        let mut stack: Vec<usize> = (0..self.n()).filter(|&v| self.parent[v].is_none()).collect();
        stack.iter().for_each(|&r| depth[r] = 0);
        let mut seen = stack.len();
        while let Some(v) = stack.pop() {
            for &c in &kids[v] {
                depth[c] = depth[v] + 1;
                stack.push(c);
                seen += 1;
            }
        }
        (seen == self.n()).then_some(depth)
    }

    /// Depth of every vertex, roots at 0.
    pub fn depths(&self) -> Vec<usize> {
        self.try_depths().expect("forests are acyclic")
    }

    /// Maximum root-to-leaf depth.
    pub fn sigma(&self) -> usize {
        self.depths().into_iter().max().unwrap_or(0)
    }

    /// Vertices ordered so that children come before parents.
    fn bottom_up(&self) -> Vec<usize> {
        let depth = self.depths();
        let mut order: Vec<usize> = (0..self.n()).collect();
        order.sort_by_key(|&v| std::cmp::Reverse(depth[v]));
        order
    }

    /// Relabels vertex `v` as `perm[v]`.
    pub fn permute(&self, perm: &[usize]) -> Forest {
        let mut parent = vec![None; self.n()];
        for (v, p) in self.parent.iter().enumerate() {
            parent[perm[v]] = p.map(|p| perm[p]);
        }
        Forest { parent }
    }

    /// Binary file: `n`, then one parent word per vertex, `u64::MAX` for
    /// roots.
    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(&(self.n() as u64).to_le_bytes())?;
        for p in &self.parent {
            w.write_all(&p.map_or(u64::MAX, |p| p as u64).to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Forest> {
        let mut buf = Vec::new();
        r.read_to_end(&mut buf)?;
        let words = bytes_to_words(&buf)?;
        let (&n, rest) = words.split_first().ok_or_else(|| Error::MalformedBytes("forest header".into()))?;
        if rest.len() as u64 != n {
            return Err(Error::MalformedBytes(format!("{} parent words for {n} vertices", rest.len())));
        }
        Forest::new(rest.iter().map(|&p| (p != u64::MAX).then_some(p as usize)).collect()).map_err(|e| Error::MalformedBytes(e.to_string()))
    }
}

/// Per-vertex 64-bit signatures; leaves share the hash of the empty list.
pub fn compute_sigs(f: &Forest, seed: &Seed) -> Vec<u64> {
    let fp = Fingerprinter::new(&seed.derive("forest-sig", 0));
    let kids = f.children();
    let mut sig = vec![0u64; f.n()];
    let mut buf = Vec::new();
    for v in f.bottom_up() {
        buf.clear();
        buf.extend(kids[v].iter().map(|&c| sig[c]));
        buf.sort_unstable();
        sig[v] = fp.words(&buf);
    }
    sig
}

/// One child multiset per vertex, each a sorted list of 41-bit items:
/// the marked own signature, then the children's signatures.
pub fn edge_multisets(f: &Forest, sigs: &[u64]) -> Vec<Vec<u64>> {
    let kids = f.children();
    (0..f.n())
        .map(|v| {
            let mut items: Vec<u64> = kids[v].iter().map(|&c| sigs[c] & SIG_MASK).collect();
            items.push(PARENT_MARKER | (sigs[v] & SIG_MASK));
            items.sort_unstable();
            items
        })
        .collect()
}

/// The pair-encoded collection handed to the cascade.
pub fn encode(f: &Forest, seed: &Seed) -> SetOfSets {
    let sigs = compute_sigs(f, seed);
    SetOfSets::new(edge_multisets(f, &sigs).iter().map(|m| encode_counts(m).expect("items fit the pair encoding")).collect())
}

/// Builds a forest whose collection is exactly `multisets`.
pub fn reconstruct(multisets: &[Vec<u64>]) -> Result<Forest> {
    let n = multisets.len();
    // Own signature and children of each future vertex.
    let mut own = Vec::with_capacity(n);
    let mut want = Vec::with_capacity(n);
    for m in multisets {
        let mut marked = m.iter().filter(|&&x| x & PARENT_MARKER != 0);
        let s = marked.next().ok_or_else(|| Error::ReconstructionFailure("multiset without a parent entry".into()))?;
        if marked.next().is_some() {
            return Err(Error::ReconstructionFailure("multiset with two parent entries".into()));
        }
        own.push(s & SIG_MASK);
        want.push(m.iter().copied().filter(|&x| x & PARENT_MARKER == 0).collect::<Vec<u64>>());
    }
    // Every vertex of one signature must describe the same children.
    let mut groups: HashMap<u64, Vec<usize>> = HashMap::new();
    for (v, &s) in own.iter().enumerate() {
        groups.entry(s).or_default().push(v);
    }
    for vs in groups.values() {
        if vs.iter().any(|&v| want[v] != want[vs[0]]) {
            return Err(Error::ReconstructionFailure(format!("{} vertices share a signature but not their children", vs.len())));
        }
    }
    let mut parent = vec![None; n];
    for (v, kids) in want.iter().enumerate() {
        for &c in kids {
            let pool = groups.get_mut(&c).ok_or_else(|| Error::ReconstructionFailure(format!("child signature {c:x} has no vertex")))?;
            let child = pool.pop().ok_or_else(|| Error::ReconstructionFailure(format!("child signature {c:x} has no free root")))?;
            parent[child] = Some(v);
        }
    }
    Forest::new(parent).map_err(|e| Error::ReconstructionFailure(e.to_string()))
}

/// Exact isomorphism test by shared AHU labels.
pub fn is_isomorphic(a: &Forest, b: &Forest) -> bool {
    if a.n() != b.n() || a.edge_count() != b.edge_count() {
        return false;
    }
    let mut dict = HashMap::new();
    let (mut ra, mut rb) = (ahu_roots(a, &mut dict), ahu_roots(b, &mut dict));
    ra.sort_unstable();
    rb.sort_unstable();
    ra == rb
}

/// Collision-free class label of every root.
pub fn ahu_roots(f: &Forest, dict: &mut HashMap<Vec<u32>, u32>) -> Vec<u32> {
    let kids = f.children();
    let mut label = vec![0u32; f.n()];
    for v in f.bottom_up() {
        let mut key: Vec<u32> = kids[v].iter().map(|&c| label[c]).collect();
        key.sort_unstable();
        let next = dict.len() as u32;
        label[v] = *dict.entry(key).or_insert(next);
    }
    (0..f.n()).filter(|&v| f.parent(v).is_none()).map(|v| label[v]).collect()
}

/// Random forest on `n` vertices with depth at most `sigma`, labels
/// shuffled.
pub fn random_forest(n: usize, sigma: usize, seed: &Seed) -> Forest {
    let mut rng = seed.derive("forest", 0).rng();
    let mut parent = vec![None; n];
    let mut depth = vec![0usize; n];
    for v in 1..n {
        if rng.gen_bool(0.02) {
            continue;
        }
        let p = rng.gen_range(0..v);
        if depth[p] < sigma {
            parent[v] = Some(p);
            depth[v] = depth[p] + 1;
        }
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng);
    Forest { parent }.permute(&perm)
}

/// One rooted-forest edge edit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Edit {
    /// The edge into `child` is removed; `child` becomes a root.
    Cut { child: usize },
    /// Root `child` is hung below `parent`.
    Link { child: usize, parent: usize },
}

/// Applies `d` random valid edits that keep depth within `sigma`.
pub fn random_edits(f: &Forest, d: usize, sigma: usize, seed: &Seed) -> (Forest, Vec<Edit>) {
    let mut rng = seed.derive("forest-edits", 0).rng();
    let mut parent = f.parent.clone();
    let mut edits = Vec::with_capacity(d);
    while edits.len() < d {
        let g = Forest { parent: parent.clone() };
        let depth = g.depths();
        let non_roots: Vec<usize> = (0..g.n()).filter(|&v| parent[v].is_some()).collect();
        if rng.gen_bool(0.5) && !non_roots.is_empty() {
            let child = *non_roots.choose(&mut rng).expect("nonempty");
            parent[child] = None;
            edits.push(Edit::Cut { child });
            continue;
        }
        let roots: Vec<usize> = (0..g.n()).filter(|&v| parent[v].is_none()).collect();
        if roots.len() < 2 {
            continue;
        }
        let child = *roots.choose(&mut rng).expect("nonempty");
        let height = subtree_height(&g, child);
        let tree_of = root_of(&g);
        let hosts: Vec<usize> = (0..g.n()).filter(|&p| tree_of[p] != child && depth[p] + 1 + height <= sigma).collect();
        if let Some(&p) = hosts.choose(&mut rng) {
            parent[child] = Some(p);
            edits.push(Edit::Link { child, parent: p });
        }
    }
    (Forest { parent }, edits)
}

fn subtree_height(f: &Forest, v: usize) -> usize {
    let kids = f.children();
    let mut best = 0;
    let mut stack = vec![(v, 0)];
    while let Some((u, h)) = stack.pop() {
        best = best.max(h);
        stack.extend(kids[u].iter().map(|&c| (c, h + 1)));
    }
    best
}

fn root_of(f: &Forest) -> Vec<usize> {
    let mut root = vec![usize::MAX; f.n()];
    for v in 0..f.n() {
        let mut u = v;
        while let Some(p) = f.parent[u] {
            u = p;
        }
        root[v] = u;
    }
    root
}

/// Bound on pair-encoded words changed by `d` edits: each edit re-signs at
/// most `sigma` ancestors, each costing two words for its own entry and
/// four in its parent's multiset.
pub fn budget(d: usize, sigma: usize) -> usize {
    d.max(1) * (6 * sigma.max(1) + 4)
}

pub fn params(n: usize) -> SosParams {
    SosParams { s: n, h: n.max(1), u: 1 << 61 }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ForestConfig {
    pub d: usize,
    /// Depth bound shared by both parties.
    pub sigma: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ForestOutcome {
    pub forest: Forest,
    /// True when Bob already held Alice's collection.
    pub unchanged: bool,
}

fn cascade_seed(seed: &Seed) -> Seed {
    seed.derive("forest-cascade", 0)
}

fn sos_config(cfg: &ForestConfig, n: usize) -> (SosConfig, usize) {
    let d = budget(cfg.d, cfg.sigma);
    (SosConfig::new(params(n), Some(d)), d)
}

pub fn alice(ep: &mut Endpoint, cfg: &ForestConfig, f: &Forest, seed: &Seed) -> Result<()> {
    let parent = encode(f, seed);
    let (sos, d) = sos_config(cfg, f.n());
    let mut server = cascade::Alice::new(&sos, &parent, &cascade_seed(seed));
    serve(ep, &mut server, Some(d), false)
}

pub fn bob(ep: &mut Endpoint, cfg: &ForestConfig, f: &Forest, seed: &Seed) -> Result<ForestOutcome> {
    let mine = encode(f, seed);
    let (sos, d) = sos_config(cfg, f.n());
    let theirs = cascade::bob(ep, &sos, &mine, &cascade_seed(seed), d)?.recovered;
    if theirs.same_as(&mine) {
        return Ok(ForestOutcome { forest: f.clone(), unchanged: true });
    }
    let multisets: Vec<Vec<u64>> = theirs.children.iter().map(|c| decode_counts(c)).collect();
    let forest = reconstruct(&multisets)?;
    if !encode(&forest, seed).same_as(&theirs) {
        return Err(Error::ReconstructionFailure("rebuilt forest does not reproduce the collection".into()));
    }
    Ok(ForestOutcome { forest, unchanged: false })
}

/// Runs one session over `backend`.
pub fn reconcile(cfg: &ForestConfig, a: &Forest, b: &Forest, seed: &Seed, backend: Backend) -> Result<(ForestOutcome, Transcript)> {
    if a.n() != b.n() {
        return Err(Error::InvalidParams(format!("vertex counts differ: {} and {}", a.n(), b.n())));
    }
    run_session(backend, ProtocolId::FOREST, |ep| alice(ep, cfg, a, seed), |ep| bob(ep, cfg, b, seed))
}

/// Every rooted forest on `n` vertices up to isomorphism.
pub fn all_forests(n: usize) -> Vec<Forest> {
    let mut out: HashMap<Vec<u32>, Forest> = HashMap::new();
    let mut dict = HashMap::new();
    let mut parent = vec![None; n];
    // Parents precede children, which reaches every forest.
    fn walk(v: usize, parent: &mut Vec<Option<usize>>, f: &mut impl FnMut(&[Option<usize>])) {
        if v == parent.len() {
            f(parent);
            return;
        }
        for p in std::iter::once(None).chain((0..v).map(Some)) {
            parent[v] = p;
            walk(v + 1, parent, f);
        }
    }
    walk(0, &mut parent, &mut |p| {
        let f = Forest { parent: p.to_vec() };
        let mut roots = ahu_roots(&f, &mut dict);
        roots.sort_unstable();
        out.entry(roots).or_insert(f);
    });
    out.into_values().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path(n: usize) -> Forest {
        Forest::new((0..n).map(|v| v.checked_sub(1)).collect()).unwrap()
    }

    #[test]
    fn structure_and_files() {
        let f = Forest::new(vec![None, Some(0), Some(0), Some(1), None]).unwrap();
        assert_eq!(f.sigma(), 2);
        assert_eq!(f.edge_count(), 3);
        let mut buf = Vec::new();
        f.write_to(&mut buf).unwrap();
        assert_eq!(buf.len(), 8 * 6);
        assert_eq!(Forest::read_from(&mut buf.as_slice()).unwrap(), f);
        assert!(Forest::new(vec![Some(1), Some(0)]).is_err());
        assert!(Forest::read_from(&mut &buf[..40]).is_err());
    }

    #[test]
    fn signatures_are_order_free() {
        let seed = Seed::from_u64(1);
        let single = compute_sigs(&Forest::new(vec![None]).unwrap(), &seed);
        let a = Forest::new(vec![None, Some(0), Some(0), Some(1)]).unwrap();
        let b = Forest::new(vec![None, Some(0), Some(0), Some(2)]).unwrap();
        let (sa, sb) = (compute_sigs(&a, &seed), compute_sigs(&b, &seed));
        assert_eq!(sa[0], sb[0]);
        assert_eq!(sa[3], single[0]);
        assert_eq!(edge_multisets(&Forest::new(vec![None]).unwrap(), &single), vec![vec![PARENT_MARKER | (single[0] & SIG_MASK)]]);
        let twins = Forest::new(vec![None, Some(0), Some(0)]).unwrap();
        let s = compute_sigs(&twins, &seed);
        let leaf = s[1] & SIG_MASK;
        assert_eq!(edge_multisets(&twins, &s)[0], {
            let mut m = vec![leaf, leaf, PARENT_MARKER | (s[0] & SIG_MASK)];
            m.sort_unstable();
            m
        });
    }

    #[test]
    fn exhaustive_soundness_up_to_seven_vertices() {
        let seed = Seed::from_u64(2);
        let counts: Vec<usize> = (1..=7).map(|n| all_forests(n).len()).collect();
        assert_eq!(counts, vec![1, 2, 4, 9, 20, 48, 115]);
        for n in 1..=7 {
            let forests = all_forests(n);
            let mut keys: Vec<Vec<u64>> = forests
                .iter()
                .map(|f| {
                    let mut s = compute_sigs(f, &seed);
                    s.sort_unstable();
                    s
                })
                .collect();
            keys.sort();
            keys.dedup();
            assert_eq!(keys.len(), forests.len(), "signature collision at n = {n}");
        }
    }

    #[test]
    fn reconstruct_round_trips() {
        let seed = Seed::from_u64(3);
        let p = path(4);
        let back = reconstruct(&edge_multisets(&p, &compute_sigs(&p, &seed))).unwrap();
        assert!(is_isomorphic(&back, &p));
        let star3 = Forest::new(vec![None, Some(0), Some(1), Some(0), Some(3), Some(0), Some(5)]).unwrap();
        let back = reconstruct(&edge_multisets(&star3, &compute_sigs(&star3, &seed))).unwrap();
        assert!(is_isomorphic(&back, &star3));
        for i in 0..200 {
            let f = random_forest(1 + i % 200, i % 11, &Seed::from_u64(i as u64));
            let back = reconstruct(&edge_multisets(&f, &compute_sigs(&f, &seed))).unwrap();
            assert!(is_isomorphic(&back, &f));
            assert!(encode(&back, &seed).same_as(&encode(&f, &seed)));
        }
    }

    #[test]
    fn reconstruct_rejects_inconsistent_groups() {
        let m = vec![vec![PARENT_MARKER | 5, 7], vec![PARENT_MARKER | 5], vec![PARENT_MARKER | 7]];
        assert!(matches!(reconstruct(&m), Err(Error::ReconstructionFailure(_))));
        let short = vec![vec![PARENT_MARKER | 5, 7, 7], vec![PARENT_MARKER | 7]];
        assert!(matches!(reconstruct(&short), Err(Error::ReconstructionFailure(_))));
    }

    #[test]
    fn edits_touch_at_most_sigma_signatures() {
        let seed = Seed::from_u64(4);
        for i in 0..30 {
            let f = random_forest(300, 6, &Seed::from_u64(i));
            let (g, edits) = random_edits(&f, 1, 6, &Seed::from_u64(i + 100));
            assert_eq!(edits.len(), 1);
            assert!(g.sigma() <= 6);
            let (sf, sg) = (compute_sigs(&f, &seed), compute_sigs(&g, &seed));
            let changed = sf.iter().zip(&sg).filter(|(a, b)| a != b).count();
            assert!(changed <= 6, "{changed}");
            let (ef, eg) = (edge_multisets(&f, &sf), edge_multisets(&g, &sg));
            let elements: usize = ef.iter().zip(&eg).map(|(a, b)| crate::graph_recon::multiset_diff(a, b)).sum();
            let top = match edits[0] {
                Edit::Cut { child } => f.parent(child).unwrap(),
                Edit::Link { parent, .. } => parent,
            };
            assert!(elements <= 4 * f.depths()[top].max(g.depths()[top]) + 3, "{elements}");
        }
    }

    #[test]
    fn identical_forests_skip_reconstruction() {
        let f = random_forest(100, 5, &Seed::from_u64(5));
        let cfg = ForestConfig { d: 2, sigma: 5 };
        let (out, _) = reconcile(&cfg, &f, &f, &Seed::from_u64(6), Backend::InProc).unwrap();
        assert!(out.unchanged);
        assert_eq!(out.forest, f);
    }

    #[test]
    fn edited_forests_reconcile() {
        let mut ok = 0;
        for i in 0..20 {
            let a = random_forest(500, 8, &Seed::from_u64(i));
            let (b, _) = random_edits(&a, 4, 8, &Seed::from_u64(i + 50));
            let mut perm: Vec<usize> = (0..500).collect();
            perm.shuffle(&mut Seed::from_u64(i).rng());
            let b = b.permute(&perm);
            let cfg = ForestConfig { d: 4, sigma: 8 };
            if let Ok((out, _)) = reconcile(&cfg, &a, &b, &Seed::from_u64(i + 7), Backend::InProc) {
                assert!(is_isomorphic(&out.forest, &a));
                ok += 1;
            }
        }
        assert!(ok >= 18, "{ok}/20");
    }
}
