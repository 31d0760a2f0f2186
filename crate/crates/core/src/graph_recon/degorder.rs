//! Degree-ordering signatures.
//!
//! The `h` highest-degree vertices are labeled by rank. Every other vertex
//! gets the set of top ranks it is adjacent to; these signatures are
//! reconciled as a set of sets, and Bob relabels each of his vertices
//! after the unique Alice signature within Hamming distance `d`.

use std::collections::HashMap;

use super::{degree_order, Graph};
use crate::error::{Error, Result};
use crate::sos_recon::{sym_diff, SetOfSets, SosParams};

/// Top ranks and per-vertex signatures of one graph.
pub struct Signatures {
    pub top: Vec<usize>,
    /// `(vertex, sorted top ranks)` for every vertex outside the top.
    pub rest: Vec<(usize, Vec<u64>)>,
}

pub fn signatures(g: &Graph, h: usize) -> Signatures {
    let order = degree_order(g);
    let h = h.min(g.n());
    let mut rank = vec![None; g.n()];
    order[..h].iter().enumerate().for_each(|(i, &v)| rank[v] = Some(i as u64));
    let rest = order[h..]
        .iter()
        .map(|&v| {
            let mut sig: Vec<u64> = g.neighbors(v).iter().filter_map(|&w| rank[w as usize]).collect();
            sig.sort_unstable();
            (v, sig)
        })
        .collect();
    Signatures { top: order[..h].to_vec(), rest }
}

pub fn params(n: usize, h: usize) -> SosParams {
    SosParams { s: n.saturating_sub(h), h: h.max(1), u: h.max(1) as u64 }
}

pub fn parent(sigs: &Signatures) -> SetOfSets {
    SetOfSets::new(sigs.rest.iter().map(|(_, s)| s.clone()).collect())
}

/// Alice's labeling: top vertices by rank, the rest by signature order.
pub fn alice_labels(g: &Graph, h: usize) -> Vec<usize> {
    let sigs = signatures(g, h);
    let mut labels = vec![0; g.n()];
    sigs.top.iter().enumerate().for_each(|(r, &v)| labels[v] = r);
    let mut rest = sigs.rest;
    rest.sort_by(|a, b| a.1.cmp(&b.1).then(a.0.cmp(&b.0)));
    let h = sigs.top.len();
    rest.iter().enumerate().for_each(|(i, (v, _))| labels[*v] = h + i);
    labels
}

/// Bob's labeling from Alice's recovered signatures.
pub fn bob_labels(g: &Graph, h: usize, d: usize, alice: &SetOfSets) -> Result<Vec<usize>> {
    let sigs = signatures(g, h);
    let h = sigs.top.len();
    let mut labels = vec![usize::MAX; g.n()];
    sigs.top.iter().enumerate().for_each(|(r, &v)| labels[v] = r);
    let theirs = alice.canonical();
    if theirs.len() != sigs.rest.len() {
        return Err(Error::ReconstructionFailure(format!("{} signatures against {} vertices", theirs.len(), sigs.rest.len())));
    }
    let mut by_sig: HashMap<&[u64], Vec<usize>> = HashMap::new();
    for (i, s) in theirs.iter().enumerate().rev() {
        by_sig.entry(s.as_slice()).or_default().push(i);
    }
    let mut taken = vec![false; theirs.len()];
    let mut pending = Vec::new();
    for (v, s) in &sigs.rest {
        match by_sig.get_mut(s.as_slice()).and_then(Vec::pop) {
            Some(i) => {
                taken[i] = true;
                labels[*v] = h + i;
            }
            None => pending.push((*v, s)),
        }
    }
    let free: Vec<usize> = (0..theirs.len()).filter(|&i| !taken[i]).collect();
    for (v, s) in pending {
        let mut near = free.iter().copied().filter(|&i| sym_diff(s, &theirs[i]) <= d);
        let i = near.next().ok_or(Error::NoMatch)?;
        if near.next().is_some() || taken[i] {
            return Err(Error::AmbiguousMatch);
        }
        taken[i] = true;
        labels[v] = h + i;
    }
    Ok(labels)
}

#[cfg(test)]
mod tests {
    use super::super::*;
    use super::*;
    use crate::rng_hash::Seed;
    use crate::transport::Backend;

    #[test]
    fn signatures_follow_the_degree_order() {
        // Degrees: 0 -> 3, 1 -> 2, others 1 or 2.
        let g = Graph::from_edges(5, [(0, 1), (0, 2), (0, 3), (1, 4), (3, 4)]).unwrap();
        let s = signatures(&g, 2);
        assert_eq!(s.top, vec![0, 1]);
        assert_eq!(s.rest, vec![(3, vec![0]), (4, vec![1]), (2, vec![0])]);
        let labels = alice_labels(&g, 2);
        assert_eq!(labels[0], 0);
        assert_eq!(labels[1], 1);
        assert_eq!(labels[4], 4);
    }

    #[test]
    fn each_edit_changes_at_most_one_signature_bit() {
        for seed in 0..10 {
            let g = planted_separated(300, 32, 6, 0.02, &Seed::from_u64(seed));
            let pair = perturb(&g, 4, &Seed::from_u64(seed + 1));
            let (sa, sb) = (signatures(&pair.alice, 32), signatures(&pair.bob, 32));
            let mut a: Vec<(usize, Vec<u64>)> = sa.rest.into_iter().map(|(v, s)| (pair.alice_of.iter().position(|&x| x == v).unwrap(), s)).collect();
            let mut b: Vec<(usize, Vec<u64>)> = sb.rest.into_iter().map(|(v, s)| (pair.bob_of.iter().position(|&x| x == v).unwrap(), s)).collect();
            a.sort();
            b.sort();
            let changed: usize = a.iter().zip(&b).map(|(x, y)| sym_diff(&x.1, &y.1)).sum();
            assert!(changed <= 4, "{changed}");
        }
    }

    #[test]
    fn identical_graphs_have_no_differences() {
        let g = planted_separated(200, 24, 5, 0.05, &Seed::from_u64(4));
        let cfg = GraphConfig { h: Some(24), ..GraphConfig::new(2, 0.3) };
        let (out, tr) = reconcile(Scheme::DegOrder, &cfg, &g, &g, &Seed::from_u64(5), Backend::InProc).unwrap();
        assert_eq!(out.graph, g.permute(&alice_labels_for(Scheme::DegOrder, &cfg, &g).unwrap()));
        assert_eq!(tr.frames_of(crate::transport::MsgType::ENC_REQUEST).count(), 0);
    }

    #[test]
    fn planted_separated_graphs_reconcile() {
        let (mut ok, mut tried) = (0, 0);
        for seed in 0..20 {
            let base = planted_separated(600, 64, 3, 0.02, &Seed::from_u64(seed));
            if !check_separation(&base, 64, 3, 5).separated {
                continue;
            }
            tried += 1;
            let pair = perturb(&base, 2, &Seed::from_u64(seed + 100));
            let cfg = GraphConfig { h: Some(64), ..GraphConfig::new(2, 0.3) };
            if let Ok((out, _)) = reconcile(Scheme::DegOrder, &cfg, &pair.alice, &pair.bob, &Seed::from_u64(seed), Backend::InProc) {
                assert_eq!(out.graph, pair.alice.permute(&alice_labels_for(Scheme::DegOrder, &cfg, &pair.alice).unwrap()));
                ok += 1;
            }
        }
        assert!(tried >= 15 && ok * 10 >= tried * 9, "{ok}/{tried}");
    }

    #[test]
    fn unseparated_graphs_fail_loudly() {
        let pair = generate_perturbed_pair(300, 0.3, 4, &Seed::from_u64(6));
        let cfg = GraphConfig { h: Some(1), ..GraphConfig::new(4, 0.3) };
        let err = reconcile(Scheme::DegOrder, &cfg, &pair.alice, &pair.bob, &Seed::from_u64(7), Backend::InProc).unwrap_err();
        assert!(
            matches!(err, Error::VerifyMismatch { .. } | Error::DecodeFailed { .. } | Error::ResidualChildren | Error::AmbiguousMatch | Error::NoMatch),
            "{err:?}"
        );
    }

    #[test]
    fn ambiguous_signatures_are_reported() {
        let alice = SetOfSets::new(vec![vec![0, 2], vec![0, 3]]);
        // Vertex 2 carries signature {0, 1}, two bits from both of Alice's.
        let g = Graph::from_edges(4, [(0, 1), (0, 2), (0, 3), (1, 2)]).unwrap();
        let s = signatures(&g, 2);
        assert_eq!(s.rest.len(), 2);
        assert!(matches!(bob_labels(&g, 2, 2, &alice), Err(Error::AmbiguousMatch)));
        assert!(matches!(bob_labels(&g, 2, 1, &alice), Err(Error::NoMatch)));
    }
}
