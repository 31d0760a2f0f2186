//! Degree-neighborhood signatures.
//!
//! Each vertex is described by the multiset `D_v` of its neighbors'
//! degrees that are at most `m`. The multisets, pair-encoded as
//! `(degree, multiplicity)` words, are reconciled as a set of sets; Bob
//! then gives each of his vertices the label of the closest Alice
//! multiset.

use std::collections::HashMap;

use super::{degree_neighborhood, multiset_diff, Graph, PerturbedPair};
use crate::error::{Error, Result};
use crate::set_recon::{decode_counts, encode_counts, MULT_BITS};
use crate::sos_recon::{SetOfSets, SosParams};

/// Degree threshold `floor(p n)`.
pub fn threshold(n: usize, p: f64) -> usize {
    (p * n as f64).floor() as usize
}

/// Pair-encoded `D_v` of every vertex.
pub fn neighborhoods(g: &Graph, m: usize) -> Vec<Vec<u64>> {
    (0..g.n())
        .map(|v| {
            let degs: Vec<u64> = degree_neighborhood(g, v, m).into_iter().map(|x| x as u64).collect();
            encode_counts(&degs).expect("degrees fit the pair encoding")
        })
        .collect()
}

pub fn params(n: usize, m: usize) -> SosParams {
    SosParams { s: n, h: m + 1, u: ((m + 1) as u64) << MULT_BITS }
}

/// Matching-distance bound handed to the cascade. A toggle moves two
/// degrees; each of the at most `m + 1` neighbors of an endpoint whose
/// degree stays within `m` swaps one pair-encoded entry (four words), and
/// the endpoints themselves gain or lose one entry.
pub fn budget(d: usize, m: usize) -> usize {
    d.max(1) * (8 * (m + 1) + 4)
}

/// Alice's labeling: vertices in order of their encoded multisets.
pub fn alice_labels(g: &Graph, m: usize) -> Vec<usize> {
    let ds = neighborhoods(g, m);
    let mut order: Vec<usize> = (0..g.n()).collect();
    order.sort_by(|&a, &b| ds[a].cmp(&ds[b]).then(a.cmp(&b)));
    let mut labels = vec![0; g.n()];
    order.into_iter().enumerate().for_each(|(i, v)| labels[v] = i);
    labels
}

/// Bob's labeling: exact matches first, then each remaining vertex to the
/// unique closest remaining Alice multiset.
pub fn bob_labels(g: &Graph, m: usize, alice: &SetOfSets) -> Result<Vec<usize>> {
    let mine = neighborhoods(g, m);
    let theirs = alice.canonical();
    if theirs.len() != mine.len() {
        return Err(Error::ReconstructionFailure(format!("{} multisets against {} vertices", theirs.len(), mine.len())));
    }
    let mut by_sig: HashMap<&[u64], Vec<usize>> = HashMap::new();
    for (i, s) in theirs.iter().enumerate().rev() {
        by_sig.entry(s.as_slice()).or_default().push(i);
    }
    let mut labels = vec![usize::MAX; g.n()];
    let mut taken = vec![false; theirs.len()];
    let mut pending = Vec::new();
    for (v, s) in mine.iter().enumerate() {
        match by_sig.get_mut(s.as_slice()).and_then(Vec::pop) {
            Some(i) => {
                taken[i] = true;
                labels[v] = i;
            }
            None => pending.push(v),
        }
    }
    let free: Vec<(usize, Vec<u64>)> = (0..theirs.len()).filter(|&i| !taken[i]).map(|i| (i, decode_counts(&theirs[i]))).collect();
    for v in pending {
        let ours = decode_counts(&mine[v]);
        let mut best: Option<(usize, usize)> = None;
        let mut tied = false;
        for (i, t) in &free {
            let diff = multiset_diff(&ours, t);
            match best {
                Some((b, _)) if diff > b => {}
                Some((b, _)) if diff == b => tied = true,
                _ => {
                    best = Some((diff, *i));
                    tied = false;
                }
            }
        }
        let (_, i) = best.ok_or(Error::NoMatch)?;
        if tied || taken[i] {
            return Err(Error::AmbiguousMatch);
        }
        taken[i] = true;
        labels[v] = i;
    }
    Ok(labels)
}

/// `|D_{v_A} xor D_{v_B}|` for every base vertex of a perturbed pair.
pub fn conforming_diffs(pair: &PerturbedPair, m: usize) -> Vec<usize> {
    (0..pair.base.n())
        .map(|w| {
            let a = degree_neighborhood(&pair.alice, pair.alice_of[w], m);
            let b = degree_neighborhood(&pair.bob, pair.bob_of[w], m);
            multiset_diff(&a, &b)
        })
        .collect()
}
