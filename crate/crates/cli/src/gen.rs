//! Seeded instance pairs with their ground truth.

use anyhow::{bail, Result};
use rand::seq::SliceRandom;
use sosync::forest_recon::{random_edits, random_forest};
use sosync::graph_recon::{gnp, perturb, planted_separated};
use sosync::set_recon::perturbed_sets;
use sosync::sos_recon::{min_matching_distance, replacement_instance, spread_instance, SosParams, ORACLE_MAX_S};
use sosync::Seed;

use crate::files::{graph_class_digest, Instance, Kind, SetFile, Truth};

pub struct Generated {
    pub alice: Instance,
    pub bob: Instance,
    pub truth: Truth,
}

fn truth(kind: Kind, d: usize, alice: &Instance, seed: &Seed) -> Truth {
    Truth {
        kind,
        d,
        d_exact: true,
        alice_digest: alice.digest(),
        alice_class: None,
        correspondence: None,
        p: None,
        complemented: false,
        sigma: None,
        params: None,
        seed: seed.to_hex(),
    }
}

pub fn set(n: usize, d: usize, universe: u64, seed: &Seed) -> Result<Generated> {
    let (a, b) = perturbed_sets(n, d, universe, seed)?;
    let alice = Instance::Set(SetFile { universe, items: a });
    let bob = Instance::Set(SetFile { universe, items: b });
    let truth = truth(Kind::Set, d, &alice, seed);
    Ok(Generated { alice, bob, truth })
}

/// Spread perturbation by default; `replace` swaps whole children instead.
pub fn sos(params: SosParams, d: usize, replace: Option<usize>, seed: &Seed) -> Result<Generated> {
    if params.s == 0 || params.h == 0 || (params.h as u64) > params.u {
        bail!("need s >= 1 and 1 <= h <= u, got {params:?}");
    }
    let inst = match replace {
        Some(k) => replacement_instance(params, k.min(params.s), seed),
        None => spread_instance(params, d, seed),
    };
    let alice = Instance::Sos(params, inst.alice.clone());
    // An unperturbed pair is written byte for byte identical.
    let bob = Instance::Sos(params, if inst.d == 0 { inst.alice.clone() } else { inst.bob.clone() });
    let exact = params.s <= ORACLE_MAX_S;
    let d = if exact { min_matching_distance(&inst.alice, &inst.bob)? as usize } else { inst.d };
    let mut truth = truth(Kind::Sos, d, &alice, seed);
    truth.d_exact = exact;
    truth.params = Some(params);
    Ok(Generated { alice, bob, truth })
}

/// `G(n, p)` or, with `planted = (h, gap)`, a planted separated graph
/// whose remaining edges have probability `p`.
pub fn graph(n: usize, p: f64, d: usize, planted: Option<(usize, usize)>, seed: &Seed) -> Result<Generated> {
    if !(0.0..=1.0).contains(&p) || n < 2 {
        bail!("need n >= 2 and p in [0, 1]");
    }
    if d > n * (n - 1) / 2 {
        bail!("{d} edits exceed the {} vertex pairs", n * (n - 1) / 2);
    }
    let base = match planted {
        Some((h, _)) if h >= n => bail!("planted h must be below n"),
        Some((h, gap)) => planted_separated(n, h, gap, p, seed),
        None => gnp(n, p, seed),
    };
    let pair = perturb(&base, d, seed);
    let alice = Instance::Graph(pair.alice.clone());
    let bob = Instance::Graph(pair.bob.clone());
    let mut truth = truth(Kind::Graph, pair.toggles.0.len() + pair.toggles.1.len(), &alice, seed);
    truth.alice_class = graph_class_digest(&pair.alice);
    truth.correspondence = Some(pair.alice_for_bob());
    truth.p = Some(p);
    truth.complemented = p > 0.5;
    Ok(Generated { alice, bob, truth })
}

/// Random forest of depth at most `depth`; Bob's copy gets `d` edits and a
/// fresh labeling.
pub fn forest(n: usize, depth: usize, d: usize, seed: &Seed) -> Result<Generated> {
    if n < 2 && d > 0 {
        bail!("edits need at least two vertices");
    }
    let a = random_forest(n, depth, seed);
    let (edited, _) = random_edits(&a, d, depth, seed);
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut seed.derive("forest-relabel", 0).rng());
    let b = edited.permute(&perm);
    let mut correspondence = vec![0; n];
    perm.iter().enumerate().for_each(|(v, &w)| correspondence[w] = v);
    let alice = Instance::Forest(a);
    let bob = Instance::Forest(b);
    let mut truth = truth(Kind::Forest, d, &alice, seed);
    truth.correspondence = Some(correspondence);
    truth.sigma = Some(depth);
    Ok(Generated { alice, bob, truth })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_sos_at_zero_d() {
        let g = sos(SosParams { s: 20, h: 10, u: 1000 }, 0, None, &Seed::from_u64(1)).unwrap();
        assert_eq!(g.alice.digest(), g.bob.digest());
        assert_eq!(g.truth.d, 0);
    }

    #[test]
    fn sidecar_d_is_the_matching_distance() {
        for i in 0..5 {
            let g = sos(SosParams { s: 30, h: 16, u: 256 }, 12, None, &Seed::from_u64(i)).unwrap();
            let (Instance::Sos(_, a), Instance::Sos(_, b)) = (&g.alice, &g.bob) else { panic!() };
            assert!(g.truth.d_exact);
            assert_eq!(g.truth.d as u64, min_matching_distance(a, b).unwrap());
            assert!(g.truth.d <= 12);
        }
    }

    #[test]
    fn dense_graphs_carry_the_complement_note() {
        let g = graph(30, 0.7, 2, None, &Seed::from_u64(2)).unwrap();
        assert!(g.truth.complemented);
        assert_eq!(g.truth.d, 2);
        assert!(!graph(30, 0.3, 2, None, &Seed::from_u64(2)).unwrap().truth.complemented);
    }

    #[test]
    fn forest_correspondence_maps_bob_to_alice() {
        let g = forest(50, 4, 0, &Seed::from_u64(3)).unwrap();
        let (Instance::Forest(a), Instance::Forest(b)) = (&g.alice, &g.bob) else { panic!() };
        let corr = g.truth.correspondence.unwrap();
        for v in 0..50 {
            assert_eq!(b.parent(v).map(|p| corr[p]), a.parent(corr[v]));
        }
    }
}
