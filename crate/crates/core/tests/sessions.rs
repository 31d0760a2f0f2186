//! Whole sessions across module boundaries and over every link type.

use std::net::TcpListener;

use proptest::prelude::*;
use sosync::forest_recon::{self, random_edits, random_forest, ForestConfig};
use sosync::graph_recon::{self, alice_labels_for, gnp, perturb, GraphConfig, Scheme};
use sosync::set_recon::{self, perturbed_sets, ReconConfig};
use sosync::sos_recon::{self, random_parent, spread_instance, SosConfig, SosParams, SosProtocol};
use sosync::transport::{run_session_over, Backend, ChannelLink, Endpoint, ProtocolId, Role, SocketLink};
use sosync::{Error, Seed};

#[test]
fn set_sessions_survive_fragmented_links() {
    let seed = Seed::from_u64(1);
    let (a, b) = perturbed_sets(3000, 20, 1 << 40, &seed).unwrap();
    for cfg in [ReconConfig::known(20), ReconConfig::unknown(), ReconConfig::poly(20, 1 << 40)] {
        let (x, y) = ChannelLink::fragmented_pair(&seed);
        let (out, tr) = run_session_over(
            Box::new(x),
            Box::new(y),
            ProtocolId::SET_RECON,
            |ep| set_recon::alice(ep, &cfg, &a, &seed),
            |ep| set_recon::bob(ep, &cfg, &b, &seed),
        )
        .unwrap();
        assert_eq!(out.recovered, a);
        let (_, whole) = set_recon::reconcile(&cfg, &a, &b, &seed, Backend::InProc).unwrap();
        assert_eq!(tr.payloads(), whole.payloads());
    }
}

#[test]
fn parties_on_separate_tcp_endpoints() {
    let seed = Seed::from_u64(2);
    let params = SosParams { s: 60, h: 30, u: 1 << 20 };
    let inst = spread_instance(params, 12, &seed);
    let cfg = SosConfig::new(params, Some(12));
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let got = std::thread::scope(|scope| {
        scope.spawn(|| {
            let mut ep = Endpoint::new(Role::Alice, SosProtocol::Cascade.id(), Box::new(SocketLink::accept(&listener).unwrap()));
            sos_recon::serve(&mut ep, sos_recon::alice_server(SosProtocol::Cascade, &cfg, &inst.alice, &seed).as_mut(), cfg.d, false).unwrap();
        });
        let mut ep = Endpoint::new(Role::Bob, SosProtocol::Cascade.id(), Box::new(SocketLink::connect(addr).unwrap()));
        sos_recon::bob_attempt(SosProtocol::Cascade, &mut ep, &cfg, &inst.bob, &seed, cfg.d).unwrap()
    });
    assert!(got.recovered.same_as(&inst.alice));
}

#[test]
fn doubling_finds_an_unstated_bound_over_sockets() {
    let params = SosParams { s: 120, h: 16, u: 1 << 24 };
    let seed = Seed::from_u64(3);
    let inst = spread_instance(params, 120, &seed);
    for protocol in [SosProtocol::Iblt2, SosProtocol::Cascade] {
        let (out, tr) = sos_recon::with_doubling(protocol, &SosConfig::new(params, None), &inst.alice, &inst.bob, &seed, Backend::Socket).unwrap();
        assert!(out.recovered.same_as(&inst.alice), "{}", protocol.name());
        assert!(out.attempts > 1);
        assert!(tr.summary().rounds_actual > 2);
    }
}

#[test]
fn graph_and_forest_sessions_over_sockets() {
    let seed = Seed::from_u64(4);
    let pair = perturb(&gnp(2000, 0.05, &seed), 2, &seed);
    let cfg = GraphConfig::new(2, 0.05);
    let (out, _) = graph_recon::reconcile(Scheme::DegNbr, &cfg, &pair.alice, &pair.bob, &seed, Backend::Socket).unwrap();
    assert_eq!(out.graph, pair.alice.permute(&alice_labels_for(Scheme::DegNbr, &cfg, &pair.alice).unwrap()));

    let a = random_forest(500, 6, &seed);
    let (b, _) = random_edits(&a, 3, 6, &seed);
    let (out, _) = forest_recon::reconcile(&ForestConfig { d: 3, sigma: 6 }, &a, &b, &seed, Backend::Socket).unwrap();
    assert!(forest_recon::is_isomorphic(&out.forest, &a));
}

#[test]
fn mismatched_inputs_are_rejected_before_any_traffic() {
    let seed = Seed::from_u64(5);
    let err = graph_recon::reconcile(Scheme::DegNbr, &GraphConfig::new(1, 0.1), &gnp(10, 0.1, &seed), &gnp(11, 0.1, &seed), &seed, Backend::InProc);
    assert!(matches!(err, Err(Error::InvalidParams(_))));
    let params = SosParams { s: 10, h: 8, u: 100 };
    let parent = random_parent(&params, &seed);
    let err = sos_recon::reconcile(SosProtocol::Cascade, &SosConfig::new(params, None), &parent, &parent, &seed, Backend::InProc);
    assert!(matches!(err, Err(Error::InvalidParams(_))));
}

#[test]
fn transcripts_export_one_line_per_frame_and_a_summary() {
    let seed = Seed::from_u64(6);
    let (a, b) = perturbed_sets(500, 6, 1 << 30, &seed).unwrap();
    let (_, tr) = set_recon::reconcile_known(&a, &b, 6, &seed).unwrap();
    let text = tr.to_json_lines();
    assert_eq!(text.lines().count(), tr.records.len() + 1);
    for line in text.lines() {
        serde_json::from_str::<serde_json::Value>(line).unwrap();
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn known_d_round_trips(n in 0usize..400, d in 0usize..40, raw in any::<u64>()) {
        let seed = Seed::from_u64(raw);
        let (a, b) = perturbed_sets(n, d, 1 << 40, &seed).unwrap();
        let (out, _) = set_recon::reconcile_known(&a, &b, d.max(1) * 2, &seed).unwrap();
        prop_assert_eq!(out.recovered, a);
    }
}
