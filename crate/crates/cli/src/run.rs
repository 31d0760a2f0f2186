//! Protocol dispatch shared by `reconcile` and `bench`, plus independent
//! verification of what Bob ends up with.

use clap::ValueEnum;
use serde::Serialize;
use sosync::forest_recon::{self, ForestConfig, ForestOutcome};
use sosync::graph_recon::{self, oracle, Graph, GraphConfig, GraphOutcome, Scheme};
use sosync::set_recon::{self, ReconConfig, SetOutcome};
use sosync::sos_recon::{self, SosConfig, SosOutcome, SosParams, SosProtocol};
use sosync::transport::{run_session, Backend, Endpoint, ProtocolId, Transcript};
use sosync::{Error, Seed};

use crate::files::{graph_class_digest, graph_digest, Instance, Kind, SetFile, Truth};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Protocol {
    /// Known-d IBLT set reconciliation.
    SetIblt,
    /// Estimator-sized IBLT set reconciliation.
    SetUnknown,
    /// Characteristic-polynomial set reconciliation.
    SetPoly,
    Naive,
    Iblt2,
    Cascade,
    Multiround,
    Oracle,
    Degorder,
    Degnbr,
    Forest,
}

impl Protocol {
    pub fn kind(self) -> Kind {
        match self {
            Protocol::SetIblt | Protocol::SetUnknown | Protocol::SetPoly => Kind::Set,
            Protocol::Naive | Protocol::Iblt2 | Protocol::Cascade | Protocol::Multiround => Kind::Sos,
            Protocol::Oracle | Protocol::Degorder | Protocol::Degnbr => Kind::Graph,
            Protocol::Forest => Kind::Forest,
        }
    }

    pub fn name(self) -> String {
        self.to_possible_value().expect("no skipped variants").get_name().to_string()
    }

    pub fn id(self) -> ProtocolId {
        match (self.sos(), self.scheme()) {
            (Some(p), _) => p.id(),
            (_, Some(s)) => s.id(),
            _ if self == Protocol::Forest => ProtocolId::FOREST,
            _ => ProtocolId::SET_RECON,
        }
    }

    fn sos(self) -> Option<SosProtocol> {
        match self {
            Protocol::Naive => Some(SosProtocol::Naive),
            Protocol::Iblt2 => Some(SosProtocol::Iblt2),
            Protocol::Cascade => Some(SosProtocol::Cascade),
            Protocol::Multiround => Some(SosProtocol::Multiround),
            _ => None,
        }
    }

    fn scheme(self) -> Option<Scheme> {
        match self {
            Protocol::Oracle => Some(Scheme::Oracle),
            Protocol::Degorder => Some(Scheme::DegOrder),
            Protocol::Degnbr => Some(Scheme::DegNbr),
            _ => None,
        }
    }

    /// Whether the protocol cannot run without a difference bound.
    pub fn needs_d(self) -> bool {
        matches!(self.kind(), Kind::Graph | Kind::Forest) || matches!(self, Protocol::SetIblt | Protocol::SetPoly)
    }
}

/// Everything both parties must agree on before a session.
#[derive(Clone, Debug, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct Plan {
    pub protocol: Protocol,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub params: Option<SosParams>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub universe: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub h: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma: Option<usize>,
    /// Failure target; each protocol family has its own default.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    /// Known-d protocols run with bounds 1, 2, 4, ... when no bound is set.
    pub doubling: bool,
}

impl Plan {
    fn d(&self) -> usize {
        self.d.expect("plans are validated before running")
    }

    fn sos_config(&self) -> SosConfig {
        let cfg = SosConfig::new(self.params.expect("sos plans carry params"), self.d);
        SosConfig { delta: self.delta.unwrap_or(cfg.delta), ..cfg }
    }

    fn set_config(&self) -> ReconConfig {
        let cfg = match self.protocol {
            Protocol::SetIblt => ReconConfig::known(self.d()),
            Protocol::SetPoly => ReconConfig::poly(self.d(), self.universe.unwrap_or(sosync::iblt::KEY_LIMIT)),
            _ => ReconConfig::unknown(),
        };
        ReconConfig { delta: self.delta.unwrap_or(cfg.delta), ..cfg }
    }

    fn graph_config(&self) -> GraphConfig {
        let cfg = GraphConfig::new(self.d(), self.p.unwrap_or(0.0));
        GraphConfig { h: self.h, delta: self.delta.unwrap_or(cfg.delta), ..cfg }
    }

    fn forest_config(&self) -> ForestConfig {
        ForestConfig { d: self.d(), sigma: self.sigma.unwrap_or(0) }
    }
}

/// What Bob ends up with.
#[derive(Clone, Debug)]
pub enum Recovered {
    Set(SetOutcome),
    Sos(SosOutcome),
    Graph(GraphOutcome),
    Forest(ForestOutcome),
}

pub fn alice_side(plan: &Plan, inst: &Instance, ep: &mut Endpoint, seed: &Seed) -> sosync::Result<()> {
    match inst {
        Instance::Set(s) => set_recon::alice(ep, &plan.set_config(), &s.items, seed),
        Instance::Sos(_, parent) => {
            let protocol = plan.protocol.sos().ok_or_else(|| mismatch(plan))?;
            let cfg = plan.sos_config();
            let mut server = sos_recon::alice_server(protocol, &cfg, parent, seed);
            let first = if plan.doubling { Some(1) } else { plan.d };
            sos_recon::serve(ep, server.as_mut(), first, plan.doubling)
        }
        Instance::Graph(g) => graph_recon::alice(ep, plan.protocol.scheme().ok_or_else(|| mismatch(plan))?, &plan.graph_config(), g, seed),
        Instance::Forest(f) => forest_recon::alice(ep, &plan.forest_config(), f, seed),
    }
}

pub fn bob_side(plan: &Plan, inst: &Instance, ep: &mut Endpoint, seed: &Seed) -> sosync::Result<Recovered> {
    Ok(match inst {
        Instance::Set(s) => Recovered::Set(set_recon::bob(ep, &plan.set_config(), &s.items, seed)?),
        Instance::Sos(_, parent) => {
            let protocol = plan.protocol.sos().ok_or_else(|| mismatch(plan))?;
            let cfg = plan.sos_config();
            Recovered::Sos(if plan.doubling {
                sos_recon::bob_doubling(protocol, ep, &cfg, parent, seed)?
            } else {
                sos_recon::bob_attempt(protocol, ep, &cfg, parent, seed, plan.d)?
            })
        }
        Instance::Graph(g) => {
            let scheme = plan.protocol.scheme().ok_or_else(|| mismatch(plan))?;
            Recovered::Graph(graph_recon::bob(ep, scheme, &plan.graph_config(), g, seed)?)
        }
        Instance::Forest(f) => Recovered::Forest(forest_recon::bob(ep, &plan.forest_config(), f, seed)?),
    })
}

fn mismatch(plan: &Plan) -> Error {
    Error::InvalidParams(format!("protocol {} does not take this instance kind", plan.protocol.name()))
}

/// Runs both parties in this process.
pub fn execute(plan: &Plan, alice: &Instance, bob: &Instance, seed: &Seed, backend: Backend) -> sosync::Result<(Recovered, Transcript)> {
    run_session(backend, plan.protocol.id(), |ep| alice_side(plan, alice, ep, seed), |ep| bob_side(plan, bob, ep, seed))
}

/// Checks Bob's result against Alice's own instance.
pub fn verify_direct(plan: &Plan, alice: &Instance, got: &Recovered) -> bool {
    match (alice, got) {
        (Instance::Set(a), Recovered::Set(out)) => out.recovered == a.items,
        (Instance::Sos(_, a), Recovered::Sos(out)) => out.recovered.same_as(a),
        (Instance::Graph(a), Recovered::Graph(out)) => match plan.protocol.scheme() {
            Some(Scheme::Oracle) => a.n() <= oracle::MAX_N && oracle::is_isomorphic(a, &out.graph),
            Some(scheme) => graph_recon::alice_labels_for(scheme, &plan.graph_config(), a).is_some_and(|l| a.permute(&l) == out.graph),
            None => false,
        },
        (Instance::Forest(a), Recovered::Forest(out)) => forest_recon::is_isomorphic(a, &out.forest),
        _ => false,
    }
}

/// Checks Bob's result against the sidecar alone.
pub fn verify_truth(plan: &Plan, truth: &Truth, got: &Recovered) -> bool {
    let digest = match got {
        Recovered::Set(out) => Instance::Set(SetFile { universe: 0, items: out.recovered.clone() }).digest(),
        Recovered::Sos(out) => Instance::Sos(plan.params.unwrap_or(SosParams { s: 0, h: 0, u: 0 }), out.recovered.clone()).digest(),
        Recovered::Forest(out) => Instance::Forest(out.forest.clone()).digest(),
        Recovered::Graph(out) if plan.protocol == Protocol::Oracle => {
            return truth.alice_class.is_some() && graph_class_digest(&out.graph) == truth.alice_class;
        }
        Recovered::Graph(out) => {
            let Some(corr) = &truth.correspondence else { return false };
            match in_alice_labels(out, corr) {
                Some(g) => format!("{:016x}", graph_digest(&g)),
                None => return false,
            }
        }
    };
    digest == truth.alice_digest
}

/// Moves Bob's copy of Alice's graph from shared labels to Alice's own,
/// through the hidden correspondence.
fn in_alice_labels(out: &GraphOutcome, corr: &[usize]) -> Option<Graph> {
    let n = out.graph.n();
    if out.labels.len() != n || corr.len() != n {
        return None;
    }
    let mut to_alice = vec![usize::MAX; n];
    for (v, &label) in out.labels.iter().enumerate() {
        *to_alice.get_mut(label)? = corr[v];
    }
    let mut seen = vec![false; n];
    for &w in &to_alice {
        if std::mem::replace(seen.get_mut(w)?, true) {
            return None;
        }
    }
    Some(out.graph.permute(&to_alice))
}
