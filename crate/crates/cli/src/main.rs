//! `sosync`: generate instances, run reconciliation sessions over either
//! backend, and sweep parameter grids.

mod bench;
mod files;
mod gen;
mod run;

use std::fs;
use std::io::{self, Write};
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::thread;
use std::time::{Duration, Instant};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use sosync::diff_estimator::{estimate_with_confidence, runs_for, DiffSketch, Side, SketchShape};
use sosync::graph_recon::{check_disjointness, check_separation, degnbr, degree_order_h};
use sosync::sos_recon::SosParams;
use sosync::transport::{Backend, Endpoint, Role, SocketLink, Transcript};
use sosync::Seed;

use crate::bench::BenchSpec;
use crate::files::{parse_seed, Instance, Kind, Truth};
use crate::gen::Generated;
use crate::run::{Plan, Protocol, Recovered};

#[derive(Parser)]
#[command(name = "sosync", version, about = "Reconcile sets, sets of sets, random graphs and rooted forests")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Args)]
struct Global {
    /// Shared seed: 64 hex characters or a seed file.
    #[arg(long, global = true)]
    seed: Option<String>,
    /// Link between the two parties when both run in this process.
    #[arg(long, global = true, default_value = "inproc")]
    backend: Backend,
    /// Play Alice alone, serving one session on this address.
    #[arg(long, global = true, conflicts_with = "connect")]
    listen: Option<String>,
    /// Play Bob alone against an Alice listening on this address.
    #[arg(long, global = true)]
    connect: Option<String>,
    /// Output directory for `gen`, CSV path for `bench`, transcript path
    /// for reconciliation.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Report payload bytes and message counts without framing.
    #[arg(long, global = true)]
    paper_bits: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Write an A/B instance pair and its ground-truth sidecar.
    Gen {
        #[command(subcommand)]
        kind: GenKind,
    },
    /// Run one session and print a JSON report.
    Reconcile(ReconcileArgs),
    /// Estimate the difference between two set files.
    Estimate(EstimateArgs),
    /// Sweep a parameter grid; CSV rows plus per-cell medians.
    Bench(BenchArgs),
    /// Graph generation, property checks and reconciliation.
    Graph {
        #[command(subcommand)]
        cmd: GraphCmd,
    },
    /// Forest generation and reconciliation.
    Forest {
        #[command(subcommand)]
        cmd: ForestCmd,
    },
}

#[derive(Subcommand)]
enum GenKind {
    /// Two sets with an exact symmetric difference.
    Set(SetGen),
    /// Two parents of sets at a spread matching distance.
    Sos(SosGen),
    /// Two perturbed, relabeled copies of one random graph.
    Graph(GraphGen),
    /// A random forest and an edited, relabeled copy.
    Forest(ForestGen),
}

#[derive(Args)]
struct SetGen {
    #[arg(long)]
    n: usize,
    #[arg(long)]
    d: usize,
    #[arg(long, default_value_t = bench::SET_UNIVERSE)]
    universe: u64,
}

#[derive(Args)]
struct SosGen {
    #[arg(long)]
    s: usize,
    #[arg(long)]
    h: usize,
    #[arg(long)]
    u: u64,
    /// Element changes spread over children.
    #[arg(long, default_value_t = 0)]
    d: usize,
    /// Replace this many whole children instead.
    #[arg(long)]
    replace: Option<usize>,
}

#[derive(Args, Clone)]
struct GraphGen {
    #[arg(long)]
    n: usize,
    #[arg(long)]
    p: f64,
    /// Edge edits between the two sides, split evenly.
    #[arg(long)]
    d: usize,
    /// Plant a separated top of this many vertices.
    #[arg(long)]
    planted_h: Option<usize>,
    /// Degree gap between planted ranks.
    #[arg(long, default_value_t = 3)]
    gap: usize,
}

#[derive(Args, Clone)]
struct ForestGen {
    #[arg(long)]
    n: usize,
    #[arg(long)]
    depth: usize,
    #[arg(long)]
    d: usize,
}

#[derive(Args, Clone)]
struct SessionArgs {
    /// Alice's instance file.
    #[arg(long)]
    alice: Option<PathBuf>,
    /// Bob's instance file.
    #[arg(long)]
    bob: Option<PathBuf>,
    /// Ground-truth sidecar written by `gen`.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Difference bound; taken from the sidecar when absent.
    #[arg(long)]
    d: Option<usize>,
    /// Failure target passed to the protocol.
    #[arg(long)]
    delta: Option<f64>,
}

#[derive(Args)]
struct ReconcileArgs {
    #[arg(long)]
    protocol: Protocol,
    #[command(flatten)]
    session: SessionArgs,
    #[arg(long)]
    p: Option<f64>,
    #[arg(long)]
    h: Option<usize>,
    #[arg(long)]
    sigma: Option<usize>,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum Shape {
    Paper,
    Compact,
}

#[derive(Args)]
struct EstimateArgs {
    #[arg(long)]
    alice: PathBuf,
    #[arg(long)]
    bob: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    delta: f64,
    #[arg(long, value_enum, default_value = "paper")]
    shape: Shape,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    protocol: Protocol,
    #[arg(long, value_delimiter = ',')]
    s: Vec<usize>,
    #[arg(long, value_delimiter = ',')]
    h: Vec<usize>,
    #[arg(long, value_delimiter = ',')]
    u: Vec<u64>,
    #[arg(long, value_delimiter = ',')]
    n: Vec<usize>,
    #[arg(long, value_delimiter = ',')]
    d: Vec<usize>,
    #[arg(long, value_delimiter = ',')]
    p: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    sigma: Vec<usize>,
    #[arg(long, default_value_t = 1)]
    seeds: usize,
    /// Run known-d protocols without the cell's bound.
    #[arg(long)]
    hide_d: bool,
}

#[derive(Subcommand)]
enum GraphCmd {
    /// Same as `gen graph`.
    Gen(GraphGen),
    /// Check (h, a, b)-separation; `--d` sets a = d+1, b = 2d+1.
    CheckSep {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        h: Option<usize>,
        #[arg(long)]
        a: Option<usize>,
        #[arg(long)]
        b: Option<usize>,
        #[arg(long)]
        d: Option<usize>,
        /// Edge probability used to size `h` when it is not given.
        #[arg(long)]
        p: Option<f64>,
    },
    /// Check (m, k)-disjointness of degree neighborhoods.
    CheckDisjoint {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        m: Option<usize>,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        d: Option<usize>,
        /// Edge probability giving m = floor(pn) when `--m` is absent.
        #[arg(long)]
        p: Option<f64>,
    },
    /// Reconcile two graph files under one scheme.
    Reconcile {
        #[arg(long)]
        scheme: GraphScheme,
        #[command(flatten)]
        session: SessionArgs,
        #[arg(long)]
        p: Option<f64>,
        #[arg(long)]
        h: Option<usize>,
    },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum GraphScheme {
    Oracle,
    Degorder,
    Degnbr,
}

#[derive(Subcommand)]
enum ForestCmd {
    /// Same as `gen forest`.
    Gen(ForestGen),
    /// Reconcile two forest files.
    Reconcile {
        #[command(flatten)]
        session: SessionArgs,
        /// Depth bound; taken from the sidecar or the inputs when absent.
        #[arg(long)]
        sigma: Option<usize>,
    },
}

/// A mistake in the command line rather than in a run.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct Report {
    success: bool,
    /// `None` when this process cannot check the result (Alice alone).
    verified: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    stage: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
    role: &'static str,
    rounds: usize,
    #[serde(rename = "bytesAB")]
    bytes_ab: u64,
    #[serde(rename = "bytesBA")]
    bytes_ba: u64,
    payload_bits: u64,
    paper_bits: bool,
    wall_time: f64,
    protocol: String,
    backend: String,
    params: Plan,
    #[serde(skip_serializing_if = "Option::is_none")]
    true_d: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(code) => code,
        Err(e) if e.is::<Usage>() => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn dispatch(cli: &Cli) -> Result<ExitCode> {
    let g = &cli.global;
    let seed = match &g.seed {
        Some(s) => parse_seed(s).map_err(|e| usage(format!("{e:#}")))?,
        None => Seed::from_u64(0),
    };
    match &cli.cmd {
        Command::Gen { kind } => cmd_gen(kind, &seed, g),
        Command::Reconcile(a) => {
            let base =
                Plan { protocol: a.protocol, d: None, params: None, universe: None, p: a.p, h: a.h, sigma: a.sigma, delta: a.session.delta, doubling: false };
            cmd_reconcile(base, &a.session, &seed, g)
        }
        Command::Estimate(a) => cmd_estimate(a, &seed),
        Command::Bench(a) => cmd_bench(a, &seed, g),
        Command::Graph { cmd } => match cmd {
            GraphCmd::Gen(a) => cmd_gen(&GenKind::Graph(a.clone()), &seed, g),
            GraphCmd::CheckSep { graph, h, a, b, d, p } => {
                let gr = read_graph(graph)?;
                let h = match (h, p) {
                    (Some(h), _) => *h,
                    (None, Some(p)) => degree_order_h(gr.n(), *p, d.unwrap_or(1), 1.0),
                    (None, None) => return Err(usage("give --h or --p")),
                };
                let (a, b) = match (a, b, d) {
                    (Some(a), Some(b), _) => (*a, *b),
                    (_, _, Some(d)) => (d + 1, 2 * d + 1),
                    _ => return Err(usage("give --a and --b, or --d")),
                };
                print_json(&check_separation(&gr, h, a, b))?;
                Ok(ExitCode::SUCCESS)
            }
            GraphCmd::CheckDisjoint { graph, m, k, d, p } => {
                let gr = read_graph(graph)?;
                let m = match (m, p) {
                    (Some(m), _) => *m,
                    (None, Some(p)) => degnbr::threshold(gr.n(), *p),
                    (None, None) => return Err(usage("give --m or --p")),
                };
                let k = match (k, d) {
                    (Some(k), _) => *k,
                    (None, Some(d)) => 4 * d + 1,
                    (None, None) => return Err(usage("give --k or --d")),
                };
                print_json(&check_disjointness(&gr, m, k)?)?;
                Ok(ExitCode::SUCCESS)
            }
            GraphCmd::Reconcile { scheme, session, p, h } => {
                let protocol = match scheme {
                    GraphScheme::Oracle => Protocol::Oracle,
                    GraphScheme::Degorder => Protocol::Degorder,
                    GraphScheme::Degnbr => Protocol::Degnbr,
                };
                let base = Plan { protocol, d: None, params: None, universe: None, p: *p, h: *h, sigma: None, delta: session.delta, doubling: false };
                cmd_reconcile(base, session, &seed, g)
            }
        },
        Command::Forest { cmd } => match cmd {
            ForestCmd::Gen(a) => cmd_gen(&GenKind::Forest(a.clone()), &seed, g),
            ForestCmd::Reconcile { session, sigma } => {
                let base =
                    Plan { protocol: Protocol::Forest, d: None, params: None, universe: None, p: None, h: None, sigma: *sigma, delta: None, doubling: false };
                cmd_reconcile(base, session, &seed, g)
            }
        },
    }
}

fn print_json(value: &impl Serialize) -> Result<()> {
    let mut out = io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

fn read_graph(path: &Path) -> Result<sosync::graph_recon::Graph> {
    match Instance::read(Kind::Graph, path)? {
        Instance::Graph(g) => Ok(g),
        _ => unreachable!("graph files read as graphs"),
    }
}

fn cmd_gen(kind: &GenKind, seed: &Seed, g: &Global) -> Result<ExitCode> {
    let generated = match kind {
        GenKind::Set(a) => gen::set(a.n, a.d, a.universe, seed),
        GenKind::Sos(a) => gen::sos(SosParams { s: a.s, h: a.h, u: a.u }, a.d, a.replace, seed),
        GenKind::Graph(a) => gen::graph(a.n, a.p, a.d, a.planted_h.map(|h| (h, a.gap)), seed),
        GenKind::Forest(a) => gen::forest(a.n, a.depth, a.d, seed),
    }
    .map_err(|e| usage(format!("{e:#}")))?;
    let dir = g.out.clone().unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let Generated { alice, bob, truth } = generated;
    let ext = alice.kind().ext();
    alice.write(&dir.join(format!("a.{ext}")))?;
    bob.write(&dir.join(format!("b.{ext}")))?;
    truth.write(&dir.join("truth.json"))?;
    print_json(&serde_json::json!({
        "alice": dir.join(format!("a.{ext}")),
        "bob": dir.join(format!("b.{ext}")),
        "truth": dir.join("truth.json"),
        "d": truth.d,
    }))?;
    Ok(ExitCode::SUCCESS)
}

/// Fills in the plan from flags, the sidecar and the instances.
fn complete_plan(mut plan: Plan, args: &SessionArgs, truth: Option<&Truth>, insts: &[&Instance]) -> Result<Plan> {
    let kind = plan.protocol.kind();
    if let Some(inst) = insts.iter().find(|i| i.kind() != kind) {
        return Err(usage(format!("protocol {} takes {} instances, got {}", plan.protocol.name(), kind.ext(), inst.kind().ext())));
    }
    if let Some(t) = truth {
        if t.kind != kind {
            return Err(usage(format!("sidecar describes {} instances", t.kind.ext())));
        }
    }
    plan.d = args.d.or(truth.map(|t| t.d));
    match kind {
        Kind::Set => {
            let universes: Vec<u64> = insts.iter().map(|i| if let Instance::Set(s) = i { s.universe } else { 0 }).collect();
            if universes.windows(2).any(|w| w[0] != w[1]) {
                bail!("set files disagree on the universe");
            }
            plan.universe = universes.first().copied();
        }
        Kind::Sos => {
            let params: Vec<SosParams> = insts.iter().filter_map(|i| if let Instance::Sos(p, _) = i { Some(*p) } else { None }).collect();
            if params.windows(2).any(|w| w[0] != w[1]) {
                bail!("instance headers disagree: {:?} and {:?}", params[0], params[1]);
            }
            plan.params = params.first().copied();
            plan.doubling = plan.d.is_none() && matches!(plan.protocol, Protocol::Iblt2 | Protocol::Cascade);
        }
        Kind::Graph => {
            plan.p = plan.p.or(truth.and_then(|t| t.p));
            if plan.p.is_none() {
                return Err(usage("graph schemes need --p or a sidecar"));
            }
            let ns: Vec<usize> = insts.iter().filter_map(|i| if let Instance::Graph(g) = i { Some(g.n()) } else { None }).collect();
            if ns.windows(2).any(|w| w[0] != w[1]) {
                bail!("vertex counts differ: {} and {}", ns[0], ns[1]);
            }
        }
        Kind::Forest => {
            let depths = insts.iter().filter_map(|i| if let Instance::Forest(f) = i { Some(f.sigma()) } else { None });
            let ns: Vec<usize> = insts.iter().filter_map(|i| if let Instance::Forest(f) = i { Some(f.n()) } else { None }).collect();
            if ns.windows(2).any(|w| w[0] != w[1]) {
                bail!("vertex counts differ: {} and {}", ns[0], ns[1]);
            }
            plan.sigma = plan.sigma.or(truth.and_then(|t| t.sigma));
            if plan.sigma.is_none() {
                if insts.len() < 2 {
                    return Err(usage("a lone party needs --sigma or a sidecar"));
                }
                plan.sigma = depths.max();
            }
        }
    }
    if plan.d.is_none() && plan.protocol.needs_d() {
        return Err(usage(format!("protocol {} needs --d or a sidecar", plan.protocol.name())));
    }
    Ok(plan)
}

fn cmd_reconcile(base: Plan, args: &SessionArgs, seed: &Seed, g: &Global) -> Result<ExitCode> {
    let truth = args.truth.as_deref().map(Truth::read).transpose()?;
    let kind = base.protocol.kind();
    let load = |p: &Option<PathBuf>, side: &str| -> Result<Instance> {
        let path = p.as_ref().ok_or_else(|| usage(format!("--{side} is required here")))?;
        let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
        if ["set", "sos", "graph", "forest"].contains(&ext) && ext != kind.ext() {
            return Err(usage(format!("protocol {} takes .{} files, got {}", base.protocol.name(), kind.ext(), path.display())));
        }
        Instance::read(kind, path)
    };
    let backend_name = |b: Backend| format!("{b:?}").to_lowercase();
    let start = Instant::now();
    if let Some(addr) = &g.listen {
        let alice = load(&args.alice, "alice")?;
        let plan = complete_plan(base, args, truth.as_ref(), &[&alice])?;
        let listener = TcpListener::bind(addr).with_context(|| format!("binding {addr}"))?;
        eprintln!("listening on {}", listener.local_addr()?);
        let mut ep = Endpoint::new(Role::Alice, plan.protocol.id(), Box::new(SocketLink::accept(&listener)?));
        let result = run::alice_side(&plan, &alice, &mut ep, seed);
        let transcript = ep.into_transcript();
        let report = report(&plan, "alice", "socket".into(), g, start, &transcript, result.as_ref().err(), None, truth.as_ref());
        return finish(report, g, &transcript);
    }
    if let Some(addr) = &g.connect {
        let bob = load(&args.bob, "bob")?;
        let Some(truth) = truth.as_ref() else { return Err(usage("a lone Bob needs --truth to verify the result")) };
        let plan = complete_plan(base, args, Some(truth), &[&bob])?;
        let link = SocketLink::new(connect_with_retry(addr)?)?;
        let mut ep = Endpoint::new(Role::Bob, plan.protocol.id(), Box::new(link));
        let result = run::bob_side(&plan, &bob, &mut ep, seed);
        let transcript = ep.into_transcript();
        let verified = result.as_ref().ok().map(|got| run::verify_truth(&plan, truth, got));
        let report = report(&plan, "bob", "socket".into(), g, start, &transcript, result.as_ref().err(), verified, Some(truth));
        return finish(report, g, &transcript);
    }
    let alice = load(&args.alice, "alice")?;
    let bob = load(&args.bob, "bob")?;
    let plan = complete_plan(base, args, truth.as_ref(), &[&alice, &bob])?;
    let (result, transcript) = match run::execute(&plan, &alice, &bob, seed, g.backend) {
        Ok((got, tr)) => (Ok(got), tr),
        Err(e) => (Err(e), Transcript::default()),
    };
    let verified = result.as_ref().ok().map(|got| check_both(&plan, &alice, truth.as_ref(), got));
    let report = report(&plan, "both", backend_name(g.backend), g, start, &transcript, result.as_ref().err(), verified, truth.as_ref());
    finish(report, g, &transcript)
}

fn check_both(plan: &Plan, alice: &Instance, truth: Option<&Truth>, got: &Recovered) -> bool {
    run::verify_direct(plan, alice, got) && truth.is_none_or(|t| run::verify_truth(plan, t, got))
}

fn connect_with_retry(addr: &str) -> Result<TcpStream> {
    let deadline = Instant::now() + Duration::from_secs(10);
    loop {
        match TcpStream::connect(addr) {
            Ok(s) => return Ok(s),
            Err(e) if Instant::now() >= deadline => return Err(e).with_context(|| format!("connecting to {addr}")),
            Err(_) => thread::sleep(Duration::from_millis(50)),
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn report(
    plan: &Plan,
    role: &'static str,
    backend: String,
    g: &Global,
    start: Instant,
    transcript: &Transcript,
    error: Option<&sosync::Error>,
    verified: Option<bool>,
    truth: Option<&Truth>,
) -> Report {
    let s = transcript.summary();
    let (bytes_ab, bytes_ba, rounds) = if g.paper_bits { (s.payload_ab, s.payload_ba, s.rounds_paper) } else { (s.bytes_ab, s.bytes_ba, s.rounds_actual) };
    let stage = match (error, verified) {
        (Some(e), _) => Some(e.stage()),
        (None, Some(false)) => Some("verify".to_string()),
        _ => None,
    };
    Report {
        success: error.is_none() && verified != Some(false),
        verified,
        stage,
        error: error.map(|e| e.to_string()),
        role,
        rounds,
        bytes_ab,
        bytes_ba,
        payload_bits: 8 * s.payload_total(),
        paper_bits: g.paper_bits,
        wall_time: start.elapsed().as_secs_f64(),
        protocol: plan.protocol.name(),
        backend,
        params: plan.clone(),
        true_d: truth.map(|t| t.d),
    }
}

fn finish(report: Report, g: &Global, transcript: &Transcript) -> Result<ExitCode> {
    if let Some(path) = &g.out {
        fs::write(path, transcript.to_json_lines()).with_context(|| format!("writing {}", path.display()))?;
    }
    print_json(&report)?;
    Ok(if report.success { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn read_set(path: &Path) -> Result<Vec<u64>> {
    match Instance::read(Kind::Set, path)? {
        Instance::Set(s) => Ok(s.items),
        _ => unreachable!("set files read as sets"),
    }
}

fn cmd_estimate(a: &EstimateArgs, seed: &Seed) -> Result<ExitCode> {
    if !(a.delta > 0.0 && a.delta < 1.0) {
        return Err(usage("--delta must lie in (0, 1)"));
    }
    let (x, y) = (read_set(&a.alice)?, read_set(&a.bob)?);
    let shape = match a.shape {
        Shape::Paper => SketchShape::PAPER,
        Shape::Compact => SketchShape::COMPACT,
    };
    let estimate = estimate_with_confidence(&x, &y, a.delta, shape, seed);
    let mut sketch = DiffSketch::from_items(shape, seed, x.iter().copied(), Side::One);
    y.iter().for_each(|&v| sketch.update(v, Side::Two));
    let true_d = x.iter().filter(|v| y.binary_search(v).is_err()).count() + y.iter().filter(|v| x.binary_search(v).is_err()).count();
    print_json(&serde_json::json!({
        "estimate": estimate,
        "countEstimate": sketch.estimate_count(),
        "trueD": true_d,
        "ratio": if true_d == 0 { None } else { Some(estimate as f64 / true_d as f64) },
        "runs": runs_for(a.delta),
        "sketchBytes": shape.buckets * shape.replicas * 8,
    }))?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_bench(a: &BenchArgs, seed: &Seed, g: &Global) -> Result<ExitCode> {
    let spec = BenchSpec {
        protocol: a.protocol,
        s: a.s.clone(),
        h: a.h.clone(),
        u: a.u.clone(),
        n: a.n.clone(),
        d: a.d.clone(),
        p: a.p.clone(),
        sigma: a.sigma.clone(),
        seeds: a.seeds,
        give_d: !a.hide_d,
    };
    spec.cells().map_err(|e| usage(format!("{e:#}")))?;
    match &g.out {
        Some(path) => {
            let file = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
            print_json(&bench::run(&spec, seed, g.backend, file)?)?;
        }
        None => {
            let summary = bench::run(&spec, seed, g.backend, io::stdout())?;
            eprintln!("{}", serde_json::to_string_pretty(&summary)?);
        }
    }
    Ok(ExitCode::SUCCESS)
}
