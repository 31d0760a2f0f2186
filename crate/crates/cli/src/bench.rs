//! Parameter sweeps: one CSV row per (cell, seed), medians per cell.

use std::io::Write;
use std::sync::Mutex;
use std::time::Instant;

use anyhow::{bail, Result};
use rayon::prelude::*;
use serde::Serialize;
use sosync::sos_recon::SosParams;
use sosync::transport::Backend;
use sosync::Seed;

use crate::files::Kind;
use crate::gen;
use crate::run::{execute, verify_direct, Plan, Protocol};

/// Universe of generated sets.
pub const SET_UNIVERSE: u64 = 1 << 40;

/// One grid point.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct Cell {
    pub s: Option<usize>,
    pub h: Option<usize>,
    pub u: Option<u64>,
    pub n: Option<usize>,
    pub d: usize,
    pub p: Option<f64>,
    pub sigma: Option<usize>,
}

#[derive(Clone, Debug)]
pub struct BenchSpec {
    pub protocol: Protocol,
    pub s: Vec<usize>,
    pub h: Vec<usize>,
    pub u: Vec<u64>,
    pub n: Vec<usize>,
    pub d: Vec<usize>,
    pub p: Vec<f64>,
    pub sigma: Vec<usize>,
    pub seeds: usize,
    /// Known-d protocols get the cell's `d`; otherwise they run without one.
    pub give_d: bool,
}

impl BenchSpec {
    /// The grid over the parameters the protocol's kind uses.
    pub fn cells(&self) -> Result<Vec<Cell>> {
        if self.seeds == 0 {
            bail!("seeds must be at least 1");
        }
        let need = |name: &str, v: bool| if v { Ok(()) } else { Err(anyhow::anyhow!("--{name} is required for {}", self.protocol.name())) };
        need("d", !self.d.is_empty())?;
        let mut cells = Vec::new();
        match self.protocol.kind() {
            Kind::Set => {
                need("n", !self.n.is_empty())?;
                for &n in &self.n {
                    cells.extend(self.d.iter().map(|&d| Cell { n: Some(n), d, ..Cell::default() }));
                }
            }
            Kind::Sos => {
                need("s", !self.s.is_empty())?;
                need("h", !self.h.is_empty())?;
                need("u", !self.u.is_empty())?;
                for (&s, &h, &u) in self.s.iter().flat_map(|s| self.h.iter().flat_map(move |h| self.u.iter().map(move |u| (s, h, u)))) {
                    cells.extend(self.d.iter().map(|&d| Cell { s: Some(s), h: Some(h), u: Some(u), d, ..Cell::default() }));
                }
            }
            Kind::Graph => {
                need("n", !self.n.is_empty())?;
                need("p", !self.p.is_empty())?;
                for (&n, &p) in self.n.iter().flat_map(|n| self.p.iter().map(move |p| (n, p))) {
                    cells.extend(self.d.iter().map(|&d| Cell { n: Some(n), p: Some(p), d, ..Cell::default() }));
                }
            }
            Kind::Forest => {
                need("n", !self.n.is_empty())?;
                need("sigma", !self.sigma.is_empty())?;
                for (&n, &sigma) in self.n.iter().flat_map(|n| self.sigma.iter().map(move |x| (n, x))) {
                    cells.extend(self.d.iter().map(|&d| Cell { n: Some(n), sigma: Some(sigma), d, ..Cell::default() }));
                }
            }
        }
        Ok(cells)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Row {
    pub protocol: String,
    pub s: Option<usize>,
    pub h: Option<usize>,
    pub u: Option<u64>,
    pub n: Option<usize>,
    pub d: usize,
    pub p: Option<f64>,
    pub sigma: Option<usize>,
    pub seed: usize,
    pub success: bool,
    pub payload_bits: u64,
    pub rounds: usize,
    pub time_ms: f64,
    pub stage: String,
}

#[derive(Clone, Debug, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct CellSummary {
    pub protocol: String,
    pub cell: Cell,
    pub runs: usize,
    pub success_rate: f64,
    pub median_payload_bits: f64,
    pub median_rounds: f64,
    pub median_time_ms: f64,
}

fn median(mut xs: Vec<f64>) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.sort_by(f64::total_cmp);
    let m = xs.len() / 2;
    if xs.len() % 2 == 1 {
        xs[m]
    } else {
        (xs[m - 1] + xs[m]) / 2.0
    }
}

/// One seeded run of one cell.
pub fn run_cell(spec: &BenchSpec, cell: &Cell, index: usize, root: &Seed, backend: Backend) -> Row {
    let seed = root.derive("bench", index as u64);
    let start = Instant::now();
    let result = run_once(spec, cell, &seed, backend);
    let time_ms = start.elapsed().as_secs_f64() * 1e3;
    let (success, payload_bits, rounds, stage) = match result {
        Ok((ok, summary)) => (ok, 8 * summary.payload_total(), summary.rounds_actual, if ok { String::new() } else { "verify".into() }),
        Err(e) => (false, 0, 0, e.stage()),
    };
    Row {
        protocol: spec.protocol.name(),
        s: cell.s,
        h: cell.h,
        u: cell.u,
        n: cell.n,
        d: cell.d,
        p: cell.p,
        sigma: cell.sigma,
        seed: index,
        success,
        payload_bits,
        rounds,
        time_ms,
        stage,
    }
}

fn run_once(spec: &BenchSpec, cell: &Cell, seed: &Seed, backend: Backend) -> sosync::Result<(bool, sosync::transport::Summary)> {
    let invalid = |e: anyhow::Error| sosync::Error::InvalidParams(e.to_string());
    let g = match spec.protocol.kind() {
        Kind::Set => gen::set(cell.n.unwrap_or(0), cell.d, SET_UNIVERSE, seed),
        Kind::Sos => {
            let params = SosParams { s: cell.s.unwrap_or(0), h: cell.h.unwrap_or(0), u: cell.u.unwrap_or(0) };
            gen::sos(params, cell.d, None, seed)
        }
        Kind::Graph => gen::graph(cell.n.unwrap_or(0), cell.p.unwrap_or(0.0), cell.d, None, seed),
        Kind::Forest => gen::forest(cell.n.unwrap_or(0), cell.sigma.unwrap_or(0), cell.d, seed),
    }
    .map_err(invalid)?;
    let d = (spec.give_d || spec.protocol.needs_d()).then_some(cell.d);
    let plan = Plan {
        protocol: spec.protocol,
        d,
        params: g.truth.params,
        universe: Some(SET_UNIVERSE),
        p: cell.p,
        h: None,
        sigma: cell.sigma,
        delta: None,
        doubling: d.is_none() && matches!(spec.protocol, Protocol::Iblt2 | Protocol::Cascade),
    };
    let (got, transcript) = execute(&plan, &g.alice, &g.bob, seed, backend)?;
    Ok((verify_direct(&plan, &g.alice, &got), transcript.summary()))
}

/// Runs the sweep in parallel, writing each row as soon as it finishes.
pub fn run(spec: &BenchSpec, root: &Seed, backend: Backend, out: impl Write + Send) -> Result<Vec<CellSummary>> {
    let cells = spec.cells()?;
    let jobs: Vec<(usize, usize)> = (0..cells.len()).flat_map(|c| (0..spec.seeds).map(move |i| (c, i))).collect();
    let writer = Mutex::new(csv::Writer::from_writer(out));
    let rows: Vec<(usize, Row)> = jobs
        .par_iter()
        .map(|&(c, i)| {
            let row = run_cell(spec, &cells[c], i, root, backend);
            let mut w = writer.lock().expect("csv writer poisoned");
            w.serialize(&row).and_then(|_| w.flush().map_err(csv::Error::from)).map(|_| (c, row))
        })
        .collect::<std::result::Result<_, _>>()?;
    Ok(cells
        .iter()
        .enumerate()
        .map(|(c, cell)| {
            let mine: Vec<&Row> = rows.iter().filter(|(k, _)| *k == c).map(|(_, r)| r).collect();
            let ok: Vec<&&Row> = mine.iter().filter(|r| r.success).collect();
            CellSummary {
                protocol: spec.protocol.name(),
                cell: *cell,
                runs: mine.len(),
                success_rate: ok.len() as f64 / mine.len() as f64,
                median_payload_bits: median(mine.iter().map(|r| r.payload_bits as f64).collect()),
                median_rounds: median(mine.iter().map(|r| r.rounds as f64).collect()),
                median_time_ms: median(mine.iter().map(|r| r.time_ms).collect()),
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(protocol: Protocol) -> BenchSpec {
        BenchSpec { protocol, s: vec![], h: vec![], u: vec![], n: vec![], d: vec![], p: vec![], sigma: vec![], seeds: 1, give_d: true }
    }

    #[test]
    fn grid_uses_only_relevant_parameters() {
        let s = BenchSpec { s: vec![10, 20], h: vec![8], u: vec![64], d: vec![1, 2, 3], ..spec(Protocol::Cascade) };
        assert_eq!(s.cells().unwrap().len(), 6);
        assert!(BenchSpec { s: vec![], ..s.clone() }.cells().is_err());
        assert!(BenchSpec { seeds: 0, ..s }.cells().is_err());
    }

    #[test]
    fn single_cell_single_seed_gives_one_row() {
        let s = BenchSpec { n: vec![200], d: vec![4], ..spec(Protocol::SetIblt) };
        let mut buf = Vec::new();
        let summary = run(&s, &Seed::from_u64(1), Backend::InProc, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 2, "{text}");
        assert!(text.starts_with("protocol,s,h,u,n,d,p,sigma,seed,success,payload_bits"));
        assert_eq!(summary.len(), 1);
        assert_eq!(summary[0].success_rate, 1.0);
    }

    #[test]
    fn medians() {
        assert_eq!(median(vec![3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(vec![4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!(median(vec![]).is_nan());
    }
}
