//! Instance files, JSON mirrors and the ground-truth sidecar.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sosync::forest_recon::{self, Forest};
use sosync::graph_recon::{oracle, Graph};
use sosync::set_recon::set_hash;
use sosync::sos_recon::{self, parent_hash, SetOfSets, SosParams};
use sosync::transport::{bytes_to_words, words_to_bytes};
use sosync::Seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Set,
    Sos,
    Graph,
    Forest,
}

impl Kind {
    pub fn ext(self) -> &'static str {
        match self {
            Kind::Set => "set",
            Kind::Sos => "sos",
            Kind::Graph => "graph",
            Kind::Forest => "forest",
        }
    }
}

/// A set file: universe and count as u64, then the sorted elements.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SetFile {
    pub universe: u64,
    pub items: Vec<u64>,
}

#[derive(Clone, Debug)]
pub enum Instance {
    Set(SetFile),
    Sos(SosParams, SetOfSets),
    Graph(Graph),
    Forest(Forest),
}

#[derive(Serialize)]
struct SosMirror<'a> {
    params: &'a SosParams,
    children: &'a [Vec<u64>],
}

impl Instance {
    pub fn kind(&self) -> Kind {
        match self {
            Instance::Set(_) => Kind::Set,
            Instance::Sos(..) => Kind::Sos,
            Instance::Graph(_) => Kind::Graph,
            Instance::Forest(_) => Kind::Forest,
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut bytes = Vec::new();
        match self {
            Instance::Set(s) => {
                let mut words = vec![s.universe, s.items.len() as u64];
                words.extend_from_slice(&s.items);
                bytes = words_to_bytes(&words);
            }
            Instance::Sos(params, parent) => {
                sos_recon::write_instance(&mut bytes, params, parent)?;
                let mirror = SosMirror { params, children: &parent.children };
                fs::write(path.with_extension("sos.json"), serde_json::to_string_pretty(&mirror)?)?;
            }
            Instance::Graph(g) => g.write_to(&mut bytes)?,
            Instance::Forest(f) => f.write_to(&mut bytes)?,
        }
        fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
    }

    pub fn read(kind: Kind, path: &Path) -> Result<Instance> {
        let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        let inst = match kind {
            Kind::Set => {
                let words = bytes_to_words(&bytes)?;
                let [universe, count, items @ ..] = words.as_slice() else { bail!("{}: truncated set header", path.display()) };
                if items.len() as u64 != *count || items.windows(2).any(|w| w[0] >= w[1]) || items.iter().any(|x| x >= universe) {
                    bail!("{}: malformed set body", path.display());
                }
                Instance::Set(SetFile { universe: *universe, items: items.to_vec() })
            }
            Kind::Sos => {
                let (params, parent) = sos_recon::read_instance(&mut bytes.as_slice())?;
                Instance::Sos(params, parent)
            }
            Kind::Graph => Instance::Graph(Graph::read_from(&mut bytes.as_slice())?),
            Kind::Forest => Instance::Forest(Forest::read_from(&mut bytes.as_slice())?),
        };
        Ok(inst)
    }

    /// Label-independent digest of the instance, checked against the
    /// sidecar after a session.
    pub fn digest(&self) -> String {
        let seed = digest_seed();
        let value = match self {
            Instance::Set(s) => set_hash(&seed, &s.items),
            Instance::Sos(_, parent) => parent_hash(&seed, parent),
            Instance::Graph(g) => graph_digest(g),
            Instance::Forest(f) => set_hash(&seed, &forest_recon::compute_sigs(f, &seed)),
        };
        format!("{value:016x}")
    }
}

fn digest_seed() -> Seed {
    Seed::from_u64(0).derive("cli-digest", 0)
}

/// Digest of a graph under its own labels.
pub fn graph_digest(g: &Graph) -> u64 {
    let mut keys = g.edge_keys();
    keys.push(u64::MAX - g.n() as u64);
    set_hash(&digest_seed(), &keys)
}

/// Digest of a small graph's isomorphism class.
pub fn graph_class_digest(g: &Graph) -> Option<String> {
    (g.n() <= oracle::MAX_N).then(|| format!("{:016x}", oracle::canonical_string(g)))
}

/// What `gen` knows about a generated pair; read back only to verify.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Truth {
    pub kind: Kind,
    /// True difference: element changes for sets, the minimum matching
    /// distance for sets of sets (when `dExact`), edge edits otherwise.
    pub d: usize,
    pub d_exact: bool,
    pub alice_digest: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alice_class: Option<String>,
    /// Alice's vertex for each of Bob's vertices.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correspondence: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    /// Set when the signature schemes will run on complements.
    #[serde(default)]
    pub complemented: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<SosParams>,
    pub seed: String,
}

impl Truth {
    pub fn read(path: &Path) -> Result<Truth> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)? + "\n").with_context(|| format!("writing {}", path.display()))
    }
}

/// Reads a seed given as 64 hex characters or as a path to a seed file.
pub fn parse_seed(arg: &str) -> Result<Seed> {
    if let Ok(seed) = Seed::from_hex(arg) {
        return Ok(seed);
    }
    let text = fs::read_to_string(arg).with_context(|| format!("{arg:?} is neither a 64-hex seed nor a readable seed file"))?;
    Ok(Seed::from_hex(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn set_files_round_trip_and_reject_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.set");
        let inst = Instance::Set(SetFile { universe: 100, items: vec![1, 5, 99] });
        inst.write(&path).unwrap();
        let Instance::Set(back) = Instance::read(Kind::Set, &path).unwrap() else { panic!() };
        assert_eq!(back.items, vec![1, 5, 99]);
        fs::write(&path, [0u8; 12]).unwrap();
        assert!(Instance::read(Kind::Set, &path).is_err());
    }

    #[test]
    fn digests_ignore_child_order() {
        let params = SosParams { s: 3, h: 3, u: 10 };
        let a = Instance::Sos(params, SetOfSets::new(vec![vec![1, 2], vec![3]]));
        let b = Instance::Sos(params, SetOfSets::new(vec![vec![3], vec![1, 2]]));
        let c = Instance::Sos(params, SetOfSets::new(vec![vec![3], vec![1]]));
        assert_eq!(a.digest(), b.digest());
        assert_ne!(a.digest(), c.digest());
    }

    #[test]
    fn seeds_parse_from_hex_or_file() {
        let hex = Seed::from_u64(3).to_hex();
        assert_eq!(parse_seed(&hex).unwrap(), Seed::from_u64(3));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("seed");
        fs::write(&path, format!("{hex}\n")).unwrap();
        assert_eq!(parse_seed(path.to_str().unwrap()).unwrap(), Seed::from_u64(3));
        assert!(parse_seed("abc").is_err());
    }
}
