//! Leveled ℓ0 sketch for estimating the size of a set difference.
//!
//! Every element lands in level `1 + trailing_zeros(levelHash(x))`, so
//! level `i` sees a `2^-i` sample of the universe, and also in level 0,
//! which sees everything. Each level keeps `R` replicas of `B` two-bit
//! counters holding the signed update sum modulo 4. Alice's updates count
//! `+1`, Bob's `-1`, so after a merge only the symmetric difference is left.
//!
//! Two readouts are provided. [`DiffSketch::query`] is the power-of-two
//! rule: `2^i*` for the highest level whose count exceeds 8, or the exact
//! level-0 count if none does. [`DiffSketch::estimate_count`] applies
//! linear counting to the lowest half-empty levels and is the one used to size
//! tables, since the power-of-two rule sits roughly an order of magnitude
//! below the truth.

use crate::error::{Error, Result};
use crate::rng_hash::{HashFn, Seed};

/// Levels beyond level 0.
pub const LEVELS: usize = 64;
/// A level "reports" when its count exceeds this.
pub const REPORT_THRESHOLD: u32 = 8;
/// Upper bound on replicas per level.
pub const MAX_REPLICAS: usize = 64;
/// Median replication constant of [`runs_for`].
pub const GAMMA: f64 = 8.0;

/// Bucket and replica counts of one level.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SketchShape {
    pub buckets: usize,
    pub replicas: usize,
}

impl SketchShape {
    /// `B = 2c^2` slots with `c = 141` and `R = log2(16)` replicas.
    pub const PAPER: SketchShape = SketchShape { buckets: 2 * 141 * 141, replicas: 4 };
    /// Wire-friendly shape used to size reconciliation tables.
    pub const COMPACT: SketchShape = SketchShape { buckets: 1024, replicas: 4 };
    /// Shape for per-child sketches of small sets.
    pub const CHILD: SketchShape = SketchShape { buckets: 128, replicas: 2 };
}

/// Which party an update belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    /// Alice, a `+1` update.
    One,
    /// Bob, a `-1` update.
    Two,
}

#[derive(Clone, Debug, PartialEq, Eq)]
struct Level {
    /// `replicas * buckets` counters in `0..4`, replica-major.
    counters: Vec<u8>,
    /// Nonzero counters per replica, maintained incrementally.
    nonzero: Vec<u32>,
}

impl Level {
    fn new(shape: SketchShape) -> Level {
        Level { counters: vec![0; shape.buckets * shape.replicas], nonzero: vec![0; shape.replicas] }
    }

    fn recount(&mut self, shape: SketchShape) {
        for (r, chunk) in self.counters.chunks_exact(shape.buckets).enumerate() {
            self.nonzero[r] = chunk.iter().filter(|&&c| c != 0).count() as u32;
        }
    }

    fn report(&self) -> u32 {
        self.nonzero.iter().copied().max().unwrap_or(0)
    }
}

/// The leveled sketch.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DiffSketch {
    shape: SketchShape,
    seed_id: u64,
    level_hash: HashFn,
    bucket_hash: Vec<HashFn>,
    /// Index 0 is the catch-all level; levels are allocated on first touch.
    levels: Vec<Option<Level>>,
}

impl DiffSketch {
    pub fn new(shape: SketchShape, seed: &Seed) -> DiffSketch {
        assert!(shape.buckets > 0 && (1..=MAX_REPLICAS).contains(&shape.replicas));
        let level_hash = HashFn::pairwise(&seed.derive("sketch-level", 0), 61);
        let bucket_hash = (0..shape.replicas).map(|r| HashFn::bucket(&seed.derive("sketch-bucket", r as u64))).collect();
        DiffSketch { shape, seed_id: seed.id(), level_hash, bucket_hash, levels: vec![None; LEVELS + 1] }
    }

    /// Sketch of `items`, all on one side.
    pub fn from_items(shape: SketchShape, seed: &Seed, items: impl IntoIterator<Item = u64>, side: Side) -> DiffSketch {
        let mut s = DiffSketch::new(shape, seed);
        for x in items {
            s.update(x, side);
        }
        s
    }

    pub fn shape(&self) -> SketchShape {
        self.shape
    }

    /// Level an element is sampled into, in `1..=LEVELS`.
    pub fn level_of(&self, x: u64) -> usize {
        let h = self.level_hash.raw(x);
        (1 + h.trailing_zeros() as usize).min(LEVELS)
    }

    pub fn update(&mut self, x: u64, side: Side) {
        let delta: u8 = match side {
            Side::One => 1,
            Side::Two => 3,
        };
        let level = self.level_of(x);
        let shape = self.shape;
        let mut slots = [0usize; MAX_REPLICAS];
        for (r, h) in self.bucket_hash.iter().enumerate() {
            slots[r] = r * shape.buckets + h.bucket_of(x, shape.buckets);
        }
        for l in [0, level] {
            let lv = self.levels[l].get_or_insert_with(|| Level::new(shape));
            for (r, &i) in slots[..shape.replicas].iter().enumerate() {
                bump(lv, r, i, delta);
            }
        }
    }

    fn compatible(&self, other: &DiffSketch) -> bool {
        self.shape == other.shape && self.seed_id == other.seed_id && self.level_hash == other.level_hash
    }

    /// Cellwise mod-4 sum of two sketches.
    pub fn merge(&self, other: &DiffSketch) -> Result<DiffSketch> {
        let mut out = self.clone();
        out.merge_assign(other)?;
        Ok(out)
    }

    pub fn merge_assign(&mut self, other: &DiffSketch) -> Result<()> {
        if !self.compatible(other) {
            return Err(Error::ShapeMismatch);
        }
        let shape = self.shape;
        for (mine, theirs) in self.levels.iter_mut().zip(&other.levels) {
            let Some(theirs) = theirs else { continue };
            match mine {
                None => *mine = Some(theirs.clone()),
                Some(lv) => {
                    for (a, b) in lv.counters.iter_mut().zip(&theirs.counters) {
                        *a = (*a + *b) & 3;
                    }
                    lv.recount(shape);
                }
            }
        }
        Ok(())
    }

    /// Per-level reports (max nonzero count over replicas), level 0 first.
    pub fn level_counts(&self) -> Vec<u32> {
        self.levels.iter().map(|l| l.as_ref().map_or(0, Level::report)).collect()
    }

    /// Per-level reports of the merge of `a` and `b`, computed without
    /// materializing the merged sketch.
    pub fn merged_level_counts(a: &DiffSketch, b: &DiffSketch) -> Result<Vec<u32>> {
        if !a.compatible(b) {
            return Err(Error::ShapeMismatch);
        }
        let buckets = a.shape.buckets;
        Ok(a.levels
            .iter()
            .zip(&b.levels)
            .map(|(x, y)| match (x, y) {
                (None, None) => 0,
                (Some(l), None) | (None, Some(l)) => l.report(),
                (Some(l), Some(m)) => l
                    .counters
                    .chunks_exact(buckets)
                    .zip(m.counters.chunks_exact(buckets))
                    .map(|(p, q)| p.iter().zip(q).filter(|(u, v)| (**u + **v) & 3 != 0).count() as u32)
                    .max()
                    .unwrap_or(0),
            })
            .collect())
    }

    /// Bitmap of levels whose report exceeds [`REPORT_THRESHOLD`].
    pub fn indicator(counts: &[u32]) -> u128 {
        counts.iter().enumerate().filter(|(_, &c)| c > REPORT_THRESHOLD).fold(0u128, |acc, (i, _)| acc | (1u128 << i))
    }

    /// The power-of-two estimate from per-level reports.
    pub fn query_counts(counts: &[u32]) -> u64 {
        let bitmap = DiffSketch::indicator(counts);
        if bitmap == 0 {
            counts[0] as u64
        } else {
            let top = 127 - bitmap.leading_zeros();
            1u64 << top.min(63)
        }
    }

    /// Linear-counting estimate of the difference size.
    ///
    /// A level with `c` of `B` buckets occupied holds about
    /// `-B ln(1 - c/B)` elements. Level 0 is used while at most half full;
    /// otherwise levels `j..` are summed for the lowest `j` that is, and
    /// scaled by the `2^(j-1)` sampling rate of that tail.
    pub fn count_estimate(counts: &[u32], shape: SketchShape) -> u64 {
        let b = shape.buckets as f64;
        let half = shape.buckets as u32 / 2;
        let occupancy = |c: u32| -b * (1.0 - c as f64 / b).ln();
        if counts[0] <= half {
            return occupancy(counts[0]).round() as u64;
        }
        let j = (1..counts.len()).find(|&j| counts[j] <= half).unwrap_or(counts.len() - 1);
        let tail: f64 = counts[j..].iter().map(|&c| occupancy(c.min(shape.buckets as u32 - 1))).sum();
        (tail * 2f64.powi(j as i32 - 1)).round() as u64
    }

    /// The power-of-two estimate of this sketch.
    pub fn query(&self) -> u64 {
        DiffSketch::query_counts(&self.level_counts())
    }

    /// The scaled-count estimate of this sketch.
    pub fn estimate_count(&self) -> u64 {
        DiffSketch::count_estimate(&self.level_counts(), self.shape)
    }

    /// Serialized form: seed id, bucket and replica counts, a bitmap of
    /// allocated levels, then each allocated level's counters packed four
    /// to a byte.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&self.seed_id.to_le_bytes());
        out.extend_from_slice(&(self.shape.buckets as u32).to_le_bytes());
        out.extend_from_slice(&(self.shape.replicas as u32).to_le_bytes());
        let mut present = 0u128;
        for (i, l) in self.levels.iter().enumerate() {
            if l.as_ref().is_some_and(|l| l.nonzero.iter().any(|&c| c > 0)) {
                present |= 1 << i;
            }
        }
        out.extend_from_slice(&present.to_le_bytes());
        for (i, l) in self.levels.iter().enumerate() {
            if present >> i & 1 == 1 {
                let l = l.as_ref().unwrap();
                out.extend(l.counters.chunks(4).map(|c| c.iter().enumerate().fold(0u8, |acc, (j, &v)| acc | (v << (2 * j)))));
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], seed: &Seed) -> Result<DiffSketch> {
        let malformed = |m: &str| Error::MalformedBytes(format!("sketch: {m}"));
        if bytes.len() < 32 {
            return Err(malformed("header truncated"));
        }
        let seed_id = u64::from_le_bytes(bytes[0..8].try_into().unwrap());
        let buckets = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let replicas = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
        let present = u128::from_le_bytes(bytes[16..32].try_into().unwrap());
        if seed_id != seed.id() {
            return Err(malformed("built from a different seed"));
        }
        if buckets == 0 || replicas == 0 || buckets > 1 << 24 || replicas > MAX_REPLICAS || present >> (LEVELS + 1) != 0 {
            return Err(malformed("bad shape"));
        }
        let shape = SketchShape { buckets, replicas };
        let mut s = DiffSketch::new(shape, seed);
        let per_level = (buckets * replicas).div_ceil(4);
        let mut pos = 32;
        for i in 0..=LEVELS {
            if present >> i & 1 == 0 {
                continue;
            }
            let chunk = bytes.get(pos..pos + per_level).ok_or_else(|| malformed("levels truncated"))?;
            pos += per_level;
            let mut lv = Level::new(shape);
            for (j, c) in lv.counters.iter_mut().enumerate() {
                *c = (chunk[j / 4] >> (2 * (j % 4))) & 3;
            }
            lv.recount(shape);
            s.levels[i] = Some(lv);
        }
        if pos != bytes.len() {
            return Err(malformed("trailing bytes"));
        }
        Ok(s)
    }
}

#[inline]
fn bump(lv: &mut Level, replica: usize, i: usize, delta: u8) {
    let old = lv.counters[i];
    let new = (old + delta) & 3;
    lv.counters[i] = new;
    match (old == 0, new == 0) {
        (true, false) => lv.nonzero[replica] += 1,
        (false, true) => lv.nonzero[replica] -= 1,
        _ => {}
    }
}

/// Number of independent runs whose median meets failure probability `delta`.
///
/// A single run already succeeds with probability above one half, so the
/// count is calibrated to need one run at `delta = 1/2`; it is always odd.
pub fn runs_for(delta: f64) -> usize {
    assert!(delta > 0.0 && delta < 1.0, "delta must lie in (0, 1)");
    let r = (GAMMA * (1.0 / (2.0 * delta)).ln()).ceil().max(1.0) as usize;
    if r.is_multiple_of(2) {
        r + 1
    } else {
        r
    }
}

/// Median over independent sketches of the power-of-two estimate of
/// `|s1 ⊕ s2|`.
pub fn estimate_with_confidence(s1: &[u64], s2: &[u64], delta: f64, shape: SketchShape, seed: &Seed) -> u64 {
    let runs = runs_for(delta);
    let mut estimates: Vec<u64> = (0..runs)
        .map(|i| {
            let run_seed = if runs == 1 { *seed } else { seed.derive("median-run", i as u64) };
            let mut sk = DiffSketch::from_items(shape, &run_seed, s1.iter().copied(), Side::One);
            s2.iter().for_each(|&x| sk.update(x, Side::Two));
            sk.query()
        })
        .collect();
    estimates.sort_unstable();
    estimates[estimates.len() / 2]
}
