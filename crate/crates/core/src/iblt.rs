//! Invertible Bloom lookup tables with signed counts.
//!
//! A table is partitioned into `K` equal blocks and every key lands in one
//! cell of each block. Subtracting Bob's table from Alice's leaves only the
//! keys in the symmetric difference, which [`Iblt::decode`] peels out as
//! positives (Alice only) and negatives (Bob only).
//!
//! ```
//! use sosync::iblt::Iblt;
//! use sosync::rng_hash::Seed;
//!
//! let seed = Seed::from_u64(1);
//! let mut alice = Iblt::new(4, &seed);
//! let mut bob = Iblt::new(4, &seed);
//! for k in [1u64, 2, 3, 7] { alice.insert(k); }
//! for k in [1u64, 2, 3, 99] { bob.insert(k); }
//! let diff = alice.subtract(&bob).unwrap().decode();
//! assert!(diff.is_complete());
//! assert_eq!(diff.positives, vec![7]);
//! assert_eq!(diff.negatives, vec![99]);
//! ```

use crate::error::{Error, Result};
use crate::rng_hash::{HashFn, Seed};

/// Number of hash functions, one per block.
pub const K: usize = 4;
/// Smallest table size in cells.
pub const M_MIN: usize = 8;
/// Cells per key of capacity.
pub const ALPHA: f64 = 1.5;
/// Extra cells per square root of capacity, which carries small tables
/// past the high failure rate of the peeling threshold at low load.
pub const SLACK: f64 = 8.0;
/// Serialized header length in bytes.
pub const HEADER_LEN: usize = 16;
/// Serialized cell length in bytes.
pub const CELL_LEN: usize = 24;
/// Largest key the hash family places injectively.
pub const KEY_LIMIT: u64 = 1 << 61;

/// Number of cells allocated for a table meant to hold `capacity` keys.
pub fn cells_for_capacity(capacity: usize) -> usize {
    let c = capacity as f64;
    let want = (ALPHA * c + SLACK * c.sqrt()).max(M_MIN as f64);
    K * (want / K as f64).ceil() as usize
}

/// Serialized size of a table built for `capacity` keys.
pub fn serialized_len(capacity: usize) -> usize {
    HEADER_LEN + CELL_LEN * cells_for_capacity(capacity)
}

/// One table cell.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Cell {
    pub count: i64,
    pub key_sum: u64,
    pub check_sum: u64,
}

impl Cell {
    pub fn is_empty(&self) -> bool {
        self.count == 0 && self.key_sum == 0 && self.check_sum == 0
    }
}

/// Whether peeling emptied the table.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DecodeStatus {
    Complete,
    /// Peeling stalled with this many nonempty cells left.
    Partial(usize),
}

/// Keys peeled from a table, sorted ascending.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DecodeResult {
    pub positives: Vec<u64>,
    pub negatives: Vec<u64>,
    pub status: DecodeStatus,
}

impl DecodeResult {
    pub fn is_complete(&self) -> bool {
        self.status == DecodeStatus::Complete
    }
}

/// Hash functions of one table shape. Cheap to copy, so families of tables
/// that must subtract against each other share one instance.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct IbltHasher {
    seed_id: u64,
    cells: [HashFn; K],
    check: HashFn,
}

impl IbltHasher {
    pub fn new(seed: &Seed) -> IbltHasher {
        let cells = std::array::from_fn(|j| HashFn::bucket(&seed.derive("iblt-cell", j as u64)));
        IbltHasher { seed_id: seed.id(), cells, check: HashFn::checksum(&seed.derive("iblt-check", 0)) }
    }

    #[inline]
    pub fn checksum(&self, key: u64) -> u64 {
        self.check.word(key)
    }

    #[inline]
    fn positions(&self, key: u64, width: usize) -> [usize; K] {
        std::array::from_fn(|j| j * width + self.cells[j].bucket_of(key, width))
    }
}

/// An invertible Bloom lookup table.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Iblt {
    cells: Vec<Cell>,
    hasher: IbltHasher,
}

impl Iblt {
    /// Empty table sized for `capacity` keys.
    pub fn new(capacity: usize, seed: &Seed) -> Iblt {
        Iblt::with_cells(cells_for_capacity(capacity), IbltHasher::new(seed))
    }

    /// Empty table sized for `capacity` keys with a prebuilt hasher.
    pub fn with_hasher(capacity: usize, hasher: IbltHasher) -> Iblt {
        Iblt::with_cells(cells_for_capacity(capacity), hasher)
    }

    /// Empty table with exactly `m` cells; `m` must be a positive multiple of `K`.
    pub fn with_cells(m: usize, hasher: IbltHasher) -> Iblt {
        assert!(m > 0 && m.is_multiple_of(K), "cell count must be a positive multiple of {K}");
        Iblt { cells: vec![Cell::default(); m], hasher }
    }

    /// An empty table with the same shape and hash functions.
    pub fn empty_like(&self) -> Iblt {
        Iblt { cells: vec![Cell::default(); self.cells.len()], hasher: self.hasher }
    }

    pub fn m(&self) -> usize {
        self.cells.len()
    }

    pub fn k(&self) -> usize {
        K
    }

    pub fn seed_id(&self) -> u64 {
        self.hasher.seed_id
    }

    pub fn hasher(&self) -> &IbltHasher {
        &self.hasher
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn is_empty(&self) -> bool {
        self.cells.iter().all(Cell::is_empty)
    }

    /// Adds `sign` (±1) copies of `key`.
    #[inline]
    pub fn apply(&mut self, key: u64, sign: i64) {
        debug_assert!(key < KEY_LIMIT, "key {key} exceeds 2^61");
        debug_assert!(sign == 1 || sign == -1);
        let check = self.hasher.checksum(key);
        let width = self.cells.len() / K;
        for pos in self.hasher.positions(key, width) {
            let c = &mut self.cells[pos];
            c.count += sign;
            c.key_sum ^= key;
            c.check_sum ^= check;
        }
    }

    pub fn insert(&mut self, key: u64) {
        self.apply(key, 1);
    }

    pub fn delete(&mut self, key: u64) {
        self.apply(key, -1);
    }

    fn same_shape(&self, other: &Iblt) -> bool {
        self.cells.len() == other.cells.len() && self.hasher == other.hasher
    }

    /// Cellwise difference `self - other`.
    pub fn subtract(&self, other: &Iblt) -> Result<Iblt> {
        let mut out = self.clone();
        out.subtract_assign(other)?;
        Ok(out)
    }

    pub fn subtract_assign(&mut self, other: &Iblt) -> Result<()> {
        if !self.same_shape(other) {
            return Err(Error::ShapeMismatch);
        }
        for (a, b) in self.cells.iter_mut().zip(&other.cells) {
            a.count -= b.count;
            a.key_sum ^= b.key_sum;
            a.check_sum ^= b.check_sum;
        }
        Ok(())
    }

    #[inline]
    fn is_pure(&self, cell: &Cell) -> bool {
        (cell.count == 1 || cell.count == -1) && self.hasher.checksum(cell.key_sum) == cell.check_sum
    }

    /// Peels a scratch copy of the table.
    pub fn decode(&self) -> DecodeResult {
        let mut work = self.clone();
        let width = work.cells.len() / K;
        let mut positives = Vec::new();
        let mut negatives = Vec::new();
        let mut stack: Vec<usize> = (0..work.cells.len()).filter(|&i| work.is_pure(&work.cells[i])).collect();
        // Every genuine extraction removes a key for good, so a bound on the
        // number of steps only trips when checksums collided.
        let mut budget = 4 * work.cells.len() + 16;
        while let Some(i) = stack.pop() {
            let cell = work.cells[i];
            if !work.is_pure(&cell) {
                continue;
            }
            if budget == 0 {
                break;
            }
            budget -= 1;
            let key = cell.key_sum;
            if key >= KEY_LIMIT {
                break;
            }
            let sign = cell.count;
            if sign == 1 {
                positives.push(key);
            } else {
                negatives.push(key);
            }
            let check = work.hasher.checksum(key);
            for pos in work.hasher.positions(key, width) {
                let c = &mut work.cells[pos];
                c.count -= sign;
                c.key_sum ^= key;
                c.check_sum ^= check;
                let c = *c;
                if work.is_pure(&c) {
                    stack.push(pos);
                }
            }
        }
        positives.sort_unstable();
        negatives.sort_unstable();
        let residual = work.cells.iter().filter(|c| !c.is_empty()).count();
        let overlap = has_common(&positives, &negatives) || has_dup(&positives) || has_dup(&negatives);
        let status = if residual == 0 && !overlap { DecodeStatus::Complete } else { DecodeStatus::Partial(residual.max(1)) };
        DecodeResult { positives, negatives, status }
    }

    /// Header then cells, all little-endian.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + CELL_LEN * self.cells.len());
        self.write_to(&mut out);
        out
    }

    pub fn write_to(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&(self.cells.len() as u32).to_le_bytes());
        out.extend_from_slice(&(K as u32).to_le_bytes());
        out.extend_from_slice(&self.hasher.seed_id.to_le_bytes());
        for c in &self.cells {
            out.extend_from_slice(&c.count.to_le_bytes());
            out.extend_from_slice(&c.key_sum.to_le_bytes());
            out.extend_from_slice(&c.check_sum.to_le_bytes());
        }
    }

    /// Parses a table whose hash functions come from `seed`.
    pub fn from_bytes(bytes: &[u8], seed: &Seed) -> Result<Iblt> {
        Iblt::from_bytes_with(bytes, IbltHasher::new(seed))
    }

    pub fn from_bytes_with(bytes: &[u8], hasher: IbltHasher) -> Result<Iblt> {
        let (t, used) = Iblt::read_prefix(bytes, hasher)?;
        if used != bytes.len() {
            return Err(Error::MalformedBytes(format!("{} trailing bytes after table", bytes.len() - used)));
        }
        Ok(t)
    }

    /// Parses a table at the start of `bytes`, returning it and the number
    /// of bytes consumed.
    pub fn read_prefix(bytes: &[u8], hasher: IbltHasher) -> Result<(Iblt, usize)> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::MalformedBytes("table header truncated".into()));
        }
        let m = u32::from_le_bytes(bytes[0..4].try_into().unwrap()) as usize;
        let k = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let seed_id = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
        if k != K || m == 0 || !m.is_multiple_of(K) {
            return Err(Error::MalformedBytes(format!("bad table header m={m} k={k}")));
        }
        if seed_id != hasher.seed_id {
            return Err(Error::MalformedBytes("table built from a different seed".into()));
        }
        let need = m.checked_mul(CELL_LEN).and_then(|x| x.checked_add(HEADER_LEN));
        let need = match need {
            Some(n) if n <= bytes.len() => n,
            _ => return Err(Error::MalformedBytes("table cells truncated".into())),
        };
        let cells = bytes[HEADER_LEN..need]
            .chunks_exact(CELL_LEN)
            .map(|c| Cell {
                count: i64::from_le_bytes(c[0..8].try_into().unwrap()),
                key_sum: u64::from_le_bytes(c[8..16].try_into().unwrap()),
                check_sum: u64::from_le_bytes(c[16..24].try_into().unwrap()),
            })
            .collect();
        Ok((Iblt { cells, hasher }, need))
    }

    /// Feeds every cell word into `f`, for content fingerprints.
    pub fn words(&self) -> impl Iterator<Item = u64> + '_ {
        self.cells.iter().flat_map(|c| [c.count as u64, c.key_sum, c.check_sum])
    }
}

fn has_common(a: &[u64], b: &[u64]) -> bool {
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => return true,
        }
    }
    false
}

fn has_dup(sorted: &[u64]) -> bool {
    sorted.windows(2).any(|w| w[0] == w[1])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::seq::SliceRandom;
    use rand::Rng;
    use std::collections::BTreeSet;

    #[test]
    fn sizing_floor_and_multiple_of_k() {
        assert_eq!(cells_for_capacity(0), M_MIN);
        for d in 0..500 {
            let m = cells_for_capacity(d);
            assert_eq!(m % K, 0);
            assert!(m as f64 >= ALPHA * d as f64);
        }
        assert_eq!(serialized_len(20), HEADER_LEN + CELL_LEN * cells_for_capacity(20));
    }

    #[test]
    fn fresh_table_is_empty_and_decodes() {
        let t = Iblt::new(0, &Seed::from_u64(1));
        assert_eq!(t.m(), 8);
        assert!(t.cells().iter().all(|c| *c == Cell::default()));
        let r = Iblt::new(10, &Seed::from_u64(1)).decode();
        assert!(r.is_complete());
        assert!(r.positives.is_empty() && r.negatives.is_empty());
    }

    #[test]
    fn insert_then_delete_restores_table() {
        let mut t = Iblt::new(10, &Seed::from_u64(2));
        let empty = t.clone();
        t.insert(12345);
        t.delete(12345);
        assert_eq!(t, empty);
    }

    #[test]
    fn single_insert_touches_k_cells() {
        let mut t = Iblt::new(10, &Seed::from_u64(3));
        t.insert(5);
        let touched: Vec<_> = t.cells().iter().filter(|c| !c.is_empty()).collect();
        assert_eq!(touched.len(), K);
        assert!(touched.iter().all(|c| c.count == 1 && c.key_sum == 5));
    }

    #[test]
    fn count_is_conserved() {
        let mut t = Iblt::new(10, &Seed::from_u64(4));
        for x in [1, 2, 3] {
            t.insert(x);
        }
        assert_eq!(t.cells().iter().map(|c| c.count).sum::<i64>(), 3 * K as i64);
    }

    #[test]
    fn subtract_recovers_difference() {
        let s = Seed::from_u64(5);
        let mut a = Iblt::new(10, &s);
        let mut b = Iblt::new(10, &s);
        for x in 1..=50 {
            a.insert(x);
            if x != 7 {
                b.insert(x);
            }
        }
        b.insert(99);
        let r = a.subtract(&b).unwrap().decode();
        assert!(r.is_complete());
        assert_eq!((r.positives, r.negatives), (vec![7], vec![99]));
        assert!(a.subtract(&a).unwrap().is_empty());
    }

    #[test]
    fn subtract_rejects_other_shapes() {
        let s = Seed::from_u64(6);
        let a = Iblt::new(10, &s);
        assert!(matches!(a.subtract(&Iblt::new(100, &s)), Err(Error::ShapeMismatch)));
        assert!(matches!(a.subtract(&Iblt::new(10, &Seed::from_u64(7))), Err(Error::ShapeMismatch)));
    }

    #[test]
    fn decode_does_not_mutate() {
        let mut t = Iblt::new(10, &Seed::from_u64(8));
        t.insert(3);
        let before = t.clone();
        let _ = t.decode();
        assert_eq!(t, before);
    }

    #[test]
    fn capacity_hundred_decodes_reliably() {
        let mut ok = 0;
        for s in 0..100 {
            let seed = Seed::from_u64(1000 + s);
            let mut rng = seed.derive("keys", 0).rng();
            let keys: BTreeSet<u64> = (0..100).map(|_| rng.gen_range(0..KEY_LIMIT)).collect();
            let mut t = Iblt::new(100, &seed);
            keys.iter().for_each(|&k| t.insert(k));
            let r = t.decode();
            if r.is_complete() && r.positives == keys.iter().copied().collect::<Vec<_>>() {
                ok += 1;
            }
        }
        assert!(ok >= 99, "{ok}/100");
    }

    #[test]
    fn mixed_signs_at_capacity_fifty() {
        let mut ok = 0;
        for s in 0..1000 {
            let seed = Seed::from_u64(50_000 + s);
            let mut rng = seed.derive("keys", 0).rng();
            let d_pos = rng.gen_range(0..=50);
            let keys: BTreeSet<u64> = std::iter::repeat_with(|| rng.gen_range(0..KEY_LIMIT)).take(50).collect();
            let keys: Vec<u64> = keys.into_iter().collect();
            let (pos, neg) = keys.split_at(d_pos.min(keys.len()));
            let mut t = Iblt::new(50, &seed);
            pos.iter().for_each(|&k| t.insert(k));
            neg.iter().for_each(|&k| t.delete(k));
            let r = t.decode();
            let mut pos = pos.to_vec();
            let mut neg = neg.to_vec();
            pos.sort_unstable();
            neg.sort_unstable();
            if r.is_complete() && r.positives == pos && r.negatives == neg {
                ok += 1;
            }
        }
        assert!(ok >= 990, "{ok}/1000");
    }

    #[test]
    fn overload_is_reported_partial() {
        let seed = Seed::from_u64(9);
        let mut t = Iblt::new(5, &seed);
        for k in 0..500 {
            t.insert(k * 7919 + 1);
        }
        assert!(matches!(t.decode().status, DecodeStatus::Partial(_)));
    }

    #[test]
    fn apply_order_does_not_matter() {
        let seed = Seed::from_u64(10);
        let mut ops: Vec<(u64, i64)> = (0..200).map(|i| (i * 31 + 7, if i % 3 == 0 { -1 } else { 1 })).collect();
        let mut a = Iblt::new(20, &seed);
        ops.iter().for_each(|&(k, s)| a.apply(k, s));
        ops.shuffle(&mut seed.rng());
        let mut b = Iblt::new(20, &seed);
        ops.iter().for_each(|&(k, s)| b.apply(k, s));
        assert_eq!(a, b);
    }

    #[test]
    fn bytes_roundtrip_and_layout() {
        let seed = Seed::from_u64(11);
        let mut t = Iblt::new(20, &seed);
        for k in [1, 5, 1 << 60] {
            t.insert(k);
        }
        t.delete(77);
        let bytes = t.to_bytes();
        assert_eq!(bytes.len(), 16 + 24 * t.m());
        assert_eq!(Iblt::from_bytes(&bytes, &seed).unwrap(), t);
        assert!(matches!(Iblt::from_bytes(&bytes[..bytes.len() - 1], &seed), Err(Error::MalformedBytes(_))));
        assert!(matches!(Iblt::from_bytes(&bytes[..10], &seed), Err(Error::MalformedBytes(_))));
        assert!(Iblt::from_bytes(&bytes, &Seed::from_u64(12)).is_err());
        let mut bad = bytes.clone();
        bad[4] = 3;
        assert!(Iblt::from_bytes(&bad, &seed).is_err());
    }
}
