//! Euclidean locality-sensitive hashing.
//!
//! Each of `r` tables hashes a vector to the concatenation of `m` quantised
//! random projections `floor((⟨a, x⟩ + b) / w)`, with `a` standard normal and
//! `b` uniform in `[0, w)`. A query collects the union of its `r` buckets and
//! re-ranks those candidates exactly.

use std::collections::{HashMap, HashSet};
use std::io::{Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::formats::{read_records, read_u32, write_records, write_u32};
use crate::index::flat::score;
use crate::index::{check_k, Metric, SearchOutcome, VectorIndex};
use crate::kernels::{check_dim, euclidean_sq_slice};
use crate::scalar::Real;
use crate::topk::select_top_k;
use crate::types::{EmbeddingSet, ScoredHit};

pub const LSH_MAGIC: [u8; 4] = *b"VXL1";

/// Bucket width, either absolute or as a multiple of the median pairwise
/// distance of the indexed data.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Width {
    Absolute(f64),
    MedianScaled(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LshParams {
    pub tables: usize,
    pub projections: usize,
    pub width: Width,
    pub seed: u64,
}

impl Default for LshParams {
    fn default() -> Self {
        Self {
            tables: 16,
            projections: 8,
            width: Width::MedianScaled(4.0),
            seed: 0,
        }
    }
}

impl LshParams {
    pub fn validate(&self) -> Result<()> {
        let w = match self.width {
            Width::Absolute(w) | Width::MedianScaled(w) => w,
        };
        if self.tables == 0 || self.projections == 0 || !(w.is_finite() && w > 0.0) {
            return Err(Error::Config(format!(
                "LSH needs tables ≥ 1, projections ≥ 1 and width > 0 (got {self:?})"
            )));
        }
        Ok(())
    }
}

/// The `r × m` projection family, fully determined by `(seed, table, j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LshHasher {
    tables: usize,
    projections: usize,
    dim: usize,
    width: f64,
    seed: u64,
    directions: Vec<f64>,
    offsets: Vec<f64>,
}

impl LshHasher {
    pub fn new(tables: usize, projections: usize, dim: usize, width: f64, seed: u64) -> Self {
        let mut directions = Vec::with_capacity(tables * projections * dim);
        let mut offsets = Vec::with_capacity(tables * projections);
        for t in 0..tables {
            for j in 0..projections {
                // One ChaCha stream per (table, projection) under the shared seed key.
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(((t as u64) << 32) | j as u64);
                directions.extend((0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)));
                offsets.push(rng.random::<f64>() * width);
            }
        }
        Self {
            tables,
            projections,
            dim,
            width,
            seed,
            directions,
            offsets,
        }
    }

    pub fn tables(&self) -> usize {
        self.tables
    }

    pub fn width(&self) -> f64 {
        self.width
    }

    /// The `m` integer hash values of `point` in table `table`.
    pub fn hash_point<T: Real>(&self, table: usize, point: &[T]) -> Vec<i64> {
        assert!(table < self.tables, "table index {table} out of range");
        debug_assert_eq!(point.len(), self.dim);
        (0..self.projections)
            .map(|j| {
                let slot = table * self.projections + j;
                let a = &self.directions[slot * self.dim..(slot + 1) * self.dim];
                let proj: f64 = a.iter().zip(point).map(|(x, y)| x * y.as_f64()).sum();
                ((proj + self.offsets[slot]) / self.width).floor() as i64
            })
            .collect()
    }

    /// Bucket key: the hash values folded to `u64`. Mixer collisions only
    /// merge buckets, which enlarges candidate sets.
    pub fn bucket_key<T: Real>(&self, table: usize, point: &[T]) -> u64 {
        mix_key(&self.hash_point(table, point))
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn mix_key(values: &[i64]) -> u64 {
    values.iter().fold(0xcbf2_9ce4_8422_2325_u64, |h, &v| {
        (h ^ splitmix64(v as u64)).wrapping_mul(0x0100_0000_01b3)
    })
}

/// Median distance over a deterministic sample of distinct pairs.
pub fn median_pair_distance<T: Real>(docs: &EmbeddingSet<T>, seed: u64) -> Option<f64> {
    let n = docs.len();
    if n < 2 {
        return None;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX);
    let samples = 2000.min(n * (n - 1) / 2);
    let mut dists: Vec<f64> = (0..samples)
        .map(|_| {
            let i = rng.random_range(0..n);
            let mut j = rng.random_range(0..n - 1);
            if j >= i {
                j += 1;
            }
            euclidean_sq_slice(docs.row(i), docs.row(j)).as_f64().sqrt()
        })
        .collect();
    dists.sort_by(f64::total_cmp);
    let median = dists[dists.len() / 2];
    (median > 0.0).then_some(median)
}

#[derive(Debug, Clone)]
pub struct LshIndex<T: Real> {
    hasher: LshHasher,
    buckets: Vec<HashMap<u64, Vec<u32>>>,
    docs: EmbeddingSet<T>,
}

impl<T: Real> LshIndex<T> {
    pub fn build(docs: EmbeddingSet<T>, params: &LshParams) -> Result<Self> {
        params.validate()?;
        let width = match params.width {
            Width::Absolute(w) => w,
            Width::MedianScaled(scale) => scale * median_pair_distance(&docs, params.seed).unwrap_or(1.0),
        };
        let hasher = LshHasher::new(params.tables, params.projections, docs.dim(), width, params.seed);
        let mut buckets = vec![HashMap::new(); params.tables];
        for (table, map) in buckets.iter_mut().enumerate() {
            for (row, v) in docs.rows().enumerate() {
                map.entry(hasher.bucket_key(table, v))
                    .or_insert_with(Vec::new)
                    .push(row as u32);
            }
        }
        Ok(Self {
            hasher,
            buckets,
            docs,
        })
    }

    pub fn hasher(&self) -> &LshHasher {
        &self.hasher
    }

    pub fn docs(&self) -> &EmbeddingSet<T> {
        &self.docs
    }

    /// Bucket sizes of one table, in no particular order.
    pub fn bucket_sizes(&self, table: usize) -> Vec<usize> {
        self.buckets[table].values().map(Vec::len).collect()
    }

    /// Rows sharing the query's bucket in at least one table, first-seen order.
    pub fn candidates(&self, query: &[T]) -> Result<Vec<u32>> {
        check_dim(self.docs.dim(), query.len())?;
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        for (table, map) in self.buckets.iter().enumerate() {
            if let Some(rows) = map.get(&self.hasher.bucket_key(table, query)) {
                for &row in rows {
                    if seen.insert(row) {
                        out.push(row);
                    }
                }
            }
        }
        Ok(out)
    }

    /// Exact Euclidean top-k inside the candidate union; may return fewer
    /// than `k` hits.
    pub fn search_lsh(&self, query: &[T], k: usize) -> Result<SearchOutcome> {
        check_k(k)?;
        let candidates = self.candidates(query)?;
        let scored = candidates.iter().map(|&row| {
            let row = row as usize;
            (self.docs.id(row), score(Metric::Euclidean, query, self.docs.row(row)))
        });
        let hits: Vec<ScoredHit> = select_top_k(scored, k);
        Ok(SearchOutcome {
            hits,
            candidates: candidates.len(),
        })
    }

    pub(crate) fn write_body<W: Write>(&self, w: &mut W) -> Result<()> {
        write_u32(w, self.hasher.tables)?;
        write_u32(w, self.hasher.projections)?;
        w.write_f64::<LittleEndian>(self.hasher.width)?;
        w.write_u64::<LittleEndian>(self.hasher.seed)?;
        for map in &self.buckets {
            let mut keys: Vec<&u64> = map.keys().collect();
            keys.sort_unstable();
            write_u32(w, keys.len())?;
            for key in keys {
                let rows = &map[key];
                w.write_u64::<LittleEndian>(*key)?;
                write_u32(w, rows.len())?;
                for row in rows {
                    w.write_u32::<LittleEndian>(*row)?;
                }
            }
        }
        write_records(w, &self.docs)
    }

    pub(crate) fn read_body<R: Read>(r: &mut R) -> Result<Self> {
        let tables = read_u32(r)?;
        let projections = read_u32(r)?;
        let width = r.read_f64::<LittleEndian>()?;
        let seed = r.read_u64::<LittleEndian>()?;
        let mut buckets = Vec::with_capacity(tables.min(1 << 16));
        for _ in 0..tables {
            let count = read_u32(r)?;
            let mut map = HashMap::with_capacity(count.min(1 << 20));
            for _ in 0..count {
                let key = r.read_u64::<LittleEndian>()?;
                let len = read_u32(r)?;
                let mut rows = Vec::with_capacity(len.min(1 << 20));
                for _ in 0..len {
                    rows.push(r.read_u32::<LittleEndian>()?);
                }
                map.insert(key, rows);
            }
            buckets.push(map);
        }
        let docs: EmbeddingSet<T> = read_records(r)?;
        for map in &buckets {
            let total: usize = map.values().map(Vec::len).sum();
            if total != docs.len() || map.values().flatten().any(|&row| row as usize >= docs.len()) {
                return Err(Error::Format("LSH table does not cover every stored vector once".into()));
            }
        }
        LshParams {
            tables,
            projections,
            width: Width::Absolute(width),
            seed,
        }
        .validate()
        .map_err(|e| Error::Format(e.to_string()))?;
        let hasher = LshHasher::new(tables, projections, docs.dim(), width, seed);
        Ok(Self {
            hasher,
            buckets,
            docs,
        })
    }
}

impl<T: Real> VectorIndex<T> for LshIndex<T> {
    fn dim(&self) -> usize {
        self.docs.dim()
    }

    fn len(&self) -> usize {
        self.docs.len()
    }

    fn search_with_stats(&self, query: &[T], k: usize) -> Result<SearchOutcome> {
        self.search_lsh(query, k)
    }
}
