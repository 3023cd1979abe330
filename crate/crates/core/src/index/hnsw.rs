//! Hierarchical navigable-small-world graph.
//!
//! Layer 0 holds every document; each node also appears in layers
//! `1..=level` where the level is drawn from a geometric distribution.
//! Search descends from the entry point with single-node beams and runs a
//! wider beam on layer 0.

use std::cmp::{Ordering, Reverse};
use std::collections::{BinaryHeap, VecDeque};
use std::io::{Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::formats::{read_records, read_u32, write_records, write_u32};
use crate::index::{check_k, SearchOutcome, VectorIndex};
use crate::kernels::{check_dim, euclidean_sq_slice};
use crate::scalar::Real;
use crate::topk::select_top_k;
use crate::types::EmbeddingSet;

pub const HNSW_MAGIC: [u8; 4] = *b"VXH1";

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct HnswParams {
    pub max_degree: usize,
    pub ef_construction: usize,
    pub ef_search: usize,
    pub level_scale: f64,
    pub seed: u64,
}

impl Default for HnswParams {
    fn default() -> Self {
        Self {
            max_degree: 16,
            ef_construction: 128,
            ef_search: 64,
            level_scale: 1.0 / 16f64.ln(),
            seed: 0,
        }
    }
}

impl HnswParams {
    pub fn validate(&self) -> Result<()> {
        if self.max_degree < 2 {
            return Err(Error::Config(format!("max_degree must be at least 2, got {}", self.max_degree)));
        }
        if self.ef_construction < self.max_degree {
            return Err(Error::Config(format!(
                "ef_construction {} is below max_degree {}",
                self.ef_construction, self.max_degree
            )));
        }
        if self.ef_search == 0 {
            return Err(Error::Config("ef_search must be at least 1".into()));
        }
        if !(self.level_scale.is_finite() && self.level_scale > 0.0) {
            return Err(Error::Config(format!("level_scale must be positive, got {}", self.level_scale)));
        }
        Ok(())
    }

    /// Degree cap on `layer`.
    pub fn cap(&self, layer: usize) -> usize {
        if layer == 0 {
            2 * self.max_degree
        } else {
            self.max_degree
        }
    }
}

/// `floor(-ln(draw) * level_scale)` for a draw in `(0, 1]`.
pub fn assign_level(level_scale: f64, draw: f64) -> usize {
    (-draw.ln() * level_scale).floor().max(0.0) as usize
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Near {
    dist: f64,
    node: u32,
}

impl Eq for Near {}

impl Ord for Near {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist.total_cmp(&other.dist).then(self.node.cmp(&other.node))
    }
}

impl PartialOrd for Near {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Clone)]
pub struct HnswIndex<T: Real> {
    params: HnswParams,
    docs: EmbeddingSet<T>,
    levels: Vec<usize>,
    /// `layers[l][node]`: neighbours of `node` on layer `l`, empty when
    /// `levels[node] < l`.
    layers: Vec<Vec<Vec<u32>>>,
    entry: u32,
}

impl<T: Real> HnswIndex<T> {
    /// Inserts documents in row order. Fails with [`Error::Invariant`] if
    /// layer 0 ends up disconnected.
    pub fn build(docs: EmbeddingSet<T>, params: HnswParams) -> Result<Self> {
        params.validate()?;
        let n = docs.len();
        if n > u32::MAX as usize {
            return Err(Error::Config("too many documents for a graph index".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        let mut ix = Self {
            params,
            docs,
            levels: Vec::with_capacity(n),
            layers: vec![vec![Vec::new(); n]],
            entry: 0,
        };
        for node in 0..n {
            let draw = 1.0 - rng.random::<f64>();
            let level = assign_level(params.level_scale, draw);
            ix.insert(node as u32, level);
        }
        ix.check_connected()?;
        Ok(ix)
    }

    fn insert(&mut self, node: u32, level: usize) {
        let n = self.docs.len();
        self.levels.push(level);
        while self.layers.len() <= level {
            self.layers.push(vec![Vec::new(); n]);
        }
        if node == 0 {
            self.entry = 0;
            return;
        }
        let query = self.docs.row(node as usize).to_vec();
        let top = self.levels[self.entry as usize];
        let mut entries = vec![self.entry];
        for layer in (level + 1..=top).rev() {
            entries = vec![self.beam(layer, &query, &entries, 1).0[0].node];
        }
        for layer in (0..=level.min(top)).rev() {
            let (found, _) = self.beam(layer, &query, &entries, self.params.ef_construction);
            for near in found.iter().take(self.params.max_degree) {
                self.link(layer, node, near.node);
            }
            entries = found.iter().map(|f| f.node).collect();
        }
        if level > top {
            self.entry = node;
        }
    }

    fn link(&mut self, layer: usize, a: u32, b: u32) {
        self.layers[layer][a as usize].push(b);
        self.layers[layer][b as usize].push(a);
        let cap = self.params.cap(layer);
        for node in [a, b] {
            if self.layers[layer][node as usize].len() > cap {
                self.prune(layer, node);
            }
        }
    }

    /// Drops one edge of `node`, both directions. Preference, farthest
    /// first: a neighbour sharing another neighbour with `node` (the two stay
    /// connected), then one that keeps another edge, then the farthest.
    fn prune(&mut self, layer: usize, node: u32) {
        let adjacency = &self.layers[layer];
        let here = self.docs.row(node as usize);
        let mut ranked: Vec<Near> = adjacency[node as usize]
            .iter()
            .map(|&nb| Near {
                dist: euclidean_sq_slice(here, self.docs.row(nb as usize)).as_f64(),
                node: nb,
            })
            .collect();
        ranked.sort();
        let mine = &adjacency[node as usize];
        let on_triangle = |v: u32| adjacency[v as usize].iter().any(|w| *w != node && mine.contains(w));
        let victim = ranked
            .iter()
            .rev()
            .find(|c| on_triangle(c.node))
            .or_else(|| ranked.iter().rev().find(|c| adjacency[c.node as usize].len() > 1))
            .unwrap_or(&ranked[ranked.len() - 1])
            .node;
        self.layers[layer][node as usize].retain(|&x| x != victim);
        self.layers[layer][victim as usize].retain(|&x| x != node);
    }

    fn check_connected(&self) -> Result<()> {
        let n = self.docs.len();
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([0u32]);
        seen[0] = true;
        let mut reached = 1;
        while let Some(x) = queue.pop_front() {
            for &nb in &self.layers[0][x as usize] {
                if !seen[nb as usize] {
                    seen[nb as usize] = true;
                    reached += 1;
                    queue.push_back(nb);
                }
            }
        }
        if reached != n {
            return Err(Error::Invariant(format!("layer 0 reaches {reached} of {n} nodes")));
        }
        Ok(())
    }

    /// Beam search on one layer; returns up to `ef` nodes sorted by
    /// distance and the number of distance evaluations.
    fn beam(&self, layer: usize, query: &[T], entries: &[u32], ef: usize) -> (Vec<Near>, usize) {
        let adjacency = &self.layers[layer];
        let mut visited = vec![false; self.docs.len()];
        let mut candidates = BinaryHeap::new();
        let mut results: BinaryHeap<Near> = BinaryHeap::new();
        let mut evaluated = 0;
        for &e in entries {
            if std::mem::replace(&mut visited[e as usize], true) {
                continue;
            }
            let near = Near {
                dist: euclidean_sq_slice(query, self.docs.row(e as usize)).as_f64(),
                node: e,
            };
            evaluated += 1;
            candidates.push(Reverse(near));
            results.push(near);
            if results.len() > ef {
                results.pop();
            }
        }
        while let Some(Reverse(current)) = candidates.pop() {
            if results.len() >= ef && current > *results.peek().expect("results non-empty") {
                break;
            }
            for &nb in &adjacency[current.node as usize] {
                if std::mem::replace(&mut visited[nb as usize], true) {
                    continue;
                }
                let near = Near {
                    dist: euclidean_sq_slice(query, self.docs.row(nb as usize)).as_f64(),
                    node: nb,
                };
                evaluated += 1;
                if results.len() < ef || near < *results.peek().expect("results non-empty") {
                    candidates.push(Reverse(near));
                    results.push(near);
                    if results.len() > ef {
                        results.pop();
                    }
                }
            }
        }
        (results.into_sorted_vec(), evaluated)
    }

    /// Greedy beam search restricted to `layer`, returning `(row, squared
    /// distance)` pairs sorted by distance.
    pub fn greedy_search_layer(&self, layer: usize, query: &[T], entries: &[u32], ef: usize) -> Result<Vec<(u32, f64)>> {
        check_dim(self.docs.dim(), query.len())?;
        if layer >= self.layers.len() || entries.is_empty() || ef == 0 {
            return Err(Error::EmptyLayer);
        }
        if entries
            .iter()
            .any(|&e| e as usize >= self.docs.len() || self.levels[e as usize] < layer)
        {
            return Err(Error::EmptyLayer);
        }
        let (found, _) = self.beam(layer, query, entries, ef);
        Ok(found.into_iter().map(|f| (f.node, f.dist)).collect())
    }

    pub fn params(&self) -> &HnswParams {
        &self.params
    }

    pub fn docs(&self) -> &EmbeddingSet<T> {
        &self.docs
    }

    pub fn set_ef_search(&mut self, ef: usize) {
        self.params.ef_search = ef.max(1);
    }

    pub fn entry_point(&self) -> u32 {
        self.entry
    }

    pub fn level(&self, node: u32) -> usize {
        self.levels[node as usize]
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn neighbours(&self, layer: usize, node: u32) -> &[u32] {
        &self.layers[layer][node as usize]
    }

    /// Rows present on `layer`, ascending.
    pub fn layer_nodes(&self, layer: usize) -> Vec<u32> {
        (0..self.docs.len() as u32)
            .filter(|&x| self.levels[x as usize] >= layer)
            .collect()
    }

    pub fn search_hnsw(&self, query: &[T], k: usize) -> Result<SearchOutcome> {
        check_k(k)?;
        if self.docs.is_empty() {
            return Err(Error::EmptyIndex);
        }
        check_dim(self.docs.dim(), query.len())?;
        let mut entries = vec![self.entry];
        let mut evaluated = 0;
        for layer in (1..self.layers.len()).rev() {
            let (found, count) = self.beam(layer, query, &entries, 1);
            evaluated += count;
            entries = vec![found[0].node];
        }
        let (found, count) = self.beam(0, query, &entries, self.params.ef_search.max(k));
        evaluated += count;
        let scored = found.into_iter().map(|f| (self.docs.id(f.node as usize), -f.dist));
        Ok(SearchOutcome {
            hits: select_top_k(scored, k),
            candidates: evaluated,
        })
    }

    pub(crate) fn write_body<W: Write>(&self, w: &mut W) -> Result<()> {
        let p = &self.params;
        write_u32(w, p.max_degree)?;
        write_u32(w, p.ef_construction)?;
        write_u32(w, p.ef_search)?;
        w.write_f64::<LittleEndian>(p.level_scale)?;
        w.write_u64::<LittleEndian>(p.seed)?;
        write_u32(w, self.docs.len())?;
        for &level in &self.levels {
            write_u32(w, level)?;
        }
        write_u32(w, self.entry as usize)?;
        write_u32(w, self.layers.len())?;
        for (layer, adjacency) in self.layers.iter().enumerate() {
            let nodes = self.layer_nodes(layer);
            let mut offset = 0;
            write_u32(w, offset)?;
            for &x in &nodes {
                offset += adjacency[x as usize].len();
                write_u32(w, offset)?;
            }
            for &x in &nodes {
                for &nb in &adjacency[x as usize] {
                    w.write_u32::<LittleEndian>(nb)?;
                }
            }
        }
        write_records(w, &self.docs)
    }

    pub(crate) fn read_body<R: Read>(r: &mut R) -> Result<Self> {
        let params = HnswParams {
            max_degree: read_u32(r)?,
            ef_construction: read_u32(r)?,
            ef_search: read_u32(r)?,
            level_scale: r.read_f64::<LittleEndian>()?,
            seed: r.read_u64::<LittleEndian>()?,
        };
        params.validate().map_err(|e| Error::Format(e.to_string()))?;
        let n = read_u32(r)?;
        let mut levels = Vec::with_capacity(n.min(1 << 20));
        for _ in 0..n {
            levels.push(read_u32(r)?);
        }
        let entry = read_u32(r)?;
        let num_layers = read_u32(r)?;
        if n == 0 || entry >= n || num_layers == 0 || levels.iter().any(|&l| l >= num_layers) {
            return Err(Error::Format("inconsistent graph header".into()));
        }
        let mut layers = Vec::with_capacity(num_layers);
        for layer in 0..num_layers {
            let nodes: Vec<usize> = (0..n).filter(|&x| levels[x] >= layer).collect();
            let mut offsets = Vec::with_capacity(nodes.len() + 1);
            for _ in 0..=nodes.len() {
                offsets.push(read_u32(r)?);
            }
            if offsets[0] != 0 || offsets.windows(2).any(|w| w[0] > w[1]) {
                return Err(Error::Format("graph offsets are not monotone".into()));
            }
            let mut adjacency = vec![Vec::new(); n];
            for (i, &x) in nodes.iter().enumerate() {
                for _ in offsets[i]..offsets[i + 1] {
                    let nb = r.read_u32::<LittleEndian>()?;
                    if nb as usize >= n || levels[nb as usize] < layer {
                        return Err(Error::Format("graph edge points outside its layer".into()));
                    }
                    adjacency[x].push(nb);
                }
            }
            layers.push(adjacency);
        }
        let docs: EmbeddingSet<T> = read_records(r)?;
        if docs.len() != n {
            return Err(Error::Format("graph and payload sizes differ".into()));
        }
        Ok(Self {
            params,
            docs,
            levels,
            layers,
            entry: entry as u32,
        })
    }
}

impl<T: Real> VectorIndex<T> for HnswIndex<T> {
    fn dim(&self) -> usize {
        self.docs.dim()
    }

    fn len(&self) -> usize {
        self.docs.len()
    }

    fn search_with_stats(&self, query: &[T], k: usize) -> Result<SearchOutcome> {
        self.search_hnsw(query, k)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::index::{FlatIndex, Metric};
    use std::collections::HashSet;

    fn random_set(seed: u64, n: usize, dim: usize) -> EmbeddingSet<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..n * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        EmbeddingSet::with_sequential_ids(dim, data).unwrap()
    }

    fn check_structure(ix: &HnswIndex<f64>) {
        let n = ix.docs().len();
        assert_eq!(ix.layer_nodes(0).len(), n);
        for layer in 0..ix.num_layers() {
            if layer > 0 {
                let upper: HashSet<u32> = ix.layer_nodes(layer).into_iter().collect();
                let lower: HashSet<u32> = ix.layer_nodes(layer - 1).into_iter().collect();
                assert!(upper.is_subset(&lower));
                assert!(lower.len() >= upper.len());
            }
            for node in ix.layer_nodes(layer) {
                let adj = ix.neighbours(layer, node);
                assert!(adj.len() <= ix.params().cap(layer));
                for &nb in adj {
                    assert!(ix.neighbours(layer, nb).contains(&node), "asymmetric edge {node}-{nb} on {layer}");
                }
            }
        }
        assert_eq!(ix.level(ix.entry_point()), ix.num_layers() - 1);
    }

    #[test]
    fn level_closed_forms() {
        assert_eq!(assign_level(1.0, 1.0), 0);
        assert_eq!(assign_level(1.0, 1.0 - 1e-12), 0);
        assert_eq!(assign_level(1.0, (-2.0f64).exp() * (1.0 - 1e-12)), 2);
    }

    #[test]
    fn level_frequencies_are_geometric() {
        let ml = 1.0 / 16f64.ln();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut counts = [0usize; 3];
        let draws = 100_000;
        for _ in 0..draws {
            let level = assign_level(ml, 1.0 - rng.random::<f64>());
            if level < 3 {
                counts[level] += 1;
            }
        }
        // P(level = j) = (1 - 1/16) / 16^j
        for (j, &c) in counts.iter().enumerate().take(2) {
            let expected = draws as f64 * (15.0 / 16.0) / 16f64.powi(j as i32);
            assert!(((c as f64 - expected) / expected).abs() < 0.05, "level {j}: {c} vs {expected}");
        }
    }

    #[test]
    fn tiny_graphs() {
        let one = HnswIndex::build(random_set(1, 1, 4), HnswParams::default()).unwrap();
        assert_eq!(one.entry_point(), 0);
        assert!(one.neighbours(0, 0).is_empty());
        let two = HnswIndex::build(random_set(2, 2, 4), HnswParams::default()).unwrap();
        let shared = two.level(0).min(two.level(1));
        for layer in 0..=shared {
            assert_eq!(two.neighbours(layer, 0), &[1]);
            assert_eq!(two.neighbours(layer, 1), &[0]);
        }
    }

    #[test]
    fn structure_holds_after_build() {
        let params = HnswParams {
            max_degree: 4,
            ef_construction: 16,
            ..HnswParams::default()
        };
        let ix = HnswIndex::build(random_set(3, 5000, 8), params).unwrap();
        check_structure(&ix);
        assert!(ix.num_layers() > 1);
    }

    #[test]
    fn exhaustive_beam_on_complete_layer_is_exact() {
        let docs = random_set(4, 20, 3);
        let params = HnswParams {
            max_degree: 20,
            ef_construction: 20,
            ..HnswParams::default()
        };
        let ix = HnswIndex::build(docs.clone(), params).unwrap();
        for node in 0..20 {
            assert_eq!(ix.neighbours(0, node).len(), 19);
        }
        let flat = FlatIndex::build(docs, Metric::Euclidean);
        let q = [0.1, -0.2, 0.3];
        let got: Vec<u32> = ix.greedy_search_layer(0, &q, &[7], 20).unwrap().iter().map(|x| x.0).collect();
        let truth: Vec<u32> = flat.search_flat(&q, 20).unwrap().iter().map(|h| h.doc_id as u32).collect();
        assert_eq!(got, truth);
        let own = ix.greedy_search_layer(0, ix.docs().row(5), &[5], 3).unwrap();
        assert_eq!(own[0], (5, 0.0));
    }

    #[test]
    fn errors() {
        let ix = HnswIndex::build(random_set(5, 50, 2), HnswParams::default()).unwrap();
        assert!(matches!(ix.greedy_search_layer(99, &[0.0, 0.0], &[0], 1), Err(Error::EmptyLayer)));
        assert!(matches!(ix.greedy_search_layer(0, &[0.0, 0.0], &[], 1), Err(Error::EmptyLayer)));
        assert!(matches!(ix.search_hnsw(&[0.0, 0.0], 0), Err(Error::Invalid(_))));
        let bad = HnswParams {
            max_degree: 1,
            ..HnswParams::default()
        };
        assert!(matches!(HnswIndex::build(random_set(5, 5, 2), bad), Err(Error::Config(_))));
    }

    #[test]
    fn k_equal_n_returns_everything_and_stored_vectors_are_found() {
        let docs = random_set(6, 300, 6);
        let ix = HnswIndex::build(docs.clone(), HnswParams::default()).unwrap();
        let all = ix.search_hnsw(&[0.0; 6], 300).unwrap();
        assert_eq!(all.hits.len(), 300);
        let mut hit = 0;
        for i in 0..100 {
            let got = ix.search_hnsw(docs.row(i * 3), 1).unwrap();
            if got.hits[0].doc_id == (i * 3) as u64 {
                hit += 1;
            }
        }
        assert!(hit >= 99);
    }

    #[test]
    fn tight_clusters_stay_connected() {
        let mut spec = crate::harness::SynthSpec::new(1500, 17, 16, 42);
        spec.spread = 8.0;
        let docs = crate::harness::gen_synthetic(&spec).unwrap().docs;
        for seed in 0..4 {
            let params = HnswParams {
                seed,
                ..HnswParams::default()
            };
            assert!(HnswIndex::build(docs.clone(), params).is_ok());
        }
    }

    #[test]
    fn recall_grows_with_beam_width() {
        let docs = random_set(7, 3000, 16);
        let mut ix = HnswIndex::build(docs.clone(), HnswParams::default()).unwrap();
        let flat = FlatIndex::build(docs, Metric::Euclidean);
        let queries = random_set(8, 50, 16);
        let mut last = 0.0;
        for ef in [8, 16, 32, 64, 128] {
            ix.set_ef_search(ef);
            let mut recall = 0.0;
            for q in queries.rows() {
                let truth: HashSet<u64> = flat.search_flat(q, 10).unwrap().iter().map(|h| h.doc_id).collect();
                recall += ix.search_hnsw(q, 10).unwrap().hits.iter().filter(|h| truth.contains(&h.doc_id)).count() as f64;
            }
            recall /= 500.0;
            assert!(recall >= last - 1e-12, "ef {ef}: {recall} < {last}");
            last = recall;
        }
        assert!(last > 0.9);
    }
}
