//! Synthetic data, recall measurement and the build-query-evaluate pipeline.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::formats::{load_dense, read_dense_jsonl, with_path};
use crate::index::{
    AnyIndex, FlatIndex, HnswIndex, HnswParams, IndexArtifact, IvfIndex, IvfPqIndex, LshIndex, LshParams, Metric, PqIndex,
    VectorIndex, Width,
};
use crate::types::{EmbeddingSet, MultiEmbedding, ScoredHit, SparseDoc, SparseVector};

/// JSON Schema for serialized [`EvalReport`]s.
pub const EVAL_REPORT_SCHEMA: &str = include_str!("../schema/eval_report.schema.json");

/// Candidate depth per query when none is configured.
pub const DEFAULT_DEPTH: usize = 1000;

/// Collections larger than this are evaluated without a flat oracle.
pub const DEFAULT_ORACLE_CAP: usize = 100_000;

/// Stream ids separating the independent random sequences of one seed.
const DOC_STREAM: u64 = 0;
const QUERY_STREAM: u64 = 1;

fn noise(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Shape of a Gaussian-mixture collection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n: usize,
    pub dim: usize,
    pub clusters: usize,
    pub seed: u64,
    /// Standard deviation of the cluster means; points have unit variance
    /// around their mean.
    pub spread: f64,
}

impl SynthSpec {
    pub fn new(n: usize, dim: usize, clusters: usize, seed: u64) -> Self {
        Self {
            n,
            dim,
            clusters,
            seed,
            spread: 4.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.clusters == 0 || self.n < self.clusters {
            return Err(Error::Config(format!(
                "synthetic data needs dim ≥ 1 and n ≥ clusters ≥ 1 (got n={}, dim={}, clusters={})",
                self.n, self.dim, self.clusters
            )));
        }
        if !(self.spread.is_finite() && self.spread >= 0.0) {
            return Err(Error::Config(format!("spread must be finite and non-negative, got {}", self.spread)));
        }
        Ok(())
    }
}

/// Cluster means and per-document assignments of a generated collection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub seed: u64,
    pub dim: usize,
    pub means: Vec<Vec<f64>>,
    pub assignments: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct Synthetic {
    pub docs: EmbeddingSet<f64>,
    pub truth: GroundTruth,
}

impl Synthetic {
    /// Fresh points from the same mixture, ids `0..count`.
    pub fn queries(&self, count: usize) -> Result<EmbeddingSet<f64>> {
        let mut rng = stream_rng(self.truth.seed, QUERY_STREAM);
        let mut data = Vec::with_capacity(count * self.truth.dim);
        for _ in 0..count {
            let mean = &self.truth.means[rng.random_range(0..self.truth.means.len())];
            data.extend(mean.iter().map(|m| m + noise(&mut rng)));
        }
        EmbeddingSet::with_sequential_ids(self.truth.dim, data)
    }
}

/// Gaussian mixture: means drawn with standard deviation `spread`, each
/// document assigned to a uniformly chosen cluster with unit-variance noise.
/// Every cluster receives at least one document.
pub fn gen_synthetic(spec: &SynthSpec) -> Result<Synthetic> {
    spec.validate()?;
    let mut rng = stream_rng(spec.seed, DOC_STREAM);
    let centre = Normal::new(0.0, spec.spread).map_err(|e| Error::Config(e.to_string()))?;
    let means: Vec<Vec<f64>> = (0..spec.clusters)
        .map(|_| (0..spec.dim).map(|_| centre.sample(&mut rng)).collect())
        .collect();
    let mut assignments: Vec<usize> = (0..spec.clusters).collect();
    assignments.extend((spec.clusters..spec.n).map(|_| rng.random_range(0..spec.clusters)));
    let mut data = Vec::with_capacity(spec.n * spec.dim);
    for &c in &assignments {
        data.extend(means[c].iter().map(|m| m + noise(&mut rng)));
    }
    Ok(Synthetic {
        docs: EmbeddingSet::with_sequential_ids(spec.dim, data)?,
        truth: GroundTruth {
            seed: spec.seed,
            dim: spec.dim,
            means,
            assignments,
        },
    })
}

/// Multi-vector texts with `min_rows..=max_rows` Gaussian rows each. Row 0
/// carries token id 0 (the CLS position); other tokens are drawn from
/// `1..vocab`.
pub fn gen_multi(
    count: usize,
    dim: usize,
    rows: (usize, usize),
    vocab: u32,
    seed: u64,
    stream: u64,
) -> Result<Vec<MultiEmbedding<f64>>> {
    let (lo, hi) = rows;
    if dim == 0 || lo == 0 || lo > hi || vocab < 2 {
        return Err(Error::Config(format!(
            "multi-vector data needs dim ≥ 1, 1 ≤ min_rows ≤ max_rows and vocab ≥ 2 (got dim={dim}, rows={lo}..={hi}, vocab={vocab})"
        )));
    }
    let mut rng = stream_rng(seed, 16 + stream);
    (0..count as u64)
        .map(|id| {
            let t = rng.random_range(lo..=hi);
            let data = (0..t * dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            let mut tokens = vec![0u32];
            tokens.extend((1..t).map(|_| rng.random_range(1..vocab)));
            MultiEmbedding::new(id, dim, data, Some(tokens))
        })
        .collect()
}

/// Sparse documents with `terms` draws each from a skewed vocabulary
/// (low ids are frequent) and weights uniform in `(0, 5)`.
pub fn gen_sparse(count: usize, vocab: u32, terms: usize, seed: u64, stream: u64) -> Result<Vec<SparseDoc>> {
    if vocab == 0 || terms == 0 {
        return Err(Error::Config("sparse data needs vocab ≥ 1 and terms ≥ 1".into()));
    }
    let mut rng = stream_rng(seed, 32 + stream);
    (0..count as u64)
        .map(|id| {
            let entries: Vec<(u32, f64)> = (0..terms)
                .map(|_| {
                    let u: f64 = rng.random();
                    let term = ((u * u) * f64::from(vocab)) as u32;
                    (term.min(vocab - 1), rng.random_range(0.01..5.0))
                })
                .collect();
            Ok(SparseDoc {
                id,
                vector: SparseVector::from_occurrences(entries)?,
            })
        })
        .collect()
}

/// `|approx[..k] ∩ oracle[..k]| / k`.
pub fn recall_at_k(approx: &[ScoredHit], oracle: &[ScoredHit], k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::Metric("recall needs k ≥ 1".into()));
    }
    if oracle.len() < k {
        return Err(Error::Metric(format!("oracle has {} hits, fewer than k = {k}", oracle.len())));
    }
    let truth: std::collections::HashSet<u64> = oracle[..k].iter().map(|h| h.doc_id).collect();
    let found = approx.iter().take(k).filter(|h| truth.contains(&h.doc_id)).count();
    Ok(found as f64 / k as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IndexKind {
    Flat,
    Lsh,
    Ivf,
    Pq,
    Ivfpq,
    Hnsw,
}

impl IndexKind {
    pub fn parse(name: &str) -> Result<Self> {
        Ok(match name {
            "flat" => IndexKind::Flat,
            "lsh" => IndexKind::Lsh,
            "ivf" => IndexKind::Ivf,
            "pq" => IndexKind::Pq,
            "ivfpq" => IndexKind::Ivfpq,
            "hnsw" => IndexKind::Hnsw,
            other => return Err(Error::Config(format!("unknown index kind {other:?}"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IndexConfig {
    pub kind: IndexKind,
    /// Inner-product indexes other than flat are built over MIPS-transformed
    /// vectors.
    pub metric: Metric,
    pub lists: usize,
    pub probes: usize,
    pub parts: usize,
    pub centroids: usize,
    pub iters: usize,
    pub tables: usize,
    pub projections: usize,
    pub width: Width,
    pub max_degree: usize,
    pub ef_construction: usize,
    pub ef_search: usize,
}

impl Default for IndexConfig {
    fn default() -> Self {
        let hnsw = HnswParams::default();
        let lsh = LshParams::default();
        Self {
            kind: IndexKind::Flat,
            metric: Metric::Euclidean,
            lists: 64,
            probes: 8,
            parts: 8,
            centroids: 256,
            iters: 20,
            tables: lsh.tables,
            projections: lsh.projections,
            width: lsh.width,
            max_degree: hnsw.max_degree,
            ef_construction: hnsw.ef_construction,
            ef_search: hnsw.ef_search,
        }
    }
}

impl IndexConfig {
    pub fn of_kind(kind: IndexKind) -> Self {
        Self {
            kind,
            ..Self::default()
        }
    }

    fn hnsw_params(&self, seed: u64) -> HnswParams {
        HnswParams {
            max_degree: self.max_degree,
            ef_construction: self.ef_construction,
            ef_search: self.ef_search,
            level_scale: 1.0 / (self.max_degree.max(2) as f64).ln(),
            seed,
        }
    }

    fn lsh_params(&self, seed: u64) -> LshParams {
        LshParams {
            tables: self.tables,
            projections: self.projections,
            width: self.width,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            IndexKind::Flat => {}
            IndexKind::Lsh => self.lsh_params(0).validate()?,
            IndexKind::Hnsw => self.hnsw_params(0).validate()?,
            IndexKind::Ivf | IndexKind::Pq | IndexKind::Ivfpq => {
                if self.iters == 0 {
                    return Err(Error::Config("iters must be at least 1".into()));
                }
            }
        }
        if matches!(self.kind, IndexKind::Ivf | IndexKind::Ivfpq) && (self.lists == 0 || self.probes == 0 || self.probes > self.lists) {
            return Err(Error::Config(format!("probes must lie in 1..={} (got {})", self.lists, self.probes)));
        }
        if matches!(self.kind, IndexKind::Pq | IndexKind::Ivfpq)
            && (self.parts == 0 || self.centroids == 0 || self.centroids > crate::index::pq::MAX_CENTROIDS)
        {
            return Err(Error::Config(format!(
                "PQ needs parts ≥ 1 and 1 ≤ centroids ≤ {} (got parts={}, centroids={})",
                crate::index::pq::MAX_CENTROIDS,
                self.parts,
                self.centroids
            )));
        }
        Ok(())
    }
}

/// Builds the configured index; `seed` drives every random choice.
pub fn build_artifact(docs: &EmbeddingSet<f64>, cfg: &IndexConfig, seed: u64) -> Result<IndexArtifact<f64>> {
    cfg.validate()?;
    if cfg.kind == IndexKind::Flat {
        return Ok(IndexArtifact::new(AnyIndex::Flat(FlatIndex::build(docs.clone(), cfg.metric))));
    }
    let (transform, space) = match cfg.metric {
        Metric::Euclidean => (None, docs.clone()),
        Metric::InnerProduct => {
            let (t, mapped) = IndexArtifact::mips_docs(docs)?;
            (Some(t), mapped)
        }
    };
    let index = match cfg.kind {
        IndexKind::Flat => unreachable!("handled above"),
        IndexKind::Lsh => AnyIndex::Lsh(LshIndex::build(space, &cfg.lsh_params(seed))?),
        IndexKind::Ivf => {
            let mut ix = IvfIndex::build(&space, cfg.lists, cfg.iters, seed)?;
            ix.set_probes(cfg.probes);
            AnyIndex::Ivf(ix)
        }
        IndexKind::Pq => AnyIndex::Pq(PqIndex::build(&space, cfg.parts, cfg.centroids, cfg.iters, seed)?),
        IndexKind::Ivfpq => {
            let mut ix = IvfPqIndex::build(&space, cfg.lists, cfg.parts, cfg.centroids, cfg.iters, seed)?;
            ix.set_probes(cfg.probes);
            AnyIndex::IvfPq(ix)
        }
        IndexKind::Hnsw => AnyIndex::Hnsw(HnswIndex::build(space, cfg.hnsw_params(seed))?),
    };
    Ok(IndexArtifact { index, transform })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Cut-offs at which recall is reported.
    pub k: Vec<usize>,
    /// Hits retrieved per query.
    pub depth: usize,
    pub oracle_cap: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            k: vec![1, 10, 100],
            depth: DEFAULT_DEPTH,
            oracle_cap: DEFAULT_ORACLE_CAP,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k.is_empty() || self.k.contains(&0) {
            return Err(Error::Config("eval.k must list cut-offs ≥ 1".into()));
        }
        if self.depth == 0 {
            return Err(Error::Config("eval.depth must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Documents, `VXE1` binary or `.jsonl`.
    pub docs: PathBuf,
    pub queries: PathBuf,
    /// Prebuilt artifact to load instead of building.
    #[serde(default)]
    pub index: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub index: Option<PathBuf>,
    pub report: Option<PathBuf>,
}

/// A complete evaluation run, usually read from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DataConfig,
    #[serde(default)]
    pub index: IndexConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parses and validates a TOML file; relative paths are resolved
    /// against the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        with_path(path, || {
            let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read config: {e}")))?;
            let mut cfg = Self::from_toml_str(&text)?;
            let base = path.parent().unwrap_or(Path::new(""));
            cfg.resolve(base);
            Ok(cfg)
        })
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.data.docs);
        fix(&mut self.data.queries);
        for p in [&mut self.data.index, &mut self.output.index, &mut self.output.report].into_iter().flatten() {
            fix(p);
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.index.validate()?;
        self.eval.validate()
    }
}

/// Wall-clock measurements, kept apart from the reproducible fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Timing {
    pub build_ms: f64,
    pub mean_latency_us: f64,
    pub median_latency_us: f64,
    pub p99_latency_us: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalReport {
    pub index: IndexKind,
    pub metric: Metric,
    pub seed: u64,
    pub docs: usize,
    pub queries: usize,
    pub dim: usize,
    pub depth: usize,
    /// Whether a flat oracle was built; recall is empty otherwise.
    pub oracle: bool,
    pub recall_at_k: BTreeMap<usize, f64>,
    pub mean_candidates: f64,
    pub index_bytes: u64,
    pub timing: Timing,
}

impl EvalReport {
    /// The report as JSON with the timing block removed.
    pub fn reproducible_fields(&self) -> Result<serde_json::Value> {
        let mut value = serde_json::to_value(self)?;
        if let Some(obj) = value.as_object_mut() {
            obj.remove("timing");
        }
        Ok(value)
    }
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let rank = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[rank - 1]
}

/// Runs every query against `artifact` at the configured depth and, when
/// the collection is within the oracle cap, compares with exact search.
pub fn evaluate(
    docs: &EmbeddingSet<f64>,
    queries: &EmbeddingSet<f64>,
    artifact: &IndexArtifact<f64>,
    index_cfg: &IndexConfig,
    eval: &EvalConfig,
    seed: u64,
    build_ms: f64,
) -> Result<EvalReport> {
    eval.validate()?;
    let depth = eval.depth.min(docs.len());
    let oracle = (docs.len() <= eval.oracle_cap).then(|| FlatIndex::build(docs.clone(), index_cfg.metric));
    let cutoffs: Vec<usize> = eval.k.iter().copied().filter(|&k| k <= docs.len()).collect();
    let deepest = cutoffs.iter().copied().max().unwrap_or(1);
    let mut recall_sums = vec![0.0; cutoffs.len()];
    let mut latencies = Vec::with_capacity(queries.len());
    let mut candidates = 0usize;
    for q in queries.rows() {
        let start = Instant::now();
        let outcome = artifact.search_with_stats(q, depth)?;
        latencies.push(start.elapsed().as_secs_f64() * 1e6);
        candidates += outcome.candidates;
        if let Some(flat) = &oracle {
            let truth = flat.search_flat(q, deepest)?;
            for (sum, &k) in recall_sums.iter_mut().zip(&cutoffs) {
                *sum += recall_at_k(&outcome.hits, &truth, k)?;
            }
        }
    }
    let nq = queries.len() as f64;
    let recall_at_k = if oracle.is_some() {
        cutoffs.iter().zip(&recall_sums).map(|(&k, s)| (k, s / nq)).collect()
    } else {
        BTreeMap::new()
    };
    let mean_latency_us = latencies.iter().sum::<f64>() / nq;
    latencies.sort_by(f64::total_cmp);
    Ok(EvalReport {
        index: index_cfg.kind,
        metric: index_cfg.metric,
        seed,
        docs: docs.len(),
        queries: queries.len(),
        dim: docs.dim(),
        depth,
        oracle: oracle.is_some(),
        recall_at_k,
        mean_candidates: candidates as f64 / nq,
        index_bytes: artifact.to_bytes()?.len() as u64,
        timing: Timing {
            build_ms,
            mean_latency_us,
            median_latency_us: percentile(&latencies, 0.5),
            p99_latency_us: percentile(&latencies, 0.99),
        },
    })
}

/// Builds and evaluates one index over in-memory data.
pub fn build_and_evaluate(
    docs: &EmbeddingSet<f64>,
    queries: &EmbeddingSet<f64>,
    index_cfg: &IndexConfig,
    eval: &EvalConfig,
    seed: u64,
) -> Result<(EvalReport, IndexArtifact<f64>)> {
    let start = Instant::now();
    let artifact = build_artifact(docs, index_cfg, seed)?;
    let build_ms = start.elapsed().as_secs_f64() * 1e3;
    let report = evaluate(docs, queries, &artifact, index_cfg, eval, seed, build_ms)?;
    Ok((report, artifact))
}

/// Loads dense vectors from `VXE1` binary, or JSON Lines when the file name
/// ends in `.jsonl`.
pub fn load_dense_any(path: impl AsRef<Path>) -> Result<EmbeddingSet<f64>> {
    let path = path.as_ref();
    if path.extension().is_some_and(|e| e == "jsonl") {
        with_path(path, || read_dense_jsonl(std::io::BufReader::new(fs::File::open(path)?)))
    } else {
        load_dense(path)
    }
}

/// Executes a [`RunConfig`]: load data, build or load the index, evaluate,
/// and write the configured outputs.
pub fn run_pipeline(cfg: &RunConfig) -> Result<(EvalReport, IndexArtifact<f64>)> {
    cfg.validate()?;
    let docs = load_dense_any(&cfg.data.docs)?;
    let queries = load_dense_any(&cfg.data.queries)?;
    if queries.dim() != docs.dim() {
        return Err(Error::Dimension {
            expected: docs.dim(),
            found: queries.dim(),
        }
        .in_file(&cfg.data.queries));
    }
    let (report, artifact) = match &cfg.data.index {
        Some(path) => {
            let start = Instant::now();
            let mut artifact = IndexArtifact::load(path).map_err(|e| e.in_file(path))?;
            artifact.index.set_search_breadth(match cfg.index.kind {
                IndexKind::Hnsw => cfg.index.ef_search,
                _ => cfg.index.probes,
            });
            let ms = start.elapsed().as_secs_f64() * 1e3;
            let report = evaluate(&docs, &queries, &artifact, &cfg.index, &cfg.eval, cfg.seed, ms)?;
            (report, artifact)
        }
        None => build_and_evaluate(&docs, &queries, &cfg.index, &cfg.eval, cfg.seed)?,
    };
    if let Some(path) = &cfg.output.index {
        artifact.save(path).map_err(|e| e.in_file(path))?;
    }
    if let Some(path) = &cfg.output.report {
        with_path(path, || Ok(fs::write(path, serde_json::to_string_pretty(&report)? + "\n")?))?;
    }
    Ok((report, artifact))
}

/// A self-contained benchmark over generated data.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchSpec {
    pub synth: SynthSpec,
    pub queries: usize,
    pub indexes: Vec<IndexConfig>,
    pub eval: EvalConfig,
}

pub fn run_bench(spec: &BenchSpec) -> Result<Vec<(EvalReport, IndexArtifact<f64>)>> {
    if spec.queries == 0 {
        return Err(Error::Config("bench needs at least one query".into()));
    }
    let data = gen_synthetic(&spec.synth)?;
    let queries = data.queries(spec.queries)?;
    spec.indexes
        .iter()
        .map(|cfg| build_and_evaluate(&data.docs, &queries, cfg, &spec.eval, spec.synth.seed))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::index::kmeans;

    #[test]
    fn recall_examples() {
        let hits = |ids: &[u64]| -> Vec<ScoredHit> {
            ids.iter()
                .enumerate()
                .map(|(i, &doc_id)| ScoredHit {
                    doc_id,
                    score: -(i as f64),
                    rank: i + 1,
                })
                .collect()
        };
        let a = hits(&[1, 2, 3, 4, 5, 6, 7, 8, 9, 10]);
        let b = hits(&[11, 12, 13, 14, 15, 16, 17, 18, 19, 20]);
        let c = hits(&[1, 2, 3, 4, 5, 16, 17, 18, 19, 20]);
        assert_eq!(recall_at_k(&a, &a, 10).unwrap(), 1.0);
        assert_eq!(recall_at_k(&a, &b, 10).unwrap(), 0.0);
        assert_eq!(recall_at_k(&c, &a, 10).unwrap(), 0.5);
        assert!(matches!(recall_at_k(&a, &a[..3], 5), Err(Error::Metric(_))));
    }

    #[test]
    fn synthetic_shapes_and_determinism() {
        assert!(matches!(gen_synthetic(&SynthSpec::new(2, 4, 3, 0)), Err(Error::Config(_))));
        let spec = SynthSpec::new(500, 6, 5, 11);
        let a = gen_synthetic(&spec).unwrap();
        let b = gen_synthetic(&spec).unwrap();
        assert_eq!(a.docs, b.docs);
        assert_eq!(a.truth, b.truth);
        assert_eq!(a.truth.assignments.len(), 500);
        assert_eq!(a.queries(7).unwrap(), b.queries(7).unwrap());
        let single = gen_synthetic(&SynthSpec::new(4000, 3, 1, 2)).unwrap();
        let mean = &single.truth.means[0];
        for j in 0..3 {
            let avg: f64 = single.docs.rows().map(|r| r[j]).sum::<f64>() / 4000.0;
            let var: f64 = single.docs.rows().map(|r| (r[j] - avg).powi(2)).sum::<f64>() / 4000.0;
            assert!((avg - mean[j]).abs() < 0.1);
            assert!((var - 1.0).abs() < 0.1);
        }
    }

    #[test]
    fn kmeans_recovers_generated_means() {
        let mut spec = SynthSpec::new(4000, 2, 2, 5);
        spec.spread = 20.0;
        let data = gen_synthetic(&spec).unwrap();
        let out = kmeans(&data.docs, 2, 20, 1).unwrap();
        for m in &data.truth.means {
            let best = out
                .codebook
                .centroids()
                .map(|c: &[f64]| ((c[0] - m[0]).powi(2) + (c[1] - m[1]).powi(2)).sqrt())
                .fold(f64::INFINITY, f64::min);
            assert!(best < 0.1);
        }
    }

    #[test]
    fn flat_and_exhaustive_ivf_have_perfect_recall() {
        let data = gen_synthetic(&SynthSpec::new(600, 8, 6, 3)).unwrap();
        let queries = data.queries(20).unwrap();
        let eval = EvalConfig {
            k: vec![1, 10, 50],
            depth: 100,
            ..EvalConfig::default()
        };
        let (flat, _) = build_and_evaluate(&data.docs, &queries, &IndexConfig::default(), &eval, 1).unwrap();
        assert!(flat.recall_at_k.values().all(|&r| r == 1.0));
        let ivf = IndexConfig {
            kind: IndexKind::Ivf,
            lists: 12,
            probes: 12,
            ..IndexConfig::default()
        };
        let (report, _) = build_and_evaluate(&data.docs, &queries, &ivf, &eval, 1).unwrap();
        assert_eq!(report.recall_at_k.len(), 3);
        assert!(report.recall_at_k.values().all(|&r| r == 1.0));
        assert_eq!(report.depth, 100);
    }

    #[test]
    fn inner_product_pipeline_uses_the_transform() {
        let data = gen_synthetic(&SynthSpec::new(400, 6, 4, 8)).unwrap();
        let queries = data.queries(10).unwrap();
        let cfg = IndexConfig {
            kind: IndexKind::Ivf,
            metric: Metric::InnerProduct,
            lists: 4,
            probes: 4,
            ..IndexConfig::default()
        };
        let eval = EvalConfig {
            k: vec![10],
            depth: 10,
            ..EvalConfig::default()
        };
        let (report, artifact) = build_and_evaluate(&data.docs, &queries, &cfg, &eval, 2).unwrap();
        assert!(artifact.transform.is_some());
        assert_eq!(report.recall_at_k[&10], 1.0);
    }

    #[test]
    fn oracle_cap_skips_recall() {
        let data = gen_synthetic(&SynthSpec::new(100, 4, 2, 1)).unwrap();
        let queries = data.queries(3).unwrap();
        let eval = EvalConfig {
            oracle_cap: 50,
            ..EvalConfig::default()
        };
        let (report, _) = build_and_evaluate(&data.docs, &queries, &IndexConfig::default(), &eval, 0).unwrap();
        assert!(!report.oracle);
        assert!(report.recall_at_k.is_empty());
        assert_eq!(report.depth, 100);
    }

    #[test]
    fn config_parsing_and_validation() {
        let text = r#"
            seed = 3
            [data]
            docs = "d.vxe"
            queries = "q.vxe"
            [index]
            kind = "ivf"
            lists = 16
            probes = 4
            [eval]
            k = [1, 10]
        "#;
        let cfg = RunConfig::from_toml_str(text).unwrap();
        assert_eq!(cfg.index.kind, IndexKind::Ivf);
        assert_eq!(cfg.eval.depth, DEFAULT_DEPTH);
        assert_eq!(cfg.eval.oracle_cap, DEFAULT_ORACLE_CAP);
        let bad_probe = text.replace("probes = 4", "probes = 40");
        assert!(matches!(RunConfig::from_toml_str(&bad_probe), Err(Error::Config(_))));
        let unknown = text.replace("lists = 16", "lists = 16\nlsts = 2");
        let err = RunConfig::from_toml_str(&unknown).unwrap_err();
        assert!(err.to_string().contains("lsts"));
        let width = text.replace("kind = \"ivf\"", "kind = \"lsh\"\nwidth = { absolute = 2.5 }");
        assert_eq!(RunConfig::from_toml_str(&width).unwrap().index.width, Width::Absolute(2.5));
    }

    #[test]
    fn multi_and_sparse_generators() {
        let docs = gen_multi(20, 4, (3, 6), 50, 1, 0).unwrap();
        assert_eq!(docs, gen_multi(20, 4, (3, 6), 50, 1, 0).unwrap());
        for d in &docs {
            assert!((3..=6).contains(&d.len()));
            let tokens = d.token_ids().unwrap();
            assert_eq!(tokens[0], 0);
            assert!(tokens[1..].iter().all(|&t| (1..50).contains(&t)));
        }
        let sparse = gen_sparse(30, 100, 10, 2, 0).unwrap();
        assert_eq!(sparse.len(), 30);
        assert!(sparse.iter().all(|d| !d.vector.is_empty() && d.vector.len() <= 10));
        assert!(gen_multi(1, 0, (1, 1), 5, 0, 0).is_err());
    }
}
