use std::collections::BTreeSet;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use nirkit::formats::{
    load_dense, load_matrix, load_multi, load_sparse, read_dense_jsonl, read_multi_jsonl, save_dense, save_multi, save_sparse,
    with_path, write_dense_jsonl, write_multi_jsonl, DENSE_MAGIC, MULTI_MAGIC,
};
use nirkit::harness::{
    build_artifact, gen_multi, gen_sparse, gen_synthetic, load_dense_any, run_bench, run_pipeline, BenchSpec, EvalConfig, IndexConfig,
    IndexKind, RunConfig, SynthSpec,
};
use nirkit::index::{FlatIndex, Width};
use nirkit::late_interaction::{
    brute_force_sum_maxsim, coil_score, maxsim_score, poly_score, two_stage_search, CoilProjections, MultiDocStore,
};
use nirkit::learning::{ce_triple_loss, nce_loss, read_score_rows, read_triples};
use nirkit::sparse::ImpactIndex;
use nirkit::topk::select_top_k;
use nirkit::{Error, IndexArtifact, Metric, MultiEmbedding, Result, ScoredHit, VectorIndex};

use crate::{
    BenchArgs, BuildArgs, BuildKind, ConvertArgs, DenseSearchArgs, EvalArgs, GenArgs, IndexOverrides, LossCommand, MultiSearchArgs, Scorer,
    SparseMode, SparseSearchArgs,
};

/// The parts of a TOML file read by `build` and `bench`; other tables are
/// ignored so one file can also drive `eval`.
#[derive(Debug, Default, Deserialize)]
#[serde(default)]
struct PartialConfig {
    seed: Option<u64>,
    index: Option<IndexConfig>,
    eval: Option<EvalConfig>,
}

fn read_partial_config(path: &Path) -> Result<PartialConfig> {
    with_path(path, || {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read config: {e}")))?;
        toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))
    })
}

fn apply_overrides(cfg: &mut IndexConfig, o: &IndexOverrides) {
    if let Some(m) = o.metric {
        cfg.metric = m.into();
    }
    let fields = [
        (&mut cfg.lists, o.lists),
        (&mut cfg.probes, o.probes),
        (&mut cfg.parts, o.parts),
        (&mut cfg.centroids, o.centroids),
        (&mut cfg.iters, o.iters),
        (&mut cfg.tables, o.tables),
        (&mut cfg.projections, o.projections),
        (&mut cfg.max_degree, o.max_degree),
        (&mut cfg.ef_construction, o.ef_construction),
        (&mut cfg.ef_search, o.ef_search),
    ];
    for (slot, value) in fields {
        if let Some(v) = value {
            *slot = v;
        }
    }
    if let Some(w) = o.width {
        cfg.width = Width::Absolute(w);
    }
    if let Some(s) = o.width_scale {
        cfg.width = Width::MedianScaled(s);
    }
}

fn dense_kind(kind: BuildKind) -> Option<IndexKind> {
    Some(match kind {
        BuildKind::Flat => IndexKind::Flat,
        BuildKind::Lsh => IndexKind::Lsh,
        BuildKind::Ivf => IndexKind::Ivf,
        BuildKind::Pq => IndexKind::Pq,
        BuildKind::Ivfpq => IndexKind::Ivfpq,
        BuildKind::Hnsw => IndexKind::Hnsw,
        BuildKind::Impact => return None,
    })
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    with_path(path, || Ok(fs::write(path, bytes)?))
}

fn create_dir(path: &Path) -> Result<()> {
    with_path(path, || Ok(fs::create_dir_all(path)?))
}

/// Writes to standard output; a reader that closed the pipe early is not an
/// error.
fn stdout_write(bytes: &[u8]) -> Result<()> {
    let mut out = std::io::stdout().lock();
    match out.write_all(bytes).and_then(|()| out.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn print_json<S: Serialize>(value: &S) -> Result<()> {
    stdout_write((serde_json::to_string_pretty(value)? + "\n").as_bytes())
}

#[derive(Serialize)]
struct QueryResult<'a> {
    query: u64,
    hits: &'a [ScoredHit],
}

/// One JSON line per query, to `out` or standard output.
fn emit_results(out: Option<&Path>, results: &[(u64, Vec<ScoredHit>)]) -> Result<()> {
    let mut text = String::new();
    for (query, hits) in results {
        text.push_str(&serde_json::to_string(&QueryResult { query: *query, hits })?);
        text.push('\n');
    }
    match out {
        Some(path) => write_file(path, text.as_bytes()),
        None => stdout_write(text.as_bytes()),
    }
}

pub fn gen(a: GenArgs) -> Result<()> {
    let spec = SynthSpec {
        n: a.n,
        dim: a.dim,
        clusters: a.clusters,
        seed: a.seed,
        spread: a.spread,
    };
    let data = gen_synthetic(&spec)?;
    let queries = data.queries(a.queries)?;
    create_dir(&a.out)?;
    let mut written = Vec::new();
    let mut record = |name: &str| {
        let path = a.out.join(name);
        written.push(path.display().to_string());
        path
    };
    let path = record("docs.vxe");
    save_dense(&path, &data.docs).map_err(|e| e.in_file(&path))?;
    let path = record("queries.vxe");
    save_dense(&path, &queries).map_err(|e| e.in_file(&path))?;
    let path = record("truth.json");
    write_file(&path, (serde_json::to_string(&data.truth)? + "\n").as_bytes())?;
    if a.multi > 0 {
        let rows = (a.min_tokens, a.max_tokens);
        let docs = gen_multi(a.multi, a.dim, rows, a.vocab, a.seed, 0)?;
        let queries = gen_multi(a.multi_queries, a.dim, rows, a.vocab, a.seed, 1)?;
        let path = record("multi_docs.vxm");
        save_multi(&path, &docs).map_err(|e| e.in_file(&path))?;
        let path = record("multi_queries.vxm");
        save_multi(&path, &queries).map_err(|e| e.in_file(&path))?;
    }
    if a.sparse > 0 {
        let docs = gen_sparse(a.sparse, a.vocab, a.terms, a.seed, 0)?;
        let queries = gen_sparse(a.sparse_queries, a.vocab, a.terms.min(8), a.seed, 1)?;
        let path = record("sparse_docs.jsonl");
        save_sparse(&path, &docs).map_err(|e| e.in_file(&path))?;
        let path = record("sparse_queries.jsonl");
        save_sparse(&path, &queries).map_err(|e| e.in_file(&path))?;
    }
    print_json(&serde_json::json!({ "written": written }))
}

pub fn build(a: BuildArgs) -> Result<()> {
    let file = match &a.config {
        Some(path) => read_partial_config(path)?,
        None => PartialConfig::default(),
    };
    let mut cfg = file.index.unwrap_or_default();
    let seed = a.seed.or(file.seed).unwrap_or(0);
    match a.kind {
        Some(BuildKind::Impact) => {
            let docs = load_sparse(&a.docs)?;
            let index = ImpactIndex::build(&docs)?;
            index.save(&a.out).map_err(|e| e.in_file(&a.out))?;
            return print_json(&serde_json::json!({
                "kind": "impact",
                "docs": index.doc_count(),
                "terms": index.num_terms(),
                "postings": index.total_postings(),
                "bytes": index.to_bytes()?.len(),
            }));
        }
        Some(kind) => cfg.kind = dense_kind(kind).expect("impact handled above"),
        None => {}
    }
    apply_overrides(&mut cfg, &a.index);
    let docs = load_dense_any(&a.docs)?;
    let artifact = build_artifact(&docs, &cfg, seed)?;
    artifact.save(&a.out).map_err(|e| e.in_file(&a.out))?;
    print_json(&serde_json::json!({
        "kind": artifact.index.kind(),
        "metric": cfg.metric,
        "seed": seed,
        "docs": docs.len(),
        "dim": docs.dim(),
        "bytes": artifact.to_bytes()?.len(),
    }))
}

pub fn search_dense(a: DenseSearchArgs) -> Result<()> {
    let mut artifact: IndexArtifact<f64> = IndexArtifact::load(&a.index).map_err(|e| e.in_file(&a.index))?;
    if let Some(b) = a.breadth {
        artifact.index.set_search_breadth(b);
    }
    let queries = load_dense_any(&a.queries)?;
    let results = queries
        .iter()
        .map(|(id, q)| Ok((id, artifact.search(q, a.k)?)))
        .collect::<Result<Vec<_>>>()?;
    emit_results(a.out.as_deref(), &results)
}

fn load_multi_any(path: &Path) -> Result<Vec<MultiEmbedding<f64>>> {
    if is_jsonl(path) {
        with_path(path, || read_multi_jsonl(BufReader::new(File::open(path)?)))
    } else {
        load_multi(path)
    }
}

fn is_jsonl(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "jsonl")
}

fn coil_projections(a: &MultiSearchArgs, dim: usize) -> Result<CoilProjections<f64>> {
    match (&a.cls_proj, &a.tok_proj, a.tok_dim) {
        (Some(cls), Some(tok), _) => CoilProjections::new(load_matrix(cls)?, load_matrix(tok)?),
        (_, _, Some(t)) => CoilProjections::truncating(dim, t),
        _ => Err(Error::Config("coil needs --cls-proj and --tok-proj, or --tok-dim".into())),
    }
}

pub fn search_multi(a: MultiSearchArgs) -> Result<()> {
    let docs = load_multi_any(&a.docs)?;
    let queries = load_multi_any(&a.queries)?;
    let store = MultiDocStore::new(docs)?;
    let score_all = |f: &dyn Fn(&MultiEmbedding<f64>) -> Result<f64>| -> Result<Vec<ScoredHit>> {
        let scored = store.docs().iter().map(|d| Ok((d.id(), f(d)?))).collect::<Result<Vec<_>>>()?;
        Ok(select_top_k(scored, a.k))
    };
    let mut results = Vec::with_capacity(queries.len());
    match a.scorer {
        Scorer::Poly | Scorer::Maxsim => {
            for q in &queries {
                let phi = q.row(0);
                let hits = if a.scorer == Scorer::Poly {
                    score_all(&|d| poly_score(phi, d, a.m))?
                } else {
                    score_all(&|d| maxsim_score(phi, d, a.m))?
                };
                results.push((q.id(), hits));
            }
        }
        Scorer::Summaxsim => match a.kprime {
            Some(kp) => {
                let ann = FlatIndex::build(store.token_set()?, Metric::InnerProduct);
                for q in &queries {
                    results.push((q.id(), two_stage_search(&store, &ann, q, kp, a.k)?));
                }
            }
            None => {
                for q in &queries {
                    results.push((q.id(), brute_force_sum_maxsim(&store, q, a.k)?));
                }
            }
        },
        Scorer::Coil => {
            let proj = coil_projections(&a, store.dim())?;
            for q in &queries {
                results.push((q.id(), score_all(&|d| coil_score(q, d, &proj))?));
            }
        }
    }
    emit_results(a.out.as_deref(), &results)
}

pub fn search_sparse(a: SparseSearchArgs) -> Result<()> {
    let index = ImpactIndex::load(&a.index).map_err(|e| e.in_file(&a.index))?;
    let queries = load_sparse(&a.queries)?;
    let mut results = Vec::with_capacity(queries.len());
    for q in &queries {
        let hits = match a.mode {
            SparseMode::Impacts => index.score_sum_impacts(&q.vector.iter().map(|(t, _)| t).collect::<Vec<_>>(), a.k)?,
            SparseMode::Unicoil => index.score_unicoil(&q.vector.iter().collect::<Vec<_>>(), a.k)?,
        };
        results.push((q.id, hits));
    }
    emit_results(a.out.as_deref(), &results)
}

pub fn eval(a: EvalArgs) -> Result<()> {
    let mut cfg = RunConfig::load(&a.config)?;
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    if a.report.is_some() {
        cfg.output.report = a.report;
    }
    apply_overrides(&mut cfg.index, &a.index);
    let (report, _) = run_pipeline(&cfg)?;
    print_json(&report)
}

pub fn bench(a: BenchArgs) -> Result<()> {
    let file = match &a.config {
        Some(path) => read_partial_config(path)?,
        None => PartialConfig::default(),
    };
    let base = file.index.unwrap_or_default();
    let indexes = a
        .kinds
        .iter()
        .map(|name| {
            let mut cfg = base.clone();
            cfg.kind = IndexKind::parse(name.trim())?;
            apply_overrides(&mut cfg, &a.index);
            Ok(cfg)
        })
        .collect::<Result<Vec<_>>>()?;
    let spec = BenchSpec {
        synth: SynthSpec::new(a.n, a.dim, a.clusters, a.seed),
        queries: a.queries,
        indexes,
        eval: file.eval.unwrap_or_default(),
    };
    let runs = run_bench(&spec)?;
    let reports: Vec<_> = runs.iter().map(|(r, _)| r).collect();
    if let Some(dir) = &a.out {
        create_dir(dir)?;
        for (report, artifact) in &runs {
            let name = serde_json::to_value(report.index)?;
            let path = dir.join(format!("{}.idx", name.as_str().unwrap_or("index")));
            artifact.save(&path).map_err(|e| e.in_file(&path))?;
        }
        write_file(&dir.join("report.json"), (serde_json::to_string_pretty(&reports)? + "\n").as_bytes())?;
    }
    print_json(&reports)
}

enum Shape {
    Dense,
    Multi,
}

fn binary_shape(path: &Path) -> Result<Shape> {
    with_path(path, || {
        let mut magic = [0u8; 4];
        File::open(path)?.read_exact(&mut magic)?;
        match magic {
            DENSE_MAGIC => Ok(Shape::Dense),
            MULTI_MAGIC => Ok(Shape::Multi),
            other => Err(Error::Format(format!("unknown magic {:?}", String::from_utf8_lossy(&other)))),
        }
    })
}

fn extension_shape(path: &Path) -> Result<Shape> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("vxe") => Ok(Shape::Dense),
        Some("vxm") => Ok(Shape::Multi),
        _ => Err(Error::Config(format!(
            "cannot infer the embedding format of {}; use a .vxe or .vxm extension",
            path.display()
        ))),
    }
}

pub fn convert(a: ConvertArgs) -> Result<()> {
    let (src, dst) = (a.input.as_path(), a.output.as_path());
    let shape = if is_jsonl(src) { extension_shape(dst)? } else { binary_shape(src)? };
    let to_jsonl = is_jsonl(dst);
    let open_out = || -> Result<BufWriter<File>> { Ok(BufWriter::new(File::create(dst)?)) };
    match shape {
        Shape::Dense => {
            let set = if is_jsonl(src) {
                with_path(src, || read_dense_jsonl::<_, f64>(BufReader::new(File::open(src)?)))?
            } else {
                load_dense::<f64>(src)?
            };
            if to_jsonl {
                with_path(dst, || {
                    let mut w = open_out()?;
                    write_dense_jsonl(&mut w, &set)?;
                    Ok(w.flush()?)
                })?;
            } else {
                save_dense(dst, &set).map_err(|e| e.in_file(dst))?;
            }
            print_json(&serde_json::json!({ "records": set.len(), "dim": set.dim() }))
        }
        Shape::Multi => {
            let docs = load_multi_any(src)?;
            if to_jsonl {
                with_path(dst, || {
                    let mut w = open_out()?;
                    write_multi_jsonl(&mut w, &docs)?;
                    Ok(w.flush()?)
                })?;
            } else {
                save_multi(dst, &docs).map_err(|e| e.in_file(dst))?;
            }
            print_json(&serde_json::json!({ "records": docs.len() }))
        }
    }
}

pub fn losses(c: LossCommand) -> Result<()> {
    match c {
        LossCommand::Nce { scores } => {
            let rows = with_path(&scores, || read_score_rows(BufReader::new(File::open(&scores)?)))?;
            let matrix: Vec<&[f64]> = rows.iter().map(|r| r.scores.as_slice()).collect();
            let loss: f64 = nce_loss(&matrix).map_err(|e| e.in_file(&scores))?;
            print_json(&serde_json::json!({ "loss": loss, "rows": rows.len() }))
        }
        LossCommand::Ce { scores } => {
            let rows = with_path(&scores, || read_score_rows(BufReader::new(File::open(&scores)?)))?;
            let pairs = rows
                .iter()
                .map(|r| match r.scores.as_slice() {
                    [pos, neg] => Ok((*pos, *neg)),
                    other => Err(Error::Arity(format!("query {} has {} scores, expected 2", r.q, other.len()))),
                })
                .collect::<Result<Vec<_>>>()
                .map_err(|e| e.in_file(&scores))?;
            let loss = ce_triple_loss(&pairs).map_err(|e| e.in_file(&scores))?;
            print_json(&serde_json::json!({ "loss": loss, "rows": rows.len() }))
        }
        LossCommand::Triples { triples } => {
            let parsed = with_path(&triples, || read_triples(BufReader::new(File::open(&triples)?)))?;
            let queries: BTreeSet<u64> = parsed.iter().map(|t| t.query_id).collect();
            print_json(&serde_json::json!({ "triples": parsed.len(), "queries": queries.len() }))
        }
    }
}
