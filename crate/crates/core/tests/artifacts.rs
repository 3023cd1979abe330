use nirkit::harness::{build_artifact, gen_synthetic, IndexConfig, IndexKind, SynthSpec};
use nirkit::index::{AnyIndex, FlatIndex, HnswIndex, HnswParams};
use nirkit::{Artifact, Artifact32, EmbeddingSet, Error, ErrorClass, Metric, VectorIndex};

const KINDS: [IndexKind; 6] = [
    IndexKind::Flat,
    IndexKind::Lsh,
    IndexKind::Ivf,
    IndexKind::Pq,
    IndexKind::Ivfpq,
    IndexKind::Hnsw,
];

/// The inner-product transform appends one coordinate, so the 8-d test
/// vectors become 9-d and need a part count dividing 9.
fn small_config(kind: IndexKind, metric: Metric) -> IndexConfig {
    IndexConfig {
        metric,
        lists: 8,
        probes: 3,
        parts: if metric == Metric::InnerProduct { 3 } else { 4 },
        centroids: 16,
        iters: 6,
        ..IndexConfig::of_kind(kind)
    }
}

fn collection() -> (EmbeddingSet<f64>, EmbeddingSet<f64>) {
    let data = gen_synthetic(&SynthSpec::new(600, 8, 6, 3)).unwrap();
    let queries = data.queries(12).unwrap();
    (data.docs, queries)
}

#[test]
fn every_kind_survives_a_file_round_trip() {
    let (docs, queries) = collection();
    let dir = tempfile::tempdir().unwrap();
    for metric in [Metric::Euclidean, Metric::InnerProduct] {
        for kind in KINDS {
            let built = build_artifact(&docs, &small_config(kind, metric), 11).unwrap();
            let path = dir.path().join(format!("{kind:?}-{metric:?}.idx"));
            built.save(&path).unwrap();
            let loaded = Artifact::load(&path).unwrap();
            assert_eq!(loaded.index.kind(), built.index.kind());
            assert_eq!(loaded.transform.is_some(), metric == Metric::InnerProduct && kind != IndexKind::Flat);
            assert_eq!(loaded.to_bytes().unwrap(), std::fs::read(&path).unwrap(), "{kind:?} re-serialises identically");
            for q in queries.rows() {
                let a = built.search_with_stats(q, 7).unwrap();
                let b = loaded.search_with_stats(q, 7).unwrap();
                let ids = |h: &[nirkit::ScoredHit]| h.iter().map(|x| x.doc_id).collect::<Vec<_>>();
                assert_eq!(ids(&a.hits), ids(&b.hits), "{kind:?} {metric:?}");
                assert_eq!(a.candidates, b.candidates);
            }
        }
    }
}

#[test]
fn identical_builds_are_byte_identical() {
    let (docs, _) = collection();
    for kind in KINDS {
        let cfg = small_config(kind, Metric::Euclidean);
        let a = build_artifact(&docs, &cfg, 5).unwrap().to_bytes().unwrap();
        let b = build_artifact(&docs, &cfg, 5).unwrap().to_bytes().unwrap();
        assert_eq!(a, b, "{kind:?}");
    }
}

#[test]
fn single_precision_artifacts_round_trip() {
    let (docs, queries) = collection();
    let docs32 = EmbeddingSet::<f32>::from_flat(docs.ids().to_vec(), docs.dim(), docs.data().iter().map(|x| *x as f32).collect()).unwrap();
    let hnsw = HnswIndex::build(docs32.clone(), HnswParams::default()).unwrap();
    for index in [AnyIndex::Flat(FlatIndex::build(docs32, Metric::Euclidean)), AnyIndex::Hnsw(hnsw)] {
        let art = Artifact32::new(index);
        let back = Artifact32::read_from(&mut art.to_bytes().unwrap().as_slice()).unwrap();
        let q: Vec<f32> = queries.row(0).iter().map(|x| *x as f32).collect();
        assert_eq!(art.search(&q, 5).unwrap(), back.search(&q, 5).unwrap());
    }
}

#[test]
fn damaged_files_are_rejected() {
    let (docs, _) = collection();
    let bytes = build_artifact(&docs, &small_config(IndexKind::Ivf, Metric::Euclidean), 1)
        .unwrap()
        .to_bytes()
        .unwrap();

    let mut bad_magic = bytes.clone();
    bad_magic[..4].copy_from_slice(b"ZZZ9");
    assert!(matches!(Artifact::read_from(&mut bad_magic.as_slice()), Err(Error::Format(_))));

    let truncated = &bytes[..bytes.len() - 9];
    let err = Artifact::read_from(&mut &truncated[..]).unwrap_err();
    assert_eq!(err.class(), ErrorClass::Data);

    let mut trailing = bytes.clone();
    trailing.push(0);
    assert!(matches!(Artifact::read_from(&mut trailing.as_slice()), Err(Error::Format(_))));
}

#[test]
fn missing_file_error_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("absent.idx");
    let err = Artifact::load(&path).map_err(|e| e.in_file(&path)).unwrap_err();
    assert!(err.to_string().contains("absent.idx"));
    assert_eq!(err.class(), ErrorClass::Data);
}
