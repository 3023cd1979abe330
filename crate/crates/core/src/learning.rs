//! Relevance heads, ranking losses and negative samplers.
//!
//! Everything here consumes externally produced scores; no gradients are
//! computed.

use std::collections::HashSet;
use std::io::{BufRead, Write};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::index::VectorIndex;
use crate::kernels::log_sum_exp;
use crate::scalar::Real;
use crate::types::ScoredHit;

/// Probability of class 1 under a softmax over two logits.
pub fn head_binary<T: Real>(z0: T, z1: T) -> T {
    T::one() / (T::one() + (z0 - z1).exp())
}

/// Single-logit head: the logit itself is the relevance score.
pub fn head_scalar<T: Real>(z: T) -> T {
    z
}

/// `P(true)` from the logits of the "false" and "true" output tokens.
pub fn head_two_token<T: Real>(z_false: T, z_true: T) -> T {
    head_binary(z_false, z_true)
}

/// Mean binary cross-entropy over `(s_pos, s_neg)` pairs:
/// `(1/2|T|) Σ (-ln s_pos - ln(1 - s_neg))`.
pub fn ce_triple_loss<T: Real>(pairs: &[(T, T)]) -> Result<T> {
    if pairs.is_empty() {
        return Err(Error::Arity("no triples to score".into()));
    }
    let mut total = T::zero();
    for (i, &(pos, neg)) in pairs.iter().enumerate() {
        for s in [pos, neg] {
            if !(s > T::zero() && s < T::one()) {
                return Err(Error::Domain(format!("score {s} of triple {i} is outside (0, 1)")));
            }
        }
        total += -pos.ln() - (T::one() - neg).ln();
    }
    Ok(total / T::of(2.0 * pairs.len() as f64))
}

fn row_nll<T: Real>(row: &[T], positive: usize) -> Result<T> {
    if let Some(pos) = row.iter().position(|x| !x.is_finite()) {
        return Err(Error::NonFinite(pos));
    }
    Ok(log_sum_exp(row) - row[positive])
}

/// Mean over rows of `-ln softmax(row)[0]`; position 0 holds the positive.
pub fn nce_loss<T: Real, R: AsRef<[T]>>(rows: &[R]) -> Result<T> {
    if rows.is_empty() {
        return Err(Error::Arity("no score rows".into()));
    }
    let mut total = T::zero();
    for row in rows {
        let row = row.as_ref();
        if row.len() < 2 {
            return Err(Error::Arity(format!("a score row needs at least 2 entries, got {}", row.len())));
        }
        total += row_nll(row, 0)?;
    }
    Ok(total / T::of(rows.len() as f64))
}

/// Negative log-probability of `positive` under a softmax over every
/// supplied document score. Costs one pass over the whole collection.
pub fn full_softmax_loss<T: Real>(scores: &[T], positive: usize) -> Result<T> {
    if positive >= scores.len() {
        return Err(Error::Arity(format!("positive index {positive} outside {} scores", scores.len())));
    }
    row_nll(scores, positive)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Triple {
    pub query_id: u64,
    pub pos_doc_id: u64,
    pub neg_doc_id: u64,
}

impl Triple {
    pub fn new(query_id: u64, pos_doc_id: u64, neg_doc_id: u64) -> Result<Self> {
        if pos_doc_id == neg_doc_id {
            return Err(Error::Invalid(format!("triple for query {query_id} uses {pos_doc_id} as both positive and negative")));
        }
        Ok(Self {
            query_id,
            pos_doc_id,
            neg_doc_id,
        })
    }
}

/// A query with `k ≥ 2` unique documents, the first being the positive.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NceGroup {
    pub query_id: u64,
    pub doc_ids: Vec<u64>,
}

impl NceGroup {
    pub fn new(query_id: u64, doc_ids: Vec<u64>) -> Result<Self> {
        if doc_ids.len() < 2 {
            return Err(Error::Arity(format!("a contrastive group needs at least 2 documents, got {}", doc_ids.len())));
        }
        let mut seen = HashSet::with_capacity(doc_ids.len());
        if let Some(dup) = doc_ids.iter().find(|d| !seen.insert(**d)) {
            return Err(Error::Invalid(format!("document {dup} repeated in the group of query {query_id}")));
        }
        Ok(Self { query_id, doc_ids })
    }

    pub fn positive(&self) -> u64 {
        self.doc_ids[0]
    }

    pub fn negatives(&self) -> &[u64] {
        &self.doc_ids[1..]
    }
}

/// `count` distinct ids drawn uniformly from `corpus` minus `exclude`.
pub fn sample_random(corpus: &[u64], count: usize, seed: u64, exclude: &[u64]) -> Result<Vec<u64>> {
    let excluded: HashSet<u64> = exclude.iter().copied().collect();
    let pool: Vec<u64> = corpus.iter().copied().filter(|id| !excluded.contains(id)).collect();
    if count > pool.len() {
        return Err(Error::Cardinality(format!("{count} negatives requested from {} eligible documents", pool.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(sample(&mut rng, pool.len(), count).into_iter().map(|i| pool[i]).collect())
}

/// For each `(query, positive)` row, the other rows' positives become its
/// negatives.
pub fn sample_in_batch(batch: &[(u64, u64)]) -> Result<Vec<NceGroup>> {
    if batch.len() < 2 {
        return Err(Error::Batch(format!("in-batch negatives need at least 2 rows, got {}", batch.len())));
    }
    let mut seen = HashSet::with_capacity(batch.len());
    if let Some((_, dup)) = batch.iter().find(|(_, p)| !seen.insert(*p)) {
        return Err(Error::Batch(format!("positive {dup} appears twice in the batch")));
    }
    Ok(batch
        .iter()
        .enumerate()
        .map(|(i, &(query_id, pos))| {
            let mut doc_ids = Vec::with_capacity(batch.len());
            doc_ids.push(pos);
            doc_ids.extend(batch.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, r)| r.1));
            NceGroup { query_id, doc_ids }
        })
        .collect())
}

/// Highest-ranked non-positive ids from a retriever asked for
/// `count + |positives|` results, in rank order.
pub fn sample_hard_negatives<F>(retrieve: F, positives: &[u64], count: usize) -> Result<Vec<u64>>
where
    F: FnOnce(usize) -> Result<Vec<ScoredHit>>,
{
    let positive: HashSet<u64> = positives.iter().copied().collect();
    let hits = retrieve(count + positive.len())?;
    let picked: Vec<u64> = hits
        .into_iter()
        .map(|h| h.doc_id)
        .filter(|id| !positive.contains(id))
        .take(count)
        .collect();
    if picked.len() < count {
        return Err(Error::Shortfall {
            wanted: count,
            partial: picked,
        });
    }
    Ok(picked)
}

/// [`sample_hard_negatives`] using a dense index as the retriever.
pub fn hard_negatives_from_index<T: Real>(index: &dyn VectorIndex<T>, query: &[T], positives: &[u64], count: usize) -> Result<Vec<u64>> {
    sample_hard_negatives(|depth| index.search(query, depth.max(1)), positives, count)
}

/// Parses `query_id<TAB>pos_id<TAB>neg_id` lines; blank lines are skipped.
pub fn read_triples<R: BufRead>(r: R) -> Result<Vec<Triple>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.trim_end_matches('\r').split('\t').collect();
        let parse = |s: &str| {
            s.trim()
                .parse::<u64>()
                .map_err(|e| Error::Format(format!("line {}: bad id {s:?}: {e}", i + 1)))
        };
        if fields.len() != 3 {
            return Err(Error::Format(format!("line {}: expected 3 tab-separated fields, got {}", i + 1, fields.len())));
        }
        let triple = Triple::new(parse(fields[0])?, parse(fields[1])?, parse(fields[2])?)
            .map_err(|e| Error::Format(format!("line {}: {e}", i + 1)))?;
        out.push(triple);
    }
    Ok(out)
}

pub fn write_triples<W: Write>(w: &mut W, triples: &[Triple]) -> Result<()> {
    for t in triples {
        writeln!(w, "{}\t{}\t{}", t.query_id, t.pos_doc_id, t.neg_doc_id)?;
    }
    Ok(())
}

/// One row of a score matrix: the positive's score first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreRow {
    pub q: u64,
    pub scores: Vec<f64>,
}

pub fn read_score_rows<R: BufRead>(r: R) -> Result<Vec<ScoreRow>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row: ScoreRow = serde_json::from_str(&line).map_err(|e| Error::Format(format!("line {}: {e}", i + 1)))?;
        out.push(row);
    }
    Ok(out)
}

pub fn write_score_rows<W: Write>(w: &mut W, rows: &[ScoreRow]) -> Result<()> {
    for row in rows {
        serde_json::to_writer(&mut *w, row)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::index::{FlatIndex, Metric};
    use crate::types::EmbeddingSet;
    use proptest::prelude::*;
    use rand::Rng;

    fn lse_oracle(row: &[f64]) -> f64 {
        let m = row.iter().cloned().fold(f64::MIN, f64::max);
        m + row.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
    }

    #[test]
    fn head_closed_forms() {
        assert_eq!(head_binary(0.0, 0.0), 0.5);
        assert!((head_binary(1.5, 1.5 + 9f64.ln()) - 0.9).abs() < 1e-12);
        assert_eq!(head_scalar(-2.5), -2.5);
        assert_eq!(head_two_token(3.0, 3.0), 0.5);
        assert!((head_two_token(0.0, 3f64.ln()) - 0.75).abs() < 1e-12);
        assert!(head_two_token(0.0, 1.0) < head_two_token(0.0, 2.0));
        assert!((head_binary(800.0f64, -800.0)).abs() < 1e-300);
        assert_eq!(head_binary(-800.0, 800.0), 1.0);
    }

    #[test]
    fn ce_triple_examples() {
        assert!((ce_triple_loss(&[(0.5, 0.5)]).unwrap() - 2f64.ln()).abs() < 1e-12);
        assert!(ce_triple_loss(&[(1.0 - 1e-12, 1e-12)]).unwrap() < 1e-11);
        let pairs = [(0.7f64, 0.2), (0.9, 0.4)];
        let doubled = [(0.7f64, 0.2), (0.9, 0.4), (0.7, 0.2), (0.9, 0.4)];
        assert!((ce_triple_loss(&pairs).unwrap() - ce_triple_loss(&doubled).unwrap()).abs() < 1e-15);
        assert!(matches!(ce_triple_loss(&[(1.0, 0.5)]), Err(Error::Domain(_))));
        assert!(matches!(ce_triple_loss(&[(0.5, 0.0)]), Err(Error::Domain(_))));
        assert!(matches!(ce_triple_loss::<f64>(&[]), Err(Error::Arity(_))));
    }

    #[test]
    fn nce_examples() {
        assert!((nce_loss(&[[0.3; 4]]).unwrap() - 4f64.ln()).abs() < 1e-12);
        assert!(nce_loss(&[[1000.0, 0.0, 0.0]]).unwrap() < 1e-300);
        let a: f64 = nce_loss(&[[2.0, 0.5, -1.0, 3.0]]).unwrap();
        let b = nce_loss(&[[2.0, 3.0, 0.5, -1.0]]).unwrap();
        assert!((a - b).abs() < 1e-12);
        assert!(matches!(nce_loss(&[[1.0]]), Err(Error::Arity(_))));
        assert!(matches!(nce_loss(&[[1.0, f64::NAN]]), Err(Error::NonFinite(1))));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let k = rng.random_range(2..10);
            let row: Vec<f64> = (0..k).map(|_| rng.random_range(-20.0..20.0)).collect();
            assert!((nce_loss(&[&row]).unwrap() - (lse_oracle(&row) - row[0])).abs() < 1e-9);
        }
    }

    #[test]
    fn full_softmax_matches_nce_on_the_same_row() {
        let row = [1.0f64, -2.0, 0.5, 4.0];
        assert!((full_softmax_loss(&row, 0).unwrap() - nce_loss(&[row]).unwrap()).abs() < 1e-15);
        assert!(full_softmax_loss(&row, 4).is_err());
    }

    #[test]
    fn random_sampler() {
        assert_eq!(
            {
                let mut s = sample_random(&[1, 2, 3], 2, 9, &[2]).unwrap();
                s.sort();
                s
            },
            vec![1, 3]
        );
        let corpus: Vec<u64> = (0..50).collect();
        assert_eq!(sample_random(&corpus, 5, 7, &[]).unwrap(), sample_random(&corpus, 5, 7, &[]).unwrap());
        assert!(matches!(sample_random(&[1, 2], 2, 0, &[1]), Err(Error::Cardinality(_))));
        let picked = sample_random(&corpus, 50, 3, &[]).unwrap();
        assert_eq!(picked.iter().collect::<HashSet<_>>().len(), 50);
    }

    #[test]
    fn random_sampler_is_uniform() {
        let corpus: Vec<u64> = (0..10).collect();
        let mut counts = [0usize; 10];
        let draws = 100_000;
        for seed in 0..draws as u64 {
            counts[sample_random(&corpus, 1, seed, &[]).unwrap()[0] as usize] += 1;
        }
        let sigma = (draws as f64 * 0.1 * 0.9).sqrt();
        for c in counts {
            assert!((c as f64 - draws as f64 * 0.1).abs() <= 3.0 * sigma, "{counts:?}");
        }
    }

    #[test]
    fn in_batch_groups() {
        let two = sample_in_batch(&[(1, 10), (2, 20)]).unwrap();
        assert_eq!(two[0].doc_ids, vec![10, 20]);
        assert_eq!(two[1].doc_ids, vec![20, 10]);
        assert!(matches!(sample_in_batch(&[(1, 10)]), Err(Error::Batch(_))));
        assert!(matches!(sample_in_batch(&[(1, 10), (2, 10)]), Err(Error::Batch(_))));
        let batch: Vec<(u64, u64)> = (0..8).map(|i| (i, 100 + i)).collect();
        for (i, g) in sample_in_batch(&batch).unwrap().iter().enumerate() {
            assert_eq!(g.doc_ids.len(), 8);
            assert_eq!(g.positive(), 100 + i as u64);
            assert!(NceGroup::new(g.query_id, g.doc_ids.clone()).is_ok());
        }
    }

    #[test]
    fn hard_negatives() {
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
        let err = sample_hard_negatives(|_| Ok(hits(&[1, 2])), &[1, 2], 1).unwrap_err();
        assert!(matches!(err, Error::Shortfall { wanted: 1, ref partial } if partial.is_empty()));
        assert_eq!(sample_hard_negatives(|_| Ok(hits(&[4, 7, 9])), &[4], 1).unwrap(), vec![7]);
        let err = sample_hard_negatives(|_| Ok(hits(&[4, 7])), &[4], 3).unwrap_err();
        assert!(matches!(err, Error::Shortfall { wanted: 3, ref partial } if partial == &[7]));
    }

    #[test]
    fn hard_negatives_are_closer_than_random_ones() {
        // docs on a line; the query sits at the origin next to the positive
        let data: Vec<f64> = (0..200).flat_map(|i| [i as f64, 0.0]).collect();
        let docs = EmbeddingSet::with_sequential_ids(2, data).unwrap();
        let ix = FlatIndex::build(docs.clone(), Metric::Euclidean);
        let q = [0.0, 0.0];
        let hard = hard_negatives_from_index(&ix, &q, &[0], 10).unwrap();
        assert_eq!(hard, (1..=10).collect::<Vec<u64>>());
        let random = sample_random(docs.ids(), 10, 4, &[0]).unwrap();
        let sim = |ids: &[u64]| ids.iter().map(|&i| -(i as f64).powi(2)).sum::<f64>() / ids.len() as f64;
        assert!(sim(&hard) > sim(&random));
    }

    #[test]
    fn triples_and_score_rows_roundtrip() {
        let triples = vec![Triple::new(1, 2, 3).unwrap(), Triple::new(4, 5, 6).unwrap()];
        let mut buf = Vec::new();
        write_triples(&mut buf, &triples).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap(), "1\t2\t3\n4\t5\t6\n");
        assert_eq!(read_triples(buf.as_slice()).unwrap(), triples);
        assert!(read_triples("1\t2\t2\n".as_bytes()).is_err());
        let err = read_triples("1\t2\t3\n1\t2\n".as_bytes()).unwrap_err();
        assert!(err.to_string().contains("line 2"));
        let rows = vec![ScoreRow { q: 3, scores: vec![1.5, -0.25] }];
        let mut buf = Vec::new();
        write_score_rows(&mut buf, &rows).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap(), "{\"q\":3,\"scores\":[1.5,-0.25]}\n");
        assert_eq!(read_score_rows(buf.as_slice()).unwrap(), rows);
    }

    proptest! {
        #[test]
        fn nce_is_shift_invariant(row in prop::collection::vec(-30.0f64..30.0, 2..12), c in -100.0f64..100.0) {
            let shifted: Vec<f64> = row.iter().map(|x| x + c).collect();
            prop_assert!((nce_loss(&[&row]).unwrap() - nce_loss(&[&shifted]).unwrap()).abs() < 1e-9);
        }

        #[test]
        fn ce_triple_is_monotone(pos in 0.01f64..0.98, neg in 0.02f64..0.99, step in 0.001f64..0.01) {
            let base = ce_triple_loss(&[(pos, neg)]).unwrap();
            prop_assert!(ce_triple_loss(&[(pos + step, neg)]).unwrap() < base);
            prop_assert!(ce_triple_loss(&[(pos, neg - step)]).unwrap() < base);
        }

        #[test]
        fn binary_head_is_complementary(z0 in -50.0f64..50.0, z1 in -50.0f64..50.0) {
            prop_assert!((head_binary(z0, z1) + head_binary(z1, z0) - 1.0).abs() < 1e-12);
        }
    }
}
