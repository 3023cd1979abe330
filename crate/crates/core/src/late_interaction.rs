//! Scoring with several embeddings per text, and two-stage retrieval over
//! token embeddings.
//!
//! Row 0 of every [`MultiEmbedding`] is treated as the classification (CLS)
//! row where a scorer distinguishes it.

use std::collections::HashSet;

use crate::error::{Error, Result};
use crate::formats::Matrix;
use crate::index::VectorIndex;
use crate::kernels::{check_dim, dot_slice, softmax_unchecked};
use crate::scalar::Real;
use crate::topk::select_top_k;
use crate::types::{EmbeddingSet, MultiEmbedding, ScoredHit};

fn check_prefix<T: Real>(doc: &MultiEmbedding<T>, m: usize) -> Result<()> {
    if m == 0 || m > doc.len() {
        return Err(Error::Arity(format!("{m} leading vectors requested from {} available", doc.len())));
    }
    Ok(())
}

/// Poly-encoder score: the first `m` document vectors are combined with
/// softmax attention weights from the query, then dotted with the query.
pub fn poly_score<T: Real>(query: &[T], doc: &MultiEmbedding<T>, m: usize) -> Result<T> {
    check_dim(doc.dim(), query.len())?;
    check_prefix(doc, m)?;
    let logits: Vec<T> = doc.rows().take(m).map(|psi| dot_slice(query, psi)).collect();
    let weights = softmax_unchecked(&logits);
    let mut pooled = vec![T::zero(); doc.dim()];
    for (w, psi) in weights.iter().zip(doc.rows()) {
        for (p, x) in pooled.iter_mut().zip(psi) {
            *p += *w * *x;
        }
    }
    Ok(dot_slice(query, &pooled))
}

/// Largest dot product between the query and the first `m` document vectors.
pub fn maxsim_score<T: Real>(query: &[T], doc: &MultiEmbedding<T>, m: usize) -> Result<T> {
    check_dim(doc.dim(), query.len())?;
    check_prefix(doc, m)?;
    Ok(doc
        .rows()
        .take(m)
        .map(|psi| dot_slice(query, psi))
        .fold(T::neg_infinity(), T::max))
}

fn best_match<T: Real>(phi: &[T], doc: &MultiEmbedding<T>) -> T {
    doc.rows().map(|psi| dot_slice(phi, psi)).fold(T::neg_infinity(), T::max)
}

/// `Σ_i max_j ⟨φ_i, ψ_j⟩` over every query row, including row 0.
pub fn sum_maxsim_score<T: Real>(query: &MultiEmbedding<T>, doc: &MultiEmbedding<T>) -> Result<T> {
    sum_maxsim_score_with(query, doc, true)
}

/// As [`sum_maxsim_score`]; with `include_cls == false` the query's row 0
/// does not contribute.
pub fn sum_maxsim_score_with<T: Real>(query: &MultiEmbedding<T>, doc: &MultiEmbedding<T>, include_cls: bool) -> Result<T> {
    check_dim(doc.dim(), query.dim())?;
    let skip = usize::from(!include_cls);
    Ok(query.rows().skip(skip).map(|phi| best_match(phi, doc)).sum())
}

/// Learned projections for COIL: `W_C` (ℓ×ℓ) maps the CLS rows and `W_T`
/// (ℓ′×ℓ, ℓ′ < ℓ) maps token rows.
#[derive(Debug, Clone, PartialEq)]
pub struct CoilProjections<T: Real> {
    cls: Matrix<T>,
    token: Matrix<T>,
}

impl<T: Real> CoilProjections<T> {
    pub fn new(cls: Matrix<T>, token: Matrix<T>) -> Result<Self> {
        let dim = cls.cols();
        if cls.rows() != dim {
            return Err(Error::Dimension {
                expected: dim,
                found: cls.rows(),
            });
        }
        check_dim(dim, token.cols())?;
        if token.rows() >= dim {
            return Err(Error::Invalid(format!(
                "token projection width {} must be below the embedding dimension {dim}",
                token.rows()
            )));
        }
        Ok(Self { cls, token })
    }

    /// `W_C = I` and `W_T` keeping the first `tok_dim` coordinates.
    pub fn truncating(dim: usize, tok_dim: usize) -> Result<Self> {
        let mut data = vec![T::zero(); tok_dim * dim];
        for i in 0..tok_dim.min(dim) {
            data[i * dim + i] = T::one();
        }
        Self::new(Matrix::identity(dim), Matrix::new(tok_dim, dim, data)?)
    }

    pub fn dim(&self) -> usize {
        self.cls.cols()
    }

    pub fn tok_dim(&self) -> usize {
        self.token.rows()
    }

    pub fn cls_matrix(&self) -> &Matrix<T> {
        &self.cls
    }

    pub fn token_matrix(&self) -> &Matrix<T> {
        &self.token
    }
}

/// COIL score: the projected CLS dot product plus, for each query token
/// after row 0, its best projected dot product among document tokens with
/// the same vocabulary id (zero when none match).
pub fn coil_score<T: Real>(query: &MultiEmbedding<T>, doc: &MultiEmbedding<T>, proj: &CoilProjections<T>) -> Result<T> {
    let (Some(q_tokens), Some(d_tokens)) = (query.token_ids(), doc.token_ids()) else {
        return Err(Error::LexicalInfo);
    };
    check_dim(proj.dim(), query.dim())?;
    check_dim(proj.dim(), doc.dim())?;
    let mut score = dot_slice(&proj.cls.apply(query.row(0))?, &proj.cls.apply(doc.row(0))?);
    let doc_projected: Vec<Vec<T>> = (1..doc.len())
        .map(|j| proj.token.apply(doc.row(j)))
        .collect::<Result<_>>()?;
    for i in 1..query.len() {
        let matches: Vec<&Vec<T>> = (1..doc.len())
            .filter(|&j| d_tokens[j] == q_tokens[i])
            .map(|j| &doc_projected[j - 1])
            .collect();
        if matches.is_empty() {
            continue;
        }
        let phi = proj.token.apply(query.row(i))?;
        score += matches.iter().map(|psi| dot_slice(&phi, psi)).fold(T::neg_infinity(), T::max);
    }
    Ok(score)
}

/// Multi-embedding documents plus the mapping from each global token row to
/// its document.
#[derive(Debug, Clone)]
pub struct MultiDocStore<T: Real> {
    docs: Vec<MultiEmbedding<T>>,
    /// `offsets[d]..offsets[d + 1]` are the global rows of document `d`.
    offsets: Vec<usize>,
}

impl<T: Real> MultiDocStore<T> {
    pub fn new(docs: Vec<MultiEmbedding<T>>) -> Result<Self> {
        let Some(first) = docs.first() else {
            return Err(Error::Ingest("store needs at least one document".into()));
        };
        let dim = first.dim();
        let mut seen = HashSet::with_capacity(docs.len());
        let mut offsets = Vec::with_capacity(docs.len() + 1);
        offsets.push(0);
        for doc in &docs {
            check_dim(dim, doc.dim())?;
            if !seen.insert(doc.id()) {
                return Err(Error::Ingest(format!("duplicate document id {}", doc.id())));
            }
            offsets.push(offsets[offsets.len() - 1] + doc.len());
        }
        Ok(Self { docs, offsets })
    }

    pub fn docs(&self) -> &[MultiEmbedding<T>] {
        &self.docs
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.docs[0].dim()
    }

    pub fn total_rows(&self) -> usize {
        self.offsets[self.docs.len()]
    }

    /// `(document index, token index)` of a global row.
    pub fn locate(&self, row: usize) -> Option<(usize, usize)> {
        if row >= self.total_rows() {
            return None;
        }
        let doc = self.offsets.partition_point(|&o| o <= row) - 1;
        Some((doc, row - self.offsets[doc]))
    }

    /// Every token row as one collection whose ids are the global row numbers.
    pub fn token_set(&self) -> Result<EmbeddingSet<T>> {
        let data: Vec<T> = self.docs.iter().flat_map(|d| d.data().iter().copied()).collect();
        EmbeddingSet::with_sequential_ids(self.dim(), data)
    }
}

/// Candidate generation over token rows, then exact sum-maxsim reranking.
///
/// `ann` must index [`MultiDocStore::token_set`] (ids are global rows).
pub fn two_stage_search<T: Real>(
    store: &MultiDocStore<T>,
    ann: &dyn VectorIndex<T>,
    query: &MultiEmbedding<T>,
    k_prime: usize,
    k: usize,
) -> Result<Vec<ScoredHit>> {
    if ann.len() != store.total_rows() {
        return Err(Error::Consistency(format!(
            "index holds {} rows but the store has {}",
            ann.len(),
            store.total_rows()
        )));
    }
    if k == 0 || k_prime == 0 {
        return Err(Error::Invalid("k and k' must be at least 1".into()));
    }
    check_dim(store.dim(), query.dim())?;
    let mut seen = vec![false; store.len()];
    let mut candidates = Vec::new();
    for phi in query.rows() {
        for hit in ann.search(phi, k_prime)? {
            let (doc, _) = usize::try_from(hit.doc_id)
                .ok()
                .and_then(|row| store.locate(row))
                .ok_or_else(|| Error::Consistency(format!("index returned unknown row {}", hit.doc_id)))?;
            if !std::mem::replace(&mut seen[doc], true) {
                candidates.push(doc);
            }
        }
    }
    let scored = candidates
        .into_iter()
        .map(|d| {
            let doc = &store.docs[d];
            sum_maxsim_score(query, doc).map(|s| (doc.id(), s.as_f64()))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(select_top_k(scored, k))
}

/// Exhaustive sum-maxsim ranking over the whole store.
pub fn brute_force_sum_maxsim<T: Real>(store: &MultiDocStore<T>, query: &MultiEmbedding<T>, k: usize) -> Result<Vec<ScoredHit>> {
    let scored = store
        .docs
        .iter()
        .map(|doc| sum_maxsim_score(query, doc).map(|s| (doc.id(), s.as_f64())))
        .collect::<Result<Vec<_>>>()?;
    Ok(select_top_k(scored, k))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum PassageAggregation {
    FirstP,
    MaxP,
    SumP,
}

pub fn aggregate_passages(scores: &[f64], mode: PassageAggregation) -> Result<f64> {
    let Some(&first) = scores.first() else {
        return Err(Error::Arity("no passage scores to aggregate".into()));
    };
    Ok(match mode {
        PassageAggregation::FirstP => first,
        PassageAggregation::MaxP => scores.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        PassageAggregation::SumP => scores.iter().sum(),
    })
}
