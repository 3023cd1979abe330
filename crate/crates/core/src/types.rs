//! Domain value types: dense vectors, embedding collections, per-token
//! multi-embeddings, sparse term-weight vectors and ranked hits.

use std::collections::{BTreeMap, HashSet};

use crate::error::{Error, Result};
use crate::scalar::Real;

fn check_finite<T: Real>(values: &[T], offset: usize) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(pos) => Err(Error::NonFinite(offset + pos)),
        None => Ok(()),
    }
}

/// A fixed-dimension real vector with finite entries.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseVector<T: Real> {
    values: Vec<T>,
}

impl<T: Real> DenseVector<T> {
    pub fn new(values: Vec<T>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Invalid("vector dimension must be positive".into()));
        }
        check_finite(&values, 0)?;
        Ok(Self { values })
    }

    pub fn from_f64(values: &[f64]) -> Result<Self> {
        Self::new(values.iter().map(|&v| T::of(v)).collect())
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.values
    }

    pub fn into_inner(self) -> Vec<T> {
        self.values
    }

    pub fn norm(&self) -> T {
        crate::kernels::norm(&self.values)
    }
}

impl<T: Real> AsRef<[T]> for DenseVector<T> {
    fn as_ref(&self) -> &[T] {
        &self.values
    }
}

/// A non-empty collection of equally sized vectors keyed by unique ids.
///
/// Rows are stored contiguously in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet<T: Real> {
    ids: Vec<u64>,
    dim: usize,
    data: Vec<T>,
}

impl<T: Real> EmbeddingSet<T> {
    /// Builds a set from ids and a row-major buffer of `ids.len() * dim` values.
    pub fn from_flat(ids: Vec<u64>, dim: usize, data: Vec<T>) -> Result<Self> {
        if ids.is_empty() {
            return Err(Error::Invalid("embedding set must hold at least one vector".into()));
        }
        if dim == 0 {
            return Err(Error::Invalid("vector dimension must be positive".into()));
        }
        if data.len() != ids.len() * dim {
            return Err(Error::Dimension {
                expected: ids.len() * dim,
                found: data.len(),
            });
        }
        let mut seen = HashSet::with_capacity(ids.len());
        for id in &ids {
            if !seen.insert(*id) {
                return Err(Error::Invalid(format!("duplicate document id {id}")));
            }
        }
        check_finite(&data, 0)?;
        Ok(Self { ids, dim, data })
    }

    pub fn from_rows(ids: Vec<u64>, rows: &[Vec<T>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * dim);
        for row in rows {
            if row.len() != dim {
                return Err(Error::Dimension {
                    expected: dim,
                    found: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        if ids.len() != rows.len() {
            return Err(Error::Invalid(format!(
                "{} ids for {} vectors",
                ids.len(),
                rows.len()
            )));
        }
        Self::from_flat(ids, dim, data)
    }

    /// Convenience constructor assigning ids `0..n`.
    pub fn with_sequential_ids(dim: usize, data: Vec<T>) -> Result<Self> {
        let n = if dim == 0 { 0 } else { data.len() / dim };
        Self::from_flat((0..n as u64).collect(), dim, data)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    /// Always false: an embedding set holds at least one vector.
    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn id(&self, row: usize) -> u64 {
        self.ids[row]
    }

    pub fn row(&self, row: usize) -> &[T] {
        &self.data[row * self.dim..(row + 1) * self.dim]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[T]> + DoubleEndedIterator + '_ {
        self.data.chunks_exact(self.dim)
    }

    pub fn iter(&self) -> impl Iterator<Item = (u64, &[T])> + '_ {
        self.ids.iter().copied().zip(self.rows())
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    /// Payload size in the 32-bit storage layout: ids plus `n * dim` floats.
    pub fn storage_bytes(&self) -> usize {
        self.len() * (8 + 4 * self.dim)
    }

    pub fn map_rows<F>(&self, out_dim: usize, mut f: F) -> Result<Self>
    where
        F: FnMut(&[T]) -> Result<Vec<T>>,
    {
        let mut data = Vec::with_capacity(self.len() * out_dim);
        for row in self.rows() {
            let mapped = f(row)?;
            if mapped.len() != out_dim {
                return Err(Error::Dimension {
                    expected: out_dim,
                    found: mapped.len(),
                });
            }
            data.extend(mapped);
        }
        Self::from_flat(self.ids.clone(), out_dim, data)
    }
}

/// Per-token embeddings for one text, optionally aligned with vocabulary ids.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiEmbedding<T: Real> {
    id: u64,
    dim: usize,
    data: Vec<T>,
    token_ids: Option<Vec<u32>>,
}

impl<T: Real> MultiEmbedding<T> {
    pub fn new(id: u64, dim: usize, data: Vec<T>, token_ids: Option<Vec<u32>>) -> Result<Self> {
        if dim == 0 || data.is_empty() {
            return Err(Error::Invalid(
                "multi-embedding needs at least one non-empty row".into(),
            ));
        }
        if data.len() % dim != 0 {
            return Err(Error::Dimension {
                expected: dim,
                found: data.len() % dim,
            });
        }
        let rows = data.len() / dim;
        if let Some(tokens) = &token_ids {
            if tokens.len() != rows {
                return Err(Error::Invalid(format!(
                    "{} token ids for {rows} vectors",
                    tokens.len()
                )));
            }
        }
        check_finite(&data, 0)?;
        Ok(Self {
            id,
            dim,
            data,
            token_ids,
        })
    }

    pub fn from_rows(id: u64, rows: &[Vec<T>], token_ids: Option<Vec<u32>>) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != dim) {
            return Err(Error::Dimension {
                expected: dim,
                found: bad.len(),
            });
        }
        Self::new(id, dim, rows.concat(), token_ids)
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of token rows.
    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[T]> + DoubleEndedIterator + '_ {
        self.data.chunks_exact(self.dim)
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn token_ids(&self) -> Option<&[u32]> {
        self.token_ids.as_deref()
    }
}

/// Non-negative term weights over an opaque vocabulary of `u32` term ids.
///
/// Zero weights are never stored.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseVector {
    entries: BTreeMap<u32, f64>,
}

impl SparseVector {
    pub fn new(entries: impl IntoIterator<Item = (u32, f64)>) -> Result<Self> {
        Self::from_occurrences(entries)
    }

    /// Builds a vector from `(term, weight)` occurrences. A term seen more
    /// than once keeps its largest weight.
    pub fn from_occurrences(entries: impl IntoIterator<Item = (u32, f64)>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (term, weight) in entries {
            if !weight.is_finite() || weight < 0.0 {
                return Err(Error::Weight { term, weight });
            }
            let slot = map.entry(term).or_insert(0.0_f64);
            if weight > *slot {
                *slot = weight;
            }
        }
        map.retain(|_, w| *w > 0.0);
        Ok(Self { entries: map })
    }

    pub fn get(&self, term: u32) -> f64 {
        self.entries.get(&term).copied().unwrap_or(0.0)
    }

    /// Entries in ascending term order.
    pub fn iter(&self) -> impl ExactSizeIterator<Item = (u32, f64)> + '_ {
        self.entries.iter().map(|(t, w)| (*t, *w))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn max_weight(&self) -> f64 {
        self.entries.values().copied().fold(0.0, f64::max)
    }
}

/// A sparse vector tagged with its document id.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseDoc {
    pub id: u64,
    pub vector: SparseVector,
}

/// One entry of a ranked result list. Ranks start at 1.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ScoredHit {
    pub doc_id: u64,
    pub score: f64,
    pub rank: usize,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dense_vector_rejects_nan_and_empty() {
        assert!(matches!(
            DenseVector::<f64>::new(vec![1.0, f64::NAN]),
            Err(Error::NonFinite(1))
        ));
        assert!(DenseVector::<f64>::new(vec![]).is_err());
        assert!(DenseVector::<f32>::new(vec![f32::INFINITY]).is_err());
    }

    #[test]
    fn embedding_set_invariants() {
        assert!(EmbeddingSet::<f64>::from_flat(vec![], 2, vec![]).is_err());
        assert!(EmbeddingSet::<f64>::from_flat(vec![1, 1], 1, vec![0.0, 1.0]).is_err());
        assert!(EmbeddingSet::<f64>::from_flat(vec![1, 2], 2, vec![0.0; 3]).is_err());
        let set = EmbeddingSet::from_rows(vec![7, 9], &[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(set.len(), 2);
        assert_eq!(set.row(1), &[3.0, 4.0]);
        assert_eq!(set.id(0), 7);
        assert_eq!(set.storage_bytes(), 2 * (8 + 8));
    }

    #[test]
    fn multi_embedding_token_alignment() {
        let ok = MultiEmbedding::<f64>::new(1, 2, vec![0.0; 6], Some(vec![1, 2, 3]));
        assert_eq!(ok.unwrap().len(), 3);
        assert!(MultiEmbedding::<f64>::new(1, 2, vec![0.0; 6], Some(vec![1, 2])).is_err());
        assert!(MultiEmbedding::<f64>::new(1, 2, vec![0.0; 5], None).is_err());
    }

    #[test]
    fn sparse_vector_drops_zeros_and_keeps_max() {
        let v = SparseVector::from_occurrences([(3, 0.5), (1, 0.0), (3, 2.0), (3, 1.0)]).unwrap();
        assert_eq!(v.len(), 1);
        assert_eq!(v.get(3), 2.0);
        assert_eq!(v.get(1), 0.0);
        assert!(matches!(
            SparseVector::new([(4, -1.0)]),
            Err(Error::Weight { term: 4, .. })
        ));
        assert!(SparseVector::new([(4, f64::NAN)]).is_err());
    }
}
