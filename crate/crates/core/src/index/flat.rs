//! Exhaustive exact search; the reference every approximate index is
//! measured against.

use std::io::{Read, Write};

use byteorder::{ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};
use crate::formats::{read_records, write_records};
use crate::index::{Metric, SearchOutcome, VectorIndex};
use crate::kernels::{check_dim, dot_slice, euclidean_sq_slice};
use crate::scalar::Real;
use crate::topk::select_top_k;
use crate::types::{EmbeddingSet, ScoredHit};

pub const FLAT_MAGIC: [u8; 4] = *b"VXF1";

#[derive(Debug, Clone, PartialEq)]
pub struct FlatIndex<T: Real> {
    docs: EmbeddingSet<T>,
    metric: Metric,
}

impl<T: Real> FlatIndex<T> {
    pub fn build(docs: EmbeddingSet<T>, metric: Metric) -> Self {
        Self { docs, metric }
    }

    pub fn docs(&self) -> &EmbeddingSet<T> {
        &self.docs
    }

    pub fn metric(&self) -> Metric {
        self.metric
    }

    /// Score of a stored row; Euclidean scores are negated squared distances.
    #[inline]
    pub fn score_row(&self, query: &[T], row: usize) -> f64 {
        score(self.metric, query, self.docs.row(row))
    }

    pub fn search_flat(&self, query: &[T], k: usize) -> Result<Vec<ScoredHit>> {
        check_dim(self.docs.dim(), query.len())?;
        if k == 0 {
            return Err(Error::Invalid("k must be at least 1".into()));
        }
        let scored = (0..self.docs.len()).map(|row| (self.docs.id(row), self.score_row(query, row)));
        Ok(select_top_k(scored, k))
    }

    pub(crate) fn write_body<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_u8(self.metric.code())?;
        write_records(w, &self.docs)
    }

    pub(crate) fn read_body<R: Read>(r: &mut R) -> Result<Self> {
        let metric = Metric::from_code(r.read_u8()?)?;
        let docs = read_records(r)?;
        Ok(Self { docs, metric })
    }
}

#[inline]
pub(crate) fn score<T: Real>(metric: Metric, query: &[T], doc: &[T]) -> f64 {
    match metric {
        Metric::Euclidean => -euclidean_sq_slice(query, doc).as_f64(),
        Metric::InnerProduct => dot_slice(query, doc).as_f64(),
    }
}

impl<T: Real> VectorIndex<T> for FlatIndex<T> {
    fn dim(&self) -> usize {
        self.docs.dim()
    }

    fn len(&self) -> usize {
        self.docs.len()
    }

    fn search_with_stats(&self, query: &[T], k: usize) -> Result<SearchOutcome> {
        Ok(SearchOutcome {
            hits: self.search_flat(query, k)?,
            candidates: self.docs.len(),
        })
    }
}
