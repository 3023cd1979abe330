//! Reduction of maximum inner product search to Euclidean nearest neighbour
//! search.
//!
//! Documents are mapped to `[ψ/M ; sqrt(1 − ‖ψ‖²/M²)]` and queries to
//! `[φ/‖φ‖ ; 0]`, where `M` is the largest document norm. All mapped vectors
//! have unit norm, so `‖φ̂ − ψ̂‖² = 2 − 2⟨φ, ψ⟩ / (‖φ‖·M)` and the nearest
//! mapped document is the one with the largest inner product.

use crate::error::{Error, Result};
use crate::kernels::{check_dim, norm_sq};
use crate::scalar::Real;
use crate::types::{DenseVector, EmbeddingSet};

/// Relative slack tolerated on `‖ψ‖ ≤ M` before a document is rejected.
pub const FIT_SLACK: f64 = 1e-9;

/// Fitted augmentation transform. Bound to the collection it was fitted on:
/// a document with a larger norm requires a refit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MipTransform {
    big_m: f64,
    source_dim: usize,
}

fn norm_f64<T: Real>(v: &[T]) -> f64 {
    v.iter().map(|x| x.as_f64() * x.as_f64()).sum::<f64>().sqrt()
}

impl MipTransform {
    pub fn fit<T: Real>(docs: &EmbeddingSet<T>) -> Result<Self> {
        let big_m = docs.rows().map(norm_f64).fold(0.0, f64::max);
        if big_m <= 0.0 {
            return Err(Error::DegenerateCollection(
                "every document vector has zero norm".into(),
            ));
        }
        Ok(Self {
            big_m,
            source_dim: docs.dim(),
        })
    }

    /// Rebuilds a transform from stored parameters.
    pub fn from_parts(big_m: f64, source_dim: usize) -> Result<Self> {
        if !(big_m.is_finite() && big_m > 0.0) || source_dim == 0 {
            return Err(Error::Format(format!(
                "invalid transform parameters (M = {big_m}, dim = {source_dim})"
            )));
        }
        Ok(Self { big_m, source_dim })
    }

    pub fn big_m(&self) -> f64 {
        self.big_m
    }

    pub fn source_dim(&self) -> usize {
        self.source_dim
    }

    pub fn target_dim(&self) -> usize {
        self.source_dim + 1
    }

    pub fn transform_doc_slice<T: Real>(&self, doc: &[T]) -> Result<Vec<T>> {
        check_dim(self.source_dim, doc.len())?;
        let norm = norm_f64(doc);
        if norm > self.big_m * (1.0 + FIT_SLACK) {
            return Err(Error::OutOfFit {
                norm,
                bound: self.big_m,
            });
        }
        let mut out: Vec<T> = doc.iter().map(|&x| T::of(x.as_f64() / self.big_m)).collect();
        let ratio = norm / self.big_m;
        // Clamp absorbs rounding when ‖ψ‖ ≈ M.
        let tail = (1.0 - ratio * ratio).max(0.0).sqrt();
        out.push(T::of(tail));
        Ok(out)
    }

    pub fn transform_query_slice<T: Real>(&self, query: &[T]) -> Result<Vec<T>> {
        check_dim(self.source_dim, query.len())?;
        let norm = norm_f64(query);
        if norm == 0.0 {
            return Err(Error::DegenerateVector);
        }
        let mut out: Vec<T> = query.iter().map(|&x| T::of(x.as_f64() / norm)).collect();
        out.push(T::zero());
        Ok(out)
    }

    pub fn transform_doc<T: Real>(&self, doc: &DenseVector<T>) -> Result<DenseVector<T>> {
        DenseVector::new(self.transform_doc_slice(doc.as_slice())?)
    }

    pub fn transform_query<T: Real>(&self, query: &DenseVector<T>) -> Result<DenseVector<T>> {
        DenseVector::new(self.transform_query_slice(query.as_slice())?)
    }

    /// Maps every document of a collection, keeping ids.
    pub fn transform_set<T: Real>(&self, docs: &EmbeddingSet<T>) -> Result<EmbeddingSet<T>> {
        docs.map_rows(self.target_dim(), |row| self.transform_doc_slice(row))
    }

    /// Recovers `⟨φ, ψ⟩` from the squared distance between mapped vectors.
    pub fn inner_product_from_distance<T: Real>(&self, query: &[T], distance_sq: f64) -> f64 {
        let qn = norm_sq(query).as_f64().sqrt();
        (2.0 - distance_sq) * 0.5 * qn * self.big_m
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{dot_slice, euclidean_sq_slice, norm};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn set(rows: &[Vec<f64>]) -> EmbeddingSet<f64> {
        EmbeddingSet::from_rows((0..rows.len() as u64).collect(), rows).unwrap()
    }

    fn random_rows(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect()
    }

    #[test]
    fn fit_examples() {
        assert_eq!(MipTransform::fit(&set(&[vec![3.0, 4.0]])).unwrap().big_m(), 5.0);
        assert_eq!(
            MipTransform::fit(&set(&[vec![1.0, 0.0], vec![0.0, 2.0]])).unwrap().big_m(),
            2.0
        );
        assert!(matches!(
            MipTransform::fit(&set(&[vec![0.0, 0.0], vec![0.0, 0.0]])),
            Err(Error::DegenerateCollection(_))
        ));
    }

    #[test]
    fn fit_matches_linear_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rows = random_rows(&mut rng, 100, 6);
        let mut oracle = 0.0f64;
        for r in &rows {
            let mut s = 0.0;
            for x in r {
                s += x * x;
            }
            oracle = oracle.max(s.sqrt());
        }
        let t = MipTransform::fit(&set(&rows)).unwrap();
        assert!((t.big_m() - oracle).abs() < 1e-15);
    }

    #[test]
    fn transform_doc_examples() {
        let t = MipTransform::fit(&set(&[vec![3.0, 4.0], vec![1.0, 0.0]])).unwrap();
        let boundary = t.transform_doc_slice(&[3.0, 4.0]).unwrap();
        assert_eq!(boundary[2], 0.0);
        assert_eq!(t.transform_doc_slice(&[0.0, 0.0]).unwrap(), vec![0.0, 0.0, 1.0]);
        assert!(matches!(
            t.transform_doc_slice(&[6.0, 0.0]),
            Err(Error::OutOfFit { .. })
        ));
        // inside the relative slack: accepted and clamped
        let edge = t.transform_doc_slice(&[5.0 * (1.0 + 1e-12), 0.0]).unwrap();
        assert_eq!(edge[2], 0.0);
    }

    #[test]
    fn transformed_docs_have_unit_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let rows = random_rows(&mut rng, 200, 9);
        let docs = set(&rows);
        let t = MipTransform::fit(&docs).unwrap();
        let mapped = t.transform_set(&docs).unwrap();
        assert_eq!(mapped.dim(), 10);
        for row in mapped.rows() {
            assert!((norm(row) - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn transform_query_examples() {
        let t = MipTransform::from_parts(1.0, 2).unwrap();
        assert_eq!(t.transform_query_slice(&[2.0, 0.0]).unwrap(), vec![1.0, 0.0, 0.0]);
        let q: Vec<f64> = t.transform_query_slice(&[3.0, 4.0]).unwrap();
        assert!((q[0] - 0.6).abs() < 1e-15 && (q[1] - 0.8).abs() < 1e-15 && q[2] == 0.0);
        assert!(matches!(
            t.transform_query_slice(&[0.0, 0.0]),
            Err(Error::DegenerateVector)
        ));
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let raw: Vec<f64> = (0..2).map(|_| rng.random_range(-5.0..5.0)).collect();
            let q = t.transform_query_slice(&raw).unwrap();
            assert_eq!(q[2], 0.0);
            assert!((norm(&q) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn distance_decreases_as_inner_product_grows() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let rows = random_rows(&mut rng, 300, 8);
        let docs = set(&rows);
        let t = MipTransform::fit(&docs).unwrap();
        for _ in 0..20 {
            let q: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
            let qh = t.transform_query_slice(&q).unwrap();
            let mut pairs: Vec<(f64, f64)> = rows
                .iter()
                .map(|r| {
                    let d = euclidean_sq_slice(&qh, &t.transform_doc_slice(r).unwrap());
                    (dot_slice(&q, r), d)
                })
                .collect();
            pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
            for w in pairs.windows(2) {
                assert!(w[1].1 <= w[0].1 + 1e-12);
            }
            // recovered inner products agree with direct ones
            for (ip, d) in &pairs {
                assert!((t.inner_product_from_distance(&q, *d) - ip).abs() < 1e-9);
            }
        }
    }
}
