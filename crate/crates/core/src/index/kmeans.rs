//! Codebooks, nearest-centroid quantisation and Lloyd's k-means with
//! k-means++ seeding.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::kernels::{check_dim, euclidean_sq_slice};
use crate::scalar::Real;
use crate::types::EmbeddingSet;

/// `k` centroids of equal dimension stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook<T: Real> {
    dim: usize,
    centroids: Vec<T>,
}

impl<T: Real> Codebook<T> {
    pub fn new(dim: usize, centroids: Vec<T>) -> Result<Self> {
        if dim == 0 || centroids.is_empty() || centroids.len() % dim != 0 {
            return Err(Error::Invalid(format!(
                "codebook needs k ≥ 1 centroids of dimension {dim}, got {} values",
                centroids.len()
            )));
        }
        if let Some(pos) = centroids.iter().position(|c| !c.is_finite()) {
            return Err(Error::NonFinite(pos));
        }
        Ok(Self { dim, centroids })
    }

    pub fn k(&self) -> usize {
        self.centroids.len() / self.dim
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn centroid(&self, i: usize) -> &[T] {
        &self.centroids[i * self.dim..(i + 1) * self.dim]
    }

    pub fn centroids(&self) -> impl ExactSizeIterator<Item = &[T]> + '_ {
        self.centroids.chunks_exact(self.dim)
    }

    pub(crate) fn raw(&self) -> &[T] {
        &self.centroids
    }

    /// Nearest centroid index and its squared distance; ties go to the
    /// lowest index.
    pub fn quantise(&self, v: &[T]) -> Result<(usize, T)> {
        check_dim(self.dim, v.len())?;
        Ok(self.nearest(v))
    }

    #[inline]
    pub(crate) fn nearest(&self, v: &[T]) -> (usize, T) {
        let mut best = (0, T::infinity());
        for (i, c) in self.centroids().enumerate() {
            let d = euclidean_sq_slice(v, c);
            if d < best.1 {
                best = (i, d);
            }
        }
        best
    }

    /// All centroids ordered by distance to `v`, ties by index.
    pub(crate) fn ranked(&self, v: &[T]) -> Vec<(usize, T)> {
        let mut all: Vec<(usize, T)> = self
            .centroids()
            .enumerate()
            .map(|(i, c)| (i, euclidean_sq_slice(v, c)))
            .collect();
        all.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal).then(a.0.cmp(&b.0)));
        all
    }
}

#[derive(Debug, Clone)]
pub struct KMeansResult<T: Real> {
    pub codebook: Codebook<T>,
    /// Cluster index of every input row under the final codebook.
    pub assignments: Vec<usize>,
    /// Sum of squared distances to the assigned centroid, recorded after the
    /// seeding assignment and after every Lloyd iteration.
    pub objective_trace: Vec<f64>,
}

pub fn kmeans<T: Real>(data: &EmbeddingSet<T>, k: usize, iters: usize, seed: u64) -> Result<KMeansResult<T>> {
    kmeans_rows(data.data(), data.dim(), k, iters, seed)
}

/// k-means over a row-major buffer of `data.len() / dim` points.
pub fn kmeans_rows<T: Real>(data: &[T], dim: usize, k: usize, iters: usize, seed: u64) -> Result<KMeansResult<T>> {
    let n = if dim == 0 { 0 } else { data.len() / dim };
    if k == 0 || k > n {
        return Err(Error::Cardinality(format!(
            "cannot fit {k} centroids to {n} points"
        )));
    }
    if iters == 0 {
        return Err(Error::Config("k-means needs at least one iteration".into()));
    }
    let row = |i: usize| &data[i * dim..(i + 1) * dim];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = seed_plus_plus(data, dim, k, &mut rng);

    let mut assignments = vec![0usize; n];
    let mut objective = assign(data, dim, &centroids, &mut assignments);
    let mut trace = vec![objective];

    for _ in 0..iters {
        let mut sums = vec![0.0f64; k * dim];
        let mut counts = vec![0usize; k];
        for (i, &c) in assignments.iter().enumerate() {
            counts[c] += 1;
            for (s, x) in sums[c * dim..(c + 1) * dim].iter_mut().zip(row(i)) {
                *s += x.as_f64();
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                let inv = 1.0 / counts[c] as f64;
                for d in 0..dim {
                    centroids[c * dim + d] = T::of(sums[c * dim + d] * inv);
                }
            }
        }
        let mut reseeded = false;
        for empty in (0..k).filter(|&c| counts[c] == 0).collect::<Vec<_>>() {
            // Farthest member of the currently largest cluster.
            let largest = (0..k).max_by(|&a, &b| counts[a].cmp(&counts[b]).then(b.cmp(&a))).unwrap_or(0);
            let donor = (0..n)
                .filter(|&i| assignments[i] == largest)
                .map(|i| (i, euclidean_sq_slice(row(i), &centroids[largest * dim..(largest + 1) * dim])))
                .fold(None::<(usize, T)>, |best, (i, d)| match best {
                    Some((_, bd)) if bd >= d => best,
                    _ => Some((i, d)),
                });
            if let Some((point, _)) = donor {
                centroids[empty * dim..(empty + 1) * dim].copy_from_slice(row(point));
                assignments[point] = empty;
                counts[largest] -= 1;
                counts[empty] += 1;
                reseeded = true;
            }
        }
        let before = assignments.clone();
        objective = assign(data, dim, &centroids, &mut assignments);
        trace.push(objective);
        if !reseeded && before == assignments {
            break;
        }
    }

    Ok(KMeansResult {
        codebook: Codebook::new(dim, centroids)?,
        assignments,
        objective_trace: trace,
    })
}

fn assign<T: Real>(data: &[T], dim: usize, centroids: &[T], assignments: &mut [usize]) -> f64 {
    let mut total = 0.0;
    for (i, point) in data.chunks_exact(dim).enumerate() {
        let mut best = (0usize, T::infinity());
        for (c, centroid) in centroids.chunks_exact(dim).enumerate() {
            let d = euclidean_sq_slice(point, centroid);
            if d < best.1 {
                best = (c, d);
            }
        }
        assignments[i] = best.0;
        total += best.1.as_f64();
    }
    total
}

/// k-means++: first centroid uniform, then proportional to squared distance
/// to the nearest chosen centroid. Falls back to the first unchosen point
/// when every remaining point coincides with a centroid.
fn seed_plus_plus<T: Real>(data: &[T], dim: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<T> {
    let n = data.len() / dim;
    let row = |i: usize| &data[i * dim..(i + 1) * dim];
    let mut chosen = vec![false; n];
    let mut centroids = Vec::with_capacity(k * dim);
    let first = rng.random_range(0..n);
    chosen[first] = true;
    centroids.extend_from_slice(row(first));
    let mut nearest: Vec<f64> = (0..n).map(|i| euclidean_sq_slice(row(i), row(first)).as_f64()).collect();

    while centroids.len() < k * dim {
        let total: f64 = nearest.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = None;
            for (i, &d) in nearest.iter().enumerate() {
                if d <= 0.0 {
                    continue;
                }
                pick = Some(i);
                if target < d {
                    break;
                }
                target -= d;
            }
            pick.unwrap_or(0)
        } else {
            (0..n).find(|&i| !chosen[i]).unwrap_or(0)
        };
        chosen[pick] = true;
        centroids.extend_from_slice(row(pick));
        for (i, slot) in nearest.iter_mut().enumerate() {
            let d = euclidean_sq_slice(row(i), row(pick)).as_f64();
            if d < *slot {
                *slot = d;
            }
        }
    }
    centroids
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn k_equals_n_reproduces_points() {
        let rows: Vec<Vec<f64>> = (0..12).map(|i| vec![i as f64, (i * i) as f64 * 0.1]).collect();
        let set = EmbeddingSet::from_rows((0..12).collect(), &rows).unwrap();
        let out = kmeans(&set, 12, 5, 1).unwrap();
        assert_eq!(*out.objective_trace.last().unwrap(), 0.0);
        let mut centroids: Vec<Vec<f64>> = out.codebook.centroids().map(<[f64]>::to_vec).collect();
        centroids.sort_by(|a, b| a[0].total_cmp(&b[0]));
        assert_eq!(centroids, rows);
    }

    #[test]
    fn recovers_separated_blob_means() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let sigma = 1.0;
        let normal = Normal::new(0.0, sigma).unwrap();
        let means = [[-20.0, 5.0], [20.0, -5.0]];
        let mut data = Vec::new();
        for m in &means {
            for _ in 0..2000 {
                data.push(m[0] + normal.sample(&mut rng));
                data.push(m[1] + normal.sample(&mut rng));
            }
        }
        let set = EmbeddingSet::with_sequential_ids(2, data).unwrap();
        let out = kmeans(&set, 2, 20, 4).unwrap();
        for m in &means {
            let best = out
                .codebook
                .centroids()
                .map(|c: &[f64]| ((c[0] - m[0]).powi(2) + (c[1] - m[1]).powi(2)).sqrt())
                .fold(f64::INFINITY, f64::min);
            assert!(best < 0.1 * sigma, "centroid off by {best}");
        }
    }

    #[test]
    fn objective_is_non_increasing() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let data: Vec<f64> = (0..3000).map(|_| rng.random_range(-1.0..1.0)).collect();
        let set = EmbeddingSet::with_sequential_ids(3, data).unwrap();
        for seed in 0..5 {
            let out = kmeans(&set, 16, 10, seed).unwrap();
            assert!(out.objective_trace.len() >= 2);
            for w in out.objective_trace.windows(2) {
                assert!(w[1] <= w[0] * (1.0 + 1e-12), "{:?}", out.objective_trace);
            }
        }
    }

    #[test]
    fn empty_clusters_are_reseeded() {
        // Many duplicates force coincident seeds and empty clusters.
        let mut rows = vec![vec![0.0, 0.0]; 20];
        rows.push(vec![10.0, 10.0]);
        rows.push(vec![10.5, 10.0]);
        rows.push(vec![-10.0, 3.0]);
        let set = EmbeddingSet::from_rows((0..rows.len() as u64).collect(), &rows).unwrap();
        let out = kmeans(&set, 5, 10, 2).unwrap();
        for w in out.objective_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-12);
        }
        assert_eq!(*out.objective_trace.last().unwrap(), 0.0);
    }

    #[test]
    fn cardinality_and_iteration_errors() {
        let set = EmbeddingSet::from_rows(vec![1, 2], &[vec![0.0], vec![1.0]]).unwrap();
        assert!(matches!(kmeans(&set, 3, 1, 0), Err(Error::Cardinality(_))));
        assert!(matches!(kmeans(&set, 0, 1, 0), Err(Error::Cardinality(_))));
        assert!(matches!(kmeans(&set, 1, 0, 0), Err(Error::Config(_))));
    }

    #[test]
    fn quantise_picks_nearest_with_low_index_ties() {
        let cb = Codebook::new(2, vec![0.0, 0.0, 2.0, 0.0, 5.0, 5.0, 1.0, 1.0]).unwrap();
        assert_eq!(cb.quantise(&[1.0, 1.0]).unwrap(), (3, 0.0));
        // equidistant from centroids 0 and 1
        assert_eq!(cb.quantise(&[1.0, 0.0]).unwrap().0, 0);
        assert!(cb.quantise(&[1.0]).is_err());
    }

    #[test]
    fn quantise_matches_scan_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let cb = Codebook::new(4, (0..64).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        for _ in 0..500 {
            let v: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut best = (usize::MAX, f64::INFINITY);
            for i in 0..16 {
                let c = cb.centroid(i);
                let d: f64 = (0..4).map(|j| (v[j] - c[j]).powi(2)).sum();
                if d < best.1 {
                    best = (i, d);
                }
            }
            assert_eq!(cb.quantise(&v).unwrap().0, best.0);
        }
    }
}
