//! Inverted file over product-quantised residuals.
//!
//! A coarse k-means codebook partitions the collection; each vector is
//! stored as the PQ code of its residual `x - c(x)`. One codec is trained on
//! the pooled residuals of all lists. A probed list is scored with ADC tables
//! built from the query residual against that list's centroid.

use std::io::{Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};
use crate::formats::{read_u32, write_u32};
use crate::index::ivf::{read_codebook, storage_rounded, write_codebook, TrainInfo};
use crate::index::kmeans::{kmeans, Codebook};
use crate::index::pq::{pack_codes, unpack_codes, PqCodec};
use crate::index::{check_k, SearchOutcome, VectorIndex};
use crate::kernels::check_dim;
use crate::scalar::Real;
use crate::topk::select_top_k;
use crate::types::EmbeddingSet;

pub const IVFPQ_MAGIC: [u8; 4] = *b"VXQ1";

#[derive(Debug, Clone, PartialEq)]
pub struct CodedList {
    pub ids: Vec<u64>,
    /// Row-major, `parts` entries per vector.
    pub codes: Vec<u16>,
}

#[derive(Debug, Clone)]
pub struct IvfPqIndex<T: Real> {
    coarse: Codebook<T>,
    codec: PqCodec<T>,
    lists: Vec<CodedList>,
    len: usize,
    probes: usize,
    train: TrainInfo,
}

fn residual<T: Real>(x: &[T], c: &[T]) -> Vec<T> {
    x.iter().zip(c).map(|(a, b)| *a - *b).collect()
}

impl<T: Real> IvfPqIndex<T> {
    pub fn build(
        docs: &EmbeddingSet<T>,
        lists: usize,
        parts: usize,
        centroids_per_part: usize,
        iters: usize,
        seed: u64,
    ) -> Result<Self> {
        let dim = docs.dim();
        if parts == 0 || dim % parts != 0 {
            return Err(Error::Subspace { dim, parts });
        }
        let coarse = storage_rounded(kmeans(docs, lists, iters, seed)?.codebook)?;
        let mut assignment = Vec::with_capacity(docs.len());
        let mut residuals = Vec::with_capacity(docs.len() * dim);
        for row in docs.rows() {
            let (list, _) = coarse.nearest(row);
            assignment.push(list);
            residuals.extend(residual(row, coarse.centroid(list)));
        }
        let codec = PqCodec::train_rows(&residuals, dim, parts, centroids_per_part, iters, seed.wrapping_add(1 << 32))?;
        let mut coded = vec![
            CodedList {
                ids: Vec::new(),
                codes: Vec::new()
            };
            coarse.k()
        ];
        for ((id, list), r) in docs.ids().iter().zip(&assignment).zip(residuals.chunks_exact(dim)) {
            coded[*list].ids.push(*id);
            coded[*list].codes.extend(codec.encode_unchecked(r));
        }
        Ok(Self {
            coarse,
            codec,
            lists: coded,
            len: docs.len(),
            probes: 1,
            train: TrainInfo { iters, seed },
        })
    }

    pub fn coarse(&self) -> &Codebook<T> {
        &self.coarse
    }

    pub fn codec(&self) -> &PqCodec<T> {
        &self.codec
    }

    pub fn lists(&self) -> &[CodedList] {
        &self.lists
    }

    pub fn probes(&self) -> usize {
        self.probes
    }

    pub fn set_probes(&mut self, probes: usize) {
        self.probes = probes;
    }

    pub fn train_info(&self) -> TrainInfo {
        self.train
    }

    /// Approximate Euclidean top-k over the `probes` nearest lists.
    pub fn search_ivfpq(&self, query: &[T], probes: usize, k: usize) -> Result<SearchOutcome> {
        check_k(k)?;
        check_dim(self.coarse.dim(), query.len())?;
        let lists = self.coarse.k();
        if probes == 0 || probes > lists {
            return Err(Error::Probe { probes, lists });
        }
        let m = self.codec.parts();
        let mut candidates = 0;
        let mut scored = Vec::new();
        for (list, _) in self.coarse.ranked(query).into_iter().take(probes) {
            let inv = &self.lists[list];
            if inv.ids.is_empty() {
                continue;
            }
            let tables = self.codec.adc_tables(&residual(query, self.coarse.centroid(list)))?;
            candidates += inv.ids.len();
            for (id, code) in inv.ids.iter().zip(inv.codes.chunks_exact(m)) {
                scored.push((*id, -tables.distance_unchecked(code).as_f64()));
            }
        }
        Ok(SearchOutcome {
            hits: select_top_k(scored, k),
            candidates,
        })
    }

    pub(crate) fn write_body<W: Write>(&self, w: &mut W) -> Result<()> {
        write_u32(w, self.train.iters)?;
        w.write_u64::<LittleEndian>(self.train.seed)?;
        write_u32(w, self.probes)?;
        write_codebook(w, &self.coarse)?;
        write_u32(w, self.codec.parts())?;
        for j in 0..self.codec.parts() {
            write_codebook(w, self.codec.codebook(j))?;
        }
        let bits = self.codec.bits();
        for list in &self.lists {
            write_u32(w, list.ids.len())?;
            for id in &list.ids {
                w.write_u64::<LittleEndian>(*id)?;
            }
            w.write_all(&pack_codes(&list.codes, bits))?;
        }
        Ok(())
    }

    pub(crate) fn read_body<R: Read>(r: &mut R) -> Result<Self> {
        let iters = read_u32(r)?;
        let seed = r.read_u64::<LittleEndian>()?;
        let probes = read_u32(r)?;
        let coarse: Codebook<T> = read_codebook(r)?;
        let parts = read_u32(r)?;
        let mut books = Vec::with_capacity(parts.min(1 << 12));
        for _ in 0..parts {
            books.push(read_codebook(r)?);
        }
        let codec = PqCodec::from_codebooks(books).map_err(|e| Error::Format(e.to_string()))?;
        if codec.dim() != coarse.dim() {
            return Err(Error::Format("residual codec dimension disagrees with coarse codebook".into()));
        }
        let bits = codec.bits();
        let mut lists = Vec::with_capacity(coarse.k());
        let mut len = 0;
        for _ in 0..coarse.k() {
            let count = read_u32(r)?;
            let mut ids = Vec::with_capacity(count.min(1 << 20));
            for _ in 0..count {
                ids.push(r.read_u64::<LittleEndian>()?);
            }
            let entries = count * parts;
            let mut bytes = vec![0u8; (entries * bits as usize).div_ceil(8)];
            r.read_exact(&mut bytes)?;
            let codes = unpack_codes(&bytes, entries, bits)?;
            if codes.iter().any(|&c| c as usize >= codec.centroids_per_part()) {
                return Err(Error::Format("IVFPQ code entry out of range".into()));
            }
            len += count;
            lists.push(CodedList { ids, codes });
        }
        if len == 0 {
            return Err(Error::Format("IVFPQ artifact holds no vectors".into()));
        }
        Ok(Self {
            coarse,
            codec,
            lists,
            len,
            probes,
            train: TrainInfo { iters, seed },
        })
    }
}

impl<T: Real> VectorIndex<T> for IvfPqIndex<T> {
    fn dim(&self) -> usize {
        self.coarse.dim()
    }

    fn len(&self) -> usize {
        self.len
    }

    fn search_with_stats(&self, query: &[T], k: usize) -> Result<SearchOutcome> {
        self.search_ivfpq(query, self.probes, k)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::index::{FlatIndex, Metric};
    use crate::topk::is_well_ordered;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_set(seed: u64, n: usize, dim: usize) -> EmbeddingSet<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..n * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        EmbeddingSet::with_sequential_ids(dim, data).unwrap()
    }

    #[test]
    fn every_doc_lands_in_exactly_one_list() {
        let docs = random_set(1, 800, 8);
        let ix = IvfPqIndex::build(&docs, 10, 4, 16, 6, 2).unwrap();
        let mut seen: Vec<u64> = ix.lists().iter().flat_map(|l| l.ids.iter().copied()).collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..800).collect::<Vec<_>>());
        for list in ix.lists() {
            assert_eq!(list.codes.len(), list.ids.len() * 4);
        }
    }

    #[test]
    fn fine_codec_with_all_probes_tracks_exact_ranking() {
        let docs = random_set(2, 1000, 8);
        let ix = IvfPqIndex::build(&docs, 8, 4, 256, 10, 3).unwrap();
        let flat = FlatIndex::build(docs.clone(), Metric::Euclidean);
        let queries = random_set(3, 50, 8);
        let mut agree = 0;
        for q in queries.rows() {
            let got = ix.search_ivfpq(q, 8, 10).unwrap();
            assert_eq!(got.candidates, 1000);
            assert!(is_well_ordered(&got.hits));
            let truth: Vec<u64> = flat.search_flat(q, 10).unwrap().iter().map(|h| h.doc_id).collect();
            agree += got.hits.iter().filter(|h| truth.contains(&h.doc_id)).count();
        }
        assert!(agree >= 450, "top-10 agreement {agree}/500");
    }

    #[test]
    fn probe_and_subspace_errors() {
        let docs = random_set(4, 100, 6);
        assert!(matches!(IvfPqIndex::build(&docs, 4, 4, 4, 3, 0), Err(Error::Subspace { .. })));
        let ix = IvfPqIndex::build(&docs, 4, 3, 4, 3, 0).unwrap();
        let q = vec![0.0; 6];
        assert!(matches!(ix.search_ivfpq(&q, 0, 1), Err(Error::Probe { .. })));
        assert!(matches!(ix.search_ivfpq(&q, 5, 1), Err(Error::Probe { .. })));
        assert!(matches!(ix.search_ivfpq(&q[..3], 1, 1), Err(Error::Dimension { .. })));
    }
}
