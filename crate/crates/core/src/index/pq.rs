//! Product quantisation with asymmetric distance computation (ADC).
//!
//! A vector is split into `m` equal sub-vectors, each replaced by the index
//! of its nearest centroid in a per-subspace codebook of `k` entries. At
//! query time `m` lookup tables of squared sub-distances turn a code into an
//! approximate distance with `m` additions.

use std::io::{Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};
use crate::formats::{read_u32, write_u32};
use crate::index::ivf::{read_codebook, storage_rounded, write_codebook, TrainInfo};
use crate::index::kmeans::{kmeans_rows, Codebook};
use crate::index::{check_k, SearchOutcome, VectorIndex};
use crate::kernels::{check_dim, euclidean_sq_slice};
use crate::scalar::Real;
use crate::topk::select_top_k;
use crate::types::EmbeddingSet;

pub const PQ_MAGIC: [u8; 4] = *b"VXP1";

/// Largest supported codebook size per subspace (codes are held as `u16`).
pub const MAX_CENTROIDS: usize = 1 << 16;

/// Bits needed per sub-index: `ceil(log2 k)`.
pub fn code_bits(k: usize) -> u32 {
    if k <= 1 {
        0
    } else {
        usize::BITS - (k - 1).leading_zeros()
    }
}

/// Packs sub-indices into a contiguous little-endian bit stream of `bits`
/// bits each. With `bits == 8` this is one byte per sub-index.
pub fn pack_codes(codes: &[u16], bits: u32) -> Vec<u8> {
    let total_bits = codes.len() * bits as usize;
    let mut out = vec![0u8; total_bits.div_ceil(8)];
    let mut pos = 0usize;
    for &code in codes {
        for b in 0..bits {
            if (code >> b) & 1 == 1 {
                out[pos / 8] |= 1 << (pos % 8);
            }
            pos += 1;
        }
    }
    out
}

pub fn unpack_codes(bytes: &[u8], count: usize, bits: u32) -> Result<Vec<u16>> {
    if bytes.len() != (count * bits as usize).div_ceil(8) {
        return Err(Error::Format(format!(
            "{} code bytes cannot hold {count} entries of {bits} bits",
            bytes.len()
        )));
    }
    let mut out = Vec::with_capacity(count);
    let mut pos = 0usize;
    for _ in 0..count {
        let mut code = 0u16;
        for b in 0..bits {
            if (bytes[pos / 8] >> (pos % 8)) & 1 == 1 {
                code |= 1 << b;
            }
            pos += 1;
        }
        out.push(code);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PqCodec<T: Real> {
    sub_dim: usize,
    codebooks: Vec<Codebook<T>>,
    train: TrainInfo,
}

impl<T: Real> PqCodec<T> {
    /// Trains one k-means codebook per subspace on a row-major buffer.
    pub fn train_rows(data: &[T], dim: usize, parts: usize, k: usize, iters: usize, seed: u64) -> Result<Self> {
        if parts == 0 || dim % parts != 0 {
            return Err(Error::Subspace { dim, parts });
        }
        if k > MAX_CENTROIDS {
            return Err(Error::Config(format!("at most {MAX_CENTROIDS} centroids per subspace, got {k}")));
        }
        let sub_dim = dim / parts;
        let n = data.len() / dim;
        let mut codebooks = Vec::with_capacity(parts);
        for j in 0..parts {
            let mut sub = Vec::with_capacity(n * sub_dim);
            for row in data.chunks_exact(dim) {
                sub.extend_from_slice(&row[j * sub_dim..(j + 1) * sub_dim]);
            }
            let trained = kmeans_rows(&sub, sub_dim, k, iters, seed.wrapping_add(j as u64))?;
            codebooks.push(storage_rounded(trained.codebook)?);
        }
        Ok(Self {
            sub_dim,
            codebooks,
            train: TrainInfo { iters, seed },
        })
    }

    pub fn train(data: &EmbeddingSet<T>, parts: usize, k: usize, iters: usize, seed: u64) -> Result<Self> {
        Self::train_rows(data.data(), data.dim(), parts, k, iters, seed)
    }

    /// Assembles a codec from given codebooks (all with `k` entries of `sub_dim`).
    pub fn from_codebooks(codebooks: Vec<Codebook<T>>) -> Result<Self> {
        let first = codebooks.first().ok_or_else(|| Error::Invalid("codec needs at least one codebook".into()))?;
        let (k, sub_dim) = (first.k(), first.dim());
        if codebooks.iter().any(|c| c.k() != k || c.dim() != sub_dim) {
            return Err(Error::Invalid("sub-codebooks must share k and dimension".into()));
        }
        if k > MAX_CENTROIDS {
            return Err(Error::Config(format!("at most {MAX_CENTROIDS} centroids per subspace, got {k}")));
        }
        Ok(Self {
            sub_dim,
            codebooks,
            train: TrainInfo { iters: 0, seed: 0 },
        })
    }

    pub fn parts(&self) -> usize {
        self.codebooks.len()
    }

    pub fn centroids_per_part(&self) -> usize {
        self.codebooks[0].k()
    }

    pub fn dim(&self) -> usize {
        self.sub_dim * self.parts()
    }

    pub fn sub_dim(&self) -> usize {
        self.sub_dim
    }

    pub fn codebook(&self, part: usize) -> &Codebook<T> {
        &self.codebooks[part]
    }

    pub fn bits(&self) -> u32 {
        code_bits(self.centroids_per_part())
    }

    pub fn encode(&self, v: &[T]) -> Result<Vec<u16>> {
        check_dim(self.dim(), v.len())?;
        Ok(self.encode_unchecked(v))
    }

    pub(crate) fn encode_unchecked(&self, v: &[T]) -> Vec<u16> {
        self.codebooks
            .iter()
            .zip(v.chunks_exact(self.sub_dim))
            .map(|(cb, sub)| cb.nearest(sub).0 as u16)
            .collect()
    }

    fn check_code(&self, code: &[u16]) -> Result<()> {
        check_dim(self.parts(), code.len())?;
        let k = self.centroids_per_part();
        match code.iter().position(|&c| c as usize >= k) {
            Some(position) => Err(Error::Code {
                position,
                value: code[position] as usize,
                centroids: k,
            }),
            None => Ok(()),
        }
    }

    /// Concatenation of the selected sub-centroids.
    pub fn decode(&self, code: &[u16]) -> Result<Vec<T>> {
        self.check_code(code)?;
        let mut out = Vec::with_capacity(self.dim());
        for (cb, &c) in self.codebooks.iter().zip(code) {
            out.extend_from_slice(cb.centroid(c as usize));
        }
        Ok(out)
    }

    /// Table `j` holds the squared distances from the `j`-th query
    /// sub-vector to every centroid of codebook `j`.
    pub fn adc_tables(&self, query: &[T]) -> Result<AdcTables<T>> {
        check_dim(self.dim(), query.len())?;
        let k = self.centroids_per_part();
        let mut values = Vec::with_capacity(self.parts() * k);
        for (cb, sub) in self.codebooks.iter().zip(query.chunks_exact(self.sub_dim)) {
            values.extend(cb.centroids().map(|c| euclidean_sq_slice(sub, c)));
        }
        Ok(AdcTables {
            parts: self.parts(),
            k,
            values,
        })
    }

    fn write<W: Write>(&self, w: &mut W) -> Result<()> {
        write_u32(w, self.parts())?;
        write_u32(w, self.centroids_per_part())?;
        write_u32(w, self.train.iters)?;
        w.write_u64::<LittleEndian>(self.train.seed)?;
        for cb in &self.codebooks {
            write_codebook(w, cb)?;
        }
        Ok(())
    }

    fn read<R: Read>(r: &mut R) -> Result<Self> {
        let parts = read_u32(r)?;
        let k = read_u32(r)?;
        let iters = read_u32(r)?;
        let seed = r.read_u64::<LittleEndian>()?;
        let mut codebooks = Vec::with_capacity(parts.min(1 << 12));
        for _ in 0..parts {
            codebooks.push(read_codebook(r)?);
        }
        let mut codec = Self::from_codebooks(codebooks).map_err(|e| Error::Format(e.to_string()))?;
        if codec.centroids_per_part() != k {
            return Err(Error::Format("codebook size disagrees with header".into()));
        }
        codec.train = TrainInfo { iters, seed };
        Ok(codec)
    }
}

/// Per-query lookup tables: `parts` rows of `k` squared sub-distances.
#[derive(Debug, Clone, PartialEq)]
pub struct AdcTables<T: Real> {
    parts: usize,
    k: usize,
    values: Vec<T>,
}

impl<T: Real> AdcTables<T> {
    pub fn parts(&self) -> usize {
        self.parts
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn table(&self, part: usize) -> &[T] {
        &self.values[part * self.k..(part + 1) * self.k]
    }

    /// `Σ_j table_j[code_j]`.
    pub fn distance(&self, code: &[u16]) -> Result<T> {
        check_dim(self.parts, code.len())?;
        if let Some(position) = code.iter().position(|&c| c as usize >= self.k) {
            return Err(Error::Code {
                position,
                value: code[position] as usize,
                centroids: self.k,
            });
        }
        Ok(self.distance_unchecked(code))
    }

    #[inline]
    pub(crate) fn distance_unchecked(&self, code: &[u16]) -> T {
        let mut acc = T::zero();
        for (j, &c) in code.iter().enumerate() {
            acc += self.values[j * self.k + c as usize];
        }
        acc
    }
}

/// Exhaustive ADC scan over PQ codes.
#[derive(Debug, Clone)]
pub struct PqIndex<T: Real> {
    codec: PqCodec<T>,
    ids: Vec<u64>,
    codes: Vec<u16>,
}

impl<T: Real> PqIndex<T> {
    pub fn build(docs: &EmbeddingSet<T>, parts: usize, k: usize, iters: usize, seed: u64) -> Result<Self> {
        let codec = PqCodec::train(docs, parts, k, iters, seed)?;
        Ok(Self::with_codec(codec, docs))
    }

    pub fn with_codec(codec: PqCodec<T>, docs: &EmbeddingSet<T>) -> Self {
        let mut codes = Vec::with_capacity(docs.len() * codec.parts());
        for row in docs.rows() {
            codes.extend(codec.encode_unchecked(row));
        }
        Self {
            codec,
            ids: docs.ids().to_vec(),
            codes,
        }
    }

    pub fn codec(&self) -> &PqCodec<T> {
        &self.codec
    }

    pub fn code(&self, row: usize) -> &[u16] {
        let m = self.codec.parts();
        &self.codes[row * m..(row + 1) * m]
    }

    /// Size of the packed code section in bytes.
    pub fn code_bytes(&self) -> usize {
        (self.codes.len() * self.codec.bits() as usize).div_ceil(8)
    }

    pub fn search_pq(&self, query: &[T], k: usize) -> Result<SearchOutcome> {
        check_k(k)?;
        let tables = self.codec.adc_tables(query)?;
        let m = self.codec.parts();
        let scored = self
            .ids
            .iter()
            .zip(self.codes.chunks_exact(m))
            .map(|(id, code)| (*id, -tables.distance_unchecked(code).as_f64()));
        Ok(SearchOutcome {
            hits: select_top_k(scored, k),
            candidates: self.ids.len(),
        })
    }

    pub(crate) fn write_body<W: Write>(&self, w: &mut W) -> Result<()> {
        self.codec.write(w)?;
        write_u32(w, self.ids.len())?;
        for id in &self.ids {
            w.write_u64::<LittleEndian>(*id)?;
        }
        w.write_all(&pack_codes(&self.codes, self.codec.bits()))?;
        Ok(())
    }

    pub(crate) fn read_body<R: Read>(r: &mut R) -> Result<Self> {
        let codec: PqCodec<T> = PqCodec::read(r)?;
        let n = read_u32(r)?;
        if n == 0 {
            return Err(Error::Format("PQ artifact holds no vectors".into()));
        }
        let mut ids = Vec::with_capacity(n.min(1 << 20));
        for _ in 0..n {
            ids.push(r.read_u64::<LittleEndian>()?);
        }
        let count = n * codec.parts();
        let mut bytes = vec![0u8; (count * codec.bits() as usize).div_ceil(8)];
        r.read_exact(&mut bytes)?;
        let codes = unpack_codes(&bytes, count, codec.bits())?;
        if codes.iter().any(|&c| c as usize >= codec.centroids_per_part()) {
            return Err(Error::Format("PQ code entry out of range".into()));
        }
        Ok(Self { codec, ids, codes })
    }
}

impl<T: Real> VectorIndex<T> for PqIndex<T> {
    fn dim(&self) -> usize {
        self.codec.dim()
    }

    fn len(&self) -> usize {
        self.ids.len()
    }

    fn search_with_stats(&self, query: &[T], k: usize) -> Result<SearchOutcome> {
        self.search_pq(query, k)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_set(seed: u64, n: usize, dim: usize) -> EmbeddingSet<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..n * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        EmbeddingSet::with_sequential_ids(dim, data).unwrap()
    }

    #[test]
    fn bits_per_code() {
        assert_eq!(code_bits(1), 0);
        assert_eq!(code_bits(2), 1);
        assert_eq!(code_bits(16), 4);
        assert_eq!(code_bits(17), 5);
        assert_eq!(code_bits(256), 8);
        assert_eq!(code_bits(257), 9);
    }

    #[test]
    fn single_centroid_codes_are_zero_and_decode_to_means() {
        let docs = random_set(1, 100, 4);
        let codec = PqCodec::train(&docs, 2, 1, 3, 0).unwrap();
        let mut mean = [0.0f64; 4];
        for row in docs.rows() {
            for (m, x) in mean.iter_mut().zip(row) {
                *m += x / 100.0;
            }
        }
        let code = codec.encode(docs.row(5)).unwrap();
        assert_eq!(code, vec![0, 0]);
        for (d, m) in codec.decode(&code).unwrap().iter().zip(mean) {
            assert!((d - m).abs() < 1e-6);
        }
    }

    #[test]
    fn concatenated_centroids_reconstruct_exactly() {
        let docs = random_set(2, 300, 6);
        let codec = PqCodec::train(&docs, 3, 8, 5, 1).unwrap();
        let v: Vec<f64> = [codec.codebook(0).centroid(2), codec.codebook(1).centroid(7), codec.codebook(2).centroid(0)].concat();
        let code = codec.encode(&v).unwrap();
        assert_eq!(codec.decode(&code).unwrap(), v);
    }

    #[test]
    fn larger_codebooks_reconstruct_better() {
        let docs = random_set(3, 3000, 16);
        let err = |k: usize| -> f64 {
            let codec = PqCodec::train(&docs, 8, k, 8, 2).unwrap();
            docs.rows()
                .map(|r| euclidean_sq_slice(r, &codec.decode(&codec.encode(r).unwrap()).unwrap()))
                .sum::<f64>()
                / docs.len() as f64
        };
        assert!(err(256) < err(16));
    }

    #[test]
    fn subspace_and_code_errors() {
        let docs = random_set(4, 50, 6);
        assert!(matches!(PqCodec::train(&docs, 4, 4, 2, 0), Err(Error::Subspace { dim: 6, parts: 4 })));
        let codec = PqCodec::train(&docs, 3, 4, 2, 0).unwrap();
        assert!(matches!(codec.decode(&[0, 4, 0]), Err(Error::Code { position: 1, value: 4, centroids: 4 })));
        let tables = codec.adc_tables(docs.row(0)).unwrap();
        assert!(matches!(tables.distance(&[9, 0, 0]), Err(Error::Code { .. })));
        assert_eq!((tables.parts(), tables.k()), (3, 4));
        assert_eq!(tables.table(2).len(), 4);
    }

    #[test]
    fn adc_matches_decode_then_distance() {
        let docs = random_set(5, 500, 8);
        let codec = PqCodec::train(&docs, 4, 16, 5, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(55);
        for _ in 0..1000 {
            let q: Vec<f64> = (0..8).map(|_| rng.random_range(-2.0..2.0)).collect();
            let code: Vec<u16> = (0..4).map(|_| rng.random_range(0..16)).collect();
            let tables = codec.adc_tables(&q).unwrap();
            let oracle = euclidean_sq_slice(&codec.decode(&code).unwrap(), &q);
            assert!((tables.distance(&code).unwrap() - oracle).abs() < 1e-9);
        }
        // query equal to a decoded vector
        let code = vec![3, 1, 4, 1];
        let q = codec.decode(&code).unwrap();
        assert!(codec.adc_tables(&q).unwrap().distance(&code).unwrap().abs() < 1e-9);
    }

    #[test]
    fn full_ranking_and_identical_code_ties() {
        let rows = vec![vec![1.0, 1.0], vec![1.0, 1.0], vec![-1.0, -1.0]];
        let docs = EmbeddingSet::from_rows(vec![9, 4, 7], &rows).unwrap();
        let ix = PqIndex::build(&docs, 1, 2, 5, 0).unwrap();
        let out = ix.search_pq(&[1.0, 1.0], 3).unwrap();
        let ids: Vec<u64> = out.hits.iter().map(|h| h.doc_id).collect();
        assert_eq!(ids, vec![4, 9, 7]);
    }

    /// Gaussian points on a random 8-dimensional linear subspace of R^64
    /// plus small isotropic noise.
    fn low_rank_points(rng: &mut ChaCha8Rng, basis: &[f64], count: usize) -> Vec<f64> {
        use rand_distr::{Distribution, StandardNormal};
        let (latent, dim) = (8, 64);
        let mut out = Vec::with_capacity(count * dim);
        for _ in 0..count {
            let z: Vec<f64> = (0..latent).map(|_| StandardNormal.sample(rng)).collect();
            for j in 0..dim {
                let noise: f64 = StandardNormal.sample(rng);
                out.push((0..latent).map(|i| z[i] * basis[i * dim + j]).sum::<f64>() + 0.05 * noise);
            }
        }
        out
    }

    #[test]
    fn recall_on_random_low_rank_docs() {
        use crate::index::{FlatIndex, Metric};
        use rand_distr::{Distribution, StandardNormal};
        use std::collections::HashSet;
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let basis: Vec<f64> = (0..8 * 64).map(|_| StandardNormal.sample(&mut rng)).collect();
        let docs = EmbeddingSet::with_sequential_ids(64, low_rank_points(&mut rng, &basis, 10_000)).unwrap();
        let queries = low_rank_points(&mut rng, &basis, 50);
        let ix = PqIndex::build(&docs, 8, 256, 10, 7).unwrap();
        let flat = FlatIndex::build(docs, Metric::Euclidean);
        let mut recall = 0.0;
        for q in queries.chunks_exact(64) {
            let truth: HashSet<u64> = flat.search_flat(q, 10).unwrap().iter().map(|h| h.doc_id).collect();
            let got = ix.search_pq(q, 10).unwrap();
            recall += got.hits.iter().filter(|h| truth.contains(&h.doc_id)).count() as f64 / 10.0;
        }
        recall /= 50.0;
        eprintln!("PQ recall@10 = {recall}");
        assert!(recall >= 0.6, "recall {recall}");
    }

    proptest! {
        #[test]
        fn pack_unpack_roundtrip(bits in 1u32..=16, raw in prop::collection::vec(any::<u16>(), 0..64)) {
            let mask = if bits == 16 { u16::MAX } else { (1u16 << bits) - 1 };
            let codes: Vec<u16> = raw.iter().map(|c| c & mask).collect();
            let packed = pack_codes(&codes, bits);
            prop_assert_eq!(packed.len(), (codes.len() * bits as usize).div_ceil(8));
            prop_assert_eq!(unpack_codes(&packed, codes.len(), bits).unwrap(), codes);
        }
    }
}
