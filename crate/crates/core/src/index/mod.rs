//! Dense vector indexes and their serialized artifacts.
//!
//! Every index answers top-k queries through [`VectorIndex`], returning
//! [`ScoredHit`]s where higher scores are better. Euclidean indexes report
//! negated squared distances.
//!
//! Artifacts share a common prefix: 4-byte magic, then a transform block
//! (`u8` flag, and when set `f64 M, u32 source_dim`) recording whether the
//! stored vectors live in the MIPS-augmented space.

pub mod flat;
pub mod hnsw;
pub mod ivf;
pub mod ivfpq;
pub mod kmeans;
pub mod lsh;
pub mod pq;

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};
use crate::formats::{read_magic, read_u32, unknown_magic, write_u32};
use crate::mips::MipTransform;
use crate::scalar::Real;
use crate::types::{EmbeddingSet, ScoredHit};

pub use flat::FlatIndex;
pub use hnsw::{HnswIndex, HnswParams};
pub use ivf::IvfIndex;
pub use ivfpq::IvfPqIndex;
pub use kmeans::{kmeans, Codebook, KMeansResult};
pub use lsh::{LshIndex, LshParams, Width};
pub use pq::{PqCodec, PqIndex};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Euclidean,
    InnerProduct,
}

impl Metric {
    pub(crate) fn code(self) -> u8 {
        match self {
            Metric::Euclidean => 0,
            Metric::InnerProduct => 1,
        }
    }

    pub(crate) fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(Metric::Euclidean),
            1 => Ok(Metric::InnerProduct),
            other => Err(Error::Format(format!("unknown metric code {other}"))),
        }
    }
}

/// Hits plus the number of stored vectors whose score was evaluated.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchOutcome {
    pub hits: Vec<ScoredHit>,
    pub candidates: usize,
}

/// Read-only top-k search over stored dense vectors.
pub trait VectorIndex<T: Real>: Send + Sync {
    /// Expected query dimension.
    fn dim(&self) -> usize;

    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn search_with_stats(&self, query: &[T], k: usize) -> Result<SearchOutcome>;

    fn search(&self, query: &[T], k: usize) -> Result<Vec<ScoredHit>> {
        Ok(self.search_with_stats(query, k)?.hits)
    }
}

pub(crate) fn write_transform<W: Write>(w: &mut W, transform: Option<&MipTransform>) -> Result<()> {
    match transform {
        Some(t) => {
            w.write_u8(1)?;
            w.write_f64::<LittleEndian>(t.big_m())?;
            write_u32(w, t.source_dim())?;
        }
        None => w.write_u8(0)?,
    }
    Ok(())
}

pub(crate) fn read_transform<R: Read>(r: &mut R) -> Result<Option<MipTransform>> {
    match r.read_u8()? {
        0 => Ok(None),
        1 => {
            let big_m = r.read_f64::<LittleEndian>()?;
            let dim = read_u32(r)?;
            Ok(Some(MipTransform::from_parts(big_m, dim)?))
        }
        flag => Err(Error::Format(format!("invalid transform flag {flag}"))),
    }
}

pub(crate) fn check_k(k: usize) -> Result<()> {
    if k == 0 {
        Err(Error::Invalid("k must be at least 1".into()))
    } else {
        Ok(())
    }
}

/// Any of the dense index kinds.
#[derive(Debug, Clone)]
pub enum AnyIndex<T: Real> {
    Flat(FlatIndex<T>),
    Lsh(LshIndex<T>),
    Ivf(IvfIndex<T>),
    Pq(PqIndex<T>),
    IvfPq(IvfPqIndex<T>),
    Hnsw(HnswIndex<T>),
}

impl<T: Real> AnyIndex<T> {
    pub fn kind(&self) -> &'static str {
        match self {
            AnyIndex::Flat(_) => "flat",
            AnyIndex::Lsh(_) => "lsh",
            AnyIndex::Ivf(_) => "ivf",
            AnyIndex::Pq(_) => "pq",
            AnyIndex::IvfPq(_) => "ivfpq",
            AnyIndex::Hnsw(_) => "hnsw",
        }
    }

    fn as_dyn(&self) -> &dyn VectorIndex<T> {
        match self {
            AnyIndex::Flat(ix) => ix,
            AnyIndex::Lsh(ix) => ix,
            AnyIndex::Ivf(ix) => ix,
            AnyIndex::Pq(ix) => ix,
            AnyIndex::IvfPq(ix) => ix,
            AnyIndex::Hnsw(ix) => ix,
        }
    }

    fn magic(&self) -> [u8; 4] {
        match self {
            AnyIndex::Flat(_) => flat::FLAT_MAGIC,
            AnyIndex::Lsh(_) => lsh::LSH_MAGIC,
            AnyIndex::Ivf(_) => ivf::IVF_MAGIC,
            AnyIndex::Pq(_) => pq::PQ_MAGIC,
            AnyIndex::IvfPq(_) => ivfpq::IVFPQ_MAGIC,
            AnyIndex::Hnsw(_) => hnsw::HNSW_MAGIC,
        }
    }

    /// Sets the probe count (IVF family) or beam width (HNSW); ignored by
    /// other kinds.
    pub fn set_search_breadth(&mut self, breadth: usize) {
        match self {
            AnyIndex::Ivf(ix) => ix.set_probes(breadth),
            AnyIndex::IvfPq(ix) => ix.set_probes(breadth),
            AnyIndex::Hnsw(ix) => ix.set_ef_search(breadth),
            AnyIndex::Flat(_) | AnyIndex::Lsh(_) | AnyIndex::Pq(_) => {}
        }
    }
}

/// A dense index together with the optional MIPS transform its vectors were
/// mapped through. Queries are given in the original space.
#[derive(Debug, Clone)]
pub struct IndexArtifact<T: Real> {
    pub index: AnyIndex<T>,
    pub transform: Option<MipTransform>,
}

impl<T: Real> IndexArtifact<T> {
    pub fn new(index: AnyIndex<T>) -> Self {
        Self {
            index,
            transform: None,
        }
    }

    pub fn with_transform(index: AnyIndex<T>, transform: MipTransform) -> Self {
        Self {
            index,
            transform: Some(transform),
        }
    }

    /// Prepares documents for an index that should answer inner-product
    /// queries: fits the transform and maps the collection.
    pub fn mips_docs(docs: &EmbeddingSet<T>) -> Result<(MipTransform, EmbeddingSet<T>)> {
        let t = MipTransform::fit(docs)?;
        let mapped = t.transform_set(docs)?;
        Ok((t, mapped))
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(&self.index.magic())?;
        write_transform(w, self.transform.as_ref())?;
        match &self.index {
            AnyIndex::Flat(ix) => ix.write_body(w),
            AnyIndex::Lsh(ix) => ix.write_body(w),
            AnyIndex::Ivf(ix) => ix.write_body(w),
            AnyIndex::Pq(ix) => ix.write_body(w),
            AnyIndex::IvfPq(ix) => ix.write_body(w),
            AnyIndex::Hnsw(ix) => ix.write_body(w),
        }
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let magic = read_magic(r)?;
        let known = [
            flat::FLAT_MAGIC,
            lsh::LSH_MAGIC,
            ivf::IVF_MAGIC,
            pq::PQ_MAGIC,
            ivfpq::IVFPQ_MAGIC,
            hnsw::HNSW_MAGIC,
        ];
        if !known.contains(&magic) {
            return Err(unknown_magic(magic, b"VXF1|VXL1|VXI1|VXP1|VXQ1|VXH1"));
        }
        let transform = read_transform(r)?;
        let index = match &magic {
            m if *m == flat::FLAT_MAGIC => AnyIndex::Flat(FlatIndex::read_body(r)?),
            m if *m == lsh::LSH_MAGIC => AnyIndex::Lsh(LshIndex::read_body(r)?),
            m if *m == ivf::IVF_MAGIC => AnyIndex::Ivf(IvfIndex::read_body(r)?),
            m if *m == pq::PQ_MAGIC => AnyIndex::Pq(PqIndex::read_body(r)?),
            m if *m == ivfpq::IVFPQ_MAGIC => AnyIndex::IvfPq(IvfPqIndex::read_body(r)?),
            m if *m == hnsw::HNSW_MAGIC => AnyIndex::Hnsw(HnswIndex::read_body(r)?),
            _ => return Err(unknown_magic(magic, b"VXF1|VXL1|VXI1|VXP1|VXQ1|VXH1")),
        };
        let mut trailing = [0u8; 1];
        if r.read(&mut trailing)? != 0 {
            return Err(Error::Format("trailing bytes after index artifact".into()));
        }
        if let Some(t) = &transform {
            if t.target_dim() != index.as_dyn().dim() {
                return Err(Error::Format(
                    "transform dimension does not match stored vectors".into(),
                ));
            }
        }
        Ok(Self { index, transform })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        Ok(buf)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(&mut BufReader::new(File::open(path)?))
    }
}

impl<T: Real> VectorIndex<T> for IndexArtifact<T> {
    fn dim(&self) -> usize {
        match &self.transform {
            Some(t) => t.source_dim(),
            None => self.index.as_dyn().dim(),
        }
    }

    fn len(&self) -> usize {
        self.index.as_dyn().len()
    }

    /// With a transform, scores are the recovered inner products; the
    /// mapping from distance is strictly decreasing so order is preserved.
    fn search_with_stats(&self, query: &[T], k: usize) -> Result<SearchOutcome> {
        match &self.transform {
            None => self.index.as_dyn().search_with_stats(query, k),
            Some(t) => {
                let mapped = t.transform_query_slice(query)?;
                let mut outcome = self.index.as_dyn().search_with_stats(&mapped, k)?;
                for hit in &mut outcome.hits {
                    hit.score = t.inner_product_from_distance(query, -hit.score);
                }
                // Rounding may merge nearly equal distances; restore id tie order.
                outcome
                    .hits
                    .sort_by(|a, b| b.score.total_cmp(&a.score).then(a.doc_id.cmp(&b.doc_id)));
                for (i, hit) in outcome.hits.iter_mut().enumerate() {
                    hit.rank = i + 1;
                }
                Ok(outcome)
            }
        }
    }
}
