//! Inverted-file index: k-means partitions scanned exactly for the `p`
//! centroids closest to the query.

use std::io::{Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};
use crate::formats::{read_f32s, read_u32, write_f32s, write_u32};
use crate::index::flat::score;
use crate::index::kmeans::{kmeans, Codebook};
use crate::index::{check_k, Metric, SearchOutcome, VectorIndex};
use crate::kernels::check_dim;
use crate::scalar::Real;
use crate::topk::select_top_k;
use crate::types::EmbeddingSet;

pub const IVF_MAGIC: [u8; 4] = *b"VXI1";

/// Training settings recorded in artifacts so builds can be reproduced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrainInfo {
    pub iters: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InvertedList<T: Real> {
    pub ids: Vec<u64>,
    pub data: Vec<T>,
}

#[derive(Debug, Clone)]
pub struct IvfIndex<T: Real> {
    codebook: Codebook<T>,
    lists: Vec<InvertedList<T>>,
    dim: usize,
    len: usize,
    probes: usize,
    train: TrainInfo,
}

/// Rounds centroid coordinates to the `f32` storage precision so an index
/// reloaded from disk partitions and scores exactly like the in-memory one.
pub(crate) fn storage_rounded<T: Real>(cb: Codebook<T>) -> Result<Codebook<T>> {
    let dim = cb.dim();
    Codebook::new(dim, cb.raw().iter().map(|c| T::of_f32(c.as_f32())).collect())
}

pub(crate) fn write_codebook<W: Write, T: Real>(w: &mut W, cb: &Codebook<T>) -> Result<()> {
    write_u32(w, cb.k())?;
    write_u32(w, cb.dim())?;
    write_f32s(w, cb.raw())
}

pub(crate) fn read_codebook<R: Read, T: Real>(r: &mut R) -> Result<Codebook<T>> {
    let k = read_u32(r)?;
    let dim = read_u32(r)?;
    let mut data = Vec::new();
    read_f32s(r, k * dim, &mut data)?;
    Codebook::new(dim, data)
}

impl<T: Real> IvfIndex<T> {
    pub fn build(docs: &EmbeddingSet<T>, lists: usize, iters: usize, seed: u64) -> Result<Self> {
        let trained = kmeans(docs, lists, iters, seed)?;
        let codebook = storage_rounded(trained.codebook)?;
        let mut inverted = vec![
            InvertedList {
                ids: Vec::new(),
                data: Vec::new()
            };
            codebook.k()
        ];
        for (id, row) in docs.iter() {
            let (list, _) = codebook.nearest(row);
            inverted[list].ids.push(id);
            inverted[list].data.extend_from_slice(row);
        }
        Ok(Self {
            codebook,
            lists: inverted,
            dim: docs.dim(),
            len: docs.len(),
            probes: 1,
            train: TrainInfo { iters, seed },
        })
    }

    pub fn codebook(&self) -> &Codebook<T> {
        &self.codebook
    }

    pub fn lists(&self) -> &[InvertedList<T>] {
        &self.lists
    }

    pub fn probes(&self) -> usize {
        self.probes
    }

    /// Default probe count used through [`VectorIndex`].
    pub fn set_probes(&mut self, probes: usize) {
        self.probes = probes;
    }

    pub fn train_info(&self) -> TrainInfo {
        self.train
    }

    /// Indices of the `probes` lists whose centroids are nearest to `query`.
    pub fn probe_order(&self, query: &[T], probes: usize) -> Result<Vec<usize>> {
        check_dim(self.dim, query.len())?;
        let k = self.codebook.k();
        if probes == 0 || probes > k {
            return Err(Error::Probe { probes, lists: k });
        }
        Ok(self.codebook.ranked(query).into_iter().take(probes).map(|(i, _)| i).collect())
    }

    /// Exact Euclidean top-k within the `probes` nearest lists. With
    /// `probes == k` the scan is exhaustive and matches a flat index.
    pub fn search_ivf(&self, query: &[T], probes: usize, k: usize) -> Result<SearchOutcome> {
        check_k(k)?;
        let order = self.probe_order(query, probes)?;
        let mut candidates = 0;
        let mut scored = Vec::new();
        for list in order {
            let inv = &self.lists[list];
            candidates += inv.ids.len();
            for (id, row) in inv.ids.iter().zip(inv.data.chunks_exact(self.dim)) {
                scored.push((*id, score(Metric::Euclidean, query, row)));
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
        write_codebook(w, &self.codebook)?;
        for list in &self.lists {
            write_u32(w, list.ids.len())?;
            for (id, row) in list.ids.iter().zip(list.data.chunks_exact(self.dim)) {
                w.write_u64::<LittleEndian>(*id)?;
                write_f32s(w, row)?;
            }
        }
        Ok(())
    }

    pub(crate) fn read_body<R: Read>(r: &mut R) -> Result<Self> {
        let iters = read_u32(r)?;
        let seed = r.read_u64::<LittleEndian>()?;
        let probes = read_u32(r)?;
        let codebook: Codebook<T> = read_codebook(r)?;
        let dim = codebook.dim();
        let mut lists = Vec::with_capacity(codebook.k());
        let mut len = 0;
        for _ in 0..codebook.k() {
            let count = read_u32(r)?;
            let mut list = InvertedList {
                ids: Vec::with_capacity(count.min(1 << 20)),
                data: Vec::new(),
            };
            for _ in 0..count {
                list.ids.push(r.read_u64::<LittleEndian>()?);
                read_f32s(r, dim, &mut list.data)?;
            }
            len += count;
            lists.push(list);
        }
        if len == 0 {
            return Err(Error::Format("IVF artifact holds no vectors".into()));
        }
        Ok(Self {
            codebook,
            lists,
            dim,
            len,
            probes,
            train: TrainInfo { iters, seed },
        })
    }
}

impl<T: Real> VectorIndex<T> for IvfIndex<T> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn len(&self) -> usize {
        self.len
    }

    fn search_with_stats(&self, query: &[T], k: usize) -> Result<SearchOutcome> {
        self.search_ivf(query, self.probes, k)
    }
}
