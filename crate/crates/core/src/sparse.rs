//! Learned sparse retrieval: 8-bit impact postings, sum-of-impacts and
//! weighted (uniCOIL) scoring, SPLADE aggregation and the FLOPS regulariser.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};
use crate::formats::expect_magic;
use crate::topk::select_top_k;
use crate::types::{ScoredHit, SparseDoc, SparseVector};

pub const SPARSE_MAGIC: [u8; 4] = *b"VXS1";

pub const LEVELS: u8 = 255;

/// Linear 8-bit quantisation against a global maximum weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImpactQuantiser {
    max_weight: f64,
}

impl ImpactQuantiser {
    pub fn new(max_weight: f64) -> Result<Self> {
        if !(max_weight.is_finite() && max_weight > 0.0) {
            return Err(Error::Invalid(format!("max weight must be positive and finite, got {max_weight}")));
        }
        Ok(Self { max_weight })
    }

    pub fn fit<'a>(docs: impl IntoIterator<Item = &'a SparseVector>) -> Result<Self> {
        let max = docs.into_iter().map(SparseVector::max_weight).fold(0.0, f64::max);
        if max <= 0.0 {
            return Err(Error::DegenerateCollection("no positive term weight in corpus".into()));
        }
        Self::new(max)
    }

    pub fn max_weight(&self) -> f64 {
        self.max_weight
    }

    /// `round(255 · w / max)`, halves away from zero; `w` is clamped to
    /// `[0, max]`.
    pub fn quantise(&self, w: f64) -> u8 {
        let scaled = (f64::from(LEVELS) * w / self.max_weight).round();
        scaled.clamp(0.0, f64::from(LEVELS)) as u8
    }

    pub fn dequantise(&self, code: u8) -> f64 {
        f64::from(code) * self.max_weight / f64::from(LEVELS)
    }
}

/// Posting lists of `(doc id, impact)` sorted by doc id, keyed by term.
#[derive(Debug, Clone, PartialEq)]
pub struct ImpactIndex {
    quantiser: ImpactQuantiser,
    postings: BTreeMap<u32, Vec<(u64, u8)>>,
    doc_count: usize,
}

impl ImpactIndex {
    pub fn build(docs: &[SparseDoc]) -> Result<Self> {
        let quantiser = ImpactQuantiser::fit(docs.iter().map(|d| &d.vector))?;
        Self::build_with(docs, quantiser)
    }

    pub fn build_with(docs: &[SparseDoc], quantiser: ImpactQuantiser) -> Result<Self> {
        let mut seen = HashSet::with_capacity(docs.len());
        let mut postings: BTreeMap<u32, Vec<(u64, u8)>> = BTreeMap::new();
        for doc in docs {
            if !seen.insert(doc.id) {
                return Err(Error::Ingest(format!("duplicate document id {}", doc.id)));
            }
            for (term, w) in doc.vector.iter() {
                let impact = quantiser.quantise(w);
                if impact > 0 {
                    postings.entry(term).or_default().push((doc.id, impact));
                }
            }
        }
        for list in postings.values_mut() {
            list.sort_unstable_by_key(|p| p.0);
        }
        Ok(Self {
            quantiser,
            postings,
            doc_count: docs.len(),
        })
    }

    pub fn quantiser(&self) -> ImpactQuantiser {
        self.quantiser
    }

    pub fn doc_count(&self) -> usize {
        self.doc_count
    }

    pub fn num_terms(&self) -> usize {
        self.postings.len()
    }

    pub fn postings(&self, term: u32) -> Option<&[(u64, u8)]> {
        self.postings.get(&term).map(Vec::as_slice)
    }

    pub fn total_postings(&self) -> usize {
        self.postings.values().map(Vec::len).sum()
    }

    /// Term-at-a-time accumulation of `Σ weight · impact`, terms ascending.
    fn accumulate(&self, query: &BTreeMap<u32, f64>, k: usize) -> Result<Vec<ScoredHit>> {
        if k == 0 {
            return Err(Error::Invalid("k must be at least 1".into()));
        }
        let mut acc: HashMap<u64, f64> = HashMap::new();
        for (term, weight) in query {
            if let Some(list) = self.postings.get(term) {
                for &(doc, impact) in list {
                    *acc.entry(doc).or_insert(0.0) += weight * f64::from(impact);
                }
            }
        }
        Ok(select_top_k(acc, k))
    }

    /// Sum of stored impacts over the distinct query terms present in each
    /// document. An empty or unmatched query yields no hits.
    pub fn score_sum_impacts(&self, terms: &[u32], k: usize) -> Result<Vec<ScoredHit>> {
        let query = terms.iter().map(|&t| (t, 1.0)).collect();
        self.accumulate(&query, k)
    }

    /// `Σ_t v_t · z_{t,d}`; repeated query terms have their weights summed.
    pub fn score_unicoil(&self, query: &[(u32, f64)], k: usize) -> Result<Vec<ScoredHit>> {
        let mut merged: BTreeMap<u32, f64> = BTreeMap::new();
        for &(term, weight) in query {
            if !(weight.is_finite() && weight >= 0.0) {
                return Err(Error::Weight { term, weight });
            }
            *merged.entry(term).or_insert(0.0) += weight;
        }
        self.accumulate(&merged, k)
    }

    /// Encoded posting payload: per term, varint doc-id gaps then the
    /// impact bytes.
    pub fn posting_bytes(&self) -> Vec<u8> {
        self.encode_postings().0
    }

    fn encode_postings(&self) -> (Vec<u8>, Vec<(u32, u64, u32)>) {
        let mut payload = Vec::new();
        let mut directory = Vec::with_capacity(self.postings.len());
        for (&term, list) in &self.postings {
            directory.push((term, payload.len() as u64, list.len() as u32));
            let mut prev = 0u64;
            for &(doc, _) in list {
                write_varint(&mut payload, doc - prev);
                prev = doc;
            }
            payload.extend(list.iter().map(|p| p.1));
        }
        (payload, directory)
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        let (payload, directory) = self.encode_postings();
        w.write_all(&SPARSE_MAGIC)?;
        w.write_f64::<LittleEndian>(self.quantiser.max_weight)?;
        w.write_u64::<LittleEndian>(self.doc_count as u64)?;
        w.write_u32::<LittleEndian>(directory.len() as u32)?;
        for (term, offset, len) in directory {
            w.write_u32::<LittleEndian>(term)?;
            w.write_u64::<LittleEndian>(offset)?;
            w.write_u32::<LittleEndian>(len)?;
        }
        w.write_u64::<LittleEndian>(payload.len() as u64)?;
        w.write_all(&payload)?;
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        expect_magic(r, SPARSE_MAGIC)?;
        let quantiser = ImpactQuantiser::new(r.read_f64::<LittleEndian>()?).map_err(|e| Error::Format(e.to_string()))?;
        let doc_count = r.read_u64::<LittleEndian>()? as usize;
        let terms = r.read_u32::<LittleEndian>()?;
        let mut directory = Vec::with_capacity(terms.min(1 << 20) as usize);
        for _ in 0..terms {
            let term = r.read_u32::<LittleEndian>()?;
            let offset = r.read_u64::<LittleEndian>()?;
            let len = r.read_u32::<LittleEndian>()?;
            directory.push((term, offset as usize, len as usize));
        }
        let payload_len = r.read_u64::<LittleEndian>()? as usize;
        let mut payload = Vec::new();
        r.take(payload_len as u64).read_to_end(&mut payload)?;
        if payload.len() != payload_len {
            return Err(Error::Format("truncated posting payload".into()));
        }
        let mut trailing = [0u8; 1];
        if r.read(&mut trailing)? != 0 {
            return Err(Error::Format("trailing bytes after sparse index".into()));
        }
        let mut postings = BTreeMap::new();
        let mut expected_offset = 0;
        let mut last_term = None;
        for (term, offset, len) in directory {
            if offset != expected_offset || last_term.is_some_and(|t| t >= term) || len == 0 {
                return Err(Error::Format(format!("inconsistent directory entry for term {term}")));
            }
            last_term = Some(term);
            let mut pos = offset;
            let mut docs = Vec::with_capacity(len);
            let mut prev = 0u64;
            for i in 0..len {
                let gap = read_varint(&payload, &mut pos)?;
                if i > 0 && gap == 0 {
                    return Err(Error::Format(format!("posting list for term {term} is not strictly increasing")));
                }
                prev = prev
                    .checked_add(gap)
                    .ok_or_else(|| Error::Format("document id overflow".into()))?;
                docs.push(prev);
            }
            let impacts = payload
                .get(pos..pos + len)
                .ok_or_else(|| Error::Format("truncated impact block".into()))?;
            if impacts.contains(&0) {
                return Err(Error::Format(format!("zero impact stored for term {term}")));
            }
            postings.insert(term, docs.into_iter().zip(impacts.iter().copied()).collect());
            expected_offset = pos + len;
        }
        if expected_offset != payload.len() {
            return Err(Error::Format("unreferenced bytes in posting payload".into()));
        }
        Ok(Self {
            quantiser,
            postings,
            doc_count,
        })
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

/// LEB128 unsigned encoding.
pub fn write_varint(out: &mut Vec<u8>, mut v: u64) {
    while v >= 0x80 {
        out.push((v as u8) | 0x80);
        v >>= 7;
    }
    out.push(v as u8);
}

pub fn read_varint(buf: &[u8], pos: &mut usize) -> Result<u64> {
    let mut v = 0u64;
    for shift in (0..64).step_by(7) {
        let byte = *buf.get(*pos).ok_or_else(|| Error::Format("truncated varint".into()))?;
        *pos += 1;
        v |= u64::from(byte & 0x7f) << shift;
        if byte & 0x80 == 0 {
            return Ok(v);
        }
    }
    Err(Error::Format("varint longer than 64 bits".into()))
}

/// `γ_t = Σ_i ln(1 + max(χ_{i,t}, 0))` over vocabulary-sized head rows;
/// term ids are column indices and zero entries are dropped.
pub fn splade_aggregate<R: AsRef<[f64]>>(heads: &[R]) -> Result<SparseVector> {
    let Some(first) = heads.first() else {
        return Err(Error::Arity("no head vectors to aggregate".into()));
    };
    let vocab = first.as_ref().len();
    let mut gamma = vec![0.0; vocab];
    for head in heads {
        let head = head.as_ref();
        crate::kernels::check_dim(vocab, head.len())?;
        if let Some(pos) = head.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite(pos));
        }
        for (g, &chi) in gamma.iter_mut().zip(head) {
            *g += chi.max(0.0).ln_1p();
        }
    }
    SparseVector::new(gamma.into_iter().enumerate().map(|(t, g)| (t as u32, g)))
}

/// `Σ_t (mean_d γ_t(d))²` over a batch of sparse representations drawn from
/// a vocabulary of `vocab_size` terms.
pub fn flops_metric(batch: &[SparseVector], vocab_size: usize) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Arity("FLOPS needs a non-empty batch".into()));
    }
    let mut totals: BTreeMap<u32, f64> = BTreeMap::new();
    for doc in batch {
        for (term, w) in doc.iter() {
            if term as usize >= vocab_size {
                return Err(Error::Invalid(format!("term {term} outside a vocabulary of {vocab_size}")));
            }
            *totals.entry(term).or_insert(0.0) += w;
        }
    }
    let n = batch.len() as f64;
    Ok(totals.values().map(|s| (s / n).powi(2)).sum())
}
