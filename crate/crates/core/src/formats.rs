//! On-disk data formats.
//!
//! All binary formats are little-endian and start with a 4-byte magic tag;
//! readers reject unknown tags. Vectors are stored as `f32`.
//!
//! | tag    | content                                                        |
//! |--------|----------------------------------------------------------------|
//! | `VXE1` | `u32 n, u32 dim`, then `n × [u64 id, dim × f32]`               |
//! | `VXM1` | `u32 n, u32 dim`, then per record `[u64 id, u32 t, u8 flag, (t × u32 token ids if flag), t·dim × f32]` |
//! | `VXW1` | `u32 rows, u32 cols`, then `rows·cols × f32` row-major         |
//!
//! Sparse corpora are JSON Lines: `{"id": 3, "w": {"17": 0.25, ...}}`.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::de::{MapAccess, Visitor};
use serde::{Deserialize, Deserializer, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::types::{EmbeddingSet, MultiEmbedding, SparseDoc, SparseVector};

pub const DENSE_MAGIC: [u8; 4] = *b"VXE1";
pub const MULTI_MAGIC: [u8; 4] = *b"VXM1";
pub const MATRIX_MAGIC: [u8; 4] = *b"VXW1";

/// Upper bound on speculative pre-allocation driven by header counts.
const PREALLOC_CAP: usize = 1 << 20;

pub(crate) fn read_magic<R: Read>(r: &mut R) -> Result<[u8; 4]> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    Ok(magic)
}

pub(crate) fn expect_magic<R: Read>(r: &mut R, expected: [u8; 4]) -> Result<()> {
    let found = read_magic(r)?;
    if found != expected {
        return Err(unknown_magic(found, &expected));
    }
    Ok(())
}

pub(crate) fn unknown_magic(found: [u8; 4], expected: &[u8]) -> Error {
    Error::Format(format!(
        "unexpected magic {:?}, expected {:?}",
        String::from_utf8_lossy(&found),
        String::from_utf8_lossy(expected)
    ))
}

pub(crate) fn write_u32<W: Write>(w: &mut W, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Format(format!("{v} does not fit in u32")))?;
    w.write_u32::<LittleEndian>(v)?;
    Ok(())
}

pub(crate) fn read_u32<R: Read>(r: &mut R) -> Result<usize> {
    Ok(r.read_u32::<LittleEndian>()? as usize)
}

pub(crate) fn write_f32s<W: Write, T: Real>(w: &mut W, values: &[T]) -> Result<()> {
    for v in values {
        w.write_f32::<LittleEndian>(v.as_f32())?;
    }
    Ok(())
}

pub(crate) fn read_f32s<R: Read, T: Real>(r: &mut R, count: usize, out: &mut Vec<T>) -> Result<()> {
    out.reserve(count.min(PREALLOC_CAP));
    for _ in 0..count {
        let v = r.read_f32::<LittleEndian>()?;
        if !v.is_finite() {
            return Err(Error::NonFinite(out.len()));
        }
        out.push(T::of_f32(v));
    }
    Ok(())
}

/// Writes `u32 n, u32 dim` followed by `n` `[u64 id, dim × f32]` records.
pub(crate) fn write_records<W: Write, T: Real>(w: &mut W, set: &EmbeddingSet<T>) -> Result<()> {
    write_u32(w, set.len())?;
    write_u32(w, set.dim())?;
    for (id, row) in set.iter() {
        w.write_u64::<LittleEndian>(id)?;
        write_f32s(w, row)?;
    }
    Ok(())
}

pub(crate) fn read_records<R: Read, T: Real>(r: &mut R) -> Result<EmbeddingSet<T>> {
    let n = read_u32(r)?;
    let dim = read_u32(r)?;
    let mut ids = Vec::with_capacity(n.min(PREALLOC_CAP));
    let mut data = Vec::new();
    for _ in 0..n {
        ids.push(r.read_u64::<LittleEndian>()?);
        read_f32s(r, dim, &mut data)?;
    }
    EmbeddingSet::from_flat(ids, dim, data)
}

pub fn write_dense<W: Write, T: Real>(w: &mut W, set: &EmbeddingSet<T>) -> Result<()> {
    w.write_all(&DENSE_MAGIC)?;
    write_records(w, set)
}

pub fn read_dense<R: Read, T: Real>(r: &mut R) -> Result<EmbeddingSet<T>> {
    expect_magic(r, DENSE_MAGIC)?;
    read_records(r)
}

pub fn write_multi<W: Write, T: Real>(w: &mut W, docs: &[MultiEmbedding<T>]) -> Result<()> {
    let dim = docs.first().map_or(0, MultiEmbedding::dim);
    w.write_all(&MULTI_MAGIC)?;
    write_u32(w, docs.len())?;
    write_u32(w, dim)?;
    for doc in docs {
        if doc.dim() != dim {
            return Err(Error::Dimension {
                expected: dim,
                found: doc.dim(),
            });
        }
        w.write_u64::<LittleEndian>(doc.id())?;
        write_u32(w, doc.len())?;
        match doc.token_ids() {
            Some(tokens) => {
                w.write_u8(1)?;
                for t in tokens {
                    w.write_u32::<LittleEndian>(*t)?;
                }
            }
            None => w.write_u8(0)?,
        }
        write_f32s(w, doc.data())?;
    }
    Ok(())
}

pub fn read_multi<R: Read, T: Real>(r: &mut R) -> Result<Vec<MultiEmbedding<T>>> {
    expect_magic(r, MULTI_MAGIC)?;
    let n = read_u32(r)?;
    let dim = read_u32(r)?;
    let mut docs = Vec::with_capacity(n.min(PREALLOC_CAP));
    for _ in 0..n {
        let id = r.read_u64::<LittleEndian>()?;
        let tokens = read_u32(r)?;
        let tokens_ids = match r.read_u8()? {
            0 => None,
            1 => {
                let mut ids = Vec::with_capacity(tokens.min(PREALLOC_CAP));
                for _ in 0..tokens {
                    ids.push(r.read_u32::<LittleEndian>()?);
                }
                Some(ids)
            }
            flag => return Err(Error::Format(format!("invalid token-id flag {flag}"))),
        };
        let mut data = Vec::new();
        read_f32s(r, tokens * dim, &mut data)?;
        docs.push(MultiEmbedding::new(id, dim, data, tokens_ids)?);
    }
    Ok(docs)
}

/// A dense row-major matrix, used for projection weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T: Real> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Real> Matrix<T> {
    pub fn new(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Invalid("matrix shape must be positive".into()));
        }
        if data.len() != rows * cols {
            return Err(Error::Dimension {
                expected: rows * cols,
                found: data.len(),
            });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(pos));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn identity(n: usize) -> Self {
        let mut data = vec![T::zero(); n * n];
        for i in 0..n {
            data[i * n + i] = T::one();
        }
        Self { rows: n, cols: n, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// Matrix-vector product `W x`.
    pub fn apply(&self, x: &[T]) -> Result<Vec<T>> {
        crate::kernels::check_dim(self.cols, x.len())?;
        Ok((0..self.rows)
            .map(|i| crate::kernels::dot_slice(self.row(i), x))
            .collect())
    }
}

pub fn write_matrix<W: Write, T: Real>(w: &mut W, m: &Matrix<T>) -> Result<()> {
    w.write_all(&MATRIX_MAGIC)?;
    write_u32(w, m.rows)?;
    write_u32(w, m.cols)?;
    write_f32s(w, &m.data)
}

pub fn read_matrix<R: Read, T: Real>(r: &mut R) -> Result<Matrix<T>> {
    expect_magic(r, MATRIX_MAGIC)?;
    let rows = read_u32(r)?;
    let cols = read_u32(r)?;
    let mut data = Vec::new();
    read_f32s(r, rows * cols, &mut data)?;
    Matrix::new(rows, cols, data)
}

#[derive(Deserialize)]
struct SparseLine {
    id: u64,
    #[serde(deserialize_with = "max_weight_map")]
    w: BTreeMap<String, f64>,
}

/// Collects a JSON object of term weights, keeping the largest value when a
/// key repeats.
fn max_weight_map<'de, D>(de: D) -> std::result::Result<BTreeMap<String, f64>, D::Error>
where
    D: Deserializer<'de>,
{
    struct MaxVisitor;

    impl<'de> Visitor<'de> for MaxVisitor {
        type Value = BTreeMap<String, f64>;

        fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
            f.write_str("a map from term id to weight")
        }

        fn visit_map<A: MapAccess<'de>>(self, mut access: A) -> std::result::Result<Self::Value, A::Error> {
            let mut out = BTreeMap::new();
            while let Some((key, weight)) = access.next_entry::<String, f64>()? {
                let slot = out.entry(key).or_insert(weight);
                if weight > *slot {
                    *slot = weight;
                }
            }
            Ok(out)
        }
    }

    de.deserialize_map(MaxVisitor)
}

pub fn parse_sparse_line(line: &str) -> Result<SparseDoc> {
    let parsed: SparseLine = serde_json::from_str(line)?;
    let mut entries = Vec::with_capacity(parsed.w.len());
    for (key, weight) in parsed.w {
        let term = key
            .parse::<u32>()
            .map_err(|_| Error::Format(format!("term id {key:?} is not an unsigned integer")))?;
        entries.push((term, weight));
    }
    Ok(SparseDoc {
        id: parsed.id,
        vector: SparseVector::from_occurrences(entries)?,
    })
}

pub fn read_sparse_jsonl<R: BufRead>(r: R) -> Result<Vec<SparseDoc>> {
    let mut docs = Vec::new();
    for (lineno, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let doc = parse_sparse_line(&line).map_err(|e| Error::Format(format!("line {}: {e}", lineno + 1)))?;
        docs.push(doc);
    }
    Ok(docs)
}

pub fn write_sparse_jsonl<W: Write>(w: &mut W, docs: &[SparseDoc]) -> Result<()> {
    for doc in docs {
        // Terms in ascending numeric order; serde_json maps would order keys lexically.
        write!(w, "{{\"id\":{},\"w\":{{", doc.id)?;
        for (i, (term, weight)) in doc.vector.iter().enumerate() {
            if i > 0 {
                w.write_all(b",")?;
            }
            write!(w, "\"{term}\":{}", serde_json::to_string(&weight)?)?;
        }
        w.write_all(b"}}\n")?;
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DenseLine {
    id: u64,
    v: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MultiLine {
    id: u64,
    rows: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tokens: Option<Vec<u32>>,
}

fn at_line(lineno: usize, e: impl std::fmt::Display) -> Error {
    Error::Format(format!("line {lineno}: {e}"))
}

/// Parsed non-blank lines with their 1-based line numbers.
fn jsonl_lines<R: BufRead, L: for<'de> Deserialize<'de>>(r: R) -> Result<Vec<(usize, L)>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push((i + 1, serde_json::from_str(&line).map_err(|e| at_line(i + 1, e))?));
    }
    Ok(out)
}

/// Dense vectors as JSON Lines: `{"id": 3, "v": [0.5, -1.0]}`.
pub fn read_dense_jsonl<R: BufRead, T: Real>(r: R) -> Result<EmbeddingSet<T>> {
    let lines: Vec<(usize, DenseLine)> = jsonl_lines(r)?;
    if let Some((_, first)) = lines.first() {
        let dim = first.v.len();
        if let Some((n, l)) = lines.iter().find(|(_, l)| l.v.len() != dim) {
            return Err(at_line(*n, Error::Dimension { expected: dim, found: l.v.len() }));
        }
    }
    let ids = lines.iter().map(|(_, l)| l.id).collect();
    let rows: Vec<Vec<T>> = lines.into_iter().map(|(_, l)| l.v.into_iter().map(T::of).collect()).collect();
    EmbeddingSet::from_rows(ids, &rows)
}

pub fn write_dense_jsonl<W: Write, T: Real>(w: &mut W, set: &EmbeddingSet<T>) -> Result<()> {
    for (id, row) in set.iter() {
        let line = DenseLine {
            id,
            v: row.iter().map(|x| x.as_f64()).collect(),
        };
        serde_json::to_writer(&mut *w, &line)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Multi-vector records as JSON Lines:
/// `{"id": 3, "rows": [[...], ...], "tokens": [101, 7]}` (tokens optional).
pub fn read_multi_jsonl<R: BufRead, T: Real>(r: R) -> Result<Vec<MultiEmbedding<T>>> {
    let lines: Vec<(usize, MultiLine)> = jsonl_lines(r)?;
    let docs = lines
        .into_iter()
        .map(|(n, l)| {
            let rows: Vec<Vec<T>> = l.rows.into_iter().map(|r| r.into_iter().map(T::of).collect()).collect();
            MultiEmbedding::from_rows(l.id, &rows, l.tokens).map_err(|e| at_line(n, e))
        })
        .collect::<Result<Vec<_>>>()?;
    if let Some(first) = docs.first() {
        if let Some(d) = docs.iter().find(|d| d.dim() != first.dim()) {
            return Err(Error::Format(format!("record {} has dimension {}, expected {}", d.id(), d.dim(), first.dim())));
        }
    }
    Ok(docs)
}

pub fn write_multi_jsonl<W: Write, T: Real>(w: &mut W, docs: &[MultiEmbedding<T>]) -> Result<()> {
    for doc in docs {
        let line = MultiLine {
            id: doc.id(),
            rows: doc.rows().map(|r| r.iter().map(|x| x.as_f64()).collect()).collect(),
            tokens: doc.token_ids().map(<[u32]>::to_vec),
        };
        serde_json::to_writer(&mut *w, &line)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Runs `f`, attaching `path` to any error.
pub fn with_path<P: AsRef<Path>, R>(path: P, f: impl FnOnce() -> Result<R>) -> Result<R> {
    f().map_err(|e| e.in_file(path))
}

pub fn load_dense<T: Real>(path: impl AsRef<Path>) -> Result<EmbeddingSet<T>> {
    let path = path.as_ref();
    with_path(path, || read_dense(&mut BufReader::new(File::open(path)?)))
}

pub fn save_dense<T: Real>(path: impl AsRef<Path>, set: &EmbeddingSet<T>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_dense(&mut w, set)?;
    w.flush()?;
    Ok(())
}

pub fn load_multi<T: Real>(path: impl AsRef<Path>) -> Result<Vec<MultiEmbedding<T>>> {
    let path = path.as_ref();
    with_path(path, || read_multi(&mut BufReader::new(File::open(path)?)))
}

pub fn save_multi<T: Real>(path: impl AsRef<Path>, docs: &[MultiEmbedding<T>]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_multi(&mut w, docs)?;
    w.flush()?;
    Ok(())
}

pub fn load_matrix<T: Real>(path: impl AsRef<Path>) -> Result<Matrix<T>> {
    let path = path.as_ref();
    with_path(path, || read_matrix(&mut BufReader::new(File::open(path)?)))
}

pub fn save_matrix<T: Real>(path: impl AsRef<Path>, m: &Matrix<T>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_matrix(&mut w, m)?;
    w.flush()?;
    Ok(())
}

pub fn load_sparse(path: impl AsRef<Path>) -> Result<Vec<SparseDoc>> {
    let path = path.as_ref();
    with_path(path, || read_sparse_jsonl(BufReader::new(File::open(path)?)))
}

pub fn save_sparse(path: impl AsRef<Path>, docs: &[SparseDoc]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_sparse_jsonl(&mut w, docs)?;
    w.flush()?;
    Ok(())
}
