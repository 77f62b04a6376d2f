//! Embedding vectors, per-segment stores and their file formats.
//!
//! Two import formats are supported:
//!
//! * JSON lines: `{"id","kind":"entity"|"mention","segment","vector":[...]}`.
//! * Binary `.temb`: a 16-byte little-endian header (`TEMB`, u32 dim, u32
//!   count, u32 reserved = 0) followed by `count` records of
//!   (u32 id length, id bytes, dim × f32).
//!
//! Files carry single precision; the engine works in double precision.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const BINARY_MAGIC: &[u8; 4] = b"TEMB";

/// A finite, fixed-dimension vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Embedding(Vec<f64>);

impl Embedding {
    pub fn new(components: Vec<f64>) -> Result<Self> {
        if components.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("{components:?}")));
        }
        Ok(Self(components))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// Mutable access for in-place updates; callers re-check finiteness.
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }

    pub fn dot(&self, other: &Embedding) -> Result<f64> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: other.dim(),
            });
        }
        Ok(dot(&self.0, &other.0))
    }

    pub fn norm(&self) -> f64 {
        dot(&self.0, &self.0).sqrt()
    }

    pub fn normalized(&self) -> Embedding {
        let n = self.norm();
        if n == 0.0 {
            return self.clone();
        }
        Embedding(self.0.iter().map(|x| x / n).collect())
    }
}

impl TryFrom<Vec<f64>> for Embedding {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Embedding::new(v)
    }
}

impl From<Embedding> for Vec<f64> {
    fn from(e: Embedding) -> Self {
        e.0
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingKind {
    Entity,
    Mention,
}

impl EmbeddingKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EmbeddingKind::Entity => "entity",
            EmbeddingKind::Mention => "mention",
        }
    }
}

impl fmt::Display for EmbeddingKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Vectors imported for one segment. Immutable once frozen.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    segment: String,
    dim: Option<usize>,
    vectors: BTreeMap<(EmbeddingKind, String), Embedding>,
    frozen: bool,
}

impl EmbeddingStore {
    pub fn new(segment: impl Into<String>) -> Self {
        Self {
            segment: segment.into(),
            dim: None,
            vectors: BTreeMap::new(),
            frozen: false,
        }
    }

    pub fn segment(&self) -> &str {
        &self.segment
    }

    pub fn dim(&self) -> Option<usize> {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn insert(&mut self, kind: EmbeddingKind, id: impl Into<String>, v: Embedding) -> Result<()> {
        if self.frozen {
            return Err(Error::Frozen(self.segment.clone()));
        }
        match self.dim {
            Some(d) if d != v.dim() => {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    found: v.dim(),
                })
            }
            _ => self.dim = Some(v.dim()),
        }
        self.vectors.insert((kind, id.into()), v);
        Ok(())
    }

    pub fn get(&self, kind: EmbeddingKind, id: &str) -> Option<&Embedding> {
        // BTreeMap lookup with a borrowed tuple key needs an owned key
        self.vectors.get(&(kind, id.to_string()))
    }

    pub fn lookup(&self, kind: EmbeddingKind, id: &str) -> Result<&Embedding> {
        self.get(kind, id).ok_or_else(|| Error::MissingEmbedding {
            kind: kind.as_str(),
            id: id.to_string(),
        })
    }

    pub fn iter(&self) -> impl Iterator<Item = (EmbeddingKind, &str, &Embedding)> {
        self.vectors.iter().map(|((k, id), v)| (*k, id.as_str(), v))
    }

    pub fn iter_kind(&self, kind: EmbeddingKind) -> impl Iterator<Item = (&str, &Embedding)> {
        self.iter()
            .filter(move |(k, _, _)| *k == kind)
            .map(|(_, id, v)| (id, v))
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct VectorLine {
    id: String,
    kind: EmbeddingKind,
    segment: String,
    vector: Vec<f32>,
}

/// Read a JSON-lines vector file into frozen stores keyed by segment.
pub fn read_jsonl(path: &Path) -> Result<BTreeMap<String, EmbeddingStore>> {
    let reader = BufReader::new(File::open(path)?);
    let mut stores: BTreeMap<String, EmbeddingStore> = BTreeMap::new();
    let mut dim = None;
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |message: String| Error::MalformedRecord {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let rec: VectorLine = serde_json::from_str(&line).map_err(|e| malformed(e.to_string()))?;
        match dim {
            Some(d) if d != rec.vector.len() => {
                return Err(malformed(format!(
                    "vector `{}` has dimension {}, expected {d}",
                    rec.id,
                    rec.vector.len()
                )))
            }
            _ => dim = Some(rec.vector.len()),
        }
        let v = Embedding::new(rec.vector.iter().map(|&x| f64::from(x)).collect())
            .map_err(|_| malformed(format!("vector `{}` has non-finite components", rec.id)))?;
        stores
            .entry(rec.segment.clone())
            .or_insert_with(|| EmbeddingStore::new(rec.segment.clone()))
            .insert(rec.kind, rec.id, v)?;
    }
    for store in stores.values_mut() {
        store.freeze();
    }
    Ok(stores)
}

pub fn write_jsonl<'a>(stores: impl IntoIterator<Item = &'a EmbeddingStore>, path: &Path) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for store in stores {
        for (kind, id, v) in store.iter() {
            let line = VectorLine {
                id: id.to_string(),
                kind,
                segment: store.segment.clone(),
                vector: v.as_slice().iter().map(|&x| x as f32).collect(),
            };
            serde_json::to_writer(&mut out, &line)?;
            out.write_all(b"\n")?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Write `(id, vector)` records in the binary format.
pub fn write_binary<'a>(records: impl IntoIterator<Item = (&'a str, &'a Embedding)>, path: &Path) -> Result<()> {
    let records: Vec<_> = records.into_iter().collect();
    let dim = records.first().map_or(0, |(_, v)| v.dim());
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(BINARY_MAGIC)?;
    out.write_all(&(dim as u32).to_le_bytes())?;
    out.write_all(&(records.len() as u32).to_le_bytes())?;
    out.write_all(&0u32.to_le_bytes())?;
    for (id, v) in records {
        if v.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: v.dim(),
            });
        }
        out.write_all(&(id.len() as u32).to_le_bytes())?;
        out.write_all(id.as_bytes())?;
        for &x in v.as_slice() {
            out.write_all(&(x as f32).to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Read a binary vector file. The format has no kind or segment field, so the
/// caller supplies both.
pub fn read_binary(path: &Path, kind: EmbeddingKind, segment: &str) -> Result<EmbeddingStore> {
    let mut input = BufReader::new(File::open(path)?);
    let bad = |message: &str| Error::MalformedRecord {
        path: path.to_path_buf(),
        line: 0,
        message: message.to_string(),
    };
    let mut header = [0u8; 16];
    input.read_exact(&mut header).map_err(|_| bad("truncated header"))?;
    if &header[0..4] != BINARY_MAGIC {
        return Err(bad("bad magic"));
    }
    let word = |i: usize| u32::from_le_bytes(header[i..i + 4].try_into().expect("4 bytes")) as usize;
    let (dim, count) = (word(4), word(8));
    let mut store = EmbeddingStore::new(segment);
    let mut buf4 = [0u8; 4];
    for _ in 0..count {
        input.read_exact(&mut buf4).map_err(|_| bad("truncated record"))?;
        let mut id = vec![0u8; u32::from_le_bytes(buf4) as usize];
        input.read_exact(&mut id).map_err(|_| bad("truncated id"))?;
        let id = String::from_utf8(id).map_err(|_| bad("id is not UTF-8"))?;
        let mut v = Vec::with_capacity(dim);
        for _ in 0..dim {
            input.read_exact(&mut buf4).map_err(|_| bad("truncated vector"))?;
            v.push(f64::from(f32::from_le_bytes(buf4)));
        }
        let v = Embedding::new(v).map_err(|_| bad("non-finite component"))?;
        store.insert(kind, id, v)?;
    }
    if input.read(&mut buf4)? != 0 {
        return Err(bad("trailing bytes after last record"));
    }
    store.freeze();
    Ok(store)
}
