//! Embedding tables and the EMB1 container.
//!
//! EMB1 layout (all integers little-endian u32, floats little-endian f32):
//!
//! ```text
//! "EMB1" | dim | count | count × ( id_len | id bytes (UTF-8) | dim × f32 )
//! ```
//!
//! A JSON Lines fallback (`{"id": "...", "vector": [...]}` per line) is
//! accepted on load and detected by the absence of the magic.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;

pub const EMB1_MAGIC: &[u8; 4] = b"EMB1";

/// Id → fixed-dimension vector store. Insertion order is preserved and is
/// the order used on write.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    ids: Vec<String>,
    data: Vec<f32>,
    index: HashMap<String, usize>,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("embedding dim must be positive".into()));
        }
        Ok(Self {
            dim,
            ids: Vec::new(),
            data: Vec::new(),
            index: HashMap::new(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn insert(&mut self, id: impl Into<String>, vector: &[f32]) -> Result<()> {
        let id = id.into();
        if vector.len() != self.dim {
            return Err(Error::DimMismatch {
                id,
                expected: self.dim,
                found: vector.len(),
            });
        }
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { id });
        }
        if self.index.contains_key(&id) {
            return Err(Error::DuplicateId {
                kind: "embedding id",
                id,
            });
        }
        self.index.insert(id.clone(), self.ids.len());
        self.ids.push(id);
        self.data.extend_from_slice(vector);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&[f32]> {
        self.index.get(id).map(|&i| self.row(i))
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn id(&self, i: usize) -> &str {
        &self.ids[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f32])> + '_ {
        self.ids
            .iter()
            .enumerate()
            .map(move |(i, id)| (id.as_str(), self.row(i)))
    }

    pub fn to_emb1_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + self.data.len() * 4 + self.ids.len() * 8);
        out.extend_from_slice(EMB1_MAGIC);
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.ids.len() as u32).to_le_bytes());
        for (id, vector) in self.iter() {
            out.extend_from_slice(&(id.len() as u32).to_le_bytes());
            out.extend_from_slice(id.as_bytes());
            for v in vector {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_emb1_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cursor = Cursor { bytes, pos: 0 };
        let magic: [u8; 4] = cursor.take(4, "magic")?.try_into().expect("4 bytes");
        if &magic != EMB1_MAGIC {
            return Err(Error::BadMagic { found: magic });
        }
        let dim = cursor.u32("dim")? as usize;
        let count = cursor.u32("count")? as usize;
        let mut table = EmbeddingTable::new(dim)?;
        let mut vector = vec![0f32; dim];
        for record in 0..count {
            let what = format!("record {record}");
            let id_len = cursor.u32(&what)? as usize;
            let id = std::str::from_utf8(cursor.take(id_len, &what)?)
                .map_err(|_| Error::Truncated(format!("{what}: id is not valid UTF-8")))?
                .to_owned();
            let raw = cursor.take(dim * 4, &what)?;
            for (slot, chunk) in vector.iter_mut().zip(raw.chunks_exact(4)) {
                *slot = f32::from_le_bytes(chunk.try_into().expect("4 bytes"));
            }
            table.insert(id, &vector)?;
        }
        if cursor.pos != bytes.len() {
            return Err(Error::Truncated(format!(
                "{} trailing bytes after {count} records",
                bytes.len() - cursor.pos
            )));
        }
        Ok(table)
    }

    /// Parses the JSON Lines fallback. With `dim = None` the first entry fixes it.
    pub fn from_jsonl_str(text: &str, dim: Option<usize>) -> Result<Self> {
        let mut table: Option<EmbeddingTable> = dim.map(EmbeddingTable::new).transpose()?;
        for (idx, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let entry: JsonEntry = serde_json::from_str(line).map_err(|e| Error::Parse {
                line: idx + 1,
                message: e.to_string(),
            })?;
            let t = match table.as_mut() {
                Some(t) => t,
                None => table.insert(EmbeddingTable::new(entry.vector.len())?),
            };
            t.insert(entry.id, &entry.vector)?;
        }
        table.ok_or_else(|| Error::Empty("embedding JSONL has no entries and no dim".into()))
    }
}

#[derive(Serialize, Deserialize)]
struct JsonEntry {
    id: String,
    vector: Vec<f32>,
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::Truncated(format!(
                "{what}: need {n} bytes at offset {}, file has {}",
                self.pos,
                self.bytes.len()
            ))),
        }
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")))
    }
}

/// Loads an EMB1 file, falling back to JSON Lines when the file does not
/// start with the magic but looks like JSON.
pub fn load_embeddings(path: &Path) -> Result<EmbeddingTable> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(EMB1_MAGIC) {
        return EmbeddingTable::from_emb1_bytes(&bytes);
    }
    let first = bytes.iter().find(|b| !b.is_ascii_whitespace());
    if first == Some(&b'{') {
        let text = std::str::from_utf8(&bytes).map_err(|_| Error::Parse {
            line: 0,
            message: "embedding JSONL is not UTF-8".into(),
        })?;
        return EmbeddingTable::from_jsonl_str(text, None);
    }
    EmbeddingTable::from_emb1_bytes(&bytes)
}

pub fn write_embeddings(table: &EmbeddingTable, path: &Path) -> Result<()> {
    io::write_atomic(path, &table.to_emb1_bytes())
}

pub fn write_embeddings_jsonl(table: &EmbeddingTable, path: &Path) -> Result<()> {
    io::write_jsonl(
        path,
        table.iter().map(|(id, v)| JsonEntry {
            id: id.to_owned(),
            vector: v.to_vec(),
        }),
    )
}

/// Inner product accumulated in f64, left to right.
pub fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}
