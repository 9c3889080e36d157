use std::collections::HashMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::{content_key, EmbeddingError, Provider, ProviderMode};
use crate::scalar::Scalar;

/// File magic for the embedding store format.
pub const STORE_MAGIC: &[u8; 6] = b"EMBV1\0";

/// Keyed matrix of equally sized vectors.
///
/// On disk: `EMBV1\0`, `rows: u32 LE`, `dim: u32 LE`, `rows * dim` f32 LE
/// values row-major, then `rows` keys each as `len: u32 LE` + UTF-8 bytes.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore<T> {
    dim: usize,
    keys: Vec<String>,
    data: Vec<T>,
    index: HashMap<String, usize>,
}

impl<T: Scalar> EmbeddingStore<T> {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            keys: Vec::new(),
            data: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn dimension(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn keys(&self) -> &[String] {
        &self.keys
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[T]> {
        (0..self.len()).map(|i| self.row(i))
    }

    pub fn get(&self, key: &str) -> Option<&[T]> {
        self.index.get(key).map(|&i| self.row(i))
    }

    pub fn contains(&self, key: &str) -> bool {
        self.index.contains_key(key)
    }

    /// Appends a row. Keys must be unique and values finite.
    pub fn push(&mut self, key: impl Into<String>, row: &[T]) -> Result<(), EmbeddingError> {
        let key = key.into();
        if row.len() != self.dim {
            return Err(EmbeddingError::DimensionMismatch {
                expected: self.dim,
                found: row.len(),
            });
        }
        if row.iter().any(|x| !x.is_finite()) {
            return Err(EmbeddingError::NonFinite);
        }
        if self.index.contains_key(&key) {
            return Err(EmbeddingError::DuplicateKey(key));
        }
        self.index.insert(key.clone(), self.keys.len());
        self.keys.push(key);
        self.data.extend_from_slice(row);
        Ok(())
    }

    /// Converts element type (f32 → f64 is exact).
    pub fn cast<U: Scalar>(&self) -> EmbeddingStore<U> {
        EmbeddingStore {
            dim: self.dim,
            keys: self.keys.clone(),
            data: self
                .data
                .iter()
                .map(|&x| U::from(x).expect("finite float casts"))
                .collect(),
            index: self.index.clone(),
        }
    }

    /// Size of the serialized form in bytes.
    pub fn serialized_len(&self) -> u64 {
        let header = STORE_MAGIC.len() + 8;
        let payload = self.data.len() * 4;
        let keys: usize = self.keys.iter().map(|k| 4 + k.len()).sum();
        (header + payload + keys) as u64
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), EmbeddingError> {
        let rows = u32::try_from(self.len())
            .map_err(|_| EmbeddingError::Format("too many rows".into()))?;
        let dim =
            u32::try_from(self.dim).map_err(|_| EmbeddingError::Format("dim too large".into()))?;
        w.write_all(STORE_MAGIC)?;
        w.write_all(&rows.to_le_bytes())?;
        w.write_all(&dim.to_le_bytes())?;
        let mut buf = Vec::with_capacity(self.data.len() * 4);
        for &x in &self.data {
            let f = x.to_f32().expect("finite float casts to f32");
            buf.extend_from_slice(&f.to_le_bytes());
        }
        w.write_all(&buf)?;
        for k in &self.keys {
            w.write_all(&(k.len() as u32).to_le_bytes())?;
            w.write_all(k.as_bytes())?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.serialized_len() as usize);
        self.write_to(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, EmbeddingError> {
        let mut cur = Cursor { bytes, pos: 0 };
        if cur.take(STORE_MAGIC.len(), "magic")? != STORE_MAGIC {
            return Err(EmbeddingError::Format("bad magic".into()));
        }
        let rows = cur.u32("row count")? as usize;
        let dim = cur.u32("dimension")? as usize;
        let n = rows
            .checked_mul(dim)
            .ok_or_else(|| EmbeddingError::Format("rows * dim overflows".into()))?;
        let payload = cur.take(n.saturating_mul(4), "row payload")?;
        let mut data = Vec::with_capacity(n);
        for (i, chunk) in payload.chunks_exact(4).enumerate() {
            let f = f32::from_le_bytes(chunk.try_into().unwrap());
            if !f.is_finite() {
                return Err(EmbeddingError::Format(format!(
                    "non-finite value in row {}",
                    i / dim.max(1)
                )));
            }
            data.push(T::from(f).unwrap());
        }
        let mut keys = Vec::with_capacity(rows);
        let mut index = HashMap::with_capacity(rows);
        for row in 0..rows {
            let len = cur.u32("key length")? as usize;
            let raw = cur.take(len, "key")?;
            let key = std::str::from_utf8(raw)
                .map_err(|_| EmbeddingError::Format(format!("key {row} is not UTF-8")))?
                .to_string();
            if index.insert(key.clone(), row).is_some() {
                return Err(EmbeddingError::DuplicateKey(key));
            }
            keys.push(key);
        }
        if cur.pos != bytes.len() {
            return Err(EmbeddingError::Format(format!(
                "{} trailing bytes",
                bytes.len() - cur.pos
            )));
        }
        Ok(Self {
            dim,
            keys,
            data,
            index,
        })
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, EmbeddingError> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    /// Writes to a sibling temp file and renames it into place.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), EmbeddingError> {
        let path = path.as_ref();
        let tmp = path.with_extension("tmp");
        {
            let mut f = std::io::BufWriter::new(fs::File::create(&tmp)?);
            self.write_to(&mut f)?;
            f.flush()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], EmbeddingError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| EmbeddingError::Format(format!("truncated {what}")))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<u32, EmbeddingError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

/// Reads an embedding store file.
pub fn load_store<T: Scalar>(path: impl AsRef<Path>) -> Result<EmbeddingStore<T>, EmbeddingError> {
    EmbeddingStore::from_bytes(&fs::read(path)?)
}

/// Provider answering from a store. Lookups try the [`content_key`] for the
/// request mode first (the layout [`super::RemoteProvider`] caches with),
/// then the raw text.
#[derive(Debug, Clone)]
pub struct StoreProvider<T> {
    name: String,
    store: EmbeddingStore<T>,
}

impl<T: Scalar> StoreProvider<T> {
    pub fn new(name: impl Into<String>, store: EmbeddingStore<T>) -> Self {
        Self {
            name: name.into(),
            store,
        }
    }

    fn lookup(&self, mode: ProviderMode, texts: &[String]) -> Result<Vec<Vec<T>>, EmbeddingError> {
        texts
            .iter()
            .enumerate()
            .map(|(i, t)| {
                self.store
                    .get(&content_key(mode, t))
                    .or_else(|| self.store.get(t))
                    .map(<[T]>::to_vec)
                    .ok_or_else(|| {
                        EmbeddingError::at(i, EmbeddingError::MissingKey { key: t.clone() })
                    })
            })
            .collect()
    }
}

impl<T: Scalar> Provider<T> for StoreProvider<T> {
    fn name(&self) -> &str {
        &self.name
    }

    fn dimension(&self) -> Option<usize> {
        Some(self.store.dimension())
    }

    fn mode(&self) -> ProviderMode {
        ProviderMode::Both
    }

    fn embed_tokens(&self, tokens: &[String]) -> Result<Vec<Vec<T>>, EmbeddingError> {
        self.lookup(ProviderMode::Token, tokens)
    }

    fn embed_sentences(&self, sentences: &[String]) -> Result<Vec<Vec<T>>, EmbeddingError> {
        self.lookup(ProviderMode::Sentence, sentences)
    }
}
