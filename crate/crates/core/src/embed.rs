//! Text embeddings for memory selection, prototypes and retrieval.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::backend::protocol::{decode, EmbedRequest, EmbedResponse, Endpoint, Transport, WireRequest};
use crate::error::{Error, Result};
use crate::seed::{sha256_hex, stable_hash};

/// A dense embedding. Stored as produced by the provider; cosine does its own
/// normalization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Embedding(pub Vec<f64>);

impl Embedding {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

impl From<Vec<f64>> for Embedding {
    fn from(values: Vec<f64>) -> Self {
        Embedding(values)
    }
}

pub trait Embedder: Send + Sync {
    fn provider_id(&self) -> &str;

    fn dim(&self) -> usize;

    fn embed(&self, text: &str) -> Result<Embedding>;

    fn embed_many(&self, texts: &[&str]) -> Result<Vec<Embedding>> {
        texts.iter().map(|t| self.embed(t)).collect()
    }
}

impl<E: Embedder + ?Sized> Embedder for Arc<E> {
    fn provider_id(&self) -> &str {
        (**self).provider_id()
    }

    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn embed(&self, text: &str) -> Result<Embedding> {
        (**self).embed(text)
    }

    fn embed_many(&self, texts: &[&str]) -> Result<Vec<Embedding>> {
        (**self).embed_many(texts)
    }
}

fn require_text(text: &str) -> Result<()> {
    if text.trim().is_empty() {
        Err(Error::Embedding("cannot embed empty text".into()))
    } else {
        Ok(())
    }
}

/// Bag-of-tokens feature hashing into `dim` buckets, L2-normalized.
///
/// Tokens are lowercase alphanumeric runs. Text with no such run is hashed as
/// a single token so every non-empty input gets a non-zero vector.
#[derive(Debug, Clone)]
pub struct HashingEmbedder {
    dim: usize,
    id: String,
}

impl HashingEmbedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        HashingEmbedder {
            dim,
            id: format!("hashing-{dim}"),
        }
    }
}

pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

impl Embedder for HashingEmbedder {
    fn provider_id(&self) -> &str {
        &self.id
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Embedding> {
        require_text(text)?;
        let mut tokens = tokenize(text);
        if tokens.is_empty() {
            tokens.push(text.trim().to_string());
        }
        let mut values = vec![0.0; self.dim];
        for token in &tokens {
            let bucket = (stable_hash(token.as_bytes()) % self.dim as u64) as usize;
            values[bucket] += 1.0;
        }
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        values.iter_mut().for_each(|v| *v /= norm);
        Ok(Embedding(values))
    }
}

#[derive(Serialize, Deserialize)]
struct CacheRecord {
    provider: String,
    hash: String,
    vector: Embedding,
}

/// Memoizing wrapper keyed by `(provider_id, sha256(text))`.
///
/// With a backing file, new entries are appended as JSON lines and earlier
/// entries for the same provider are loaded on open.
pub struct CachedEmbedder<E> {
    inner: E,
    entries: Mutex<HashMap<String, Embedding>>,
    log: Option<Mutex<File>>,
    path: Option<PathBuf>,
}

impl<E: Embedder> CachedEmbedder<E> {
    pub fn in_memory(inner: E) -> Self {
        CachedEmbedder {
            inner,
            entries: Mutex::new(HashMap::new()),
            log: None,
            path: None,
        }
    }

    pub fn open(inner: E, path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut entries = HashMap::new();
        if path.exists() {
            let file = File::open(path).map_err(|e| Error::io(path, e))?;
            for line in BufReader::new(file).lines() {
                let line = line.map_err(|e| Error::io(path, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                let record: CacheRecord = serde_json::from_str(&line)?;
                if record.provider == inner.provider_id() {
                    entries.insert(record.hash, record.vector);
                }
            }
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        Ok(CachedEmbedder {
            inner,
            entries: Mutex::new(entries),
            log: Some(Mutex::new(file)),
            path: Some(path.to_path_buf()),
        })
    }

    pub fn len(&self) -> usize {
        self.entries.lock().unwrap_or_else(|p| p.into_inner()).len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn store(&self, hash: String, vector: &Embedding) -> Result<()> {
        if let (Some(log), Some(path)) = (&self.log, &self.path) {
            let record = CacheRecord {
                provider: self.inner.provider_id().to_string(),
                hash: hash.clone(),
                vector: vector.clone(),
            };
            let line = serde_json::to_string(&record)?;
            let mut file = log.lock().unwrap_or_else(|p| p.into_inner());
            writeln!(file, "{line}").map_err(|e| Error::io(path, e))?;
        }
        self.entries
            .lock()
            .unwrap_or_else(|p| p.into_inner())
            .insert(hash, vector.clone());
        Ok(())
    }
}

impl<E: Embedder> Embedder for CachedEmbedder<E> {
    fn provider_id(&self) -> &str {
        self.inner.provider_id()
    }

    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn embed(&self, text: &str) -> Result<Embedding> {
        require_text(text)?;
        let hash = sha256_hex(text.as_bytes());
        if let Some(hit) = self
            .entries
            .lock()
            .unwrap_or_else(|p| p.into_inner())
            .get(&hash)
        {
            return Ok(hit.clone());
        }
        let vector = self.inner.embed(text)?;
        self.store(hash, &vector)?;
        Ok(vector)
    }
}

/// Embeddings served by the training service's `/embed` endpoint.
pub struct RemoteEmbedder {
    transport: Arc<dyn Transport>,
    dim: usize,
    id: String,
}

impl RemoteEmbedder {
    pub fn new(transport: Arc<dyn Transport>, dim: usize, model: &str) -> Self {
        RemoteEmbedder {
            transport,
            dim,
            id: format!("remote-{model}"),
        }
    }
}

impl Embedder for RemoteEmbedder {
    fn provider_id(&self) -> &str {
        &self.id
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Embedding> {
        let mut out = self.embed_many(&[text])?;
        Ok(out.remove(0))
    }

    fn embed_many(&self, texts: &[&str]) -> Result<Vec<Embedding>> {
        for t in texts {
            require_text(t)?;
        }
        let request = WireRequest::Embed(EmbedRequest {
            texts: texts.iter().map(|t| t.to_string()).collect(),
        });
        let body = self.transport.post(Endpoint::Embed, &request.to_body()?)?;
        let response: EmbedResponse = decode(Endpoint::Embed, body)?;
        if response.vectors.len() != texts.len() {
            return Err(Error::Protocol(format!(
                "/embed returned {} vectors for {} texts",
                response.vectors.len(),
                texts.len()
            )));
        }
        response
            .vectors
            .into_iter()
            .map(|v| {
                if v.len() != self.dim {
                    Err(Error::DimensionMismatch {
                        expected: self.dim,
                        actual: v.len(),
                    })
                } else if v.iter().any(|x| !x.is_finite()) {
                    Err(Error::Embedding("non-finite value from /embed".into()))
                } else {
                    Ok(Embedding(v))
                }
            })
            .collect()
    }
}
