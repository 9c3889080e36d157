use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{content_key, EmbeddingError, EmbeddingStore, Provider, ProviderMode};
use crate::scalar::Scalar;

/// Body of `POST /embed`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EmbedRequest {
    pub texts: Vec<String>,
    pub mode: String,
}

/// Response of `POST /embed`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EmbedResponse {
    pub dim: usize,
    pub vectors: Vec<Vec<f64>>,
}

/// Client for an external encoder service.
///
/// Every vector received is cached under [`content_key`]; repeated texts
/// never reach the network. With a cache path the cache is persisted after
/// each batch and reloaded on construction.
pub struct RemoteProvider {
    name: String,
    url: String,
    agent: ureq::Agent,
    cache: Mutex<EmbeddingStore<f32>>,
    cache_path: Option<PathBuf>,
    dim: Mutex<Option<usize>>,
    max_retries: usize,
    batch_size: usize,
    requests: AtomicUsize,
}

impl RemoteProvider {
    /// `endpoint` is the service base URL; `/embed` is appended unless
    /// already present.
    pub fn new(endpoint: &str) -> Self {
        let base = endpoint.trim_end_matches('/');
        let url = if base.ends_with("/embed") {
            base.to_string()
        } else {
            format!("{base}/embed")
        };
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(60)))
            .build()
            .into();
        Self {
            name: format!("remote:{base}"),
            url,
            agent,
            cache: Mutex::new(EmbeddingStore::new(0)),
            cache_path: None,
            dim: Mutex::new(None),
            max_retries: 2,
            batch_size: 32,
            requests: AtomicUsize::new(0),
        }
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn with_retries(mut self, max_retries: usize) -> Self {
        self.max_retries = max_retries;
        self
    }

    pub fn with_batch_size(mut self, batch_size: usize) -> Self {
        self.batch_size = batch_size.max(1);
        self
    }

    /// Uses (and loads, if it exists) an on-disk cache.
    pub fn with_cache_file(mut self, path: impl Into<PathBuf>) -> Result<Self, EmbeddingError> {
        let path = path.into();
        if path.exists() {
            let store: EmbeddingStore<f32> = super::load_store(&path)?;
            if !store.is_empty() {
                *self.dim.get_mut().unwrap() = Some(store.dimension());
            }
            *self.cache.get_mut().unwrap() = store;
        }
        self.cache_path = Some(path);
        Ok(self)
    }

    /// HTTP requests issued so far (retries included).
    pub fn request_count(&self) -> usize {
        self.requests.load(Ordering::SeqCst)
    }

    pub fn cached(&self) -> usize {
        self.cache.lock().unwrap().len()
    }

    fn post(&self, body: &EmbedRequest) -> Result<EmbedResponse, EmbeddingError> {
        let mut last = String::new();
        for attempt in 1..=self.max_retries + 1 {
            self.requests.fetch_add(1, Ordering::SeqCst);
            let result = self
                .agent
                .post(&self.url)
                .send_json(body)
                .and_then(|mut resp| resp.body_mut().read_json::<EmbedResponse>());
            match result {
                Ok(r) => return Ok(r),
                Err(e) => {
                    log::warn!("embed request to {} failed (attempt {attempt}): {e}", self.url);
                    last = e.to_string();
                    if attempt <= self.max_retries {
                        std::thread::sleep(Duration::from_millis(50 * attempt as u64));
                    }
                }
            }
        }
        Err(EmbeddingError::Remote {
            attempts: self.max_retries + 1,
            message: last,
        })
    }

    fn fetch(&self, mode: ProviderMode, texts: &[String]) -> Result<(), EmbeddingError> {
        let missing: Vec<(usize, &String)> = {
            let cache = self.cache.lock().unwrap();
            let mut seen = std::collections::HashSet::new();
            texts
                .iter()
                .enumerate()
                .filter(|(_, t)| {
                    let key = content_key(mode, t);
                    !cache.contains(&key) && seen.insert(key)
                })
                .collect()
        };
        for batch in missing.chunks(self.batch_size) {
            let first_index = batch[0].0;
            let request = EmbedRequest {
                texts: batch.iter().map(|(_, t)| (*t).clone()).collect(),
                mode: mode.as_str().to_string(),
            };
            let resp = self
                .post(&request)
                .map_err(|e| EmbeddingError::at(first_index, e))?;
            if resp.vectors.len() != batch.len() {
                return Err(EmbeddingError::at(
                    first_index,
                    EmbeddingError::Protocol(format!(
                        "expected {} vectors, got {}",
                        batch.len(),
                        resp.vectors.len()
                    )),
                ));
            }
            {
                let mut dim = self.dim.lock().unwrap();
                let expected = *dim.get_or_insert(resp.dim);
                if resp.dim != expected {
                    return Err(EmbeddingError::DimensionMismatch {
                        expected,
                        found: resp.dim,
                    });
                }
            }
            let mut cache = self.cache.lock().unwrap();
            if cache.is_empty() && cache.dimension() != resp.dim {
                *cache = EmbeddingStore::new(resp.dim);
            }
            for ((index, text), v) in batch.iter().zip(&resp.vectors) {
                if v.len() != resp.dim {
                    return Err(EmbeddingError::at(
                        *index,
                        EmbeddingError::DimensionMismatch {
                            expected: resp.dim,
                            found: v.len(),
                        },
                    ));
                }
                let row: Vec<f32> = v.iter().map(|&x| x as f32).collect();
                let key = content_key(mode, text);
                if !cache.contains(&key) {
                    cache
                        .push(key, &row)
                        .map_err(|e| EmbeddingError::at(*index, e))?;
                }
            }
            if let Some(path) = &self.cache_path {
                cache.save(path)?;
            }
        }
        Ok(())
    }

    fn embed<T: Scalar>(
        &self,
        mode: ProviderMode,
        texts: &[String],
    ) -> Result<Vec<Vec<T>>, EmbeddingError> {
        self.fetch(mode, texts)?;
        let cache = self.cache.lock().unwrap();
        texts
            .iter()
            .enumerate()
            .map(|(i, t)| {
                cache
                    .get(&content_key(mode, t))
                    .map(|row| row.iter().map(|&x| T::from(x).unwrap()).collect())
                    .ok_or_else(|| {
                        EmbeddingError::at(i, EmbeddingError::MissingKey { key: t.clone() })
                    })
            })
            .collect()
    }
}

impl<T: Scalar> Provider<T> for RemoteProvider {
    fn name(&self) -> &str {
        &self.name
    }

    fn dimension(&self) -> Option<usize> {
        *self.dim.lock().unwrap()
    }

    fn mode(&self) -> ProviderMode {
        ProviderMode::Both
    }

    fn embed_tokens(&self, tokens: &[String]) -> Result<Vec<Vec<T>>, EmbeddingError> {
        self.embed(ProviderMode::Token, tokens)
    }

    fn embed_sentences(&self, sentences: &[String]) -> Result<Vec<Vec<T>>, EmbeddingError> {
        self.embed(ProviderMode::Sentence, sentences)
    }
}

impl std::fmt::Debug for RemoteProvider {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RemoteProvider")
            .field("name", &self.name)
            .field("url", &self.url)
            .field("cache_path", &self.cache_path)
            .finish_non_exhaustive()
    }
}

/// Builds a [`RemoteProvider`] for `endpoint`.
pub fn remote_provider(endpoint: &str) -> RemoteProvider {
    RemoteProvider::new(endpoint)
}
