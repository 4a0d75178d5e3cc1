use std::collections::BTreeMap;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::corpus::tokenize;
use crate::error::{Error, Result};
use crate::http::JsonClient;
use crate::seed;

/// A vector produced by a named provider.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
    pub provider_id: String,
}

impl EmbeddingVector {
    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// Text embedding backend. `embed` returns one vector of length `dim()` per
/// input, in input order. Implementations must tolerate concurrent calls.
pub trait EmbeddingProvider: Send + Sync {
    fn id(&self) -> String;
    fn dim(&self) -> usize;
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>>;

    fn embed_one(&self, text: &str) -> Result<EmbeddingVector> {
        let mut v = self.embed(&[text.to_string()])?;
        if v.len() != 1 {
            return Err(Error::Transport(format!("provider returned {} vectors for 1 input", v.len())));
        }
        Ok(EmbeddingVector {
            values: v.pop().unwrap(),
            provider_id: self.id(),
        })
    }
}

impl<P: EmbeddingProvider + ?Sized> EmbeddingProvider for &P {
    fn id(&self) -> String {
        (**self).id()
    }
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        (**self).embed(texts)
    }
}

impl<P: EmbeddingProvider + ?Sized> EmbeddingProvider for Box<P> {
    fn id(&self) -> String {
        (**self).id()
    }
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        (**self).embed(texts)
    }
}

/// Deterministic bag-of-words random projection.
///
/// Each token maps to a fixed pseudo-random direction seeded by its hash; a
/// text is the sum of its token directions weighted by `1 + ln(tf)`,
/// normalized to unit length. Texts without tokens map to the zero vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashProvider {
    dim: usize,
}

impl HashProvider {
    pub const DEFAULT_DIM: usize = 256;

    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::param("embedding dimension must be at least 1"));
        }
        Ok(HashProvider { dim })
    }

    fn direction(&self, token: &str, out: &mut [f64], weight: f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(seed::hash_str(token), &[self.dim as u64]));
        for v in out.iter_mut() {
            *v += weight * rng.gen_range(-1.0..1.0);
        }
    }

    pub fn embed_text(&self, text: &str) -> Vec<f64> {
        let mut tf: BTreeMap<String, usize> = BTreeMap::new();
        for t in tokenize(text) {
            *tf.entry(t).or_insert(0) += 1;
        }
        let mut v = vec![0.0; self.dim];
        for (t, n) in &tf {
            self.direction(t, &mut v, 1.0 + (*n as f64).ln());
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            for x in &mut v {
                *x /= norm;
            }
        }
        v
    }
}

impl Default for HashProvider {
    fn default() -> Self {
        HashProvider {
            dim: Self::DEFAULT_DIM,
        }
    }
}

impl EmbeddingProvider for HashProvider {
    fn id(&self) -> String {
        format!("hash-{}", self.dim)
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        Ok(texts.iter().map(|t| self.embed_text(t)).collect())
    }
}

/// Speaks the common embeddings schema: `{"model", "input": [..]}` in,
/// `{"data": [{"index", "embedding": [..]}]}` out.
#[derive(Debug, Clone)]
pub struct HttpEmbeddingProvider {
    client: JsonClient,
    model: String,
    dim: usize,
}

impl HttpEmbeddingProvider {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>, api_key: Option<String>, dim: usize) -> Self {
        HttpEmbeddingProvider {
            client: JsonClient::new(endpoint, api_key, Duration::from_secs(60)),
            model: model.into(),
            dim,
        }
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.client = JsonClient::new(self.client.endpoint().to_string(), self.client.api_key(), timeout);
        self
    }
}

impl EmbeddingProvider for HttpEmbeddingProvider {
    fn id(&self) -> String {
        format!("http:{}", self.model)
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        let resp = self.client.post(&json!({"model": self.model, "input": texts}))?;
        let bad = |msg: String| Error::Transport(format!("{}: {msg}", self.client.endpoint()));
        let data = resp
            .get("data")
            .and_then(|d| d.as_array())
            .ok_or_else(|| bad("response has no data array".into()))?;
        if data.len() != texts.len() {
            return Err(bad(format!("{} embeddings for {} inputs", data.len(), texts.len())));
        }
        let mut out: Vec<Option<Vec<f64>>> = vec![None; texts.len()];
        for (pos, item) in data.iter().enumerate() {
            let slot = match item.get("index").and_then(|i| i.as_u64()) {
                Some(i) => i as usize,
                None => pos,
            };
            let values: Vec<f64> = item
                .get("embedding")
                .and_then(|e| e.as_array())
                .ok_or_else(|| bad(format!("item {pos} has no embedding")))?
                .iter()
                .map(|x| x.as_f64().filter(|v| v.is_finite()))
                .collect::<Option<_>>()
                .ok_or_else(|| bad(format!("item {pos} has a non-numeric value")))?;
            if values.len() != self.dim {
                return Err(bad(format!("item {pos} has dimension {}, expected {}", values.len(), self.dim)));
            }
            match out.get_mut(slot) {
                Some(s @ None) => *s = Some(values),
                _ => return Err(bad(format!("bad or repeated index {slot}"))),
            }
        }
        Ok(out.into_iter().map(|v| v.expect("every slot filled")).collect())
    }
}
