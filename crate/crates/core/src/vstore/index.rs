use std::collections::{BTreeMap, HashSet};
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::thread;
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Chunk, ChunkUnit, EmbeddingProvider, EmbeddingVector};
use crate::binio;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"LXVI";
const VERSION: u32 = 1;
pub const INDEX_EXTENSION: &str = "lxvi";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BuildOptions {
    pub batch_size: usize,
    /// Retries per batch after the first attempt.
    pub max_retries: usize,
    /// Delay before the first retry; doubled for each further retry.
    pub backoff: Duration,
}

impl Default for BuildOptions {
    fn default() -> Self {
        BuildOptions {
            batch_size: 128,
            max_retries: 3,
            backoff: Duration::from_millis(200),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BuildStats {
    pub batches: usize,
    pub retries: usize,
}

/// Exact cosine index over chunk embeddings. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorIndex {
    provider_id: String,
    dim: usize,
    topic_id: Option<String>,
    chunks: Vec<Chunk>,
    vectors: Vec<Vec<f64>>,
    norms: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hit {
    pub chunk: Chunk,
    pub score: f64,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `a·b / (|a||b|)`, 0 when either vector is zero, clamped to [-1, 1].
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let d = norm(a) * norm(b);
    if d == 0.0 {
        0.0
    } else {
        (dot(a, b) / d).clamp(-1.0, 1.0)
    }
}

impl VectorIndex {
    pub fn from_parts(
        provider_id: impl Into<String>,
        dim: usize,
        topic_id: Option<String>,
        chunks: Vec<Chunk>,
        vectors: Vec<Vec<f64>>,
    ) -> Result<Self> {
        if chunks.len() != vectors.len() {
            return Err(Error::Dimension {
                expected: format!("{} vectors", chunks.len()),
                found: vectors.len().to_string(),
            });
        }
        let mut ids = HashSet::new();
        for c in &chunks {
            if !ids.insert((c.doc_id.as_str(), c.index)) {
                return Err(Error::Data(format!("duplicate chunk id {}", c.id())));
            }
        }
        for v in &vectors {
            if v.len() != dim {
                return Err(Error::Dimension {
                    expected: format!("dimension {dim}"),
                    found: v.len().to_string(),
                });
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::Data("embedding has a non-finite value".into()));
            }
        }
        let norms = vectors.iter().map(|v| norm(v)).collect();
        Ok(VectorIndex {
            provider_id: provider_id.into(),
            dim,
            topic_id,
            chunks,
            vectors,
            norms,
        })
    }

    pub fn provider_id(&self) -> &str {
        &self.provider_id
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn topic_id(&self) -> Option<&str> {
        self.topic_id.as_deref()
    }

    pub fn len(&self) -> usize {
        self.chunks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chunks.is_empty()
    }

    pub fn chunks(&self) -> &[Chunk] {
        &self.chunks
    }

    pub fn vectors(&self) -> &[Vec<f64>] {
        &self.vectors
    }

    /// Mean of the unit-normalized entry vectors.
    pub fn centroid(&self) -> Vec<f64> {
        let mut c = vec![0.0; self.dim];
        for (v, n) in self.vectors.iter().zip(&self.norms) {
            if *n > 0.0 {
                for (ci, x) in c.iter_mut().zip(v) {
                    *ci += x / n;
                }
            }
        }
        if !self.vectors.is_empty() {
            let m = self.vectors.len() as f64;
            for x in &mut c {
                *x /= m;
            }
        }
        c
    }

    /// Top `top_k` entries by cosine similarity, ties by chunk id.
    pub fn search(&self, query: &EmbeddingVector, top_k: usize) -> Result<Vec<Hit>> {
        if top_k < 1 {
            return Err(Error::param("top_k must be at least 1"));
        }
        if query.dim() != self.dim {
            return Err(Error::param(format!(
                "query dimension {} does not match index dimension {}",
                query.dim(),
                self.dim
            )));
        }
        if query.provider_id != self.provider_id {
            return Err(Error::param(format!(
                "query from provider {:?} searched against index from {:?}",
                query.provider_id, self.provider_id
            )));
        }
        let qn = norm(&query.values);
        let mut scored: Vec<(usize, f64)> = self
            .vectors
            .iter()
            .zip(&self.norms)
            .enumerate()
            .map(|(i, (v, n))| {
                let d = qn * n;
                let s = if d == 0.0 { 0.0 } else { (dot(&query.values, v) / d).clamp(-1.0, 1.0) };
                (i, s)
            })
            .collect();
        scored.sort_by(|a, b| {
            b.1.total_cmp(&a.1)
                .then_with(|| self.chunks[a.0].key().cmp(&self.chunks[b.0].key()))
        });
        scored.truncate(top_k);
        Ok(scored
            .into_iter()
            .map(|(i, score)| Hit {
                chunk: self.chunks[i].clone(),
                score,
            })
            .collect())
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let io = |e| Error::io(path, e);
        let mut w = BufWriter::new(File::create(path).map_err(io)?);
        self.write_to(&mut w).map_err(io)?;
        w.flush().map_err(io)
    }

    fn write_to<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        binio::write_u32(w, VERSION)?;
        binio::write_u32(w, self.dim as u32)?;
        binio::write_str(w, &self.provider_id)?;
        match &self.topic_id {
            Some(t) => {
                binio::write_u8(w, 1)?;
                binio::write_str(w, t)?;
            }
            None => binio::write_u8(w, 0)?,
        }
        binio::write_u64(w, self.chunks.len() as u64)?;
        for (c, v) in self.chunks.iter().zip(&self.vectors) {
            binio::write_str(w, &c.doc_id)?;
            binio::write_u64(w, c.index as u64)?;
            binio::write_u8(w, c.unit.code())?;
            binio::write_u64(w, c.start as u64)?;
            binio::write_u64(w, c.end as u64)?;
            binio::write_str(w, &c.text)?;
            for x in v {
                binio::write_f64(w, *x)?;
            }
        }
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut r = BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?);
        Self::read_from(&mut r).map_err(|e| match e {
            ReadError::Io(e) => Error::io(path, e),
            ReadError::Other(e) => e,
        })
    }

    fn read_from<R: Read>(r: &mut R) -> std::result::Result<Self, ReadError> {
        binio::expect_magic(r, MAGIC)?;
        let version = binio::read_u32(r)?;
        if version != VERSION {
            return Err(Error::Data(format!("unsupported index version {version}")).into());
        }
        let dim = binio::read_u32(r)? as usize;
        let provider_id = binio::read_str(r)?;
        let topic_id = match binio::read_u8(r)? {
            0 => None,
            _ => Some(binio::read_str(r)?),
        };
        let count = binio::read_u64(r)? as usize;
        let mut chunks = Vec::with_capacity(count.min(1 << 20));
        let mut vectors = Vec::with_capacity(count.min(1 << 20));
        for _ in 0..count {
            let doc_id = binio::read_str(r)?;
            let index = binio::read_u64(r)? as usize;
            let unit = ChunkUnit::from_code(binio::read_u8(r)?)
                .ok_or_else(|| Error::Data("unknown chunk unit code".into()))?;
            let start = binio::read_u64(r)? as usize;
            let end = binio::read_u64(r)? as usize;
            let text = binio::read_str(r)?;
            let mut v = Vec::with_capacity(dim);
            for _ in 0..dim {
                v.push(binio::read_f64(r)?);
            }
            chunks.push(Chunk {
                doc_id,
                index,
                unit,
                start,
                end,
                text,
            });
            vectors.push(v);
        }
        Ok(VectorIndex::from_parts(provider_id, dim, topic_id, chunks, vectors)?)
    }
}

enum ReadError {
    Io(std::io::Error),
    Other(Error),
}

impl From<std::io::Error> for ReadError {
    fn from(e: std::io::Error) -> Self {
        ReadError::Io(e)
    }
}

impl From<Error> for ReadError {
    fn from(e: Error) -> Self {
        ReadError::Other(e)
    }
}

fn embed_with_retry(
    provider: &dyn EmbeddingProvider,
    batch_no: usize,
    texts: &[String],
    opts: &BuildOptions,
) -> Result<(Vec<Vec<f64>>, usize)> {
    let mut delay = opts.backoff;
    let mut last = String::new();
    for attempt in 0..=opts.max_retries {
        if attempt > 0 {
            log::warn!("embedding batch {batch_no}: retry {attempt} after error: {last}");
            thread::sleep(delay);
            delay *= 2;
        }
        match provider.embed(texts) {
            Ok(v) if v.len() == texts.len() => return Ok((v, attempt)),
            Ok(v) => last = format!("{} vectors for {} inputs", v.len(), texts.len()),
            Err(e) => last = e.to_string(),
        }
    }
    Err(Error::EmbeddingBatch {
        batch: batch_no,
        attempts: opts.max_retries + 1,
        message: last,
    })
}

pub fn build_index(chunks: Vec<Chunk>, provider: &dyn EmbeddingProvider, topic_id: Option<String>) -> Result<VectorIndex> {
    build_index_with(chunks, provider, topic_id, &BuildOptions::default()).map(|(i, _)| i)
}

/// Embed `chunks` in batches, concurrently, keeping chunk order.
pub fn build_index_with(
    chunks: Vec<Chunk>,
    provider: &dyn EmbeddingProvider,
    topic_id: Option<String>,
    opts: &BuildOptions,
) -> Result<(VectorIndex, BuildStats)> {
    if chunks.is_empty() {
        return Err(Error::param("cannot index an empty chunk list"));
    }
    if opts.batch_size < 1 {
        return Err(Error::param("batch_size must be at least 1"));
    }
    let texts: Vec<String> = chunks.iter().map(|c| c.text.clone()).collect();
    let batches: Vec<&[String]> = texts.chunks(opts.batch_size).collect();
    let results = batches
        .par_iter()
        .enumerate()
        .map(|(i, b)| embed_with_retry(provider, i, b, opts))
        .collect::<Vec<_>>();
    let mut vectors = Vec::with_capacity(chunks.len());
    let mut stats = BuildStats {
        batches: batches.len(),
        retries: 0,
    };
    for r in results {
        let (v, retries) = r?;
        stats.retries += retries;
        vectors.extend(v);
    }
    let index = VectorIndex::from_parts(provider.id(), provider.dim(), topic_id, chunks, vectors)?;
    Ok((index, stats))
}

/// How `route_and_search` picks the index to search.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Router {
    KnownTopic(String),
    BestTopic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutedHits {
    pub topic_id: String,
    pub hits: Vec<Hit>,
}

/// Topic whose index centroid is most similar to `query`, ties to the lowest id.
pub fn best_topic<'a>(indexes: &'a BTreeMap<String, VectorIndex>, query: &EmbeddingVector) -> Result<&'a str> {
    let mut best: Option<(&str, f64)> = None;
    for (t, idx) in indexes {
        if idx.dim() != query.dim() {
            return Err(Error::param(format!("index {t} has dimension {}, query {}", idx.dim(), query.dim())));
        }
        let s = cosine(&query.values, &idx.centroid());
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((t, s));
        }
    }
    best.map(|(t, _)| t).ok_or_else(|| Error::param("no indexes to route between"))
}

pub fn route_and_search(
    indexes: &BTreeMap<String, VectorIndex>,
    query: &str,
    provider: &dyn EmbeddingProvider,
    router: &Router,
    top_k: usize,
) -> Result<RoutedHits> {
    if indexes.is_empty() {
        return Err(Error::param("no indexes to route between"));
    }
    let q = provider.embed_one(query)?;
    let topic = match router {
        Router::KnownTopic(t) => {
            if !indexes.contains_key(t) {
                return Err(Error::param(format!("unknown topic {t:?}")));
            }
            t.as_str()
        }
        Router::BestTopic => best_topic(indexes, &q)?,
    };
    Ok(RoutedHits {
        topic_id: topic.to_string(),
        hits: indexes[topic].search(&q, top_k)?,
    })
}

/// Key used for an index without a topic.
pub const WHOLE_CORPUS: &str = "all";

/// Write each index to `dir/index-NNN.lxvi`, in key order.
pub fn save_indexes(dir: impl AsRef<Path>, indexes: &BTreeMap<String, VectorIndex>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = Vec::new();
    for (i, idx) in indexes.values().enumerate() {
        let p = dir.join(format!("index-{i:03}.{INDEX_EXTENSION}"));
        idx.write(&p)?;
        out.push(p);
    }
    Ok(out)
}

/// Load every index file in `dir`, keyed by topic id (`all` for none).
pub fn load_indexes(dir: impl AsRef<Path>) -> Result<BTreeMap<String, VectorIndex>> {
    let dir = dir.as_ref();
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == INDEX_EXTENSION))
        .collect();
    paths.sort();
    let mut out = BTreeMap::new();
    for p in paths {
        let idx = VectorIndex::read(&p)?;
        let key = idx.topic_id().unwrap_or(WHOLE_CORPUS).to_string();
        if out.insert(key.clone(), idx).is_some() {
            return Err(Error::Data(format!("{}: second index for topic {key:?}", dir.display())));
        }
    }
    if out.is_empty() {
        return Err(Error::Data(format!("{}: no .{INDEX_EXTENSION} files", dir.display())));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vstore::HashProvider;
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn chunk(doc: &str, i: usize, text: &str) -> Chunk {
        Chunk {
            doc_id: doc.into(),
            index: i,
            unit: ChunkUnit::Words,
            start: i,
            end: i + 1,
            text: text.into(),
        }
    }

    fn qv(values: Vec<f64>, provider: &str) -> EmbeddingVector {
        EmbeddingVector {
            values,
            provider_id: provider.into(),
        }
    }

    #[test]
    fn single_chunk_index_is_reproducible() {
        let p = HashProvider::default();
        let a = build_index(vec![chunk("d", 0, "water rights")], &p, None).unwrap();
        let b = build_index(vec![chunk("d", 0, "water rights")], &p, None).unwrap();
        assert_eq!(a.len(), 1);
        assert_eq!(a, b);
        let hits = a.search(&p.embed_one("water rights").unwrap(), 5).unwrap();
        assert_eq!(hits.len(), 1);
        assert!((hits[0].score - 1.0).abs() < 1e-9);
    }

    struct Counting {
        calls: AtomicUsize,
        fail_first: usize,
    }

    impl EmbeddingProvider for Counting {
        fn id(&self) -> String {
            "counting".into()
        }
        fn dim(&self) -> usize {
            2
        }
        fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
            let n = self.calls.fetch_add(1, Ordering::SeqCst);
            if n < self.fail_first {
                return Err(Error::Transport("flaky".into()));
            }
            Ok(texts.iter().map(|t| vec![t.len() as f64, 1.0]).collect())
        }
    }

    fn fast() -> BuildOptions {
        BuildOptions {
            backoff: Duration::ZERO,
            ..BuildOptions::default()
        }
    }

    #[test]
    fn batching_and_retries() {
        let chunks: Vec<Chunk> = (0..300).map(|i| chunk("d", i, "x")).collect();
        let p = Counting {
            calls: AtomicUsize::new(0),
            fail_first: 0,
        };
        let (idx, stats) = build_index_with(chunks.clone(), &p, None, &fast()).unwrap();
        assert_eq!(p.calls.load(Ordering::SeqCst), 3);
        assert_eq!(stats, BuildStats { batches: 3, retries: 0 });
        assert_eq!(idx.len(), 300);

        let p = Counting {
            calls: AtomicUsize::new(0),
            fail_first: 2,
        };
        let (_, stats) = build_index_with(chunks[..10].to_vec(), &p, None, &fast()).unwrap();
        assert_eq!(stats.retries, 2);

        let p = Counting {
            calls: AtomicUsize::new(0),
            fail_first: 10,
        };
        match build_index_with(chunks[..10].to_vec(), &p, None, &fast()) {
            Err(Error::EmbeddingBatch { batch, attempts, .. }) => {
                assert_eq!(batch, 0);
                assert_eq!(attempts, 4);
            }
            other => panic!("{other:?}"),
        }
        assert!(build_index(Vec::new(), &HashProvider::default(), None).is_err());
    }

    #[test]
    fn search_contract() {
        let chunks = vec![chunk("b", 0, ""), chunk("a", 1, ""), chunk("a", 0, "")];
        let vectors = vec![vec![1.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]];
        let idx = VectorIndex::from_parts("p", 2, None, chunks, vectors).unwrap();
        let hits = idx.search(&qv(vec![2.0, 0.0], "p"), 2).unwrap();
        assert_eq!(hits[0].chunk.id(), "a#1");
        assert_eq!(hits[1].chunk.id(), "b#0");
        assert!((hits[0].score - 1.0).abs() < 1e-12);
        let hits = idx.search(&qv(vec![0.0, 0.0], "p"), 10).unwrap();
        assert_eq!(hits.len(), 3);
        assert!(hits.iter().all(|h| h.score == 0.0));
        assert!(idx.search(&qv(vec![1.0], "p"), 1).is_err());
        assert!(idx.search(&qv(vec![1.0, 0.0], "q"), 1).is_err());
        assert!(idx.search(&qv(vec![1.0, 0.0], "p"), 0).is_err());
    }

    #[test]
    fn rejects_inconsistent_parts() {
        assert!(VectorIndex::from_parts("p", 2, None, vec![chunk("a", 0, "")], vec![vec![1.0]]).is_err());
        assert!(VectorIndex::from_parts("p", 1, None, vec![chunk("a", 0, ""), chunk("a", 0, "")], vec![vec![1.0], vec![1.0]]).is_err());
        assert!(VectorIndex::from_parts("p", 1, None, vec![chunk("a", 0, "")], vec![vec![f64::NAN]]).is_err());
    }

    #[test]
    fn persistence_round_trip() {
        let p = HashProvider::new(8).unwrap();
        let chunks = vec![chunk("a", 0, "water ditch"), chunk("a", 1, "habeas corpus ñ")];
        let idx = build_index(chunks, &p, Some("root/1".into())).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.lxvi");
        idx.write(&path).unwrap();
        let back = VectorIndex::read(&path).unwrap();
        assert_eq!(back, idx);
        let bytes = fs::read(&path).unwrap();
        assert_eq!(&bytes[..4], b"LXVI");
        back.write(dir.path().join("y.lxvi")).unwrap();
        assert_eq!(fs::read(dir.path().join("y.lxvi")).unwrap(), bytes);
        fs::write(&path, b"nope").unwrap();
        assert!(VectorIndex::read(&path).is_err());
    }

    #[test]
    fn routing() {
        let p = HashProvider::default();
        let mut indexes = BTreeMap::new();
        indexes.insert(
            "water".to_string(),
            build_index(vec![chunk("w", 0, "water irrigation ditch acequia rights")], &p, Some("water".into())).unwrap(),
        );
        let only = route_and_search(&indexes, "anything", &p, &Router::BestTopic, 3).unwrap();
        assert_eq!(only.topic_id, "water");
        indexes.insert(
            "crime".to_string(),
            build_index(vec![chunk("c", 0, "habeas corpus prisoner sentence")], &p, Some("crime".into())).unwrap(),
        );
        let r = route_and_search(&indexes, "prisoner habeas petition", &p, &Router::BestTopic, 3).unwrap();
        assert_eq!(r.topic_id, "crime");
        let known = route_and_search(&indexes, "water", &p, &Router::KnownTopic("crime".into()), 3).unwrap();
        let direct = indexes["crime"].search(&p.embed_one("water").unwrap(), 3).unwrap();
        assert_eq!(known.hits, direct);
        assert!(route_and_search(&indexes, "x", &p, &Router::KnownTopic("nope".into()), 3).is_err());
        assert!(route_and_search(&BTreeMap::new(), "x", &p, &Router::BestTopic, 3).is_err());

        let dir = tempfile::tempdir().unwrap();
        save_indexes(dir.path(), &indexes).unwrap();
        assert_eq!(load_indexes(dir.path()).unwrap(), indexes);
    }
}
