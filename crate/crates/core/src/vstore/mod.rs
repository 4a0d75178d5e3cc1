//! Chunking, embedding providers and exact cosine vector search.

mod chunk;
mod index;
mod provider;

use std::collections::BTreeMap;

pub use chunk::{
    chunk_by_type, chunk_document, reconstruct, split_paragraphs, units, whole_document, Chunk, ChunkConfig, ChunkUnit,
};
pub use index::{
    best_topic, build_index, build_index_with, cosine, load_indexes, route_and_search, save_indexes, BuildOptions,
    BuildStats, Hit, RoutedHits, Router, VectorIndex, INDEX_EXTENSION, WHOLE_CORPUS,
};
pub use provider::{EmbeddingProvider, EmbeddingVector, HashProvider, HttpEmbeddingProvider};

use crate::corpus::Document;
use crate::error::{Error, Result};
use crate::hnmfk::Hierarchy;

/// How documents are cut into index entries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Chunking {
    /// One entry per document.
    Whole,
    /// Paragraphs for structured documents, windows for case law.
    ByType(ChunkConfig),
}

pub fn chunk_corpus(docs: &[Document], chunking: Chunking) -> Result<Vec<Chunk>> {
    let mut out = Vec::new();
    for d in docs {
        match chunking {
            Chunking::Whole => out.extend(whole_document(d)),
            Chunking::ByType(cfg) => out.extend(chunk_by_type(d, &cfg)?),
        }
    }
    Ok(out)
}

/// Documents grouped by their leaf topic in `h`. Documents missing from the
/// hierarchy are an error.
pub fn partition_by_leaf<'a>(docs: &'a [Document], h: &Hierarchy) -> Result<BTreeMap<String, Vec<&'a Document>>> {
    let leaf = h.leaf_of();
    let mut out: BTreeMap<String, Vec<&Document>> = BTreeMap::new();
    for d in docs {
        let t = leaf
            .get(&d.id)
            .ok_or_else(|| Error::Data(format!("document {:?} is not in the hierarchy", d.id)))?;
        out.entry(t.clone()).or_default().push(d);
    }
    Ok(out)
}

/// One index per leaf topic. Topics whose documents yield no text are skipped.
pub fn build_topic_indexes(
    docs: &[Document],
    h: &Hierarchy,
    chunking: Chunking,
    provider: &dyn EmbeddingProvider,
    opts: &BuildOptions,
) -> Result<BTreeMap<String, VectorIndex>> {
    let mut out = BTreeMap::new();
    for (topic, members) in partition_by_leaf(docs, h)? {
        let owned: Vec<Document> = members.into_iter().cloned().collect();
        let chunks = chunk_corpus(&owned, chunking)?;
        if chunks.is_empty() {
            continue;
        }
        let (idx, _) = build_index_with(chunks, provider, Some(topic.clone()), opts)?;
        out.insert(topic, idx);
    }
    Ok(out)
}

/// A single index over all documents, keyed `all`.
pub fn build_corpus_index(
    docs: &[Document],
    chunking: Chunking,
    provider: &dyn EmbeddingProvider,
    opts: &BuildOptions,
) -> Result<BTreeMap<String, VectorIndex>> {
    let (idx, _) = build_index_with(chunk_corpus(docs, chunking)?, provider, None, opts)?;
    Ok(BTreeMap::from([(WHOLE_CORPUS.to_string(), idx)]))
}
