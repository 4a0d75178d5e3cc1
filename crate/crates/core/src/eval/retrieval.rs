use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::grading::{read_jsonl, write_jsonl};
use super::metrics::{hit_at_k, mrr};
use crate::corpus::{DocType, Document};
use crate::error::{Error, Result};
use crate::hnmfk::Hierarchy;
use crate::vstore::{
    build_corpus_index, build_topic_indexes, BuildOptions, ChunkConfig, Chunking, EmbeddingProvider, Hit,
    VectorIndex,
};

/// Cut-off for the hit rate reported alongside MRR.
pub const HIT_K: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourcePart {
    Constitution,
    Statutes,
    SupremeCourt,
    CourtOfAppeals,
}

impl SourcePart {
    pub const ALL: [SourcePart; 4] = [
        SourcePart::Constitution,
        SourcePart::Statutes,
        SourcePart::SupremeCourt,
        SourcePart::CourtOfAppeals,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SourcePart::Constitution => "constitution",
            SourcePart::Statutes => "statutes",
            SourcePart::SupremeCourt => "supreme_court",
            SourcePart::CourtOfAppeals => "court_of_appeals",
        }
    }

    pub fn for_doc_type(t: DocType) -> Option<Self> {
        match t {
            DocType::Constitution => Some(SourcePart::Constitution),
            DocType::Statute => Some(SourcePart::Statutes),
            DocType::SupremeCase => Some(SourcePart::SupremeCourt),
            DocType::AppealsCase => Some(SourcePart::CourtOfAppeals),
            DocType::Generic => None,
        }
    }
}

impl fmt::Display for SourcePart {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    WholeCorpus,
    Chunked,
    TopicRouted,
    TopicRoutedChunked,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [
        Strategy::WholeCorpus,
        Strategy::Chunked,
        Strategy::TopicRouted,
        Strategy::TopicRoutedChunked,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::WholeCorpus => "whole_corpus",
            Strategy::Chunked => "chunked",
            Strategy::TopicRouted => "topic_routed",
            Strategy::TopicRoutedChunked => "topic_routed_chunked",
        }
    }

    pub fn is_routed(self) -> bool {
        matches!(self, Strategy::TopicRouted | Strategy::TopicRoutedChunked)
    }

    pub fn chunking(self, cfg: ChunkConfig) -> Chunking {
        match self {
            Strategy::WholeCorpus | Strategy::TopicRouted => Chunking::Whole,
            Strategy::Chunked | Strategy::TopicRoutedChunked => Chunking::ByType(cfg),
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|x| x.as_str() == s)
            .ok_or_else(|| Error::param(format!("unknown strategy {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetrievalCase {
    pub question: String,
    pub gold_doc_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_topic_id: Option<String>,
    pub source_part: SourcePart,
}

pub fn read_cases(path: impl AsRef<Path>) -> Result<Vec<RetrievalCase>> {
    read_jsonl(path)
}

pub fn write_cases(path: impl AsRef<Path>, cases: &[RetrievalCase]) -> Result<()> {
    write_jsonl(path, cases)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartMetrics {
    pub cases: usize,
    pub mrr: f64,
    /// Percentage of cases with the gold document in the top ten.
    pub hit_at_10: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyReport {
    pub strategy: Strategy,
    pub parts: BTreeMap<SourcePart, PartMetrics>,
    /// Gold document rank per case, in case order.
    pub ranks: Vec<Option<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalReport {
    pub provider_id: String,
    pub chunk: ChunkConfig,
    pub cases: usize,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
    pub strategies: Vec<StrategyReport>,
}

impl RetrievalReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// One row per strategy and part.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let csv_err = |e: csv::Error| Error::Data(e.to_string());
        w.write_record(["strategy", "part", "cases", "mrr", "hit_at_10"]).map_err(csv_err)?;
        for s in &self.strategies {
            for (part, m) in &s.parts {
                w.write_record([
                    s.strategy.as_str(),
                    part.as_str(),
                    &m.cases.to_string(),
                    &format!("{:.6}", m.mrr),
                    &format!("{:.2}", m.hit_at_10),
                ])
                .map_err(csv_err)?;
            }
        }
        let bytes = w.into_inner().map_err(|e| Error::Data(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOptions {
    pub chunk: ChunkConfig,
    pub build: BuildOptions,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            chunk: ChunkConfig::default(),
            build: BuildOptions::default(),
        }
    }
}

/// 1-based rank of `gold` among documents ordered by their best chunk.
pub fn document_rank(hits: &[Hit], gold: &str) -> Option<usize> {
    let mut seen = BTreeSet::new();
    for h in hits {
        if seen.insert(h.chunk.doc_id.as_str()) && h.chunk.doc_id == gold {
            return Some(seen.len());
        }
    }
    None
}

fn search_all(idx: &VectorIndex, provider: &dyn EmbeddingProvider, q: &str) -> Result<Vec<Hit>> {
    if idx.is_empty() {
        return Ok(Vec::new());
    }
    idx.search(&provider.embed_one(q)?, idx.len())
}

fn validate_cases(cases: &[RetrievalCase], docs: &[Document]) -> Result<()> {
    if cases.is_empty() {
        return Err(Error::param("no retrieval cases"));
    }
    let ids: BTreeSet<&str> = docs.iter().map(|d| d.id.as_str()).collect();
    for c in cases {
        if !ids.contains(c.gold_doc_id.as_str()) {
            return Err(Error::Data(format!("gold document {:?} is not in the corpus", c.gold_doc_id)));
        }
    }
    Ok(())
}

/// Ranks of the gold documents under `strategy`. Routed strategies search
/// the gold topic's index when the case names one, otherwise the topic whose
/// centroid is closest to the question.
pub fn gold_ranks(
    cases: &[RetrievalCase],
    docs: &[Document],
    hierarchy: Option<&Hierarchy>,
    provider: &dyn EmbeddingProvider,
    strategy: Strategy,
    opts: &EvalOptions,
) -> Result<Vec<Option<usize>>> {
    validate_cases(cases, docs)?;
    let chunking = strategy.chunking(opts.chunk);
    if !strategy.is_routed() {
        let indexes = build_corpus_index(docs, chunking, provider, &opts.build)?;
        let idx = indexes.values().next().expect("one corpus index");
        return cases
            .par_iter()
            .map(|c| Ok(document_rank(&search_all(idx, provider, &c.question)?, &c.gold_doc_id)))
            .collect();
    }
    let h = hierarchy.ok_or_else(|| Error::param(format!("strategy {strategy} needs a topic hierarchy")))?;
    let indexes = build_topic_indexes(docs, h, chunking, provider, &opts.build)?;
    if indexes.is_empty() {
        return Err(Error::Data("no topic index has any text".into()));
    }
    cases
        .par_iter()
        .map(|c| {
            let topic = match &c.gold_topic_id {
                Some(t) => {
                    if h.find(t).is_none() {
                        return Err(Error::Data(format!("gold topic {t:?} is not in the hierarchy")));
                    }
                    t.clone()
                }
                None => {
                    let q = provider.embed_one(&c.question)?;
                    crate::vstore::best_topic(&indexes, &q)?.to_string()
                }
            };
            match indexes.get(&topic) {
                Some(idx) => Ok(document_rank(&search_all(idx, provider, &c.question)?, &c.gold_doc_id)),
                None => Ok(None),
            }
        })
        .collect()
}

/// Build the strategy's indexes, rank every case's gold document and
/// aggregate MRR and hit@10 per corpus part.
pub fn run_retrieval_eval(
    cases: &[RetrievalCase],
    docs: &[Document],
    hierarchy: Option<&Hierarchy>,
    provider: &dyn EmbeddingProvider,
    strategy: Strategy,
    opts: &EvalOptions,
) -> Result<StrategyReport> {
    let ranks = gold_ranks(cases, docs, hierarchy, provider, strategy, opts)?;
    let mut by_part: BTreeMap<SourcePart, Vec<Option<usize>>> = BTreeMap::new();
    for (c, r) in cases.iter().zip(&ranks) {
        by_part.entry(c.source_part).or_default().push(*r);
    }
    let parts = by_part
        .into_iter()
        .map(|(p, rs)| {
            Ok((
                p,
                PartMetrics {
                    cases: rs.len(),
                    mrr: mrr(&rs)?,
                    hit_at_10: hit_at_k(&rs, HIT_K)?,
                },
            ))
        })
        .collect::<Result<_>>()?;
    Ok(StrategyReport { strategy, parts, ranks })
}

/// Evaluate several strategies into one report.
pub fn run_retrieval_report(
    cases: &[RetrievalCase],
    docs: &[Document],
    hierarchy: Option<&Hierarchy>,
    provider: &dyn EmbeddingProvider,
    strategies: &[Strategy],
    opts: &EvalOptions,
) -> Result<RetrievalReport> {
    let strategies = strategies
        .iter()
        .map(|s| run_retrieval_eval(cases, docs, hierarchy, provider, *s, opts))
        .collect::<Result<_>>()?;
    Ok(RetrievalReport {
        provider_id: provider.id(),
        chunk: opts.chunk,
        cases: cases.len(),
        metadata: BTreeMap::new(),
        strategies,
    })
}
