use once_cell::sync::Lazy;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::corpus::Document;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChunkUnit {
    Words,
    Chars,
    Paragraphs,
}

impl ChunkUnit {
    pub(crate) fn code(self) -> u8 {
        self as u8
    }

    pub(crate) fn from_code(c: u8) -> Option<Self> {
        [ChunkUnit::Words, ChunkUnit::Chars, ChunkUnit::Paragraphs]
            .get(c as usize)
            .copied()
    }
}

impl std::str::FromStr for ChunkUnit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "words" => Ok(ChunkUnit::Words),
            "chars" => Ok(ChunkUnit::Chars),
            "paragraphs" => Ok(ChunkUnit::Paragraphs),
            _ => Err(Error::param(format!("unknown chunk unit {s:?}"))),
        }
    }
}

/// A contiguous run of units `[start, end)` of one document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub doc_id: String,
    pub index: usize,
    pub unit: ChunkUnit,
    pub start: usize,
    pub end: usize,
    pub text: String,
}

impl Chunk {
    /// `doc_id#index`.
    pub fn id(&self) -> String {
        format!("{}#{}", self.doc_id, self.index)
    }

    /// Ordering key used for ties: document id, then position.
    pub fn key(&self) -> (&str, usize) {
        (&self.doc_id, self.index)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkConfig {
    pub unit: ChunkUnit,
    pub size: usize,
    pub overlap: usize,
}

impl Default for ChunkConfig {
    fn default() -> Self {
        ChunkConfig {
            unit: ChunkUnit::Words,
            size: 300,
            overlap: 50,
        }
    }
}

static BLANK_LINE: Lazy<Regex> = Lazy::new(|| Regex::new(r"\n[ \t\r]*\n").unwrap());

fn paragraphs(text: &str) -> Vec<&str> {
    BLANK_LINE
        .split(text)
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .collect()
}

/// The unit sequence a document is chunked over.
pub fn units(text: &str, unit: ChunkUnit) -> Vec<String> {
    match unit {
        ChunkUnit::Words => text.split_whitespace().map(str::to_string).collect(),
        ChunkUnit::Chars => text.chars().map(String::from).collect(),
        ChunkUnit::Paragraphs => paragraphs(text).into_iter().map(str::to_string).collect(),
    }
}

fn join(parts: &[String], unit: ChunkUnit) -> String {
    match unit {
        ChunkUnit::Words => parts.join(" "),
        ChunkUnit::Chars => parts.concat(),
        ChunkUnit::Paragraphs => parts.join("\n\n"),
    }
}

/// Sliding window of `size` units with stride `size - overlap`. The last
/// window may be shorter; an empty document gives no chunks.
pub fn chunk_document(d: &Document, unit: ChunkUnit, size: usize, overlap: usize) -> Result<Vec<Chunk>> {
    if size < 1 {
        return Err(Error::param("chunk size must be at least 1"));
    }
    if overlap >= size {
        return Err(Error::param(format!("overlap {overlap} must be below chunk size {size}")));
    }
    let u = units(&d.text, unit);
    let n = u.len();
    let mut out = Vec::new();
    let mut start = 0;
    while start < n {
        let end = (start + size).min(n);
        out.push(Chunk {
            doc_id: d.id.clone(),
            index: out.len(),
            unit,
            start,
            end,
            text: join(&u[start..end], unit),
        });
        if end == n {
            break;
        }
        start += size - overlap;
    }
    Ok(out)
}

/// One chunk per blank-line separated paragraph.
pub fn split_paragraphs(d: &Document) -> Vec<Chunk> {
    paragraphs(&d.text)
        .into_iter()
        .enumerate()
        .map(|(i, p)| Chunk {
            doc_id: d.id.clone(),
            index: i,
            unit: ChunkUnit::Paragraphs,
            start: i,
            end: i + 1,
            text: p.to_string(),
        })
        .collect()
}

/// Paragraphs for structured documents, windows for case law and untyped text.
pub fn chunk_by_type(d: &Document, cfg: &ChunkConfig) -> Result<Vec<Chunk>> {
    if d.doc_type.is_case_law() || d.doc_type == crate::corpus::DocType::Generic {
        chunk_document(d, cfg.unit, cfg.size, cfg.overlap)
    } else {
        Ok(split_paragraphs(d))
    }
}

/// The whole document as a single chunk, or none when it is empty.
pub fn whole_document(d: &Document) -> Vec<Chunk> {
    let n = d.text.split_whitespace().count();
    if n == 0 {
        return Vec::new();
    }
    vec![Chunk {
        doc_id: d.id.clone(),
        index: 0,
        unit: ChunkUnit::Words,
        start: 0,
        end: n,
        text: d.text.clone(),
    }]
}

/// Units of the original sequence recovered from consecutive chunks of one
/// document by dropping each chunk's overlap with its predecessor.
pub fn reconstruct(chunks: &[Chunk]) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    let mut covered: usize = 0;
    for c in chunks {
        let u = units(&c.text, c.unit);
        let skip = covered.saturating_sub(c.start);
        out.extend(u.into_iter().skip(skip));
        covered = c.end;
    }
    out
}
