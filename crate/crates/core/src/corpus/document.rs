use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::binio;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DocType {
    Constitution,
    Statute,
    AppealsCase,
    SupremeCase,
    Generic,
}

impl DocType {
    pub const ALL: [DocType; 5] = [
        DocType::Constitution,
        DocType::Statute,
        DocType::AppealsCase,
        DocType::SupremeCase,
        DocType::Generic,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DocType::Constitution => "constitution",
            DocType::Statute => "statute",
            DocType::AppealsCase => "appeals_case",
            DocType::SupremeCase => "supreme_case",
            DocType::Generic => "generic",
        }
    }

    /// Case law is unstructured; everything else has section structure.
    pub fn is_case_law(self) -> bool {
        matches!(self, DocType::AppealsCase | DocType::SupremeCase)
    }

    fn code(self) -> u8 {
        self as u8
    }

    fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }
}

impl std::str::FromStr for DocType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::param(format!("unknown doc_type {s:?}")))
    }
}

/// One legal text unit: a constitutional section, a statute section or an opinion.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub doc_type: DocType,
    #[serde(default)]
    pub title: String,
    pub text: String,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
}

impl Document {
    pub fn new(id: impl Into<String>, doc_type: DocType, text: impl Into<String>) -> Self {
        Document {
            id: id.into(),
            doc_type,
            title: String::new(),
            text: text.into(),
            metadata: BTreeMap::new(),
        }
    }

    pub fn with_title(mut self, title: impl Into<String>) -> Self {
        self.title = title.into();
        self
    }

    pub fn with_meta(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.metadata.insert(key.into(), value.into());
        self
    }
}

#[derive(Debug, Clone)]
pub struct IngestOptions {
    /// Prepend a non-empty title (section header) to the text body.
    pub title_in_text: bool,
}

impl Default for IngestOptions {
    fn default() -> Self {
        IngestOptions {
            title_in_text: true,
        }
    }
}

pub fn ingest_jsonl(path: impl AsRef<Path>) -> Result<Vec<Document>> {
    ingest_jsonl_with(path, &IngestOptions::default())
}

/// Read one document per line. Blank lines are skipped; line numbers in
/// errors are 1-based.
pub fn ingest_jsonl_with(path: impl AsRef<Path>, opts: &IngestOptions) -> Result<Vec<Document>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut docs = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();

    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut doc: Document = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if doc.id.trim().is_empty() {
            return Err(Error::Parse {
                line: line_no,
                message: "document id is empty".into(),
            });
        }
        if doc.text.trim().is_empty() {
            return Err(Error::Parse {
                line: line_no,
                message: format!("document {:?} has empty text", doc.id),
            });
        }
        if let Some(&first) = seen.get(&doc.id) {
            return Err(Error::DuplicateId {
                id: doc.id,
                first,
                second: line_no,
            });
        }
        seen.insert(doc.id.clone(), line_no);
        if opts.title_in_text && !doc.title.trim().is_empty() && !doc.text.starts_with(&doc.title) {
            doc.text = format!("{}\n\n{}", doc.title, doc.text);
        }
        docs.push(doc);
    }
    Ok(docs)
}

const CORPUS_MAGIC: &[u8; 4] = b"LXCP";
const CORPUS_VERSION: u32 = 1;

/// Binary corpus container: magic, version, count, then per document the
/// id, type code, title, text and metadata pairs.
pub fn write_corpus(path: impl AsRef<Path>, docs: &[Document]) -> Result<()> {
    let path = path.as_ref();
    let inner = || -> std::io::Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(CORPUS_MAGIC)?;
        binio::write_u32(&mut w, CORPUS_VERSION)?;
        binio::write_u64(&mut w, docs.len() as u64)?;
        for d in docs {
            binio::write_str(&mut w, &d.id)?;
            binio::write_u8(&mut w, d.doc_type.code())?;
            binio::write_str(&mut w, &d.title)?;
            binio::write_str(&mut w, &d.text)?;
            binio::write_u64(&mut w, d.metadata.len() as u64)?;
            for (k, v) in &d.metadata {
                binio::write_str(&mut w, k)?;
                binio::write_str(&mut w, v)?;
            }
        }
        w.flush()
    };
    inner().map_err(|e| Error::io(path, e))
}

pub fn read_corpus(path: impl AsRef<Path>) -> Result<Vec<Document>> {
    let path = path.as_ref();
    let inner = || -> std::io::Result<Vec<Document>> {
        let mut r = BufReader::new(File::open(path)?);
        binio::expect_magic(&mut r, CORPUS_MAGIC)?;
        let version = binio::read_u32(&mut r)?;
        if version != CORPUS_VERSION {
            return Err(std::io::Error::new(
                std::io::ErrorKind::InvalidData,
                format!("unsupported corpus version {version}"),
            ));
        }
        let n = binio::read_u64(&mut r)?;
        let mut docs = Vec::with_capacity(n.min(1 << 20) as usize);
        for _ in 0..n {
            let id = binio::read_str(&mut r)?;
            let code = binio::read_u8(&mut r)?;
            let doc_type = DocType::from_code(code).ok_or_else(|| {
                std::io::Error::new(std::io::ErrorKind::InvalidData, format!("bad doc type {code}"))
            })?;
            let title = binio::read_str(&mut r)?;
            let text = binio::read_str(&mut r)?;
            let m = binio::read_u64(&mut r)?;
            let mut metadata = BTreeMap::new();
            for _ in 0..m {
                let k = binio::read_str(&mut r)?;
                let v = binio::read_str(&mut r)?;
                metadata.insert(k, v);
            }
            docs.push(Document {
                id,
                doc_type,
                title,
                text,
                metadata,
            });
        }
        Ok(docs)
    };
    inner().map_err(|e| Error::io(path, e))
}
