//! Document ingestion, tokenization, vocabulary filtering and TF-IDF.

mod document;
mod sparse;
mod tfidf;
mod tokenize;
mod vocab;

pub use document::{ingest_jsonl, ingest_jsonl_with, read_corpus, write_corpus, DocType, Document, IngestOptions};
pub use sparse::SparseMatrix;
pub use tfidf::{build_tfidf, TermDocMatrix};
pub use tokenize::{is_stop_word, tokenize, tokenize_keep_stop_words};
pub use vocab::{build_vocabulary, Vocabulary};
