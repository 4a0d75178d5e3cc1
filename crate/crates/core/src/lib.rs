//! Corpus-to-answers toolkit: hierarchical NMF topic discovery with automatic
//! rank selection, a document/topic/keyword/citation property graph, exact
//! vector retrieval, grounded question answering and evaluation metrics.

pub mod binio;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod hnmfk;
pub mod kg;
mod http;
mod linalg;
pub mod nmf;
pub mod nmfk;
pub mod rag;
pub mod seed;
pub mod synth;
pub mod vstore;

pub use error::{Error, Result};

/// Library version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
