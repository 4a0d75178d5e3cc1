use std::borrow::Borrow;
use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use super::{tokenize, Document};
use crate::error::{Error, Result};

/// DF-filtered unigram vocabulary, sorted lexicographically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vocabulary {
    pub tokens: Vec<String>,
    pub df: Vec<usize>,
    pub min_df: usize,
    pub max_df_ratio: f64,
    pub n_docs: usize,
}

impl Vocabulary {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn position(&self, token: &str) -> Option<usize> {
        self.tokens.binary_search_by(|t| t.as_str().cmp(token)).ok()
    }

    pub fn contains(&self, token: &str) -> bool {
        self.position(token).is_some()
    }

    /// Largest document frequency a kept token may have.
    pub fn max_df(&self) -> usize {
        max_df_count(self.max_df_ratio, self.n_docs)
    }
}

fn max_df_count(ratio: f64, n_docs: usize) -> usize {
    // guard against 0.7 * 10 = 6.999…
    (ratio * n_docs as f64 + 1e-9).floor() as usize
}

/// Keep token t iff `min_df <= df(t) <= floor(max_df_ratio * |docs|)`.
pub fn build_vocabulary<D: Borrow<Document>>(docs: &[D], min_df: usize, max_df_ratio: f64) -> Result<Vocabulary> {
    if docs.is_empty() {
        return Err(Error::param("cannot build a vocabulary from zero documents"));
    }
    if min_df < 1 || min_df > docs.len() {
        return Err(Error::param(format!(
            "min_df must be in [1, {}], got {min_df}",
            docs.len()
        )));
    }
    if !(max_df_ratio > 0.0 && max_df_ratio <= 1.0) {
        return Err(Error::param(format!("max_df_ratio must be in (0, 1], got {max_df_ratio}")));
    }

    let mut df: BTreeMap<String, usize> = BTreeMap::new();
    for doc in docs {
        let unique: HashSet<String> = tokenize(&doc.borrow().text).into_iter().collect();
        for t in unique {
            *df.entry(t).or_default() += 1;
        }
    }
    let max_df = max_df_count(max_df_ratio, docs.len());
    let (tokens, df): (Vec<_>, Vec<_>) = df
        .into_iter()
        .filter(|(_, n)| *n >= min_df && *n <= max_df)
        .unzip();
    if tokens.is_empty() {
        return Err(Error::VocabularyEmpty);
    }
    Ok(Vocabulary {
        tokens,
        df,
        min_df,
        max_df_ratio,
        n_docs: docs.len(),
    })
}
