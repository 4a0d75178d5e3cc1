use std::borrow::Borrow;
use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{tokenize, Document, SparseMatrix, Vocabulary};
use crate::error::{Error, Result};

/// TF-IDF weights, terms × documents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermDocMatrix {
    pub vocabulary: Vocabulary,
    pub doc_ids: Vec<String>,
    pub matrix: SparseMatrix,
}

impl TermDocMatrix {
    pub fn n_terms(&self) -> usize {
        self.matrix.rows()
    }

    pub fn n_docs(&self) -> usize {
        self.matrix.cols()
    }
}

impl std::ops::Deref for TermDocMatrix {
    type Target = SparseMatrix;

    fn deref(&self) -> &SparseMatrix {
        &self.matrix
    }
}

/// `weight(t, d) = tf(t, d) * ln(N / df(t))` with raw counts and no smoothing.
///
/// Document frequencies are counted over `docs`, so a vocabulary built from a
/// superset of the documents is accepted. Terms absent from every document,
/// or present in all of them, produce no entries.
pub fn build_tfidf<D: Borrow<Document>>(docs: &[D], vocab: &Vocabulary) -> Result<TermDocMatrix> {
    let n = docs.len();
    let index: HashMap<&str, usize> = vocab
        .tokens
        .iter()
        .enumerate()
        .map(|(i, t)| (t.as_str(), i))
        .collect();

    let mut counts: Vec<Vec<(usize, usize)>> = Vec::with_capacity(n);
    let mut df = vec![0usize; vocab.len()];
    for doc in docs {
        let mut tf: HashMap<usize, usize> = HashMap::new();
        for tok in tokenize(&doc.borrow().text) {
            if let Some(&t) = index.get(tok.as_str()) {
                *tf.entry(t).or_default() += 1;
            }
        }
        for &t in tf.keys() {
            df[t] += 1;
        }
        let mut tf: Vec<_> = tf.into_iter().collect();
        tf.sort_unstable();
        counts.push(tf);
    }

    let mut triplets = Vec::new();
    for (d, tf) in counts.iter().enumerate() {
        for &(t, count) in tf {
            let idf = (n as f64 / df[t] as f64).ln();
            let w = count as f64 * idf;
            if w > 0.0 {
                triplets.push((t, d, w));
            }
        }
    }
    let matrix = SparseMatrix::from_triplets(vocab.len(), n, &triplets)?;
    if matrix.is_all_zero() {
        return Err(Error::AllZeroMatrix);
    }
    Ok(TermDocMatrix {
        vocabulary: vocab.clone(),
        doc_ids: docs.iter().map(|d| d.borrow().id.clone()).collect(),
        matrix,
    })
}
