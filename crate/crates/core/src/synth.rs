//! Seeded synthetic corpora with planted topics, for tests and demos.

use rand::distributions::WeightedIndex;
use rand::prelude::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{DocType, Document};

const SYLLABLES: [&str; 20] = [
    "ba", "ke", "lo", "mi", "nu", "pa", "re", "si", "to", "vu", "da", "fe", "go", "hi", "ju", "ka", "le", "mo", "ni", "pu",
];

#[derive(Debug, Clone, PartialEq)]
pub struct TopicCorpusSpec {
    /// Documents per planted topic; the length of this list is the topic count.
    pub docs_per_topic: Vec<usize>,
    pub words_per_topic: usize,
    /// Inclusive token-count range per document.
    pub doc_len: (usize, usize),
    /// Probability that a token is drawn from another topic's vocabulary.
    pub noise: f64,
    /// Zipf exponent of within-topic word frequencies.
    pub zipf: f64,
    pub doc_type: DocType,
    pub seed: u64,
}

impl Default for TopicCorpusSpec {
    fn default() -> Self {
        TopicCorpusSpec {
            docs_per_topic: vec![40; 3],
            words_per_topic: 40,
            doc_len: (60, 120),
            noise: 0.01,
            zipf: 1.0,
            doc_type: DocType::Generic,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub docs: Vec<Document>,
    /// Planted topic of each document, parallel to `docs`.
    pub labels: Vec<usize>,
    /// Vocabulary of each topic, most frequent first.
    pub topic_words: Vec<Vec<String>>,
}

/// Unique pronounceable word for `(topic, rank)`; always three or more syllables.
pub fn word(topic: usize, rank: usize, words_per_topic: usize) -> String {
    let mut n = topic * words_per_topic + rank;
    let mut out = String::new();
    for _ in 0..3 {
        out.push_str(SYLLABLES[n % SYLLABLES.len()]);
        n /= SYLLABLES.len();
    }
    while n > 0 {
        out.push_str(SYLLABLES[n % SYLLABLES.len()]);
        n /= SYLLABLES.len();
    }
    out
}

pub fn topic_corpus(spec: &TopicCorpusSpec) -> SyntheticCorpus {
    let topics = spec.docs_per_topic.len();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let topic_words: Vec<Vec<String>> = (0..topics)
        .map(|t| (0..spec.words_per_topic).map(|i| word(t, i, spec.words_per_topic)).collect())
        .collect();
    let weights: Vec<f64> = (0..spec.words_per_topic)
        .map(|i| 1.0 / ((i + 1) as f64).powf(spec.zipf))
        .collect();
    let dist = WeightedIndex::new(&weights).expect("positive weights");
    let mut docs = Vec::new();
    let mut labels = Vec::new();
    for (t, &n) in spec.docs_per_topic.iter().enumerate() {
        for _ in 0..n {
            let len = rng.gen_range(spec.doc_len.0..=spec.doc_len.1);
            let mut tokens = Vec::with_capacity(len);
            for _ in 0..len {
                let source = if topics > 1 && rng.gen::<f64>() < spec.noise {
                    let other = rng.gen_range(0..topics - 1);
                    if other >= t {
                        other + 1
                    } else {
                        other
                    }
                } else {
                    t
                };
                tokens.push(topic_words[source][dist.sample(&mut rng)].as_str());
            }
            let id = format!("doc-{:05}", docs.len());
            docs.push(Document::new(id, spec.doc_type, tokens.join(" ")).with_meta("topic", t.to_string()));
            labels.push(t);
        }
    }
    SyntheticCorpus {
        docs,
        labels,
        topic_words,
    }
}
