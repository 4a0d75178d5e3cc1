use std::collections::BTreeSet;

use lexigraph::corpus::{build_vocabulary, Document};
use lexigraph::hnmfk::{decompose, Hierarchy, HierarchyConfig, TopicNode};
use lexigraph::nmfk::NmfkConfig;
use lexigraph::synth::{topic_corpus, TopicCorpusSpec};
use proptest::prelude::*;

fn corpus(sizes: Vec<usize>, noise: f64, seed: u64) -> Vec<Document> {
    topic_corpus(&TopicCorpusSpec {
        docs_per_topic: sizes,
        words_per_topic: 25,
        doc_len: (20, 50),
        noise,
        seed,
        ..TopicCorpusSpec::default()
    })
    .docs
}

fn config(max_depth: usize, min_cluster_size: usize, m: usize, seed: u64) -> HierarchyConfig {
    HierarchyConfig {
        max_depth,
        min_cluster_size,
        keywords_per_topic: m,
        nmfk: NmfkConfig {
            k_min: 1,
            k_max: 5,
            n_perturbations: 4,
            base_seed: seed,
            ..NmfkConfig::default()
        },
        vocab_min_df: 3,
        vocab_max_df_ratio: 0.9,
    }
}

fn check_node(
    n: &TopicNode,
    parent_docs: &[&Document],
    cfg: &HierarchyConfig,
    depth: usize,
) -> Result<(), TestCaseError> {
    prop_assert_eq!(n.depth, depth);
    prop_assert!(n.depth <= cfg.max_depth);
    prop_assert!(n.top_keywords.len() <= cfg.keywords_per_topic);
    prop_assert_eq!(n.is_leaf(), n.children.is_empty());
    if !n.top_keywords.is_empty() {
        // keywords come from the vocabulary rebuilt over the parent's documents
        let v = build_vocabulary(parent_docs, cfg.node_min_df(parent_docs.len()), cfg.vocab_max_df_ratio).unwrap();
        for k in &n.top_keywords {
            prop_assert!(v.contains(k), "{} not in the vocabulary of {}'s parent", k, n.id);
        }
    }
    if n.children.is_empty() {
        return Ok(());
    }
    prop_assert!(n.doc_ids.len() >= cfg.min_cluster_size);
    let mine: BTreeSet<&str> = n.doc_ids.iter().map(String::as_str).collect();
    let mut union = BTreeSet::new();
    let mut total = 0;
    for c in &n.children {
        prop_assert_eq!(Hierarchy::parent_id(&c.id), Some(n.id.as_str()));
        total += c.doc_ids.len();
        union.extend(c.doc_ids.iter().map(String::as_str));
    }
    prop_assert_eq!(total, union.len());
    prop_assert_eq!(&union, &mine);
    let docs: Vec<&Document> = parent_docs.iter().copied().filter(|d| mine.contains(d.id.as_str())).collect();
    for c in &n.children {
        check_node(c, &docs, cfg, depth + 1)?;
    }
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn hierarchy_invariants(
        sizes in prop::collection::vec(5usize..30, 1..4),
        noise in 0.0f64..0.05,
        max_depth in 0usize..3,
        min_cluster in 2usize..30,
        m in 1usize..12,
        seed in any::<u64>(),
    ) {
        let docs = corpus(sizes, noise, seed);
        let cfg = config(max_depth, min_cluster, m, seed);
        let h = decompose(&docs, &cfg).unwrap();
        let all: Vec<&Document> = docs.iter().collect();
        let ids: BTreeSet<&str> = docs.iter().map(|d| d.id.as_str()).collect();
        let mut union = BTreeSet::new();
        let mut total = 0;
        for r in &h.roots {
            total += r.doc_ids.len();
            union.extend(r.doc_ids.iter().map(String::as_str));
            check_node(r, &all, &cfg, 0)?;
        }
        prop_assert_eq!(total, docs.len());
        prop_assert_eq!(&union, &ids);
        prop_assert_eq!(h.leaf_of().len(), docs.len());

        let again = decompose(&docs, &cfg).unwrap();
        prop_assert_eq!(h.to_json().unwrap(), again.to_json().unwrap());
        prop_assert_eq!(Hierarchy::from_json(&h.to_json().unwrap()).unwrap(), h);
    }
}
