mod common;

use std::collections::{BTreeMap, BTreeSet};

use common::{random_kg, RandomKg, WORDS};
use lexigraph::rag::{answer, follow_up, AnswerConfig, EchoChat, RagContext, Session, SourceKind};
use lexigraph::vstore::{build_topic_indexes, BuildOptions, ChunkConfig, ChunkUnit, Chunking, HashProvider, VectorIndex};
use proptest::prelude::*;

fn indexes(kg: &RandomKg, provider: &HashProvider) -> BTreeMap<String, VectorIndex> {
    let chunking = Chunking::ByType(ChunkConfig { unit: ChunkUnit::Words, size: 8, overlap: 2 });
    build_topic_indexes(&kg.docs, &kg.hierarchy, chunking, provider, &BuildOptions::default()).unwrap()
}

fn question() -> impl Strategy<Value = String> {
    let word = prop::sample::select(WORDS);
    prop_oneof![
        (word.clone(), word.clone()).prop_map(|(a, b)| format!("What does the court say about {a} and {b}?")),
        word.clone().prop_map(|a| format!("How many Supreme Court cases mention '{a}'?")),
        word.clone().prop_map(|a| format!("How many documents mention \"{a}\"?")),
        word.prop_map(|a| format!("What are the most common citations among Court of Appeals cases that mention '{a}'?")),
        "[a-z]{3,9}( [a-z]{3,9}){0,3}",
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn answers_cite_existing_sources_and_repeat_exactly(seed in any::<u64>(), n_docs in 6usize..40, q in question()) {
        let kg = random_kg(seed, n_docs);
        let provider = HashProvider::default();
        let idx = indexes(&kg, &provider);
        let ctx = RagContext { graph: &kg.graph, indexes: &idx, provider: &provider, chat: &EchoChat, config: AnswerConfig::default() };
        let a = answer(&q, &ctx).unwrap();
        let b = answer(&q, &ctx).unwrap();
        prop_assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());

        let doc_ids: BTreeSet<&str> = kg.docs.iter().map(|d| d.id.as_str()).collect();
        prop_assert!(a.refused || !a.sources.is_empty());
        for s in &a.sources {
            match s.kind {
                SourceKind::Chunk => {
                    let (doc, _) = s.id.rsplit_once('#').unwrap();
                    prop_assert!(doc_ids.contains(doc), "{}", s.id);
                }
                SourceKind::Document => prop_assert!(kg.graph.node(&s.id).is_some(), "{}", s.id),
                SourceKind::GraphQuery => prop_assert!(s.id.starts_with("kg:")),
            }
        }
        if let Some(t) = &a.routed_topic {
            prop_assert!(idx.contains_key(t));
        }
    }

    #[test]
    fn session_window_keeps_latest_turns(window in 1usize..7, turns in 1usize..15) {
        let kg = random_kg(1, 20);
        let provider = HashProvider::default();
        let idx = indexes(&kg, &provider);
        let ctx = RagContext { graph: &kg.graph, indexes: &idx, provider: &provider, chat: &EchoChat, config: AnswerConfig::default() };
        let mut s = Session::with_window("s", window);
        for i in 0..turns {
            let q = format!("What about {} number {i}?", WORDS[i % WORDS.len()]);
            let a = follow_up(&q, &mut s, &ctx).unwrap();
            prop_assert!(s.turns.len() <= window);
            prop_assert_eq!(&s.turns.back().unwrap().query, &q);
            prop_assert_eq!(&s.turns.back().unwrap().answer, &a.text);
        }
        prop_assert_eq!(s.turns.len(), turns.min(window));
        let first_kept = turns - turns.min(window);
        let suffix = format!("number {first_kept}?");
        prop_assert!(s.turns.front().unwrap().query.ends_with(&suffix));
    }
}
