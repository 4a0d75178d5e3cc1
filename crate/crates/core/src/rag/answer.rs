use std::collections::{BTreeMap, BTreeSet, VecDeque};

use once_cell::sync::Lazy;
use regex::Regex;
use serde::{Deserialize, Serialize};

use super::ChatClient;
use crate::corpus::tokenize;
use crate::error::{Error, Result};
use crate::kg::{keyword_node_id, Graph, NodeKind};
use crate::vstore::{route_and_search, EmbeddingProvider, Hit, Router, VectorIndex};

pub const SEMANTIC_SYSTEM_PROMPT: &str = "You answer questions about legal texts using only the sources provided. \
Cite the id of the source in square brackets after every claim, for example [doc-1#0]. \
Do not state anything the sources do not support. \
If the sources do not contain the answer, say that you cannot answer from the provided sources.";

pub const REFUSAL_TEXT: &str =
    "I cannot answer this question from the indexed sources: no passage reached the relevance threshold.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryMode {
    Quantitative,
    CitationPattern,
    Semantic,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum KgOperation {
    CountMentions { phrase: String, kinds: Vec<NodeKind> },
    CommonCitations { phrase: String, kinds: Vec<NodeKind>, top_n: usize },
    /// Neighborhoods of query tokens that are topic keywords in the graph.
    KeywordNeighborhoods,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VsRequest {
    pub query: String,
    pub top_k: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryPlan {
    pub query: String,
    pub mode: QueryMode,
    pub kg_operations: Vec<KgOperation>,
    pub vs_requests: Vec<VsRequest>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    Chunk,
    Document,
    GraphQuery,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Source {
    pub kind: SourceKind,
    /// Chunk id, graph node id, or a graph query descriptor.
    pub id: String,
    pub excerpt: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KgFact {
    pub query: String,
    pub value: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundedAnswer {
    pub query: String,
    pub mode: QueryMode,
    pub text: String,
    pub sources: Vec<Source>,
    #[serde(default)]
    pub routed_topic: Option<String>,
    pub kg_facts: Vec<KgFact>,
    pub refused: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub query: String,
    pub answer: String,
}

/// Short-term conversation state: the last `window` turns.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Session {
    pub id: String,
    pub window: usize,
    pub turns: VecDeque<Turn>,
}

impl Session {
    pub const DEFAULT_WINDOW: usize = 5;

    pub fn new(id: impl Into<String>) -> Self {
        Self::with_window(id, Self::DEFAULT_WINDOW)
    }

    pub fn with_window(id: impl Into<String>, window: usize) -> Self {
        Session {
            id: id.into(),
            window,
            turns: VecDeque::new(),
        }
    }

    pub fn push(&mut self, query: impl Into<String>, answer: impl Into<String>) {
        self.turns.push_back(Turn {
            query: query.into(),
            answer: answer.into(),
        });
        while self.turns.len() > self.window {
            self.turns.pop_front();
        }
    }

    fn transcript(&self) -> String {
        let mut s = String::new();
        for t in &self.turns {
            s.push_str(&format!("User: {}\nAssistant: {}\n", t.query, t.answer));
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerConfig {
    pub top_k: usize,
    /// Minimum cosine similarity for a passage to count as relevant.
    pub score_floor: f64,
    pub top_n_citations: usize,
    /// Topic to search; `None` routes to the topic with the closest centroid.
    pub topic: Option<String>,
}

impl Default for AnswerConfig {
    fn default() -> Self {
        AnswerConfig {
            top_k: 5,
            score_floor: 0.15,
            top_n_citations: 10,
            topic: None,
        }
    }
}

/// Everything `answer` reads. Graph and indexes are shared read-only.
pub struct RagContext<'a> {
    pub graph: &'a Graph,
    pub indexes: &'a BTreeMap<String, VectorIndex>,
    pub provider: &'a dyn EmbeddingProvider,
    pub chat: &'a dyn ChatClient,
    pub config: AnswerConfig,
}

static QUOTED: Lazy<Regex> =
    Lazy::new(|| Regex::new(r#"(?:^|[\s(])(?:[`'‘]([^'’`]+)['’]|["“]([^"”]+)["”])"#).unwrap());
static MENTION: Lazy<Regex> = Lazy::new(|| Regex::new(r"(?i)\bmention(?:s|ing)?\s+([^?.!]+)").unwrap());
static COUNT: Lazy<Regex> = Lazy::new(|| Regex::new(r"(?i)\b(how many|number of|count of)\b").unwrap());
static CITATION: Lazy<Regex> = Lazy::new(|| {
    Regex::new(r"(?i)\b(common(ly)? cit(ations?|ed)|most (frequently )?cited|frequently cited|most common citations?)\b")
        .unwrap()
});

fn phrase_of(q: &str) -> Option<String> {
    if let Some(c) = QUOTED.captures(q) {
        let p = c.get(1).or_else(|| c.get(2)).unwrap().as_str().trim();
        let p = p.trim_end_matches(['.', ',', '?', '!']);
        if !p.is_empty() {
            return Some(p.to_string());
        }
    }
    MENTION
        .captures(q)
        .map(|c| c[1].trim().to_string())
        .filter(|p| !p.is_empty())
}

fn kinds_of(q: &str, phrase: &str) -> Vec<NodeKind> {
    let rest = q.replace(phrase, " ").to_lowercase();
    let mut kinds = Vec::new();
    if rest.contains("supreme court") {
        kinds.push(NodeKind::SupremeCase);
    }
    if rest.contains("court of appeals") || rest.contains("appeals court") || rest.contains("appellate") {
        kinds.push(NodeKind::AppealsCase);
    }
    if rest.contains("statute") || rest.contains("statutory") {
        kinds.push(NodeKind::StatuteDoc);
    }
    if rest.contains("constitution") {
        kinds.push(NodeKind::ConstitutionDoc);
    }
    if kinds.is_empty() {
        kinds = NodeKind::ALL.into_iter().filter(|k| k.is_document()).collect();
    }
    kinds
}

/// Route a question: citation patterns and counts of a phrase go to the
/// graph; everything else goes to vector retrieval plus keyword facts.
pub fn classify_query(q: &str, cfg: &AnswerConfig) -> Result<QueryPlan> {
    let q = q.trim();
    if q.is_empty() {
        return Err(Error::param("question must be non-empty"));
    }
    let phrase = phrase_of(q);
    let plan = |mode, ops| QueryPlan {
        query: q.to_string(),
        mode,
        kg_operations: ops,
        vs_requests: Vec::new(),
    };
    if let Some(p) = &phrase {
        if CITATION.is_match(q) {
            return Ok(plan(
                QueryMode::CitationPattern,
                vec![KgOperation::CommonCitations {
                    phrase: p.clone(),
                    kinds: kinds_of(q, p),
                    top_n: cfg.top_n_citations,
                }],
            ));
        }
        if COUNT.is_match(q) {
            return Ok(plan(
                QueryMode::Quantitative,
                vec![KgOperation::CountMentions {
                    phrase: p.clone(),
                    kinds: kinds_of(q, p),
                }],
            ));
        }
    }
    Ok(QueryPlan {
        query: q.to_string(),
        mode: QueryMode::Semantic,
        kg_operations: vec![KgOperation::KeywordNeighborhoods],
        vs_requests: vec![VsRequest {
            query: q.to_string(),
            top_k: cfg.top_k,
        }],
    })
}

fn label(kind: NodeKind, n: usize) -> &'static str {
    let one = n == 1;
    match kind {
        NodeKind::SupremeCase if one => "Supreme Court case",
        NodeKind::SupremeCase => "Supreme Court cases",
        NodeKind::AppealsCase if one => "Court of Appeals case",
        NodeKind::AppealsCase => "Court of Appeals cases",
        NodeKind::StatuteDoc if one => "statute",
        NodeKind::StatuteDoc => "statutes",
        NodeKind::ConstitutionDoc if one => "constitutional section",
        NodeKind::ConstitutionDoc => "constitutional sections",
        _ if one => "document",
        _ => "documents",
    }
}

fn kinds_label(kinds: &[NodeKind]) -> String {
    if kinds.len() == 1 {
        label(kinds[0], 2).to_string()
    } else if kinds.len() == NodeKind::ALL.iter().filter(|k| k.is_document()).count() {
        "documents".to_string()
    } else {
        kinds.iter().map(|k| label(*k, 2)).collect::<Vec<_>>().join(" and ")
    }
}

fn kinds_arg(kinds: &[NodeKind]) -> String {
    kinds.iter().map(|k| k.as_str()).collect::<Vec<_>>().join("|")
}

fn phrase_fact(phrase: &str) -> KgFact {
    KgFact {
        query: "phrase".into(),
        value: phrase.to_string(),
    }
}

fn mentioning_docs(g: &Graph, phrase: &str, kinds: &[NodeKind]) -> Vec<Source> {
    let needle = phrase.to_lowercase();
    g.nodes()
        .filter(|n| kinds.contains(&n.kind))
        .filter(|n| n.attrs.get("text").is_some_and(|t| t.to_lowercase().contains(&needle)))
        .map(|n| Source {
            kind: SourceKind::Document,
            id: n.id.clone(),
            excerpt: n.attrs.get("title").cloned().unwrap_or_default(),
            score: None,
        })
        .collect()
}

fn answer_count(q: &str, g: &Graph, phrase: &str, kinds: &[NodeKind]) -> Result<GroundedAnswer> {
    let mut facts = vec![phrase_fact(phrase)];
    let mut total = 0;
    let mut parts = Vec::new();
    for k in kinds {
        let n = g.count_mentions(phrase, *k)?;
        facts.push(KgFact {
            query: format!("count_mentions('{phrase}', {k})"),
            value: n.to_string(),
        });
        total += n;
        parts.push(format!("{n} {}", label(*k, n)));
    }
    let (verb, mention) = if total == 1 { ("is", "mentions") } else { ("are", "mention") };
    let text = if kinds.len() == 1 {
        format!("There {verb} {total} {} that {mention} '{phrase}'.", label(kinds[0], total))
    } else {
        facts.push(KgFact {
            query: format!("count_mentions('{phrase}', {})", kinds_arg(kinds)),
            value: total.to_string(),
        });
        format!(
            "There {verb} {total} {} that {mention} '{phrase}': {}.",
            if total == 1 { "document" } else { "documents" },
            parts.join(", ")
        )
    };
    let mut sources = vec![Source {
        kind: SourceKind::GraphQuery,
        id: format!("kg:count_mentions('{phrase}', {})", kinds_arg(kinds)),
        excerpt: String::new(),
        score: None,
    }];
    sources.extend(mentioning_docs(g, phrase, kinds));
    Ok(GroundedAnswer {
        query: q.to_string(),
        mode: QueryMode::Quantitative,
        text,
        sources,
        routed_topic: None,
        kg_facts: facts,
        refused: false,
    })
}

fn answer_citations(q: &str, g: &Graph, phrase: &str, kinds: &[NodeKind], top_n: usize) -> Result<GroundedAnswer> {
    let mut tally: BTreeMap<String, usize> = BTreeMap::new();
    for k in kinds {
        for (key, n) in g.common_citations(phrase, *k, usize::MAX)? {
            *tally.entry(key).or_insert(0) += n;
        }
    }
    let mut ranked: Vec<(String, usize)> = tally.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(top_n);

    let what = kinds_label(kinds);
    let mut facts = vec![phrase_fact(phrase)];
    let descriptor = format!("common_citations('{phrase}', {})", kinds_arg(kinds));
    for (i, (key, n)) in ranked.iter().enumerate() {
        facts.push(KgFact {
            query: format!("{descriptor} key #{}", i + 1),
            value: key.clone(),
        });
        facts.push(KgFact {
            query: format!("{descriptor} count #{}", i + 1),
            value: n.to_string(),
        });
    }
    let text = if ranked.is_empty() {
        format!("No citations were found among {what} that mention '{phrase}'.")
    } else {
        let items: Vec<String> = ranked
            .iter()
            .map(|(k, n)| format!("{k} with {n} {}", if *n == 1 { "case" } else { "cases" }))
            .collect();
        format!("The common citations among {what} that mention '{phrase}' include {}.", items.join(", "))
    };
    let mut sources = vec![Source {
        kind: SourceKind::GraphQuery,
        id: format!("kg:{descriptor}"),
        excerpt: String::new(),
        score: None,
    }];
    sources.extend(mentioning_docs(g, phrase, kinds));
    Ok(GroundedAnswer {
        query: q.to_string(),
        mode: QueryMode::CitationPattern,
        text,
        sources,
        routed_topic: None,
        kg_facts: facts,
        refused: false,
    })
}

fn keyword_facts(q: &str, g: &Graph) -> Vec<KgFact> {
    let tokens: BTreeSet<String> = tokenize(q).into_iter().collect();
    let mut facts = Vec::new();
    for t in tokens {
        if g.node(&keyword_node_id(&t)).is_none() {
            continue;
        }
        let n = g.keyword_neighborhood(&t);
        let topics: Vec<&str> = n.topics.iter().map(|s| s.trim_start_matches("topic:")).collect();
        facts.push(KgFact {
            query: format!("topics with keyword '{t}'"),
            value: topics.join(", "),
        });
        for (kind, docs) in &n.docs_via_topics {
            facts.push(KgFact {
                query: format!("{kind} documents in topics with keyword '{t}'"),
                value: docs.len().to_string(),
            });
        }
    }
    facts
}

fn retrieve(q: &str, ctx: &RagContext<'_>) -> Result<(Vec<Hit>, Option<String>)> {
    if ctx.indexes.len() == 1 && ctx.config.topic.is_none() {
        let (topic, idx) = ctx.indexes.iter().next().unwrap();
        let hits = idx.search(&ctx.provider.embed_one(q)?, ctx.config.top_k)?;
        return Ok((hits, idx.topic_id().map(|_| topic.clone())));
    }
    let router = match &ctx.config.topic {
        Some(t) => Router::KnownTopic(t.clone()),
        None => Router::BestTopic,
    };
    let r = route_and_search(ctx.indexes, q, ctx.provider, &router, ctx.config.top_k)?;
    Ok((r.hits, Some(r.topic_id)))
}

fn answer_semantic(q: &str, history: Option<&Session>, ctx: &RagContext<'_>) -> Result<GroundedAnswer> {
    let (hits, routed_topic) = retrieve(q, ctx)?;
    let relevant: Vec<&Hit> = hits.iter().filter(|h| h.score >= ctx.config.score_floor).collect();
    let mut answer = GroundedAnswer {
        query: q.to_string(),
        mode: QueryMode::Semantic,
        text: String::new(),
        sources: Vec::new(),
        routed_topic,
        kg_facts: Vec::new(),
        refused: false,
    };
    if relevant.is_empty() {
        answer.text = REFUSAL_TEXT.to_string();
        answer.refused = true;
        return Ok(answer);
    }
    answer.sources = relevant
        .iter()
        .map(|h| Source {
            kind: SourceKind::Chunk,
            id: h.chunk.id(),
            excerpt: h.chunk.text.clone(),
            score: Some(h.score),
        })
        .collect();
    answer.kg_facts = keyword_facts(q, ctx.graph);

    let mut prompt = String::new();
    if let Some(s) = history.filter(|s| !s.turns.is_empty()) {
        prompt.push_str("Conversation so far:\n");
        prompt.push_str(&s.transcript());
        prompt.push('\n');
    }
    prompt.push_str("Sources:\n");
    for s in &answer.sources {
        prompt.push_str(&format!("[{}] {}\n", s.id, s.excerpt));
    }
    if !answer.kg_facts.is_empty() {
        prompt.push_str("\nGraph facts:\n");
        for f in &answer.kg_facts {
            prompt.push_str(&format!("- {}: {}\n", f.query, f.value));
        }
    }
    prompt.push_str(&format!("\nQuestion: {q}"));

    match ctx.chat.complete(SEMANTIC_SYSTEM_PROMPT, &prompt) {
        Ok(text) => {
            answer.text = text;
            Ok(answer)
        }
        Err(e) => Err(Error::DegradedAnswer {
            message: e.to_string(),
            answer: Box::new(answer),
        }),
    }
}

fn answer_with(q: &str, history: Option<&Session>, ctx: &RagContext<'_>) -> Result<GroundedAnswer> {
    let plan = classify_query(q, &ctx.config)?;
    match plan.kg_operations.first() {
        Some(KgOperation::CountMentions { phrase, kinds }) => answer_count(&plan.query, ctx.graph, phrase, kinds),
        Some(KgOperation::CommonCitations { phrase, kinds, top_n }) => {
            answer_citations(&plan.query, ctx.graph, phrase, kinds, *top_n)
        }
        _ => answer_semantic(&plan.query, history, ctx),
    }
}

/// Answer a question without conversation history. Counts and citation
/// tallies come from the graph; other questions are answered by the chat
/// model over retrieved passages, or refused when none is relevant.
pub fn answer(q: &str, ctx: &RagContext<'_>) -> Result<GroundedAnswer> {
    answer_with(q, None, ctx)
}

/// Answer with the session window in the prompt, then record the turn.
pub fn follow_up(q: &str, session: &mut Session, ctx: &RagContext<'_>) -> Result<GroundedAnswer> {
    let a = answer_with(q, Some(session), ctx)?;
    session.push(q, a.text.clone());
    Ok(a)
}

/// Numbers in `text` that are not the value of any numeric fact. A number is
/// a whitespace-separated token that is all digits once surrounding
/// punctuation is removed; text equal to a non-numeric fact value (a
/// citation key, a phrase) is skipped first.
pub fn ungrounded_numbers(text: &str, facts: &[KgFact]) -> Vec<String> {
    let is_num = |s: &str| !s.is_empty() && s.chars().all(|c| c.is_ascii_digit());
    let mut t = text.to_string();
    let mut labels: Vec<&str> = facts.iter().map(|f| f.value.as_str()).filter(|v| !is_num(v) && !v.is_empty()).collect();
    labels.sort_by_key(|v| std::cmp::Reverse(v.len()));
    for l in labels {
        t = t.replace(l, " ");
    }
    let numeric: BTreeSet<&str> = facts.iter().map(|f| f.value.as_str()).filter(|v| is_num(v)).collect();
    t.split_whitespace()
        .map(|w| w.trim_matches(|c: char| !c.is_alphanumeric()))
        .filter(|w| is_num(w) && !numeric.contains(w))
        .map(str::to_string)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_vocabulary, DocType, Document};
    use crate::hnmfk::{Hierarchy, HierarchyConfig, TopicNode};
    use crate::kg::{build_graph, extract_citations_regex};
    use crate::rag::{EchoChat, FixedChat, OfflineChat};
    use crate::vstore::{build_corpus_index, BuildOptions, Chunking, HashProvider};

    fn corpus() -> Vec<Document> {
        vec![
            Document::new("s1", DocType::SupremeCase, "The petition for a writ of habeas corpus was denied."),
            Document::new("s2", DocType::SupremeCase, "Habeas Corpus relief requires exhaustion of remedies."),
            Document::new("a1", DocType::AppealsCase, "A malpractice claim under NMSA 1978, § 41-5-1 and § 41-5-13."),
            Document::new("a2", DocType::AppealsCase, "Legal malpractice; see NMSA 1978, § 41-5-1 and Smith v. South, 1955."),
            Document::new("c1", DocType::Constitution, "The governor may veto any bill presented within three days."),
        ]
    }

    fn graph(docs: &[Document]) -> Graph {
        let root = TopicNode {
            id: "root/0".into(),
            depth: 0,
            selected_k: 0,
            doc_ids: docs.iter().map(|d| d.id.clone()).collect(),
            top_keywords: vec!["malpractice".into(), "governor".into()],
            label: None,
            flags: Vec::new(),
            children: Vec::new(),
        };
        let h = Hierarchy {
            corpus_id: "x".into(),
            config: HierarchyConfig::default(),
            root_selected_k: 1,
            flags: Vec::new(),
            roots: vec![root],
        };
        let cits = docs
            .iter()
            .map(|d| (d.id.clone(), extract_citations_regex(&d.text)))
            .collect();
        let vocab = build_vocabulary(docs, 1, 1.0).unwrap();
        build_graph(docs, &h, &cits, &vocab).unwrap()
    }

    struct Fixture {
        graph: Graph,
        indexes: BTreeMap<String, VectorIndex>,
        provider: HashProvider,
    }

    fn fixture() -> Fixture {
        let docs = corpus();
        let provider = HashProvider::default();
        let indexes = build_corpus_index(&docs, Chunking::Whole, &provider, &BuildOptions::default()).unwrap();
        Fixture {
            graph: graph(&docs),
            indexes,
            provider,
        }
    }

    fn ctx<'a>(f: &'a Fixture, chat: &'a dyn ChatClient) -> RagContext<'a> {
        RagContext {
            graph: &f.graph,
            indexes: &f.indexes,
            provider: &f.provider,
            chat,
            config: AnswerConfig::default(),
        }
    }

    #[test]
    fn classification() {
        let cfg = AnswerConfig::default();
        let p = classify_query("How many New Mexico Supreme Court cases mention `Habeas Corpus'?", &cfg).unwrap();
        assert_eq!(p.mode, QueryMode::Quantitative);
        assert_eq!(
            p.kg_operations,
            vec![KgOperation::CountMentions {
                phrase: "Habeas Corpus".into(),
                kinds: vec![NodeKind::SupremeCase]
            }]
        );
        let p = classify_query(
            "What are common citations among New Mexico Court of Appeals cases that mention 'malpractice'?",
            &cfg,
        )
        .unwrap();
        assert_eq!(p.mode, QueryMode::CitationPattern);
        assert!(matches!(&p.kg_operations[0], KgOperation::CommonCitations { phrase, kinds, .. }
            if phrase == "malpractice" && kinds == &vec![NodeKind::AppealsCase]));
        let p = classify_query(
            "What happens to a bill if the governor neither returns it within the specified three-day window (Sundays excepted) nor signs it?",
            &cfg,
        )
        .unwrap();
        assert_eq!(p.mode, QueryMode::Semantic);
        assert_eq!(p.vs_requests.len(), 1);
        let p = classify_query("How many statutes mention estoppel?", &cfg).unwrap();
        assert!(matches!(&p.kg_operations[0], KgOperation::CountMentions { phrase, kinds }
            if phrase == "estoppel" && kinds == &vec![NodeKind::StatuteDoc]));
        assert!(classify_query("  ", &cfg).is_err());
    }

    #[test]
    fn quantitative_answer_from_graph() {
        let f = fixture();
        let a = answer("How many New Mexico Supreme Court cases mention 'Habeas Corpus'?", &ctx(&f, &OfflineChat)).unwrap();
        assert_eq!(a.text, "There are 2 Supreme Court cases that mention 'Habeas Corpus'.");
        assert!(a.kg_facts.iter().any(|k| k.value == "2" && k.query.starts_with("count_mentions")));
        assert!(ungrounded_numbers(&a.text, &a.kg_facts).is_empty());
        assert_eq!(a.sources.len(), 3);
        let a = answer("How many documents mention 'veto'?", &ctx(&f, &OfflineChat)).unwrap();
        assert_eq!(
            a.text,
            "There is 1 document that mentions 'veto': 1 constitutional section, 0 statutes, \
             0 Supreme Court cases, 0 Court of Appeals cases, 0 documents."
        );
        assert!(ungrounded_numbers(&a.text, &a.kg_facts).is_empty());
    }

    #[test]
    fn citation_answer_from_graph() {
        let f = fixture();
        let a = answer(
            "What are common citations among New Mexico Court of Appeals cases that mention 'malpractice'?",
            &ctx(&f, &OfflineChat),
        )
        .unwrap();
        assert_eq!(
            a.text,
            "The common citations among Court of Appeals cases that mention 'malpractice' include \
             NMSA 41-5-1 with 2 cases, NMSA 41-5-13 with 1 case, SMITH V. SOUTH (1955) with 1 case."
        );
        assert!(ungrounded_numbers(&a.text, &a.kg_facts).is_empty());
        let bad = format!("{} Also 36 more.", a.text);
        assert_eq!(ungrounded_numbers(&bad, &a.kg_facts), ["36"]);
    }

    #[test]
    fn semantic_answer_uses_stub_and_sources() {
        let f = fixture();
        let q = "Can the governor veto a bill?";
        let a = answer(q, &ctx(&f, &FixedChat("The governor may veto it [c1#0].".into()))).unwrap();
        assert!(!a.refused);
        assert_eq!(a.text, "The governor may veto it [c1#0].");
        assert_eq!(a.sources[0].id, "c1#0");
        assert!(a.sources.iter().all(|s| s.score.unwrap() >= 0.15));
        assert!(a.kg_facts.iter().any(|k| k.query == "topics with keyword 'governor'"));
        let again = answer(q, &ctx(&f, &FixedChat("The governor may veto it [c1#0].".into()))).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&again).unwrap());
    }

    #[test]
    fn refusal_below_floor() {
        let f = fixture();
        let a = answer("zebra quantum spaceship", &ctx(&f, &EchoChat)).unwrap();
        assert!(a.refused);
        assert_eq!(a.text, REFUSAL_TEXT);
        assert!(a.sources.is_empty());
    }

    #[test]
    fn chat_failure_is_degraded() {
        let f = fixture();
        match answer("Can the governor veto a bill?", &ctx(&f, &OfflineChat)) {
            Err(e @ Error::DegradedAnswer { .. }) => {
                assert!(e.is_external());
                let Error::DegradedAnswer { answer, .. } = e else { unreachable!() };
                assert!(!answer.sources.is_empty());
                assert!(answer.text.is_empty());
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn session_window_and_follow_up() {
        let f = fixture();
        let c = ctx(&f, &EchoChat);
        let q = "Can the governor veto a bill?";
        let mut empty = Session::new("s");
        assert_eq!(follow_up(q, &mut empty, &c).unwrap(), answer(q, &c).unwrap());
        assert_eq!(empty.turns.len(), 1);

        let mut s = Session::new("s");
        for i in 0..6 {
            s.push(format!("question {i}"), format!("answer {i}"));
        }
        assert_eq!(s.turns.len(), 5);
        let a = follow_up(q, &mut s, &c).unwrap();
        assert!(!a.text.contains("question 0"));
        assert!(a.text.contains("User: question 5\nAssistant: answer 5"));
        assert!(a.text.contains("User: question 1"));
        assert_eq!(s.turns.back().unwrap().query, q);
    }
}
