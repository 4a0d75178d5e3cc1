//! Directional-triplet property graph over documents, topics, keywords,
//! vocabulary tokens and citations.
//!
//! Node ids carry a kind prefix (`doc:`, `topic:`, `kw:`, `tok:`, `cite:`) so a
//! keyword and a vocabulary token with the same spelling stay distinct nodes.
//! A built graph is immutable.

mod citation;
mod export;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

pub use citation::{
    extract_citations_llm, extract_citations_regex, normalize_key, Citation, CitationKind, CitationSource,
    EXTRACTION_SYSTEM_PROMPT,
};
pub use export::{ExportFormat, EDGES_FILE, NODES_FILE};

use crate::corpus::{tokenize, DocType, Document, Vocabulary};
use crate::error::{Error, Result};
use crate::hnmfk::Hierarchy;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    ConstitutionDoc,
    StatuteDoc,
    SupremeCase,
    AppealsCase,
    GenericDoc,
    Topic,
    Keyword,
    BowToken,
    ExternalCitation,
}

impl NodeKind {
    pub const ALL: [NodeKind; 9] = [
        NodeKind::ConstitutionDoc,
        NodeKind::StatuteDoc,
        NodeKind::SupremeCase,
        NodeKind::AppealsCase,
        NodeKind::GenericDoc,
        NodeKind::Topic,
        NodeKind::Keyword,
        NodeKind::BowToken,
        NodeKind::ExternalCitation,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            NodeKind::ConstitutionDoc => "constitution_doc",
            NodeKind::StatuteDoc => "statute_doc",
            NodeKind::SupremeCase => "supreme_case",
            NodeKind::AppealsCase => "appeals_case",
            NodeKind::GenericDoc => "generic_doc",
            NodeKind::Topic => "topic",
            NodeKind::Keyword => "keyword",
            NodeKind::BowToken => "bow_token",
            NodeKind::ExternalCitation => "external_citation",
        }
    }

    pub fn is_document(self) -> bool {
        matches!(
            self,
            NodeKind::ConstitutionDoc
                | NodeKind::StatuteDoc
                | NodeKind::SupremeCase
                | NodeKind::AppealsCase
                | NodeKind::GenericDoc
        )
    }

    pub fn for_doc_type(t: DocType) -> Self {
        match t {
            DocType::Constitution => NodeKind::ConstitutionDoc,
            DocType::Statute => NodeKind::StatuteDoc,
            DocType::SupremeCase => NodeKind::SupremeCase,
            DocType::AppealsCase => NodeKind::AppealsCase,
            DocType::Generic => NodeKind::GenericDoc,
        }
    }
}

impl fmt::Display for NodeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for NodeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::param(format!("unknown node kind {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Relation {
    HasTopic,
    TopicHasKeyword,
    MentionsToken,
    Cites,
    ChildOf,
}

impl Relation {
    pub const ALL: [Relation; 5] = [
        Relation::HasTopic,
        Relation::TopicHasKeyword,
        Relation::MentionsToken,
        Relation::Cites,
        Relation::ChildOf,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Relation::HasTopic => "HAS_TOPIC",
            Relation::TopicHasKeyword => "TOPIC_HAS_KEYWORD",
            Relation::MentionsToken => "MENTIONS_TOKEN",
            Relation::Cites => "CITES",
            Relation::ChildOf => "CHILD_OF",
        }
    }
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Relation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| Error::param(format!("unknown relation {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphNode {
    pub id: String,
    pub kind: NodeKind,
    pub attrs: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GraphEdge {
    pub head: String,
    pub relation: Relation,
    pub tail: String,
}

pub fn doc_node_id(doc_id: &str) -> String {
    format!("doc:{doc_id}")
}

pub fn topic_node_id(topic_id: &str) -> String {
    format!("topic:{topic_id}")
}

pub fn keyword_node_id(token: &str) -> String {
    format!("kw:{token}")
}

pub fn token_node_id(token: &str) -> String {
    format!("tok:{token}")
}

pub fn citation_node_id(key: &str) -> String {
    format!("cite:{key}")
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Graph {
    nodes: BTreeMap<String, GraphNode>,
    out: BTreeMap<String, BTreeSet<(Relation, String)>>,
    inc: BTreeMap<String, BTreeSet<(Relation, String)>>,
    n_edges: usize,
}

impl Graph {
    /// Assemble a graph, rejecting duplicate node ids and dangling edges.
    /// Repeated edges collapse to one.
    pub fn from_parts(nodes: impl IntoIterator<Item = GraphNode>, edges: impl IntoIterator<Item = GraphEdge>) -> Result<Self> {
        let mut b = GraphBuilder::default();
        for n in nodes {
            b.add_node(n)?;
        }
        for e in edges {
            b.add_edge(e.head, e.relation, e.tail)?;
        }
        Ok(b.finish())
    }

    pub fn node(&self, id: &str) -> Option<&GraphNode> {
        self.nodes.get(id)
    }

    /// Nodes ordered by id.
    pub fn nodes(&self) -> impl Iterator<Item = &GraphNode> {
        self.nodes.values()
    }

    /// Edges ordered by (head, relation, tail).
    pub fn edges(&self) -> impl Iterator<Item = GraphEdge> + '_ {
        let mut all: Vec<GraphEdge> = self
            .out
            .iter()
            .flat_map(|(h, set)| {
                set.iter().map(move |(r, t)| GraphEdge {
                    head: h.clone(),
                    relation: *r,
                    tail: t.clone(),
                })
            })
            .collect();
        all.sort();
        all.into_iter()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.n_edges
    }

    pub fn has_edge(&self, head: &str, relation: Relation, tail: &str) -> bool {
        self.out
            .get(head)
            .is_some_and(|s| s.contains(&(relation, tail.to_string())))
    }

    pub fn successors(&self, id: &str, relation: Relation) -> impl Iterator<Item = &str> {
        self.out
            .get(id)
            .into_iter()
            .flatten()
            .filter(move |(r, _)| *r == relation)
            .map(|(_, t)| t.as_str())
    }

    pub fn predecessors(&self, id: &str, relation: Relation) -> impl Iterator<Item = &str> {
        self.inc
            .get(id)
            .into_iter()
            .flatten()
            .filter(move |(r, _)| *r == relation)
            .map(|(_, h)| h.as_str())
    }

    pub fn count_by_kind(&self) -> BTreeMap<NodeKind, usize> {
        let mut out = BTreeMap::new();
        for n in self.nodes.values() {
            *out.entry(n.kind).or_insert(0) += 1;
        }
        out
    }

    /// Edge counts keyed by the kind of the head node.
    pub fn out_edges_by_kind(&self) -> BTreeMap<NodeKind, usize> {
        let mut out = BTreeMap::new();
        for (h, set) in &self.out {
            *out.entry(self.nodes[h].kind).or_insert(0) += set.len();
        }
        out
    }

    fn doc_nodes(&self) -> impl Iterator<Item = &GraphNode> {
        self.nodes.values().filter(|n| n.kind.is_document())
    }
}

#[derive(Debug, Default)]
pub struct GraphBuilder {
    g: Graph,
}

impl GraphBuilder {
    pub fn add_node(&mut self, node: GraphNode) -> Result<()> {
        if self.g.nodes.contains_key(&node.id) {
            return Err(Error::Data(format!("duplicate node id {:?}", node.id)));
        }
        self.g.nodes.insert(node.id.clone(), node);
        Ok(())
    }

    fn ensure_node(&mut self, id: String, kind: NodeKind, attrs: BTreeMap<String, String>) {
        self.g.nodes.entry(id.clone()).or_insert(GraphNode { id, kind, attrs });
    }

    pub fn add_edge(&mut self, head: String, relation: Relation, tail: String) -> Result<()> {
        for end in [&head, &tail] {
            if !self.g.nodes.contains_key(end) {
                return Err(Error::Data(format!(
                    "edge {head} -{relation}-> {tail} refers to missing node {end:?}"
                )));
            }
        }
        if self.g.out.entry(head.clone()).or_default().insert((relation, tail.clone())) {
            self.g.inc.entry(tail).or_default().insert((relation, head));
            self.g.n_edges += 1;
        }
        Ok(())
    }

    pub fn finish(self) -> Graph {
        self.g
    }
}

/// Maps citation keys to the documents they name.
///
/// A document is addressable by every key found in its `citation` metadata
/// (several separated by `;`) and, for case law with a `year`, by
/// `TITLE (YEAR)`.
#[derive(Debug, Clone, Default)]
pub struct CitationIndex {
    by_key: HashMap<String, String>,
    primary: BTreeMap<String, String>,
}

impl CitationIndex {
    pub fn from_docs(docs: &[Document]) -> Self {
        let mut idx = CitationIndex::default();
        for d in docs {
            let mut keys: Vec<String> = Vec::new();
            if let Some(v) = d.metadata.get("citation") {
                for part in v.split(';').map(str::trim).filter(|p| !p.is_empty()) {
                    let found = extract_citations_regex(part);
                    if found.is_empty() {
                        keys.push(normalize_key(part));
                    }
                    for c in found {
                        keys.extend(c.keys().map(str::to_string));
                    }
                }
            }
            if d.doc_type.is_case_law() && !d.title.is_empty() {
                if let Some(year) = d.metadata.get("year") {
                    keys.push(normalize_key(&format!("{} ({year})", d.title)));
                }
            }
            let node = doc_node_id(&d.id);
            if let Some(first) = keys.first() {
                idx.primary.insert(node.clone(), first.clone());
            }
            for k in keys {
                idx.by_key.entry(k).or_insert_with(|| node.clone());
            }
        }
        idx
    }

    /// Node id of the document named by any key of `c`.
    pub fn lookup(&self, c: &Citation) -> Option<&str> {
        c.keys().find_map(|k| self.by_key.get(k)).map(String::as_str)
    }

    /// Set `resolved_node` on each citation that names a known document.
    pub fn resolve(&self, citations: &mut [Citation]) {
        for c in citations {
            c.resolved_node = self.lookup(c).map(str::to_string);
        }
    }

    fn primary_key(&self, node: &str) -> Option<&str> {
        self.primary.get(node).map(String::as_str)
    }
}

/// Build the graph. `citations` is keyed by document id; `vocab` is the BOW
/// vocabulary whose tokens get `MENTIONS_TOKEN` edges.
pub fn build_graph(
    docs: &[Document],
    hierarchy: &Hierarchy,
    citations: &BTreeMap<String, Vec<Citation>>,
    vocab: &Vocabulary,
) -> Result<Graph> {
    let mut b = GraphBuilder::default();
    let index = CitationIndex::from_docs(docs);

    for d in docs {
        let id = doc_node_id(&d.id);
        let mut attrs: BTreeMap<String, String> = d.metadata.clone();
        attrs.insert("doc_id".into(), d.id.clone());
        attrs.insert("title".into(), d.title.clone());
        attrs.insert("text".into(), d.text.clone());
        if let Some(k) = index.primary_key(&id) {
            attrs.insert("citation_key".into(), k.to_string());
        }
        b.add_node(GraphNode {
            id,
            kind: NodeKind::for_doc_type(d.doc_type),
            attrs,
        })?;
    }

    for t in hierarchy.nodes() {
        let mut attrs = BTreeMap::from([
            ("path".to_string(), t.id.clone()),
            ("depth".to_string(), t.depth.to_string()),
            ("size".to_string(), t.doc_ids.len().to_string()),
        ]);
        if let Some(l) = &t.label {
            attrs.insert("label".into(), l.clone());
        }
        b.add_node(GraphNode {
            id: topic_node_id(&t.id),
            kind: NodeKind::Topic,
            attrs,
        })?;
    }
    for t in hierarchy.nodes() {
        let tid = topic_node_id(&t.id);
        if let Some(parent) = Hierarchy::parent_id(&t.id) {
            b.add_edge(tid.clone(), Relation::ChildOf, topic_node_id(parent))?;
        }
        for kw in &t.top_keywords {
            let kid = keyword_node_id(kw);
            b.ensure_node(kid.clone(), NodeKind::Keyword, BTreeMap::from([("token".to_string(), kw.clone())]));
            b.add_edge(tid.clone(), Relation::TopicHasKeyword, kid)?;
        }
    }
    for (doc, leaf) in hierarchy.leaf_of() {
        b.add_edge(doc_node_id(&doc), Relation::HasTopic, topic_node_id(&leaf))?;
    }

    for d in docs {
        let did = doc_node_id(&d.id);
        let present: BTreeSet<String> = tokenize(&d.text).into_iter().filter(|t| vocab.contains(t)).collect();
        for tok in present {
            let tid = token_node_id(&tok);
            b.ensure_node(tid.clone(), NodeKind::BowToken, BTreeMap::from([("token".to_string(), tok)]));
            b.add_edge(did.clone(), Relation::MentionsToken, tid)?;
        }
    }

    for (doc, cits) in citations {
        let did = doc_node_id(doc);
        if !b.g.nodes.contains_key(&did) {
            return Err(Error::Data(format!("citations given for unknown document {doc:?}")));
        }
        for c in cits {
            let target = match index.lookup(c) {
                Some(t) if t == did => continue,
                Some(t) => t.to_string(),
                None => {
                    let cid = citation_node_id(&c.key);
                    b.ensure_node(
                        cid.clone(),
                        NodeKind::ExternalCitation,
                        BTreeMap::from([
                            ("key".to_string(), c.key.clone()),
                            ("citation_kind".to_string(), kind_str(c.kind).to_string()),
                            ("raw".to_string(), c.raw.clone()),
                        ]),
                    );
                    cid
                }
            };
            b.add_edge(did.clone(), Relation::Cites, target)?;
        }
    }
    Ok(b.finish())
}

fn kind_str(k: CitationKind) -> &'static str {
    match k {
        CitationKind::NmsaStatute => "nmsa_statute",
        CitationKind::NmCase => "nm_case",
        CitationKind::ConstitutionClause => "constitution_clause",
        CitationKind::Rule => "rule",
        CitationKind::Other => "other",
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct KeywordNeighborhood {
    /// Topic node ids whose keyword set contains the token.
    pub topics: BTreeSet<String>,
    /// Document node ids filed under those topics or their descendants, by kind.
    pub docs_via_topics: BTreeMap<NodeKind, BTreeSet<String>>,
    /// Document node ids with a `MENTIONS_TOKEN` edge to the token, by kind.
    pub docs_via_bow: BTreeMap<NodeKind, BTreeSet<String>>,
}

impl KeywordNeighborhood {
    pub fn topic_doc_count(&self) -> usize {
        self.docs_via_topics.values().map(BTreeSet::len).sum()
    }

    pub fn bow_doc_count(&self) -> usize {
        self.docs_via_bow.values().map(BTreeSet::len).sum()
    }
}

impl Graph {
    pub fn keyword_neighborhood(&self, token: &str) -> KeywordNeighborhood {
        let mut out = KeywordNeighborhood::default();
        let kw = keyword_node_id(token);
        out.topics = self
            .predecessors(&kw, Relation::TopicHasKeyword)
            .map(str::to_string)
            .collect();
        let mut stack: Vec<&str> = out.topics.iter().map(String::as_str).collect();
        let mut visited: BTreeSet<&str> = BTreeSet::new();
        while let Some(t) = stack.pop() {
            if !visited.insert(t) {
                continue;
            }
            for d in self.predecessors(t, Relation::HasTopic) {
                out.docs_via_topics
                    .entry(self.nodes[d].kind)
                    .or_default()
                    .insert(d.to_string());
            }
            stack.extend(self.predecessors(t, Relation::ChildOf));
        }
        for d in self.predecessors(&token_node_id(token), Relation::MentionsToken) {
            out.docs_via_bow
                .entry(self.nodes[d].kind)
                .or_default()
                .insert(d.to_string());
        }
        out
    }

    fn mentioning<'a>(&'a self, phrase: &str, kind: NodeKind) -> Result<Vec<&'a GraphNode>> {
        if phrase.trim().is_empty() {
            return Err(Error::param("phrase must be non-empty"));
        }
        let needle = phrase.to_lowercase();
        Ok(self
            .doc_nodes()
            .filter(|n| n.kind == kind)
            .filter(|n| {
                n.attrs
                    .get("text")
                    .is_some_and(|t| t.to_lowercase().contains(&needle))
            })
            .collect())
    }

    /// Documents of `kind` whose text contains `phrase`, ignoring case.
    pub fn count_mentions(&self, phrase: &str, kind: NodeKind) -> Result<usize> {
        Ok(self.mentioning(phrase, kind)?.len())
    }

    /// Most-cited keys among documents of `kind` that mention `phrase`:
    /// count descending, then key ascending.
    pub fn common_citations(&self, phrase: &str, kind: NodeKind, top_n: usize) -> Result<Vec<(String, usize)>> {
        if top_n == 0 {
            return Err(Error::param("top_n must be at least 1"));
        }
        let mut tally: BTreeMap<String, usize> = BTreeMap::new();
        for d in self.mentioning(phrase, kind)? {
            for t in self.successors(&d.id, Relation::Cites) {
                *tally.entry(self.citation_key(t)).or_insert(0) += 1;
            }
        }
        let mut v: Vec<(String, usize)> = tally.into_iter().collect();
        v.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        v.truncate(top_n);
        Ok(v)
    }

    /// Key a `CITES` target is reported under.
    pub fn citation_key(&self, node: &str) -> String {
        let n = &self.nodes[node];
        n.attrs
            .get("key")
            .or_else(|| n.attrs.get("citation_key"))
            .cloned()
            .unwrap_or_else(|| node.to_string())
    }
}
