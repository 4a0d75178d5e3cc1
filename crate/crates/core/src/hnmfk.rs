//! Recursive topic hierarchy built from repeated NMFk decompositions.
//!
//! The whole corpus is decomposed first; each resulting cluster becomes a
//! depth-0 node. A node is decomposed again when it holds at least
//! `min_cluster_size` documents and sits above `max_depth`. Every
//! decomposition rebuilds its vocabulary and TF-IDF matrix from the node's own
//! documents, and takes its seed from the node path, so siblings can run in
//! parallel without changing the result.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{build_tfidf, build_vocabulary, Document, Vocabulary};
use crate::error::{Error, Result};
use crate::nmfk::{self, NmfkConfig, NmfkResult};
use crate::rag::ChatClient;
use crate::seed;

pub const LABEL_TEMPLATE: &str = "These words describe a topic: {keywords}. Give a short descriptive title.";
pub const LABEL_SYSTEM_PROMPT: &str = "You name clusters of legal documents. Reply with the title only.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HierarchyConfig {
    pub max_depth: usize,
    pub min_cluster_size: usize,
    pub keywords_per_topic: usize,
    pub nmfk: NmfkConfig,
    pub vocab_min_df: usize,
    pub vocab_max_df_ratio: f64,
}

impl Default for HierarchyConfig {
    fn default() -> Self {
        HierarchyConfig {
            max_depth: 2,
            min_cluster_size: 100,
            keywords_per_topic: 50,
            nmfk: NmfkConfig::default(),
            vocab_min_df: 5,
            vocab_max_df_ratio: 0.8,
        }
    }
}

impl HierarchyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.min_cluster_size < 2 {
            return Err(Error::param("min_cluster_size must be at least 2"));
        }
        if self.keywords_per_topic < 1 {
            return Err(Error::param("keywords_per_topic must be at least 1"));
        }
        if self.vocab_min_df < 1 {
            return Err(Error::param("vocab_min_df must be at least 1"));
        }
        if !(self.vocab_max_df_ratio > 0.0 && self.vocab_max_df_ratio <= 1.0) {
            return Err(Error::param("vocab_max_df_ratio must be in (0, 1]"));
        }
        self.nmfk.validate()
    }

    /// Per-node DF floor: `min(vocab_min_df, max(2, n / 10))`, never above `n`.
    pub fn node_min_df(&self, n_docs: usize) -> usize {
        self.vocab_min_df.min((n_docs / 10).max(2)).min(n_docs).max(1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicNode {
    /// Path form: `root/4/2` is child 2 of depth-0 cluster 4.
    pub id: String,
    pub depth: usize,
    /// Number of clusters this node was split into; 0 when not decomposed.
    pub selected_k: usize,
    pub doc_ids: Vec<String>,
    pub top_keywords: Vec<String>,
    #[serde(default)]
    pub label: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
    #[serde(default)]
    pub children: Vec<TopicNode>,
}

impl TopicNode {
    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }

    fn walk<'a>(&'a self, out: &mut Vec<&'a TopicNode>) {
        out.push(self);
        for c in &self.children {
            c.walk(out);
        }
    }

    fn walk_mut(&mut self, f: &mut impl FnMut(&mut TopicNode)) {
        f(self);
        for c in &mut self.children {
            c.walk_mut(f);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hierarchy {
    pub corpus_id: String,
    pub config: HierarchyConfig,
    /// Clusters found in the whole-corpus decomposition.
    pub root_selected_k: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
    pub roots: Vec<TopicNode>,
}

impl Hierarchy {
    /// All nodes in pre-order.
    pub fn nodes(&self) -> Vec<&TopicNode> {
        let mut out = Vec::new();
        for r in &self.roots {
            r.walk(&mut out);
        }
        out
    }

    pub fn leaves(&self) -> Vec<&TopicNode> {
        self.nodes().into_iter().filter(|n| n.is_leaf()).collect()
    }

    pub fn find(&self, id: &str) -> Option<&TopicNode> {
        self.nodes().into_iter().find(|n| n.id == id)
    }

    /// Leaf topic id of every document.
    pub fn leaf_of(&self) -> BTreeMap<String, String> {
        let mut out = BTreeMap::new();
        for leaf in self.leaves() {
            for d in &leaf.doc_ids {
                out.insert(d.clone(), leaf.id.clone());
            }
        }
        out
    }

    /// Parent id of a node id, `None` for depth-0 nodes.
    pub fn parent_id(id: &str) -> Option<&str> {
        let (head, _) = id.rsplit_once('/')?;
        (head != "root").then_some(head)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()? + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn read_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let s = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s)
    }

    /// Flat `id,parent,depth,size,selected_k,label` table for plotting.
    pub fn sizes_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let io = |e: csv::Error| Error::Data(e.to_string());
        w.write_record(["id", "parent", "depth", "size", "selected_k", "label"])
            .map_err(io)?;
        for n in self.nodes() {
            w.write_record([
                n.id.as_str(),
                Self::parent_id(&n.id).unwrap_or(""),
                &n.depth.to_string(),
                &n.doc_ids.len().to_string(),
                &n.selected_k.to_string(),
                n.label.as_deref().unwrap_or(""),
            ])
            .map_err(io)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Data(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
    }
}

/// Hard assignment of documents to clusters by argmax over H columns.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Assignment {
    /// Non-empty clusters only.
    pub clusters: BTreeMap<usize, Vec<String>>,
    /// Documents whose H column was all zero; they are placed in cluster 0.
    pub zero_columns: Vec<String>,
}

pub fn assign_clusters(f: &NmfkResult, doc_ids: &[String]) -> Result<Assignment> {
    let h = &f.consensus_h;
    if h.ncols() != doc_ids.len() {
        return Err(Error::Dimension {
            expected: format!("{} H columns", doc_ids.len()),
            found: h.ncols().to_string(),
        });
    }
    let mut out = Assignment::default();
    for (d, id) in doc_ids.iter().enumerate() {
        let col = h.column(d);
        let mut best = 0;
        for c in 1..col.len() {
            if col[c] > col[best] {
                best = c;
            }
        }
        if col.iter().all(|v| *v == 0.0) {
            out.zero_columns.push(id.clone());
        }
        out.clusters.entry(best).or_default().push(id.clone());
    }
    Ok(out)
}

/// The `m` tokens with the largest weight in column `cluster` of the
/// consensus W, heaviest first, ties lexicographic.
pub fn top_keywords(f: &NmfkResult, vocab: &Vocabulary, cluster: usize, m: usize) -> Result<Vec<String>> {
    if cluster >= f.selected_k {
        return Err(Error::param(format!(
            "cluster {cluster} out of range for k = {}",
            f.selected_k
        )));
    }
    let w = &f.consensus_w;
    if w.nrows() != vocab.len() {
        return Err(Error::Dimension {
            expected: format!("{} W rows", vocab.len()),
            found: w.nrows().to_string(),
        });
    }
    let mut idx: Vec<usize> = (0..vocab.len()).collect();
    idx.sort_by(|&a, &b| {
        w[[b, cluster]]
            .total_cmp(&w[[a, cluster]])
            .then_with(|| vocab.tokens[a].cmp(&vocab.tokens[b]))
    });
    Ok(idx.into_iter().take(m).map(|i| vocab.tokens[i].clone()).collect())
}

/// Identifier of a corpus: FNV-1a over ids and texts in corpus order.
pub fn corpus_id(docs: &[Document]) -> String {
    let mut buf = String::new();
    for d in docs {
        buf.push_str(&d.id);
        buf.push('\u{1f}');
        buf.push_str(&d.text);
        buf.push('\u{1e}');
    }
    format!("{:016x}", seed::hash_str(&buf))
}

struct Split {
    selected_k: usize,
    children: Vec<TopicNode>,
    flags: Vec<String>,
}

pub fn decompose(docs: &[Document], cfg: &HierarchyConfig) -> Result<Hierarchy> {
    cfg.validate()?;
    if docs.len() < 2 {
        return Err(Error::param("decomposition needs at least two documents"));
    }
    let refs: Vec<&Document> = docs.iter().collect();
    let split = split_node(&refs, "root", 0, cfg)?;
    let (roots, root_selected_k, flags) = if split.children.is_empty() {
        // nothing to factorize at the top: the corpus is one flagged leaf
        let node = TopicNode {
            id: "root/0".into(),
            depth: 0,
            selected_k: 0,
            doc_ids: docs.iter().map(|d| d.id.clone()).collect(),
            top_keywords: Vec::new(),
            label: None,
            flags: split.flags.clone(),
            children: Vec::new(),
        };
        (vec![node], 0, split.flags)
    } else {
        (split.children, split.selected_k, split.flags)
    };
    Ok(Hierarchy {
        corpus_id: corpus_id(docs),
        config: cfg.clone(),
        root_selected_k,
        flags,
        roots,
    })
}

/// Decompose `docs` and build the child nodes at `child_depth`.
fn split_node(docs: &[&Document], path: &str, child_depth: usize, cfg: &HierarchyConfig) -> Result<Split> {
    let leaf = |flag: String| Split {
        selected_k: 0,
        children: Vec::new(),
        flags: vec![flag],
    };
    let vocab = match build_vocabulary(docs, cfg.node_min_df(docs.len()), cfg.vocab_max_df_ratio) {
        Ok(v) => v,
        Err(Error::VocabularyEmpty) => return Ok(leaf("vocabulary_empty".into())),
        Err(e) => return Err(e),
    };
    let matrix = match build_tfidf(docs, &vocab) {
        Ok(m) => m,
        Err(Error::AllZeroMatrix) => return Ok(leaf("all_zero_matrix".into())),
        Err(e) => return Err(e),
    };
    let mut nmfk_cfg = cfg.nmfk.clone();
    nmfk_cfg.base_seed = seed::derive_path(cfg.nmfk.base_seed, path);
    let bound = matrix.n_terms().min(matrix.n_docs());
    if nmfk_cfg.k_min > bound {
        return Ok(leaf(format!("rank_bound_{bound}_below_k_min")));
    }
    let result = nmfk::select_k(&matrix, &nmfk_cfg)?;
    log::info!(
        "{path}: {} docs, {} terms, k = {}",
        docs.len(),
        vocab.len(),
        result.selected_k
    );
    let mut flags = Vec::new();
    if result.low_confidence {
        flags.push("low_confidence".to_string());
    }
    let assignment = assign_clusters(&result, &matrix.doc_ids)?;
    let by_id: BTreeMap<&str, &Document> = docs.iter().map(|d| (d.id.as_str(), *d)).collect();

    let clusters: Vec<(usize, &Vec<String>)> = assignment.clusters.iter().map(|(c, ids)| (*c, ids)).collect();
    let children = clusters
        .par_iter()
        .map(|&(c, ids)| -> Result<TopicNode> {
            let id = format!("{path}/{c}");
            let mut node = TopicNode {
                id: id.clone(),
                depth: child_depth,
                selected_k: 0,
                doc_ids: ids.clone(),
                top_keywords: top_keywords(&result, &vocab, c, cfg.keywords_per_topic)?,
                label: None,
                flags: Vec::new(),
                children: Vec::new(),
            };
            if c == 0 {
                node.flags
                    .extend(assignment.zero_columns.iter().map(|d| format!("zero_h_column:{d}")));
            }
            if ids.len() >= cfg.min_cluster_size && child_depth < cfg.max_depth {
                let sub: Vec<&Document> = ids.iter().map(|d| by_id[d.as_str()]).collect();
                let s = split_node(&sub, &id, child_depth + 1, cfg)?;
                node.selected_k = s.selected_k;
                node.children = s.children;
                node.flags.extend(s.flags);
            }
            Ok(node)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Split {
        selected_k: result.selected_k,
        children,
        flags,
    })
}

/// Fill node labels from `chat`. Nodes that already carry a label are kept
/// unless `force` is set. Chat failures leave the label empty and add a warning.
pub fn label_topics(h: &Hierarchy, chat: &dyn ChatClient, force: bool) -> (Hierarchy, Vec<String>) {
    let mut out = h.clone();
    let mut warnings = Vec::new();
    for root in &mut out.roots {
        root.walk_mut(&mut |node| {
            if node.label.is_some() && !force {
                return;
            }
            let prompt = LABEL_TEMPLATE.replace("{keywords}", &node.top_keywords.join(", "));
            match chat.complete(LABEL_SYSTEM_PROMPT, &prompt) {
                Ok(reply) => {
                    let reply = reply.trim();
                    node.label = (!reply.is_empty()).then(|| reply.to_string());
                }
                Err(e) => {
                    node.label = None;
                    warnings.push(format!("{}: {e}", node.id));
                }
            }
        });
    }
    for w in &warnings {
        log::warn!("label: {w}");
    }
    (out, warnings)
}
