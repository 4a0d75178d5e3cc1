#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use lexigraph::corpus::{build_vocabulary, DocType, Document, Vocabulary};
use lexigraph::hnmfk::{Hierarchy, HierarchyConfig, TopicNode};
use lexigraph::kg::{build_graph, extract_citations_regex, Citation, Graph, NodeKind, Relation};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const WORDS: &[&str] = &[
    "estoppel", "habeas", "corpus", "water", "irrigation", "ditch", "malpractice", "negligence", "consent",
    "statute", "appeal", "custody", "support", "decree", "veto", "governor", "tax", "county", "zoning",
    "contract", "lease", "mineral", "election", "jury", "evidence", "expert", "damages", "liability",
];

pub const CITE_POOL: &[&str] = &[
    "NMSA 1978, § 41-5-1",
    "NMSA 1978, § 41-5-13",
    "Section 41-4-1 NMSA",
    "NMSA 37-1-8",
    "Smith v. South, 1955",
    "Gomez v. Chua, 1994-NMSC-125",
    "CERVANTES v. FORBIS (1964)",
    "Article IV, Section 22",
    "Rule 11-702 NMRA",
    "U.S. Const. amend. XIV",
];

const STATUTE_KEYS: &[&str] = &["NMSA 41-5-1", "NMSA 41-5-13", "NMSA 41-4-1"];

pub struct RandomKg {
    pub docs: Vec<Document>,
    pub hierarchy: Hierarchy,
    pub citations: BTreeMap<String, Vec<Citation>>,
    pub vocab: Vocabulary,
    pub graph: Graph,
}

fn topic(id: String, depth: usize, docs: Vec<String>, rng: &mut ChaCha8Rng) -> TopicNode {
    let mut kw: Vec<String> = WORDS.choose_multiple(rng, 3).map(|s| s.to_string()).collect();
    kw.sort();
    TopicNode {
        id,
        depth,
        selected_k: 0,
        doc_ids: docs,
        top_keywords: kw,
        label: None,
        flags: Vec::new(),
        children: Vec::new(),
    }
}

fn split(ids: &[String], parts: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<String>> {
    let mut shuffled = ids.to_vec();
    shuffled.shuffle(rng);
    let mut out = vec![Vec::new(); parts];
    for (i, id) in shuffled.into_iter().enumerate() {
        out[i % parts].push(id);
    }
    for p in &mut out {
        p.sort();
    }
    out
}

/// Random documents, a random two-level topic tree and random citations.
pub fn random_kg(seed: u64, n_docs: usize) -> RandomKg {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let kinds = [DocType::Constitution, DocType::Statute, DocType::SupremeCase, DocType::AppealsCase];
    let mut docs = Vec::new();
    for i in 0..n_docs {
        let len = rng.gen_range(5..25);
        let words: Vec<&str> = (0..len).map(|_| *WORDS.choose(&mut rng).unwrap()).collect();
        let mut text = words.join(" ");
        if rng.gen_bool(0.3) {
            text = text.replacen(' ', " Habeas Corpus ", 1);
        }
        let t = kinds[rng.gen_range(0..kinds.len())];
        let mut d = Document::new(format!("d{i:03}"), t, text);
        if t == DocType::Statute && i < STATUTE_KEYS.len() * 3 && rng.gen_bool(0.7) {
            d = d.with_meta("citation", STATUTE_KEYS[i % STATUTE_KEYS.len()]);
        }
        if t == DocType::SupremeCase && rng.gen_bool(0.1) {
            d = d.with_title("Smith v. South").with_meta("year", "1955");
        }
        docs.push(d);
    }
    // resolution keys must be unique across documents
    let mut seen = BTreeSet::new();
    for d in &mut docs {
        let key = d
            .metadata
            .get("citation")
            .cloned()
            .or_else(|| (!d.title.is_empty()).then(|| d.title.clone()));
        if let Some(k) = key {
            if !seen.insert(k) {
                d.metadata.remove("citation");
                d.metadata.remove("year");
                d.title.clear();
            }
        }
    }

    let ids: Vec<String> = docs.iter().map(|d| d.id.clone()).collect();
    let n_roots = rng.gen_range(1..=4.min(n_docs));
    let mut roots = Vec::new();
    for (r, part) in split(&ids, n_roots, &mut rng).into_iter().enumerate() {
        let mut node = topic(format!("root/{r}"), 0, part.clone(), &mut rng);
        if part.len() >= 4 && rng.gen_bool(0.6) {
            let k = rng.gen_range(2..=3);
            node.selected_k = k;
            for (c, sub) in split(&part, k, &mut rng).into_iter().enumerate() {
                node.children.push(topic(format!("root/{r}/{c}"), 1, sub, &mut rng));
            }
        }
        roots.push(node);
    }
    let hierarchy = Hierarchy {
        corpus_id: format!("random-{seed}"),
        config: HierarchyConfig::default(),
        root_selected_k: n_roots,
        flags: Vec::new(),
        roots,
    };

    let mut citations = BTreeMap::new();
    for d in &mut docs {
        let n = rng.gen_range(0..4);
        if n == 0 {
            continue;
        }
        let picks: Vec<&str> = CITE_POOL.choose_multiple(&mut rng, n).copied().collect();
        let sentence = format!(" See {}.", picks.join("; "));
        d.text.push_str(&sentence);
        citations.insert(d.id.clone(), extract_citations_regex(&sentence));
    }
    let vocab = build_vocabulary(&docs, 2, 1.0).unwrap();
    let graph = build_graph(&docs, &hierarchy, &citations, &vocab).unwrap();
    RandomKg {
        docs,
        hierarchy,
        citations,
        vocab,
        graph,
    }
}

fn kind_of(g: &Graph, id: &str) -> NodeKind {
    g.nodes().find(|n| n.id == id).unwrap().kind
}

/// Keyword neighborhood by repeated scans of the flat edge list.
pub fn bf_neighborhood(
    g: &Graph,
    token: &str,
) -> (
    BTreeSet<String>,
    BTreeMap<NodeKind, BTreeSet<String>>,
    BTreeMap<NodeKind, BTreeSet<String>>,
) {
    let edges: Vec<_> = g.edges().collect();
    let kw = format!("kw:{token}");
    let tok = format!("tok:{token}");
    let topics: BTreeSet<String> = edges
        .iter()
        .filter(|e| e.relation == Relation::TopicHasKeyword && e.tail == kw)
        .map(|e| e.head.clone())
        .collect();
    let mut closure = topics.clone();
    loop {
        let before = closure.len();
        for e in &edges {
            if e.relation == Relation::ChildOf && closure.contains(&e.tail) {
                closure.insert(e.head.clone());
            }
        }
        if closure.len() == before {
            break;
        }
    }
    let mut via_topics: BTreeMap<NodeKind, BTreeSet<String>> = BTreeMap::new();
    let mut via_bow: BTreeMap<NodeKind, BTreeSet<String>> = BTreeMap::new();
    for e in &edges {
        if e.relation == Relation::HasTopic && closure.contains(&e.tail) {
            via_topics.entry(kind_of(g, &e.head)).or_default().insert(e.head.clone());
        }
        if e.relation == Relation::MentionsToken && e.tail == tok {
            via_bow.entry(kind_of(g, &e.head)).or_default().insert(e.head.clone());
        }
    }
    (topics, via_topics, via_bow)
}

fn doc_kind(t: DocType) -> NodeKind {
    match t {
        DocType::Constitution => NodeKind::ConstitutionDoc,
        DocType::Statute => NodeKind::StatuteDoc,
        DocType::SupremeCase => NodeKind::SupremeCase,
        DocType::AppealsCase => NodeKind::AppealsCase,
        DocType::Generic => NodeKind::GenericDoc,
    }
}

/// Linear scan over the source documents.
pub fn bf_count_mentions(docs: &[Document], phrase: &str, kind: NodeKind) -> usize {
    let p = phrase.to_lowercase();
    docs.iter()
        .filter(|d| doc_kind(d.doc_type) == kind && d.text.to_lowercase().contains(&p))
        .count()
}

/// Hand tally of CITES targets over the flat edge list.
pub fn bf_common_citations(g: &Graph, docs: &[Document], phrase: &str, kind: NodeKind, top_n: usize) -> Vec<(String, usize)> {
    let p = phrase.to_lowercase();
    let heads: BTreeSet<String> = docs
        .iter()
        .filter(|d| doc_kind(d.doc_type) == kind && d.text.to_lowercase().contains(&p))
        .map(|d| format!("doc:{}", d.id))
        .collect();
    let mut tally: BTreeMap<String, usize> = BTreeMap::new();
    for e in g.edges() {
        if e.relation != Relation::Cites || !heads.contains(&e.head) {
            continue;
        }
        let n = g.nodes().find(|n| n.id == e.tail).unwrap();
        let key = n.attrs.get("key").or_else(|| n.attrs.get("citation_key")).unwrap().clone();
        *tally.entry(key).or_default() += 1;
    }
    let mut v: Vec<_> = tally.into_iter().collect();
    v.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    v.truncate(top_n);
    v
}

/// `(sentence, expected keys)` rows of the citation fixture.
pub fn citation_fixture() -> Vec<(String, Vec<String>)> {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/citations.tsv");
    let text = std::fs::read_to_string(path).unwrap();
    text.lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let (s, k) = l.split_once('\t').unwrap();
            (s.to_string(), k.split(" | ").map(str::to_string).collect())
        })
        .collect()
}

pub struct CaseLawCorpus {
    pub docs: Vec<Document>,
    pub labels: Vec<usize>,
    pub cases: Vec<lexigraph::eval::RetrievalCase>,
}

#[derive(Debug, Clone)]
pub struct CaseLawSpec {
    pub topics: usize,
    pub per_topic: usize,
    pub paragraphs: usize,
    pub paragraph_len: usize,
    /// Size of the holding-word pool shared by all topics.
    pub pool: usize,
    pub facts_per_doc: usize,
    pub fact_repeats: usize,
    pub question_facts: usize,
    pub question_topic_words: usize,
    /// Size of the procedural vocabulary shared by every document.
    pub boilerplate: usize,
    /// Share of procedural words in paragraphs other than the holding.
    pub boilerplate_share: f64,
    pub seed: u64,
}

impl Default for CaseLawSpec {
    fn default() -> Self {
        CaseLawSpec {
            topics: 5,
            per_topic: 100,
            paragraphs: 12,
            paragraph_len: 150,
            pool: 100,
            facts_per_doc: 10,
            fact_repeats: 2,
            question_facts: 4,
            question_topic_words: 2,
            boilerplate: 200,
            boilerplate_share: 0.7,
            seed: 7,
        }
    }
}

/// Long appellate-style documents over planted topic vocabularies. Each
/// document holds one holding paragraph with words from a pool shared by all
/// topics; its question repeats part of that paragraph plus common words of
/// its topic.
pub fn case_law_corpus(spec: &CaseLawSpec) -> CaseLawCorpus {
    use lexigraph::eval::{RetrievalCase, SourcePart};
    use lexigraph::synth::word;
    use rand::distributions::Distribution;
    const WPT: usize = 40;
    let topics = spec.topics;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let zipf: Vec<f64> = (0..WPT).map(|i| 1.0 / (i + 1) as f64).collect();
    let dist = rand::distributions::WeightedIndex::new(&zipf).unwrap();
    let bzipf: Vec<f64> = (0..spec.boilerplate.max(1)).map(|i| 1.0 / (i + 1) as f64).collect();
    let bdist = rand::distributions::WeightedIndex::new(&bzipf).unwrap();
    let mut docs = Vec::new();
    let mut labels = Vec::new();
    let mut cases = Vec::new();
    for t in 0..topics {
        for _ in 0..spec.per_topic {
            let holding_at = rng.gen_range(0..spec.paragraphs);
            let facts: Vec<String> = rand::seq::index::sample(&mut rng, spec.pool, spec.facts_per_doc)
                .into_iter()
                .map(|i| word(topics, i, spec.pool))
                .collect();
            let mut paras = Vec::new();
            for p in 0..spec.paragraphs {
                let mut words: Vec<String> = Vec::new();
                if p == holding_at {
                    for f in &facts {
                        words.extend(std::iter::repeat_n(f.clone(), spec.fact_repeats));
                    }
                }
                while words.len() < spec.paragraph_len {
                    if p != holding_at && spec.boilerplate > 0 && rng.gen::<f64>() < spec.boilerplate_share {
                        words.push(word(topics + 1, bdist.sample(&mut rng), spec.boilerplate));
                        continue;
                    }
                    let src = if rng.gen::<f64>() < 0.01 { rng.gen_range(0..topics) } else { t };
                    words.push(word(src, dist.sample(&mut rng), WPT));
                }
                words.shuffle(&mut rng);
                paras.push(words.join(" "));
            }
            let id = format!("case-{:04}", docs.len());
            let mut q: Vec<String> = facts[..spec.question_facts].to_vec();
            for _ in 0..spec.question_topic_words {
                q.push(word(t, dist.sample(&mut rng), WPT));
            }
            q.shuffle(&mut rng);
            cases.push(RetrievalCase {
                question: q.join(" "),
                gold_doc_id: id.clone(),
                gold_topic_id: None,
                source_part: SourcePart::CourtOfAppeals,
            });
            docs.push(Document::new(id, DocType::AppealsCase, paras.join("\n\n")));
            labels.push(t);
        }
    }
    CaseLawCorpus { docs, labels, cases }
}
