//! Legal citation extraction: deterministic patterns plus an optional chat model.

use std::collections::HashSet;

use once_cell::sync::Lazy;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::rag::ChatClient;

pub const EXTRACTION_SYSTEM_PROMPT: &str = "You are an expert legal document analyzer. Your job is to find all references to the Constitution, Case Law, or Statutes in the text.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CitationKind {
    NmsaStatute,
    NmCase,
    ConstitutionClause,
    Rule,
    Other,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CitationSource {
    Regex,
    Llm,
    /// Pattern extraction used after the chat model failed or gave no list.
    RegexFallback,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Citation {
    pub raw: String,
    pub kind: CitationKind,
    /// Normalized key, e.g. `NMSA 41-5-1` or `SMITH V. SOUTH (1955)`.
    pub key: String,
    /// Other normalized keys naming the same authority, e.g. a neutral citation.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub alt_keys: Vec<String>,
    #[serde(default)]
    pub resolved_node: Option<String>,
    pub source: CitationSource,
}

impl Citation {
    fn new(raw: &str, kind: CitationKind, key: String) -> Self {
        Citation {
            raw: raw.trim().to_string(),
            kind,
            key,
            alt_keys: Vec::new(),
            resolved_node: None,
            source: CitationSource::Regex,
        }
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        std::iter::once(self.key.as_str()).chain(self.alt_keys.iter().map(String::as_str))
    }
}

/// Uppercase, collapse whitespace, and write every `Section`/`Sec.` as `§`.
pub fn normalize_key(raw: &str) -> String {
    static SECTION: Lazy<Regex> = Lazy::new(|| Regex::new(r"(?i)\b(?:sections?|secs?\.)(\s|$)").unwrap());
    let s = SECTION.replace_all(raw.trim(), "§$1");
    s.split_whitespace().collect::<Vec<_>>().join(" ").to_uppercase()
}

const SECTION_NUM: &str = r"\d+[A-Z]?-\d+[A-Z]?-\d+(?:\.\d+)?";

static NMSA_LEADING: Lazy<Regex> = Lazy::new(|| {
    Regex::new(&format!(
        r"NMSA(?:\s*1978)?\s*,?\s*(?:§+|[Ss]ections?|[Ss]ecs?\.)?\s*((?:{n})(?:\s*(?:,|and|or|to|through)\s*(?:§+\s*)?(?:{n}))*)",
        n = SECTION_NUM
    ))
    .unwrap()
});

static NMSA_TRAILING: Lazy<Regex> = Lazy::new(|| {
    Regex::new(&format!(
        r"(?:§+|\b[Ss]ections?|\b[Ss]ecs?\.)\s*((?:{n})(?:\s*(?:,|and|or|to|through)\s*(?:§+\s*)?(?:{n}))*)(?:\s*\([^)]*\))*\s*,?\s*(?:of\s+the\s+)?NMSA",
        n = SECTION_NUM
    ))
    .unwrap()
});

static NMSA_BARE: Lazy<Regex> = Lazy::new(|| Regex::new(&format!(r"§+\s*({SECTION_NUM})")).unwrap());

static SECTION_ITEM: Lazy<Regex> = Lazy::new(|| Regex::new(SECTION_NUM).unwrap());

const PARTY: &str = r"[A-Z][A-Za-z0-9'&.\-]*(?:,\s(?:Inc|Ltd|LLC|Co|Corp)\.?)?(?:\s+(?:of|the|and|de|del|la|ex\s+rel\.|&|[A-Z][A-Za-z0-9'&.\-]*(?:,\s(?:Inc|Ltd|LLC|Co|Corp)\.?)?))*";

static CASE: Lazy<Regex> = Lazy::new(|| {
    Regex::new(&format!(
        r"({p})\s+v\.\s+({p})(?:,\s*(?P<nyear>\d{{4}})-(?P<court>NMSC|NMCA|NMCERT)-(?P<num>\d{{1,3}})\b|,\s*\d+\s+[A-Z][A-Za-z.]*(?:\s*(?:App\.|2d|3d))?\s+\d+(?:,\s*\d+)?\s*\([^)]*?(?P<ryear>\d{{4}})\)|,\s*(?P<year>(?:1[89]|20)\d{{2}})\b|\s*\((?P<pyear>(?:1[89]|20)\d{{2}})\))",
        p = PARTY
    ))
    .unwrap()
});

static NEUTRAL: Lazy<Regex> = Lazy::new(|| Regex::new(r"\b(\d{4})-(NMSC|NMCA|NMCERT)-(\d{1,3})\b").unwrap());

static CONST_NM: Lazy<Regex> = Lazy::new(|| {
    Regex::new(r"(?:N\.\s?M\.\s+Const\.\s+)?\b(?i:art(?:icle|\.)?)\s+([IVXL]+)\s*,?\s*(?:§+|(?i:sections?|sec\.))\s*(\d+[A-Z]?)").unwrap()
});

static CONST_US: Lazy<Regex> = Lazy::new(|| {
    Regex::new(r"U\.\s?S\.\s+Const\.\s+(amend\.|art\.)\s+([IVXL]+)(?:\s*,\s*§\s*(\d+))?").unwrap()
});

static RULE: Lazy<Regex> = Lazy::new(|| Regex::new(r"\bRule\s+(\d{1,2}-\d{3}(?:\.\d+)?)(?:\s+NMRA)?").unwrap());

/// Words that open a sentence and are not part of a party name.
const LEADING_WORDS: &[&str] = &[
    "In", "See", "Also", "Cf.", "Citing", "Under", "And", "But", "As", "Accord", "Per", "From", "Following",
    "Compare", "Contra", "The", "Precedents:", "E.g.,",
];

fn strip_leading(name: &str) -> &str {
    let mut s = name.trim();
    loop {
        let Some((first, rest)) = s.split_once(char::is_whitespace) else {
            return s;
        };
        if LEADING_WORDS.contains(&first) {
            s = rest.trim_start();
        } else {
            return s;
        }
    }
}

struct Found {
    start: usize,
    end: usize,
    citations: Vec<Citation>,
}

fn nmsa_list(raw: &str, list: &str) -> Vec<Citation> {
    SECTION_ITEM
        .find_iter(list)
        .map(|m| Citation::new(raw, CitationKind::NmsaStatute, format!("NMSA {}", m.as_str())))
        .collect()
}

/// Pattern-based extraction, deduplicated by key in order of first occurrence.
pub fn extract_citations_regex(text: &str) -> Vec<Citation> {
    let mut found: Vec<Found> = Vec::new();
    let taken = |found: &[Found], s: usize, e: usize| found.iter().any(|f| s < f.end && f.start < e);

    for c in CASE.captures_iter(text) {
        let m = c.get(0).unwrap();
        let left_full = c.get(1).unwrap();
        let left = strip_leading(left_full.as_str());
        let start = left_full.end() - left.len();
        let right = c.get(2).unwrap().as_str().trim_end_matches(',');
        let year = ["nyear", "ryear", "year", "pyear"]
            .iter()
            .find_map(|g| c.name(g))
            .unwrap()
            .as_str();
        let raw = &text[start..m.end()];
        let mut cit = Citation::new(
            raw,
            CitationKind::NmCase,
            normalize_key(&format!("{left} v. {right} ({year})")),
        );
        if let (Some(court), Some(num)) = (c.name("court"), c.name("num")) {
            cit.alt_keys.push(format!("{year}-{}-{}", court.as_str(), num.as_str()));
        }
        found.push(Found {
            start,
            end: m.end(),
            citations: vec![cit],
        });
    }
    for c in NEUTRAL.captures_iter(text) {
        let m = c.get(0).unwrap();
        if taken(&found, m.start(), m.end()) {
            continue;
        }
        let key = format!("{}-{}-{}", &c[1], &c[2], &c[3]);
        found.push(Found {
            start: m.start(),
            end: m.end(),
            citations: vec![Citation::new(m.as_str(), CitationKind::NmCase, key)],
        });
    }
    for re in [&*NMSA_LEADING, &*NMSA_TRAILING, &*NMSA_BARE] {
        for c in re.captures_iter(text) {
            let m = c.get(0).unwrap();
            if taken(&found, m.start(), m.end()) {
                continue;
            }
            found.push(Found {
                start: m.start(),
                end: m.end(),
                citations: nmsa_list(m.as_str(), &c[1]),
            });
        }
    }
    for c in CONST_US.captures_iter(text) {
        let m = c.get(0).unwrap();
        if taken(&found, m.start(), m.end()) {
            continue;
        }
        let mut key = format!("U.S. CONST. {} {}", c[1].to_uppercase(), &c[2]);
        if let Some(sec) = c.get(3) {
            key.push_str(&format!(", § {}", sec.as_str()));
        }
        found.push(Found {
            start: m.start(),
            end: m.end(),
            citations: vec![Citation::new(m.as_str(), CitationKind::Other, key)],
        });
    }
    for c in CONST_NM.captures_iter(text) {
        let m = c.get(0).unwrap();
        if taken(&found, m.start(), m.end()) {
            continue;
        }
        let key = format!("N.M. CONST. ART. {}, § {}", &c[1], c[2].to_uppercase());
        found.push(Found {
            start: m.start(),
            end: m.end(),
            citations: vec![Citation::new(m.as_str(), CitationKind::ConstitutionClause, key)],
        });
    }
    for c in RULE.captures_iter(text) {
        let m = c.get(0).unwrap();
        if taken(&found, m.start(), m.end()) {
            continue;
        }
        found.push(Found {
            start: m.start(),
            end: m.end(),
            citations: vec![Citation::new(m.as_str(), CitationKind::Rule, format!("RULE {}", &c[1]))],
        });
    }

    found.sort_by_key(|f| f.start);
    let mut seen = HashSet::new();
    found
        .into_iter()
        .flat_map(|f| f.citations)
        .filter(|c| seen.insert(c.key.clone()))
        .collect()
}

static LIST_ITEM: Lazy<Regex> = Lazy::new(|| Regex::new(r"^\s*(?:\d+[.)]|[-*•])\s+(.+?)\s*$").unwrap());

/// Items of an enumerated or bulleted list, `None` when the reply has none.
fn parse_list(reply: &str) -> Option<Vec<String>> {
    let items: Vec<String> = reply
        .lines()
        .filter_map(|l| LIST_ITEM.captures(l))
        .map(|c| c[1].replace("**", ""))
        .collect();
    (!items.is_empty()).then_some(items)
}

/// Extraction through a chat model. Each list item of the reply is keyed with
/// the pattern extractor when it matches, and kept as an `Other` citation
/// otherwise. A transport error or a reply without a list falls back to
/// pattern extraction over `text`; the reason is returned as a warning.
pub fn extract_citations_llm(text: &str, chat: &dyn ChatClient) -> (Vec<Citation>, Vec<String>) {
    let fallback = |warning: String| {
        let mut out = extract_citations_regex(text);
        for c in &mut out {
            c.source = CitationSource::RegexFallback;
        }
        (out, vec![warning])
    };
    let reply = match chat.complete(EXTRACTION_SYSTEM_PROMPT, text) {
        Ok(r) => r,
        Err(e) => return fallback(format!("citation extraction fell back to patterns: {e}")),
    };
    let Some(items) = parse_list(&reply) else {
        return fallback("citation extraction fell back to patterns: reply has no list".into());
    };
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for item in items {
        let mut cits = extract_citations_regex(&item);
        if cits.is_empty() {
            let key = normalize_key(item.trim_end_matches('.'));
            if key.is_empty() {
                continue;
            }
            cits.push(Citation::new(&item, CitationKind::Other, key));
        }
        for mut c in cits {
            c.source = CitationSource::Llm;
            if seen.insert(c.key.clone()) {
                out.push(c);
            }
        }
    }
    (out, Vec::new())
}
