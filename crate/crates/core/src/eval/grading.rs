use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::metrics::rouge_l;
use crate::error::{Error, Result};

const DEFAULT_PATTERNS: &str = include_str!("refusal_patterns.txt");

/// Phrases that mark a response as declining to answer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RefusalPatterns {
    patterns: Vec<String>,
}

fn fold(s: &str) -> String {
    s.replace(['\u{2019}', '\u{2018}'], "'").to_lowercase()
}

impl RefusalPatterns {
    pub fn parse(text: &str) -> Self {
        let patterns = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(fold)
            .collect();
        RefusalPatterns { patterns }
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(Self::parse(&text))
    }

    pub fn patterns(&self) -> &[String] {
        &self.patterns
    }

    pub fn matches(&self, response: &str) -> bool {
        let r = fold(response);
        self.patterns.iter().any(|p| r.contains(p.as_str()))
    }
}

impl Default for RefusalPatterns {
    fn default() -> Self {
        Self::parse(DEFAULT_PATTERNS)
    }
}

/// One graded response. `accuracy` is 0 to 3; `external_scores` carries
/// scores from outside scorers keyed by name, each in [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub question: String,
    pub reference: String,
    pub response: String,
    #[serde(default = "one")]
    pub attempted: u8,
    pub accuracy: u8,
    #[serde(default)]
    pub rouge_l: f64,
    #[serde(default)]
    pub external_scores: BTreeMap<String, f64>,
    /// Keep `attempted` even when the response matches a refusal pattern.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub keep_attempt: bool,
}

fn one() -> u8 {
    1
}

/// Validate the scale, mark pattern-matched refusals as unattempted with
/// accuracy 0 and fill in ROUGE-L.
pub fn grade(mut r: EvalRecord, patterns: &RefusalPatterns) -> Result<EvalRecord> {
    let what = |m: String| Error::Validation(format!("{:?}: {m}", r.question));
    if r.accuracy > 3 {
        return Err(what(format!("accuracy {} is outside 0..=3", r.accuracy)));
    }
    if r.attempted > 1 {
        return Err(what(format!("attempted {} is not 0 or 1", r.attempted)));
    }
    if r.attempted == 0 && r.accuracy != 0 {
        return Err(what(format!("unattempted answer has accuracy {}", r.accuracy)));
    }
    if let Some((k, v)) = r.external_scores.iter().find(|(_, v)| !(0.0..=1.0).contains(*v)) {
        return Err(what(format!("external score {k} = {v} is outside [0, 1]")));
    }
    if !r.keep_attempt && patterns.matches(&r.response) {
        r.attempted = 0;
        r.accuracy = 0;
    }
    r.rouge_l = rouge_l(&r.reference, &r.response);
    Ok(r)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerReport {
    pub records: usize,
    /// Percentage of attempted responses.
    pub attempt_rate: f64,
    pub mean_accuracy: f64,
    pub mean_rouge_l: f64,
    pub mean_external: BTreeMap<String, f64>,
}

pub fn summarize(records: &[EvalRecord]) -> Result<AnswerReport> {
    if records.is_empty() {
        return Err(Error::param("no records to summarize"));
    }
    let n = records.len() as f64;
    let mut ext: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for r in records {
        for (k, v) in &r.external_scores {
            let e = ext.entry(k.clone()).or_insert((0.0, 0));
            e.0 += v;
            e.1 += 1;
        }
    }
    Ok(AnswerReport {
        records: records.len(),
        attempt_rate: 100.0 * records.iter().filter(|r| r.attempted == 1).count() as f64 / n,
        mean_accuracy: records.iter().map(|r| r.accuracy as f64).sum::<f64>() / n,
        mean_rouge_l: records.iter().map(|r| r.rouge_l).sum::<f64>() / n,
        mean_external: ext.into_iter().map(|(k, (s, c))| (k, s / c as f64)).collect(),
    })
}

pub fn read_records(path: impl AsRef<Path>) -> Result<Vec<EvalRecord>> {
    read_jsonl(path)
}

pub fn write_records(path: impl AsRef<Path>, records: &[EvalRecord]) -> Result<()> {
    write_jsonl(path, records)
}

/// Merge a sidecar of `{question: {scorer: value}}` into records by question.
pub fn attach_external_scores(
    records: &mut [EvalRecord],
    sidecar: &BTreeMap<String, BTreeMap<String, f64>>,
) -> Result<()> {
    for (q, scores) in sidecar {
        let mut found = false;
        for r in records.iter_mut().filter(|r| &r.question == q) {
            r.external_scores.extend(scores.iter().map(|(k, v)| (k.clone(), *v)));
            found = true;
        }
        if !found {
            return Err(Error::Data(format!("external scores for unknown question {q:?}")));
        }
    }
    Ok(())
}

pub(crate) fn read_jsonl<T: serde::de::DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    let path = path.as_ref();
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let v = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            message: format!("{}: {e}", path.display()),
        })?;
        out.push(v);
    }
    Ok(out)
}

pub(crate) fn write_jsonl<T: Serialize>(path: impl AsRef<Path>, items: &[T]) -> Result<()> {
    let path = path.as_ref();
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
    for it in items {
        serde_json::to_writer(&mut f, it)?;
        f.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    f.flush().map_err(|e| Error::io(path, e))
}
