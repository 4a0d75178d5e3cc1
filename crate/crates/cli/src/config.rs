use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use lexigraph::hnmfk::HierarchyConfig;
use lexigraph::rag::AnswerConfig;
use lexigraph::vstore::{BuildOptions, ChunkConfig, ChunkUnit};
use once_cell::sync::Lazy;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    /// Raw JSONL corpus or an ingested corpus file.
    pub corpus: Option<PathBuf>,
    pub out: PathBuf,
    pub seed: u64,
    pub ingest: IngestSection,
    pub hierarchy: HierarchySection,
    pub kg: KgSection,
    pub embedding: EmbeddingSection,
    pub chat: ChatSection,
    pub chunking: ChunkingSection,
    pub index: IndexSection,
    pub answer: AnswerSection,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            corpus: None,
            out: PathBuf::from("lexigraph-out"),
            seed: 42,
            ingest: IngestSection::default(),
            hierarchy: HierarchySection::default(),
            kg: KgSection::default(),
            embedding: EmbeddingSection::default(),
            chat: ChatSection::default(),
            chunking: ChunkingSection::default(),
            index: IndexSection::default(),
            answer: AnswerSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestSection {
    pub title_in_text: bool,
}

impl Default for IngestSection {
    fn default() -> Self {
        IngestSection { title_in_text: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HierarchySection {
    pub max_depth: usize,
    pub min_cluster_size: usize,
    pub keywords_per_topic: usize,
    pub vocab_min_df: usize,
    pub vocab_max_df_ratio: f64,
    pub k_min: usize,
    pub k_max: usize,
    pub n_perturbations: usize,
    pub noise_epsilon: f64,
    pub silhouette_threshold: f64,
}

impl Default for HierarchySection {
    fn default() -> Self {
        let h = HierarchyConfig::default();
        HierarchySection {
            max_depth: h.max_depth,
            min_cluster_size: h.min_cluster_size,
            keywords_per_topic: h.keywords_per_topic,
            vocab_min_df: h.vocab_min_df,
            vocab_max_df_ratio: h.vocab_max_df_ratio,
            k_min: h.nmfk.k_min,
            k_max: h.nmfk.k_max,
            n_perturbations: h.nmfk.n_perturbations,
            noise_epsilon: h.nmfk.noise_epsilon,
            silhouette_threshold: h.nmfk.silhouette_threshold,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Extractor {
    Regex,
    Llm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KgSection {
    pub extractor: Extractor,
    pub vocab_min_df: usize,
    pub vocab_max_df_ratio: f64,
}

impl Default for KgSection {
    fn default() -> Self {
        let h = HierarchyConfig::default();
        KgSection {
            extractor: Extractor::Regex,
            vocab_min_df: h.vocab_min_df,
            vocab_max_df_ratio: h.vocab_max_df_ratio,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingKind {
    Deterministic,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingSection {
    pub provider: EmbeddingKind,
    pub dim: usize,
    pub endpoint: Option<String>,
    pub model: Option<String>,
    /// Name of the environment variable holding the API key.
    pub api_key_env: Option<String>,
    pub timeout_secs: u64,
    pub batch_size: usize,
    pub max_retries: usize,
}

impl Default for EmbeddingSection {
    fn default() -> Self {
        let b = BuildOptions::default();
        EmbeddingSection {
            provider: EmbeddingKind::Deterministic,
            dim: 256,
            endpoint: None,
            model: None,
            api_key_env: None,
            timeout_secs: 60,
            batch_size: b.batch_size,
            max_retries: b.max_retries,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChatKind {
    /// Every call fails; semantic answers come back degraded with sources.
    Offline,
    /// Returns the user prompt unchanged.
    Echo,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChatSection {
    pub provider: ChatKind,
    pub endpoint: Option<String>,
    pub model: Option<String>,
    pub api_key_env: Option<String>,
    pub timeout_secs: u64,
}

impl Default for ChatSection {
    fn default() -> Self {
        ChatSection {
            provider: ChatKind::Offline,
            endpoint: None,
            model: None,
            api_key_env: None,
            timeout_secs: 120,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChunkingSection {
    pub unit: ChunkUnit,
    pub size: usize,
    pub overlap: usize,
}

impl Default for ChunkingSection {
    fn default() -> Self {
        let c = ChunkConfig::default();
        ChunkingSection {
            unit: c.unit,
            size: c.size,
            overlap: c.overlap,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IndexSection {
    pub strategy: lexigraph::eval::Strategy,
}

impl Default for IndexSection {
    fn default() -> Self {
        IndexSection {
            strategy: lexigraph::eval::Strategy::TopicRoutedChunked,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnswerSection {
    pub top_k: usize,
    pub score_floor: f64,
    pub top_n_citations: usize,
}

impl Default for AnswerSection {
    fn default() -> Self {
        let a = AnswerConfig::default();
        AnswerSection {
            top_k: a.top_k,
            score_floor: a.score_floor,
            top_n_citations: a.top_n_citations,
        }
    }
}

/// A config as written (placeholders intact) and as resolved.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub written: Config,
    pub resolved: Config,
    /// Environment variables substituted into the resolved config.
    pub env_vars: BTreeSet<String>,
}

static VAR: Lazy<Regex> = Lazy::new(|| Regex::new(r"\$\{([A-Za-z_][A-Za-z0-9_]*)\}").unwrap());

fn interpolate(v: &mut toml::Value, used: &mut BTreeSet<String>) -> Result<(), CliError> {
    match v {
        toml::Value::String(s) => {
            let mut missing = None;
            let out = VAR.replace_all(s, |c: &regex::Captures| {
                used.insert(c[1].to_string());
                std::env::var(&c[1]).unwrap_or_else(|_| {
                    missing = Some(c[1].to_string());
                    String::new()
                })
            });
            if let Some(m) = missing {
                return Err(CliError::Usage(format!("config references unset environment variable {m}")));
            }
            *s = out.into_owned();
        }
        toml::Value::Array(a) => a.iter_mut().try_for_each(|x| interpolate(x, used))?,
        toml::Value::Table(t) => t.iter_mut().try_for_each(|(_, x)| interpolate(x, used))?,
        _ => {}
    }
    Ok(())
}

pub fn parse(text: &str) -> Result<LoadedConfig, CliError> {
    let raw: toml::Value = toml::from_str(text).map_err(|e| CliError::Usage(format!("config: {e}")))?;
    let written: Config = raw
        .clone()
        .try_into()
        .map_err(|e: toml::de::Error| CliError::Usage(format!("config: {e}")))?;
    let mut value = raw;
    let mut env_vars = BTreeSet::new();
    interpolate(&mut value, &mut env_vars)?;
    let resolved: Config = value
        .try_into()
        .map_err(|e: toml::de::Error| CliError::Usage(format!("config: {e}")))?;
    Ok(LoadedConfig {
        written,
        resolved,
        env_vars,
    })
}

pub fn load(path: Option<&Path>) -> Result<LoadedConfig, CliError> {
    match path {
        None => Ok(LoadedConfig {
            written: Config::default(),
            resolved: Config::default(),
            env_vars: BTreeSet::new(),
        }),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", p.display())))?;
            parse(&text)
        }
    }
}

impl Config {
    pub fn validate(&self) -> Result<(), CliError> {
        let e = &self.embedding;
        match e.provider {
            EmbeddingKind::Deterministic => {
                if e.endpoint.is_some() || e.model.is_some() || e.api_key_env.is_some() {
                    return Err(CliError::Usage(
                        "the deterministic embedding provider takes no endpoint, model or api_key_env".into(),
                    ));
                }
            }
            EmbeddingKind::Http => {
                if e.endpoint.is_none() || e.model.is_none() {
                    return Err(CliError::Usage("the http embedding provider needs endpoint and model".into()));
                }
            }
        }
        if e.dim == 0 {
            return Err(CliError::Usage("embedding.dim must be at least 1".into()));
        }
        let c = &self.chat;
        if c.provider == ChatKind::Http && (c.endpoint.is_none() || c.model.is_none()) {
            return Err(CliError::Usage("the http chat client needs endpoint and model".into()));
        }
        if c.provider != ChatKind::Http && (c.endpoint.is_some() || c.model.is_some() || c.api_key_env.is_some()) {
            return Err(CliError::Usage(format!("chat provider {:?} takes no network settings", c.provider)));
        }
        self.hierarchy_config().validate()?;
        if self.chunking.size == 0 || self.chunking.overlap >= self.chunking.size {
            return Err(CliError::Usage("chunking needs size >= 1 and overlap < size".into()));
        }
        if self.answer.top_k == 0 {
            return Err(CliError::Usage("answer.top_k must be at least 1".into()));
        }
        Ok(())
    }

    pub fn hierarchy_config(&self) -> HierarchyConfig {
        let h = &self.hierarchy;
        let mut cfg = HierarchyConfig {
            max_depth: h.max_depth,
            min_cluster_size: h.min_cluster_size,
            keywords_per_topic: h.keywords_per_topic,
            vocab_min_df: h.vocab_min_df,
            vocab_max_df_ratio: h.vocab_max_df_ratio,
            ..HierarchyConfig::default()
        };
        cfg.nmfk.k_min = h.k_min;
        cfg.nmfk.k_max = h.k_max;
        cfg.nmfk.n_perturbations = h.n_perturbations;
        cfg.nmfk.noise_epsilon = h.noise_epsilon;
        cfg.nmfk.silhouette_threshold = h.silhouette_threshold;
        cfg.nmfk.base_seed = self.seed;
        cfg
    }

    pub fn chunk_config(&self) -> ChunkConfig {
        ChunkConfig {
            unit: self.chunking.unit,
            size: self.chunking.size,
            overlap: self.chunking.overlap,
        }
    }

    pub fn build_options(&self) -> BuildOptions {
        BuildOptions {
            batch_size: self.embedding.batch_size,
            max_retries: self.embedding.max_retries,
            ..BuildOptions::default()
        }
    }

    pub fn answer_config(&self, topic: Option<String>) -> AnswerConfig {
        AnswerConfig {
            top_k: self.answer.top_k,
            score_floor: self.answer.score_floor,
            top_n_citations: self.answer.top_n_citations,
            topic,
        }
    }
}
