use std::collections::BTreeMap;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::time::Duration;

use lexigraph::corpus::{build_vocabulary, ingest_jsonl_with, read_corpus, write_corpus, Document, IngestOptions};
use lexigraph::eval::{
    attach_external_scores, grade, read_cases, read_records, run_retrieval_report, summarize, write_records,
    EvalOptions, RefusalPatterns, Strategy,
};
use lexigraph::hnmfk::{decompose, label_topics, Hierarchy};
use lexigraph::kg::{build_graph, extract_citations_llm, extract_citations_regex, ExportFormat, Graph, NodeKind};
use lexigraph::rag::{
    answer, follow_up, ChatClient, EchoChat, GroundedAnswer, HttpChatClient, OfflineChat, RagContext, Session,
};
use lexigraph::vstore::{
    build_corpus_index, build_topic_indexes, load_indexes, save_indexes, EmbeddingProvider, HashProvider,
    HttpEmbeddingProvider,
};
use lexigraph::Error;

use crate::config::{self, ChatKind, Config, EmbeddingKind, Extractor};
use crate::manifest::{self, RunManifest};
use crate::{
    AskArgs, Cli, CliError, Command, DecomposeArgs, EvalAnswersArgs, EvalCommand, EvalRetrievalArgs, IndexArgs,
    IngestArgs, KgBuildArgs, KgCommand, KgExportArgs, KgQueryArgs,
};

pub const CORPUS_FILE: &str = "corpus.lxc";
pub const HIERARCHY_FILE: &str = "hierarchy.json";
pub const SIZES_FILE: &str = "hierarchy_sizes.csv";
pub const GRAPH_DIR: &str = "graph";
pub const EXPORT_DIR: &str = "export";
pub const INDEX_DIR: &str = "index";
pub const SESSION_DIR: &str = "sessions";
pub const ANSWER_FILE: &str = "answer.json";
pub const EVAL_DIR: &str = "eval";

type Result<T> = std::result::Result<T, CliError>;

struct Run {
    cfg: Config,
    out: PathBuf,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
}

impl Run {
    fn input(&mut self, p: &Path) -> Result<PathBuf> {
        if !p.exists() {
            return Err(CliError::Usage(format!("{} does not exist", p.display())));
        }
        self.inputs.push(p.to_path_buf());
        Ok(p.to_path_buf())
    }

    fn output(&mut self, rel: &str) -> Result<PathBuf> {
        let p = self.out.join(rel);
        if let Some(parent) = p.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        self.outputs.push(p.clone());
        Ok(p)
    }

    fn write(&mut self, rel: &str, body: &str) -> Result<PathBuf> {
        let p = self.output(rel)?;
        std::fs::write(&p, body).map_err(|e| Error::io(&p, e))?;
        Ok(p)
    }

    fn corpus(&mut self, flag: Option<&Path>) -> Result<Vec<Document>> {
        let ingested = self.out.join(CORPUS_FILE);
        let p = match (flag, &self.cfg.corpus) {
            (Some(p), _) => p.to_path_buf(),
            (None, _) if ingested.exists() => ingested,
            (None, Some(p)) => p.clone(),
            (None, None) => {
                return Err(CliError::Usage(
                    "no corpus: pass --corpus, set `corpus` in the config, or run `ingest` first".into(),
                ))
            }
        };
        let p = self.input(&p)?;
        load_corpus(&p, self.cfg.ingest.title_in_text)
    }

    fn artifact(&mut self, flag: Option<&Path>, default: &str, what: &str, producer: &str) -> Result<PathBuf> {
        match flag {
            Some(p) => self.input(p),
            None => {
                let p = self.out.join(default);
                if !p.exists() {
                    return Err(CliError::Usage(format!(
                        "no {what}: pass its path or run `{producer}` first (looked for {})",
                        p.display()
                    )));
                }
                self.input(&p)
            }
        }
    }

    fn hierarchy(&mut self, flag: Option<&Path>) -> Result<Hierarchy> {
        let p = self.artifact(flag, HIERARCHY_FILE, "hierarchy", "decompose")?;
        Ok(Hierarchy::read_json(p)?)
    }

    fn graph(&mut self, flag: Option<&Path>) -> Result<Graph> {
        let p = self.artifact(flag, GRAPH_DIR, "graph", "kg build")?;
        Ok(Graph::import(p)?)
    }
}

fn load_corpus(p: &Path, title_in_text: bool) -> Result<Vec<Document>> {
    let mut magic = [0u8; 4];
    let is_binary = std::fs::File::open(p)
        .and_then(|mut f| f.read_exact(&mut magic))
        .map(|_| &magic == b"LXCP")
        .unwrap_or(false);
    if is_binary {
        Ok(read_corpus(p)?)
    } else {
        Ok(ingest_jsonl_with(p, &IngestOptions { title_in_text })?)
    }
}

fn api_key(var: &Option<String>) -> Result<Option<String>> {
    match var {
        None => Ok(None),
        Some(v) => std::env::var(v)
            .map(Some)
            .map_err(|_| CliError::Usage(format!("environment variable {v} is not set"))),
    }
}

fn provider(cfg: &Config) -> Result<Box<dyn EmbeddingProvider>> {
    let e = &cfg.embedding;
    Ok(match e.provider {
        EmbeddingKind::Deterministic => Box::new(HashProvider::new(e.dim)?),
        EmbeddingKind::Http => Box::new(
            HttpEmbeddingProvider::new(
                e.endpoint.clone().unwrap_or_default(),
                e.model.clone().unwrap_or_default(),
                api_key(&e.api_key_env)?,
                e.dim,
            )
            .with_timeout(Duration::from_secs(e.timeout_secs)),
        ),
    })
}

fn chat(cfg: &Config) -> Result<Box<dyn ChatClient>> {
    let c = &cfg.chat;
    Ok(match c.provider {
        ChatKind::Offline => Box::new(OfflineChat),
        ChatKind::Echo => Box::new(EchoChat),
        ChatKind::Http => Box::new(
            HttpChatClient::new(
                c.endpoint.clone().unwrap_or_default(),
                c.model.clone().unwrap_or_default(),
                api_key(&c.api_key_env)?,
            )
            .with_timeout(Duration::from_secs(c.timeout_secs)),
        ),
    })
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Ingest(_) => "ingest",
        Command::Decompose(_) => "decompose",
        Command::Kg(KgCommand::Build(_)) => "kg build",
        Command::Kg(KgCommand::Query(_)) => "kg query",
        Command::Kg(KgCommand::Export(_)) => "kg export",
        Command::Index(_) => "index",
        Command::Ask(_) => "ask",
        Command::Eval(EvalCommand::Retrieval(_)) => "eval retrieval",
        Command::Eval(EvalCommand::Answers(_)) => "eval answers",
    }
}

fn apply_overrides(cfg: &mut Config, cli: &Cli) {
    if let Some(s) = cli.global.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.global.out {
        cfg.out = o.clone();
    }
    if let Command::Decompose(d) = &cli.command {
        if let Some(v) = d.max_depth {
            cfg.hierarchy.max_depth = v;
        }
        if let Some(v) = d.min_cluster {
            cfg.hierarchy.min_cluster_size = v;
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let mut loaded = config::load(cli.global.config.as_deref())?;
    apply_overrides(&mut loaded.written, &cli);
    apply_overrides(&mut loaded.resolved, &cli);
    loaded.resolved.validate()?;
    let out = loaded.resolved.out.clone();
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;

    let mut run = Run {
        cfg: loaded.resolved.clone(),
        out: out.clone(),
        inputs: cli.global.config.iter().cloned().collect(),
        outputs: Vec::new(),
    };
    let result = match &cli.command {
        Command::Ingest(a) => ingest(&mut run, a),
        Command::Decompose(a) => decompose_cmd(&mut run, a),
        Command::Kg(KgCommand::Build(a)) => kg_build(&mut run, a),
        Command::Kg(KgCommand::Query(a)) => kg_query(&mut run, a),
        Command::Kg(KgCommand::Export(a)) => kg_export(&mut run, a),
        Command::Index(a) => index(&mut run, a),
        Command::Ask(a) => ask(&mut run, a),
        Command::Eval(EvalCommand::Retrieval(a)) => eval_retrieval(&mut run, a),
        Command::Eval(EvalCommand::Answers(a)) => eval_answers(&mut run, a),
    };

    // the output directory is where the manifest lives, not part of the run
    let mut recorded = loaded.written.clone();
    recorded.out = PathBuf::new();
    let m = RunManifest {
        command: command_name(&cli.command).to_string(),
        arguments: serde_json::to_value(&cli.command).map_err(Error::from)?,
        config_hash: manifest::config_hash(&recorded),
        config: recorded,
        env_vars: loaded.env_vars.clone(),
        seed: loaded.resolved.seed,
        versions: manifest::versions(),
        inputs: manifest::digests(&run.inputs, Some(&out))?,
        outputs: manifest::digests(&run.outputs, Some(&out))?,
        exit_code: result.as_ref().err().map_or(0, CliError::exit_code),
    };
    m.write(&out)?;
    result
}

fn ingest(run: &mut Run, a: &IngestArgs) -> Result<()> {
    let src = match (&a.corpus, &run.cfg.corpus) {
        (Some(p), _) | (None, Some(p)) => p.clone(),
        (None, None) => return Err(CliError::Usage("ingest needs --corpus or `corpus` in the config".into())),
    };
    let src = run.input(&src)?;
    let docs = load_corpus(&src, run.cfg.ingest.title_in_text)?;
    let dst = run.output(CORPUS_FILE)?;
    write_corpus(&dst, &docs)?;
    let mut by_type: BTreeMap<&str, usize> = BTreeMap::new();
    for d in &docs {
        *by_type.entry(d.doc_type.as_str()).or_insert(0) += 1;
    }
    println!("ingested {} documents into {}", docs.len(), dst.display());
    for (t, n) in by_type {
        println!("  {t}: {n}");
    }
    Ok(())
}

fn decompose_cmd(run: &mut Run, a: &DecomposeArgs) -> Result<()> {
    let docs = run.corpus(a.corpus.as_deref())?;
    let mut h = decompose(&docs, &run.cfg.hierarchy_config())?;
    if a.label {
        let c = chat(&run.cfg)?;
        let (labelled, warnings) = label_topics(&h, c.as_ref(), false);
        for w in warnings {
            log::warn!("{w}");
        }
        h = labelled;
    }
    run.write(HIERARCHY_FILE, &h.to_json()?)?;
    run.write(SIZES_FILE, &h.sizes_csv()?)?;
    let nodes = h.nodes();
    println!(
        "{} documents, {} root topics, {} nodes, {} leaves",
        docs.len(),
        h.roots.len(),
        nodes.len(),
        h.leaves().len()
    );
    for f in &h.flags {
        println!("flag: {f}");
    }
    Ok(())
}

fn kg_build(run: &mut Run, a: &KgBuildArgs) -> Result<()> {
    let docs = run.corpus(a.corpus.as_deref())?;
    let h = run.hierarchy(a.hierarchy.as_deref())?;
    let mut citations = BTreeMap::new();
    match run.cfg.kg.extractor {
        Extractor::Regex => {
            for d in &docs {
                citations.insert(d.id.clone(), extract_citations_regex(&d.text));
            }
        }
        Extractor::Llm => {
            let c = chat(&run.cfg)?;
            for d in &docs {
                let (cits, warnings) = extract_citations_llm(&d.text, c.as_ref());
                for w in warnings {
                    log::warn!("{}: {w}", d.id);
                }
                citations.insert(d.id.clone(), cits);
            }
        }
    }
    let mut hc = run.cfg.hierarchy_config();
    hc.vocab_min_df = run.cfg.kg.vocab_min_df;
    let vocab = build_vocabulary(&docs, hc.node_min_df(docs.len()), run.cfg.kg.vocab_max_df_ratio)?;
    let g = build_graph(&docs, &h, &citations, &vocab)?;
    let dir = run.output(GRAPH_DIR)?;
    if dir.exists() {
        std::fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    g.export(ExportFormat::TripletCsv, &dir)?;
    println!("{} nodes, {} edges", g.node_count(), g.edge_count());
    for (k, n) in g.count_by_kind() {
        println!("  {k}: {n}");
    }
    Ok(())
}

fn kg_query(run: &mut Run, a: &KgQueryArgs) -> Result<()> {
    let g = run.graph(a.graph.as_deref())?;
    let kind: NodeKind = a.kind.parse()?;
    let value = if let Some(t) = &a.keyword {
        serde_json::json!({
            "query": "keyword_neighborhood",
            "keyword": t,
            "result": g.keyword_neighborhood(t),
        })
    } else if let Some(p) = &a.count_mentions {
        serde_json::json!({
            "query": "count_mentions",
            "phrase": p,
            "kind": kind,
            "result": g.count_mentions(p, kind)?,
        })
    } else if let Some(p) = &a.common_citations {
        let rows: Vec<_> = g
            .common_citations(p, kind, a.top_n)?
            .into_iter()
            .map(|(key, count)| serde_json::json!({"citation": key, "count": count}))
            .collect();
        serde_json::json!({
            "query": "common_citations",
            "phrase": p,
            "kind": kind,
            "result": rows,
        })
    } else {
        return Err(CliError::Usage("choose one of --keyword, --count-mentions, --common-citations".into()));
    };
    println!("{}", serde_json::to_string_pretty(&value).map_err(Error::from)?);
    Ok(())
}

fn kg_export(run: &mut Run, a: &KgExportArgs) -> Result<()> {
    let g = run.graph(a.graph.as_deref())?;
    let format: ExportFormat = a.format.parse()?;
    let dir = run.output(EXPORT_DIR)?;
    for p in g.export(format, &dir)? {
        println!("{}", p.display());
    }
    Ok(())
}

fn index(run: &mut Run, a: &IndexArgs) -> Result<()> {
    let strategy: Strategy = match &a.strategy {
        Some(s) => s.parse()?,
        None => run.cfg.index.strategy,
    };
    let docs = run.corpus(a.corpus.as_deref())?;
    let p = provider(&run.cfg)?;
    let chunking = strategy.chunking(run.cfg.chunk_config());
    let opts = run.cfg.build_options();
    let indexes = if strategy.is_routed() {
        let h = run.hierarchy(a.hierarchy.as_deref())?;
        build_topic_indexes(&docs, &h, chunking, p.as_ref(), &opts)?
    } else {
        build_corpus_index(&docs, chunking, p.as_ref(), &opts)?
    };
    let dir = run.output(INDEX_DIR)?;
    if dir.exists() {
        std::fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    save_indexes(&dir, &indexes)?;
    let entries: usize = indexes.values().map(|i| i.len()).sum();
    println!("{strategy}: {} indexes, {entries} entries, provider {}", indexes.len(), p.id());
    Ok(())
}

fn print_answer(a: &GroundedAnswer, json: bool) -> Result<()> {
    if json {
        println!("{}", serde_json::to_string_pretty(a).map_err(Error::from)?);
        return Ok(());
    }
    println!("{}", a.text);
    if let Some(t) = &a.routed_topic {
        println!("\ntopic: {t}");
    }
    if !a.sources.is_empty() {
        println!("\nsources:");
        for s in &a.sources {
            let excerpt: String = s.excerpt.chars().take(100).collect();
            match s.score {
                Some(score) => println!("  [{}] ({score:.3}) {excerpt}", s.id),
                None => println!("  [{}] {excerpt}", s.id),
            }
        }
    }
    if !a.kg_facts.is_empty() {
        println!("\ngraph facts:");
        for f in &a.kg_facts {
            println!("  {} = {}", f.query, f.value);
        }
    }
    Ok(())
}

fn ask(run: &mut Run, a: &AskArgs) -> Result<()> {
    let g = run.graph(a.graph.as_deref())?;
    let dir = run.artifact(a.index.as_deref(), INDEX_DIR, "index", "index")?;
    let indexes = load_indexes(&dir)?;
    if indexes.is_empty() {
        return Err(CliError::Core(Error::Data(format!("no indexes in {}", dir.display()))));
    }
    let p = provider(&run.cfg)?;
    let c = chat(&run.cfg)?;
    let ctx = RagContext {
        graph: &g,
        indexes: &indexes,
        provider: p.as_ref(),
        chat: c.as_ref(),
        config: run.cfg.answer_config(a.topic.clone()),
    };
    let result = match &a.session {
        None => answer(&a.question, &ctx),
        Some(id) => {
            if id.is_empty() || !id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') {
                return Err(CliError::Usage(format!("session id {id:?} must be letters, digits, - or _")));
            }
            let rel = format!("{SESSION_DIR}/{id}.json");
            let path = run.out.join(&rel);
            let mut session = if path.exists() {
                run.inputs.push(path.clone());
                let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
                serde_json::from_str(&text).map_err(Error::from)?
            } else {
                Session::new(id.clone())
            };
            let r = follow_up(&a.question, &mut session, &ctx);
            if r.is_ok() {
                run.write(&rel, &serde_json::to_string_pretty(&session).map_err(Error::from)?)?;
            }
            r
        }
    };
    match result {
        Ok(ans) => {
            run.write(ANSWER_FILE, &serde_json::to_string_pretty(&ans).map_err(Error::from)?)?;
            print_answer(&ans, a.json)
        }
        Err(Error::DegradedAnswer { message, answer }) => {
            run.write(ANSWER_FILE, &serde_json::to_string_pretty(&answer).map_err(Error::from)?)?;
            eprintln!("chat model unavailable; returning retrieved sources only");
            print_answer(&answer, a.json)?;
            Err(CliError::Core(Error::DegradedAnswer { message, answer }))
        }
        Err(e) => Err(e.into()),
    }
}

fn eval_retrieval(run: &mut Run, a: &EvalRetrievalArgs) -> Result<()> {
    let strategies: Vec<Strategy> = if a.strategy == "all" {
        Strategy::ALL.to_vec()
    } else {
        vec![a.strategy.parse()?]
    };
    let cases_path = run.input(&a.cases)?;
    let cases = read_cases(&cases_path)?;
    let docs = run.corpus(a.corpus.as_deref())?;
    let needs_h = strategies.iter().any(|s| s.is_routed());
    let h = match (&a.hierarchy, needs_h) {
        (Some(p), _) => Some(run.hierarchy(Some(p))?),
        (None, true) if run.out.join(HIERARCHY_FILE).exists() => Some(run.hierarchy(None)?),
        _ => None,
    };
    let p = provider(&run.cfg)?;
    let opts = EvalOptions {
        chunk: run.cfg.chunk_config(),
        build: run.cfg.build_options(),
    };
    let mut report = run_retrieval_report(&cases, &docs, h.as_ref(), p.as_ref(), &strategies, &opts)?;
    report.metadata.insert("seed".into(), run.cfg.seed.to_string());
    report.metadata.insert("documents".into(), docs.len().to_string());
    run.write(&format!("{EVAL_DIR}/retrieval.json"), &report.to_json()?)?;
    let csv = report.to_csv()?;
    run.write(&format!("{EVAL_DIR}/retrieval.csv"), &csv)?;
    print!("{csv}");
    Ok(())
}

fn eval_answers(run: &mut Run, a: &EvalAnswersArgs) -> Result<()> {
    let path = run.input(&a.records)?;
    let mut records = read_records(&path)?;
    let patterns = match &a.refusal_patterns {
        Some(p) => RefusalPatterns::read(run.input(p)?)?,
        None => RefusalPatterns::default(),
    };
    if let Some(p) = &a.external {
        let p = run.input(p)?;
        let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        let sidecar: BTreeMap<String, BTreeMap<String, f64>> = serde_json::from_str(&text).map_err(Error::from)?;
        attach_external_scores(&mut records, &sidecar)?;
    }
    let graded = records
        .into_iter()
        .map(|r| grade(r, &patterns))
        .collect::<lexigraph::Result<Vec<_>>>()?;
    let summary = summarize(&graded)?;
    let out = run.output(&format!("{EVAL_DIR}/answers.jsonl"))?;
    write_records(&out, &graded)?;
    let body = serde_json::to_string_pretty(&summary).map_err(Error::from)?;
    run.write(&format!("{EVAL_DIR}/answers_summary.json"), &body)?;
    println!("{body}");
    Ok(())
}
