use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::{Arc, Mutex};

const BIN: &str = env!("CARGO_BIN_EXE_lexigraph");

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn run(args: &[&str], out: &Path) -> Output {
    Command::new(BIN)
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str], out: &Path) -> String {
    let o = run(args, out);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{args:?}\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&o.stdout),
        String::from_utf8_lossy(&o.stderr)
    );
    String::from_utf8(o.stdout).unwrap()
}

fn cfg() -> String {
    fixture("mini.toml").to_string_lossy().into_owned()
}

/// ingest, decompose, kg build and index the mini corpus into `out`.
fn pipeline(out: &Path) {
    let c = cfg();
    let corpus = fixture("mini_corpus.jsonl");
    ok(&["ingest", "--config", &c, "--corpus", corpus.to_str().unwrap()], out);
    ok(&["decompose", "--config", &c], out);
    ok(&["kg", "build", "--config", &c], out);
    ok(&["index", "--config", &c], out);
}

#[test]
fn decompose_two_docs_gives_flat_hierarchy() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("two.jsonl");
    std::fs::write(
        &corpus,
        "{\"id\":\"a\",\"doc_type\":\"statute\",\"text\":\"water rights irrigation ditch water rights\"}\n\
         {\"id\":\"b\",\"doc_type\":\"statute\",\"text\":\"habeas corpus petition prisoner habeas corpus\"}\n",
    )
    .unwrap();
    let out = dir.path().join("out");
    ok(&["decompose", "--corpus", corpus.to_str().unwrap(), "--min-cluster", "100"], &out);
    let h: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("hierarchy.json")).unwrap()).unwrap();
    let roots = h["roots"].as_array().unwrap();
    assert!(!roots.is_empty());
    for r in roots {
        assert_eq!(r["depth"], 0);
        assert!(r["children"].as_array().is_none_or(|c| c.is_empty()));
    }
    let m: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("manifests/decompose.json")).unwrap()).unwrap();
    assert_eq!(m["config"]["hierarchy"]["min_cluster_size"], 100);
    assert_eq!(m["seed"], 42);
    assert_eq!(m["exit_code"], 0);
}

#[test]
fn usage_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["ask", "--question", "q", "--no-such-flag"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
    let o = run(&["frobnicate"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    // missing artifact
    let o = run(&["kg", "query", "--keyword", "water"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    // routed strategy without a hierarchy
    let corpus = fixture("mini_corpus.jsonl");
    let o = run(
        &["index", "--corpus", corpus.to_str().unwrap(), "--strategy", "topic_routed"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(1));
    // help is not an error
    assert_eq!(run(&["--help"], dir.path()).status.code(), Some(0));
}

#[test]
fn data_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.jsonl");
    std::fs::write(&bad, "{\"id\":\"a\",\"doc_type\":\"statute\",\"text\":\"x\"}\nnot json\n").unwrap();
    let o = run(&["ingest", "--corpus", bad.to_str().unwrap()], &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 2"));
    let m = std::fs::read_to_string(dir.path().join("out/manifests/ingest.json")).unwrap();
    assert!(m.contains("\"exit_code\": 2"));

    let records = dir.path().join("r.jsonl");
    std::fs::write(&records, "{\"question\":\"q\",\"reference\":\"r\",\"response\":\"s\",\"attempted\":0,\"accuracy\":2}\n")
        .unwrap();
    let o = run(&["eval", "answers", "--records", records.to_str().unwrap()], &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn pipeline_answers_from_graph() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    pipeline(out);
    let c = cfg();
    let q = ok(
        &["kg", "query", "--config", &c, "--count-mentions", "habeas corpus", "--kind", "supreme_case"],
        out,
    );
    let v: serde_json::Value = serde_json::from_str(&q).unwrap();
    assert_eq!(v["result"], 2);
    let a = ok(
        &[
            "ask",
            "--config",
            &c,
            "--json",
            "--question",
            "How many New Mexico Supreme Court cases mention `Habeas Corpus'?",
        ],
        out,
    );
    let v: serde_json::Value = serde_json::from_str(&a).unwrap();
    assert_eq!(v["text"], "There are 2 Supreme Court cases that mention 'Habeas Corpus'.");
    assert_eq!(v["mode"], "quantitative");
    let files = ok(&["kg", "export", "--config", &c, "--format", "cypher"], out);
    assert!(files.trim_end().ends_with("graph.cypher"));
    let cypher = std::fs::read_to_string(out.join("export/graph.cypher")).unwrap();
    assert!(cypher.contains("MERGE"));
}

#[test]
fn ask_is_byte_identical_across_runs() {
    let q = "What happens to a bill if the governor neither returns it within three days nor signs it?";
    let mut answers = Vec::new();
    let mut manifests = Vec::new();
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        pipeline(d.path());
        answers.push(ok(&["ask", "--config", &cfg(), "--json", "--question", q], d.path()));
        manifests.push(std::fs::read(d.path().join("manifests/ask.json")).unwrap());
    }
    assert_eq!(answers[0], answers[1]);
    assert_eq!(manifests[0], manifests[1]);
    let v: serde_json::Value = serde_json::from_str(&answers[0]).unwrap();
    assert_eq!(v["mode"], "semantic");
    // echo chat returns the prompt, which lists the retrieved sources
    let first = v["sources"][0]["id"].as_str().unwrap();
    assert!(v["text"].as_str().unwrap().contains(&format!("[{first}]")));
}

#[test]
fn sessions_carry_prior_turns() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    pipeline(out);
    let c = cfg();
    ok(&["ask", "--config", &c, "--session", "s1", "--question", "Who must sign a bill passed by the legislature?"], out);
    let second = ok(
        &["ask", "--config", &c, "--session", "s1", "--json", "--question", "What if the governor does not return it?"],
        out,
    );
    let v: serde_json::Value = serde_json::from_str(&second).unwrap();
    assert!(v["text"].as_str().unwrap().contains("User: Who must sign a bill passed by the legislature?"));
    let s: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("sessions/s1.json")).unwrap()).unwrap();
    assert_eq!(s["turns"].as_array().unwrap().len(), 2);
    let o = run(&["ask", "--config", &c, "--session", "../x", "--question", "q"], out);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn offline_chat_degrades_with_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    pipeline(out);
    // no config: chat provider defaults to offline
    let o = run(
        &["ask", "--question", "What happens to a bill the governor does not sign?"],
        out,
    );
    assert_eq!(o.status.code(), Some(3));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("sources:"), "{stdout}");
    assert!(stdout.contains("const-4-22#"));
}

#[test]
fn commands_do_not_touch_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("corpus.jsonl");
    std::fs::copy(fixture("mini_corpus.jsonl"), &src).unwrap();
    let before = std::fs::read(&src).unwrap();
    let out = dir.path().join("out");
    let c = cfg();
    ok(&["decompose", "--config", &c, "--corpus", src.to_str().unwrap()], &out);
    ok(&["index", "--config", &c, "--corpus", src.to_str().unwrap()], &out);
    assert_eq!(std::fs::read(&src).unwrap(), before);
    let names: Vec<String> = std::fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    assert_eq!(names.len(), 2, "{names:?}");
}

#[test]
fn eval_commands_write_reports() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    pipeline(out);
    let c = cfg();
    let cases = out.join("cases.jsonl");
    std::fs::write(
        &cases,
        "{\"question\":\"writ of habeas corpus suspended rebellion\",\"gold_doc_id\":\"const-2-7\",\"source_part\":\"constitution\"}\n\
         {\"question\":\"limitations period malpractice three years\",\"gold_doc_id\":\"nmsa-41-5-13\",\"source_part\":\"statutes\"}\n",
    )
    .unwrap();
    let csv = ok(&["eval", "retrieval", "--config", &c, "--cases", cases.to_str().unwrap()], out);
    assert!(csv.starts_with("strategy,part,cases,mrr,hit_at_10\n"));
    assert_eq!(csv.lines().count(), 1 + 4 * 2);
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("eval/retrieval.json")).unwrap()).unwrap();
    assert_eq!(report["strategies"].as_array().unwrap().len(), 4);

    let records = out.join("records.jsonl");
    std::fs::write(
        &records,
        "{\"question\":\"q1\",\"reference\":\"There are 215 cases\",\"response\":\"There are 215 cases\",\"accuracy\":3}\n\
         {\"question\":\"q2\",\"reference\":\"x\",\"response\":\"I don't have access to court databases\",\"accuracy\":1}\n",
    )
    .unwrap();
    let side = out.join("external.json");
    std::fs::write(&side, r#"{"q1": {"summac": 0.75}}"#).unwrap();
    let s = ok(
        &["eval", "answers", "--records", records.to_str().unwrap(), "--external", side.to_str().unwrap()],
        out,
    );
    let v: serde_json::Value = serde_json::from_str(&s).unwrap();
    assert_eq!(v["attempt_rate"], 50.0);
    assert_eq!(v["mean_accuracy"], 1.5);
    assert_eq!(v["mean_external"]["summac"], 0.75);
}

struct Mock {
    url: String,
    requests: Arc<Mutex<Vec<(String, String)>>>,
}

/// Serves `reply` to every POST; records (authorization header, body).
fn mock_server(reply: &'static str) -> Mock {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
    let requests = Arc::new(Mutex::new(Vec::new()));
    let log = requests.clone();
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { break };
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut auth = String::new();
            let mut len = 0;
            loop {
                let mut line = String::new();
                if reader.read_line(&mut line).unwrap_or(0) == 0 || line == "\r\n" {
                    break;
                }
                let lower = line.to_ascii_lowercase();
                if let Some(v) = lower.strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap_or(0);
                }
                if lower.starts_with("authorization:") {
                    auth = line["authorization:".len()..].trim().to_string();
                }
            }
            let mut body = vec![0; len];
            let _ = reader.read_exact(&mut body);
            log.lock().unwrap().push((auth, String::from_utf8_lossy(&body).into_owned()));
            let _ = write!(
                stream,
                "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{}",
                reply.len(),
                reply
            );
        }
    });
    Mock { url, requests }
}

#[test]
fn http_chat_through_config_keeps_key_out_of_manifest() {
    let mock = mock_server(r#"{"choices":[{"message":{"role":"assistant","content":"It becomes law [const-4-22#1]."}}]}"#);
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    pipeline(&out);
    let conf = dir.path().join("http.toml");
    let base = std::fs::read_to_string(fixture("mini.toml")).unwrap();
    let conf_text = base.replace(
        "[chat]\nprovider = \"echo\"",
        &format!(
            "[chat]\nprovider = \"http\"\nendpoint = \"${{LEXIGRAPH_MOCK_URL}}\"\nmodel = \"test-model\"\napi_key_env = \"LEXIGRAPH_MOCK_KEY\""
        ),
    );
    assert_ne!(conf_text, base);
    std::fs::write(&conf, conf_text).unwrap();
    let o = Command::new(BIN)
        .args(["ask", "--config", conf.to_str().unwrap(), "--json", "--question", "What happens to an unsigned bill?"])
        .arg("--out")
        .arg(&out)
        .env("LEXIGRAPH_MOCK_URL", &mock.url)
        .env("LEXIGRAPH_MOCK_KEY", "sk-very-secret")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["text"], "It becomes law [const-4-22#1].");
    let reqs = mock.requests.lock().unwrap();
    assert_eq!(reqs.len(), 1);
    assert_eq!(reqs[0].0, "Bearer sk-very-secret");
    let body: serde_json::Value = serde_json::from_str(&reqs[0].1).unwrap();
    assert_eq!(body["model"], "test-model");
    assert_eq!(body["messages"][0]["role"], "system");
    assert!(body["messages"][1]["content"].as_str().unwrap().contains("Question: What happens to an unsigned bill?"));
    let manifest = std::fs::read_to_string(out.join("manifests/ask.json")).unwrap();
    assert!(!manifest.contains("sk-very-secret"));
    assert!(!manifest.contains(&mock.url));
    assert!(manifest.contains("${LEXIGRAPH_MOCK_URL}"));
    assert!(manifest.contains("LEXIGRAPH_MOCK_KEY"));
}

#[test]
fn unreachable_chat_endpoint_exits_3() {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    drop(listener);
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    pipeline(&out);
    let conf = dir.path().join("dead.toml");
    let base = std::fs::read_to_string(fixture("mini.toml")).unwrap();
    std::fs::write(
        &conf,
        base.replace(
            "[chat]\nprovider = \"echo\"",
            &format!("[chat]\nprovider = \"http\"\nendpoint = \"http://{addr}/v1\"\nmodel = \"m\"\ntimeout_secs = 5"),
        ),
    )
    .unwrap();
    let o = run(&["ask", "--config", conf.to_str().unwrap(), "--question", "What happens to an unsigned bill?"], &out);
    assert_eq!(o.status.code(), Some(3));
}
