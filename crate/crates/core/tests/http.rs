use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use lexigraph::corpus::{DocType, Document};
use lexigraph::rag::{ChatClient, HttpChatClient};
use lexigraph::vstore::{build_index_with, chunk_document, BuildOptions, ChunkUnit, EmbeddingProvider, HttpEmbeddingProvider};
use lexigraph::Error;
use serde_json::{json, Value};

struct Request {
    auth: Option<String>,
    body: Value,
}

type Handler = dyn Fn(usize, &Value) -> (u16, String) + Send + Sync;

/// Local HTTP server answering each POST with `handler(call_number, body)`.
fn serve(handler: Box<Handler>) -> (String, Arc<Mutex<Vec<Request>>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1/endpoint", listener.local_addr().unwrap());
    let log = Arc::new(Mutex::new(Vec::new()));
    let seen = log.clone();
    std::thread::spawn(move || {
        for (call, stream) in listener.incoming().enumerate() {
            let Ok(mut stream) = stream else { break };
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let (mut len, mut auth) = (0, None);
            loop {
                let mut line = String::new();
                if reader.read_line(&mut line).unwrap_or(0) == 0 || line == "\r\n" {
                    break;
                }
                if let Some((name, value)) = line.split_once(':') {
                    match name.to_ascii_lowercase().as_str() {
                        "content-length" => len = value.trim().parse().unwrap_or(0),
                        "authorization" => auth = Some(value.trim().to_string()),
                        _ => {}
                    }
                }
            }
            let mut body = vec![0; len];
            let _ = reader.read_exact(&mut body);
            let body: Value = serde_json::from_slice(&body).unwrap_or(Value::Null);
            let (status, reply) = handler(call, &body);
            seen.lock().unwrap().push(Request { auth, body });
            let _ = write!(
                stream,
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{reply}",
                reply.len()
            );
        }
    });
    (url, log)
}

fn fake_vector(text: &str, dim: usize) -> Vec<f64> {
    (0..dim).map(|i| (text.len() + i) as f64).collect()
}

#[test]
fn embeddings_follow_the_response_index() {
    let (url, log) = serve(Box::new(|_, body| {
        let inputs = body["input"].as_array().unwrap();
        // answer in reverse order; the index field says where each belongs
        let data: Vec<Value> = inputs
            .iter()
            .enumerate()
            .rev()
            .map(|(i, t)| json!({"index": i, "embedding": fake_vector(t.as_str().unwrap(), 3)}))
            .collect();
        (200, json!({"data": data}).to_string())
    }));
    let p = HttpEmbeddingProvider::new(url, "embed-small", Some("k-123".into()), 3);
    let texts = vec!["a".to_string(), "bbb".to_string(), "cc".to_string()];
    let v = p.embed(&texts).unwrap();
    assert_eq!(v, vec![fake_vector("a", 3), fake_vector("bbb", 3), fake_vector("cc", 3)]);
    assert_eq!(p.id(), "http:embed-small");
    let log = log.lock().unwrap();
    assert_eq!(log[0].auth.as_deref(), Some("Bearer k-123"));
    assert_eq!(log[0].body["model"], "embed-small");
    assert_eq!(log[0].body["input"], json!(["a", "bbb", "cc"]));
}

#[test]
fn malformed_embedding_responses_are_transport_errors() {
    let replies = [
        (200, r#"{"data": [{"index": 0, "embedding": [1, 2]}]}"#),
        (200, r#"{"data": []}"#),
        (200, r#"{"nothing": 1}"#),
        (200, "not json"),
        (503, r#"{"error": "overloaded"}"#),
        (200, r#"{"data": [{"index": 5, "embedding": [1, 2, 3]}]}"#),
    ];
    for (status, reply) in replies {
        let (url, _) = serve(Box::new(move |_, _| (status, reply.to_string())));
        let p = HttpEmbeddingProvider::new(url, "m", None, 3);
        match p.embed(&["x".to_string()]) {
            Err(Error::Transport(_)) => {}
            other => panic!("{reply}: {other:?}"),
        }
    }
}

#[test]
fn failed_batches_are_retried_in_order() {
    let (url, log) = serve(Box::new(|call, body| {
        if call == 0 {
            return (500, "{}".into());
        }
        let data: Vec<Value> = body["input"]
            .as_array()
            .unwrap()
            .iter()
            .enumerate()
            .map(|(i, t)| json!({"index": i, "embedding": fake_vector(t.as_str().unwrap(), 2)}))
            .collect();
        (200, json!({"data": data}).to_string())
    }));
    let p = HttpEmbeddingProvider::new(url, "m", None, 2);
    let d = Document::new("d", DocType::AppealsCase, "one two three four five six seven");
    let chunks = chunk_document(&d, ChunkUnit::Words, 2, 0).unwrap();
    let opts = BuildOptions {
        batch_size: 10,
        max_retries: 2,
        backoff: Duration::from_millis(1),
    };
    let (idx, stats) = build_index_with(chunks.clone(), &p, None, &opts).unwrap();
    assert_eq!(stats.retries, 1);
    assert_eq!(idx.len(), chunks.len());
    for (c, v) in idx.chunks().iter().zip(idx.vectors()) {
        assert_eq!(v, &fake_vector(&c.text, 2));
    }
    assert_eq!(log.lock().unwrap().len(), 2);

    let (dead, _) = serve(Box::new(|_, _| (500, "{}".into())));
    let p = HttpEmbeddingProvider::new(dead, "m", None, 2);
    match build_index_with(chunks, &p, None, &opts) {
        Err(e @ Error::EmbeddingBatch { .. }) => assert!(e.is_external()),
        other => panic!("{other:?}"),
    }
}

#[test]
fn chat_round_trip() {
    let (url, log) = serve(Box::new(|_, _| {
        (200, r#"{"choices": [{"message": {"role": "assistant", "content": "It becomes law."}}]}"#.into())
    }));
    let c = HttpChatClient::new(url, "chat-model", Some("secret".into()));
    assert_eq!(c.complete("system text", "user text").unwrap(), "It becomes law.");
    let log = log.lock().unwrap();
    let r = &log[0];
    assert_eq!(r.auth.as_deref(), Some("Bearer secret"));
    assert_eq!(r.body["model"], "chat-model");
    assert_eq!(r.body["messages"][0], json!({"role": "system", "content": "system text"}));
    assert_eq!(r.body["messages"][1], json!({"role": "user", "content": "user text"}));
    assert!(!format!("{c:?}").contains("secret"));
}

#[test]
fn chat_failures_are_transport_errors() {
    for (status, reply) in [(200, r#"{"choices": []}"#), (401, r#"{"error": "bad key"}"#), (200, "<html>")] {
        let (url, _) = serve(Box::new(move |_, _| (status, reply.to_string())));
        let c = HttpChatClient::new(url, "m", None);
        match c.complete("s", "u") {
            Err(e @ Error::Transport(_)) => assert!(e.is_external()),
            other => panic!("{reply}: {other:?}"),
        }
    }
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    drop(listener);
    let c = HttpChatClient::new(format!("http://{addr}/v1"), "m", None).with_timeout(Duration::from_secs(2));
    assert!(matches!(c.complete("s", "u"), Err(Error::Transport(_))));
}
