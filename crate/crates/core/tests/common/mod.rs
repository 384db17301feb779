#![allow(dead_code)]

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread;

use lockbox_probe::llm::EndpointConfig;

/// One canned HTTP reply.
#[derive(Clone)]
pub struct Reply {
    pub status: u16,
    pub body: String,
}

impl Reply {
    pub fn answer(content: &str) -> Self {
        let body = serde_json::json!({
            "choices": [{"message": {"role": "assistant", "content": content}}]
        });
        Self {
            status: 200,
            body: body.to_string(),
        }
    }

    pub fn status(status: u16) -> Self {
        Self {
            status,
            body: "{\"error\":\"mock\"}".into(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Received {
    pub path: String,
    pub authorization: Option<String>,
    pub body: serde_json::Value,
}

/// Minimal chat-completions endpoint on 127.0.0.1. Serves `script` in
/// order, then `fallback` forever. One request per connection.
pub struct MockEndpoint {
    pub base_url: String,
    pub received: Arc<Mutex<Vec<Received>>>,
}

impl MockEndpoint {
    pub fn start(script: Vec<Reply>, fallback: Reply) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").expect("bind mock endpoint");
        let addr = listener.local_addr().unwrap();
        let received = Arc::new(Mutex::new(Vec::new()));
        let log = Arc::clone(&received);
        thread::spawn(move || {
            let mut script = script.into_iter();
            for stream in listener.incoming() {
                let Ok(mut stream) = stream else { continue };
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut request_line = String::new();
                if reader.read_line(&mut request_line).unwrap_or(0) == 0 {
                    continue;
                }
                let path = request_line.split_whitespace().nth(1).unwrap_or("").to_string();
                let mut headers = HashMap::new();
                loop {
                    let mut line = String::new();
                    if reader.read_line(&mut line).unwrap_or(0) == 0 || line == "\r\n" {
                        break;
                    }
                    if let Some((k, v)) = line.split_once(':') {
                        headers.insert(k.trim().to_ascii_lowercase(), v.trim().to_string());
                    }
                }
                let len: usize = headers.get("content-length").and_then(|v| v.parse().ok()).unwrap_or(0);
                let mut body = vec![0; len];
                if reader.read_exact(&mut body).is_err() {
                    continue;
                }
                log.lock().unwrap().push(Received {
                    path,
                    authorization: headers.get("authorization").cloned(),
                    body: serde_json::from_slice(&body).unwrap_or(serde_json::Value::Null),
                });
                let reply = script.next().unwrap_or_else(|| fallback.clone());
                let response = format!(
                    "HTTP/1.1 {} Mock\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{}",
                    reply.status,
                    reply.body.len(),
                    reply.body
                );
                let _ = stream.write_all(response.as_bytes());
                let _ = stream.flush();
            }
        });
        Self {
            base_url: format!("http://{addr}/v1"),
            received,
        }
    }

    pub fn requests(&self) -> Vec<Received> {
        self.received.lock().unwrap().clone()
    }

    /// Endpoint config pointing here; the credential variable is set to a
    /// dummy value.
    pub fn endpoint(&self, key_env: &str, max_retries: u32) -> EndpointConfig {
        std::env::set_var(key_env, "test-key");
        EndpointConfig {
            base_url: self.base_url.clone(),
            model_name: "mock-model".into(),
            api_key_env: key_env.into(),
            timeout: 5.0,
            max_retries,
            backoff_ms: 1,
            extra: Default::default(),
        }
    }
}

/// Maximum loop coverage by exhaustive search: every set of pairwise
/// disjoint intervals of length >= 3 in which each distinct interval
/// content appears at least twice.
pub fn oracle_coverage<T: Eq + std::hash::Hash + Clone>(seq: &[T]) -> usize {
    fn go<T: Eq + std::hash::Hash + Clone>(seq: &[T], pos: usize, chosen: &mut Vec<(usize, usize)>, best: &mut usize) {
        if pos >= seq.len() {
            let mut counts: HashMap<&[T], usize> = HashMap::new();
            for &(s, e) in chosen.iter() {
                *counts.entry(&seq[s..e]).or_default() += 1;
            }
            if counts.values().all(|&c| c >= 2) {
                let covered = chosen.iter().map(|(s, e)| e - s).sum();
                *best = (*best).max(covered);
            }
            return;
        }
        go(seq, pos + 1, chosen, best);
        for end in pos + 3..=seq.len() {
            chosen.push((pos, end));
            go(seq, end, chosen, best);
            chosen.pop();
        }
    }
    let mut best = 0;
    go(seq, 0, &mut Vec::new(), &mut best);
    best
}
