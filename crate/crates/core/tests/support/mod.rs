#![allow(dead_code)]

use std::collections::{BTreeMap, VecDeque};
use std::io::{Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use l2a_core::graph::InfoGraph;

/// One scripted behavior for the next incoming request. An empty script
/// echoes the request's prompt back as the completion content.
#[derive(Debug, Clone)]
pub enum Fault {
    Ok(String),
    Echo,
    Status(u16),
    Malformed,
    EmptyChoices,
    StallMs(u64),
}

/// Minimal chat-completions stand-in: accepts POSTs, pops one scripted
/// fault per request, and records every prompt it saw in arrival order.
pub struct StubServer {
    addr: SocketAddr,
    faults: Arc<Mutex<VecDeque<Fault>>>,
    hits: Arc<AtomicUsize>,
    prompts: Arc<Mutex<Vec<String>>>,
    shutdown: Arc<AtomicBool>,
    handle: Option<JoinHandle<()>>,
}

impl StubServer {
    pub fn start() -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").expect("bind stub server");
        let addr = listener.local_addr().expect("stub server addr");
        let faults: Arc<Mutex<VecDeque<Fault>>> = Arc::default();
        let hits: Arc<AtomicUsize> = Arc::default();
        let prompts: Arc<Mutex<Vec<String>>> = Arc::default();
        let shutdown: Arc<AtomicBool> = Arc::default();

        let handle = {
            let faults = Arc::clone(&faults);
            let hits = Arc::clone(&hits);
            let prompts = Arc::clone(&prompts);
            let shutdown = Arc::clone(&shutdown);
            thread::spawn(move || {
                for stream in listener.incoming() {
                    if shutdown.load(Ordering::SeqCst) {
                        break;
                    }
                    let Ok(stream) = stream else { continue };
                    let faults = Arc::clone(&faults);
                    let hits = Arc::clone(&hits);
                    let prompts = Arc::clone(&prompts);
                    thread::spawn(move || handle_connection(stream, &faults, &hits, &prompts));
                }
            })
        };

        StubServer { addr, faults, hits, prompts, shutdown, handle: Some(handle) }
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn script(&self, faults: impl IntoIterator<Item = Fault>) {
        self.faults.lock().unwrap().extend(faults);
    }

    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::SeqCst)
    }

    pub fn reset(&self) {
        self.hits.store(0, Ordering::SeqCst);
        self.prompts.lock().unwrap().clear();
        self.faults.lock().unwrap().clear();
    }

    pub fn pending_faults(&self) -> usize {
        self.faults.lock().unwrap().len()
    }

    pub fn prompts(&self) -> Vec<String> {
        self.prompts.lock().unwrap().clone()
    }
}

impl Drop for StubServer {
    fn drop(&mut self) {
        self.shutdown.store(true, Ordering::SeqCst);
        let _ = TcpStream::connect(self.addr);
        if let Some(handle) = self.handle.take() {
            let _ = handle.join();
        }
    }
}

fn handle_connection(
    mut stream: TcpStream,
    faults: &Mutex<VecDeque<Fault>>,
    hits: &AtomicUsize,
    prompts: &Mutex<Vec<String>>,
) {
    let _ = stream.set_read_timeout(Some(Duration::from_secs(5)));
    let Some(body) = read_request_body(&mut stream) else { return };

    let prompt = serde_json::from_slice::<serde_json::Value>(&body)
        .ok()
        .and_then(|v| v["messages"][0]["content"].as_str().map(String::from))
        .unwrap_or_default();
    hits.fetch_add(1, Ordering::SeqCst);
    prompts.lock().unwrap().push(prompt.clone());

    let fault = faults.lock().unwrap().pop_front().unwrap_or(Fault::Echo);
    let (status, body) = match fault {
        Fault::Ok(content) => (200, completion_body(&content)),
        Fault::Echo => (200, completion_body(&prompt)),
        Fault::Status(code) => (code, "{\"error\": \"scripted\"}".to_string()),
        Fault::Malformed => (200, "definitely not json".to_string()),
        Fault::EmptyChoices => (200, "{\"choices\": []}".to_string()),
        Fault::StallMs(ms) => {
            thread::sleep(Duration::from_millis(ms));
            (200, completion_body(&prompt))
        }
    };
    let reason = if status == 200 { "OK" } else { "Scripted" };
    let response = format!(
        "HTTP/1.1 {status} {reason}\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
        body.len()
    );
    let _ = stream.write_all(response.as_bytes());
}

fn completion_body(content: &str) -> String {
    serde_json::json!({
        "choices": [{"message": {"role": "assistant", "content": content}}]
    })
    .to_string()
}

fn read_request_body(stream: &mut TcpStream) -> Option<Vec<u8>> {
    let mut buf = Vec::new();
    let mut chunk = [0u8; 1024];
    let header_end = loop {
        if let Some(pos) = find_header_end(&buf) {
            break pos;
        }
        let n = stream.read(&mut chunk).ok()?;
        if n == 0 {
            return None;
        }
        buf.extend_from_slice(&chunk[..n]);
    };

    let headers = String::from_utf8_lossy(&buf[..header_end]).to_string();
    let content_length: usize = headers
        .lines()
        .find_map(|l| {
            let (name, value) = l.split_once(':')?;
            name.eq_ignore_ascii_case("content-length").then(|| value.trim().parse().ok())?
        })
        .unwrap_or(0);

    let body_start = header_end + 4;
    while buf.len() < body_start + content_length {
        let n = stream.read(&mut chunk).ok()?;
        if n == 0 {
            return None;
        }
        buf.extend_from_slice(&chunk[..n]);
    }
    Some(buf[body_start..body_start + content_length].to_vec())
}

fn find_header_end(buf: &[u8]) -> Option<usize> {
    buf.windows(4).position(|w| w == b"\r\n\r\n")
}

fn ids(names: &[&str]) -> Vec<String> {
    names.iter().map(|s| s.to_string()).collect()
}

/// Three required nodes in a strict dependency chain.
pub fn chain_graph() -> InfoGraph {
    InfoGraph::new(
        ids(&["a", "b", "c"]),
        "s".into(),
        ids(&["a", "b", "c"]),
        vec![("a".into(), "b".into()), ("b".into(), "c".into())],
        BTreeMap::new(),
    )
    .unwrap()
}

/// Diamond dependency DAG with one half-credit distractor.
pub fn diamond_graph() -> InfoGraph {
    InfoGraph::new(
        ids(&["top", "left", "right", "bottom", "noise"]),
        "s".into(),
        ids(&["top", "left", "right", "bottom"]),
        vec![
            ("top".into(), "left".into()),
            ("top".into(), "right".into()),
            ("left".into(), "bottom".into()),
            ("right".into(), "bottom".into()),
        ],
        BTreeMap::from([("noise".into(), 0.5)]),
    )
    .unwrap()
}

/// Five independent required nodes, no structure.
pub fn antichain_graph() -> InfoGraph {
    InfoGraph::new(
        ids(&["p", "q", "r", "t", "u"]),
        "s".into(),
        ids(&["p", "q", "r", "t", "u"]),
        vec![],
        BTreeMap::new(),
    )
    .unwrap()
}

/// One required node plus a zero-credit distractor.
pub fn single_graph() -> InfoGraph {
    InfoGraph::new(
        ids(&["only", "junk"]),
        "s".into(),
        ids(&["only"]),
        vec![],
        BTreeMap::from([("junk".into(), 0.0)]),
    )
    .unwrap()
}

/// Mixed partial order: two chained pairs and one free node, two distractors.
pub fn mixed_graph() -> InfoGraph {
    InfoGraph::new(
        ids(&["n1", "n2", "n3", "n4", "n5", "d1", "d2"]),
        "s".into(),
        ids(&["n1", "n2", "n3", "n4", "n5"]),
        vec![("n1".into(), "n2".into()), ("n3".into(), "n4".into())],
        BTreeMap::from([("d1".into(), 0.5), ("d2".into(), 0.0)]),
    )
    .unwrap()
}

/// Nothing required: the expert's only move is to stop immediately.
pub fn empty_graph() -> InfoGraph {
    InfoGraph::new(ids(&["x"]), "s".into(), vec![], vec![], BTreeMap::new()).unwrap()
}

/// The learning-curve environment: five required question nodes with one
/// dependency, one half-credit and one zero-credit distractor.
pub fn learning_graph() -> InfoGraph {
    InfoGraph::new(
        ids(&["q1", "q2", "q3", "q4", "q5", "d1", "d2"]),
        "s".into(),
        ids(&["q1", "q2", "q3", "q4", "q5"]),
        vec![("q1".into(), "q3".into())],
        BTreeMap::from([("d1".into(), 0.5), ("d2".into(), 0.0)]),
    )
    .unwrap()
}
