#![allow(dead_code)]

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread;

use mmqo_core::cost::{Catalog, TableStats};
use mmqo_core::plan::{parse_plan, PlanNode};
use serde_json::Value;

pub fn table(rows: u64, cols: &[&str], unique: &[&str], images: &[&str]) -> TableStats {
    let s = |v: &[&str]| v.iter().map(|c| c.to_string()).collect();
    TableStats {
        row_count: rows,
        columns: s(cols),
        unique_columns: s(unique),
        image_columns: s(images),
    }
}

/// T: 1000 rows, U: 2000 rows, Table_3: images for the removal example.
pub fn fixture_catalog() -> Catalog {
    Catalog::new()
        .with_table("T", table(1000, &["id", "a", "b", "img"], &["id"], &["img"]))
        .with_table("U", table(2000, &["id", "c", "photo"], &["id"], &["photo"]))
        .with_table("Table_3", table(500, &["id", "col_3"], &["id"], &["col_3"]))
}

pub const CODE3_INITIAL: &str = r#"{"Operator":"Object Counting(table_3.col_3: how many men are there?: 2)","Left_child":{"Operator":"Object Detection(table_3.col_3: is there any man?)","Left_child":"Table_3","Right_child":null},"Right_child":null}"#;

pub const CODE3_OPTIMIZED: &str = r#"{"Operator":"Object Counting(table_3.col_3: how many men are there?: 2)","Left_child":"Table_3","Right_child":null}"#;

pub fn plan(text: &str) -> PlanNode {
    parse_plan(text).unwrap_or_else(|e| panic!("fixture does not parse: {e}\n{text}"))
}

/// Cost factors keyed by operator-name prefix, as the oracle reads them.
pub const ORACLE_FACTORS: [(&str, f64, f64); 4] = [
    ("select", 1.0, 0.5),
    ("join", 5.0, 0.8),
    ("object detection", 100.0, 0.6),
    ("object counting", 200.0, 0.3),
];

fn oracle_factors(op: &str) -> (f64, f64) {
    let lower = op.trim().to_ascii_lowercase();
    ORACLE_FACTORS
        .iter()
        .find(|(name, _, _)| lower.starts_with(name))
        .map(|&(_, r, a)| (r, a))
        .unwrap_or_else(|| panic!("oracle does not know operator {op:?}"))
}

/// Evaluates a plan document directly: returns (output rows, total cost).
/// Leaves are table names, looked up case-insensitively in `rows`.
pub fn oracle_eval(doc: &Value, rows: &HashMap<String, f64>) -> (f64, f64) {
    match doc {
        Value::String(t) => (rows[&t.to_ascii_lowercase()], 0.0),
        Value::Object(m) => {
            let op = m["Operator"].as_str().expect("operator text");
            if m["Left_child"].is_null() && m["Right_child"].is_null() {
                let lower = op.trim().to_ascii_lowercase();
                let name = lower
                    .strip_prefix("tablescan(")
                    .and_then(|r| r.strip_suffix(')'))
                    .unwrap_or(&lower);
                return (rows[name.trim()], 0.0);
            }
            let mut input = 0.0;
            let mut below = 0.0;
            for key in ["Left_child", "Right_child"] {
                if !m[key].is_null() {
                    let (r, c) = oracle_eval(&m[key], rows);
                    input += r;
                    below += c;
                }
            }
            let (rho, alpha) = oracle_factors(op);
            (alpha * input, below + rho * input)
        }
        other => panic!("unexpected plan node {other}"),
    }
}

pub fn row_map(catalog: &Catalog) -> HashMap<String, f64> {
    catalog
        .tables
        .iter()
        .map(|(k, t)| (k.to_ascii_lowercase(), t.row_count as f64))
        .collect()
}

/// OpenAI-style completion body carrying `content`.
pub fn chat_body(content: &str) -> String {
    serde_json::json!({
        "id": "mock",
        "choices": [{"index": 0, "message": {"role": "assistant", "content": content}}]
    })
    .to_string()
}

#[derive(Clone, Debug)]
pub struct RecordedRequest {
    pub path: String,
    pub headers: HashMap<String, String>,
    pub body: Value,
}

/// Minimal HTTP/1.1 server answering each request with the next scripted
/// (status, body) pair, and 503 once the script is used up.
pub struct MockServer {
    pub base: String,
    requests: Arc<Mutex<Vec<RecordedRequest>>>,
}

impl MockServer {
    pub fn start(script: Vec<(u16, String)>) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").expect("bind");
        let base = format!("http://{}", listener.local_addr().unwrap());
        let requests = Arc::new(Mutex::new(Vec::new()));
        let log = Arc::clone(&requests);
        thread::spawn(move || {
            let mut script = script.into_iter();
            for stream in listener.incoming() {
                let Ok(mut stream) = stream else { continue };
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut request_line = String::new();
                if reader.read_line(&mut request_line).is_err() {
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
                let _ = reader.read_exact(&mut body);
                log.lock().unwrap().push(RecordedRequest {
                    path,
                    headers,
                    body: serde_json::from_slice(&body).unwrap_or(Value::Null),
                });
                let (status, text) = script.next().unwrap_or((503, "script exhausted".into()));
                let reply = format!(
                    "HTTP/1.1 {status} Mock\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{text}",
                    text.len()
                );
                let _ = stream.write_all(reply.as_bytes());
                let _ = stream.flush();
            }
        });
        MockServer { base, requests }
    }

    pub fn url(&self) -> String {
        format!("{}/v1/chat/completions", self.base)
    }

    pub fn requests(&self) -> Vec<RecordedRequest> {
        self.requests.lock().unwrap().clone()
    }
}
pub mod mutate;
