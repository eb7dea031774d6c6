//! Golden transcripts: recorded request/response pairs any backend must reproduce.
//!
//! File format is NDJSON. The first line is `{"handshake": {...}}`; each further
//! line is `{"request": {...}, "response": {...}}`. On replay, results are
//! compared structurally with numbers equal to within [`FLOAT_TOLERANCE`];
//! errors compare by code only, since messages are free text.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::client::RpcClient;
use super::protocol::{BackendRequest, BackendResponse, Handshake};
use super::server::BackendSet;

pub const FLOAT_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Exchange {
    pub request: BackendRequest,
    pub response: BackendResponse,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Transcript {
    pub handshake: Handshake,
    pub exchanges: Vec<Exchange>,
}

#[derive(Serialize, Deserialize)]
struct HandshakeLine {
    handshake: Handshake,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mismatch {
    pub request_id: u64,
    pub detail: String,
}

impl Transcript {
    pub fn parse(text: &str) -> Result<Self, String> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, first) = lines.next().ok_or("empty transcript")?;
        let handshake = serde_json::from_str::<HandshakeLine>(first).map_err(|e| format!("line 1: {e}"))?.handshake;
        let exchanges = lines
            .map(|(n, l)| serde_json::from_str::<Exchange>(l).map_err(|e| format!("line {}: {e}", n + 1)))
            .collect::<Result<_, _>>()?;
        Ok(Self { handshake, exchanges })
    }

    pub fn to_ndjson(&self) -> String {
        let mut out = serde_json::to_string(&HandshakeLine { handshake: self.handshake.clone() }).expect("serializes");
        out.push('\n');
        for ex in &self.exchanges {
            out.push_str(&serde_json::to_string(ex).expect("serializes"));
            out.push('\n');
        }
        out
    }

    /// Records the responses of an in-process backend to `requests`.
    pub fn record(backends: &BackendSet, requests: Vec<BackendRequest>) -> Self {
        let exchanges = requests
            .into_iter()
            .map(|request| {
                let line = serde_json::to_string(&request).expect("serializes");
                let response = serde_json::from_str(&backends.respond_line(&line)).expect("server emits valid responses");
                Exchange { request, response }
            })
            .collect();
        Self { handshake: backends.handshake(), exchanges }
    }

    /// Replays against an in-process backend.
    pub fn replay(&self, backends: &BackendSet) -> Vec<Mismatch> {
        let mut out = check_handshake(&self.handshake, &backends.handshake());
        for ex in &self.exchanges {
            let line = serde_json::to_string(&ex.request).expect("serializes");
            match serde_json::from_str::<BackendResponse>(&backends.respond_line(&line)) {
                Ok(actual) => out.extend(compare_response(&ex.response, &actual)),
                Err(e) => out.push(Mismatch { request_id: ex.request.id, detail: format!("invalid response: {e}") }),
            }
        }
        out
    }

    /// Replays against a connected process backend.
    pub fn replay_client(&self, client: &RpcClient) -> Vec<Mismatch> {
        let mut out = check_handshake(&self.handshake, client.handshake());
        for ex in &self.exchanges {
            let id = ex.response.id;
            let actual = match client.call(ex.request.op, ex.request.payload.clone()) {
                Ok(v) => BackendResponse::success(id, v),
                Err(e) => BackendResponse::failure(id, &e),
            };
            out.extend(compare_response(&ex.response, &actual));
        }
        out
    }
}

fn check_handshake(expected: &Handshake, actual: &Handshake) -> Vec<Mismatch> {
    let mut out = Vec::new();
    if expected.protocol != actual.protocol {
        out.push(Mismatch { request_id: 0, detail: format!("protocol {} != {}", actual.protocol, expected.protocol) });
    }
    for op in &expected.ops {
        if !actual.ops.contains(op) {
            out.push(Mismatch { request_id: 0, detail: format!("op {} not advertised", op.as_str()) });
        }
    }
    if expected.embed_dim.is_some() && expected.embed_dim != actual.embed_dim {
        out.push(Mismatch { request_id: 0, detail: format!("embed_dim {:?} != {:?}", actual.embed_dim, expected.embed_dim) });
    }
    out
}

fn compare_response(expected: &BackendResponse, actual: &BackendResponse) -> Option<Mismatch> {
    let detail = if expected.id != actual.id {
        format!("id {} != {}", actual.id, expected.id)
    } else if expected.ok != actual.ok {
        format!("ok {} != {}", actual.ok, expected.ok)
    } else if expected.ok {
        match (&expected.result, &actual.result) {
            (Some(e), Some(a)) => match json_diff(e, a, "result") {
                None => return None,
                Some(d) => d,
            },
            _ => "missing result".into(),
        }
    } else {
        let code = |r: &BackendResponse| r.error.as_ref().map(|e| e.code.clone());
        if code(expected) == code(actual) {
            return None;
        }
        format!("error code {:?} != {:?}", code(actual), code(expected))
    };
    Some(Mismatch { request_id: expected.id, detail })
}

/// First structural difference between two JSON values, numbers compared within tolerance.
pub fn json_diff(expected: &Value, actual: &Value, path: &str) -> Option<String> {
    match (expected, actual) {
        (Value::Number(e), Value::Number(a)) => {
            let (e, a) = (e.as_f64()?, a.as_f64()?);
            ((e - a).abs() > FLOAT_TOLERANCE).then(|| format!("{path}: {a} != {e}"))
        }
        (Value::Array(e), Value::Array(a)) => {
            if e.len() != a.len() {
                return Some(format!("{path}: length {} != {}", a.len(), e.len()));
            }
            e.iter().zip(a).enumerate().find_map(|(i, (x, y))| json_diff(x, y, &format!("{path}[{i}]")))
        }
        (Value::Object(e), Value::Object(a)) => {
            if let Some(k) = e.keys().chain(a.keys()).find(|k| e.contains_key(*k) != a.contains_key(*k)) {
                return Some(format!("{path}: key {k} present on one side only"));
            }
            e.iter().find_map(|(k, x)| json_diff(x, &a[k], &format!("{path}.{k}")))
        }
        (e, a) => (e != a).then(|| format!("{path}: {a} != {e}")),
    }
}
