//! Engine side of the NDJSON protocol: pipelined requests matched by id.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::process::{Child, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use serde_json::Value;

use super::protocol::{
    from_value, to_value, BackendRequest, BackendResponse, CaptionBatchPayload, CaptionBatchResult, EmbedBatchPayload,
    EmbedBatchResult, Handshake, ImageRef, LossBatchPayload, LossBatchResult, Op, PairScorePayload, PairScoreResult,
    PROTOCOL_VERSION,
};
use super::{
    BackendError, Captioner, Embedder, GenerateRequest, GeneratedImage, ImageGenerator, ImageTextPair, LossOracle,
    LossQuery, PairScorer, SampleLoss,
};

#[derive(Clone, Debug, PartialEq)]
pub struct ClientConfig {
    pub batch_size: usize,
    /// Maximum requests written before waiting for responses.
    pub max_in_flight: usize,
    pub generate_timeout: Duration,
    pub default_timeout: Duration,
}

impl Default for ClientConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            max_in_flight: 8,
            generate_timeout: Duration::from_secs(120),
            default_timeout: Duration::from_secs(30),
        }
    }
}

impl ClientConfig {
    pub fn timeout_for(&self, op: Op) -> Duration {
        match op {
            Op::GenerateImage => self.generate_timeout,
            _ => self.default_timeout,
        }
    }
}

enum ReaderEvent {
    Line(String),
    Closed(String),
}

struct Connection {
    writer: Box<dyn Write + Send>,
    events: Receiver<ReaderEvent>,
    next_id: u64,
    closed: Option<String>,
}

/// A protocol connection over any byte streams.
pub struct RpcClient {
    conn: Mutex<Connection>,
    handshake: Handshake,
    config: ClientConfig,
    child: Option<Mutex<Child>>,
}

impl std::fmt::Debug for RpcClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RpcClient").field("handshake", &self.handshake).field("config", &self.config).finish()
    }
}

impl RpcClient {
    /// Connects over existing streams and waits for the handshake line.
    pub fn connect<R, W>(reader: R, writer: W, config: ClientConfig) -> Result<Self, BackendError>
    where
        R: BufRead + Send + 'static,
        W: Write + Send + 'static,
    {
        let (tx, rx) = mpsc::channel();
        thread::Builder::new()
            .name("curette-backend-reader".into())
            .spawn(move || {
                let mut reader = reader;
                let mut line = String::new();
                loop {
                    line.clear();
                    match reader.read_line(&mut line) {
                        Ok(0) => {
                            let _ = tx.send(ReaderEvent::Closed("backend closed its output".into()));
                            break;
                        }
                        Ok(_) => {
                            if !line.trim().is_empty() && tx.send(ReaderEvent::Line(line.trim_end().to_owned())).is_err() {
                                break;
                            }
                        }
                        Err(e) => {
                            let _ = tx.send(ReaderEvent::Closed(format!("read error: {e}")));
                            break;
                        }
                    }
                }
            })
            .map_err(|e| BackendError::Unavailable(format!("cannot start reader thread: {e}")))?;

        let handshake = match rx.recv_timeout(config.default_timeout) {
            Ok(ReaderEvent::Line(line)) => serde_json::from_str::<Handshake>(&line)
                .map_err(|e| BackendError::Protocol(format!("bad handshake {line:?}: {e}")))?,
            Ok(ReaderEvent::Closed(why)) => return Err(BackendError::Unavailable(why)),
            Err(RecvTimeoutError::Timeout) => return Err(BackendError::Unavailable("no handshake before timeout".into())),
            Err(RecvTimeoutError::Disconnected) => return Err(BackendError::Unavailable("backend reader stopped".into())),
        };
        if handshake.protocol != PROTOCOL_VERSION {
            return Err(BackendError::VersionMismatch { expected: PROTOCOL_VERSION.into(), found: handshake.protocol });
        }
        Ok(Self {
            conn: Mutex::new(Connection { writer: Box::new(writer), events: rx, next_id: 1, closed: None }),
            handshake,
            config,
            child: None,
        })
    }

    /// Launches `command` through `sh -c` and connects to its stdio.
    pub fn spawn(command: &str, config: ClientConfig) -> Result<Self, BackendError> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| BackendError::Unavailable(format!("cannot launch {command:?}: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        match Self::connect(BufReader::new(stdout), stdin, config) {
            Ok(mut client) => {
                client.child = Some(Mutex::new(child));
                Ok(client)
            }
            Err(e) => {
                let _ = child.kill();
                let _ = child.wait();
                Err(e)
            }
        }
    }

    pub fn handshake(&self) -> &Handshake {
        &self.handshake
    }

    pub fn config(&self) -> &ClientConfig {
        &self.config
    }

    pub fn supports(&self, op: Op) -> bool {
        self.handshake.ops.contains(&op)
    }

    fn require(&self, op: Op) -> Result<(), BackendError> {
        if self.supports(op) {
            Ok(())
        } else {
            Err(BackendError::Unavailable(format!("backend does not offer {}", op.as_str())))
        }
    }

    /// Sends every payload as one request of `op`, keeping at most
    /// `max_in_flight` outstanding, and returns results in payload order.
    pub fn call_many(&self, op: Op, payloads: Vec<Value>) -> Vec<Result<Value, BackendError>> {
        let n = payloads.len();
        let mut results: Vec<Option<Result<Value, BackendError>>> = (0..n).map(|_| None).collect();
        let timeout = self.config.timeout_for(op);
        let window = self.config.max_in_flight.max(1);
        let mut conn = self.conn.lock().unwrap_or_else(|p| p.into_inner());

        if let Some(why) = conn.closed.clone() {
            return (0..n).map(|_| Err(BackendError::Unavailable(why.clone()))).collect();
        }

        let mut payloads = payloads.into_iter().enumerate();
        let mut pending: HashMap<u64, (usize, Instant)> = HashMap::new();
        let mut done = 0;
        while done < n {
            while pending.len() < window {
                let Some((idx, payload)) = payloads.next() else { break };
                let id = conn.next_id;
                conn.next_id += 1;
                let mut line = serde_json::to_vec(&BackendRequest { id, op, payload }).expect("request serializes");
                line.push(b'\n');
                if let Err(e) = conn.writer.write_all(&line).and_then(|_| conn.writer.flush()) {
                    conn.closed = Some(format!("write failed: {e}"));
                    results[idx] = Some(Err(BackendError::Unavailable(format!("write failed: {e}"))));
                    done += 1;
                    continue;
                }
                pending.insert(id, (idx, Instant::now() + timeout));
            }
            if pending.is_empty() {
                if let Some(why) = conn.closed.clone() {
                    for (idx, _) in payloads.by_ref() {
                        results[idx] = Some(Err(BackendError::Unavailable(why.clone())));
                        done += 1;
                    }
                }
                continue;
            }

            let earliest = pending.values().map(|(_, d)| *d).min().expect("pending non-empty");
            match conn.events.recv_timeout(earliest.saturating_duration_since(Instant::now())) {
                Ok(ReaderEvent::Line(line)) => match serde_json::from_str::<BackendResponse>(&line) {
                    Ok(resp) => {
                        if let Some((idx, _)) = pending.remove(&resp.id) {
                            results[idx] = Some(resp.into_result());
                            done += 1;
                        } else {
                            log::warn!("ignoring response for unknown or expired id {}", resp.id);
                        }
                    }
                    Err(e) => log::warn!("ignoring malformed backend line {line:?}: {e}"),
                },
                Ok(ReaderEvent::Closed(why)) => {
                    conn.closed = Some(why);
                }
                Err(RecvTimeoutError::Timeout) => {
                    let now = Instant::now();
                    let expired: Vec<u64> = pending.iter().filter(|(_, (_, d))| *d <= now).map(|(id, _)| *id).collect();
                    for id in expired {
                        let (idx, _) = pending.remove(&id).expect("expired id pending");
                        results[idx] = Some(Err(BackendError::Timeout));
                        done += 1;
                    }
                }
                Err(RecvTimeoutError::Disconnected) => {
                    conn.closed = Some("backend reader stopped".into());
                }
            }
            if let Some(why) = conn.closed.clone() {
                for (_, (idx, _)) in pending.drain() {
                    results[idx] = Some(Err(BackendError::Unavailable(why.clone())));
                    done += 1;
                }
            }
        }
        results.into_iter().map(|r| r.expect("every request resolved")).collect()
    }

    pub fn call(&self, op: Op, payload: Value) -> Result<Value, BackendError> {
        self.call_many(op, vec![payload]).pop().expect("one result")
    }
}

impl Drop for RpcClient {
    fn drop(&mut self) {
        if let Some(child) = &self.child {
            let mut child = child.lock().unwrap_or_else(|p| p.into_inner());
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

/// A backend process serving any subset of the roles.
#[derive(Debug)]
pub struct ProcessBackend {
    client: RpcClient,
}

impl ProcessBackend {
    pub fn new(client: RpcClient) -> Self {
        Self { client }
    }

    pub fn spawn(command: &str, config: ClientConfig) -> Result<Self, BackendError> {
        RpcClient::spawn(command, config).map(Self::new)
    }

    pub fn client(&self) -> &RpcClient {
        &self.client
    }

    fn batched<I: Clone, P, R>(
        &self,
        op: Op,
        items: &[I],
        payload: impl Fn(Vec<I>) -> P,
        extract: impl Fn(R) -> Vec<Value>,
    ) -> Result<Vec<Value>, BackendError>
    where
        P: serde::Serialize,
        R: serde::de::DeserializeOwned,
    {
        self.client.require(op)?;
        let chunks: Vec<&[I]> = items.chunks(self.client.config.batch_size.max(1)).collect();
        let payloads = chunks.iter().map(|c| to_value(&payload(c.to_vec()))).collect();
        let mut out = Vec::with_capacity(items.len());
        for (chunk, result) in chunks.iter().zip(self.client.call_many(op, payloads)) {
            let parsed: R = from_value(result?, op.as_str())?;
            let values = extract(parsed);
            if values.len() != chunk.len() {
                return Err(BackendError::Protocol(format!(
                    "{} answered {} items for a batch of {}",
                    op.as_str(),
                    values.len(),
                    chunk.len()
                )));
            }
            out.extend(values);
        }
        Ok(out)
    }
}

impl LossOracle for ProcessBackend {
    fn loss_batch(&self, epoch: u32, samples: &[LossQuery]) -> Result<Vec<SampleLoss>, BackendError> {
        let values = self.batched(
            Op::LossBatch,
            samples,
            |samples| LossBatchPayload { epoch, samples },
            |r: LossBatchResult| r.losses.iter().map(to_value).collect(),
        )?;
        values.into_iter().map(|v| from_value(v, "loss")).collect()
    }
}

impl Captioner for ProcessBackend {
    fn caption_batch(&self, image_uris: &[String]) -> Result<Vec<String>, BackendError> {
        let values = self.batched(
            Op::CaptionBatch,
            image_uris,
            |uris| CaptionBatchPayload { images: uris.into_iter().map(|image_uri| ImageRef { image_uri }).collect() },
            |r: CaptionBatchResult| r.captions.into_iter().map(|c| Value::String(c.caption_text)).collect(),
        )?;
        Ok(values.into_iter().map(|v| v.as_str().unwrap_or_default().to_owned()).collect())
    }
}

impl ImageGenerator for ProcessBackend {
    fn generate_image(&self, request: &GenerateRequest) -> Result<GeneratedImage, BackendError> {
        self.client.require(Op::GenerateImage)?;
        from_value(self.client.call(Op::GenerateImage, to_value(request))?, "generate_image result")
    }

    fn generate_many(&self, requests: &[GenerateRequest]) -> Vec<Result<GeneratedImage, BackendError>> {
        if let Err(e) = self.client.require(Op::GenerateImage) {
            return requests.iter().map(|_| Err(e.clone())).collect();
        }
        let payloads = requests.iter().map(to_value).collect();
        self.client
            .call_many(Op::GenerateImage, payloads)
            .into_iter()
            .map(|r| r.and_then(|v| from_value(v, "generate_image result")))
            .collect()
    }
}

impl Embedder for ProcessBackend {
    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, BackendError> {
        let values = self.batched(
            Op::EmbedBatch,
            texts,
            |texts| EmbedBatchPayload { texts },
            |r: EmbedBatchResult| r.embeddings.iter().map(to_value).collect(),
        )?;
        let embeddings: Vec<Vec<f64>> = values.into_iter().map(|v| from_value(v, "embedding")).collect::<Result<_, _>>()?;
        if let Some(dim) = self.client.handshake.embed_dim {
            if let Some(bad) = embeddings.iter().find(|e| e.len() != dim) {
                return Err(BackendError::Protocol(format!("embedding of length {} but handshake declared {dim}", bad.len())));
            }
        }
        Ok(embeddings)
    }
}

impl PairScorer for ProcessBackend {
    fn pair_score_batch(&self, pairs: &[ImageTextPair]) -> Result<Vec<f64>, BackendError> {
        let values = self.batched(
            Op::PairScoreBatch,
            pairs,
            |pairs| PairScorePayload { pairs },
            |r: PairScoreResult| r.scores.into_iter().map(Value::from).collect(),
        )?;
        values.into_iter().map(|v| from_value(v, "score")).collect()
    }
}
