//! Client for external backends speaking newline-delimited JSON over a child
//! process's stdin/stdout.
//!
//! The child first prints `{"ready":true,"roles":[...]}`. Every request then
//! carries an integer `id`; replies may arrive in any order and are routed
//! back to the caller waiting on that id. Writes to the child are serialized,
//! so one client can be shared between threads.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::{self, RecvTimeoutError, Sender};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use serde::Serialize;
use serde_json::{json, Map, Value};

use super::{require_kind, BackendKind, DecodeMode, GenOptions, InfillBackend, RewritePair};
use crate::classifier::AttributeClassifier;
use crate::embedder::{clamped_cosine, SentenceSimilarity};
use crate::error::{Error, Result};
use crate::noising::{MaskMode, MaskedVariant};
use crate::text::{detokenize, tokenize, AttributeLabel, LabelSet, TokenSeq};

pub const ROLE_GENERATOR: &str = "generator";
pub const ROLE_CLASSIFIER: &str = "classifier";
pub const ROLE_EMBEDDER: &str = "embedder";

type Reply = Result<Map<String, Value>>;

#[derive(Default)]
struct Pending {
    waiting: HashMap<u64, Sender<Reply>>,
    /// Set once the child's stdout closes; later calls fail immediately.
    dead: bool,
}

pub struct BridgeClient {
    child: Mutex<Child>,
    stdin: Mutex<Option<ChildStdin>>,
    pending: Arc<Mutex<Pending>>,
    next_id: AtomicU64,
    roles: Vec<String>,
    timeout: Duration,
}

impl BridgeClient {
    /// Start `program args...` and wait for its handshake line.
    pub fn spawn<S: AsRef<std::ffi::OsStr>>(program: S, args: &[S], timeout: Duration) -> Result<Self> {
        let mut command = Command::new(program);
        command.args(args);
        Self::from_command(command, timeout)
    }

    pub fn from_command(mut command: Command, timeout: Duration) -> Result<Self> {
        let mut child = command
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let pending = Arc::new(Mutex::new(Pending::default()));
        let (ready_tx, ready_rx) = mpsc::channel::<Result<Vec<String>>>();

        let shared = Arc::clone(&pending);
        thread::spawn(move || {
            let mut lines = BufReader::new(stdout).lines();
            let handshake = match lines.next() {
                Some(Ok(line)) => parse_handshake(&line),
                _ => Err(Error::BackendDied),
            };
            let ok = handshake.is_ok();
            let _ = ready_tx.send(handshake);
            if ok {
                for line in lines {
                    match line {
                        Ok(line) if line.trim().is_empty() => {}
                        Ok(line) => route(&shared, &line),
                        Err(_) => break,
                    }
                }
            }
            let mut state = shared.lock().unwrap();
            state.dead = true;
            for (_, tx) in state.waiting.drain() {
                let _ = tx.send(Err(Error::BackendDied));
            }
        });

        let client = |roles| BridgeClient {
            child: Mutex::new(child),
            stdin: Mutex::new(Some(stdin)),
            pending,
            next_id: AtomicU64::new(1),
            roles,
            timeout,
        };
        match ready_rx.recv_timeout(timeout) {
            Ok(Ok(roles)) => Ok(client(roles)),
            Ok(Err(e)) => {
                drop(client(Vec::new()));
                Err(e)
            }
            Err(_) => {
                drop(client(Vec::new()));
                Err(Error::Timeout(timeout))
            }
        }
    }

    pub fn roles(&self) -> &[String] {
        &self.roles
    }

    pub fn has_role(&self, role: &str) -> bool {
        self.roles.iter().any(|r| r == role)
    }

    pub fn timeout(&self) -> Duration {
        self.timeout
    }

    /// Send `{"id", "op", ...fields}` and wait for the matching reply.
    /// `ok:false` replies become [`Error::Remote`].
    pub fn call(&self, op: &str, fields: Map<String, Value>) -> Result<Map<String, Value>> {
        let id = self.next_id.fetch_add(1, Ordering::Relaxed);
        let mut request = Map::new();
        request.insert("id".into(), json!(id));
        request.insert("op".into(), json!(op));
        request.extend(fields);

        let (tx, rx) = mpsc::channel();
        {
            let mut state = self.pending.lock().unwrap();
            if state.dead {
                return Err(Error::BackendDied);
            }
            state.waiting.insert(id, tx);
        }
        let line = serde_json::to_string(&Value::Object(request))?;
        if let Err(e) = self.write_line(&line) {
            self.pending.lock().unwrap().waiting.remove(&id);
            return Err(e);
        }
        match rx.recv_timeout(self.timeout) {
            Ok(reply) => reply,
            Err(RecvTimeoutError::Timeout) => {
                self.pending.lock().unwrap().waiting.remove(&id);
                Err(Error::Timeout(self.timeout))
            }
            Err(RecvTimeoutError::Disconnected) => Err(Error::BackendDied),
        }
    }

    fn write_line(&self, line: &str) -> Result<()> {
        let mut guard = self.stdin.lock().unwrap();
        let stdin = guard.as_mut().ok_or(Error::BackendDied)?;
        let written = stdin
            .write_all(line.as_bytes())
            .and_then(|_| stdin.write_all(b"\n"))
            .and_then(|_| stdin.flush());
        written.map_err(|_| Error::BackendDied)
    }

    pub fn ping(&self) -> Result<()> {
        self.call("ping", Map::new()).map(|_| ())
    }
}

impl Drop for BridgeClient {
    fn drop(&mut self) {
        // closing stdin asks the child to exit
        self.stdin.lock().unwrap().take();
        let mut child = self.child.lock().unwrap();
        let deadline = Instant::now() + Duration::from_secs(2);
        while Instant::now() < deadline {
            if let Ok(Some(_)) = child.try_wait() {
                return;
            }
            thread::sleep(Duration::from_millis(10));
        }
        let _ = child.kill();
        let _ = child.wait();
    }
}

fn parse_handshake(line: &str) -> Result<Vec<String>> {
    let value: Value = serde_json::from_str(line)
        .map_err(|e| Error::Protocol(format!("handshake is not JSON: {e}")))?;
    match value.get("ready") {
        Some(Value::Bool(true)) => {}
        Some(Value::Bool(false)) => {
            let msg = value.get("error").and_then(Value::as_str).unwrap_or("not ready");
            return Err(Error::Remote(msg.to_string()));
        }
        _ => return Err(Error::Protocol("handshake lacks \"ready\"".into())),
    }
    let roles = value
        .get("roles")
        .and_then(Value::as_array)
        .ok_or_else(|| Error::Protocol("handshake lacks \"roles\"".into()))?;
    roles
        .iter()
        .map(|r| {
            r.as_str()
                .map(str::to_string)
                .ok_or_else(|| Error::Protocol("role names must be strings".into()))
        })
        .collect()
}

/// Deliver one reply line to its waiter. A line that cannot be attributed to
/// a request fails every outstanding request, since one of them has lost its
/// reply.
fn route(pending: &Mutex<Pending>, line: &str) {
    let mut state = pending.lock().unwrap();
    let parsed: std::result::Result<Map<String, Value>, _> = serde_json::from_str(line);
    let mut obj = match parsed {
        Ok(obj) => obj,
        Err(e) => {
            let msg = format!("malformed response: {e}");
            for (_, tx) in state.waiting.drain() {
                let _ = tx.send(Err(Error::Protocol(msg.clone())));
            }
            return;
        }
    };
    let Some(id) = obj.get("id").and_then(Value::as_u64) else {
        for (_, tx) in state.waiting.drain() {
            let _ = tx.send(Err(Error::Protocol("response without id".into())));
        }
        return;
    };
    let Some(tx) = state.waiting.remove(&id) else {
        return;
    };
    let reply = match obj.remove("ok") {
        Some(Value::Bool(true)) => Ok(obj),
        Some(Value::Bool(false)) => Err(Error::Remote(
            obj.get("error")
                .and_then(Value::as_str)
                .unwrap_or("unspecified error")
                .to_string(),
        )),
        _ => Err(Error::Protocol(format!("response {id} lacks boolean \"ok\""))),
    };
    let _ = tx.send(reply);
}

fn field<'a>(reply: &'a Map<String, Value>, name: &str) -> Result<&'a Value> {
    reply
        .get(name)
        .ok_or_else(|| Error::Protocol(format!("response lacks \"{name}\"")))
}

/// Generator, classifier, and embedder roles served by one external process.
pub struct BridgeBackend {
    client: Arc<BridgeClient>,
    labels: LabelSet,
}

impl BridgeBackend {
    pub fn new(client: Arc<BridgeClient>, labels: LabelSet) -> Self {
        BridgeBackend { client, labels }
    }

    pub fn client(&self) -> &BridgeClient {
        &self.client
    }

    /// Ask the external process to fine-tune on text-to-text pairs.
    pub fn train(&self, pairs: &[RewritePair]) -> Result<()> {
        #[derive(Serialize)]
        struct Wire {
            control: String,
            input: String,
            output: String,
        }
        let wire = pairs
            .iter()
            .map(|p| {
                Ok(Wire {
                    control: self.labels.control_token(&p.control)?,
                    input: detokenize(&p.input),
                    output: detokenize(&p.output),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let mut fields = Map::new();
        fields.insert("pairs".into(), serde_json::to_value(wire)?);
        self.client.call("train", fields).map(|_| ())
    }

    pub fn save(&self, path: &str) -> Result<()> {
        let mut fields = Map::new();
        fields.insert("path".into(), json!(path));
        self.client.call("save", fields).map(|_| ())
    }

    pub fn load(&self, path: &str) -> Result<()> {
        let mut fields = Map::new();
        fields.insert("path".into(), json!(path));
        self.client.call("load", fields).map(|_| ())
    }

    pub fn embed(&self, seq: &TokenSeq) -> Result<Vec<f64>> {
        let mut fields = Map::new();
        fields.insert("input".into(), json!(detokenize(seq)));
        let reply = self.client.call("embed", fields)?;
        let vector = field(&reply, "vector")?
            .as_array()
            .ok_or_else(|| Error::Protocol("\"vector\" is not an array".into()))?;
        vector
            .iter()
            .map(|x| {
                x.as_f64()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::Protocol("non-numeric embedding entry".into()))
            })
            .collect()
    }
}

/// Request fields for one generate call.
pub fn generate_request(
    variant: &MaskedVariant,
    control: &str,
    opts: &GenOptions,
) -> Map<String, Value> {
    let mut fields = Map::new();
    fields.insert("input".into(), json!(detokenize(&variant.collapsed())));
    fields.insert("control".into(), json!(control));
    fields.insert("n".into(), json!(opts.n));
    let mode = match opts.mode {
        DecodeMode::Greedy => "greedy",
        DecodeMode::Sample => "sample",
    };
    fields.insert("mode".into(), json!(mode));
    fields.insert("temperature".into(), json!(opts.temperature));
    fields.insert("seed".into(), json!(opts.seed));
    if variant.kind == MaskMode::Soft {
        let blend = variant
            .weights
            .as_ref()
            .and_then(|w| w.iter().copied().find(|&x| x > 0.0))
            .unwrap_or(0.0);
        fields.insert("blend".into(), json!(blend));
    }
    fields
}

fn parse_outputs(reply: &Map<String, Value>, n: usize) -> Result<Vec<TokenSeq>> {
    let outputs = field(reply, "outputs")?
        .as_array()
        .ok_or_else(|| Error::Protocol("\"outputs\" is not an array".into()))?;
    if outputs.len() != n {
        return Err(Error::Protocol(format!(
            "requested {n} outputs, received {}",
            outputs.len()
        )));
    }
    outputs
        .iter()
        .map(|o| {
            o.as_str()
                .map(tokenize)
                .ok_or_else(|| Error::Protocol("output is not a string".into()))
        })
        .collect()
}

impl InfillBackend for BridgeBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::Bridge
    }

    fn generate(&self, variant: &MaskedVariant, control: &AttributeLabel, opts: &GenOptions) -> Result<Vec<TokenSeq>> {
        opts.validate()?;
        require_kind(variant, &[MaskMode::Hard, MaskMode::Soft], "bridge backend")?;
        let control = self.labels.control_token(control)?;
        let reply = self.client.call("generate", generate_request(variant, &control, opts))?;
        parse_outputs(&reply, opts.n)
    }
}

impl AttributeClassifier for BridgeBackend {
    fn labels(&self) -> &LabelSet {
        &self.labels
    }

    fn probabilities(&self, seq: &TokenSeq) -> Result<Vec<f64>> {
        let mut fields = Map::new();
        fields.insert("input".into(), json!(detokenize(seq)));
        let reply = self.client.call("classify", fields)?;
        let probs = field(&reply, "probs")?
            .as_object()
            .ok_or_else(|| Error::Protocol("\"probs\" is not an object".into()))?;
        let out = self
            .labels
            .names()
            .iter()
            .map(|name| {
                probs
                    .get(name)
                    .and_then(Value::as_f64)
                    .filter(|p| (0.0..=1.0).contains(p))
                    .ok_or_else(|| Error::Protocol(format!("missing or invalid probability for `{name}`")))
            })
            .collect::<Result<Vec<f64>>>()?;
        let total: f64 = out.iter().sum();
        if (total - 1.0).abs() > 1e-6 {
            return Err(Error::Protocol(format!("probabilities sum to {total}")));
        }
        Ok(out)
    }
}

impl SentenceSimilarity for BridgeBackend {
    fn similarity(&self, a: &TokenSeq, b: &TokenSeq) -> Result<f64> {
        clamped_cosine(&self.embed(a)?, &self.embed(b)?)
    }
}

/// Outcome of one conformance check.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

/// Protocol conformance suite run against a live client: ping, concurrent
/// id matching, echo-train, exact output count, greedy determinism,
/// malformed-request rejection, and the soft-mask path (honored with the
/// right output count, or rejected explicitly). Generator checks run only
/// when that role is advertised.
pub fn conformance(client: &BridgeClient, labels: &LabelSet) -> Vec<CheckOutcome> {
    let mut out = Vec::new();
    let mut record = |name, result: Result<String>| {
        out.push(match result {
            Ok(detail) => CheckOutcome { name, passed: true, detail },
            Err(e) => CheckOutcome { name, passed: false, detail: e.to_string() },
        });
    };

    record("handshake", Ok(format!("roles {:?}", client.roles())));
    record("ping", client.ping().map(|_| "ok".to_string()));

    let concurrent = thread::scope(|s| {
        let handles: Vec<_> = (0..4).map(|_| s.spawn(|| client.ping())).collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or(Err(Error::BackendDied)))
            .collect::<Result<Vec<_>>>()
    });
    record("id-matching", concurrent.map(|v| format!("{} concurrent replies matched", v.len())));

    let rejected = match client.call("no-such-op", Map::new()) {
        Err(Error::Remote(msg)) => Ok(format!("rejected: {msg}")),
        Ok(_) => Err(Error::Protocol("unknown op accepted".into())),
        Err(e) => Err(e),
    };
    record("malformed-rejection", rejected);

    if !client.has_role(ROLE_GENERATOR) {
        return out;
    }
    let Some(control) = labels.get(0) else {
        return out;
    };
    let control = labels.control_token(&control).expect("label from set");
    let source = tokenize("the food was great");
    let variant = MaskedVariant::with_positions(&source, &[3], MaskMode::Hard, 1.0).expect("valid position");

    let mut train_fields = Map::new();
    train_fields.insert(
        "pairs".into(),
        json!([{"control": control, "input": "the food was great", "output": "the food was great"}]),
    );
    record("echo-train", client.call("train", train_fields).map(|_| "ok".to_string()));

    let n = 3;
    let counted = client
        .call("generate", generate_request(&variant, &control, &GenOptions::sample(n, 7)))
        .and_then(|r| parse_outputs(&r, n))
        .map(|o| format!("{} outputs", o.len()));
    record("n-outputs", counted);

    let greedy = |_: u8| {
        client
            .call("generate", generate_request(&variant, &control, &GenOptions::greedy()))
            .and_then(|r| parse_outputs(&r, 1))
    };
    let determinism = greedy(0).and_then(|a| {
        let b = greedy(1)?;
        if a == b {
            Ok(format!("{:?}", detokenize(&a[0])))
        } else {
            Err(Error::Protocol("greedy outputs differ between calls".into()))
        }
    });
    record("greedy-determinism", determinism);

    let soft = MaskedVariant::with_positions(&source, &[3], MaskMode::Soft, 0.5).expect("valid position");
    let soft_result = match client
        .call("generate", generate_request(&soft, &control, &GenOptions::sample(2, 7)))
        .and_then(|r| parse_outputs(&r, 2))
    {
        Ok(_) => Ok("blend honored".to_string()),
        Err(Error::Remote(msg)) if msg.contains("soft mask unsupported") => Ok(format!("rejected: {msg}")),
        Err(Error::Remote(msg)) => Err(Error::Protocol(format!("unexpected soft-mask error: {msg}"))),
        Err(e) => Err(e),
    };
    record("soft-mask-path", soft_result);
    out
}
