//! Newline-delimited JSON backend protocol.
//!
//! Each request is one JSON object per line:
//!
//! ```text
//! {"id": 1, "op": "info"}
//! {"id": 2, "op": "embed", "text": "...", "t": 0}
//! {"id": 3, "op": "predict", "question": "...", "context": "...", "t": 0}
//! {"id": 4, "op": "fine_tune", "instances": [{"id": .., "question": .., "context": .., "answer_text": .., "answer_start": ..}], "t": 0}
//! ```
//!
//! Responses echo `id` and carry `dim`, `vector`,
//! `start_probs`/`end_probs`/`token_offsets`, or `t` respectively; failures
//! carry `error`. Responses may arrive out of order and are matched by id.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream, ToSocketAddrs};
use std::process::{Child, Command, Stdio};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use log::{debug, info, warn};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{Backend, Embedding, ModelHandle, SpanDistribution};
use crate::dataset::QAInstance;
use crate::{Error, Result};

/// Request as it appears on the wire (minus the `id`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Request {
    Info,
    Embed {
        text: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        t: Option<u64>,
    },
    Predict {
        question: String,
        context: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        t: Option<u64>,
    },
    FineTune {
        instances: Vec<QAInstance>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        t: Option<u64>,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Envelope {
    pub id: u64,
    #[serde(flatten)]
    pub request: Request,
}

struct Inbox {
    reader: Box<dyn BufRead + Send>,
    stash: HashMap<u64, Value>,
}

/// Client side of the protocol.
pub struct WireBackend {
    label: String,
    writer: Mutex<Box<dyn Write + Send>>,
    inbox: Mutex<Inbox>,
    next_id: AtomicU64,
    current: ModelHandle,
    child: Option<Child>,
}

impl WireBackend {
    /// Speaks the protocol over an arbitrary byte stream pair and performs the
    /// initial `info` handshake.
    pub fn from_streams(
        label: impl Into<String>,
        reader: Box<dyn Read + Send>,
        writer: Box<dyn Write + Send>,
    ) -> Result<Self> {
        let mut backend = Self {
            label: label.into(),
            writer: Mutex::new(writer),
            inbox: Mutex::new(Inbox {
                reader: Box::new(BufReader::new(reader)),
                stash: HashMap::new(),
            }),
            next_id: AtomicU64::new(1),
            current: ModelHandle {
                backend: String::new(),
                t: 0,
                dim: 0,
            },
            child: None,
        };
        let resp = backend.call(&Request::Info)?;
        let dim = resp
            .get("dim")
            .and_then(Value::as_u64)
            .ok_or_else(|| Error::Protocol("info response lacks dim".into()))?;
        let t = resp.get("t").and_then(Value::as_u64).unwrap_or(0);
        backend.current = ModelHandle {
            backend: backend.label.clone(),
            t,
            dim: dim as usize,
        };
        Ok(backend)
    }

    /// Spawns `command` through `sh -c` and talks to it over its stdio.
    pub fn spawn(command: &str) -> Result<Self> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::Transport(format!("cannot spawn {command:?}: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        info!("spawned backend adapter: {command}");
        match Self::from_streams(
            format!("wire:cmd:{command}"),
            Box::new(stdout),
            Box::new(stdin),
        ) {
            Ok(mut b) => {
                b.child = Some(child);
                Ok(b)
            }
            Err(e) => {
                let _ = child.kill();
                let _ = child.wait();
                Err(e)
            }
        }
    }

    /// Connects to an adapter listening on `addr`.
    pub fn connect(addr: &str) -> Result<Self> {
        let stream = TcpStream::connect(addr)
            .map_err(|e| Error::Transport(format!("cannot connect to {addr}: {e}")))?;
        let reader = stream
            .try_clone()
            .map_err(|e| Error::Transport(e.to_string()))?;
        Self::from_streams(
            format!("wire:tcp:{addr}"),
            Box::new(reader),
            Box::new(stream),
        )
    }

    fn call(&self, request: &Request) -> Result<Value> {
        let id = self.next_id.fetch_add(1, Ordering::Relaxed);
        let line = serde_json::to_string(&Envelope {
            id,
            request: request.clone(),
        })?;
        {
            let mut w = self.writer.lock().expect("writer lock poisoned");
            w.write_all(line.as_bytes())
                .and_then(|_| w.write_all(b"\n"))
                .and_then(|_| w.flush())
                .map_err(|e| Error::Transport(format!("write failed: {e}")))?;
        }

        loop {
            let mut inbox = self.inbox.lock().expect("inbox lock poisoned");
            if let Some(resp) = inbox.stash.remove(&id) {
                return unwrap_response(resp);
            }
            let mut buf = String::new();
            let n = inbox
                .reader
                .read_line(&mut buf)
                .map_err(|e| Error::Transport(format!("read failed: {e}")))?;
            if n == 0 {
                return Err(Error::Transport("adapter closed the stream".into()));
            }
            if buf.trim().is_empty() {
                continue;
            }
            let resp: Value = serde_json::from_str(&buf)
                .map_err(|e| Error::Protocol(format!("unparseable response: {e}")))?;
            let resp_id = resp
                .get("id")
                .and_then(Value::as_u64)
                .ok_or_else(|| Error::Protocol(format!("response without id: {}", buf.trim())))?;
            if resp_id == id {
                return unwrap_response(resp);
            }
            inbox.stash.insert(resp_id, resp);
        }
    }
}

fn unwrap_response(resp: Value) -> Result<Value> {
    match resp.get("error") {
        Some(err) => Err(Error::Backend(
            err.as_str().map_or_else(|| err.to_string(), str::to_string),
        )),
        None => Ok(resp),
    }
}

fn field<T: for<'de> Deserialize<'de>>(resp: &Value, name: &str) -> Result<T> {
    let v = resp
        .get(name)
        .ok_or_else(|| Error::Protocol(format!("response lacks {name}")))?;
    serde_json::from_value(v.clone()).map_err(|e| Error::Protocol(format!("bad {name}: {e}")))
}

impl Drop for WireBackend {
    fn drop(&mut self) {
        if let Some(mut child) = self.child.take() {
            // Closing stdin lets a well-behaved adapter exit on EOF.
            if let Ok(mut w) = self.writer.lock() {
                *w = Box::new(std::io::sink());
            }
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

impl Backend for WireBackend {
    fn handle(&self) -> Result<ModelHandle> {
        Ok(self.current.clone())
    }

    fn embed(&self, model: &ModelHandle, text: &str) -> Result<Embedding> {
        if text.trim().is_empty() {
            return Err(Error::argument("cannot embed empty text"));
        }
        let resp = self.call(&Request::Embed {
            text: text.to_string(),
            t: Some(model.t),
        })?;
        let vector: Vec<f64> = field(&resp, "vector")?;
        if vector.len() != model.dim {
            return Err(Error::Protocol(format!(
                "embedding has dimension {}, expected {}",
                vector.len(),
                model.dim
            )));
        }
        Embedding::new(vector).map_err(|e| Error::Protocol(e.to_string()))
    }

    fn predict(
        &self,
        model: &ModelHandle,
        question: &str,
        context: &str,
    ) -> Result<SpanDistribution> {
        if question.trim().is_empty() || context.trim().is_empty() {
            return Err(Error::argument("question and context must be non-empty"));
        }
        let resp = self.call(&Request::Predict {
            question: question.to_string(),
            context: context.to_string(),
            t: Some(model.t),
        })?;
        SpanDistribution::new(
            field(&resp, "start_probs")?,
            field(&resp, "end_probs")?,
            field(&resp, "token_offsets")?,
        )
        .map_err(|e| Error::Protocol(e.to_string()))
    }

    fn fine_tune(&mut self, model: &ModelHandle, labeled: &[QAInstance]) -> Result<ModelHandle> {
        if labeled.is_empty() {
            return Err(Error::argument("fine_tune needs at least one instance"));
        }
        let resp = self.call(&Request::FineTune {
            instances: labeled.to_vec(),
            t: Some(model.t),
        })?;
        let t: u64 = field(&resp, "t")?;
        if t <= model.t {
            return Err(Error::Protocol(format!(
                "fine_tune returned t={t}, expected > {}",
                model.t
            )));
        }
        if let Some(skipped) = resp.get("skipped").and_then(Value::as_array) {
            if !skipped.is_empty() {
                warn!(
                    "adapter skipped {} instances during fine-tuning",
                    skipped.len()
                );
            }
        }
        self.current = ModelHandle { t, ..model.clone() };
        Ok(self.current.clone())
    }
}

fn respond<B: Backend + ?Sized>(backend: &mut B, request: Request) -> Result<Value> {
    let handle = backend.handle()?;
    let requested = match &request {
        Request::Info => None,
        Request::Embed { t, .. } | Request::Predict { t, .. } | Request::FineTune { t, .. } => *t,
    };
    if let Some(t) = requested.filter(|&t| t != handle.t) {
        return Err(Error::StaleHandle {
            handle: t,
            backend: handle.t,
        });
    }
    Ok(match request {
        Request::Info => json!({ "dim": handle.dim, "t": handle.t, "backend": handle.backend }),
        Request::Embed { text, .. } => {
            json!({ "vector": backend.embed(&handle, &text)? })
        }
        Request::Predict {
            question, context, ..
        } => {
            let d = backend.predict(&handle, &question, &context)?;
            json!({
                "start_probs": d.start_probs(),
                "end_probs": d.end_probs(),
                "token_offsets": d.token_offsets(),
            })
        }
        Request::FineTune { instances, .. } => {
            let h = backend.fine_tune(&handle, &instances)?;
            json!({ "t": h.t })
        }
    })
}

/// Serves `backend` over a line-oriented stream until EOF. Requests are
/// answered in arrival order; a bad request gets an error response and the
/// loop keeps going.
pub fn serve<B, R, W>(backend: &mut B, input: R, mut output: W) -> Result<()>
where
    B: Backend + ?Sized,
    R: BufRead,
    W: Write,
{
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let response = match serde_json::from_str::<Envelope>(&line) {
            Ok(env) => {
                debug!("request {}: {:?}", env.id, env.request);
                match respond(backend, env.request) {
                    Ok(mut body) => {
                        body["id"] = json!(env.id);
                        body
                    }
                    Err(e) => json!({ "id": env.id, "error": e.to_string() }),
                }
            }
            Err(e) => {
                let id = serde_json::from_str::<Value>(&line)
                    .ok()
                    .and_then(|v| v.get("id").cloned())
                    .unwrap_or(Value::Null);
                json!({ "id": id, "error": format!("bad request: {e}") })
            }
        };
        serde_json::to_writer(&mut output, &response)?;
        output.write_all(b"\n")?;
        output.flush()?;
    }
    Ok(())
}

/// Accepts connections on `addr` one at a time and serves each until it
/// closes.
pub fn serve_tcp<B: Backend + ?Sized>(backend: &mut B, addr: impl ToSocketAddrs) -> Result<()> {
    let listener = TcpListener::bind(addr)?;
    info!("listening on {}", listener.local_addr()?);
    for stream in listener.incoming() {
        let stream = stream?;
        let reader = BufReader::new(stream.try_clone()?);
        if let Err(e) = serve(backend, reader, stream) {
            warn!("connection ended with error: {e}");
        }
    }
    Ok(())
}
