//! JSON-lines request/response protocol over a long-lived child process.
//!
//! Each request is written to the worker's stdin as one JSON object with an
//! added integer `id`; the worker answers with one JSON object per line on
//! stdout echoing that `id`. Responses carrying an `error` string are
//! surfaced as [`TransportError::Remote`].

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

#[derive(Debug, thiserror::Error)]
pub enum TransportError {
    #[error("failed to start worker {command:?}: {source}")]
    Spawn {
        command: Vec<String>,
        source: std::io::Error,
    },
    #[error("worker command is empty")]
    EmptyCommand,
    #[error("worker exited")]
    Closed,
    #[error("worker did not answer within {0:?}")]
    Timeout(Duration),
    #[error("worker error: {0}")]
    Remote(String),
    #[error("malformed worker message: {0}")]
    Protocol(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

struct Channel {
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<String>,
    next_id: u64,
}

pub struct JsonLinesWorker {
    command: Vec<String>,
    timeout: Duration,
    channel: Mutex<Channel>,
}

impl std::fmt::Debug for JsonLinesWorker {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("JsonLinesWorker")
            .field("command", &self.command)
            .field("timeout", &self.timeout)
            .finish()
    }
}

impl JsonLinesWorker {
    pub fn spawn(command: &[String], timeout: Duration) -> Result<Self, TransportError> {
        let (program, args) = command.split_first().ok_or(TransportError::EmptyCommand)?;
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|source| TransportError::Spawn {
                command: command.to_vec(),
                source,
            })?;
        let stdin = child.stdin.take().ok_or(TransportError::Closed)?;
        let stdout = child.stdout.take().ok_or(TransportError::Closed)?;
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                let Ok(line) = line else { break };
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        Ok(Self {
            command: command.to_vec(),
            timeout,
            channel: Mutex::new(Channel {
                child,
                stdin,
                lines: rx,
                next_id: 0,
            }),
        })
    }

    pub fn request<Req, Resp>(&self, request: &Req) -> Result<Resp, TransportError>
    where
        Req: Serialize,
        Resp: DeserializeOwned,
    {
        let mut ch = self.channel.lock().unwrap_or_else(|e| e.into_inner());
        let id = ch.next_id;
        ch.next_id += 1;

        let mut payload = serde_json::to_value(request).map_err(|e| TransportError::Protocol(e.to_string()))?;
        let Value::Object(map) = &mut payload else {
            return Err(TransportError::Protocol("request must serialize to an object".into()));
        };
        map.insert("id".into(), Value::from(id));
        let mut line = serde_json::to_string(&payload).map_err(|e| TransportError::Protocol(e.to_string()))?;
        line.push('\n');
        ch.stdin.write_all(line.as_bytes()).map_err(|_| TransportError::Closed)?;
        ch.stdin.flush().map_err(|_| TransportError::Closed)?;

        let deadline = Instant::now() + self.timeout;
        loop {
            let left = deadline.saturating_duration_since(Instant::now());
            let reply = match ch.lines.recv_timeout(left) {
                Ok(l) => l,
                Err(RecvTimeoutError::Timeout) => return Err(TransportError::Timeout(self.timeout)),
                Err(RecvTimeoutError::Disconnected) => return Err(TransportError::Closed),
            };
            let value: Value =
                serde_json::from_str(&reply).map_err(|e| TransportError::Protocol(format!("{e}: {reply}")))?;
            // Late answers to timed-out requests are skipped.
            if value.get("id").and_then(Value::as_u64) != Some(id) {
                continue;
            }
            if let Some(err) = value.get("error").and_then(Value::as_str) {
                return Err(TransportError::Remote(err.to_string()));
            }
            return serde_json::from_value(value).map_err(|e| TransportError::Protocol(e.to_string()));
        }
    }
}

impl Drop for JsonLinesWorker {
    fn drop(&mut self) {
        let ch = self.channel.get_mut().unwrap_or_else(|e| e.into_inner());
        let _ = ch.child.kill();
        let _ = ch.child.wait();
    }
}
