//! Client side of the line-delimited JSON scoring protocol, used to drive the
//! decoder with an external model process.
//!
//! Request: `{"id":int,"source":str,"prompt":str,"prefix":[str],"allowed":[str]}`
//! Response: `{"id":int,"logprobs":[float]}` or `{"id":int,"error":str}`

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{ScoreError, ScoreQuery, Scorer};
use crate::tokenize::Tokenizer;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRequest {
    pub id: u64,
    pub source: String,
    pub prompt: String,
    pub prefix: Vec<String>,
    pub allowed: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreResponse {
    pub id: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logprobs: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

struct Session {
    child: Option<Child>,
    writer: Box<dyn Write + Send>,
    reader: Box<dyn BufRead + Send>,
    next_id: u64,
}

/// Scorer backed by a subprocess speaking the protocol on stdin/stdout. One
/// request is in flight at a time; concurrent callers queue on a lock.
pub struct ExternScorer {
    tokenizer: Tokenizer,
    session: Mutex<Session>,
}

impl std::fmt::Debug for ExternScorer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ExternScorer")
            .field("tokenizer", &self.tokenizer)
            .finish()
    }
}

impl ExternScorer {
    /// Run `command` through `sh -c`.
    pub fn spawn(command: &str, tokenizer: Tokenizer) -> Result<Self> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::io(command, e))?;
        let stdin: ChildStdin = child.stdin.take().expect("piped");
        let stdout: ChildStdout = child.stdout.take().expect("piped");
        Ok(Self {
            tokenizer,
            session: Mutex::new(Session {
                child: Some(child),
                writer: Box::new(stdin),
                reader: Box::new(BufReader::new(stdout)),
                next_id: 0,
            }),
        })
    }

    /// Speak the protocol over arbitrary streams.
    pub fn from_streams(
        reader: impl BufRead + Send + 'static,
        writer: impl Write + Send + 'static,
        tokenizer: Tokenizer,
    ) -> Self {
        Self {
            tokenizer,
            session: Mutex::new(Session {
                child: None,
                writer: Box::new(writer),
                reader: Box::new(reader),
                next_id: 0,
            }),
        }
    }

    /// Requests sent so far.
    pub fn requests_sent(&self) -> u64 {
        self.session.lock().map(|s| s.next_id).unwrap_or(0)
    }
}

impl Session {
    fn call(&mut self, mut request: ScoreRequest) -> std::result::Result<Vec<f64>, ScoreError> {
        request.id = self.next_id;
        self.next_id += 1;
        let fail = |m: String| ScoreError(format!("scorer process: {m}"));
        let mut line = serde_json::to_string(&request).map_err(|e| fail(e.to_string()))?;
        line.push('\n');
        self.writer
            .write_all(line.as_bytes())
            .and_then(|_| self.writer.flush())
            .map_err(|e| fail(e.to_string()))?;
        let mut reply = String::new();
        let n = self
            .reader
            .read_line(&mut reply)
            .map_err(|e| fail(e.to_string()))?;
        if n == 0 {
            return Err(fail("closed its output".into()));
        }
        let response: ScoreResponse = serde_json::from_str(reply.trim_end())
            .map_err(|e| fail(format!("bad response line: {e}")))?;
        if response.id != request.id {
            return Err(fail(format!(
                "response id {} for request {}",
                response.id, request.id
            )));
        }
        if let Some(err) = response.error {
            return Err(fail(err));
        }
        let logprobs = response
            .logprobs
            .ok_or_else(|| fail("response has no logprobs".into()))?;
        if logprobs.len() != request.allowed.len() {
            return Err(fail(format!(
                "{} logprobs for {} allowed tokens",
                logprobs.len(),
                request.allowed.len()
            )));
        }
        Ok(logprobs)
    }
}

impl Scorer for ExternScorer {
    fn score_next(
        &self,
        query: &ScoreQuery<'_>,
        allowed: &[&str],
    ) -> std::result::Result<Vec<f64>, ScoreError> {
        if allowed.is_empty() {
            return Ok(Vec::new());
        }
        let request = ScoreRequest {
            id: 0,
            source: self.tokenizer.detokenize(query.source),
            prompt: self.tokenizer.detokenize(query.prompt),
            prefix: query.prefix.iter().map(|s| s.to_string()).collect(),
            allowed: allowed.iter().map(|s| s.to_string()).collect(),
        };
        let mut session = self
            .session
            .lock()
            .map_err(|_| ScoreError("scorer session poisoned".into()))?;
        session.call(request)
    }
}

impl Drop for ExternScorer {
    fn drop(&mut self) {
        if let Ok(session) = self.session.get_mut() {
            // closing stdin lets a well-behaved server exit
            session.writer = Box::new(std::io::sink());
            if let Some(mut child) = session.child.take() {
                let _ = child.wait();
            }
        }
    }
}
