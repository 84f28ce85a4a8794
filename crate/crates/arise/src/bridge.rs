//! Engine side of the policy bridge: newline-delimited JSON requests to an
//! out-of-process model adapter, plus an in-process echo adapter used as a
//! test double.

use std::cell::RefCell;
use std::io::{self, BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};

use arise_core::policy::PolicyError;
use arise_core::selector::SkillScorer;
use arise_core::skill_doc::SkillDocument;
use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Score,
    Sample,
    Summarize,
    Ping,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreParams {
    pub context: String,
    pub candidate: String,
    pub cap: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleParams {
    pub prompt: String,
    pub max_tokens: usize,
    pub temperature: f64,
    pub top_p: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummarizeParams {
    pub prompt: String,
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: usize,
}

impl SummarizeParams {
    pub fn with_defaults(prompt: String) -> SummarizeParams {
        SummarizeParams { prompt, temperature: 0.7, top_p: 0.95, max_tokens: 192 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BridgeRequest {
    pub id: u64,
    pub method: Method,
    #[serde(default)]
    pub params: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteError {
    pub code: String,
    pub message: String,
}

/// Exactly one of `result` and `error` is present. `id` is null when the
/// request line could not be parsed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BridgeResponse {
    pub id: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<RemoteError>,
}

impl BridgeResponse {
    pub fn ok(id: u64, result: Value) -> BridgeResponse {
        BridgeResponse { id: Some(id), result: Some(result), error: None }
    }

    pub fn err(id: Option<u64>, code: &str, message: impl Into<String>) -> BridgeResponse {
        BridgeResponse { id, result: None, error: Some(RemoteError { code: code.into(), message: message.into() }) }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum BridgeError {
    #[error("bridge i/o: {0}")]
    Io(#[from] io::Error),
    #[error("bridge closed the connection")]
    Closed,
    #[error("malformed bridge response: {0}")]
    Protocol(String),
    #[error("response id {got:?} does not match request {expected}")]
    IdMismatch { expected: u64, got: Option<u64> },
    #[error("bridge error {}: {}", .0.code, .0.message)]
    Remote(RemoteError),
}

impl From<BridgeError> for PolicyError {
    fn from(e: BridgeError) -> PolicyError {
        PolicyError::Failure(e.to_string())
    }
}

/// One request in flight at a time; responses arrive in request order.
pub struct BridgeClient<R, W> {
    reader: R,
    writer: W,
    next_id: u64,
}

impl<R: BufRead, W: Write> BridgeClient<R, W> {
    pub fn new(reader: R, writer: W) -> Self {
        BridgeClient { reader, writer, next_id: 1 }
    }

    pub fn call(&mut self, method: Method, params: Value) -> Result<Value, BridgeError> {
        let id = self.next_id;
        self.next_id += 1;
        let line = serde_json::to_string(&BridgeRequest { id, method, params }).expect("request serializes");
        self.writer.write_all(line.as_bytes())?;
        self.writer.write_all(b"\n")?;
        self.writer.flush()?;
        let mut buf = String::new();
        if self.reader.read_line(&mut buf)? == 0 {
            return Err(BridgeError::Closed);
        }
        let resp: BridgeResponse = serde_json::from_str(&buf).map_err(|e| BridgeError::Protocol(e.to_string()))?;
        if resp.id != Some(id) {
            return match resp.error {
                Some(e) if resp.id.is_none() => Err(BridgeError::Remote(e)),
                _ => Err(BridgeError::IdMismatch { expected: id, got: resp.id }),
            };
        }
        match (resp.result, resp.error) {
            (_, Some(e)) => Err(BridgeError::Remote(e)),
            (Some(v), None) => Ok(v),
            (None, None) => Err(BridgeError::Protocol("response has neither result nor error".into())),
        }
    }

    pub fn ping(&mut self) -> Result<(), BridgeError> {
        let v = self.call(Method::Ping, Value::Object(Default::default()))?;
        if v.get("ok") == Some(&Value::Bool(true)) {
            Ok(())
        } else {
            Err(BridgeError::Protocol(format!("unexpected ping result {v}")))
        }
    }

    pub fn score(&mut self, params: &ScoreParams) -> Result<f64, BridgeError> {
        let v = self.call(Method::Score, serde_json::to_value(params).expect("params serialize"))?;
        v.as_f64().ok_or_else(|| BridgeError::Protocol(format!("score result {v} is not a number")))
    }

    pub fn sample(&mut self, params: &SampleParams) -> Result<String, BridgeError> {
        let v = self.call(Method::Sample, serde_json::to_value(params).expect("params serialize"))?;
        text_result(v)
    }

    pub fn summarize(&mut self, params: &SummarizeParams) -> Result<String, BridgeError> {
        let v = self.call(Method::Summarize, serde_json::to_value(params).expect("params serialize"))?;
        text_result(v)
    }
}

fn text_result(v: Value) -> Result<String, BridgeError> {
    match v.get("text").and_then(Value::as_str) {
        Some(t) => Ok(t.to_string()),
        None => Err(BridgeError::Protocol(format!("result {v} has no text field"))),
    }
}

/// A client attached to a spawned adapter's stdio.
pub struct ChildBridge {
    pub client: BridgeClient<BufReader<ChildStdout>, ChildStdin>,
    child: Child,
}

impl ChildBridge {
    pub fn spawn(command: &[String]) -> Result<ChildBridge, BridgeError> {
        let (program, args) = command.split_first().ok_or(BridgeError::Closed)?;
        let mut child =
            Command::new(program).args(args).stdin(Stdio::piped()).stdout(Stdio::piped()).stderr(Stdio::inherit()).spawn()?;
        let stdin = child.stdin.take().ok_or(BridgeError::Closed)?;
        let stdout = child.stdout.take().ok_or(BridgeError::Closed)?;
        Ok(ChildBridge { client: BridgeClient::new(BufReader::new(stdout), stdin), child })
    }
}

impl Drop for ChildBridge {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// Rates skills for a query text by asking the bridged model for the
/// log-probability of the skill text after the query.
pub struct BridgeScorer<'a, R, W> {
    client: RefCell<&'a mut BridgeClient<R, W>>,
    render: fn(&SkillDocument) -> String,
}

impl<'a, R: BufRead, W: Write> BridgeScorer<'a, R, W> {
    /// Skills are sent as their canonical JSON.
    pub fn new(client: &'a mut BridgeClient<R, W>) -> Self {
        BridgeScorer { client: RefCell::new(client), render: |d| d.to_canonical_json() }
    }

    pub fn with_renderer(client: &'a mut BridgeClient<R, W>, render: fn(&SkillDocument) -> String) -> Self {
        BridgeScorer { client: RefCell::new(client), render }
    }
}

impl<R: BufRead, W: Write> SkillScorer<str> for BridgeScorer<'_, R, W> {
    fn score(&self, query: &str, doc: &SkillDocument, token_cap: usize) -> Result<f64, PolicyError> {
        let params = ScoreParams { context: query.to_string(), candidate: (self.render)(doc), cap: token_cap };
        Ok(self.client.borrow_mut().score(&params)?)
    }
}

pub mod echo {
    //! Deterministic adapter: whitespace tokenizer, uniform log-probs over a
    //! fixed vocabulary, prompt echo for sampling, and a canned skill for
    //! summaries.

    use super::*;

    pub const SKILL_FIXTURE: &str = r#"{"skill_name":"echo_fixture","problem_type":"general","key_insight":"Restate the question before answering it","method":["Name the quantity asked for","Answer it directly"],"check":"Substitute back to verify"}"#;

    #[derive(Debug, Clone, Copy, PartialEq)]
    pub struct EchoModel {
        pub vocab_size: usize,
    }

    impl Default for EchoModel {
        fn default() -> Self {
            EchoModel { vocab_size: 32 }
        }
    }

    fn params<T: for<'de> Deserialize<'de>>(v: Value) -> Result<T, String> {
        serde_json::from_value(v).map_err(|e| e.to_string())
    }

    fn first_tokens(text: &str, n: usize) -> String {
        text.split_whitespace().take(n).collect::<Vec<_>>().join(" ")
    }

    impl EchoModel {
        pub fn score(&self, p: &ScoreParams) -> f64 {
            let n = p.candidate.split_whitespace().take(p.cap).count();
            -(n as f64) * (self.vocab_size as f64).ln()
        }

        pub fn handle(&self, req: BridgeRequest) -> BridgeResponse {
            let id = req.id;
            let out = match req.method {
                Method::Ping => Ok(serde_json::json!({"ok": true})),
                Method::Score => params::<ScoreParams>(req.params).and_then(|p| {
                    if p.cap == 0 {
                        Err("cap must be at least 1".into())
                    } else {
                        Ok(serde_json::json!(self.score(&p)))
                    }
                }),
                Method::Sample => params::<SampleParams>(req.params)
                    .map(|p| serde_json::json!({"text": first_tokens(&p.prompt, p.max_tokens)})),
                Method::Summarize => params::<SummarizeParams>(req.params)
                    .map(|p| serde_json::json!({"text": first_tokens(SKILL_FIXTURE, p.max_tokens)})),
            };
            match out {
                Ok(v) => BridgeResponse::ok(id, v),
                Err(m) => BridgeResponse::err(Some(id), "invalid_params", m),
            }
        }

        /// Answers one request per line until EOF. Unparseable lines get an
        /// error response with a null id; the loop keeps going.
        pub fn serve<R: BufRead, W: Write>(&self, reader: R, mut writer: W) -> io::Result<()> {
            for line in reader.lines() {
                let line = match line {
                    Ok(l) => l,
                    Err(e) if e.kind() == io::ErrorKind::InvalidData => {
                        write_response(&mut writer, &BridgeResponse::err(None, "parse_error", "line is not UTF-8"))?;
                        continue;
                    }
                    Err(e) => return Err(e),
                };
                if line.trim().is_empty() {
                    continue;
                }
                let resp = match serde_json::from_str::<BridgeRequest>(&line) {
                    Ok(req) => self.handle(req),
                    Err(e) => BridgeResponse::err(None, "parse_error", e.to_string()),
                };
                write_response(&mut writer, &resp)?;
            }
            Ok(())
        }
    }

    fn write_response<W: Write>(w: &mut W, resp: &BridgeResponse) -> io::Result<()> {
        let line = serde_json::to_string(resp).expect("response serializes");
        w.write_all(line.as_bytes())?;
        w.write_all(b"\n")?;
        w.flush()
    }
}
