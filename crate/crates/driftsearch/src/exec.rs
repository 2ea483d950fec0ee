//! Out-of-process validator. The executor is a long-running child process
//! that answers one JSON request per line on stdin with one JSON response
//! per line on stdout.

use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::Duration;

use driftsearch_core::search::{BackendFailure, Validator};
use driftsearch_core::{EnvironmentSpec, Runtime, ValidationResult};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

pub const EXECUTOR_ENV: &str = "V2_EXECUTOR_CMD";

#[derive(Debug, Error)]
pub enum ExecError {
    #[error("{EXECUTOR_ENV} is not set")]
    NotConfigured,
    #[error("cannot start executor `{cmd}`: {source}")]
    Spawn { cmd: String, source: std::io::Error },
    #[error("executor closed its output")]
    Closed,
    #[error("executor did not answer within {0:?}")]
    Unresponsive(Duration),
    #[error("executor sent an unreadable line: {0}")]
    Desync(String),
    #[error("executor reported: {0}")]
    Reported(String),
    #[error("executor io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Serialize)]
#[serde(tag = "op", rename_all = "lowercase")]
enum Request<'a> {
    Detect { snippet: &'a Path },
    Validate { snippet: &'a Path, runtime: Runtime, deps: Vec<(&'a str, &'a str)>, timeout: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
pub struct Detection {
    pub runtimes: Vec<Runtime>,
    #[serde(default)]
    pub imports: Vec<String>,
}

struct Running {
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<std::io::Result<String>>,
}

impl Drop for Running {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// A handle on the executor process, started lazily and restarted after
/// any protocol desync.
pub struct Executor {
    cmd: String,
    /// Extra time allowed beyond a request's own timeout before the
    /// executor is considered hung.
    grace: Duration,
    running: Option<Running>,
    restarts: u32,
}

impl Executor {
    pub fn new(cmd: impl Into<String>) -> Self {
        Executor { cmd: cmd.into(), grace: Duration::from_secs(30), running: None, restarts: 0 }
    }

    pub fn from_env() -> Result<Self, ExecError> {
        match std::env::var(EXECUTOR_ENV) {
            Ok(cmd) if !cmd.trim().is_empty() => Ok(Executor::new(cmd)),
            _ => Err(ExecError::NotConfigured),
        }
    }

    pub fn with_grace(mut self, grace: Duration) -> Self {
        self.grace = grace;
        self
    }

    /// How many times the process was replaced after a failure.
    pub fn restarts(&self) -> u32 {
        self.restarts
    }

    fn spawn(&self) -> Result<Running, ExecError> {
        let mut child = shell(&self.cmd)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|source| ExecError::Spawn { cmd: self.cmd.clone(), source })?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, lines) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        Ok(Running { child, stdin, lines })
    }

    fn exchange(&mut self, line: &str, wait: Duration) -> Result<Value, ExecError> {
        if self.running.is_none() {
            self.running = Some(self.spawn()?);
        }
        let running = self.running.as_mut().expect("just started");
        writeln!(running.stdin, "{line}")?;
        running.stdin.flush()?;
        let reply = match running.lines.recv_timeout(wait) {
            Ok(reply) => reply?,
            Err(RecvTimeoutError::Timeout) => return Err(ExecError::Unresponsive(wait)),
            Err(RecvTimeoutError::Disconnected) => return Err(ExecError::Closed),
        };
        let value: Value = serde_json::from_str(&reply).map_err(|_| ExecError::Desync(reply.clone()))?;
        if let Some(message) = value.get("error").and_then(Value::as_str) {
            return Err(ExecError::Reported(message.to_string()));
        }
        Ok(value)
    }

    /// Sends one request, restarting the process and retrying once if the
    /// stream breaks. A reported error is the executor's answer and is not retried.
    fn request(&mut self, req: &Request<'_>, wait: Duration) -> Result<Value, ExecError> {
        let line = serde_json::to_string(req).expect("requests serialize");
        let mut attempt = 0;
        loop {
            match self.exchange(&line, wait) {
                Ok(v) => return Ok(v),
                Err(e @ ExecError::Reported(_)) => return Err(e),
                Err(e) => {
                    log::warn!("executor failed ({e}); restarting");
                    self.running = None;
                    self.restarts += 1;
                    attempt += 1;
                    if attempt > 1 || matches!(e, ExecError::Spawn { .. }) {
                        return Err(e);
                    }
                }
            }
        }
    }

    pub fn detect(&mut self, snippet: &Path) -> Result<Detection, ExecError> {
        let value = self.request(&Request::Detect { snippet }, self.grace)?;
        serde_json::from_value(value.clone()).map_err(|_| ExecError::Desync(value.to_string()))
    }

    pub fn validate(&mut self, snippet: &Path, env: &EnvironmentSpec, timeout: Duration) -> Result<ValidationResult, ExecError> {
        let req = Request::Validate {
            snippet,
            runtime: env.runtime,
            deps: env.deps.iter().map(|p| (p.package.as_str(), p.version.as_str())).collect(),
            timeout: timeout.as_secs(),
        };
        let value = self.request(&req, timeout + self.grace)?;
        serde_json::from_value(value.clone()).map_err(|_| ExecError::Desync(value.to_string()))
    }
}

#[cfg(unix)]
fn shell(cmd: &str) -> Command {
    let mut c = Command::new("sh");
    c.arg("-c").arg(cmd);
    c
}

#[cfg(not(unix))]
fn shell(cmd: &str) -> Command {
    let mut c = Command::new("cmd");
    c.arg("/C").arg(cmd);
    c
}

/// Validates one snippet file through an [`Executor`].
pub struct ExecValidator {
    pub executor: Executor,
    pub snippet: PathBuf,
    pub timeout: Duration,
}

impl Validator for ExecValidator {
    fn validate(&mut self, env: &EnvironmentSpec) -> Result<ValidationResult, BackendFailure> {
        let result = self
            .executor
            .validate(&self.snippet, env, self.timeout)
            .map_err(|e| BackendFailure::Backend(e.to_string()))?;
        result.check()?;
        Ok(result)
    }
}
