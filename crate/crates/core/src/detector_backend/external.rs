//! Newline-delimited JSON over a child process's stdin/stdout.
//!
//! Each request is one line `{"image": path, "task": "scene"|"components"|"damage"}`
//! and is answered by exactly one line: `{"scene": name, "confidence": c}` for
//! the scene task or a detection JSON document for the other two. A response
//! may echo `"task"`; if it does, the echo must match. stderr is inherited.

use std::io::{BufRead, BufReader, Write};
use std::path::PathBuf;
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{Backend, BackendError, BackendRequest, BackendResponse, Task};
use crate::dataset_io::{
    detections_from_value, reject_unknown_keys, ComponentDetection, DamageDetection, ImageEntry,
    Scene, SceneLabel,
};

pub const DEFAULT_TIMEOUT_SECS: f64 = 30.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendConfig {
    /// Program followed by its arguments.
    pub command: Vec<String>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
}

fn default_timeout() -> f64 {
    DEFAULT_TIMEOUT_SECS
}

impl BackendConfig {
    pub fn new(command: Vec<String>) -> Self {
        Self {
            command,
            timeout_secs: DEFAULT_TIMEOUT_SECS,
        }
    }
}

/// A serial channel to one backend process. Requests on a handle are strictly
/// ordered; spawn more handles for parallelism.
pub struct ExternalBackend {
    child: Child,
    stdin: Option<ChildStdin>,
    lines: Receiver<std::io::Result<String>>,
    timeout: Duration,
    root: PathBuf,
}

impl ExternalBackend {
    pub fn spawn(config: &BackendConfig) -> Result<Self, BackendError> {
        let (program, args) = config
            .command
            .split_first()
            .ok_or_else(|| BackendError::Unavailable("backend.command is empty".into()))?;
        if !(config.timeout_secs.is_finite() && config.timeout_secs > 0.0) {
            return Err(BackendError::Unavailable(
                "backend.timeout_secs must be positive".into(),
            ));
        }
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| BackendError::Unavailable(format!("failed to spawn {program:?}: {e}")))?;

        let stdin = child.stdin.take();
        let stdout = child
            .stdout
            .take()
            .ok_or_else(|| BackendError::Unavailable("child stdout unavailable".into()))?;

        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            let mut reader = BufReader::new(stdout);
            loop {
                let mut line = String::new();
                match reader.read_line(&mut line) {
                    Ok(0) => break,
                    Ok(_) => {
                        if tx.send(Ok(line)).is_err() {
                            break;
                        }
                    }
                    Err(e) => {
                        let _ = tx.send(Err(e));
                        break;
                    }
                }
            }
        });

        Ok(Self {
            child,
            stdin,
            lines: rx,
            timeout: Duration::from_secs_f64(config.timeout_secs),
            root: PathBuf::new(),
        })
    }

    /// Base directory for relative `image_path` entries.
    pub fn with_root(mut self, root: PathBuf) -> Self {
        self.root = root;
        self
    }

    /// Sends one request line and reads back one validated response line.
    pub fn exchange(&mut self, request: &BackendRequest) -> Result<BackendResponse, BackendError> {
        let mut line = serde_json::to_string(request)
            .map_err(|e| BackendError::ProtocolViolation(e.to_string()))?;
        line.push('\n');

        let written = match self.stdin.as_mut() {
            Some(stdin) => stdin
                .write_all(line.as_bytes())
                .and_then(|()| stdin.flush())
                .is_ok(),
            None => false,
        };
        if !written {
            self.stdin = None;
            return Err(self.exited());
        }

        match self.lines.recv_timeout(self.timeout) {
            Ok(Ok(reply)) => parse_response(reply.trim_end(), request.task),
            Ok(Err(e)) => Err(BackendError::ProtocolViolation(format!("read failed: {e}"))),
            Err(RecvTimeoutError::Timeout) => {
                // the stream is out of sync now; the process cannot be reused
                self.stdin = None;
                let _ = self.child.kill();
                let _ = self.child.wait();
                Err(BackendError::Timeout(self.timeout))
            }
            Err(RecvTimeoutError::Disconnected) => Err(self.exited()),
        }
    }

    fn exited(&mut self) -> BackendError {
        match self.child.wait() {
            Ok(status) => BackendError::ProcessExited(status.code()),
            Err(_) => BackendError::ProcessExited(None),
        }
    }

    fn request_for(&self, entry: &ImageEntry, task: Task) -> Result<BackendRequest, BackendError> {
        let rel = entry
            .image_path
            .as_ref()
            .ok_or(BackendError::MissingEvidence(task))?;
        let image = if rel.is_absolute() {
            rel.clone()
        } else {
            self.root.join(rel)
        };
        Ok(BackendRequest {
            image: image.to_string_lossy().into_owned(),
            task,
        })
    }
}

impl Drop for ExternalBackend {
    fn drop(&mut self) {
        self.stdin = None;
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

fn parse_response(line: &str, task: Task) -> Result<BackendResponse, BackendError> {
    let violation = |msg: String| BackendError::ProtocolViolation(msg);
    let mut value: Value =
        serde_json::from_str(line).map_err(|e| violation(format!("malformed JSON: {e}")))?;
    let obj = value
        .as_object_mut()
        .ok_or_else(|| violation("response is not a JSON object".into()))?;

    if let Some(err) = obj.get("error") {
        return Err(violation(format!("backend reported error: {err}")));
    }
    if let Some(echo) = obj.remove("task") {
        if echo.as_str() != Some(task.name()) {
            return Err(violation(format!(
                "task echo {echo} does not match request {:?}",
                task.name()
            )));
        }
    }

    match task {
        Task::Scene => {
            reject_unknown_keys(obj, &["scene", "confidence"], "")
                .map_err(|e| violation(e.to_string()))?;
            let class: Scene = obj
                .get("scene")
                .and_then(Value::as_str)
                .ok_or_else(|| violation("missing string field \"scene\"".into()))?
                .parse()
                .map_err(|e: crate::dataset_io::DatasetError| violation(e.to_string()))?;
            let confidence = obj
                .get("confidence")
                .and_then(Value::as_f64)
                .ok_or_else(|| violation("missing numeric field \"confidence\"".into()))?;
            SceneLabel::new(class, confidence)
                .map(BackendResponse::Scene)
                .map_err(violation)
        }
        Task::Components => detections_from_value::<crate::dataset_io::ComponentClass>(&value)
            .map(BackendResponse::Components)
            .map_err(|e| violation(e.to_string())),
        Task::Damage => detections_from_value::<crate::dataset_io::DamageClass>(&value)
            .map(BackendResponse::Damage)
            .map_err(|e| violation(e.to_string())),
    }
}

fn unexpected(task: Task) -> BackendError {
    BackendError::ProtocolViolation(format!("response does not answer task {task}"))
}

impl Backend for ExternalBackend {
    fn scene(&mut self, entry: &ImageEntry) -> Result<SceneLabel, BackendError> {
        let req = self.request_for(entry, Task::Scene)?;
        match self.exchange(&req)? {
            BackendResponse::Scene(s) => Ok(s),
            _ => Err(unexpected(Task::Scene)),
        }
    }

    fn components(&mut self, entry: &ImageEntry) -> Result<Vec<ComponentDetection>, BackendError> {
        let req = self.request_for(entry, Task::Components)?;
        match self.exchange(&req)? {
            BackendResponse::Components(c) => Ok(c),
            _ => Err(unexpected(Task::Components)),
        }
    }

    fn damage(&mut self, entry: &ImageEntry) -> Result<Vec<DamageDetection>, BackendError> {
        let req = self.request_for(entry, Task::Damage)?;
        match self.exchange(&req)? {
            BackendResponse::Damage(d) => Ok(d),
            _ => Err(unexpected(Task::Damage)),
        }
    }
}
