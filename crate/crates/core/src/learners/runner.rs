//! Client for external model runners.
//!
//! A runner is a child process speaking newline-delimited JSON (protocol
//! version 1) over stdin/stdout:
//!
//! ```text
//! -> {"type":"handshake","version":1}
//! <- {"type":"handshake","version":1,"capabilities":["fit","predict"]}
//! -> {"type":"fit","id":1,"subset":[1,2],"x":[[...]],"y":[...],"task":"regression","seed":7}
//! <- {"type":"result","id":1,"ok":true}
//! -> {"type":"predict","id":2,"x":[[...]]}
//! <- {"type":"result","id":2,"predictions":[...]}
//! -> {"type":"shutdown"}
//! ```
//!
//! Any reply may instead be `{"type":"error","id":..,"message":..}`. Rows of
//! `x` always carry every feature; the runner selects the subset columns.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::Duration;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::Task;
use crate::error::{Result, SpvimError};
use crate::kernel::FeatureSubset;

pub const PROTOCOL_VERSION: u32 = 1;
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(120);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum RunnerMessage {
    Handshake {
        version: u32,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        capabilities: Option<Vec<String>>,
    },
    Fit {
        id: u64,
        subset: Vec<usize>,
        x: Vec<Vec<f64>>,
        y: Vec<f64>,
        task: Task,
        seed: u64,
    },
    Predict {
        id: u64,
        x: Vec<Vec<f64>>,
    },
    Result {
        id: u64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        ok: Option<bool>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        predictions: Option<Vec<f64>>,
    },
    Error {
        #[serde(default)]
        id: Option<u64>,
        message: String,
    },
    Shutdown,
}

impl RunnerMessage {
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("runner frames always serialize")
    }
}

fn rows(x: &DMatrix<f64>) -> Vec<Vec<f64>> {
    x.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// One live runner process. Requests are strictly sequential.
pub struct RunnerSession {
    child: Child,
    stdin: Option<BufWriter<ChildStdin>>,
    lines: Receiver<std::io::Result<String>>,
    next_id: u64,
    timeout: Duration,
    transcript: Option<Vec<String>>,
    capabilities: Vec<String>,
}

impl RunnerSession {
    /// Spawns the runner and completes the handshake.
    pub fn start(command: &str, args: &[String], timeout: Duration) -> Result<Self> {
        Self::spawn(command, args, timeout, false)
    }

    /// Like [`RunnerSession::start`], keeping a transcript of every frame.
    pub fn start_recorded(command: &str, args: &[String], timeout: Duration) -> Result<Self> {
        Self::spawn(command, args, timeout, true)
    }

    fn spawn(command: &str, args: &[String], timeout: Duration, record: bool) -> Result<Self> {
        let mut child = Command::new(command)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| SpvimError::Runner(format!("cannot start '{command}': {e}")))?;
        let stdin = BufWriter::new(child.stdin.take().expect("piped stdin"));
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                let stop = line.is_err();
                if tx.send(line).is_err() || stop {
                    break;
                }
            }
        });
        let mut session = Self {
            child,
            stdin: Some(stdin),
            lines: rx,
            next_id: 1,
            timeout,
            transcript: record.then(Vec::new),
            capabilities: Vec::new(),
        };
        session.send(&RunnerMessage::Handshake { version: PROTOCOL_VERSION, capabilities: None })?;
        match session.receive()? {
            RunnerMessage::Handshake { version: PROTOCOL_VERSION, capabilities } => {
                session.capabilities = capabilities.unwrap_or_default();
            }
            RunnerMessage::Handshake { version, .. } => {
                return Err(SpvimError::Runner(format!(
                    "runner speaks protocol version {version}, expected {PROTOCOL_VERSION}"
                )))
            }
            other => {
                return Err(SpvimError::RunnerProtocol {
                    message: "expected a handshake reply".into(),
                    frame: other.to_line(),
                })
            }
        }
        Ok(session)
    }

    pub fn capabilities(&self) -> &[String] {
        &self.capabilities
    }

    /// Every frame exchanged so far, prefixed `-> ` (sent) or `<- ` (received).
    /// Empty unless the session was started with `start_recorded`.
    pub fn transcript(&self) -> &[String] {
        self.transcript.as_deref().unwrap_or_default()
    }

    fn send(&mut self, msg: &RunnerMessage) -> Result<()> {
        let line = msg.to_line();
        let stdin = self.stdin.as_mut().ok_or_else(|| SpvimError::Runner("session is shut down".into()))?;
        writeln!(stdin, "{line}")
            .and_then(|_| stdin.flush())
            .map_err(|e| SpvimError::Runner(format!("runner closed its input: {e}")))?;
        if let Some(t) = &mut self.transcript {
            t.push(format!("-> {line}"));
        }
        Ok(())
    }

    fn receive(&mut self) -> Result<RunnerMessage> {
        let line = match self.lines.recv_timeout(self.timeout) {
            Ok(Ok(line)) => line,
            Ok(Err(e)) => return Err(SpvimError::Runner(format!("reading runner output: {e}"))),
            Err(RecvTimeoutError::Timeout) => {
                let _ = self.child.kill();
                return Err(SpvimError::Runner(format!("no reply within {:.1} s", self.timeout.as_secs_f64())));
            }
            Err(RecvTimeoutError::Disconnected) => {
                let status = self.child.wait().ok();
                return Err(SpvimError::Runner(format!(
                    "runner exited unexpectedly ({})",
                    status.map_or("unknown status".into(), |s| s.to_string())
                )));
            }
        };
        if let Some(t) = &mut self.transcript {
            t.push(format!("<- {line}"));
        }
        serde_json::from_str(&line)
            .map_err(|e| SpvimError::RunnerProtocol { message: format!("malformed frame: {e}"), frame: line.clone() })
    }

    fn request(&mut self, msg: RunnerMessage, id: u64) -> Result<RunnerMessage> {
        self.send(&msg)?;
        let reply = self.receive()?;
        match &reply {
            RunnerMessage::Error { message, .. } => {
                Err(SpvimError::Runner(format!("runner reported an error for request {id}: {message}")))
            }
            RunnerMessage::Result { id: got, .. } if *got == id => Ok(reply),
            other => Err(SpvimError::RunnerProtocol {
                message: format!("expected the result for request {id}"),
                frame: other.to_line(),
            }),
        }
    }

    fn take_id(&mut self) -> u64 {
        let id = self.next_id;
        self.next_id += 1;
        id
    }

    /// Fits a model on the subset columns of `x` (all columns are sent).
    pub fn fit(&mut self, subset: &FeatureSubset, x: &DMatrix<f64>, y: &[f64], task: Task, seed: u64) -> Result<()> {
        let id = self.take_id();
        let msg = RunnerMessage::Fit { id, subset: subset.indices().to_vec(), x: rows(x), y: y.to_vec(), task, seed };
        match self.request(msg, id)? {
            RunnerMessage::Result { ok: Some(true), .. } => Ok(()),
            other => Err(SpvimError::RunnerProtocol {
                message: "fit result without ok: true".into(),
                frame: other.to_line(),
            }),
        }
    }

    pub fn predict(&mut self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        let id = self.take_id();
        let rows = x.nrows();
        match self.request(RunnerMessage::Predict { id, x: self::rows(x) }, id)? {
            RunnerMessage::Result { predictions: Some(p), .. } if p.len() == rows => {
                if p.iter().all(|v| v.is_finite()) {
                    Ok(p)
                } else {
                    Err(SpvimError::Runner("runner returned non-finite predictions".into()))
                }
            }
            other => Err(SpvimError::RunnerProtocol {
                message: format!("expected {rows} predictions"),
                frame: other.to_line(),
            }),
        }
    }

    /// Sends `shutdown` and waits for the process to exit.
    pub fn shutdown(mut self) -> Result<()> {
        self.send(&RunnerMessage::Shutdown)?;
        self.stdin = None;
        let status = self.child.wait()?;
        if status.success() {
            Ok(())
        } else {
            Err(SpvimError::Runner(format!("runner exited with {status}")))
        }
    }
}

impl Drop for RunnerSession {
    fn drop(&mut self) {
        if self.stdin.is_some() {
            let _ = self.send(&RunnerMessage::Shutdown);
            self.stdin = None;
            // give a well-behaved runner a moment, then make sure it is gone
            for _ in 0..20 {
                if let Ok(Some(_)) = self.child.try_wait() {
                    return;
                }
                thread::sleep(Duration::from_millis(5));
            }
            let _ = self.child.kill();
            let _ = self.child.wait();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frames_serialize_in_protocol_shape() {
        let hs = RunnerMessage::Handshake { version: 1, capabilities: None };
        assert_eq!(hs.to_line(), r#"{"type":"handshake","version":1}"#);
        let fit = RunnerMessage::Fit {
            id: 3,
            subset: vec![1, 2],
            x: vec![vec![0.5, 1.0]],
            y: vec![2.0],
            task: Task::Regression,
            seed: 9,
        };
        assert_eq!(
            fit.to_line(),
            r#"{"type":"fit","id":3,"subset":[1,2],"x":[[0.5,1.0]],"y":[2.0],"task":"regression","seed":9}"#
        );
        assert_eq!(RunnerMessage::Shutdown.to_line(), r#"{"type":"shutdown"}"#);
    }

    #[test]
    fn replies_parse() {
        let r: RunnerMessage = serde_json::from_str(r#"{"type":"result","id":2,"predictions":[1.5,2]}"#).unwrap();
        assert_eq!(r, RunnerMessage::Result { id: 2, ok: None, predictions: Some(vec![1.5, 2.0]) });
        let e: RunnerMessage = serde_json::from_str(r#"{"type":"error","id":4,"message":"boom"}"#).unwrap();
        assert!(matches!(e, RunnerMessage::Error { id: Some(4), .. }));
        assert!(serde_json::from_str::<RunnerMessage>(r#"{"type":"bogus"}"#).is_err());
    }

    #[test]
    fn missing_command_is_a_runner_error() {
        let err = RunnerSession::start("/nonexistent/runner", &[], Duration::from_secs(1)).err().unwrap();
        assert_eq!(err.class(), crate::error::ErrorClass::Runner);
    }
}
