//! Client for simulators running as a separate process.
//!
//! Protocol (line oriented, UTF-8, `.` decimal separator):
//! the client sends `SEQCAL/1` and expects `OK`; then, per evaluation, it
//! sends `q p x₁ … x_q θ₁ … θ_p` in natural units and reads back one line
//! holding a single number. The child stays alive across evaluations.

use std::io::{BufRead, BufReader, Write};
use std::path::PathBuf;
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::Simulator;
use crate::error::SimError;
use crate::space::{BoxScaling, JointInput};

pub const PROTOCOL_HEADER: &str = "SEQCAL/1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExternalSimSpec {
    /// Program followed by its arguments.
    pub command: Vec<String>,
    pub working_dir: Option<PathBuf>,
    pub timeout: Duration,
    pub q: usize,
    pub p: usize,
    /// Natural-unit box; inputs are sent unscaled when absent.
    pub scaling: Option<BoxScaling>,
}

struct Process {
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<std::io::Result<String>>,
}

impl Drop for Process {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// A persistent external simulator. A failed exchange tears the child down;
/// the next evaluation starts a fresh one.
pub struct ExternalSim {
    spec: ExternalSimSpec,
    process: Option<Process>,
}

impl ExternalSim {
    pub fn new(spec: ExternalSimSpec) -> Result<Self, SimError> {
        if spec.command.is_empty() {
            return Err(SimError::InvalidInput("empty simulator command".into()));
        }
        if spec.timeout.is_zero() {
            return Err(SimError::InvalidInput("simulator timeout must be positive".into()));
        }
        Ok(Self { spec, process: None })
    }

    /// Launches the child and completes the handshake.
    pub fn spawn(spec: ExternalSimSpec) -> Result<Self, SimError> {
        let mut sim = Self::new(spec)?;
        sim.ensure_running()?;
        Ok(sim)
    }

    pub fn spec(&self) -> &ExternalSimSpec {
        &self.spec
    }

    fn ensure_running(&mut self) -> Result<&mut Process, SimError> {
        if self.process.is_none() {
            let mut cmd = Command::new(&self.spec.command[0]);
            cmd.args(&self.spec.command[1..])
                .stdin(Stdio::piped())
                .stdout(Stdio::piped())
                .stderr(Stdio::inherit());
            if let Some(dir) = &self.spec.working_dir {
                cmd.current_dir(dir);
            }
            let mut child = cmd.spawn().map_err(SimError::Spawn)?;
            let stdin = child.stdin.take().expect("stdin is piped");
            let stdout = child.stdout.take().expect("stdout is piped");
            let (tx, rx) = mpsc::channel();
            thread::spawn(move || {
                for line in BufReader::new(stdout).lines() {
                    let stop = line.is_err();
                    if tx.send(line).is_err() || stop {
                        break;
                    }
                }
            });
            let mut proc = Process { child, stdin, lines: rx };
            let reply = exchange(&mut proc, PROTOCOL_HEADER, self.spec.timeout)?;
            if reply.trim() != "OK" {
                return Err(SimError::SimProtocol(format!("unexpected handshake reply {reply:?}")));
            }
            self.process = Some(proc);
        }
        Ok(self.process.as_mut().expect("process just started"))
    }

    /// Evaluates at a joint input given in scaled units.
    pub fn eval(&mut self, z: &JointInput) -> Result<f64, SimError> {
        if z.q() != self.spec.q || z.p() != self.spec.p {
            return Err(SimError::InvalidInput(format!(
                "expected q={} p={}, got q={} p={}",
                self.spec.q,
                self.spec.p,
                z.q(),
                z.p()
            )));
        }
        let values = match &self.spec.scaling {
            Some(s) => s.from_unit(z.as_slice()),
            None => z.as_slice().to_vec(),
        };
        let mut line = format!("{} {}", self.spec.q, self.spec.p);
        for v in &values {
            line.push(' ');
            line.push_str(&v.to_string());
        }
        let timeout = self.spec.timeout;
        let result = self.ensure_running().and_then(|proc| exchange(proc, &line, timeout)).and_then(|reply| {
            let t = reply.trim();
            match t.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(SimError::SimProtocol(format!("expected a number, got {t:?}"))),
            }
        });
        if result.is_err() {
            self.process = None;
        }
        result
    }
}

impl Simulator for ExternalSim {
    fn q(&self) -> usize {
        self.spec.q
    }

    fn p(&self) -> usize {
        self.spec.p
    }

    fn evaluate(&mut self, z: &JointInput) -> Result<f64, SimError> {
        self.eval(z)
    }
}

fn exchange(proc: &mut Process, line: &str, timeout: Duration) -> Result<String, SimError> {
    if let Err(err) = writeln!(proc.stdin, "{line}").and_then(|_| proc.stdin.flush()) {
        return Err(exit_error(proc).unwrap_or(SimError::Io(err)));
    }
    match proc.lines.recv_timeout(timeout) {
        Ok(Ok(reply)) => Ok(reply),
        Ok(Err(err)) => Err(SimError::Io(err)),
        Err(RecvTimeoutError::Timeout) => Err(SimError::SimTimeout(timeout)),
        Err(RecvTimeoutError::Disconnected) => Err(exit_error(proc).unwrap_or(SimError::SimCrashed(None))),
    }
}

/// The child's exit status, waiting briefly for it to finish.
fn exit_error(proc: &mut Process) -> Option<SimError> {
    for _ in 0..50 {
        match proc.child.try_wait() {
            Ok(Some(status)) => return Some(SimError::SimCrashed(status.code())),
            Ok(None) => thread::sleep(Duration::from_millis(10)),
            Err(_) => return None,
        }
    }
    None
}
