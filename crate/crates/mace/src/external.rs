//! Subprocess evaluator speaking JSON lines.
//!
//! For each batch the harness starts `min(B, max_parallel)` copies of the
//! command, deals the points out round-robin and writes one request per line
//! to each child's stdin:
//!
//! ```text
//! {"id":0,"x":[0.25,0.5]}
//! ```
//!
//! and then closes stdin. The child answers each request with one line, in
//! any order:
//!
//! ```text
//! {"id":0,"y":1.25,"c":[-0.1]}
//! ```
//!
//! `c` may be omitted for unconstrained problems. Each reply must arrive
//! within the timeout of the previous one; a point without a reply is marked
//! as faulted and the run continues.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, Command, Stdio};
use std::sync::mpsc;
use std::thread;
use std::time::{Duration, Instant};

use mace_core::engine::{Evaluation, Evaluator, Fault, FaultKind, Observation};
use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Serialize)]
struct Request<'a> {
    id: usize,
    x: &'a [f64],
}

#[derive(Deserialize)]
struct Reply {
    id: usize,
    y: Option<f64>,
    #[serde(default)]
    c: Option<Vec<Option<f64>>>,
}

/// Parses a reply line. Bare `NaN`/`Infinity` tokens, which some simulators
/// print, are read as non-finite values so the point faults instead of the
/// whole child.
fn parse_reply(line: &str) -> Result<(usize, f64, Vec<f64>), String> {
    let reply: Reply = match serde_json::from_str(line) {
        Ok(r) => r,
        Err(first) => {
            let patched = line
                .replace("-Infinity", "null")
                .replace("Infinity", "null")
                .replace("NaN", "null");
            let value: Value = serde_json::from_str(&patched).map_err(|_| first.to_string())?;
            serde_json::from_value(value).map_err(|e| e.to_string())?
        }
    };
    let y = reply.y.unwrap_or(f64::NAN);
    let c = reply
        .c
        .unwrap_or_default()
        .into_iter()
        .map(|v| v.unwrap_or(f64::NAN))
        .collect();
    Ok((reply.id, y, c))
}

#[derive(Debug, Clone)]
pub struct ExternalEvaluator {
    command: String,
    max_parallel: Option<usize>,
    timeout: Duration,
}

enum Event {
    Line(String),
    Closed,
}

impl ExternalEvaluator {
    /// `command` is run through `sh -c`.
    pub fn new(command: impl Into<String>, timeout: Duration) -> Self {
        Self {
            command: command.into(),
            max_parallel: None,
            timeout,
        }
    }

    pub fn with_max_parallel(mut self, max_parallel: Option<usize>) -> Self {
        self.max_parallel = max_parallel;
        self
    }

    fn spawn(&self) -> std::io::Result<Child> {
        Command::new("sh")
            .arg("-c")
            .arg(&self.command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
    }

    /// Evaluates the points whose batch indices are `ids` on one child.
    fn run_worker(&self, points: &[Vec<f64>], ids: &[usize]) -> Vec<(usize, Evaluation)> {
        let start = Instant::now();
        let fault_all = |kind: FaultKind, detail: String| {
            ids.iter()
                .map(|&id| {
                    (
                        id,
                        Evaluation {
                            outcome: Err(Fault::new(kind, detail.clone())),
                            wall_ms: 0.0,
                        },
                    )
                })
                .collect::<Vec<_>>()
        };
        let mut child = match self.spawn() {
            Ok(c) => c,
            Err(e) => return fault_all(FaultKind::Exited, format!("spawn failed: {e}")),
        };
        let mut stdin = child.stdin.take().expect("piped stdin");
        let requests: String = ids
            .iter()
            .map(|&id| {
                let mut line = serde_json::to_string(&Request { id, x: &points[id] }).expect("request serializes");
                line.push('\n');
                line
            })
            .collect();
        // written from a thread so a child that answers before reading
        // everything cannot deadlock on a full pipe
        let writer = thread::spawn(move || {
            let _ = stdin.write_all(requests.as_bytes());
        });
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, rx) = mpsc::channel();
        let reader = thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                match line {
                    Ok(l) => {
                        if tx.send(Event::Line(l)).is_err() {
                            return;
                        }
                    }
                    Err(_) => break,
                }
            }
            let _ = tx.send(Event::Closed);
        });

        let mut pending: Vec<usize> = ids.to_vec();
        let mut done = Vec::with_capacity(ids.len());
        let mut failure: Option<Fault> = None;
        while !pending.is_empty() {
            match rx.recv_timeout(self.timeout) {
                Ok(Event::Line(line)) => {
                    if line.trim().is_empty() {
                        continue;
                    }
                    let wall_ms = start.elapsed().as_secs_f64() * 1e3;
                    match parse_reply(&line) {
                        Ok((id, y, c)) => match pending.iter().position(|&p| p == id) {
                            Some(pos) => {
                                pending.swap_remove(pos);
                                let outcome = if y.is_finite() && c.iter().all(|v| v.is_finite()) {
                                    Ok(Observation { y, constraints: c })
                                } else {
                                    Err(Fault::new(FaultKind::NonFinite, format!("non-finite reply: {line}")))
                                };
                                done.push((id, Evaluation { outcome, wall_ms }));
                            }
                            None => {
                                failure = Some(Fault::new(FaultKind::Protocol, format!("unexpected id {id}")));
                                break;
                            }
                        },
                        Err(e) => {
                            failure = Some(Fault::new(
                                FaultKind::Protocol,
                                format!("malformed reply `{line}`: {e}"),
                            ));
                            break;
                        }
                    }
                }
                Ok(Event::Closed) | Err(mpsc::RecvTimeoutError::Disconnected) => {
                    let status = child.wait().map(|s| s.to_string()).unwrap_or_else(|e| e.to_string());
                    failure = Some(Fault::new(
                        FaultKind::Exited,
                        format!("evaluator exited early ({status})"),
                    ));
                    break;
                }
                Err(mpsc::RecvTimeoutError::Timeout) => {
                    failure = Some(Fault::new(
                        FaultKind::Timeout,
                        format!("no reply within {:.3} s", self.timeout.as_secs_f64()),
                    ));
                    break;
                }
            }
        }
        if let Some(fault) = failure {
            log::warn!("{}: {} point(s) faulted: {}", self.command, pending.len(), fault.detail);
            let wall_ms = start.elapsed().as_secs_f64() * 1e3;
            done.extend(pending.into_iter().map(|id| {
                (
                    id,
                    Evaluation {
                        outcome: Err(fault.clone()),
                        wall_ms,
                    },
                )
            }));
        }
        let _ = child.kill();
        let _ = child.wait();
        let _ = writer.join();
        let _ = reader.join();
        done
    }
}

impl Evaluator for ExternalEvaluator {
    fn evaluate_batch(&mut self, points: &[Vec<f64>]) -> Vec<Evaluation> {
        if points.is_empty() {
            return Vec::new();
        }
        let workers = self.max_parallel.map_or(points.len(), |p| p.min(points.len())).max(1);
        let assignments: Vec<Vec<usize>> = (0..workers)
            .map(|w| (w..points.len()).step_by(workers).collect())
            .collect();
        let this = &*self;
        let mut results: Vec<Option<Evaluation>> = vec![None; points.len()];
        thread::scope(|scope| {
            let handles: Vec<_> = assignments
                .iter()
                .map(|ids| scope.spawn(move || this.run_worker(points, ids)))
                .collect();
            for h in handles {
                for (id, ev) in h.join().expect("worker thread") {
                    results[id] = Some(ev);
                }
            }
        });
        results
            .into_iter()
            .map(|r| {
                r.unwrap_or(Evaluation {
                    outcome: Err(Fault::new(FaultKind::Other, "no result")),
                    wall_ms: 0.0,
                })
            })
            .collect()
    }
}
