// SPDX-License-Identifier: Apache-2.0

//! Newline-delimited JSON run log.
//!
//! Every record is `{"step", "episode", "kind", "payload"}`. Terminal
//! `env_step` records and every `goal_sampled` record carry `buffer_size`,
//! the achieved-goal buffer length at that moment.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::Result;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    GoalSampled,
    EnvStep,
    Update,
    Eval,
    Checkpoint,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub step: u64,
    pub episode: u64,
    pub kind: EventKind,
    pub payload: Value,
}

/// Optional JSONL writer; a disabled sink drops records.
pub struct EventSink {
    out: Option<Box<dyn Write + Send>>,
    env_steps: bool,
    written: u64,
}

impl EventSink {
    pub fn disabled() -> Self {
        EventSink {
            out: None,
            env_steps: false,
            written: 0,
        }
    }

    pub fn new(out: Box<dyn Write + Send>, env_steps: bool) -> Self {
        EventSink {
            out: Some(out),
            env_steps,
            written: 0,
        }
    }

    pub fn is_enabled(&self) -> bool {
        self.out.is_some()
    }

    pub fn written(&self) -> u64 {
        self.written
    }

    pub fn emit(&mut self, step: u64, episode: u64, kind: EventKind, payload: Value) -> Result<()> {
        let Some(out) = self.out.as_mut() else {
            return Ok(());
        };
        if kind == EventKind::EnvStep && !self.env_steps {
            return Ok(());
        }
        let rec = Event {
            step,
            episode,
            kind,
            payload,
        };
        serde_json::to_writer(&mut *out, &rec)?;
        out.write_all(b"\n")?;
        self.written += 1;
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        if let Some(out) = self.out.as_mut() {
            out.flush()?;
        }
        Ok(())
    }
}

/// Aggregate view of a run log.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub steps: u64,
    pub episodes: u64,
    /// Simulations per stage of the step that launched them.
    pub sims_by_stage: BTreeMap<String, u64>,
    pub failed_steps: u64,
    /// `(step, buffer_size)` whenever the achieved-goal buffer was observed.
    pub buffer_trajectory: Vec<(u64, u64)>,
    pub best_sr: Option<f64>,
    pub evals: u64,
    pub records: u64,
    /// Set when the last line could not be parsed and was skipped.
    pub truncated_tail: bool,
}

#[derive(Debug, thiserror::Error)]
pub enum LogError {
    #[error("io error reading log: {0}")]
    Io(#[from] std::io::Error),
    #[error("corrupt record at line {line}: {msg}")]
    Corrupt { line: usize, msg: String },
}

/// Reads a run log. A malformed final line is tolerated; any other
/// malformed line is an error.
pub fn summarize<R: BufRead>(reader: R) -> std::result::Result<RunSummary, LogError> {
    let lines: Vec<String> = reader.lines().collect::<std::io::Result<_>>()?;
    let last_nonempty = lines.iter().rposition(|l| !l.trim().is_empty());
    let mut sum = RunSummary::default();
    let mut last_buffer: Option<u64> = None;
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let ev: Event = match serde_json::from_str(line) {
            Ok(ev) => ev,
            Err(_) if Some(i) == last_nonempty => {
                sum.truncated_tail = true;
                break;
            }
            Err(e) => {
                return Err(LogError::Corrupt {
                    line: i + 1,
                    msg: e.to_string(),
                })
            }
        };
        sum.records += 1;
        sum.steps = sum.steps.max(ev.step);
        let p = &ev.payload;
        match ev.kind {
            EventKind::GoalSampled => sum.episodes += 1,
            EventKind::EnvStep => {
                let stage = p.get("stage").and_then(Value::as_u64).unwrap_or(0);
                let sims = p.get("sim_count").and_then(Value::as_u64).unwrap_or(0);
                *sum.sims_by_stage.entry(format!("stage{stage}")).or_default() += sims;
                if p.get("failed").and_then(Value::as_bool).unwrap_or(false) {
                    sum.failed_steps += 1;
                }
            }
            EventKind::Eval => {
                sum.evals += 1;
                if let Some(sr) = p.get("sr").and_then(Value::as_f64) {
                    sum.best_sr = Some(sum.best_sr.map_or(sr, |b: f64| b.max(sr)));
                }
            }
            EventKind::Update | EventKind::Checkpoint => {}
        }
        if let Some(b) = p.get("buffer_size").and_then(Value::as_u64) {
            if last_buffer != Some(b) || sum.buffer_trajectory.is_empty() {
                sum.buffer_trajectory.push((ev.step, b));
            }
            last_buffer = Some(b);
        }
    }
    Ok(sum)
}
