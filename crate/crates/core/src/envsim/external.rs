// SPDX-License-Identifier: Apache-2.0

//! Newline-delimited JSON adapter for out-of-process simulators.
//!
//! The child first prints a handshake line
//! `{"hello": {"L": .., "M": .., "metrics": [..]}}`. Each request line is
//! `{"id": n, "params": {name: physical}, "corner": {"process": .., "vdd_scale": .., "temp_c": ..}}`
//! and is answered by `{"id": n, "metrics": {name: value}}` or
//! `{"id": n, "error": ".."}`. Responses may arrive in any order; they are
//! matched by id. All corners of one step are written before any response
//! is read so the simulator can evaluate them concurrently.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, BufReader, Write};
use std::process::{Child, Command, Stdio};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::envsim::{CircuitModel, CornerId, DesignState, ParamDef};
use crate::error::{Error, Result};
use crate::goalspace::SpecSchema;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hello {
    #[serde(rename = "L")]
    pub l: usize,
    #[serde(rename = "M")]
    pub m: usize,
    pub metrics: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HelloLine {
    pub hello: Hello,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Request {
    pub id: u64,
    pub params: BTreeMap<String, f64>,
    pub corner: CornerId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Response {
    Metrics { id: u64, metrics: BTreeMap<String, f64> },
    Error { id: u64, error: String },
}

impl Response {
    pub fn id(&self) -> u64 {
        match self {
            Response::Metrics { id, .. } | Response::Error { id, .. } => *id,
        }
    }
}

struct Session {
    writer: Box<dyn Write + Send>,
    reader: Box<dyn BufRead + Send>,
    next_id: u64,
    broken: Option<String>,
}

impl Session {
    fn read_line(&mut self) -> Result<String> {
        let mut line = String::new();
        loop {
            line.clear();
            let n = self.reader.read_line(&mut line)?;
            if n == 0 {
                return Err(Error::Simulator("simulator closed its output stream".into()));
            }
            if !line.trim().is_empty() {
                return Ok(line);
            }
        }
    }
}

pub struct ExternalSimulator {
    params: Vec<ParamDef>,
    schema: SpecSchema,
    session: Mutex<Session>,
    child: Option<Mutex<Child>>,
}

impl ExternalSimulator {
    /// Launches `command[0]` with the remaining arguments and performs the
    /// handshake.
    pub fn spawn(command: &[String], params: Vec<ParamDef>, schema: SpecSchema) -> Result<Self> {
        let (prog, args) = command
            .split_first()
            .ok_or_else(|| Error::Simulator("empty simulator command".into()))?;
        let mut child = Command::new(prog)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::Simulator(format!("cannot launch {prog}: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let mut sim = Self::from_streams(BufReader::new(stdout), stdin, params, schema)?;
        sim.child = Some(Mutex::new(child));
        Ok(sim)
    }

    /// Runs the handshake over arbitrary streams.
    pub fn from_streams<R, W>(reader: R, writer: W, params: Vec<ParamDef>, schema: SpecSchema) -> Result<Self>
    where
        R: BufRead + Send + 'static,
        W: Write + Send + 'static,
    {
        let mut session = Session {
            writer: Box::new(writer),
            reader: Box::new(reader),
            next_id: 0,
            broken: None,
        };
        let line = session.read_line()?;
        let hello: HelloLine = serde_json::from_str(&line)
            .map_err(|e| Error::Simulator(format!("bad handshake {:?}: {e}", line.trim())))?;
        let hello = hello.hello;
        if hello.l != params.len() {
            return Err(Error::dim("simulator parameter count", params.len(), hello.l));
        }
        if hello.m != schema.len() || hello.metrics.len() != schema.len() {
            return Err(Error::dim("simulator metric count", schema.len(), hello.m));
        }
        for name in schema.names() {
            if !hello.metrics.contains(&name) {
                return Err(Error::Simulator(format!("simulator does not report metric {name:?}")));
            }
        }
        Ok(ExternalSimulator {
            params,
            schema,
            session: Mutex::new(session),
            child: None,
        })
    }

    fn request_for(&self, id: u64, state: &DesignState, corner: &CornerId) -> Request {
        let params = self
            .params
            .iter()
            .zip(state.physical(&self.params))
            .map(|(p, v)| (p.name.clone(), v))
            .collect();
        Request {
            id,
            params,
            corner: corner.clone(),
        }
    }

    fn decode(&self, r: Response) -> Result<Vec<f64>> {
        match r {
            Response::Error { error, .. } => Err(Error::Simulator(error)),
            Response::Metrics { metrics, .. } => self
                .schema
                .specs()
                .iter()
                .map(|s| {
                    metrics
                        .get(&s.name)
                        .copied()
                        .ok_or_else(|| Error::Simulator(format!("response lacks metric {:?}", s.name)))
                })
                .collect(),
        }
    }

    fn exchange(&self, state: &DesignState, corners: &[CornerId]) -> Result<Vec<Result<Vec<f64>>>> {
        let mut s = self.session.lock().expect("session lock poisoned");
        if let Some(why) = &s.broken {
            return Err(Error::Simulator(why.clone()));
        }
        let first = s.next_id;
        s.next_id += corners.len() as u64;
        let mut out = String::new();
        for (k, c) in corners.iter().enumerate() {
            out.push_str(&serde_json::to_string(&self.request_for(first + k as u64, state, c))?);
            out.push('\n');
        }
        let io = s.writer.write_all(out.as_bytes()).and_then(|_| s.writer.flush());
        if let Err(e) = io {
            s.broken = Some(format!("simulator input closed: {e}"));
            return Err(e.into());
        }
        let mut slots: Vec<Option<Result<Vec<f64>>>> = (0..corners.len()).map(|_| None).collect();
        let mut pending = corners.len();
        while pending > 0 {
            let line = match s.read_line() {
                Ok(l) => l,
                Err(e) => {
                    s.broken = Some(e.to_string());
                    return Err(e);
                }
            };
            let resp: Response = serde_json::from_str(&line)
                .map_err(|e| Error::Simulator(format!("bad response {:?}: {e}", line.trim())))?;
            let id = resp.id();
            let idx = id
                .checked_sub(first)
                .map(|d| d as usize)
                .filter(|&d| d < corners.len() && slots[d].is_none())
                .ok_or_else(|| Error::Simulator(format!("unexpected response id {id}")))?;
            slots[idx] = Some(self.decode(resp));
            pending -= 1;
        }
        Ok(slots.into_iter().map(|s| s.expect("all slots filled")).collect())
    }
}

impl Drop for ExternalSimulator {
    fn drop(&mut self) {
        if let Some(child) = &self.child {
            if let Ok(mut c) = child.lock() {
                // closing stdin lets well-behaved simulators exit on their own
                if let Ok(mut s) = self.session.lock() {
                    s.writer = Box::new(std::io::sink());
                }
                if c.try_wait().ok().flatten().is_none() {
                    let _ = c.kill();
                }
                let _ = c.wait();
            }
        }
    }
}

impl CircuitModel for ExternalSimulator {
    fn params(&self) -> &[ParamDef] {
        &self.params
    }

    fn schema(&self) -> &SpecSchema {
        &self.schema
    }

    fn simulate(&self, state: &DesignState, corner: &CornerId) -> Result<Vec<f64>> {
        self.exchange(state, std::slice::from_ref(corner))?
            .pop()
            .expect("one response")
    }

    fn simulate_corners(&self, state: &DesignState, corners: &[CornerId]) -> Vec<Result<Vec<f64>>> {
        match self.exchange(state, corners) {
            Ok(v) => v,
            Err(e) => {
                let msg = e.to_string();
                corners.iter().map(|_| Err(Error::Simulator(msg.clone()))).collect()
            }
        }
    }
}

/// Serves a built-in model over the same protocol, answering in request
/// order. Returns when the input stream ends.
pub fn serve<R: BufRead, W: Write>(model: &dyn CircuitModel, reader: R, mut writer: W) -> Result<()> {
    let hello = HelloLine {
        hello: Hello {
            l: model.dim_params(),
            m: model.dim_metrics(),
            metrics: model.schema().names(),
        },
    };
    writeln!(writer, "{}", serde_json::to_string(&hello)?)?;
    writer.flush()?;
    let index: HashMap<&str, usize> = model
        .params()
        .iter()
        .enumerate()
        .map(|(i, p)| (p.name.as_str(), i))
        .collect();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let resp = match serde_json::from_str::<Request>(&line) {
            Err(e) => {
                // id unknown; -1 cannot be expressed as u64 so report id 0
                Response::Error {
                    id: 0,
                    error: format!("malformed request: {e}"),
                }
            }
            Ok(req) => answer(model, &index, &req),
        };
        writeln!(writer, "{}", serde_json::to_string(&resp)?)?;
        writer.flush()?;
    }
    Ok(())
}

fn answer(model: &dyn CircuitModel, index: &HashMap<&str, usize>, req: &Request) -> Response {
    let mut x = vec![f64::NAN; model.dim_params()];
    for (name, &v) in &req.params {
        match index.get(name.as_str()) {
            Some(&i) => x[i] = model.params()[i].to_normalized(v),
            None => {
                return Response::Error {
                    id: req.id,
                    error: format!("unknown parameter {name:?}"),
                }
            }
        }
    }
    if x.iter().any(|v| v.is_nan()) {
        return Response::Error {
            id: req.id,
            error: "missing parameters".into(),
        };
    }
    match model.simulate(&DesignState::new(x), &req.corner) {
        Ok(z) => Response::Metrics {
            id: req.id,
            metrics: model.schema().names().into_iter().zip(z).collect(),
        },
        Err(e) => Response::Error {
            id: req.id,
            error: e.to_string(),
        },
    }
}
