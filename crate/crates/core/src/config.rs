// SPDX-License-Identifier: Apache-2.0

//! JSON run configuration.
//!
//! Every section and field is optional. Unknown keys are rejected, and
//! problems are reported as `path: message` strings.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::agent::AgentConfig;
use crate::envsim::{CircuitModel, CornerGrid, ExternalSimulator, ParamDef, Pooled, QuadBowl, TwoStageAmp};
use crate::error::{Error, Result};
use crate::goalspace::{SpecDef, SpecSchema, DEFAULT_PARETO_CAPACITY};
use crate::pdgs::SamplerConfig;
use crate::replay::DEFAULT_REPLAY_CAPACITY;
use crate::reward::RewardParams;

pub const MAX_WORKERS: usize = 16;

fn two() -> usize {
    2
}

/// Which circuit model to train against.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EnvConfig {
    QuadBowl {
        #[serde(default = "two")]
        l: usize,
        #[serde(default = "two")]
        m: usize,
        #[serde(default)]
        seed: u64,
    },
    Tsa {
        #[serde(default)]
        seed: u64,
    },
    /// A simulator process speaking the line protocol on stdin/stdout.
    External { command: Vec<String>, params: Vec<ParamDef> },
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig::QuadBowl { l: 2, m: 2, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerConfig {
    pub seed: u64,
    pub total_steps: u64,
    pub horizon: usize,
    pub n_eval: usize,
    pub eval_period: u64,
    pub reset_candidates: usize,
    pub replay_capacity: usize,
    pub pareto_capacity: usize,
    pub use_pdgs: bool,
    pub use_cher: bool,
    pub skip_on_fail: bool,
    pub workers: usize,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            seed: 0,
            total_steps: 20_000,
            horizon: 30,
            n_eval: 500,
            eval_period: 1200,
            reset_candidates: 50,
            replay_capacity: DEFAULT_REPLAY_CAPACITY,
            pareto_capacity: DEFAULT_PARETO_CAPACITY,
            use_pdgs: true,
            use_cher: true,
            skip_on_fail: true,
            workers: 1,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        let positive = [
            ("trainer.horizon", self.horizon as u64),
            ("trainer.n_eval", self.n_eval as u64),
            ("trainer.eval_period", self.eval_period),
            ("trainer.reset_candidates", self.reset_candidates as u64),
            ("trainer.replay_capacity", self.replay_capacity as u64),
            ("trainer.pareto_capacity", self.pareto_capacity as u64),
        ];
        for (name, v) in positive {
            if v == 0 {
                errs.push(format!("{name}: must be positive"));
            }
        }
        if !(1..=MAX_WORKERS).contains(&self.workers) {
            errs.push(format!("trainer.workers: must lie in 1..={MAX_WORKERS}, got {}", self.workers));
        }
        errs
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LoggingConfig {
    /// Write the JSONL event log.
    pub events: bool,
    /// Include one record per environment step.
    pub env_steps: bool,
    /// Write checkpoint files at every evaluation.
    pub checkpoints: bool,
}

impl Default for LoggingConfig {
    fn default() -> Self {
        LoggingConfig {
            events: true,
            env_steps: true,
            checkpoints: true,
        }
    }
}

/// The configuration file as written by a user.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigDocument {
    pub env: EnvConfig,
    /// Overrides the model's own sampling ranges; required for external models.
    pub schema: Option<Vec<SpecDef>>,
    pub corners: Option<CornerGrid>,
    pub sampler: SamplerConfig,
    pub reward: RewardParams,
    pub agent: AgentConfig,
    pub trainer: TrainerConfig,
    pub logging: LoggingConfig,
}

impl ConfigDocument {
    /// Parses JSON, reporting the path of the offending field on failure.
    pub fn parse(text: &str) -> std::result::Result<Self, Vec<String>> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let path = if path == "." { "<root>".to_string() } else { path };
            vec![format!("{path}: {}", e.inner())]
        })
    }
}

/// Validated, fully defaulted run configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub env: EnvConfig,
    pub schema: Option<SpecSchema>,
    pub corners: CornerGrid,
    pub sampler: SamplerConfig,
    pub reward: RewardParams,
    pub agent: AgentConfig,
    pub trainer: TrainerConfig,
    pub logging: LoggingConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig::from_document(ConfigDocument::default()).expect("defaults are valid")
    }
}

impl RunConfig {
    pub fn from_document(doc: ConfigDocument) -> Result<Self> {
        let mut errs = Vec::new();
        match &doc.env {
            EnvConfig::QuadBowl { l, m, .. } => {
                if !(*l >= *m && *m >= 1) {
                    errs.push(format!("env: quad_bowl needs l >= m >= 1, got l = {l}, m = {m}"));
                }
            }
            EnvConfig::Tsa { .. } => {}
            EnvConfig::External { command, params } => {
                if command.is_empty() {
                    errs.push("env.command: must name a program".into());
                }
                if params.is_empty() {
                    errs.push("env.params: need at least one parameter".into());
                }
                errs.extend(params.iter().filter_map(|p| p.validate()).map(|e| format!("env.params: {e}")));
                if doc.schema.is_none() {
                    errs.push("schema: required for an external model".into());
                }
            }
        }
        let schema = match doc.schema {
            Some(specs) => match SpecSchema::new(specs) {
                Ok(s) => Some(s),
                Err(e) => {
                    errs.push(format!("schema: {e}"));
                    None
                }
            },
            None => None,
        };
        let corners = doc.corners.unwrap_or_else(CornerGrid::standard);
        errs.extend(corners.validate());
        errs.extend(doc.sampler.validate());
        errs.extend(doc.reward.validate());
        errs.extend(doc.agent.validate());
        errs.extend(doc.trainer.validate());
        if !errs.is_empty() {
            return Err(Error::Config(errs));
        }
        Ok(RunConfig {
            env: doc.env,
            schema,
            corners,
            sampler: doc.sampler,
            reward: doc.reward,
            agent: doc.agent,
            trainer: doc.trainer,
            logging: doc.logging,
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc = ConfigDocument::parse(text).map_err(Error::Config)?;
        Self::from_document(doc)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(vec![format!("{}: {e}", path.display())]))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(errs) => Error::Config(
                errs.into_iter()
                    .map(|m| format!("{}: {m}", path.display()))
                    .collect(),
            ),
            other => other,
        })
    }

    pub fn to_document(&self) -> ConfigDocument {
        ConfigDocument {
            env: self.env.clone(),
            schema: self.schema.as_ref().map(|s| s.specs().to_vec()),
            corners: Some(self.corners.clone()),
            sampler: self.sampler.clone(),
            reward: self.reward.clone(),
            agent: self.agent.clone(),
            trainer: self.trainer.clone(),
            logging: self.logging.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_document()).expect("config serializes")
    }

    /// Instantiates the circuit model, pooled across `trainer.workers`.
    pub fn build_model(&self) -> Result<Arc<dyn CircuitModel>> {
        let workers = self.trainer.workers;
        let inner: Arc<dyn CircuitModel> = match &self.env {
            EnvConfig::QuadBowl { l, m, seed } => Arc::new(QuadBowl::new(*l, *m, *seed)?),
            EnvConfig::Tsa { seed } => Arc::new(TwoStageAmp::new(*seed)),
            EnvConfig::External { command, params } => {
                let schema = self
                    .schema
                    .clone()
                    .ok_or_else(|| Error::Config(vec!["schema: required for an external model".into()]))?;
                Arc::new(ExternalSimulator::spawn(command, params.clone(), schema)?)
            }
        };
        if workers > 1 {
            Ok(Arc::new(Pooled::new(inner, workers)?))
        } else {
            Ok(inner)
        }
    }

    /// The schema in force: the configured override or the model's own.
    pub fn effective_schema(&self, model: &dyn CircuitModel) -> Result<SpecSchema> {
        let native = model.schema();
        match &self.schema {
            None => Ok(native.clone()),
            Some(s) => {
                if s.names() != native.names() {
                    return Err(Error::Config(vec![format!(
                        "schema: names {:?} do not match the model's metrics {:?}",
                        s.names(),
                        native.names()
                    )]));
                }
                for (a, b) in s.specs().iter().zip(native.specs()) {
                    if a.direction != b.direction {
                        return Err(Error::Config(vec![format!(
                            "schema: direction of {} differs from the model",
                            a.name
                        )]));
                    }
                }
                Ok(s.clone())
            }
        }
    }
}
