// SPDX-License-Identifier: Apache-2.0

//! Goal-conditioned reinforcement learning for analog device sizing under
//! process/voltage/temperature (PVT) variation.
//!
//! The crate is organised bottom-up:
//!
//! * [`goalspace`]: specification schema, goal encodings, dominance and the
//!   achieved-goal Pareto buffer.
//! * [`envsim`]: circuit models, the skip-on-fail stage machine and the
//!   external simulator adapter.
//! * [`reward`]: the staged reward with its normalizer and corner
//!   consistency penalty.
//! * [`approx`]: dense networks with exact gradients and Adam.
//! * [`agent`]: goal-conditioned soft actor-critic.
//! * [`pdgs`]: the Pareto-dominance goal curriculum.
//! * [`replay`]: replay storage and conservative hindsight relabeling.
//! * [`trainer`]: the end-to-end loop, evaluation and run metrics.
//! * [`config`]: the JSON run configuration document.

pub mod agent;
pub mod approx;
pub mod config;
pub mod envsim;
pub mod error;
pub mod events;
pub mod goalspace;
pub mod pdgs;
pub mod replay;
pub mod reward;
pub mod rng;
pub mod trainer;

pub use agent::{Agent, AgentConfig, Checkpoint};
pub use config::{ConfigDocument, RunConfig};
pub use envsim::{
    CircuitModel, CornerGrid, CornerId, DesignState, ParamDef, Scale, StepOutcome,
};
pub use error::{Error, Result};
pub use goalspace::{AchievedGoal, Direction, ParetoBuffer, SpecDef, SpecSchema, TargetGoal};
pub use reward::RewardParams;
pub use trainer::{MetricsReport, TrainOutcome};
