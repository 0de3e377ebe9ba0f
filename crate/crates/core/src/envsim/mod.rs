// SPDX-License-Identifier: Apache-2.0

//! Circuit environments and the skip-on-fail stage machine.
//!
//! A step first simulates the nominal corner. Only when the nominal metrics
//! already meet the target are the extreme corners simulated; the
//! column-wise worst case over those corners then decides between stage 2
//! (some corner fails) and stage 3 (every corner passes, episode ends).

pub mod bowl;
pub mod external;
pub mod tsa;

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::goalspace::{satisfies, AchievedGoal, Direction, SpecSchema, TargetGoal};
use crate::reward::{stage_reward, RewardParams};

pub use bowl::QuadBowl;
pub use external::ExternalSimulator;
pub use tsa::TwoStageAmp;

/// `N x M` metrics, one row per extreme corner.
pub type CornerMatrix = Vec<Vec<f64>>;

/// Default per-step action bound in normalized parameter space.
pub const DEFAULT_A_MAX: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    Linear,
    Log,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamDef {
    pub name: String,
    pub phys_lo: f64,
    pub phys_hi: f64,
    pub scale: Scale,
}

impl ParamDef {
    pub fn new(name: &str, lo: f64, hi: f64, scale: Scale) -> Self {
        ParamDef {
            name: name.to_string(),
            phys_lo: lo,
            phys_hi: hi,
            scale,
        }
    }

    pub fn to_physical(&self, x: f64) -> f64 {
        match self.scale {
            Scale::Linear => self.phys_lo + x * (self.phys_hi - self.phys_lo),
            Scale::Log => {
                let (a, b) = (self.phys_lo.ln(), self.phys_hi.ln());
                (a + x * (b - a)).exp()
            }
        }
    }

    pub fn to_normalized(&self, v: f64) -> f64 {
        match self.scale {
            Scale::Linear => (v - self.phys_lo) / (self.phys_hi - self.phys_lo),
            Scale::Log => {
                let (a, b) = (self.phys_lo.ln(), self.phys_hi.ln());
                (v.ln() - a) / (b - a)
            }
        }
    }

    pub fn validate(&self) -> Option<String> {
        if !(self.phys_lo.is_finite() && self.phys_hi.is_finite() && self.phys_lo < self.phys_hi) {
            return Some(format!("param {}: need finite phys_lo < phys_hi", self.name));
        }
        if self.scale == Scale::Log && self.phys_lo <= 0.0 {
            return Some(format!("param {}: log scale needs a positive range", self.name));
        }
        None
    }
}

/// Design point in normalized `[0, 1]^L` coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DesignState {
    pub x: Vec<f64>,
}

impl DesignState {
    pub fn new(x: Vec<f64>) -> Self {
        DesignState { x }
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn physical(&self, params: &[ParamDef]) -> Vec<f64> {
        self.x
            .iter()
            .zip(params)
            .map(|(&x, p)| p.to_physical(x))
            .collect()
    }
}

/// `s' = clip(s + a, 0, 1)`.
pub fn apply_action(state: &DesignState, action: &[f64]) -> DesignState {
    debug_assert_eq!(state.len(), action.len());
    DesignState {
        x: state
            .x
            .iter()
            .zip(action)
            .map(|(&x, &a)| (x + a).clamp(0.0, 1.0))
            .collect(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CornerId {
    pub process: String,
    pub vdd_scale: f64,
    pub temp_c: f64,
}

impl CornerId {
    pub fn new(process: &str, vdd_scale: f64, temp_c: f64) -> Self {
        CornerId {
            process: process.to_string(),
            vdd_scale,
            temp_c,
        }
    }

    /// Typical process, nominal supply, 27 C.
    pub fn nominal() -> Self {
        CornerId::new("TT", 1.0, 27.0)
    }

    pub fn is_nominal(&self) -> bool {
        *self == CornerId::nominal()
    }

    /// Stable 64-bit key used to derive per-corner seeded perturbations.
    pub fn key(&self) -> u64 {
        // FNV-1a
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |bytes: &[u8]| {
            for &b in bytes {
                h ^= b as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        };
        eat(self.process.as_bytes());
        eat(&self.vdd_scale.to_bits().to_le_bytes());
        eat(&self.temp_c.to_bits().to_le_bytes());
        h
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CornerGrid {
    pub nominal: CornerId,
    pub extremes: Vec<CornerId>,
}

impl CornerGrid {
    /// One nominal corner plus `{FF,SS,SF,FS} x {3.0 V, 3.6 V} x {-40 C, 125 C}`
    /// around a 3.3 V supply: 16 extremes.
    pub fn standard() -> Self {
        let mut extremes = Vec::with_capacity(16);
        for process in ["FF", "SS", "SF", "FS"] {
            for vdd in [3.0 / 3.3, 3.6 / 3.3] {
                for temp in [-40.0, 125.0] {
                    extremes.push(CornerId::new(process, vdd, temp));
                }
            }
        }
        CornerGrid {
            nominal: CornerId::nominal(),
            extremes,
        }
    }

    pub fn n(&self) -> usize {
        self.extremes.len()
    }

    pub fn validate(&self) -> Vec<String> {
        let mut errors = Vec::new();
        if self.extremes.is_empty() {
            errors.push("corners.extremes: need at least one extreme corner".to_string());
        }
        if self.extremes.contains(&self.nominal) {
            errors.push("corners.extremes: must not contain the nominal corner".to_string());
        }
        errors
    }
}

/// A black-box circuit: design point and corner in, raw metrics out.
///
/// Implementations must be deterministic in `(state, corner)`.
pub trait CircuitModel: Send + Sync {
    fn params(&self) -> &[ParamDef];

    /// The model's native schema (names, directions, default ranges).
    fn schema(&self) -> &SpecSchema;

    fn simulate(&self, state: &DesignState, corner: &CornerId) -> Result<Vec<f64>>;

    /// Simulates several corners of one design point. Results are returned
    /// in the order of `corners` regardless of completion order.
    fn simulate_corners(&self, state: &DesignState, corners: &[CornerId]) -> Vec<Result<Vec<f64>>> {
        corners.iter().map(|c| self.simulate(state, c)).collect()
    }

    fn dim_params(&self) -> usize {
        self.params().len()
    }

    fn dim_metrics(&self) -> usize {
        self.schema().len()
    }
}

impl<T: CircuitModel + ?Sized> CircuitModel for Arc<T> {
    fn params(&self) -> &[ParamDef] {
        (**self).params()
    }
    fn schema(&self) -> &SpecSchema {
        (**self).schema()
    }
    fn simulate(&self, state: &DesignState, corner: &CornerId) -> Result<Vec<f64>> {
        (**self).simulate(state, corner)
    }
    fn simulate_corners(&self, state: &DesignState, corners: &[CornerId]) -> Vec<Result<Vec<f64>>> {
        (**self).simulate_corners(state, corners)
    }
}

/// Fans extreme-corner simulations out over a worker pool.
pub struct Pooled<M> {
    inner: M,
    pool: rayon::ThreadPool,
}

impl<M: CircuitModel> Pooled<M> {
    pub fn new(inner: M, workers: usize) -> Result<Self> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers.max(1))
            .thread_name(|i| format!("corner-sim-{i}"))
            .build()
            .map_err(|e| Error::Simulator(format!("cannot start worker pool: {e}")))?;
        Ok(Pooled { inner, pool })
    }
}

impl<M: CircuitModel> CircuitModel for Pooled<M> {
    fn params(&self) -> &[ParamDef] {
        self.inner.params()
    }
    fn schema(&self) -> &SpecSchema {
        self.inner.schema()
    }
    fn simulate(&self, state: &DesignState, corner: &CornerId) -> Result<Vec<f64>> {
        self.inner.simulate(state, corner)
    }
    fn simulate_corners(&self, state: &DesignState, corners: &[CornerId]) -> Vec<Result<Vec<f64>>> {
        use rayon::prelude::*;
        let inner = &self.inner;
        self.pool
            .install(|| corners.par_iter().map(|c| inner.simulate(state, c)).collect())
    }
}

/// Independent simulation counter used to audit the per-step accounting.
pub struct Counted<M> {
    inner: M,
    calls: AtomicU64,
}

impl<M: CircuitModel> Counted<M> {
    pub fn new(inner: M) -> Self {
        Counted {
            inner,
            calls: AtomicU64::new(0),
        }
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }

    pub fn reset(&self) {
        self.calls.store(0, Ordering::Relaxed);
    }
}

impl<M: CircuitModel> CircuitModel for Counted<M> {
    fn params(&self) -> &[ParamDef] {
        self.inner.params()
    }
    fn schema(&self) -> &SpecSchema {
        self.inner.schema()
    }
    fn simulate(&self, state: &DesignState, corner: &CornerId) -> Result<Vec<f64>> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        self.inner.simulate(state, corner)
    }
    fn simulate_corners(&self, state: &DesignState, corners: &[CornerId]) -> Vec<Result<Vec<f64>>> {
        self.calls.fetch_add(corners.len() as u64, Ordering::Relaxed);
        self.inner.simulate_corners(state, corners)
    }
}

/// Column-wise worst case: min for lower-bounded specs, max for
/// upper-bounded ones.
pub fn worst(corners: &CornerMatrix, schema: &SpecSchema) -> Vec<f64> {
    assert!(!corners.is_empty(), "worst() needs at least one corner row");
    schema
        .directions()
        .enumerate()
        .map(|(j, d)| {
            let col = corners.iter().map(|row| row[j]);
            match d {
                Direction::LowerBounded => col.fold(f64::INFINITY, f64::min),
                Direction::UpperBounded => col.fold(f64::NEG_INFINITY, f64::max),
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub next_state: DesignState,
    pub stage: u8,
    pub z0: Vec<f64>,
    pub corners: Option<CornerMatrix>,
    pub achieved: AchievedGoal,
    pub reward: f64,
    pub sim_count: u64,
    pub terminal: bool,
    /// A simulation faulted; metrics were replaced by the schema sentinel.
    pub failed: bool,
}

/// Everything a step needs besides the design point, action and goal.
pub struct Env {
    pub model: Arc<dyn CircuitModel>,
    pub grid: CornerGrid,
    pub schema: SpecSchema,
    pub reward: RewardParams,
    /// When false every step simulates all corners (the no-skip baseline).
    pub skip_on_fail: bool,
}

impl Env {
    pub fn new(model: Arc<dyn CircuitModel>, grid: CornerGrid, schema: SpecSchema, reward: RewardParams) -> Self {
        Env {
            model,
            grid,
            schema,
            reward,
            skip_on_fail: true,
        }
    }

    pub fn dim_params(&self) -> usize {
        self.model.dim_params()
    }

    pub fn dim_metrics(&self) -> usize {
        self.schema.len()
    }

    pub fn step(&self, state: &DesignState, action: &[f64], goal: &TargetGoal) -> StepOutcome {
        sof_step(
            self.model.as_ref(),
            &self.grid,
            &self.schema,
            state,
            action,
            goal,
            &self.reward,
            self.skip_on_fail,
        )
    }

    /// Nominal-corner metrics, `None` on simulator fault.
    pub fn nominal(&self, state: &DesignState) -> Option<Vec<f64>> {
        checked(self.model.simulate(state, &self.grid.nominal), self.schema.len()).ok()
    }
}

fn checked(r: Result<Vec<f64>>, m: usize) -> Result<Vec<f64>> {
    let v = r?;
    if v.len() != m {
        return Err(Error::dim("simulator metrics", m, v.len()));
    }
    if let Some(j) = v.iter().position(|x| !x.is_finite()) {
        return Err(Error::Simulator(format!("non-finite metric at index {j}")));
    }
    Ok(v)
}

/// One environment step under the skip-on-fail rule.
#[allow(clippy::too_many_arguments)]
pub fn sof_step(
    model: &dyn CircuitModel,
    grid: &CornerGrid,
    schema: &SpecSchema,
    state: &DesignState,
    action: &[f64],
    goal: &TargetGoal,
    params: &RewardParams,
    skip_on_fail: bool,
) -> StepOutcome {
    let next_state = apply_action(state, action);
    let m = schema.len();
    let n = grid.n() as u64;

    let failed_outcome = |next_state: DesignState, sims: u64| {
        let z0 = schema.sentinel();
        let reward = stage_reward(1, &z0, None, goal, schema, params, params.r_anchor);
        StepOutcome {
            next_state,
            stage: 1,
            achieved: AchievedGoal::from_stage(z0.clone(), 1),
            z0,
            corners: None,
            reward,
            sim_count: sims,
            terminal: false,
            failed: true,
        }
    };

    let nominal = checked(model.simulate(&next_state, &grid.nominal), m);
    let corner_results = |ns: &DesignState| -> Result<CornerMatrix> {
        model
            .simulate_corners(ns, &grid.extremes)
            .into_iter()
            .map(|r| checked(r, m))
            .collect()
    };

    let z0 = match nominal {
        Ok(z0) => z0,
        Err(_) => {
            let sims = if skip_on_fail {
                1
            } else {
                // the no-skip baseline launches every corner up front
                let _ = corner_results(&next_state);
                1 + n
            };
            return failed_outcome(next_state, sims);
        }
    };
    let nominal_ok = satisfies(&z0, &goal.z_hat, schema).unwrap_or(false);

    if !nominal_ok && skip_on_fail {
        let reward = stage_reward(1, &z0, None, goal, schema, params, params.r_anchor);
        return StepOutcome {
            next_state,
            stage: 1,
            achieved: AchievedGoal::from_stage(z0.clone(), 1),
            z0,
            corners: None,
            reward,
            sim_count: 1,
            terminal: false,
            failed: false,
        };
    }

    let zm = match corner_results(&next_state) {
        Ok(zm) => zm,
        Err(_) => return failed_outcome(next_state, 1 + n),
    };

    let (stage, corners, z) = if !nominal_ok {
        (1, None, z0.clone())
    } else {
        let w = worst(&zm, schema);
        let stage = if satisfies(&w, &goal.z_hat, schema).unwrap_or(false) {
            3
        } else {
            2
        };
        (stage, Some(zm), w)
    };
    let reward = stage_reward(stage, &z0, corners.as_ref(), goal, schema, params, params.r_anchor);
    StepOutcome {
        next_state,
        stage,
        achieved: AchievedGoal::from_stage(z, stage),
        z0,
        corners,
        reward,
        sim_count: 1 + n,
        terminal: stage == 3,
        failed: false,
    }
}
