// SPDX-License-Identifier: Apache-2.0

//! Staged PVT-aware reward.
//!
//! A step that fails the target at the nominal corner earns a reward
//! between `r_min` and the anchor; a step that passes nominal but fails some
//! extreme corner earns between the anchor and 0; a step that passes every
//! corner earns `r_max`. The anchor is `r_anchor` for real transitions and
//! the more pessimistic `r_conservative` for hindsight-relabeled ones.

use serde::{Deserialize, Serialize};

use crate::envsim::{worst, CornerMatrix};
use crate::goalspace::{satisfies, Direction, SpecSchema, TargetGoal};

/// Denominator guard for the corner-consistency ratio.
pub const SIGMA_GUARD_EPS: f64 = 1e-9;
/// Per-term cap for the corner-consistency ratio.
pub const SIGMA_CAP: f64 = 100.0;
/// Smallest target magnitude the normalizer divides by.
const PSI_TARGET_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardParams {
    pub r_max: f64,
    pub r_anchor: f64,
    pub r_conservative: f64,
    pub r_min: f64,
    pub alpha: f64,
    pub eta: f64,
}

impl Default for RewardParams {
    fn default() -> Self {
        RewardParams {
            r_max: 30.0,
            r_anchor: -1.0,
            r_conservative: -3.0,
            r_min: -6.0,
            alpha: 0.0,
            eta: 0.1,
        }
    }
}

impl RewardParams {
    pub fn validate(&self) -> Vec<String> {
        let mut errors = Vec::new();
        let all = [
            self.r_max,
            self.r_anchor,
            self.r_conservative,
            self.r_min,
            self.alpha,
            self.eta,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            errors.push("reward: all parameters must be finite".to_string());
        }
        if !(self.r_min <= self.r_conservative
            && self.r_conservative <= self.r_anchor
            && self.r_anchor <= 0.0
            && 0.0 <= self.r_max)
        {
            errors.push(format!(
                "reward: require r_min <= r_conservative <= r_anchor <= 0 <= r_max, got {} / {} / {} / {}",
                self.r_min, self.r_conservative, self.r_anchor, self.r_max
            ));
        }
        if self.alpha < 0.0 {
            errors.push("reward.alpha: must be >= 0".to_string());
        }
        if self.eta <= 0.0 {
            errors.push("reward.eta: must be > 0".to_string());
        }
        errors
    }
}

/// Per-spec shortfall normalizer in `[0, 1]`.
///
/// `h_j = tanh(eta * d_j) / tanh(eta)` clamped to `[0, 1]`, where `d_j` is
/// the relative shortfall of `z_j` against `z_hat_j` in the spec's bound
/// direction. 0 means every spec is met; 1 means every spec misses by at
/// least its own magnitude.
pub fn psi(z: &[f64], z_hat: &[f64], schema: &SpecSchema, eta: f64) -> f64 {
    debug_assert_eq!(z.len(), schema.len());
    debug_assert_eq!(z_hat.len(), schema.len());
    let norm = eta.tanh();
    let total: f64 = z
        .iter()
        .zip(z_hat)
        .zip(schema.directions())
        .map(|((&v, &t), dir)| {
            let scale = t.abs().max(PSI_TARGET_FLOOR);
            let d = match dir {
                Direction::LowerBounded => (t - v) / scale,
                Direction::UpperBounded => (v - t) / scale,
            };
            let h = (eta * d).tanh() / norm;
            if h.is_nan() {
                1.0
            } else {
                h.clamp(0.0, 1.0)
            }
        })
        .sum();
    total / schema.len() as f64
}

/// Mean squared relative deviation of the extreme corners from nominal.
pub fn sigma(corners: &CornerMatrix, z0: &[f64], guard_eps: f64, cap: f64) -> f64 {
    let n = corners.len();
    let m = z0.len();
    if n == 0 || m == 0 {
        return 0.0;
    }
    let denom: Vec<f64> = z0
        .iter()
        .map(|&v| {
            let mag = v.abs().max(guard_eps);
            if v < 0.0 {
                -mag
            } else {
                mag
            }
        })
        .collect();
    let mut total = 0.0;
    for row in corners {
        for (&v, &d) in row.iter().zip(&denom) {
            let r = v / d - 1.0;
            let term = r * r;
            total += if term.is_nan() { cap } else { term.min(cap) };
        }
    }
    total / (n * m) as f64
}

pub fn sigma_default(corners: &CornerMatrix, z0: &[f64]) -> f64 {
    sigma(corners, z0, SIGMA_GUARD_EPS, SIGMA_CAP)
}

/// Stage reward with an explicit anchor (`r_anchor` or `r_conservative`).
///
/// `corners` must be `None` at stage 1 and `Some` at stages 2 and 3.
pub fn stage_reward(
    stage: u8,
    z0: &[f64],
    corners: Option<&CornerMatrix>,
    goal: &TargetGoal,
    schema: &SpecSchema,
    p: &RewardParams,
    anchor: f64,
) -> f64 {
    match (stage, corners) {
        (1, None) => {
            let s = psi(z0, &goal.z_hat, schema, p.eta);
            anchor * (1.0 - s) + p.r_min * s - p.alpha
        }
        (2, Some(zm)) => {
            let w = worst(zm, schema);
            anchor * psi(&w, &goal.z_hat, schema, p.eta) - p.alpha * sigma_default(zm, z0)
        }
        (3, Some(zm)) => p.r_max - p.alpha * sigma_default(zm, z0),
        (s, c) => panic!(
            "stage_reward contract violated: stage {s} with corner data {}",
            if c.is_some() { "present" } else { "absent" }
        ),
    }
}

/// Stage implied by stored step data when judged against another goal.
pub fn restage(
    z0: &[f64],
    corners: Option<&CornerMatrix>,
    goal: &TargetGoal,
    schema: &SpecSchema,
) -> RestagedOutcome {
    let nominal_ok = satisfies(z0, &goal.z_hat, schema).unwrap_or(false);
    if !nominal_ok {
        return RestagedOutcome::Stage(1);
    }
    match corners {
        Some(zm) => {
            let w = worst(zm, schema);
            if satisfies(&w, &goal.z_hat, schema).unwrap_or(false) {
                RestagedOutcome::Stage(3)
            } else {
                RestagedOutcome::Stage(2)
            }
        }
        None => RestagedOutcome::NominalOnly,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RestagedOutcome {
    Stage(u8),
    /// Nominal metrics meet the goal but no corner data was ever simulated.
    NominalOnly,
}

/// Reward for a stored step under a relabeled goal, using an explicit
/// anchor. The hindsight path passes `r_conservative`.
pub fn relabel_reward_with_anchor(
    z0: &[f64],
    corners: Option<&CornerMatrix>,
    new_goal: &TargetGoal,
    schema: &SpecSchema,
    p: &RewardParams,
    anchor: f64,
) -> f64 {
    match restage(z0, corners, new_goal, schema) {
        RestagedOutcome::Stage(1) => stage_reward(1, z0, None, new_goal, schema, p, anchor),
        RestagedOutcome::Stage(s) => stage_reward(s, z0, corners, new_goal, schema, p, anchor),
        // Stage-1 ceiling: best a nominal-only observation can justify.
        RestagedOutcome::NominalOnly => anchor - p.alpha,
    }
}

/// Conservative virtual reward for a relabeled transition.
pub fn relabel_reward(
    z0: &[f64],
    corners: Option<&CornerMatrix>,
    new_goal: &TargetGoal,
    schema: &SpecSchema,
    p: &RewardParams,
) -> f64 {
    relabel_reward_with_anchor(z0, corners, new_goal, schema, p, p.r_conservative)
}
