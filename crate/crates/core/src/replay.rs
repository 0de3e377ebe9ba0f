// SPDX-License-Identifier: Apache-2.0

//! Replay storage and conservative hindsight relabeling.
//!
//! Each stored step keeps its nominal metrics and, when simulated, the
//! corner matrix, so its reward can be recomputed against any later goal
//! without another simulation.

use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::envsim::{CornerMatrix, DesignState, StepOutcome};
use crate::error::{Error, Result};
use crate::goalspace::{AchievedGoal, SpecSchema, TargetGoal};
use crate::reward::{relabel_reward, restage, RestagedOutcome, RewardParams};

pub const DEFAULT_REPLAY_CAPACITY: usize = 100_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub s: DesignState,
    pub a: Vec<f64>,
    pub r: f64,
    pub s_next: DesignState,
    pub goal: TargetGoal,
    pub achieved: AchievedGoal,
    pub z0: Vec<f64>,
    pub corners: Option<CornerMatrix>,
    pub stage: u8,
    pub t: usize,
    pub terminal: bool,
    /// Set when the simulator faulted and `z0` holds sentinel values.
    #[serde(default)]
    pub failed: bool,
    /// Set on hindsight copies.
    #[serde(default)]
    pub relabeled: bool,
}

impl Transition {
    pub fn from_step(s: &DesignState, a: &[f64], goal: &TargetGoal, t: usize, out: &StepOutcome) -> Self {
        Transition {
            s: s.clone(),
            a: a.to_vec(),
            r: out.reward,
            s_next: out.next_state.clone(),
            goal: goal.clone(),
            achieved: out.achieved.clone(),
            z0: out.z0.clone(),
            corners: out.corners.clone(),
            stage: out.stage,
            t,
            terminal: out.terminal,
            failed: out.failed,
            relabeled: false,
        }
    }
}

/// One synthetic twin per transition that has a strictly later step.
///
/// The twin's goal is the achieved metric vector of a uniformly drawn later
/// step; its reward uses the conservative anchor and its stage and terminal
/// flag are re-derived against that goal.
pub fn cher_relabel<R: Rng + ?Sized>(
    episode: &[Transition],
    schema: &SpecSchema,
    p: &RewardParams,
    rng: &mut R,
) -> Vec<Transition> {
    let n = episode.len();
    let mut out = Vec::with_capacity(n.saturating_sub(1));
    for (t, tr) in episode.iter().enumerate().take(n.saturating_sub(1)) {
        let src = rng.random_range(t + 1..n);
        out.push(relabel_to(tr, TargetGoal::new(episode[src].achieved.z.clone()), schema, p));
    }
    out
}

/// Synthetic copy of `tr` judged against `goal`.
pub fn relabel_to(tr: &Transition, goal: TargetGoal, schema: &SpecSchema, p: &RewardParams) -> Transition {
    let r = relabel_reward(&tr.z0, tr.corners.as_ref(), &goal, schema, p);
    let stage = match restage(&tr.z0, tr.corners.as_ref(), &goal, schema) {
        RestagedOutcome::Stage(s) => s,
        RestagedOutcome::NominalOnly => 1,
    };
    Transition {
        r,
        goal,
        stage,
        terminal: stage == 3,
        relabeled: true,
        ..tr.clone()
    }
}

/// FIFO ring of transitions with uniform sampling.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    items: VecDeque<Transition>,
    capacity: usize,
    pushed: u64,
}

impl Default for ReplayBuffer {
    fn default() -> Self {
        Self::with_capacity(DEFAULT_REPLAY_CAPACITY)
    }
}

impl ReplayBuffer {
    pub fn with_capacity(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        ReplayBuffer {
            items: VecDeque::with_capacity(capacity.min(1 << 16)),
            capacity,
            pushed: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Total pushes since creation, evicted ones included.
    pub fn total_pushed(&self) -> u64 {
        self.pushed
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(t);
        self.pushed += 1;
    }

    /// Stores originals and their twins interleaved: `e_0, syn_0, e_1, ...`.
    pub fn push_episode(&mut self, episode: Vec<Transition>, synthetics: Vec<Transition>) {
        let mut syn = synthetics.into_iter();
        for t in episode {
            self.push(t);
            if let Some(s) = syn.next() {
                self.push(s);
            }
        }
        for s in syn {
            self.push(s);
        }
    }

    pub fn get(&self, i: usize) -> Option<&Transition> {
        self.items.get(i)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.items.iter()
    }

    /// `n` uniform draws with replacement.
    pub fn sample_batch<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<&Transition>> {
        if n == 0 {
            return Ok(Vec::new());
        }
        if self.items.is_empty() {
            return Err(Error::Contract("sample_batch on an empty replay buffer".into()));
        }
        Ok((0..n)
            .map(|_| &self.items[rng.random_range(0..self.items.len())])
            .collect())
    }
}
