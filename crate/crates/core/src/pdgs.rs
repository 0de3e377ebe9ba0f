// SPDX-License-Identifier: Apache-2.0

//! Pareto-dominance goal curriculum.
//!
//! While the achieved-goal buffer is small, goals are drawn uniformly.
//! Afterwards each candidate is drawn uniformly but rejected while some
//! already-achieved goal dominates it, candidates are scored by the mean of
//! both critics at the reset state, and one is picked with probability
//! `softmax(-Q / T)`, so goals the critics find hard are preferred.

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::agent::Agent;
use crate::envsim::DesignState;
use crate::goalspace::{sample_uniform_goal, ParetoBuffer, SpecSchema, TargetGoal};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub temperature: f64,
    pub n_candidates: usize,
    pub n_uniform: usize,
    pub max_reject: usize,
    /// Policy actions averaged per candidate score.
    pub actions_per_candidate: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            temperature: 5.0,
            n_candidates: 16,
            n_uniform: 4,
            max_reject: 64,
            actions_per_candidate: 1,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            errs.push("sampler.temperature: must be positive and finite".into());
        }
        if self.n_candidates == 0 {
            errs.push("sampler.n_candidates: must be positive".into());
        }
        if self.max_reject == 0 {
            errs.push("sampler.max_reject: must be positive".into());
        }
        if self.actions_per_candidate == 0 {
            errs.push("sampler.actions_per_candidate: must be positive".into());
        }
        errs
    }
}

/// Anything that can rate candidate goals at a reset state; lower means harder.
pub trait GoalScorer {
    fn score_goals(&self, s0: &DesignState, goals: &[TargetGoal], rng: &mut dyn RngCore) -> Vec<f64>;
}

impl GoalScorer for Agent {
    fn score_goals(&self, s0: &DesignState, goals: &[TargetGoal], rng: &mut dyn RngCore) -> Vec<f64> {
        Agent::score_goals(self, s0, goals, rng)
    }
}

/// Outcome of one curriculum draw, kept for the event log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GoalDraw {
    pub goal: TargetGoal,
    pub uniform: bool,
    pub candidates: Vec<TargetGoal>,
    pub q: Vec<f64>,
    pub chosen: usize,
    /// Candidates accepted only because the rejection cap was reached.
    pub cap_fired: usize,
}

/// Selection probabilities `softmax(-q / T)`.
///
/// Non-finite scores take the smallest finite score of the batch.
pub fn softmin_probs(q: &[f64], temperature: f64) -> Vec<f64> {
    assert!(!q.is_empty(), "softmin over an empty set");
    assert!(temperature > 0.0, "temperature must be positive");
    let floor = q.iter().copied().filter(|v| v.is_finite()).fold(f64::INFINITY, f64::min);
    let floor = if floor.is_finite() { floor } else { 0.0 };
    let logits: Vec<f64> = q
        .iter()
        .map(|&v| -(if v.is_finite() { v } else { floor }) / temperature)
        .collect();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = w.iter().sum();
    w.iter().map(|v| v / total).collect()
}

pub fn softmin_categorical<R: Rng + ?Sized>(q: &[f64], temperature: f64, rng: &mut R) -> usize {
    let p = softmin_probs(q, temperature);
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, pi) in p.iter().enumerate() {
        acc += pi;
        if u < acc {
            return i;
        }
    }
    // rounding left u just above the last partial sum
    p.iter().rposition(|&v| v > 0.0).unwrap_or(p.len() - 1)
}

/// One rejection-sampled candidate and whether the cap fired.
fn draw_candidate<R: Rng + ?Sized>(
    buffer: &ParetoBuffer,
    schema: &SpecSchema,
    max_reject: usize,
    rng: &mut R,
) -> (TargetGoal, bool) {
    let mut g = sample_uniform_goal(rng, schema);
    for _ in 1..max_reject {
        if !buffer.is_dominated(&g, schema) {
            return (g, false);
        }
        g = sample_uniform_goal(rng, schema);
    }
    let capped = buffer.is_dominated(&g, schema);
    (g, capped)
}

/// Draws the next episode goal. Reads, never mutates, its inputs.
pub fn sample_goal<S: GoalScorer + ?Sized, R: RngCore>(
    scorer: &S,
    buffer: &ParetoBuffer,
    s0: &DesignState,
    schema: &SpecSchema,
    cfg: &SamplerConfig,
    rng: &mut R,
) -> GoalDraw {
    if buffer.len() <= cfg.n_uniform {
        let goal = sample_uniform_goal(rng, schema);
        return GoalDraw {
            candidates: vec![goal.clone()],
            goal,
            uniform: true,
            q: Vec::new(),
            chosen: 0,
            cap_fired: 0,
        };
    }
    let mut cap_fired = 0;
    let candidates: Vec<TargetGoal> = (0..cfg.n_candidates)
        .map(|_| {
            let (g, capped) = draw_candidate(buffer, schema, cfg.max_reject, rng);
            cap_fired += capped as usize;
            g
        })
        .collect();
    let mut q = vec![0.0; candidates.len()];
    for _ in 0..cfg.actions_per_candidate {
        for (acc, v) in q.iter_mut().zip(scorer.score_goals(s0, &candidates, rng)) {
            *acc += v;
        }
    }
    q.iter_mut().for_each(|v| *v /= cfg.actions_per_candidate as f64);
    let chosen = softmin_categorical(&q, cfg.temperature, rng);
    GoalDraw {
        goal: candidates[chosen].clone(),
        uniform: false,
        candidates,
        q,
        chosen,
        cap_fired,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::goalspace::{Direction, SpecDef};
    use crate::rng;
    use proptest::prelude::*;
    use rand::RngCore;

    struct Fixed(Vec<f64>);

    impl GoalScorer for Fixed {
        fn score_goals(&self, _: &DesignState, goals: &[TargetGoal], _: &mut dyn RngCore) -> Vec<f64> {
            self.0.iter().cycle().take(goals.len()).copied().collect()
        }
    }

    /// Scores a goal by the sum of its specs, so larger demands look easier.
    struct SumScorer;

    impl GoalScorer for SumScorer {
        fn score_goals(&self, _: &DesignState, goals: &[TargetGoal], _: &mut dyn RngCore) -> Vec<f64> {
            goals.iter().map(|g| g.z_hat.iter().sum()).collect()
        }
    }

    fn schema() -> SpecSchema {
        SpecSchema::new(vec![
            SpecDef::new("a", Direction::LowerBounded, "", 1.0, 10.0),
            SpecDef::new("b", Direction::UpperBounded, "", 1.0, 10.0),
        ])
        .unwrap()
    }

    #[test]
    fn two_way_closed_form() {
        let t = 3.0;
        let p = softmin_probs(&[0.0, std::f64::consts::LN_2 * t], t);
        assert!((p[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((p[1] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn shift_invariance() {
        let q = [1.0, -2.0, 0.5, 7.0];
        let shifted: Vec<f64> = q.iter().map(|v| v + 1024.0).collect();
        let a = softmin_probs(&q, 2.0);
        let b = softmin_probs(&shifted, 2.0);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn equal_scores_are_uniform() {
        let mut r = rng::seeded(0);
        let q = vec![1.5; 16];
        let mut counts = [0u32; 16];
        let n = 100_000;
        for _ in 0..n {
            counts[softmin_categorical(&q, 5.0, &mut r)] += 1;
        }
        for c in counts {
            assert!((c as f64 / n as f64 - 1.0 / 16.0).abs() < 0.01);
        }
    }

    #[test]
    fn tiny_temperature_is_greedy() {
        let mut r = rng::seeded(1);
        let q: Vec<f64> = (0..16).map(|i| ((i * 7) % 16) as f64 * 0.1).collect();
        let argmin = q.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        let hits = (0..10_000).filter(|_| softmin_categorical(&q, 1e-6, &mut r) == argmin).count();
        assert!(hits >= 9_990);
    }

    #[test]
    fn non_finite_scores_take_the_batch_minimum() {
        let p = softmin_probs(&[f64::NAN, 2.0, 1.0, f64::NEG_INFINITY], 1.0);
        assert!((p[0] - p[2]).abs() < 1e-15);
        assert!((p[3] - p[2]).abs() < 1e-15);
        assert!(p.iter().all(|v| v.is_finite()));
        let all_bad = softmin_probs(&[f64::NAN, f64::INFINITY], 1.0);
        assert_eq!(all_bad, vec![0.5, 0.5]);
    }

    #[test]
    fn small_buffer_draws_uniformly() {
        let sc = schema();
        let buf = ParetoBuffer::default();
        let s0 = DesignState::new(vec![0.5]);
        let cfg = SamplerConfig::default();
        let d = sample_goal(&Fixed(vec![0.0]), &buf, &s0, &sc, &cfg, &mut rng::seeded(2));
        assert!(d.uniform);
        let direct = sample_uniform_goal(&mut rng::seeded(2), &sc);
        assert_eq!(d.goal, direct);
    }

    #[test]
    fn curriculum_goals_escape_the_frontier() {
        let sc = schema();
        let mut buf = ParetoBuffer::default();
        for z in [[2.0, 2.0], [3.0, 3.0], [4.0, 4.0], [5.0, 5.0], [6.0, 6.0]] {
            buf.insert(&TargetGoal::new(z.to_vec()), &sc).unwrap();
        }
        assert!(buf.len() > SamplerConfig::default().n_uniform);
        let before = buf.clone();
        let s0 = DesignState::new(vec![0.5]);
        let mut r = rng::seeded(3);
        for _ in 0..500 {
            let d = sample_goal(&SumScorer, &buf, &s0, &sc, &SamplerConfig::default(), &mut r);
            assert!(!d.uniform);
            assert_eq!(d.candidates.len(), 16);
            assert_eq!(d.goal, d.candidates[d.chosen]);
            if d.cap_fired == 0 {
                assert!(d.candidates.iter().all(|g| !buf.is_dominated(g, &sc)));
            }
        }
        assert_eq!(buf.entries(), before.entries());
    }

    #[test]
    fn cap_fires_when_everything_is_dominated() {
        let sc = schema();
        // a trade-off front where every entry dominates the whole goal box
        let mut buf = ParetoBuffer::default();
        for k in 0..5 {
            buf.insert(&TargetGoal::new(vec![10.0 + k as f64, 0.6 + 0.1 * k as f64]), &sc).unwrap();
        }
        assert_eq!(buf.len(), 5);
        let cfg = SamplerConfig {
            n_uniform: 0,
            ..Default::default()
        };
        let d = sample_goal(&Fixed(vec![0.0]), &buf, &DesignState::new(vec![0.5]), &sc, &cfg, &mut rng::seeded(4));
        assert_eq!(d.cap_fired, 16);
    }

    #[test]
    fn huge_temperature_is_nearly_uniform() {
        let mut r = rng::seeded(5);
        let q: Vec<f64> = (0..16).map(|i| i as f64).collect();
        let n = 100_000;
        let mut counts = [0u32; 16];
        for _ in 0..n {
            counts[softmin_categorical(&q, 1e6, &mut r)] += 1;
        }
        let kl: f64 = counts
            .iter()
            .filter(|&&c| c > 0)
            .map(|&c| {
                let p = c as f64 / n as f64;
                p * (p * 16.0).ln()
            })
            .sum();
        assert!(kl < 1e-3, "KL = {kl}");
    }

    proptest! {
        #[test]
        fn lower_score_never_less_likely(q in prop::collection::vec(-50.0f64..50.0, 1..20), t in 0.01f64..100.0) {
            let p = softmin_probs(&q, t);
            let total: f64 = p.iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
            for i in 0..q.len() {
                for j in 0..q.len() {
                    if q[i] < q[j] {
                        prop_assert!(p[i] >= p[j]);
                    }
                }
            }
        }
    }
}
