// SPDX-License-Identifier: Apache-2.0

//! Goal-conditioned soft actor-critic.
//!
//! Networks see the design state concatenated with the target spec vector
//! normalized by the schema sampling ranges. The indicator pair of a target
//! goal is always `(1, 1)` and is not fed to the networks. Critics also see
//! the action divided by `a_max`.
//!
//! The actor outputs a mean and a raw log-std per action dimension. With
//! `u = mean + std * xi`, the action is `a_max * tanh(u)` and
//! `log pi(a) = sum_i [log N(xi) - log_std - log a_max - log(1 - tanh(u)^2)]`.

use std::path::Path;

use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::approx::{Adam, AdamConfig, AdamDoc, Gradients, Mlp, MlpDoc};
use crate::envsim::{DesignState, DEFAULT_A_MAX};
use crate::error::{Error, Result};
use crate::goalspace::{SpecSchema, TargetGoal};
use crate::replay::Transition;
use crate::rng;

pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;
pub const CHECKPOINT_VERSION: u32 = 1;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfig {
    pub actor_hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
    pub lr: f64,
    pub gamma: f64,
    pub tau: f64,
    pub alpha_init: f64,
    pub autotune_alpha: bool,
    pub a_max: f64,
    pub batch_size: usize,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            actor_hidden: vec![256, 256, 256, 256],
            critic_hidden: vec![256, 256, 128],
            lr: 0.003,
            gamma: 0.8,
            tau: 0.005,
            alpha_init: 0.2,
            autotune_alpha: true,
            a_max: DEFAULT_A_MAX,
            batch_size: 256,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if self.actor_hidden.iter().chain(&self.critic_hidden).any(|&w| w == 0) {
            errs.push("agent.actor_hidden/critic_hidden: widths must be positive".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            errs.push("agent.lr: must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            errs.push("agent.gamma: must lie in [0, 1]".into());
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            errs.push("agent.tau: must lie in (0, 1]".into());
        }
        if !(self.alpha_init > 0.0 && self.alpha_init.is_finite()) {
            errs.push("agent.alpha_init: must be positive".into());
        }
        if !(self.a_max > 0.0 && self.a_max <= 1.0) {
            errs.push("agent.a_max: must lie in (0, 1]".into());
        }
        if self.batch_size == 0 {
            errs.push("agent.batch_size: must be positive".into());
        }
        errs
    }
}

/// Squashed-Gaussian samples for a batch, with the pieces the gradients need.
pub struct PolicySample {
    pub action: Array2<f64>,
    pub log_prob: Array1<f64>,
    /// Pre-squash Gaussian sample.
    pub u: Array2<f64>,
    tanh_u: Array2<f64>,
    std: Array2<f64>,
    xi: Array2<f64>,
    /// 1 where the raw log-std was inside the clamp range.
    ls_live: Array2<f64>,
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

/// `log(1 - tanh(u)^2)` without cancellation for large `|u|`.
fn log_one_minus_tanh_sq(u: f64) -> f64 {
    2.0 * (std::f64::consts::LN_2 - u - softplus(-2.0 * u))
}

fn squash(out: ArrayView2<f64>, xi: Array2<f64>, a_max: f64) -> PolicySample {
    let l = out.ncols() / 2;
    let mean = out.slice(s![.., ..l]);
    let raw = out.slice(s![.., l..]);
    let ls = raw.mapv(|v| v.clamp(LOG_STD_MIN, LOG_STD_MAX));
    let ls_live = raw.mapv(|v| if (LOG_STD_MIN..=LOG_STD_MAX).contains(&v) { 1.0 } else { 0.0 });
    let std = ls.mapv(f64::exp);
    let u = &mean + &(&std * &xi);
    let tanh_u = u.mapv(f64::tanh);
    let action = tanh_u.mapv(|t| a_max * t);
    let ln_amax = a_max.ln();
    let mut log_prob = Array1::zeros(out.nrows());
    for b in 0..out.nrows() {
        let mut acc = 0.0;
        for i in 0..l {
            acc += -0.5 * xi[[b, i]] * xi[[b, i]] - HALF_LN_2PI - ls[[b, i]] - ln_amax - log_one_minus_tanh_sq(u[[b, i]]);
        }
        log_prob[b] = acc;
    }
    PolicySample {
        action,
        log_prob,
        u,
        tanh_u,
        std,
        xi,
        ls_live,
    }
}

fn normal_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.sample(StandardNormal))
}

/// Network-ready columns of a sampled batch.
pub struct Batch {
    pub s: Array2<f64>,
    pub g: Array2<f64>,
    pub a: Array2<f64>,
    pub r: Array1<f64>,
    pub s_next: Array2<f64>,
    pub done: Array1<f64>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.r.len()
    }

    pub fn is_empty(&self) -> bool {
        self.r.is_empty()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateReport {
    pub critic_loss: f64,
    pub actor_loss: f64,
    pub alpha: f64,
    pub entropy: f64,
    pub q_mean: f64,
    pub skipped: bool,
}

#[derive(Clone, Debug)]
pub struct Agent {
    pub cfg: AgentConfig,
    schema: SpecSchema,
    l: usize,
    pub actor: Mlp,
    pub q1: Mlp,
    pub q2: Mlp,
    pub q1_target: Mlp,
    pub q2_target: Mlp,
    log_alpha: f64,
    opt_actor: Adam,
    opt_q1: Adam,
    opt_q2: Adam,
    opt_alpha: Adam,
    updates: u64,
}

impl Agent {
    pub fn new(l: usize, schema: &SpecSchema, cfg: AgentConfig, seed: u64) -> Self {
        let m = schema.len();
        let mut r = rng::stream(seed, rng::Stream::Init);
        let dims = |input: usize, hidden: &[usize], output: usize| {
            let mut d = vec![input];
            d.extend_from_slice(hidden);
            d.push(output);
            d
        };
        let actor = Mlp::new(&dims(l + m, &cfg.actor_hidden, 2 * l), &mut r);
        let q1 = Mlp::new(&dims(2 * l + m, &cfg.critic_hidden, 1), &mut r);
        let q2 = Mlp::new(&dims(2 * l + m, &cfg.critic_hidden, 1), &mut r);
        let adam = AdamConfig::with_lr(cfg.lr);
        Agent {
            opt_actor: Adam::for_net(&actor, adam),
            opt_q1: Adam::for_net(&q1, adam),
            opt_q2: Adam::for_net(&q2, adam),
            opt_alpha: Adam::new(1, adam),
            q1_target: q1.clone(),
            q2_target: q2.clone(),
            actor,
            q1,
            q2,
            log_alpha: cfg.alpha_init.ln(),
            schema: schema.clone(),
            l,
            cfg,
            updates: 0,
        }
    }

    pub fn dim_state(&self) -> usize {
        self.l
    }

    pub fn dim_goal(&self) -> usize {
        self.schema.len()
    }

    pub fn schema(&self) -> &SpecSchema {
        &self.schema
    }

    pub fn alpha(&self) -> f64 {
        self.log_alpha.exp()
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    pub fn target_entropy(&self) -> f64 {
        -(self.l as f64)
    }

    pub fn goal_input(&self, goal: &TargetGoal) -> Vec<f64> {
        self.schema.normalize(&goal.z_hat)
    }

    fn obs_row(&self, s: &DesignState, goal: &TargetGoal) -> Result<Array2<f64>> {
        if s.len() != self.l {
            return Err(Error::dim("design state", self.l, s.len()));
        }
        self.schema.check_len("goal", &goal.z_hat)?;
        let mut v = s.x.clone();
        v.extend(self.goal_input(goal));
        Ok(Array2::from_shape_vec((1, v.len()), v).expect("row"))
    }

    fn critic_input(&self, s: ArrayView2<f64>, g: ArrayView2<f64>, a: ArrayView2<f64>) -> Array2<f64> {
        let a_scaled = a.mapv(|v| v / self.cfg.a_max);
        concatenate![Axis(1), s, g, a_scaled]
    }

    /// Squashed-Gaussian sample for `obs` rows of `state || goal`.
    pub fn sample_policy<R: Rng + ?Sized>(&self, obs: ArrayView2<f64>, rng: &mut R) -> PolicySample {
        let out = self.actor.infer(obs);
        squash(out.view(), normal_matrix(obs.nrows(), self.l, rng), self.cfg.a_max)
    }

    pub fn act_stochastic<R: Rng + ?Sized>(
        &self,
        s: &DesignState,
        goal: &TargetGoal,
        rng: &mut R,
    ) -> Result<(Vec<f64>, f64)> {
        let obs = self.obs_row(s, goal)?;
        let p = self.sample_policy(obs.view(), rng);
        Ok((p.action.row(0).to_vec(), p.log_prob[0]))
    }

    pub fn act_deterministic(&self, s: &DesignState, goal: &TargetGoal) -> Result<Vec<f64>> {
        let obs = self.obs_row(s, goal)?;
        let out = self.actor.infer(obs.view());
        Ok((0..self.l).map(|i| self.cfg.a_max * out[[0, i]].tanh()).collect())
    }

    /// Mean of both critics at `(s, g, a)` rows.
    pub fn q_mean(&self, s: ArrayView2<f64>, g: ArrayView2<f64>, a: ArrayView2<f64>) -> Array1<f64> {
        let x = self.critic_input(s, g, a);
        let q1 = self.q1.infer(x.view());
        let q2 = self.q2.infer(x.view());
        (&q1.column(0) + &q2.column(0)) * 0.5
    }

    /// Critic-mean score of each goal at `s0` with one policy action per goal.
    pub fn score_goals<R: Rng + ?Sized>(&self, s0: &DesignState, goals: &[TargetGoal], rng: &mut R) -> Vec<f64> {
        let n = goals.len();
        let s = Array2::from_shape_fn((n, self.l), |(_, i)| s0.x[i]);
        let m = self.dim_goal();
        let g = Array2::from_shape_vec((n, m), goals.iter().flat_map(|g| self.goal_input(g)).collect())
            .expect("goal rows");
        let obs = concatenate![Axis(1), s, g];
        let p = self.sample_policy(obs.view(), rng);
        self.q_mean(s.view(), g.view(), p.action.view()).to_vec()
    }

    pub fn batch(&self, ts: &[&Transition]) -> Result<Batch> {
        let n = ts.len();
        let (l, m) = (self.l, self.dim_goal());
        let mut s = Array2::zeros((n, l));
        let mut g = Array2::zeros((n, m));
        let mut a = Array2::zeros((n, l));
        let mut s_next = Array2::zeros((n, l));
        let mut r = Array1::zeros(n);
        let mut done = Array1::zeros(n);
        for (b, t) in ts.iter().enumerate() {
            if t.s.len() != l || t.s_next.len() != l || t.a.len() != l {
                return Err(Error::dim("transition state/action", l, t.s.len()));
            }
            self.schema.check_len("transition goal", &t.goal.z_hat)?;
            s.row_mut(b).assign(&Array1::from(t.s.x.clone()));
            s_next.row_mut(b).assign(&Array1::from(t.s_next.x.clone()));
            a.row_mut(b).assign(&Array1::from(t.a.clone()));
            g.row_mut(b).assign(&Array1::from(self.goal_input(&t.goal)));
            r[b] = t.r;
            done[b] = if t.terminal { 1.0 } else { 0.0 };
        }
        Ok(Batch {
            s,
            g,
            a,
            r,
            s_next,
            done,
        })
    }

    /// Bootstrapped critic targets with next actions from noise `xi`.
    pub fn critic_targets(&self, batch: &Batch, xi: Array2<f64>) -> Array1<f64> {
        let obs = concatenate![Axis(1), batch.s_next, batch.g];
        let out = self.actor.infer(obs.view());
        let p = squash(out.view(), xi, self.cfg.a_max);
        let x = self.critic_input(batch.s_next.view(), batch.g.view(), p.action.view());
        let q1 = self.q1_target.infer(x.view());
        let q2 = self.q2_target.infer(x.view());
        let alpha = self.alpha();
        Array1::from_shape_fn(batch.len(), |b| {
            let soft = q1[[b, 0]].min(q2[[b, 0]]) - alpha * p.log_prob[b];
            batch.r[b] + self.cfg.gamma * (1.0 - batch.done[b]) * soft
        })
    }

    /// Mean squared error of both critics against `y`.
    pub fn critic_loss(&self, batch: &Batch, y: &Array1<f64>) -> (f64, f64) {
        let x = self.critic_input(batch.s.view(), batch.g.view(), batch.a.view());
        let mse = |net: &Mlp| {
            let q = net.infer(x.view());
            q.column(0).iter().zip(y).map(|(q, y)| (q - y).powi(2)).sum::<f64>() / y.len() as f64
        };
        (mse(&self.q1), mse(&self.q2))
    }

    fn critic_grads(&self, net: &Mlp, x: &Array2<f64>, y: &Array1<f64>) -> (f64, Gradients, f64) {
        let (q, tape) = net.forward_batch(x.view());
        let n = y.len() as f64;
        let diff = &q.column(0) - y;
        let loss = diff.iter().map(|d| d * d).sum::<f64>() / n;
        let up = diff.mapv(|d| 2.0 * d / n).insert_axis(Axis(1));
        let (g, _) = net.backward(&tape, up.view());
        (loss, g, q.mean().unwrap_or(0.0))
    }

    /// Actor objective `mean(alpha * logp - min(q1, q2))` for fixed noise,
    /// with its parameter gradient and the per-row log-probabilities.
    pub fn actor_objective(
        &self,
        s: ArrayView2<f64>,
        g: ArrayView2<f64>,
        xi: Array2<f64>,
    ) -> (f64, Gradients, Array1<f64>) {
        let n = s.nrows();
        let l = self.l;
        let a_max = self.cfg.a_max;
        let alpha = self.alpha();
        let obs = concatenate![Axis(1), s, g];
        let (out, atape) = self.actor.forward_batch(obs.view());
        let p = squash(out.view(), xi, a_max);
        let x = self.critic_input(s, g, p.action.view());
        let (q1, t1) = self.q1.forward_batch(x.view());
        let (q2, t2) = self.q2.forward_batch(x.view());

        let nf = n as f64;
        let mut loss = 0.0;
        let mut up1 = Array2::zeros((n, 1));
        let mut up2 = Array2::zeros((n, 1));
        for b in 0..n {
            let (a, c) = (q1[[b, 0]], q2[[b, 0]]);
            loss += alpha * p.log_prob[b] - a.min(c);
            if a <= c {
                up1[[b, 0]] = -1.0 / nf;
            } else {
                up2[[b, 0]] = -1.0 / nf;
            }
        }
        loss /= nf;
        let (_, gx1) = self.q1.backward(&t1, up1.view());
        let (_, gx2) = self.q2.backward(&t2, up2.view());
        let a_col = l + self.dim_goal();
        // critic input holds a / a_max
        let d_action = (&gx1.slice(s![.., a_col..]) + &gx2.slice(s![.., a_col..])) / a_max;

        let mut up = Array2::zeros((n, 2 * l));
        let d_logp = alpha / nf;
        for b in 0..n {
            for i in 0..l {
                let t = p.tanh_u[[b, i]];
                let sx = p.std[[b, i]] * p.xi[[b, i]];
                let da_du = a_max * (1.0 - t * t);
                let dl_du = d_action[[b, i]] * da_du + d_logp * 2.0 * t;
                up[[b, i]] = dl_du;
                // d logp / d log_std carries an extra -1 from the Gaussian density
                up[[b, l + i]] = p.ls_live[[b, i]] * (dl_du * sx - d_logp);
            }
        }
        let (grads, _) = self.actor.backward(&atape, up.view());
        (loss, grads, p.log_prob)
    }

    /// One soft actor-critic step on `batch`.
    pub fn update<R: Rng + ?Sized>(&mut self, batch: &Batch, rng: &mut R) -> UpdateReport {
        let n = batch.len();
        let xi_next = normal_matrix(n, self.l, rng);
        let xi = normal_matrix(n, self.l, rng);
        let mut report = UpdateReport {
            alpha: self.alpha(),
            ..Default::default()
        };
        if n == 0 {
            report.skipped = true;
            return report;
        }

        let y = self.critic_targets(batch, xi_next);
        let x = self.critic_input(batch.s.view(), batch.g.view(), batch.a.view());
        let (l1, g1, qm1) = self.critic_grads(&self.q1, &x, &y);
        let (l2, g2, qm2) = self.critic_grads(&self.q2, &x, &y);
        report.critic_loss = 0.5 * (l1 + l2);
        report.q_mean = 0.5 * (qm1 + qm2);
        if !report.critic_loss.is_finite() {
            report.skipped = true;
            return report;
        }
        self.opt_q1.step_net(&mut self.q1, &g1);
        self.opt_q2.step_net(&mut self.q2, &g2);

        let (actor_loss, ga, logp) = self.actor_objective(batch.s.view(), batch.g.view(), xi);
        report.actor_loss = actor_loss;
        report.entropy = -logp.mean().unwrap_or(0.0);
        if actor_loss.is_finite() {
            self.opt_actor.step_net(&mut self.actor, &ga);
            if self.cfg.autotune_alpha {
                let grad = -(logp.mean().unwrap_or(0.0) + self.target_entropy());
                let mut la = [self.log_alpha];
                self.opt_alpha.step_slice(&mut la, &[grad]);
                self.log_alpha = la[0];
            }
        } else {
            report.skipped = true;
        }

        self.q1_target.polyak_from(&self.q1, self.cfg.tau);
        self.q2_target.polyak_from(&self.q2, self.cfg.tau);
        self.updates += 1;
        report.alpha = self.alpha();
        report
    }

    pub fn is_finite(&self) -> bool {
        self.log_alpha.is_finite()
            && [&self.actor, &self.q1, &self.q2, &self.q1_target, &self.q2_target]
                .iter()
                .all(|n| n.is_finite())
    }

    pub fn to_checkpoint(&self, seed: u64, s0: &DesignState, step: u64, train_sims: u64) -> Checkpoint {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            seed,
            step,
            train_sims,
            updates: self.updates,
            config: self.cfg.clone(),
            schema: self.schema.clone(),
            dim_state: self.l,
            s0: s0.x.clone(),
            actor: self.actor.to_doc(),
            q1: self.q1.to_doc(),
            q2: self.q2.to_doc(),
            q1_target: self.q1_target.to_doc(),
            q2_target: self.q2_target.to_doc(),
            log_alpha: self.log_alpha,
            opt_actor: self.opt_actor.to_doc(),
            opt_q1: self.opt_q1.to_doc(),
            opt_q2: self.opt_q2.to_doc(),
            opt_alpha: self.opt_alpha.to_doc(),
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported checkpoint version {}", ck.version)));
        }
        let errs = ck.schema.validate();
        if !errs.is_empty() {
            return Err(Error::Checkpoint(errs.join("; ")));
        }
        let l = ck.dim_state;
        let m = ck.schema.len();
        let actor = Mlp::from_doc(&ck.actor)?;
        let q1 = Mlp::from_doc(&ck.q1)?;
        let q2 = Mlp::from_doc(&ck.q2)?;
        let q1_target = Mlp::from_doc(&ck.q1_target)?;
        let q2_target = Mlp::from_doc(&ck.q2_target)?;
        if actor.input_dim() != l + m || actor.output_dim() != 2 * l {
            return Err(Error::Checkpoint("actor shape does not match state and goal widths".into()));
        }
        for q in [&q1, &q2, &q1_target, &q2_target] {
            if q.input_dim() != 2 * l + m || q.output_dim() != 1 {
                return Err(Error::Checkpoint("critic shape does not match state and goal widths".into()));
            }
        }
        Ok(Agent {
            opt_actor: Adam::from_doc(&ck.opt_actor, actor.param_count())?,
            opt_q1: Adam::from_doc(&ck.opt_q1, q1.param_count())?,
            opt_q2: Adam::from_doc(&ck.opt_q2, q2.param_count())?,
            opt_alpha: Adam::from_doc(&ck.opt_alpha, 1)?,
            cfg: ck.config.clone(),
            schema: ck.schema.clone(),
            l,
            actor,
            q1,
            q2,
            q1_target,
            q2_target,
            log_alpha: ck.log_alpha,
            updates: ck.updates,
        })
    }
}

/// Everything needed to resume or deploy an agent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub version: u32,
    pub seed: u64,
    pub step: u64,
    /// Training simulations spent up to this point.
    #[serde(default)]
    pub train_sims: u64,
    pub updates: u64,
    pub config: AgentConfig,
    pub schema: SpecSchema,
    pub dim_state: usize,
    pub s0: Vec<f64>,
    pub actor: MlpDoc,
    pub q1: MlpDoc,
    pub q2: MlpDoc,
    pub q1_target: MlpDoc,
    pub q2_target: MlpDoc,
    pub log_alpha: f64,
    pub opt_actor: AdamDoc,
    pub opt_q1: AdamDoc,
    pub opt_q2: AdamDoc,
    pub opt_alpha: AdamDoc,
}

impl Checkpoint {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Checkpoint(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::goalspace::{Direction, SpecDef};

    fn schema(m: usize) -> SpecSchema {
        SpecSchema::new(
            (0..m)
                .map(|j| SpecDef::new(&format!("m{j}"), Direction::LowerBounded, "", 1.0, 5.0))
                .collect(),
        )
        .unwrap()
    }

    fn small(l: usize, m: usize, seed: u64) -> Agent {
        let cfg = AgentConfig {
            actor_hidden: vec![8, 8],
            critic_hidden: vec![8, 6],
            ..Default::default()
        };
        Agent::new(l, &schema(m), cfg, seed)
    }

    fn random_batch(agent: &Agent, n: usize, r: &mut rng::Rng) -> Batch {
        let (l, m) = (agent.dim_state(), agent.dim_goal());
        Batch {
            s: Array2::from_shape_simple_fn((n, l), || r.random_range(0.0..1.0)),
            g: Array2::from_shape_simple_fn((n, m), || r.random_range(0.0..1.0)),
            a: Array2::from_shape_simple_fn((n, l), || r.random_range(-0.2..0.2)),
            r: Array1::from_shape_simple_fn(n, || r.random_range(-6.0..30.0)),
            s_next: Array2::from_shape_simple_fn((n, l), || r.random_range(0.0..1.0)),
            done: Array1::from_shape_simple_fn(n, || if r.random_bool(0.2) { 1.0 } else { 0.0 }),
        }
    }

    #[test]
    fn stable_log_term_matches_naive() {
        for &u in &[-3.0, -0.5, 0.0, 0.2, 1.7, 4.0] {
            let naive = (1.0 - f64::tanh(u).powi(2)).ln();
            assert!((log_one_minus_tanh_sq(u) - naive).abs() < 1e-10);
        }
        assert!(log_one_minus_tanh_sq(400.0).is_finite());
    }

    #[test]
    fn actions_stay_in_bounds() {
        let agent = small(3, 2, 0);
        let mut r = rng::seeded(1);
        let obs = Array2::from_shape_simple_fn((100_000, 5), || r.random_range(-2.0..2.0));
        let p = agent.sample_policy(obs.view(), &mut r);
        assert!(p.action.iter().all(|a| a.abs() <= agent.cfg.a_max));
        assert!(p.log_prob.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn zero_std_limit_is_deterministic_action() {
        let mut agent = small(2, 2, 3);
        let last = agent.actor.num_layers() - 1;
        // push the log-std head to the lower clamp
        for v in agent.actor.bias_mut(last).slice_mut(s![2..]).iter_mut() {
            *v = -1e3;
        }
        let s0 = DesignState::new(vec![0.3, 0.6]);
        let goal = TargetGoal::new(vec![2.0, 3.0]);
        let (a, _) = agent.act_stochastic(&s0, &goal, &mut rng::seeded(4)).unwrap();
        let d = agent.act_deterministic(&s0, &goal).unwrap();
        for (x, y) in a.iter().zip(&d) {
            assert!((x - y).abs() < 1e-8);
        }
        assert_eq!(d, agent.act_deterministic(&s0, &goal).unwrap());
    }

    #[test]
    fn zero_trunk_gives_zero_action() {
        let mut agent = small(2, 1, 0);
        agent.actor = Mlp::zeros(agent.actor.dims());
        let a = agent
            .act_deterministic(&DesignState::new(vec![0.1, 0.9]), &TargetGoal::new(vec![3.0]))
            .unwrap();
        assert_eq!(a, vec![0.0, 0.0]);
    }

    #[test]
    fn pre_squash_entropy_matches_closed_form() {
        let mut agent = small(3, 1, 0);
        agent.actor = Mlp::zeros(agent.actor.dims());
        let mut r = rng::seeded(8);
        let n = 200_000;
        let obs = Array2::zeros((n, 4));
        let p = agent.sample_policy(obs.view(), &mut r);
        // undo the squash correction to recover the Gaussian log-density
        let a_max = agent.cfg.a_max;
        let mut h = 0.0;
        for b in 0..n {
            let mut lg = p.log_prob[b];
            for i in 0..3 {
                lg += a_max.ln() + log_one_minus_tanh_sq(p.u[[b, i]]);
            }
            h -= lg;
        }
        h /= n as f64;
        let closed = 3.0 * 0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E).ln();
        assert!((h - closed).abs() / closed < 0.02, "{h} vs {closed}");
    }

    #[test]
    fn gamma_zero_targets_equal_rewards() {
        let mut agent = small(2, 2, 5);
        agent.cfg.gamma = 0.0;
        let mut r = rng::seeded(6);
        let b = random_batch(&agent, 32, &mut r);
        let y = agent.critic_targets(&b, normal_matrix(32, 2, &mut r));
        assert_eq!(y, b.r);
    }

    #[test]
    fn terminal_rows_do_not_bootstrap() {
        let agent = small(2, 2, 7);
        let mut r = rng::seeded(7);
        for _ in 0..50 {
            let b = random_batch(&agent, 16, &mut r);
            let y = agent.critic_targets(&b, normal_matrix(16, 2, &mut r));
            for i in 0..16 {
                if b.done[i] == 1.0 {
                    assert_eq!(y[i], b.r[i]);
                }
            }
        }
    }

    #[test]
    fn tau_one_copies_critics() {
        let mut agent = small(2, 2, 9);
        agent.cfg.tau = 1.0;
        let mut r = rng::seeded(9);
        let b = random_batch(&agent, 16, &mut r);
        agent.update(&b, &mut r);
        assert_eq!(agent.q1_target, agent.q1);
        assert_eq!(agent.q2_target, agent.q2);
    }

    #[test]
    fn critic_step_reduces_mse() {
        let mut agent = small(2, 2, 10);
        agent.cfg.lr = 1e-3;
        let mut r = rng::seeded(10);
        let b = random_batch(&agent, 64, &mut r);
        let y = agent.critic_targets(&b, normal_matrix(64, 2, &mut r));
        let before = agent.critic_loss(&b, &y);
        let x = agent.critic_input(b.s.view(), b.g.view(), b.a.view());
        let (_, g1, _) = agent.critic_grads(&agent.q1, &x, &y);
        let (_, g2, _) = agent.critic_grads(&agent.q2, &x, &y);
        agent.opt_q1.step_net(&mut agent.q1, &g1);
        agent.opt_q2.step_net(&mut agent.q2, &g2);
        let after = agent.critic_loss(&b, &y);
        assert!(after.0 < before.0 && after.1 < before.1);
    }

    #[test]
    fn actor_gradient_matches_finite_difference() {
        let mut agent = small(2, 2, 11);
        agent.log_alpha = 0.3f64.ln();
        let mut r = rng::seeded(11);
        let b = random_batch(&agent, 8, &mut r);
        let xi = normal_matrix(8, 2, &mut r);
        let (_, g, _) = agent.actor_objective(b.s.view(), b.g.view(), xi.clone());
        let analytic = g.flat();
        let base = agent.actor.flat_params();
        let h = 1e-6;
        let mut worst: f64 = 0.0;
        for k in 0..base.len() {
            let mut p = base.clone();
            p[k] += h;
            agent.actor.set_flat_params(&p);
            let (lp, _, _) = agent.actor_objective(b.s.view(), b.g.view(), xi.clone());
            p[k] -= 2.0 * h;
            agent.actor.set_flat_params(&p);
            let (lm, _, _) = agent.actor_objective(b.s.view(), b.g.view(), xi.clone());
            let fd = (lp - lm) / (2.0 * h);
            let err = (fd - analytic[k]).abs() / (fd.abs() + analytic[k].abs()).max(1e-6);
            worst = worst.max(err);
        }
        agent.actor.set_flat_params(&base);
        assert!(worst < 1e-4, "max relative error {worst}");
    }

    #[test]
    fn bandit_q_converges_to_reward_mean() {
        let cfg = AgentConfig {
            actor_hidden: vec![8],
            critic_hidden: vec![16],
            gamma: 0.0,
            lr: 0.003,
            ..Default::default()
        };
        let mut agent = Agent::new(1, &schema(1), cfg, 12);
        let mut r = rng::seeded(12);
        let n = 64;
        let mut b = random_batch(&agent, n, &mut r);
        b.s.fill(0.5);
        b.g.fill(0.5);
        b.s_next.fill(0.5);
        b.r.fill(1.0);
        for _ in 0..2000 {
            b.a = Array2::from_shape_simple_fn((n, 1), || r.random_range(-0.2..0.2));
            agent.update(&b, &mut r);
        }
        let q = agent.q_mean(b.s.view(), b.g.view(), b.a.view());
        let mean = q.mean().unwrap();
        assert!((mean - 1.0).abs() < 0.01, "{mean}");
    }

    #[test]
    fn fixed_seed_updates_are_reproducible() {
        let run = || {
            let mut agent = small(2, 2, 13);
            let mut r = rng::seeded(13);
            let b = random_batch(&agent, 32, &mut r);
            (0..5).map(|_| agent.update(&b, &mut r)).collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn goal_permutation_changes_critic_output() {
        let agent = small(2, 2, 14);
        let mut r = rng::seeded(14);
        let b = random_batch(&agent, 16, &mut r);
        let q = agent.q_mean(b.s.view(), b.g.view(), b.a.view());
        let mut g = b.g.clone();
        g.invert_axis(Axis(0));
        let q2 = agent.q_mean(b.s.view(), g.view(), b.a.view());
        assert_ne!(q, q2);
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let mut agent = small(2, 3, 15);
        let mut r = rng::seeded(15);
        let b = random_batch(&agent, 16, &mut r);
        agent.update(&b, &mut r);
        let s0 = DesignState::new(vec![0.25, 0.75]);
        let ck = agent.to_checkpoint(15, &s0, 1, 17);
        let back = Checkpoint::from_json(&ck.to_json().unwrap()).unwrap();
        assert_eq!(back, ck);
        let restored = Agent::from_checkpoint(&back).unwrap();
        assert_eq!(restored.actor, agent.actor);
        assert_eq!(restored.q2_target, agent.q2_target);
        assert_eq!(restored.alpha().to_bits(), agent.alpha().to_bits());

        let mut bad = ck.clone();
        bad.dim_state = 3;
        assert!(Agent::from_checkpoint(&bad).is_err());
    }
}
