// SPDX-License-Identifier: Apache-2.0

//! End-to-end training loop, deployment evaluation and run metrics.
//!
//! Each episode starts from the fixed reset state, draws a goal from the
//! curriculum, rolls the stochastic policy for at most `H` steps under the
//! skip-on-fail stage machine, adds hindsight twins, and then runs one
//! gradient step per environment step collected. The deterministic policy
//! is evaluated every `eval_period` steps on a frozen goal set.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::agent::{Agent, Checkpoint, UpdateReport};
use crate::config::{LoggingConfig, RunConfig};
use crate::envsim::{sof_step, CircuitModel, CornerGrid, Counted, DesignState, Env};
use crate::error::{Error, Result};
use crate::events::{EventKind, EventSink};
use crate::goalspace::{sample_uniform_goal, ParetoBuffer, SpecSchema, TargetGoal};
use crate::pdgs::{sample_goal, GoalDraw};
use crate::replay::{cher_relabel, ReplayBuffer, Transition};
use crate::reward::{sigma_default, stage_reward, RewardParams};
use crate::rng::{self, Stream};

/// Consecutive faulted steps after which the simulator is declared dead.
pub const MAX_CONSECUTIVE_FAULTS: u64 = 1000;

pub const METRICS_HEADER: &str = "step,sr,s_sim,s_dev,sim_count";

/// Fraction of successful episodes.
pub fn success_rate(successes: usize, n_goals: usize) -> f64 {
    assert!(n_goals > 0, "success rate over zero goals");
    successes as f64 / n_goals as f64
}

/// Success rate per million simulations; absent when nothing was simulated.
pub fn s_sim(sr: f64, sim_count: u64) -> Option<f64> {
    (sim_count > 0).then(|| sr / sim_count as f64 * 1e6)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GoalOutcome {
    pub success: bool,
    pub steps: usize,
    /// Corner-consistency penalty at the final step of a successful episode.
    pub final_sigma: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub sr: f64,
    pub s_sim: Option<f64>,
    pub s_dev: Option<f64>,
    /// Training simulations behind the evaluated policy.
    pub sim_count: u64,
    pub successes: usize,
    pub n_goals: usize,
    /// Simulations spent by this evaluation itself.
    pub eval_sim_count: u64,
    pub per_goal: Vec<GoalOutcome>,
}

impl MetricsReport {
    pub fn from_outcomes(per_goal: Vec<GoalOutcome>, sim_count: u64, eval_sim_count: u64) -> Self {
        let n_goals = per_goal.len();
        let successes = per_goal.iter().filter(|g| g.success).count();
        let sr = success_rate(successes, n_goals);
        let sigmas: Vec<f64> = per_goal.iter().filter_map(|g| g.final_sigma).collect();
        let s_dev = (!sigmas.is_empty()).then(|| sigmas.iter().sum::<f64>() / sigmas.len() as f64);
        MetricsReport {
            sr,
            s_sim: s_sim(sr, sim_count),
            s_dev,
            sim_count,
            successes,
            n_goals,
            eval_sim_count,
            per_goal,
        }
    }
}

/// One metrics CSV row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub step: u64,
    pub sr: f64,
    pub s_sim: Option<f64>,
    pub s_dev: Option<f64>,
    pub sim_count: u64,
}

impl MetricsRow {
    pub fn csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        format!("{},{},{},{},{}", self.step, self.sr, opt(self.s_sim), opt(self.s_dev), self.sim_count)
    }
}

/// Picks the best of `n` uniform designs by nominal-only stage-1 reward
/// against the midpoint target. Returns the state and the simulations used.
pub fn select_reset_state<R: Rng + ?Sized>(
    model: &dyn CircuitModel,
    grid: &CornerGrid,
    schema: &SpecSchema,
    p: &RewardParams,
    n: usize,
    rng: &mut R,
) -> Result<(DesignState, u64)> {
    assert!(n >= 1, "need at least one reset candidate");
    let l = model.dim_params();
    let proxy = TargetGoal::new(schema.midpoint());
    let mut best: Option<(f64, DesignState)> = None;
    for _ in 0..n {
        let s = DesignState::new((0..l).map(|_| rng.random_range(0.0..1.0)).collect());
        let z = match model.simulate(&s, &grid.nominal) {
            Ok(z) if z.len() == schema.len() && z.iter().all(|v| v.is_finite()) => z,
            _ => continue,
        };
        let score = stage_reward(1, &z, None, &proxy, schema, p, p.r_anchor);
        if best.as_ref().is_none_or(|(b, _)| score > *b) {
            best = Some((score, s));
        }
    }
    best.map(|(_, s)| (s, n as u64))
        .ok_or_else(|| Error::Simulator(format!("all {n} reset candidates failed to simulate")))
}

/// The frozen evaluation goals of a run.
pub fn eval_goal_set(schema: &SpecSchema, n: usize, seed: u64) -> Vec<TargetGoal> {
    let mut r = rng::stream(seed, Stream::EvalGoals);
    (0..n).map(|_| sample_uniform_goal(&mut r, schema)).collect()
}

/// Deterministic deployment rollouts. No learning and no buffer writes.
///
/// The returned report carries `sim_count = 0`; callers attach the training
/// simulation count with [`MetricsReport::from_outcomes`] semantics.
#[allow(clippy::too_many_arguments)]
pub fn evaluate(
    agent: &Agent,
    model: &dyn CircuitModel,
    grid: &CornerGrid,
    schema: &SpecSchema,
    s0: &DesignState,
    goals: &[TargetGoal],
    horizon: usize,
    p: &RewardParams,
    train_sims: u64,
) -> Result<MetricsReport> {
    if goals.is_empty() {
        return Err(Error::Contract("evaluation needs at least one goal".into()));
    }
    let mut per_goal = Vec::with_capacity(goals.len());
    let mut sims = 0;
    for goal in goals {
        let mut s = s0.clone();
        let mut outcome = GoalOutcome {
            success: false,
            steps: 0,
            final_sigma: None,
        };
        for t in 0..horizon {
            let a = agent.act_deterministic(&s, goal)?;
            let out = sof_step(model, grid, schema, &s, &a, goal, p, true);
            sims += out.sim_count;
            outcome.steps = t + 1;
            if out.terminal {
                outcome.success = true;
                outcome.final_sigma = out.corners.as_ref().map(|zm| sigma_default(zm, &out.z0));
                break;
            }
            s = out.next_state;
        }
        per_goal.push(outcome);
    }
    Ok(MetricsReport::from_outcomes(per_goal, train_sims, sims))
}

/// Where a run writes its artifacts. Every part is optional.
pub struct RunOutputs {
    pub events: EventSink,
    pub metrics: Option<Box<dyn Write + Send>>,
    pub checkpoint_dir: Option<PathBuf>,
    pub periodic_checkpoints: bool,
}

impl RunOutputs {
    pub fn none() -> Self {
        RunOutputs {
            events: EventSink::disabled(),
            metrics: None,
            checkpoint_dir: None,
            periodic_checkpoints: false,
        }
    }

    /// Metrics only, into any writer.
    pub fn metrics_only(w: Box<dyn Write + Send>) -> Self {
        RunOutputs {
            metrics: Some(w),
            ..Self::none()
        }
    }

    /// `events.jsonl`, `metrics.csv` and `checkpoints/` under `dir`.
    pub fn to_dir(dir: &Path, logging: &LoggingConfig) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        let ckpt = dir.join("checkpoints");
        std::fs::create_dir_all(&ckpt)?;
        let events = if logging.events {
            EventSink::new(Box::new(BufWriter::new(File::create(dir.join("events.jsonl"))?)), logging.env_steps)
        } else {
            EventSink::disabled()
        };
        Ok(RunOutputs {
            events,
            metrics: Some(Box::new(BufWriter::new(File::create(dir.join("metrics.csv"))?))),
            checkpoint_dir: Some(ckpt),
            periodic_checkpoints: logging.checkpoints,
        })
    }

    fn save(&self, name: &str, ck: &Checkpoint) -> Result<()> {
        if let Some(dir) = &self.checkpoint_dir {
            ck.save(&dir.join(format!("{name}.json")))?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub final_checkpoint: Checkpoint,
    pub best_checkpoint: Checkpoint,
    pub best_report: Option<MetricsReport>,
    pub history: Vec<MetricsRow>,
    pub pareto: ParetoBuffer,
    pub s0: DesignState,
    pub steps: u64,
    pub episodes: u64,
    /// Simulations launched by training steps.
    pub train_sims: u64,
    /// Simulations launched while choosing the reset state.
    pub reset_sims: u64,
    /// Simulations launched by evaluations.
    pub eval_sims: u64,
    /// Independent count from a wrapper around the model.
    pub audited_sims: u64,
    pub stage_counts: [u64; 3],
    pub failed_steps: u64,
    pub updates: u64,
}

struct UpdateTally {
    n: u64,
    sum: UpdateReport,
    skipped: u64,
}

impl UpdateTally {
    fn new() -> Self {
        UpdateTally {
            n: 0,
            sum: UpdateReport::default(),
            skipped: 0,
        }
    }

    fn add(&mut self, r: &UpdateReport) {
        self.n += 1;
        self.sum.critic_loss += r.critic_loss;
        self.sum.actor_loss += r.actor_loss;
        self.sum.entropy += r.entropy;
        self.sum.q_mean += r.q_mean;
        self.sum.alpha = r.alpha;
        self.skipped += r.skipped as u64;
    }

    fn payload(&self) -> serde_json::Value {
        let k = self.n.max(1) as f64;
        json!({
            "n": self.n,
            "critic_loss": self.sum.critic_loss / k,
            "actor_loss": self.sum.actor_loss / k,
            "entropy": self.sum.entropy / k,
            "q_mean": self.sum.q_mean / k,
            "alpha": self.sum.alpha,
            "skipped": self.skipped,
        })
    }
}

/// Runs a full training job against `model`.
pub fn train(cfg: &RunConfig, model: Arc<dyn CircuitModel>, out: &mut RunOutputs) -> Result<TrainOutcome> {
    let tc = &cfg.trainer;
    let schema = cfg.effective_schema(model.as_ref())?;
    let counted = Arc::new(Counted::new(model));
    let seed = tc.seed;
    let l = counted.dim_params();

    let mut agent = Agent::new(l, &schema, cfg.agent.clone(), seed);
    let (s0, reset_sims) = select_reset_state(
        counted.as_ref(),
        &cfg.corners,
        &schema,
        &cfg.reward,
        tc.reset_candidates,
        &mut rng::stream(seed, Stream::ResetState),
    )?;
    let goals = eval_goal_set(&schema, tc.n_eval, seed);
    let mut env = Env::new(counted.clone(), cfg.corners.clone(), schema.clone(), cfg.reward.clone());
    env.skip_on_fail = tc.skip_on_fail;

    let mut r_goals = rng::stream(seed, Stream::Goals);
    let mut r_policy = rng::stream(seed, Stream::Policy);
    let mut r_replay = rng::stream(seed, Stream::Replay);
    let mut r_relabel = rng::stream(seed, Stream::Relabel);

    let mut pareto = ParetoBuffer::with_capacity(tc.pareto_capacity);
    let mut replay = ReplayBuffer::with_capacity(tc.replay_capacity);
    let mut history = Vec::new();
    let mut best: Option<(MetricsReport, Checkpoint)> = None;

    if let Some(w) = out.metrics.as_mut() {
        writeln!(w, "{METRICS_HEADER}")?;
    }
    let initial = agent.to_checkpoint(seed, &s0, 0, 0);
    out.events.emit(0, 0, EventKind::Checkpoint, json!({"tag": "initial", "pareto": pareto.entries()}))?;
    if out.periodic_checkpoints {
        out.save("latest", &initial)?;
    }

    let mut step = 0u64;
    let mut episode = 0u64;
    let mut train_sims = 0u64;
    let mut eval_sims = 0u64;
    let mut stage_counts = [0u64; 3];
    let mut failed_steps = 0u64;
    let mut fault_streak = 0u64;
    let mut last_eval: Option<u64> = None;

    let mut run_eval = |agent: &Agent,
                        step: u64,
                        episode: u64,
                        train_sims: u64,
                        pareto: &ParetoBuffer,
                        out: &mut RunOutputs|
     -> Result<u64> {
        let report = evaluate(
            agent,
            counted.as_ref(),
            &cfg.corners,
            &schema,
            &s0,
            &goals,
            tc.horizon,
            &cfg.reward,
            train_sims,
        )?;
        let row = MetricsRow {
            step,
            sr: report.sr,
            s_sim: report.s_sim,
            s_dev: report.s_dev,
            sim_count: train_sims,
        };
        if let Some(w) = out.metrics.as_mut() {
            writeln!(w, "{}", row.csv())?;
        }
        out.events.emit(
            step,
            episode,
            EventKind::Eval,
            json!({
                "sr": report.sr,
                "s_sim": report.s_sim,
                "s_dev": report.s_dev,
                "sim_count": train_sims,
                "eval_sim_count": report.eval_sim_count,
                "successes": report.successes,
                "n_goals": report.n_goals,
            }),
        )?;
        let ck = agent.to_checkpoint(seed, &s0, step, train_sims);
        let improved = best.as_ref().is_none_or(|(b, _)| report.sr > b.sr);
        out.events.emit(
            step,
            episode,
            EventKind::Checkpoint,
            json!({"tag": if improved { "best" } else { "latest" }, "sr": report.sr, "pareto": pareto.entries()}),
        )?;
        if out.periodic_checkpoints {
            out.save("latest", &ck)?;
        }
        if improved {
            out.save("best", &ck)?;
            best = Some((report.clone(), ck));
        }
        history.push(row);
        Ok(report.eval_sim_count)
    };

    while step < tc.total_steps {
        let draw = if tc.use_pdgs {
            sample_goal(&agent, &pareto, &s0, &schema, &cfg.sampler, &mut r_goals)
        } else {
            let goal = sample_uniform_goal(&mut r_goals, &schema);
            GoalDraw {
                candidates: vec![goal.clone()],
                goal,
                uniform: true,
                q: Vec::new(),
                chosen: 0,
                cap_fired: 0,
            }
        };
        out.events.emit(
            step,
            episode,
            EventKind::GoalSampled,
            json!({
                "goal": draw.goal.z_hat,
                "uniform": draw.uniform,
                "candidates": if draw.uniform { json!([]) } else { json!(draw.candidates.iter().map(|g| &g.z_hat).collect::<Vec<_>>()) },
                "q": draw.q,
                "chosen": draw.chosen,
                "cap_fired": draw.cap_fired,
                "buffer_size": pareto.len(),
            }),
        )?;
        let goal = draw.goal;

        let mut s = s0.clone();
        let mut ep: Vec<Transition> = Vec::with_capacity(tc.horizon);
        for t in 0..tc.horizon {
            if step >= tc.total_steps {
                break;
            }
            let (a, _) = agent.act_stochastic(&s, &goal, &mut r_policy)?;
            let o = env.step(&s, &a, &goal);
            step += 1;
            train_sims += o.sim_count;
            stage_counts[(o.stage - 1) as usize] += 1;
            if o.failed {
                failed_steps += 1;
                fault_streak += 1;
                if fault_streak >= MAX_CONSECUTIVE_FAULTS {
                    return Err(Error::Simulator(format!(
                        "{fault_streak} consecutive simulator faults, last at step {step}"
                    )));
                }
            } else {
                fault_streak = 0;
            }
            if o.terminal {
                pareto.insert(&goal, &schema)?;
            }
            let mut payload = json!({
                "t": t,
                "stage": o.stage,
                "reward": o.reward,
                "sim_count": o.sim_count,
                "failed": o.failed,
                "terminal": o.terminal,
            });
            if o.terminal {
                payload["buffer_size"] = json!(pareto.len());
            }
            out.events.emit(step, episode, EventKind::EnvStep, payload)?;
            ep.push(Transition::from_step(&s, &a, &goal, t, &o));
            s = o.next_state;

            if step.is_multiple_of(tc.eval_period) {
                eval_sims += run_eval(&agent, step, episode, train_sims, &pareto, out)?;
                last_eval = Some(step);
            }
            if o.terminal {
                break;
            }
        }

        let n_new = ep.len();
        let synthetics = if tc.use_cher {
            cher_relabel(&ep, &schema, &cfg.reward, &mut r_relabel)
        } else {
            Vec::new()
        };
        replay.push_episode(ep, synthetics);

        let mut tally = UpdateTally::new();
        for _ in 0..n_new {
            if replay.len() < cfg.agent.batch_size {
                break;
            }
            let ts = replay.sample_batch(cfg.agent.batch_size, &mut r_replay)?;
            let batch = agent.batch(&ts)?;
            let rep = agent.update(&batch, &mut r_policy);
            tally.add(&rep);
        }
        if tally.n > 0 {
            if !agent.is_finite() {
                return Err(Error::Diverged(format!(
                    "non-finite network parameters after step {step} (episode {episode})"
                )));
            }
            out.events.emit(step, episode, EventKind::Update, tally.payload())?;
        }
        episode += 1;
    }

    if last_eval != Some(step) {
        eval_sims += run_eval(&agent, step, episode, train_sims, &pareto, out)?;
    }

    let final_checkpoint = agent.to_checkpoint(seed, &s0, step, train_sims);
    out.save("final", &final_checkpoint)?;
    out.events.emit(
        step,
        episode,
        EventKind::Checkpoint,
        json!({"tag": "final", "pareto": pareto.entries()}),
    )?;
    out.events.flush()?;
    if let Some(w) = out.metrics.as_mut() {
        w.flush()?;
    }

    let (best_report, best_checkpoint) = match best {
        Some((r, c)) => (Some(r), c),
        None => (None, final_checkpoint.clone()),
    };
    Ok(TrainOutcome {
        final_checkpoint,
        best_checkpoint,
        best_report,
        history,
        pareto,
        s0,
        steps: step,
        episodes: episode,
        train_sims,
        reset_sims,
        eval_sims,
        audited_sims: counted.calls(),
        stage_counts,
        failed_steps,
        updates: agent.updates(),
    })
}
