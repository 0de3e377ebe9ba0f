// SPDX-License-Identifier: Apache-2.0

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use ndarray::Array2;
use pvtsize_bench::tsa_transitions;
use pvtsize_core::approx::Mlp;
use pvtsize_core::envsim::sof_step;
use pvtsize_core::goalspace::{sample_uniform_goal, ParetoBuffer};
use pvtsize_core::rng;
use pvtsize_core::{Agent, AgentConfig, CircuitModel, CornerGrid, DesignState, RewardParams, TargetGoal};
use rand::Rng;

fn mlp(c: &mut Criterion) {
    let mut r = rng::seeded(1);
    let net = Mlp::new(&[16, 256, 256, 256, 1], &mut r);
    let x = Array2::from_shape_fn((256, 16), |_| r.random_range(-1.0..1.0));
    let up = Array2::from_elem((256, 1), 1.0 / 256.0);
    c.bench_function("mlp_forward_256x3_batch256", |b| b.iter(|| black_box(net.infer(x.view()))));
    c.bench_function("mlp_forward_backward_256x3_batch256", |b| {
        b.iter(|| {
            let (_, tape) = net.forward_batch(x.view());
            black_box(net.backward(&tape, up.view()))
        })
    });
}

fn env_step(c: &mut Criterion) {
    let (model, _) = tsa_transitions(1, 0);
    let grid = CornerGrid::standard();
    let schema = model.schema().clone();
    let p = RewardParams::default();
    let s = DesignState::new(vec![0.5; model.dim_params()]);
    let a = vec![0.05; model.dim_params()];
    // a trivially met goal exercises the full corner sweep
    let easy = TargetGoal::new(schema.specs().iter().map(|d| d.direction.sign() * -1e12).collect());
    c.bench_function("sof_step_tsa_all_corners", |b| {
        b.iter(|| black_box(sof_step(&model, &grid, &schema, &s, &a, &easy, &p, true)))
    });
}

fn pareto(c: &mut Criterion) {
    let (model, _) = tsa_transitions(1, 0);
    let schema = model.schema().clone();
    let mut r = rng::seeded(2);
    let goals: Vec<TargetGoal> = (0..1000).map(|_| sample_uniform_goal(&mut r, &schema)).collect();
    c.bench_function("pareto_insert_1000", |b| {
        b.iter_batched(
            ParetoBuffer::default,
            |mut buf| {
                for g in &goals {
                    buf.insert(g, &schema).unwrap();
                }
                buf
            },
            BatchSize::SmallInput,
        )
    });
}

fn sac_update(c: &mut Criterion) {
    let (model, transitions) = tsa_transitions(256, 3);
    let schema = model.schema().clone();
    let cfg = AgentConfig {
        actor_hidden: vec![64, 64],
        critic_hidden: vec![64, 64],
        ..AgentConfig::default()
    };
    let mut agent = Agent::new(model.dim_params(), &schema, cfg, 0);
    let refs: Vec<_> = transitions.iter().collect();
    let batch = agent.batch(&refs).unwrap();
    let mut r = rng::seeded(4);
    c.bench_function("sac_update_64x2_batch256", |b| b.iter(|| black_box(agent.update(&batch, &mut r))));
}

criterion_group!(benches, mlp, env_step, pareto, sac_update);
criterion_main!(benches);
