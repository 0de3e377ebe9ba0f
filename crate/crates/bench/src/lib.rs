// SPDX-License-Identifier: Apache-2.0

//! Fixtures shared by the hot-path benchmarks.

use pvtsize_core::envsim::tsa::TwoStageAmp;
use pvtsize_core::envsim::{sof_step, CircuitModel};
use pvtsize_core::goalspace::sample_uniform_goal;
use pvtsize_core::replay::Transition;
use pvtsize_core::rng;
use pvtsize_core::{CornerGrid, DesignState, RewardParams};
use rand::Rng;

/// Random-walk transitions on the amplifier surrogate.
pub fn tsa_transitions(n: usize, seed: u64) -> (TwoStageAmp, Vec<Transition>) {
    let model = TwoStageAmp::new(0);
    let grid = CornerGrid::standard();
    let schema = model.schema().clone();
    let p = RewardParams::default();
    let mut r = rng::seeded(seed);
    let l = model.dim_params();
    let mut s = DesignState::new(vec![0.5; l]);
    let goal = sample_uniform_goal(&mut r, &schema);
    let out = (0..n)
        .map(|t| {
            let a: Vec<f64> = (0..l).map(|_| r.random_range(-0.2..0.2)).collect();
            let step = sof_step(&model, &grid, &schema, &s, &a, &goal, &p, true);
            let tr = Transition::from_step(&s, &a, &goal, t, &step);
            s = step.next_state;
            tr
        })
        .collect();
    (model, out)
}
