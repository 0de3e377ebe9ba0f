// SPDX-License-Identifier: Apache-2.0

use ndarray::{Array2, ArrayView2};
use proptest::prelude::*;
use pvtsize_core::approx::{Adam, AdamConfig, Mlp};
use pvtsize_core::rng;
use rand::Rng;

const FD_STEP: f64 = 1e-5;

fn weighted_output(net: &Mlp, x: ArrayView2<f64>, c: &Array2<f64>) -> f64 {
    (net.infer(x) * c).sum()
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    /// One random parameter or input coordinate per case.
    #[test]
    fn finite_difference_probe(
        dims in prop::collection::vec(1usize..=16, 2..=5),
        batch in 1usize..=4,
        seed in any::<u64>(),
        pick in any::<u64>(),
    ) {
        let mut r = rng::seeded(seed);
        let net = Mlp::new(&dims, &mut r);
        let x = Array2::from_shape_fn((batch, dims[0]), |_| r.random_range(-1.5..1.5));
        let c = Array2::from_shape_fn((batch, *dims.last().unwrap()), |_| r.random_range(-1.0..1.0));
        let (_, tape) = net.forward_batch(x.view());
        let (grads, dx) = net.backward(&tape, c.view());
        let n_params = net.param_count();
        let k = (pick % (n_params + x.len()) as u64) as usize;
        let (analytic, numeric) = if k < n_params {
            let theta = net.flat_params();
            let mut probe = net.clone();
            let mut t = theta.clone();
            t[k] += FD_STEP;
            probe.set_flat_params(&t);
            let up = weighted_output(&probe, x.view(), &c);
            t[k] -= 2.0 * FD_STEP;
            probe.set_flat_params(&t);
            let down = weighted_output(&probe, x.view(), &c);
            (grads.flat()[k], (up - down) / (2.0 * FD_STEP))
        } else {
            let idx = k - n_params;
            let (i, j) = (idx / dims[0], idx % dims[0]);
            let mut xp = x.clone();
            xp[[i, j]] += FD_STEP;
            let up = weighted_output(&net, xp.view(), &c);
            xp[[i, j]] -= 2.0 * FD_STEP;
            let down = weighted_output(&net, xp.view(), &c);
            (dx[[i, j]], (up - down) / (2.0 * FD_STEP))
        };
        prop_assert!(rel_err(analytic, numeric) < 1e-4, "analytic {analytic}, numeric {numeric}");
    }
}

#[test]
fn adam_fits_linear_target_with_monotone_loss() {
    let mut r = rng::seeded(3);
    let w_true = [0.7, -1.3, 0.4];
    let x = Array2::from_shape_fn((64, 3), |_| r.random_range(-1.0..1.0));
    let y = x.dot(&ndarray::arr1(&w_true)).insert_axis(ndarray::Axis(1)) + 0.25;
    let mut net = Mlp::new(&[3, 1], &mut r);
    let mut opt = Adam::for_net(&net, AdamConfig::with_lr(1e-2));
    let mut losses = Vec::new();
    for _ in 0..400 {
        let (out, tape) = net.forward_batch(x.view());
        let resid = &out - &y;
        losses.push(resid.mapv(|v| v * v).mean().unwrap());
        let up = resid * (2.0 / 64.0);
        let (g, _) = net.backward(&tape, up.view());
        assert!(opt.step_net(&mut net, &g));
    }
    for (t, w) in losses.windows(2).enumerate().skip(10) {
        assert!(w[1] <= w[0], "loss rose at step {}: {} -> {}", t + 1, w[0], w[1]);
    }
    assert!(*losses.last().unwrap() < 1e-3 * losses[0]);
}

#[test]
fn adam_zero_gradient_leaves_params_unchanged() {
    let mut r = rng::seeded(4);
    let mut net = Mlp::new(&[4, 5, 2], &mut r);
    let before = net.flat_params();
    let mut opt = Adam::for_net(&net, AdamConfig::default());
    let x = Array2::zeros((1, 4));
    let (_, tape) = net.forward_batch(x.view());
    let (g, _) = net.backward(&tape, Array2::zeros((1, 2)).view());
    for _ in 0..5 {
        opt.step_net(&mut net, &g);
    }
    assert_eq!(net.flat_params(), before);
}

#[test]
fn identical_runs_give_identical_trajectories() {
    let run = || {
        let mut r = rng::seeded(5);
        let mut net = Mlp::new(&[3, 8, 8, 1], &mut r);
        let mut opt = Adam::for_net(&net, AdamConfig::default());
        let mut traj = Vec::new();
        for _ in 0..50 {
            let x = Array2::from_shape_fn((16, 3), |_| r.random_range(-1.0..1.0));
            let (out, tape) = net.forward_batch(x.view());
            let (g, _) = net.backward(&tape, out.view());
            opt.step_net(&mut net, &g);
            traj.push(net.flat_params());
        }
        traj
    };
    assert_eq!(run(), run());
}
