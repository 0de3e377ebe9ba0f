// SPDX-License-Identifier: Apache-2.0

use serde::{Deserialize, Serialize};

use super::mlp::{Gradients, Mlp};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 3e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            ..Default::default()
        }
    }
}

/// First and second moment estimates for one parameter vector.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub cfg: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
    skipped: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamDoc {
    pub cfg: AdamConfig,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    pub skipped: u64,
}

impl Adam {
    pub fn new(n_params: usize, cfg: AdamConfig) -> Self {
        Adam {
            cfg,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
            skipped: 0,
        }
    }

    pub fn for_net(net: &Mlp, cfg: AdamConfig) -> Self {
        Self::new(net.param_count(), cfg)
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Updates refused because the gradient held a NaN or infinity.
    pub fn skipped(&self) -> u64 {
        self.skipped
    }

    fn update(&mut self, i: usize, p: &mut f64, g: f64) {
        let c = &self.cfg;
        self.m[i] = c.beta1 * self.m[i] + (1.0 - c.beta1) * g;
        self.v[i] = c.beta2 * self.v[i] + (1.0 - c.beta2) * g * g;
        let mh = self.m[i] / (1.0 - c.beta1.powi(self.t as i32));
        let vh = self.v[i] / (1.0 - c.beta2.powi(self.t as i32));
        *p -= c.lr * mh / (vh.sqrt() + c.eps);
    }

    /// One descent step. Returns `false` and leaves everything untouched when
    /// the gradient is not finite.
    pub fn step_net(&mut self, net: &mut Mlp, grads: &Gradients) -> bool {
        assert_eq!(self.m.len(), net.param_count(), "optimizer and network disagree");
        if !grads.is_finite() {
            self.skipped += 1;
            return false;
        }
        self.t += 1;
        net.apply(grads, |p, g, i| self.update(i, p, g));
        true
    }

    pub fn step_slice(&mut self, params: &mut [f64], grads: &[f64]) -> bool {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        if grads.iter().any(|g| !g.is_finite()) {
            self.skipped += 1;
            return false;
        }
        self.t += 1;
        for (i, (p, &g)) in params.iter_mut().zip(grads).enumerate() {
            self.update(i, p, g);
        }
        true
    }

    pub fn to_doc(&self) -> AdamDoc {
        AdamDoc {
            cfg: self.cfg,
            m: self.m.clone(),
            v: self.v.clone(),
            t: self.t,
            skipped: self.skipped,
        }
    }

    pub fn from_doc(doc: &AdamDoc, n_params: usize) -> Result<Self> {
        if doc.m.len() != n_params || doc.v.len() != n_params {
            return Err(Error::Checkpoint(format!(
                "optimizer state holds {} moments, network has {n_params} parameters",
                doc.m.len()
            )));
        }
        Ok(Adam {
            cfg: doc.cfg,
            m: doc.m.clone(),
            v: doc.v.clone(),
            t: doc.t,
            skipped: doc.skipped,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use ndarray::Array2;

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = vec![1.0, -1.0];
        let mut opt = Adam::new(2, AdamConfig::with_lr(0.1));
        assert!(opt.step_slice(&mut p, &[3.0, -0.5]));
        // bias-corrected first step is lr * sign(g) up to eps
        assert!((p[0] - 0.9).abs() < 1e-8);
        assert!((p[1] + 0.9).abs() < 1e-8);
    }

    #[test]
    fn minimizes_quadratic() {
        let mut p = vec![5.0];
        let mut opt = Adam::new(1, AdamConfig::with_lr(0.05));
        for _ in 0..2000 {
            let g = 2.0 * (p[0] - 2.0);
            opt.step_slice(&mut p, &[g]);
        }
        assert!((p[0] - 2.0).abs() < 1e-3);
    }

    #[test]
    fn non_finite_gradient_is_skipped() {
        let mut net = Mlp::new(&[2, 3, 1], &mut rng::seeded(0));
        let before = net.clone();
        let mut opt = Adam::for_net(&net, AdamConfig::default());
        let mut g = Gradients::zeros_like(&net);
        g.w[0] = Array2::from_elem((2, 3), f64::NAN);
        assert!(!opt.step_net(&mut net, &g));
        assert_eq!(net, before);
        assert_eq!(opt.steps(), 0);
        assert_eq!(opt.skipped(), 1);
    }

    #[test]
    fn doc_round_trip() {
        let mut opt = Adam::new(3, AdamConfig::default());
        let mut p = vec![0.1, 0.2, 0.3];
        opt.step_slice(&mut p, &[0.3, 0.1, -0.7]);
        let json = serde_json::to_string(&opt.to_doc()).unwrap();
        let back = Adam::from_doc(&serde_json::from_str(&json).unwrap(), 3).unwrap();
        assert_eq!(back, opt);
        assert!(Adam::from_doc(&opt.to_doc(), 4).is_err());
    }
}
