// SPDX-License-Identifier: Apache-2.0

//! Seeded quadratic-bowl test circuit.
//!
//! Metric `j` is `c_j - sum_i q_ji (x_i - o_ji)^2` with every spec
//! lower-bounded. An extreme corner multiplies `c_j` by `p_kj` and each
//! optimum coordinate `o_ji` by `u_kji`, all drawn once from `[0.9, 1.1]`
//! using the model seed and the corner identity. The nominal corner is
//! unperturbed.

use rand::Rng;

use crate::envsim::{CircuitModel, CornerGrid, CornerId, DesignState, ParamDef, Scale};
use crate::error::{Error, Result};
use crate::goalspace::{Direction, SpecDef, SpecSchema};
use crate::rng;

/// Per-corner multiplicative factors for the bowl coefficients.
#[derive(Clone, Debug, PartialEq)]
pub struct BowlPerturbation {
    /// `p[j]` scales `c_j`.
    pub peak: Vec<f64>,
    /// `u[j][i]` scales `o_ji`.
    pub center: Vec<Vec<f64>>,
}

#[derive(Clone, Debug)]
pub struct QuadBowl {
    seed: u64,
    params: Vec<ParamDef>,
    schema: SpecSchema,
    peak: Vec<f64>,
    curvature: Vec<Vec<f64>>,
    center: Vec<Vec<f64>>,
}

/// Margin below the guaranteed-feasible worst-case value used for the top of
/// each sampling range.
const RANGE_MARGIN: f64 = 0.25;

impl QuadBowl {
    pub fn new(l: usize, m: usize, seed: u64) -> Result<Self> {
        if !(l >= m && m >= 1) {
            return Err(Error::Schema(format!(
                "quad_bowl needs L >= M >= 1, got L = {l}, M = {m}"
            )));
        }
        let mut r = rng::stream(seed, rng::Stream::Model);
        let peak: Vec<f64> = (0..m).map(|_| r.random_range(8.0..12.0)).collect();
        let curvature: Vec<Vec<f64>> = (0..m)
            .map(|_| (0..l).map(|_| r.random_range(4.0..8.0)).collect())
            .collect();
        let center: Vec<Vec<f64>> = (0..m)
            .map(|_| (0..l).map(|_| r.random_range(0.25..0.75)).collect())
            .collect();
        let params = (0..l)
            .map(|i| ParamDef::new(&format!("x{i}"), 0.0, 1.0, Scale::Linear))
            .collect();
        let mut bowl = QuadBowl {
            seed,
            params,
            // placeholder replaced below once the ranges are known
            schema: SpecSchema::new(vec![SpecDef::new("tmp", Direction::LowerBounded, "", 1.0, 2.0)])?,
            peak,
            curvature,
            center,
        };
        bowl.schema = bowl.feasible_schema(&CornerGrid::standard())?;
        Ok(bowl)
    }

    /// Sampling ranges chosen so the hardest goal is met at every corner of
    /// `grid` by the design that averages the nominal optima.
    fn feasible_schema(&self, grid: &CornerGrid) -> Result<SpecSchema> {
        let l = self.params.len();
        let m = self.peak.len();
        let x_star: Vec<f64> = (0..l)
            .map(|i| self.center.iter().map(|o| o[i]).sum::<f64>() / m as f64)
            .collect();
        let s = DesignState::new(x_star);
        let mut worst = self.eval(&s, None);
        for c in &grid.extremes {
            let z = self.eval(&s, Some(&self.perturbation(c)));
            for (w, v) in worst.iter_mut().zip(z) {
                *w = w.min(v);
            }
        }
        let specs = worst
            .iter()
            .enumerate()
            .map(|(j, &w)| {
                let hi = w - RANGE_MARGIN;
                SpecDef::new(&format!("m{j}"), Direction::LowerBounded, "", 0.5 * hi, hi)
            })
            .collect();
        SpecSchema::new(specs)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn peak(&self) -> &[f64] {
        &self.peak
    }

    /// Nominal optimum of metric `j`.
    pub fn optimum(&self, j: usize) -> &[f64] {
        &self.center[j]
    }

    pub fn perturbation(&self, corner: &CornerId) -> BowlPerturbation {
        let m = self.peak.len();
        let l = self.params.len();
        if corner.is_nominal() {
            return BowlPerturbation {
                peak: vec![1.0; m],
                center: vec![vec![1.0; l]; m],
            };
        }
        let mut r = rng::seeded(self.seed ^ corner.key());
        BowlPerturbation {
            peak: (0..m).map(|_| r.random_range(0.9..=1.1)).collect(),
            center: (0..m)
                .map(|_| (0..l).map(|_| r.random_range(0.9..=1.1)).collect())
                .collect(),
        }
    }

    fn eval(&self, s: &DesignState, p: Option<&BowlPerturbation>) -> Vec<f64> {
        (0..self.peak.len())
            .map(|j| {
                let c = self.peak[j] * p.map_or(1.0, |p| p.peak[j]);
                let bowl: f64 = s
                    .x
                    .iter()
                    .enumerate()
                    .map(|(i, &x)| {
                        let o = self.center[j][i] * p.map_or(1.0, |p| p.center[j][i]);
                        self.curvature[j][i] * (x - o).powi(2)
                    })
                    .sum();
                c - bowl
            })
            .collect()
    }

    /// Analytic gradient of metric `j` at the nominal corner.
    pub fn gradient(&self, j: usize, s: &DesignState) -> Vec<f64> {
        s.x.iter()
            .enumerate()
            .map(|(i, &x)| -2.0 * self.curvature[j][i] * (x - self.center[j][i]))
            .collect()
    }
}

impl CircuitModel for QuadBowl {
    fn params(&self) -> &[ParamDef] {
        &self.params
    }

    fn schema(&self) -> &SpecSchema {
        &self.schema
    }

    fn simulate(&self, state: &DesignState, corner: &CornerId) -> Result<Vec<f64>> {
        if state.len() != self.params.len() {
            return Err(Error::dim("design state", self.params.len(), state.len()));
        }
        if corner.is_nominal() {
            Ok(self.eval(state, None))
        } else {
            Ok(self.eval(state, Some(&self.perturbation(corner))))
        }
    }
}
