// SPDX-License-Identifier: Apache-2.0

//! Specification schema, goal encodings and Pareto dominance.
//!
//! All comparisons happen in *canonical* space, where every metric is
//! oriented so that larger is better: lower-bounded specs (gain, bandwidth)
//! keep their sign and upper-bounded specs (power, settling time) are
//! negated.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    /// Metric must be at least the target (`>=`).
    LowerBounded,
    /// Metric must be at most the target (`<=`).
    UpperBounded,
}

impl Direction {
    #[inline]
    pub fn sign(self) -> f64 {
        match self {
            Direction::LowerBounded => 1.0,
            Direction::UpperBounded => -1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpecDef {
    pub name: String,
    pub direction: Direction,
    #[serde(default)]
    pub unit: String,
    pub range_lo: f64,
    pub range_hi: f64,
}

impl SpecDef {
    pub fn new(name: &str, direction: Direction, unit: &str, lo: f64, hi: f64) -> Self {
        SpecDef {
            name: name.to_string(),
            direction,
            unit: unit.to_string(),
            range_lo: lo,
            range_hi: hi,
        }
    }

    /// Sampling midpoint, used as a goal-independent proxy target.
    pub fn midpoint(&self) -> f64 {
        0.5 * (self.range_lo + self.range_hi)
    }

    /// A finite metric value that is maximally unsatisfying for every target
    /// in the sampling range without changing sign.
    pub fn sentinel(&self) -> f64 {
        match self.direction {
            Direction::LowerBounded if self.range_lo > 0.0 => 0.0,
            Direction::LowerBounded => 2.0 * self.range_lo,
            Direction::UpperBounded if self.range_hi > 0.0 => 2.0 * self.range_hi,
            Direction::UpperBounded => 0.0,
        }
    }
}

/// The ordered set of performance specifications for one circuit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SpecSchema {
    specs: Vec<SpecDef>,
}

impl SpecSchema {
    pub fn new(specs: Vec<SpecDef>) -> Result<Self> {
        let schema = SpecSchema { specs };
        let errors = schema.validate();
        if errors.is_empty() {
            Ok(schema)
        } else {
            Err(Error::Schema(errors.join("; ")))
        }
    }

    /// Returns every invariant violation; empty when valid.
    pub fn validate(&self) -> Vec<String> {
        let mut errors = Vec::new();
        if self.specs.is_empty() {
            errors.push("schema must define at least one spec".to_string());
        }
        for (j, s) in self.specs.iter().enumerate() {
            if !(s.range_lo.is_finite() && s.range_hi.is_finite()) {
                errors.push(format!("specs[{j}] ({}): range must be finite", s.name));
            } else if s.range_lo > s.range_hi {
                errors.push(format!(
                    "specs[{j}] ({}): range_lo {} exceeds range_hi {}",
                    s.name, s.range_lo, s.range_hi
                ));
            } else if s.range_lo <= 0.0 && s.range_hi >= 0.0 {
                errors.push(format!(
                    "specs[{j}] ({}): range [{}, {}] contains zero",
                    s.name, s.range_lo, s.range_hi
                ));
            }
        }
        errors
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.specs.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.specs.is_empty()
    }

    pub fn specs(&self) -> &[SpecDef] {
        &self.specs
    }

    pub fn directions(&self) -> impl Iterator<Item = Direction> + '_ {
        self.specs.iter().map(|s| s.direction)
    }

    pub fn names(&self) -> Vec<String> {
        self.specs.iter().map(|s| s.name.clone()).collect()
    }

    pub fn midpoint(&self) -> Vec<f64> {
        self.specs.iter().map(SpecDef::midpoint).collect()
    }

    pub fn sentinel(&self) -> Vec<f64> {
        self.specs.iter().map(SpecDef::sentinel).collect()
    }

    pub(crate) fn check_len(&self, what: &'static str, v: &[f64]) -> Result<()> {
        if v.len() == self.len() {
            Ok(())
        } else {
            Err(Error::dim(what, self.len(), v.len()))
        }
    }

    /// Maps a raw goal vector onto `[0, 1]` per spec using the sampling
    /// range. Degenerate ranges map to 0.5 at the point and extrapolate
    /// with unit scale elsewhere.
    pub fn normalize(&self, z: &[f64]) -> Vec<f64> {
        self.specs
            .iter()
            .zip(z)
            .map(|(s, &v)| {
                let span = s.range_hi - s.range_lo;
                if span > 0.0 {
                    (v - s.range_lo) / span
                } else {
                    0.5 + (v - s.range_lo) / s.range_lo.abs().max(1.0)
                }
            })
            .collect()
    }
}

/// Sign-flips upper-bounded metrics so that larger is always better.
pub fn canonicalize(z: &[f64], schema: &SpecSchema) -> Result<Vec<f64>> {
    schema.check_len("metric vector", z)?;
    Ok(z.iter()
        .zip(schema.directions())
        .map(|(&v, d)| d.sign() * v)
        .collect())
}

#[inline]
fn weakly_dominates_raw(a: &[f64], b: &[f64], schema: &SpecSchema) -> bool {
    debug_assert_eq!(a.len(), schema.len());
    debug_assert_eq!(b.len(), schema.len());
    a.iter()
        .zip(b)
        .zip(schema.directions())
        .all(|((&x, &y), d)| d.sign() * x >= d.sign() * y)
}

/// True when metrics `z` meet every spec of target `z_hat`; equality passes.
pub fn satisfies(z: &[f64], z_hat: &[f64], schema: &SpecSchema) -> Result<bool> {
    schema.check_len("metric vector", z)?;
    schema.check_len("target vector", z_hat)?;
    Ok(weakly_dominates_raw(z, z_hat, schema))
}

/// Weak Pareto dominance of `a` over `g` in canonical space.
///
/// Identical vectors dominate each other.
pub fn dominates(a: &[f64], g: &[f64], schema: &SpecSchema) -> Result<bool> {
    satisfies(a, g, schema)
}

/// Target goal: spec values plus the constant "satisfy everywhere"
/// indicator pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetGoal {
    pub z_hat: Vec<f64>,
}

impl TargetGoal {
    pub const INDICATORS: (u8, u8) = (1, 1);

    pub fn new(z_hat: Vec<f64>) -> Self {
        TargetGoal { z_hat }
    }

    /// Full encoding `z_hat || [1, 1]`.
    pub fn encode(&self) -> Vec<f64> {
        let mut v = self.z_hat.clone();
        v.extend([1.0, 1.0]);
        v
    }
}

/// Achieved goal `z || [d_nom, d]` from one environment step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AchievedGoal {
    pub z: Vec<f64>,
    pub d_nom: bool,
    pub d: bool,
}

impl AchievedGoal {
    pub fn from_stage(z: Vec<f64>, stage: u8) -> Self {
        AchievedGoal {
            z,
            d_nom: stage >= 2,
            d: stage == 3,
        }
    }

    pub fn stage(&self) -> u8 {
        match (self.d_nom, self.d) {
            (false, _) => 1,
            (true, false) => 2,
            (true, true) => 3,
        }
    }

    pub fn encode(&self) -> Vec<f64> {
        let mut v = self.z.clone();
        v.push(if self.d_nom { 1.0 } else { 0.0 });
        v.push(if self.d { 1.0 } else { 0.0 });
        v
    }
}

/// Independent uniform draw per spec over its sampling range.
pub fn sample_uniform_goal<R: Rng + ?Sized>(rng: &mut R, schema: &SpecSchema) -> TargetGoal {
    let z_hat = schema
        .specs()
        .iter()
        .map(|s| {
            if s.range_hi > s.range_lo {
                rng.random_range(s.range_lo..=s.range_hi)
            } else {
                s.range_lo
            }
        })
        .collect();
    TargetGoal { z_hat }
}

pub const DEFAULT_PARETO_CAPACITY: usize = 4096;

/// Frontier of goals that have been fully satisfied during training.
///
/// No entry weakly dominates another. Inserting a goal already dominated by
/// the frontier is a no-op; inserting a new frontier point removes every
/// entry it dominates.
#[derive(Clone, Debug, PartialEq)]
pub struct ParetoBuffer {
    entries: Vec<Vec<f64>>,
    capacity: usize,
}

impl Default for ParetoBuffer {
    fn default() -> Self {
        ParetoBuffer::with_capacity(DEFAULT_PARETO_CAPACITY)
    }
}

impl ParetoBuffer {
    pub fn with_capacity(capacity: usize) -> Self {
        assert!(capacity > 0, "pareto buffer capacity must be positive");
        ParetoBuffer {
            entries: Vec::new(),
            capacity,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Raw (un-canonicalized) goal vectors on the frontier.
    pub fn entries(&self) -> &[Vec<f64>] {
        &self.entries
    }

    pub fn is_dominated(&self, g: &TargetGoal, schema: &SpecSchema) -> bool {
        self.is_dominated_raw(&g.z_hat, schema)
    }

    pub fn is_dominated_raw(&self, z: &[f64], schema: &SpecSchema) -> bool {
        self.entries
            .iter()
            .any(|e| weakly_dominates_raw(e, z, schema))
    }

    /// Returns true when the goal was added to the frontier.
    pub fn insert(&mut self, g: &TargetGoal, schema: &SpecSchema) -> Result<bool> {
        schema.check_len("goal", &g.z_hat)?;
        if self.is_dominated_raw(&g.z_hat, schema) {
            return Ok(false);
        }
        self.entries
            .retain(|e| !weakly_dominates_raw(&g.z_hat, e, schema));
        if self.entries.len() >= self.capacity {
            self.evict_least_demanding(schema);
        }
        self.entries.push(g.z_hat.clone());
        Ok(true)
    }

    fn evict_least_demanding(&mut self, schema: &SpecSchema) {
        let norm = |e: &Vec<f64>| -> f64 {
            e.iter()
                .zip(schema.directions())
                .map(|(&v, d)| (d.sign() * v).powi(2))
                .sum::<f64>()
        };
        if let Some((idx, _)) = self
            .entries
            .iter()
            .map(norm)
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(&b.1))
        {
            self.entries.swap_remove(idx);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use proptest::prelude::*;
    use rand::Rng;

    fn lower(m: usize) -> SpecSchema {
        SpecSchema::new(
            (0..m)
                .map(|j| SpecDef::new(&format!("m{j}"), Direction::LowerBounded, "", 1.0, 20.0))
                .collect(),
        )
        .unwrap()
    }

    fn gain_power() -> SpecSchema {
        SpecSchema::new(vec![
            SpecDef::new("gain", Direction::LowerBounded, "dB", 46.0, 52.0),
            SpecDef::new("power", Direction::UpperBounded, "mW", 3.3, 33.0),
        ])
        .unwrap()
    }

    #[test]
    fn canonicalize_examples() {
        assert_eq!(canonicalize(&[46.0, 60.0], &lower(2)).unwrap(), vec![46.0, 60.0]);
        let s = gain_power();
        assert_eq!(canonicalize(&[46.0, 3.3], &s).unwrap(), vec![46.0, -3.3]);
        // applying the sign flags twice is the identity
        let once = canonicalize(&[46.0, 3.3], &s).unwrap();
        assert_eq!(canonicalize(&once, &s).unwrap(), vec![46.0, 3.3]);
        assert!(matches!(
            canonicalize(&[1.0], &s),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn satisfies_examples() {
        let s = gain_power();
        assert!(satisfies(&[46.0, 3.3], &[46.0, 3.3], &s).unwrap());
        let g = SpecSchema::new(vec![SpecDef::new("gain", Direction::LowerBounded, "dB", 46.0, 52.0)]).unwrap();
        assert!(!satisfies(&[45.0], &[46.0], &g).unwrap());
        let p = SpecSchema::new(vec![SpecDef::new("power", Direction::UpperBounded, "mW", 3.3, 33.0)]).unwrap();
        assert!(satisfies(&[3.0], &[3.3], &p).unwrap());
    }

    #[test]
    fn dominance_examples() {
        let s = lower(2);
        assert!(dominates(&[50.0, 10.0], &[46.0, 5.0], &s).unwrap());
        assert!(!dominates(&[50.0, 4.0], &[46.0, 5.0], &s).unwrap());
        assert!(dominates(&[46.0, 5.0], &[46.0, 5.0], &s).unwrap());
    }

    #[test]
    fn buffer_examples() {
        let s = lower(2);
        let mut b = ParetoBuffer::default();
        assert!(!b.is_dominated(&TargetGoal::new(vec![46.0, 5.0]), &s));
        assert!(b.insert(&TargetGoal::new(vec![50.0, 10.0]), &s).unwrap());
        assert_eq!(b.entries(), &[vec![50.0, 10.0]]);
        assert!(b.is_dominated(&TargetGoal::new(vec![46.0, 5.0]), &s));
        assert!(!b.insert(&TargetGoal::new(vec![46.0, 5.0]), &s).unwrap());
        assert_eq!(b.len(), 1);

        let mut b = ParetoBuffer::default();
        b.insert(&TargetGoal::new(vec![46.0, 5.0]), &s).unwrap();
        b.insert(&TargetGoal::new(vec![50.0, 10.0]), &s).unwrap();
        assert_eq!(b.entries(), &[vec![50.0, 10.0]]);

        let mut b = ParetoBuffer::default();
        b.insert(&TargetGoal::new(vec![50.0, 4.0]), &s).unwrap();
        assert!(!b.is_dominated(&TargetGoal::new(vec![46.0, 5.0]), &s));
    }

    #[test]
    fn capacity_evicts_smallest_norm() {
        let s = lower(2);
        let mut b = ParetoBuffer::with_capacity(2);
        b.insert(&TargetGoal::new(vec![1.0, 10.0]), &s).unwrap();
        b.insert(&TargetGoal::new(vec![3.0, 3.0]), &s).unwrap();
        b.insert(&TargetGoal::new(vec![10.0, 1.0]), &s).unwrap();
        assert_eq!(b.len(), 2);
        assert!(!b.entries().contains(&vec![3.0, 3.0]));
    }

    #[test]
    fn schema_rejects_zero_crossing_and_inverted_ranges() {
        assert!(SpecSchema::new(vec![SpecDef::new("a", Direction::LowerBounded, "", -1.0, 1.0)]).is_err());
        assert!(SpecSchema::new(vec![SpecDef::new("a", Direction::LowerBounded, "", 2.0, 1.0)]).is_err());
        assert!(SpecSchema::new(vec![]).is_err());
        // negative ranges are fine (PSRR-style)
        assert!(SpecSchema::new(vec![SpecDef::new("psrr", Direction::UpperBounded, "dB", -20.0, -10.0)]).is_ok());
    }

    #[test]
    fn degenerate_range_is_constant() {
        let s = SpecSchema::new(vec![SpecDef::new("pm", Direction::LowerBounded, "deg", 60.0, 60.0)]).unwrap();
        let mut r = rng::seeded(3);
        for _ in 0..100 {
            assert_eq!(sample_uniform_goal(&mut r, &s).z_hat, vec![60.0]);
        }
    }

    #[test]
    fn uniform_goal_marginal_mean_and_support() {
        let s = lower(3);
        let mut r = rng::seeded(11);
        let n = 100_000;
        let mut sum = 0.0;
        for _ in 0..n {
            let g = sample_uniform_goal(&mut r, &s);
            assert!(g.z_hat.iter().all(|&v| (1.0..=20.0).contains(&v)));
            sum += g.z_hat[0];
        }
        let mean = sum / n as f64;
        assert!((mean - 10.5).abs() < 0.1, "mean {mean}");
    }

    #[test]
    fn sentinel_is_worst_for_whole_range() {
        let s = SpecSchema::new(vec![
            SpecDef::new("gain", Direction::LowerBounded, "", 46.0, 52.0),
            SpecDef::new("power", Direction::UpperBounded, "", 3.3, 33.0),
            SpecDef::new("psrr", Direction::UpperBounded, "", -20.0, -10.0),
            SpecDef::new("neg", Direction::LowerBounded, "", -20.0, -10.0),
        ])
        .unwrap();
        let sent = s.sentinel();
        assert_eq!(sent, vec![0.0, 66.0, 0.0, -40.0]);
        for z_hat in [s.specs().iter().map(|d| d.range_lo).collect::<Vec<_>>(), s.specs().iter().map(|d| d.range_hi).collect()] {
            assert!(!satisfies(&sent, &z_hat, &s).unwrap());
        }
    }

    fn mixed_schema(dirs: &[bool]) -> SpecSchema {
        SpecSchema::new(
            dirs.iter()
                .enumerate()
                .map(|(j, &up)| {
                    let d = if up { Direction::UpperBounded } else { Direction::LowerBounded };
                    SpecDef::new(&format!("m{j}"), d, "", 1.0, 10.0)
                })
                .collect(),
        )
        .unwrap()
    }

    proptest! {
        #[test]
        fn dominance_order_properties(
            dirs in prop::collection::vec(any::<bool>(), 1..6),
            seed in any::<u64>(),
        ) {
            let s = mixed_schema(&dirs);
            let m = s.len();
            let mut r = rng::seeded(seed);
            // small integer grid so ties and equalities actually happen
            let mut draw = || (0..m).map(|_| r.random_range(0..3) as f64).collect::<Vec<_>>();
            let (a, b, c) = (draw(), draw(), draw());
            prop_assert!(dominates(&a, &a, &s).unwrap());
            if dominates(&a, &b, &s).unwrap() && dominates(&b, &c, &s).unwrap() {
                prop_assert!(dominates(&a, &c, &s).unwrap());
            }
            if dominates(&a, &b, &s).unwrap() && dominates(&b, &a, &s).unwrap() {
                prop_assert_eq!(canonicalize(&a, &s).unwrap(), canonicalize(&b, &s).unwrap());
            }
            prop_assert_eq!(satisfies(&a, &b, &s).unwrap(), dominates(&a, &b, &s).unwrap());
        }

        #[test]
        fn is_dominated_is_monotone(
            dirs in prop::collection::vec(any::<bool>(), 1..5),
            seed in any::<u64>(),
            n in 1usize..30,
        ) {
            let s = mixed_schema(&dirs);
            let m = s.len();
            let mut r = rng::seeded(seed);
            let probe = TargetGoal::new((0..m).map(|_| r.random_range(0.0..4.0)).collect());
            let mut b = ParetoBuffer::default();
            let mut seen = false;
            for _ in 0..n {
                let g = TargetGoal::new((0..m).map(|_| r.random_range(0.0..4.0)).collect());
                b.insert(&g, &s).unwrap();
                let now = b.is_dominated(&probe, &s);
                prop_assert!(!(seen && !now));
                seen = now;
            }
        }
    }
}
