// SPDX-License-Identifier: Apache-2.0

//! Seeded random streams.
//!
//! Every consumer of randomness in a run draws from its own ChaCha stream so
//! that adding draws in one place never perturbs another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Init = 1,
    ResetState = 2,
    Goals = 3,
    Policy = 4,
    Replay = 5,
    Relabel = 6,
    EvalGoals = 7,
    Model = 8,
}

pub fn stream(seed: u64, which: Stream) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(which as u64);
    rng
}

pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
