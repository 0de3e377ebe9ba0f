// SPDX-License-Identifier: Apache-2.0

//! Dense tanh networks with hand-derived gradients, plus Adam.

mod adam;
mod mlp;

pub use adam::{Adam, AdamConfig, AdamDoc};
pub use mlp::{Gradients, Mlp, MlpDoc, Tape, MLP_DOC_VERSION};
