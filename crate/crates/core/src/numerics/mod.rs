//! Dense real arrays, reverse-mode differentiation, Adam and the seedable
//! generator.
//!
//! All arithmetic is in `f64`. The [`Tape`] records matrix-level operations
//! and its backward pass is itself recorded on the tape, so gradients can be
//! differentiated again. That is what makes MAML meta-gradients exact: the
//! inner gradient steps stay part of the graph that the outer loss is
//! differentiated through.

mod adam;
mod array;
pub mod math;
mod mlp;
mod params;
mod rng;
mod tape;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use array::{cross_entropy, log_softmax, softmax, Array};
pub use mlp::{mlp_forward, mlp_forward_batch, mlp_forward_tape, mlp_init, Activation};
pub use params::ParamSet;
pub use rng::Rng;
pub use tape::{grad, meta_grad, unroll_descent, GradOrder, Mat, Tape, Var};
