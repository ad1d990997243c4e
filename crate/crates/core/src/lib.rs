//! Meta-meta classification for one-vs-all, one-shot learning.
//!
//! The crate trains a small ensemble of high-bias learners, each meta-learned
//! (MAML-style) on a cluster of related learning problems, together with a
//! meta-aggregation network that looks at a problem's support set and decides
//! how to combine the learners' scores for that problem.
//!
//! Everything here is pure computation over in-memory values and builds
//! without `std` (only `alloc` is required). File formats, checkpoints and the
//! command-line runner live in the companion `mmc` crate.
//!
//! Module map:
//!
//! * [`numerics`]: dense arrays, a reverse-mode tape that can differentiate its
//!   own gradients, Adam, MLPs and the seedable generator.
//! * [`problems`]: class banks, the synthetic modal-mixture family and the
//!   episode samplers.
//! * [`learner`]: inner training from a learned initialization and MAML.
//! * [`clustering`]: problem embeddings, k-means and class routing.
//! * [`aggregator`]: the meta-aggregation network and aggregate scoring.
//! * [`pipelines`]: end-to-end and three-step training, baselines, 5-way.
//! * [`eval`]: episode evaluation, confidence intervals and reports.
#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod aggregator;
pub mod clustering;
mod error;
pub mod eval;
pub mod exec;
pub mod learner;
pub mod numerics;
pub mod pipelines;
pub mod problems;
pub mod progress;

pub use error::{Error, Result};
