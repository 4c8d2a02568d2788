//! Desk-scale laboratory for group-relative policy optimization.
//!
//! The crate trains small autoregressive softmax policies on synthetic tasks
//! with binary verifiers, using either plain GRPO, a confidence-reweighted
//! variant (ProGRPO), or REINFORCE as a comparator. Everything runs at 64-bit
//! precision and is deterministic given a master seed.
//!
//! Module map:
//!
//! - [`policy`]: tabular order-W softmax policy, sampling, scoring, gradients.
//! - [`tasks`]: verifiable-reward tasks and exhaustive success-set oracles.
//! - [`confidence`]: low-probability position selection and geometric-mean
//!   confidence of prompts and answers.
//! - [`advantage`]: group-normalized advantages and confidence re-weighting.
//! - [`trainer`]: rollout collection, clipped surrogate, REINFORCE, SGD loop.
//! - [`metrics`]: pass@k, entropy summaries, Distinct-n, Self-BLEU and
//!   success-manifold entropy.
//! - [`experiment`]: config files, seeded runs, sweeps and replay.

pub mod advantage;
pub mod confidence;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod policy;
pub mod rng;
pub mod tasks;
pub mod trainer;

pub use error::{Error, Result};
