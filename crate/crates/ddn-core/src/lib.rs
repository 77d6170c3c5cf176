//! Probabilistic multi-label classification with two hybrid model families:
//!
//! * **Deep random fields** — a pairwise log-linear Markov random field over
//!   binary label variables `X` and binarized evidence variables `E`, with
//!   structure learned by per-node L1-regularized logistic regression,
//!   weights learned by pseudo-likelihood, and posterior queries answered by
//!   Gibbs sampling, cluster-graph belief propagation, or MAP search.
//! * **Deep dependency networks** — a neural backbone mapping raw feature
//!   vectors to evidence activations, composed with a conditional dependency
//!   network (one classifier per label, each seeing the evidence and all
//!   other labels). Trained either pipeline-style or jointly under a
//!   conditional pseudo-log-likelihood objective; queried by fixed-point
//!   Gibbs sampling with a mixture marginal estimator.
//!
//! Everything is deterministic given an explicit seed: the crate ships its
//! own counter-free PRNG ([`rng::Rng`]) and derives an independent stream per
//! component, so training and inference reproduce bitwise across runs of the
//! same build regardless of thread count.

pub mod archive;
pub mod cli;
pub mod data;
pub mod ddn;
pub mod dn;
pub mod error;
pub mod metrics;
pub mod mrf;
pub mod nn;
pub mod numeric;
pub mod rng;
pub mod synthetic;

pub use error::{Error, Result};
