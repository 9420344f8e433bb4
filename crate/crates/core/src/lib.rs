//! Offline reinforcement learning with a diffusion behavior model and a
//! one-step policy regularized by the diffusion trust-region loss.
//!
//! The crate is organised bottom-up:
//!
//! - [`nnkit`]: float64 tensors, a reverse-mode tape, MLPs and Adam.
//! - [`edm`]: the continuous-time noise schedule and denoiser preconditioning.
//! - [`diffusion`]: the behavior-cloning denoiser, the trust-region loss and
//!   its detached-Jacobian (SDS) variant, loss-field evaluation.
//! - [`policy`]: tanh-squashed Gaussian and implicit one-step policies.
//! - [`critic`]: expectile value learning, double-Q regression, Polyak targets.
//! - [`kl`]: the KL score-distillation comparison arm.
//! - [`envs`]: 2-D bandit scenarios, a chain MDP with value iteration, dataset IO.
//! - [`trainer`]: configuration, the training loop, evaluation and the suite runner.

// `!(x > 0.0)` checks are deliberate: they reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod critic;
pub mod diffusion;
pub mod edm;
pub mod envs;
mod error;
pub mod kl;
pub mod nnkit;
pub mod policy;
pub mod trainer;

pub use error::{Error, Result};
