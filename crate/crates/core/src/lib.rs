//! Simulator and controllers for an energy-harvesting SWIPT sensor network.
//!
//! The crate is organized around a discrete-time network simulator ([`env`])
//! and three controllers that drive it:
//!
//! - [`lyapunov`] — per-slot drift-plus-penalty control via alternating
//!   minimization,
//! - [`pg`] — policy-gradient actor-critic over a linear-Gaussian policy,
//! - [`lifelong`] — a cross-domain lifelong learner that factors task
//!   policies through a shared latent knowledge base.
//!
//! [`harness`] sequences tasks and domains, computes benchmark metrics, and
//! aggregates multi-seed runs deterministically. [`numerics`] holds the dense
//! linear-algebra kernels (weighted LASSO, pseudoinverse, ridge solves,
//! eigenvalue clipping) shared by the learners.

pub mod env;
pub mod harness;
pub mod lifelong;
pub mod lyapunov;
pub mod numerics;
pub mod pg;
pub mod rng;
