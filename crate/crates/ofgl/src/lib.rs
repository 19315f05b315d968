//! One-shot personalized federated graph learning on a single machine.
//!
//! The library simulates the full pipeline for semi-supervised node
//! classification over non-IID client subgraphs, restricted to a single
//! upload-download round:
//!
//! 1. **Partition** — a dataset is split into client subgraphs along Louvain
//!    communities, producing label-imbalanced clients ([`graph`]).
//! 2. **Client statistics** — each client propagates features, measures
//!    homophily, optionally expands its labeled set with reliable
//!    pseudo-labeled nodes (HRE), and estimates class-wise feature mean and
//!    variance ([`stats`]).
//! 3. **Secure aggregation** — the statistics cross the client→server
//!    boundary only as pairwise-masked fixed-point vectors; the server
//!    recovers exact sums and pools the global per-class statistics
//!    ([`secure`]).
//! 4. **Surrogate generation** — the server synthesizes a small graph whose
//!    propagated class statistics match the pooled ones ([`surrogate`]).
//! 5. **Personalization** — every client trains a generalized model on the
//!    surrogate, then fine-tunes on local data with node-adaptive
//!    distillation ([`personalize`], [`gnn`]).
//!
//! [`orchestrator`] wires the steps together and evaluates accuracy and
//! F1-macro; [`config`] holds the strict JSON configuration surface used by
//! the `ofgl` binary. Runnable demonstrations of every capability live in
//! the crate `examples/` directory.
//!
//! All randomness derives from explicit `u64` seeds through ChaCha20
//! ([`rng`]); identical seeds reproduce identical runs, including under the
//! parallel client fan-out.

pub mod config;
pub mod error;
pub mod gnn;
pub mod graph;
pub mod orchestrator;
pub mod personalize;
pub mod rng;
pub mod secure;
pub mod stats;
pub mod surrogate;
pub mod synthetic;

pub use error::{Error, Result};
