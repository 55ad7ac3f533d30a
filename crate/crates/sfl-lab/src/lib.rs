//! Deterministic desk-scale simulator and analysis toolkit for split
//! federated learning.
//!
//! The crate trains a model cut into a client-side block and a server-side
//! block: clients run local steps on their own shards and a fed server
//! averages their blocks every tau iterations, while the main server trains
//! the server-side block from the exchanged cut-layer activations. Two
//! split-federated variants (per-client server models vs one shared,
//! sequentially-updated server model) sit next to FedAvg, sequential split
//! learning, and mini-batch SGD baselines, all driven by the same seeded
//! streams so trajectories are exactly reproducible and comparable.
//!
//! Modules:
//! - [`numkit`]: fixed-order vector arithmetic and counter-based PRNG streams
//! - [`models`]: split objectives (ridge, logistic, small MLP) and gradients
//! - [`data`]: synthetic classification data and Dirichlet partitioning
//! - [`algorithms`]: the five training procedures with full/partial participation
//! - [`analysis`]: oracles, constant estimators, convergence bounds, cost model
//! - [`harness`]: JSON experiment configs and the command-line front end
//!
//! See the `examples/` directory for one runnable walkthrough per capability.

pub mod algorithms;
pub mod analysis;
pub mod data;
pub mod harness;
pub mod models;
pub mod numkit;
