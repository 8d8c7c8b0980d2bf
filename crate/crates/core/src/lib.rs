//! Active learning for the new-item cold-start problem.
//!
//! The crate trains second-order factorization machines on historical
//! ratings plus item attributes, chooses which users to ask about each new
//! item by maximising a cardinality-constrained quadratic objective built
//! from four selection signals, optionally spreads a shared request budget
//! across a batch of new items, re-trains on the simulated feedback and
//! scores the result against a set of baseline selection strategies.
//!
//! Module map:
//!
//! * [`data`]: rating/attribute storage, CSV ingestion, synthetic corpora,
//!   train/test splits and feature encoding.
//! * [`fm`]: the factorization machine (prediction, SGD training,
//!   negative sampling, pre-train / re-train).
//! * [`criteria`]: willingness, potential-rating diversity, objectivity and
//!   representativeness signals plus their calibration.
//! * [`selector`]: the selection matrix and its iterative top-k solver.
//! * [`budget`]: popularity/controversy driven budget allocation.
//! * [`baselines`]: comparison strategies.
//! * [`metrics`]: PFR, AST, RMSE, MAE, ranking metrics and the paired t-test.
//! * [`harness`]: experiment configuration, orchestration and reports.

pub mod baselines;
pub mod budget;
pub mod criteria;
pub mod data;
mod error;
pub mod fm;
pub mod harness;
pub mod matrix;
pub mod metrics;
mod rng;
pub mod selector;

pub use error::{Error, Result, Stage};
pub use rng::seeded_rng;
