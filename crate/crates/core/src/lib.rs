//! Joint estimation of FIR soft-sensor models over many operating conditions.
//!
//! Every condition `k` gets its own parameter vector `theta_k`; the estimator minimizes
//!
//! ```text
//! sum_k ||Y_k - Phi_k theta_k||^2 + lambda1 * sum_{k<i} ||theta_k - theta_i||_2 + lambda2 * sum_k ||theta_k||_1
//! ```
//!
//! so that similar conditions share a model and irrelevant sensor channels drop out. The crate
//! provides the closed-form penalty bounds, an ADMM solver with an independent reference
//! solver, grid-search tuning, K-means merging and FIT-based cross evaluation.

pub mod bounds;
pub mod criterion;
pub mod data;
mod error;
pub mod estimation;
pub mod fmt;
pub mod pipeline;
pub mod solver;

pub use error::{Error, Result};
