//! Federated Wasserstein distances, barycenters and data valuation.
//!
//! The crate computes p-Wasserstein distances and barycenters between a
//! server's target distribution and clients' private datasets without
//! exchanging raw data, then scores clients and individual data points via
//! dual-potential calibrated gradients.
//!
//! See the guide under `book/` for a narrative walkthrough; its code
//! snippets run as doc-tests of this crate.

pub mod augment;
pub mod datagen;
pub mod error;
pub mod fed;
pub mod geodesics;
pub mod measure;
pub mod ot;
pub mod stats;
pub mod valuation;

pub use error::{Error, Result};
pub use measure::DiscreteMeasure;
pub use ot::{cost_matrix, solve_entropic, solve_exact, wasserstein, wasserstein_1d_sorted, Backend, OtSolution};

#[cfg(doctest)]
mod book;
