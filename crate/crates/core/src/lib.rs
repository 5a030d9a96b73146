//! What-if analysis for black-box models over tabular data.
//!
//! A [`Dataset`](dataset::Dataset) holds the points under study and one or
//! two registered models ([`model::ModelRegistry`]) produce scores for them.
//! On top of that sit counterfactual search, partial dependence curves,
//! per-slice performance tables and fairness-aware threshold selection.
//! [`report`] assembles the JSON bodies shared by the CLI and HTTP service.

pub mod counterfactual;
pub mod dataset;
pub mod error;
pub mod model;
pub mod pdp;
pub mod performance;
pub mod report;

pub use error::{Error, Result};
