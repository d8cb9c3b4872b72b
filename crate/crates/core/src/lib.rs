//! Two-stage selective learning for credit default prediction.
//!
//! A logistic regression serves as the transparent baseline and a shallow
//! neural network as the more accurate reference. A second small network,
//! the *difference net*, is trained on selective labels to recognise the
//! region of feature space where the linear model and the network disagree
//! and the network is right. Samples in that region are "rejected" by the
//! linear model and explained with sensitivity-based tools.
//!
//! Module map:
//!
//! * [`data`]: CSV ingestion, validation, splitting and scaling.
//! * [`models`]: logistic model, one-hidden-layer network, gradients.
//! * [`training`]: cross-entropy and full-batch Polak-Ribiere+ CG.
//! * [`selective`]: selective labels, difference net, rejection summaries.
//! * [`metrics`]: classification error, confusion matrix, ROC/AUC.
//! * [`explain`]: global and local importance, rejected-set patterns.
//! * [`bounds`]: Hoeffding bounds for rejection-rate generalisation.
//! * [`synth`]: synthetic populations with known default probability.
//! * [`pipeline`]: end-to-end runs, model files and reports.
//! * [`exec`]: deterministic chunked execution, parallel when the
//!   `parallel` feature is enabled.

pub mod bounds;
pub mod data;
pub mod error;
pub mod exec;
pub mod explain;
pub mod metrics;
pub mod models;
pub mod pipeline;
pub mod selective;
pub mod svg;
pub mod synth;
pub mod training;

pub use error::{Error, Result};
