//! Influence of training samples on the cost and fairness of algorithmic
//! recourse for small neural classifiers.
//!
//! - [`neuralnet`]: two-hidden-layer MLP with manual backprop and per-sample SGD.
//! - [`data`]: datasets, benchmark loaders, standardization, k-fold splits.
//! - [`recourse`]: counterfactual generators, recourse cost metrics and their
//!   logit-gap proxies.
//! - [`valuation`]: Monte-Carlo influence scores, Data-SHAP baseline, exact
//!   Shapley oracle.
//! - [`harness`]: removal experiments and report output.

pub mod data;
pub mod error;
pub mod harness;
pub mod neuralnet;
pub mod recourse;
pub mod seeding;
pub mod synthetic;
pub mod valuation;

pub use data::{Dataset, FoldSplit, Standardizer};
pub use error::{Error, Result};
pub use neuralnet::{Classifier, MlpClassifier, TrainConfig};
pub use recourse::{CfMethod, Counterfactual, RecourseConfig};
pub use valuation::{InfluenceScores, SelectionMode, ValueFunction, ValueKind};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
