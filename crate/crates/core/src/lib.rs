//! Counterfactual risk minimization from logged bandit feedback.
//!
//! The crate covers the whole loop: turning labeled data into logged bandit
//! feedback, softmax and mixed-logit policies, IPS-style risk estimators,
//! PAC-Bayes risk bounds, and AdaGrad training of regularized objectives.

// `!(x >= 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bounds;
pub mod data;
pub mod error;
pub mod estimators;
pub mod learning;
pub mod model_io;
pub mod numeric;
pub mod policy;
pub mod seed;
pub mod simulate;
pub mod synthetic;

pub use data::{LabeledDataset, LabeledExample, LogRecord, LoggedDataset};
pub use error::{CrmError, Result};
pub use learning::{Objective, TrainConfig, TrainReport};
pub use policy::{MixedLogitSpec, SoftmaxPolicy};
