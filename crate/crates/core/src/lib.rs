//! Policy evaluation with linear value-function approximation by online
//! cross-entropy search over the projected Bellman error.

pub mod baselines;
pub mod ce;
pub mod envs;
pub mod error;
pub mod features;
pub mod harness;
pub mod linalg;
pub mod mrp;
pub mod objectives;
pub mod sce;

pub use error::{CoreError, Result};
