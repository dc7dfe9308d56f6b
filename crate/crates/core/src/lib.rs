//! Collapsed Chinese-restaurant-franchise sampling for hierarchical
//! CRM-driven Poisson processes.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data_io;
pub mod distributions;
pub mod error;
pub mod exp_mixture;
pub mod franchise;
pub mod levy;
pub mod oracle;
pub mod parallel;
pub mod quad;
pub mod signed_log;
pub mod topic_model;
pub mod verify;

pub use error::{HcrmError, Result};
pub use signed_log::SignedLogValue;
