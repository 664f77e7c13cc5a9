// `!(x > 0.0)` is used deliberately so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dist;
pub mod error;
pub mod exec;
pub mod flight;
pub mod monitor;
pub mod optimizer;
pub mod scenario;
pub mod scenario_file;
pub mod sector;

pub use error::{ModelError, Result};
