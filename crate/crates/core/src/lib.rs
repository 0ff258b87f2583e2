// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checks;
pub mod dataset;
pub mod error;
pub mod metrics;
pub mod network;
pub mod raster;
pub mod sfs;
pub mod tensor;

pub use error::{Error, Result};
