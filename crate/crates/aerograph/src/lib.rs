//! Command-line driver and HTTP service over a run directory: training,
//! bias correction, forecasting, sensitivity ranking and policy search.

pub mod api;
pub mod cli;
pub mod context;
pub mod error;
pub mod manifest;
pub mod ops;
pub mod plots;

pub use error::{Error, ErrorKind, Result};
