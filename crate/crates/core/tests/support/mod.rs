//! Checks shared by the core test targets and the acceptance report.
#![allow(dead_code)]

pub mod fd;
pub mod oracle;
pub mod surrogate;
