//! Identification and estimation of heterogeneous treatment effects from
//! multiple binary instruments under vector monotonicity: compliance-group
//! combinatorics, instrument design and diagnostics, the constructed-
//! instrument ratio estimator with data-driven ridge regularization, and a
//! Monte Carlo harness with exact oracles.

pub mod cli;
pub mod combinatorics;
pub mod design;
pub mod error;
pub mod estimation;
mod linalg;
pub mod sets;
pub mod simulation;

pub use error::{Error, Result};
pub use sets::{ComplianceGroup, InstrumentSet, SpernerFamily};
