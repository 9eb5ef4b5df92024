//! Cross-benchmarking engine for performance evaluation under constant
//! returns to scale.
//!
//! The library selects a family of reference sets on the efficient frontier
//! by sequential mixed-integer optimization, then sets the closest targets
//! for every decision making unit (DMU) against each selected set and
//! reports the percent deviations between actual data and targets.
//!
//! Modules:
//! - [`dataset`]: CSV ingestion and validation of the input/output panel.
//! - [`milp`]: solver-agnostic model construction plus a HiGHS-backed solve
//!   with SOS1 handling and an independent feasibility re-check.
//! - [`efficiency`]: Pareto and extreme-efficiency classification.
//! - [`selection`]: the sequential reference-set selection algorithm.
//! - [`targets`]: per-face closest targets and deviation reports.
//! - [`oracle`]: exhaustive face enumeration used to verify the MILP path.
//! - [`cli`]: the command-line front end.

pub mod cli;
pub mod dataset;
pub mod efficiency;
pub mod milp;
pub mod oracle;
pub mod selection;
pub mod targets;

pub use dataset::{Dataset, DmuRecord};
pub use selection::{SelectionConfig, SelectionOutcome};
pub use targets::{cross_benchmark, CrossBenchmarkResult};
