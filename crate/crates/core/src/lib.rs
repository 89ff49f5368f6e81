//! Federated KPI monitoring.
//!
//! A catalog written in the `.kpi` language declares labs, measures,
//! report templates and KPIs. Observations are ingested into an
//! append-only per-lab log, KPIs are evaluated per lab over time windows,
//! and the federation view compares labs and looks for metric trade-offs.

pub mod api;
pub mod cli;
pub mod dsl;
pub mod engine;
pub mod federation;
pub mod model;
pub mod store;
pub mod time;

/// The sample catalog shipped with the crate.
pub const SAMPLE_CATALOG: &str = include_str!("../catalogs/sample.kpi");
