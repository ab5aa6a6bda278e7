//! Security cost accounting for simulated cyber-physical systems.
//!
//! Security-related tasks record their costs per interaction, component,
//! task and metric in a [`ledger::Ledger`]; aggregation sums them layer by
//! layer. [`simkernel`] drives the simulated system and [`scenarios`] holds
//! the device on-boarding and temperature-control use cases.

pub mod config;
pub mod export;
pub mod fixtures;
pub mod ids;
pub mod ledger;
pub mod metrics;
pub mod report;
pub mod scenarios;
pub mod simkernel;
pub mod value;

pub use config::{load_scenario, ScenarioConfig};
pub use ids::{ComponentId, InteractionId, MetricId, TaskId, Unit};
pub use ledger::{AggregationQuery, CostRecord, Ledger, Level, Rollup, Sum};
pub use value::Value;
