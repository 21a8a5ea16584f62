//! Per-iteration task dependency graph and the execution engine that runs
//! forward, backward and update tasks on the scheduler.

mod engine;
mod graph;
mod loss;
mod params;

pub use engine::{DataSource, Network, NetworkConfig, RunOptions, RunReport, Sample, TaskLabel, TraceEvent};
pub use graph::{build_taskgraph, TaskGraph, TaskKind};
pub use loss::loss_and_gradient;
pub use params::{EdgeParam, Params};
