//! Simulated sources, fixtures and the scenario driver used by the
//! acceptance suite and the `scenario run` command.

pub mod fixtures;
pub mod scenario;
pub mod system;

pub use fixtures::{fig2_config, generate_failures, generate_topology, write_fig2_fixture, TopologyFixture};
pub use scenario::{Action, Operation, ScenarioScript, ScriptError, Step};
pub use system::{run_scenario, system_config, LogEntry, SimSystem};
