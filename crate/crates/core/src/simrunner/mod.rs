//! Scenario-driven simulation: a vehicle and a ground station exchanging
//! frames tick by tick, single runs and seeded Monte Carlo batches.

pub mod montecarlo;
pub mod operator;
pub mod pilot;
pub mod presets;
pub mod report;
pub mod run;
pub mod scenario;
pub mod vehicle_sim;

pub use montecarlo::{monte_carlo, wilson_interval, MonteCarloResult, MonteCarloSummary, RateSummary};
pub use presets::{apply_preset, PRESETS, UAV_ID_SEEDS_OF_RECORD};
pub use report::{RunReport, ScriptOutcome, TagOutcome};
pub use run::{mission_request, run_scenario, run_scenario_with_log, RunOutput};
pub use scenario::{RunMode, ScenarioConfig, ScenarioError, ScriptStep, TagSpec, WaypointSource};
pub use vehicle_sim::{stream, stream_rng, VehicleSim};
