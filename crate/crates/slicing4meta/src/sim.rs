//! Deterministic discrete-event kernel: seeded RNG, scenario schema, the
//! event engine, and the run report with its CSV/JSON-lines writers.

pub mod engine;
pub mod report;
pub mod rng;
pub mod scenario;

pub use engine::run;
pub use report::RunReport;
pub use scenario::{Scenario, ScenarioError};
