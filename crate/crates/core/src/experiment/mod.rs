//! Experiment harness: configuration, replicate orchestration, deterministic
//! CSV/JSON emission, and the runtime verification battery.

pub mod config;
pub mod run;
pub mod verify;

pub use config::{ConfigError, ExperimentConfig, PolicyKind, SideSpec};
pub use run::{run_experiment, write_outputs, RunRecord};
pub use verify::{verify_suite, FaultInjection, VerifyLevel, VerifyReport};
