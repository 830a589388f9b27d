//! Configuration, experiment sweeps, metric export and the verification
//! suite.

pub mod files;
pub mod plotdata;
pub mod runner;
pub mod verify;

pub use files::{load_spec, ExperimentSpec};
pub use plotdata::{emit_plotdata, GroupBy};
pub use runner::{run_experiment, ExperimentResult};
pub use verify::{verify_suite, CheckResult};
