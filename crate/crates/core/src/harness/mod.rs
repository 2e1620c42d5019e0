//! Experiment driver: fixed-budget training runs, grids, sensitivity
//! curves, the noisy-quadratic momentum experiment, and CSV/SVG output.

pub mod config;
pub mod emit;
pub mod sensitivity;
pub mod sweep;
pub mod toy;
pub mod train;

pub use config::{ModelSpec, OptimizerSpec, RunConfig, TaskSpec};
pub use emit::{emit_csv, emit_svg_lines, Axes, Series};
pub use sensitivity::{sensitivity, SensitivityCurve, SensitivitySpec, Target};
pub use sweep::{sweep, tune_lr, GridSpec, RunCache, SweepRow, SweepTable};
pub use toy::{toy_experiment, ToyResult, ToySpec};
pub use train::{train, RunOutput, RunRecord};
