//! Training, evaluation and the experiment drivers behind the CLI.

mod experiments;
mod gradsuite;
mod metrics;
mod train;

pub use experiments::{
    ablation_sweep, compare_aggregators, default_sweep_values, run_experiment, write_results_csv, ExperimentConfig,
    Method, RunResult, SWEEP_PARAMETERS,
};
pub use gradsuite::{gradient_suite, model_gradient_suite, op_gradient_suite, write_gradcheck_csv, GradCase};
pub use metrics::{evaluate, metrics_from_errors, per_vertex_errors, Metrics, Reconstructor, CURVE_POINTS};
pub use train::{dataset_loss, train, TrainConfig, TrainReport};
