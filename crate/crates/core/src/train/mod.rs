//! Optimisers, the adversarial training loop, evaluation, checkpoints.

mod checkpoint;
mod eval;
mod metrics;
mod optim;
mod state;

pub use checkpoint::{load_checkpoint, load_generator, save_checkpoint, CHECKPOINT_FORMAT};
pub use eval::{evaluate, super_resolve, EvalReport, EvalRow};
pub use metrics::{append_metrics_csv, read_metrics_csv, write_metrics_csv, StepMetrics, StepRecord, CSV_HEADER};
pub use optim::{clip_weights, OptimizerConfig, OptimizerState, StepOutcome};
pub use state::{TrainConfig, TrainEvent, TrainState};
