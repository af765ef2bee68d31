//! Optimization loop, schedules, evaluation and metrics files.

mod config;
mod eval;
mod metrics;
mod run;
mod schedule;

pub use config::{Mode, PirlConfig, RcmConfig, TrainConfig};
pub use eval::{evaluate, label_rank, Accuracy, EvalSet};
pub use metrics::{metrics_csv, parse_metrics_csv, write_metrics, MetricsRow, Summary, CSV_HEADER};
pub use run::{train, train_from, train_with, TrainOutcome};
pub use schedule::{loss_schedule, sgd_step, LossChoice, LrSchedule};
