//! Run orchestration: configuration, pretraining, the policy-learning loop,
//! evaluation, checkpoints and the multi-arm experiment suite.

mod config;
mod eval;
mod metrics;
mod suite;
mod train;

pub use config::{Regularizer, TrainConfig};
pub use eval::{evaluate, evaluate_chain, EvalResult, OCCUPANCY_THRESHOLD};
pub use metrics::{metrics_csv, timing_csv, write_metrics, MetricsRow, METRICS_HEADER};
pub use suite::{load_suite, report_markdown, run_experiment_suite, ArmReport, ArmSummary, SuiteEntry};
pub use train::{
    critic_config, denoiser_config, evaluate_models, load_dataset, lr_at, pretrain, pretrain_bc, rng_for, run,
    run_with, train_dtql, train_kl, Event, Models, NoopObserver, Phase, Pretrained, RecordingObserver, RunOutcome,
    Stream, Task, TrainObserver,
};
