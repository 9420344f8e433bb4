//! Synthetic scenarios and the transition dataset they produce.

mod bandit;
mod chain;
mod dataset;

pub use bandit::{gen_25gaussian, gen_swiss_roll, BanditScenario, RewardField, COVERAGE_RADIUS};
pub use chain::{behavior_weights, gen_chain_dataset, value_iteration, Backup, ChainMdp, Move, QTable};
pub use dataset::{Dataset, DatasetMeta, Transition, DATASET_VERSION};
