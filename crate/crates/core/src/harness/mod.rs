//! Experiment orchestration: configs, data sources, the three adaptation
//! protocols, reports and on-disk artifacts.

pub mod artifacts;
pub mod config;
pub mod data;
pub mod pipeline;
pub mod protocols;
pub mod report;

#[cfg(test)]
mod tests;

pub use artifacts::emit_artifacts;
pub use config::{DataConfig, ExperimentConfig, KittiData, KittiSequence, ProtocolConfig, SyntheticData};
pub use pipeline::{attach_proxies, build_reference, train_model, TrainOutcome};
pub use protocols::{continual_schedule, corruption_seed, finetune_baseline, run_continual, run_eval, run_single_shift, run_stationary, shift_bounds, Deployed};
pub use report::{Aggregate, Method, MetricsReport, Protocol, SequenceReport, Stat};
