//! Synthetic corpora and end-to-end experiments.
//!
//! A corpus is generated from class templates with speaker-specific
//! frequency warps and affine log-mel distortions. An experiment config
//! picks the feature pipeline, network, optimizer and dropout plan;
//! [`run_experiment`] runs it and writes its artifacts, and the [`Driver`]s
//! run families of related configs and tabulate them.

mod config;
mod corpus;
mod drivers;
mod pipeline;
mod report;
mod run;

pub use config::{
    purpose_seed, DropoutConfig, EvalSplit, ExperimentConfig, NetworkConfig, OptimizerConfig, SweepOptions,
};
pub use corpus::{
    class_templates, generate_corpus, template_log_mels, ClassTemplate, Corpus, CorpusSpec, RawUtterance,
    SpeakerProfile, Split, CORPUS_FREQ_RANGE, CORPUS_SAMPLE_RATE, MAX_CONDITION,
};
pub use drivers::{run_driver, topology, Driver, DriverOutcome};
pub use pipeline::{
    prepare_features, AdaptationOptions, AdaptationRound, AdaptationSummary, FeatureOptions, PreparedData,
    OBJECTIVE_SLACK,
};
pub use report::{emit_report, Comparison, PlotData, Series, TABLE_COLUMNS};
pub use run::{
    evaluate, run_dir, run_experiment, run_experiment_with, EvalReport, RunOutcome, SplitMetrics, LOSS_SERIES_HEADER,
};
