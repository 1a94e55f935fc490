//! Experiment harness: configuration, the end-to-end runner, the (m, n)
//! sweep, report rendering, and the synthetic offline validation task.

pub mod config;
pub mod report;
pub mod runner;
pub mod synthetic;

use thiserror::Error;

pub use config::{DatasetConfig, EmbeddingProviderConfig, ExperimentConfig, LlmConfig, Seeds};
pub use report::{render_report, EvalReport, ReportFormat, StrategySummary, TraceRow};
pub use runner::{
    prepare_corpora, run_experiment, run_experiment_with_gateway, sweep_mn, write_report,
};
pub use synthetic::{
    generate_synthetic_task, SynthParams, SyntheticTask, ThresholdOracle, ThresholdScript,
};

use crate::answer_extraction::ExtractError;
use crate::clustering::ClusteringError;
use crate::corpus::CorpusError;
use crate::demo_builder::DemoError;
use crate::embedding::EmbedError;
use crate::llm_gateway::GatewayError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("invalid parameter: {0}")]
    ParameterInvalid(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Clustering(#[from] ClusteringError),
    #[error(transparent)]
    Extract(#[from] ExtractError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Demo(#[from] DemoError),
}

impl HarnessError {
    /// Process exit code for the CLI: 2 for configuration problems, 3 for
    /// provider failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) | HarnessError::ParameterInvalid(_) => 2,
            HarnessError::Corpus(CorpusError::Gateway { .. })
            | HarnessError::Corpus(CorpusError::Provider { .. }) => 3,
            HarnessError::Corpus(_) => 2,
            HarnessError::Clustering(_) | HarnessError::Extract(_) => 2,
            HarnessError::Embed(_) | HarnessError::Gateway(_) => 3,
            HarnessError::Demo(_) => 2,
        }
    }
}
