//! Orchestration: configuration, committing captured flows, end-to-end runs,
//! training from the store, reports and the synthetic web.

pub mod commit;
pub mod config;
pub mod dataset;
pub mod report;
pub mod run;
pub mod synthweb;

use std::path::Path;

use thiserror::Error;

pub use commit::{reextract, Committer};
pub use config::{Config, ConfigError};
pub use dataset::{cmd_classify, cmd_train, labeled_from_store, TrainReport};
pub use report::{build_report, cmd_report, ReportBundle};
pub use run::{cmd_pipeline, run_agents, settle_tickets, summarize, Capture, Fixtures, RunOverrides, RunSummary};
pub use synthweb::{generate, write_fixtures, SiteSpec, SynthWeb};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Invalid(String),
    #[error("{path}: {message}")]
    Fixture { path: String, message: String },
    #[error(transparent)]
    Store(#[from] crate::flowstore::StoreError),
    #[error(transparent)]
    Agent(#[from] crate::agents::AgentError),
    #[error(transparent)]
    Synth(#[from] synthweb::SynthError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl PipelineError {
    pub fn fixture(path: &Path, e: impl std::fmt::Display) -> Self {
        PipelineError::Fixture { path: path.display().to_string(), message: e.to_string() }
    }
}
