//! Model-driven stages: key messages, topics, schema, quote population,
//! inference, sentiment and chart suggestion, plus the pipeline that runs
//! them and records every exchange.

pub mod backend;
pub mod contracts;
pub mod live;
mod pipeline;
pub mod prompts;
mod stages;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use backend::{
    prompt_hash, write_fixture_pack, BackendError, BackendInfo, Capabilities, CompletionBackend, CompletionRequest,
    Fixture, FixtureError, Limited, MockBackend, ScriptedBackend, Stage,
};
pub use live::LiveBackend;
pub use pipeline::{
    run_pipeline, ChartDecision, GranularityOption, GranularityOutput, PipelineOptions, PipelineOutput, TopicOutput,
};
pub use prompts::{PromptError, PromptPack};
pub use stages::{check_resolution, split_paragraphs, validate_quotes, GroundingFailure, Session};

use std::sync::Arc;

use crate::config::{BackendConfig, BackendKind};
use crate::render::RenderError;

/// The configured backend, behind the in-flight limit. Mock backends need
/// `fixtures`; live ones need `url` and `model`.
pub fn backend_from_config(config: &BackendConfig) -> Result<Arc<dyn CompletionBackend>, BackendError> {
    let inner: Box<dyn CompletionBackend> = match config.kind {
        BackendKind::Mock => {
            let dir = config
                .fixtures
                .as_deref()
                .ok_or_else(|| BackendError::Config("the mock backend needs a fixture directory".into()))?;
            let mock = MockBackend::load(dir).map_err(|e| BackendError::Config(e.to_string()))?;
            Box::new(mock.with_capabilities(Capabilities {
                max_input_chars: config.max_input_chars,
            }))
        }
        BackendKind::Live => Box::new(LiveBackend::from_config(config)?),
    };
    Ok(Arc::new(Limited::new(inner, config.max_in_flight)))
}

#[derive(Debug, Clone, PartialEq, Error, Serialize, Deserialize)]
#[serde(tag = "kind", content = "detail", rename_all = "snake_case")]
pub enum StageErrorKind {
    #[error("statement is empty")]
    EmptyStatement,
    #[error("no key messages could be extracted")]
    EmptyExtraction,
    #[error("no row identifiers or columns could be derived")]
    DegenerateSchema,
    #[error("backend failure: {0}")]
    BackendFailure(String),
    #[error("contract violation: {0}")]
    ContractViolation(String),
    #[error("grounding failure: {0}")]
    GroundingFailure(String),
    #[error("invalid binding: {0}")]
    InvalidBinding(String),
    #[error("no data to chart")]
    NoData,
    #[error("render: {0}")]
    Render(String),
    #[error("prompt: {0}")]
    Prompt(String),
}

impl From<RenderError> for StageErrorKind {
    fn from(e: RenderError) -> Self {
        match e {
            RenderError::NoData => StageErrorKind::NoData,
            RenderError::InvalidBinding(b) => StageErrorKind::InvalidBinding(b),
            other => StageErrorKind::Render(other.to_string()),
        }
    }
}

/// A stage error tagged with where it happened.
#[derive(Debug, Clone, PartialEq, Error, Serialize, Deserialize)]
#[error("{stage}{}: {kind}", topic.as_ref().map(|t| format!(" [{t}]")).unwrap_or_default())]
pub struct StageError {
    pub stage: Stage,
    pub topic: Option<String>,
    pub kind: StageErrorKind,
}

impl StageError {
    pub fn new(stage: Stage, topic: Option<&str>, kind: StageErrorKind) -> Self {
        StageError {
            stage,
            topic: topic.map(String::from),
            kind,
        }
    }
}

/// A failed run: the error plus everything traced up to it.
#[derive(Debug, Clone, Error)]
#[error("{error}")]
pub struct PipelineError {
    pub error: StageError,
    pub trace: PipelineTrace,
}

/// Why a response was rejected.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "reason", rename_all = "snake_case")]
pub enum Fault {
    /// Not JSON, or JSON of the wrong shape.
    Malformed(String),
    /// Well-formed but breaks a stage rule.
    Contract(String),
    /// A quote or evidence span is not in the source text.
    Ungrounded(String),
    /// Chart bindings name labels the table does not have.
    Binding(String),
}

impl Fault {
    /// Error reported once retries run out.
    pub fn exhausted(self) -> StageErrorKind {
        match self {
            Fault::Malformed(m) => StageErrorKind::BackendFailure(format!("malformed response: {m}")),
            Fault::Contract(m) => StageErrorKind::ContractViolation(m),
            Fault::Ungrounded(m) => StageErrorKind::GroundingFailure(m),
            Fault::Binding(m) => StageErrorKind::InvalidBinding(m),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Outcome {
    Accepted,
    Rejected { fault: Fault },
    BackendError { message: String },
}

/// One backend exchange.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub seq: usize,
    pub stage: Stage,
    pub topic: Option<String>,
    /// Chunk index when the context was split.
    pub chunk: Option<usize>,
    pub retry_count: u32,
    pub prompt_hash: String,
    pub prompt: String,
    pub raw_response: Option<String>,
    pub validation_outcome: Outcome,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PipelineTrace {
    pub backend: BackendInfo,
    pub prompt_pack: String,
    pub max_retries: u32,
    pub entries: Vec<TraceEntry>,
    /// Rule-engine decisions, one per charted topic.
    pub decisions: Vec<ChartDecision>,
}

impl PipelineTrace {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("trace serializes")
    }

    /// Replay pack: every exchange keyed by prompt, responses by attempt.
    pub fn to_fixtures(&self) -> Vec<Fixture> {
        let mut out: Vec<Fixture> = Vec::new();
        for e in &self.entries {
            let Some(raw) = &e.raw_response else { continue };
            match out.iter_mut().find(|f| f.prompt == e.prompt) {
                Some(f) if f.responses.len() == e.retry_count as usize => f.responses.push(raw.clone()),
                Some(_) => {}
                None if e.retry_count == 0 => out.push(Fixture {
                    stage: e.stage,
                    prompt: e.prompt.clone(),
                    responses: vec![raw.clone()],
                }),
                None => {}
            }
        }
        out
    }
}
