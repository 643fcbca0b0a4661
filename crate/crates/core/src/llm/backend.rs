//! Completion backends: fixture replay, scripted responses, and a limiter
//! for bounding in-flight requests.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Condvar, Mutex};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Pipeline stages that talk to a backend.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    ExtractKeyMessages,
    ClusterTopics,
    CreateSchema,
    PopulateTable,
    ValidateQuotes,
    InferValues,
    ClassifySentiment,
    SuggestChart,
    Recommend,
    Render,
}

impl Stage {
    pub const MODEL_STAGES: [Stage; 7] = [
        Stage::ExtractKeyMessages,
        Stage::ClusterTopics,
        Stage::CreateSchema,
        Stage::PopulateTable,
        Stage::InferValues,
        Stage::ClassifySentiment,
        Stage::SuggestChart,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::ExtractKeyMessages => "extract_key_messages",
            Stage::ClusterTopics => "cluster_topics",
            Stage::CreateSchema => "create_schema",
            Stage::PopulateTable => "populate_table",
            Stage::ValidateQuotes => "validate_quotes",
            Stage::InferValues => "infer_values",
            Stage::ClassifySentiment => "classify_sentiment",
            Stage::SuggestChart => "suggest_chart",
            Stage::Recommend => "recommend",
            Stage::Render => "render",
        }
    }

    pub fn parse(name: &str) -> Option<Stage> {
        Stage::MODEL_STAGES
            .into_iter()
            .chain([Stage::ValidateQuotes, Stage::Recommend, Stage::Render])
            .find(|s| s.as_str() == name)
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompletionRequest<'a> {
    pub stage: Stage,
    pub prompt: &'a str,
    /// JSON schema the response must satisfy.
    pub contract: &'a Value,
    /// 0 for the first attempt, incremented on each retry.
    pub attempt: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Capabilities {
    pub max_input_chars: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BackendError {
    #[error("no fixture for prompt hash {hash} (stage {stage})")]
    MissingFixture { stage: Stage, hash: String },
    #[error("script exhausted for stage {0}")]
    ScriptExhausted(Stage),
    #[error("transport: {0}")]
    Transport(String),
    #[error("backend configuration: {0}")]
    Config(String),
}

impl BackendError {
    /// Whether resending the same request can succeed.
    pub fn is_retryable(&self) -> bool {
        matches!(self, BackendError::Transport(_))
    }
}

/// Anything that turns a prompt into raw response text. Implementations
/// must tolerate concurrent calls.
pub trait CompletionBackend: Send + Sync {
    fn complete(&self, request: &CompletionRequest<'_>) -> Result<String, BackendError>;

    fn capabilities(&self) -> Capabilities;

    /// Model name and decoding settings recorded in traces.
    fn describe(&self) -> BackendInfo {
        BackendInfo::default()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BackendInfo {
    pub kind: String,
    pub model: Option<String>,
    pub temperature: Option<f64>,
}

impl<B: CompletionBackend + ?Sized> CompletionBackend for Arc<B> {
    fn complete(&self, request: &CompletionRequest<'_>) -> Result<String, BackendError> {
        (**self).complete(request)
    }

    fn capabilities(&self) -> Capabilities {
        (**self).capabilities()
    }

    fn describe(&self) -> BackendInfo {
        (**self).describe()
    }
}

impl<B: CompletionBackend + ?Sized> CompletionBackend for Box<B> {
    fn complete(&self, request: &CompletionRequest<'_>) -> Result<String, BackendError> {
        (**self).complete(request)
    }

    fn capabilities(&self) -> Capabilities {
        (**self).capabilities()
    }

    fn describe(&self) -> BackendInfo {
        (**self).describe()
    }
}

impl<B: CompletionBackend + ?Sized> CompletionBackend for &B {
    fn complete(&self, request: &CompletionRequest<'_>) -> Result<String, BackendError> {
        (**self).complete(request)
    }

    fn capabilities(&self) -> Capabilities {
        (**self).capabilities()
    }

    fn describe(&self) -> BackendInfo {
        (**self).describe()
    }
}

/// Lowercase hex sha256 of the prompt text.
pub fn prompt_hash(prompt: &str) -> String {
    hex::encode(Sha256::digest(prompt.as_bytes()))
}

/// One file of a fixture pack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fixture {
    pub stage: Stage,
    pub prompt: String,
    /// Responses by attempt; the last one repeats for later attempts.
    pub responses: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureIndexEntry {
    pub hash: String,
    pub stage: Stage,
}

pub const DEFAULT_MAX_INPUT_CHARS: usize = 24_000;

/// Replays a fixture pack: `<dir>/<sha256(prompt)>.json`.
#[derive(Debug, Clone)]
pub struct MockBackend {
    fixtures: HashMap<String, Fixture>,
    capabilities: Capabilities,
}

#[derive(Debug, Error)]
pub enum FixtureError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("{path}: file name does not match prompt hash {expected}")]
    HashMismatch { path: PathBuf, expected: String },
}

impl MockBackend {
    pub fn new(fixtures: impl IntoIterator<Item = Fixture>) -> Self {
        MockBackend {
            fixtures: fixtures.into_iter().map(|f| (prompt_hash(&f.prompt), f)).collect(),
            capabilities: Capabilities {
                max_input_chars: DEFAULT_MAX_INPUT_CHARS,
            },
        }
    }

    /// Loads every `<hash>.json` in `dir`. Each file's name must match the
    /// hash of the prompt it holds.
    pub fn load(dir: &Path) -> Result<Self, FixtureError> {
        let io = |path: &Path, source| FixtureError::Io {
            path: path.to_path_buf(),
            source,
        };
        let mut paths: Vec<PathBuf> = fs::read_dir(dir)
            .map_err(|e| io(dir, e))?
            .filter_map(|entry| entry.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "json") && p.file_stem().is_some_and(|s| s != "index"))
            .collect();
        paths.sort();
        let mut fixtures = Vec::with_capacity(paths.len());
        for path in paths {
            let text = fs::read_to_string(&path).map_err(|e| io(&path, e))?;
            let fixture: Fixture = serde_json::from_str(&text).map_err(|source| FixtureError::Json {
                path: path.clone(),
                source,
            })?;
            let expected = prompt_hash(&fixture.prompt);
            if path.file_stem().and_then(|s| s.to_str()) != Some(expected.as_str()) {
                return Err(FixtureError::HashMismatch { path, expected });
            }
            fixtures.push(fixture);
        }
        Ok(MockBackend::new(fixtures))
    }

    pub fn with_capabilities(mut self, capabilities: Capabilities) -> Self {
        self.capabilities = capabilities;
        self
    }

    pub fn len(&self) -> usize {
        self.fixtures.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fixtures.is_empty()
    }
}

impl CompletionBackend for MockBackend {
    fn complete(&self, request: &CompletionRequest<'_>) -> Result<String, BackendError> {
        let hash = prompt_hash(request.prompt);
        let fixture = self.fixtures.get(&hash).ok_or(BackendError::MissingFixture {
            stage: request.stage,
            hash,
        })?;
        let i = (request.attempt as usize).min(fixture.responses.len().saturating_sub(1));
        fixture
            .responses
            .get(i)
            .cloned()
            .ok_or_else(|| BackendError::Config(format!("fixture for stage {} has no responses", fixture.stage)))
    }

    fn capabilities(&self) -> Capabilities {
        self.capabilities
    }

    fn describe(&self) -> BackendInfo {
        BackendInfo {
            kind: "mock".into(),
            model: None,
            temperature: None,
        }
    }
}

/// Writes a fixture pack, replacing any file with the same hash.
pub fn write_fixture_pack(dir: &Path, fixtures: &[Fixture]) -> Result<(), FixtureError> {
    let io = |path: &Path, source| FixtureError::Io {
        path: path.to_path_buf(),
        source,
    };
    fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
    let mut index = BTreeMap::new();
    for fixture in fixtures {
        let hash = prompt_hash(&fixture.prompt);
        let path = dir.join(format!("{hash}.json"));
        let body = serde_json::to_string_pretty(fixture).expect("fixtures serialize");
        fs::write(&path, body + "\n").map_err(|e| io(&path, e))?;
        index.insert(hash, fixture.stage);
    }
    let entries: Vec<FixtureIndexEntry> = index.into_iter().map(|(hash, stage)| FixtureIndexEntry { hash, stage }).collect();
    let path = dir.join("index.json");
    let body = serde_json::to_string_pretty(&entries).expect("index serializes");
    fs::write(&path, body + "\n").map_err(|e| io(&path, e))
}

/// Hands out queued responses per stage in order, ignoring the prompt.
/// Used to author fixture packs and to drive stage tests.
#[derive(Debug, Default)]
pub struct ScriptedBackend {
    queues: Mutex<HashMap<Stage, VecDeque<String>>>,
    log: Mutex<Vec<Fixture>>,
    capabilities: Option<Capabilities>,
}

impl ScriptedBackend {
    pub fn new() -> Self {
        ScriptedBackend::default()
    }

    /// Script file layout: `{"<stage>": [response, ...], ...}`. String
    /// responses are used verbatim; any other JSON value is serialized.
    pub fn from_script(script: &Value) -> Result<Self, BackendError> {
        let map = script
            .as_object()
            .ok_or_else(|| BackendError::Config("script must be a JSON object keyed by stage".into()))?;
        let backend = ScriptedBackend::new();
        for (name, responses) in map {
            let stage = Stage::parse(name).ok_or_else(|| BackendError::Config(format!("unknown stage {name:?}")))?;
            let responses = responses
                .as_array()
                .ok_or_else(|| BackendError::Config(format!("responses for {name} must be an array")))?;
            for r in responses {
                backend.push(stage, r);
            }
        }
        Ok(backend)
    }

    pub fn with_capabilities(mut self, capabilities: Capabilities) -> Self {
        self.capabilities = Some(capabilities);
        self
    }

    pub fn push(&self, stage: Stage, response: &Value) -> &Self {
        let text = match response {
            Value::String(s) => s.clone(),
            other => other.to_string(),
        };
        self.queues.lock().unwrap().entry(stage).or_default().push_back(text);
        self
    }

    /// Exchanges served so far, one fixture per distinct prompt, in order.
    pub fn recorded(&self) -> Vec<Fixture> {
        self.log.lock().unwrap().clone()
    }

    pub fn remaining(&self, stage: Stage) -> usize {
        self.queues.lock().unwrap().get(&stage).map_or(0, VecDeque::len)
    }
}

impl CompletionBackend for ScriptedBackend {
    fn complete(&self, request: &CompletionRequest<'_>) -> Result<String, BackendError> {
        let response = self
            .queues
            .lock()
            .unwrap()
            .get_mut(&request.stage)
            .and_then(VecDeque::pop_front)
            .ok_or(BackendError::ScriptExhausted(request.stage))?;
        let mut log = self.log.lock().unwrap();
        match log.iter_mut().find(|f| f.prompt == request.prompt) {
            Some(f) if f.responses.len() == request.attempt as usize => f.responses.push(response.clone()),
            Some(_) => {}
            None => log.push(Fixture {
                stage: request.stage,
                prompt: request.prompt.to_string(),
                responses: vec![response.clone()],
            }),
        }
        Ok(response)
    }

    fn capabilities(&self) -> Capabilities {
        self.capabilities.unwrap_or(Capabilities {
            max_input_chars: DEFAULT_MAX_INPUT_CHARS,
        })
    }

    fn describe(&self) -> BackendInfo {
        BackendInfo {
            kind: "scripted".into(),
            model: None,
            temperature: None,
        }
    }
}

/// Caps the number of concurrent `complete` calls on the inner backend.
pub struct Limited<B> {
    inner: B,
    max: usize,
    in_flight: Mutex<usize>,
    freed: Condvar,
}

impl<B> Limited<B> {
    pub fn new(inner: B, max_in_flight: usize) -> Self {
        Limited {
            inner,
            max: max_in_flight.max(1),
            in_flight: Mutex::new(0),
            freed: Condvar::new(),
        }
    }
}

struct Permit<'a, B>(&'a Limited<B>);

impl<B> Drop for Permit<'_, B> {
    fn drop(&mut self) {
        *self.0.in_flight.lock().unwrap() -= 1;
        self.0.freed.notify_one();
    }
}

impl<B: CompletionBackend> CompletionBackend for Limited<B> {
    fn complete(&self, request: &CompletionRequest<'_>) -> Result<String, BackendError> {
        let mut n = self.in_flight.lock().unwrap();
        while *n >= self.max {
            n = self.freed.wait(n).unwrap();
        }
        *n += 1;
        drop(n);
        let _permit = Permit(self);
        self.inner.complete(request)
    }

    fn capabilities(&self) -> Capabilities {
        self.inner.capabilities()
    }

    fn describe(&self) -> BackendInfo {
        self.inner.describe()
    }
}
