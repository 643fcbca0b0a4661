//! Versioned prompt templates with in-context examples, one directory per
//! stage: `<pack>/<stage>/template.txt` and `<pack>/<stage>/examples.json`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde_json::Value;
use thiserror::Error;

use super::backend::Stage;

macro_rules! builtin {
    ($stage:literal) => {
        (
            include_str!(concat!("../../prompts/", $stage, "/template.txt")),
            include_str!(concat!("../../prompts/", $stage, "/examples.json")),
        )
    };
}

const BUILTIN: [(&str, (&str, &str)); 7] = [
    ("extract_key_messages", builtin!("extract_key_messages")),
    ("cluster_topics", builtin!("cluster_topics")),
    ("create_schema", builtin!("create_schema")),
    ("populate_table", builtin!("populate_table")),
    ("infer_values", builtin!("infer_values")),
    ("classify_sentiment", builtin!("classify_sentiment")),
    ("suggest_chart", builtin!("suggest_chart")),
];
const BUILTIN_VERSION: &str = include_str!("../../prompts/VERSION");

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Examples { path: PathBuf, source: serde_json::Error },
    #[error("no template for stage {0}")]
    MissingStage(Stage),
    #[error("template for {stage} uses unknown variable {{{{{name}}}}}")]
    UnknownVariable { stage: Stage, name: String },
    #[error("template for {stage} has an unclosed {{{{")]
    Unclosed { stage: Stage },
}

#[derive(Debug, Clone, PartialEq)]
pub struct StagePrompt {
    pub template: String,
    pub examples: Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptPack {
    pub version: String,
    stages: BTreeMap<Stage, StagePrompt>,
}

impl Default for PromptPack {
    fn default() -> Self {
        PromptPack::builtin()
    }
}

impl PromptPack {
    pub fn builtin() -> Self {
        let stages = BUILTIN
            .iter()
            .map(|(name, (template, examples))| {
                let stage = Stage::parse(name).expect("builtin stage names are valid");
                let examples = serde_json::from_str(examples).expect("builtin examples are valid JSON");
                (
                    stage,
                    StagePrompt {
                        template: template.to_string(),
                        examples,
                    },
                )
            })
            .collect();
        PromptPack {
            version: format!("builtin-{}", BUILTIN_VERSION.trim()),
            stages,
        }
    }

    /// Loads a pack directory. Stages without a directory keep the
    /// built-in prompt; a missing `examples.json` means no examples.
    pub fn load(dir: &Path) -> Result<Self, PromptError> {
        let io = |path: &Path, source| PromptError::Io {
            path: path.to_path_buf(),
            source,
        };
        let mut pack = PromptPack::builtin();
        let version_path = dir.join("VERSION");
        pack.version = match fs::read_to_string(&version_path) {
            Ok(v) => v.trim().to_string(),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => dir.display().to_string(),
            Err(e) => return Err(io(&version_path, e)),
        };
        for stage in Stage::MODEL_STAGES {
            let stage_dir = dir.join(stage.as_str());
            let template_path = stage_dir.join("template.txt");
            let template = match fs::read_to_string(&template_path) {
                Ok(t) => t,
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => continue,
                Err(e) => return Err(io(&template_path, e)),
            };
            let examples_path = stage_dir.join("examples.json");
            let examples = match fs::read_to_string(&examples_path) {
                Ok(text) => serde_json::from_str(&text).map_err(|source| PromptError::Examples {
                    path: examples_path.clone(),
                    source,
                })?,
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => Value::Array(Vec::new()),
                Err(e) => return Err(io(&examples_path, e)),
            };
            pack.stages.insert(stage, StagePrompt { template, examples });
        }
        Ok(pack)
    }

    pub fn stage(&self, stage: Stage) -> Option<&StagePrompt> {
        self.stages.get(&stage)
    }

    /// Fills `{{name}}` placeholders. `{{examples}}` is always available
    /// and expands to the stage's examples as pretty JSON.
    pub fn render(&self, stage: Stage, vars: &[(&str, &str)]) -> Result<String, PromptError> {
        let prompt = self.stages.get(&stage).ok_or(PromptError::MissingStage(stage))?;
        let examples = serde_json::to_string_pretty(&prompt.examples).expect("examples serialize");
        let mut out = String::with_capacity(prompt.template.len() + vars.iter().map(|(_, v)| v.len()).sum::<usize>());
        let mut rest = prompt.template.as_str();
        while let Some(start) = rest.find("{{") {
            out.push_str(&rest[..start]);
            let after = &rest[start + 2..];
            let end = after.find("}}").ok_or(PromptError::Unclosed { stage })?;
            let name = after[..end].trim();
            let value = if name == "examples" {
                examples.as_str()
            } else {
                vars.iter()
                    .find(|(k, _)| *k == name)
                    .map(|(_, v)| *v)
                    .ok_or_else(|| PromptError::UnknownVariable {
                        stage,
                        name: name.to_string(),
                    })?
            };
            out.push_str(value);
            rest = &after[end + 2..];
        }
        out.push_str(rest);
        Ok(out)
    }
}
