//! TOML configuration with environment overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::llm::backend::DEFAULT_MAX_INPUT_CHARS;
use crate::recommend::RecommenderConfig;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub backend: BackendConfig,
    pub uncertainty: UncertaintyDefaults,
    pub recommender: RecommenderConfig,
    pub service: ServiceConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    #[default]
    Mock,
    Live,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: BackendKind,
    /// Base URL of an OpenAI-compatible API, e.g. `https://host/v1`.
    pub url: Option<String>,
    pub model: Option<String>,
    /// Name of the environment variable holding the API key.
    pub api_key_env: Option<String>,
    pub fixtures: Option<PathBuf>,
    pub max_retries: u32,
    pub temperature: f64,
    pub max_input_chars: usize,
    pub max_in_flight: usize,
    pub timeout_secs: u64,
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            kind: BackendKind::Mock,
            url: None,
            model: None,
            api_key_env: Some("CHARTEXT_API_KEY".into()),
            fixtures: None,
            max_retries: 3,
            temperature: 0.0,
            max_input_chars: DEFAULT_MAX_INPUT_CHARS,
            max_in_flight: 4,
            timeout_secs: 120,
        }
    }
}

/// Scores used when the backend omits one.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UncertaintyDefaults {
    pub closed_range: u8,
    pub open_range: u8,
    /// Approximate point values such as "about 50%".
    pub approximate: u8,
    pub inferred: u8,
    /// Lower bound for computed cells, applied after taking the operand maximum.
    pub computed_floor: u8,
}

impl Default for UncertaintyDefaults {
    fn default() -> Self {
        UncertaintyDefaults {
            closed_range: 10,
            open_range: 20,
            approximate: 10,
            inferred: 50,
            computed_floor: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub port: u16,
    pub data_dir: PathBuf,
    pub max_document_bytes: usize,
    pub workers: usize,
    /// Allowed CORS origin; `*` allows any.
    pub cors_origin: String,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            port: 8080,
            data_dir: PathBuf::from("data"),
            max_document_bytes: 2 * 1024 * 1024,
            workers: 2,
            cors_origin: "*".into(),
        }
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Parse { path: PathBuf, source: toml::de::Error },
    #[error("environment variable {name}: cannot parse {value:?}")]
    Env { name: String, value: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Config, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn load(path: &Path) -> Result<Config, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Config::from_toml(&text).map_err(|source| ConfigError::Parse {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Applies `PORT`, `DATA_DIR` and `BACKEND_*` overrides from `lookup`.
    pub fn apply_env(&mut self, lookup: impl Fn(&str) -> Option<String>) -> Result<(), ConfigError> {
        fn parsed<T: std::str::FromStr>(name: &str, value: String) -> Result<T, ConfigError> {
            value.trim().parse().map_err(|_| ConfigError::Env {
                name: name.into(),
                value,
            })
        }
        if let Some(v) = lookup("PORT") {
            self.service.port = parsed("PORT", v)?;
        }
        if let Some(v) = lookup("DATA_DIR") {
            self.service.data_dir = PathBuf::from(v);
        }
        let b = &mut self.backend;
        if let Some(v) = lookup("BACKEND_KIND") {
            b.kind = match v.trim() {
                "mock" => BackendKind::Mock,
                "live" => BackendKind::Live,
                _ => {
                    return Err(ConfigError::Env {
                        name: "BACKEND_KIND".into(),
                        value: v,
                    })
                }
            };
        }
        if let Some(v) = lookup("BACKEND_URL") {
            b.url = Some(v);
        }
        if let Some(v) = lookup("BACKEND_MODEL") {
            b.model = Some(v);
        }
        if let Some(v) = lookup("BACKEND_API_KEY_ENV") {
            b.api_key_env = Some(v);
        }
        if let Some(v) = lookup("BACKEND_FIXTURES") {
            b.fixtures = Some(PathBuf::from(v));
        }
        if let Some(v) = lookup("BACKEND_MAX_RETRIES") {
            b.max_retries = parsed("BACKEND_MAX_RETRIES", v)?;
        }
        if let Some(v) = lookup("BACKEND_TEMPERATURE") {
            b.temperature = parsed("BACKEND_TEMPERATURE", v)?;
        }
        if let Some(v) = lookup("BACKEND_MAX_INPUT_CHARS") {
            b.max_input_chars = parsed("BACKEND_MAX_INPUT_CHARS", v)?;
        }
        if let Some(v) = lookup("BACKEND_MAX_IN_FLIGHT") {
            b.max_in_flight = parsed("BACKEND_MAX_IN_FLIGHT", v)?;
        }
        self.check()
    }

    pub fn check(&self) -> Result<(), ConfigError> {
        let u = &self.uncertainty;
        for (name, v) in [
            ("closed_range", u.closed_range),
            ("open_range", u.open_range),
            ("approximate", u.approximate),
            ("inferred", u.inferred),
            ("computed_floor", u.computed_floor),
        ] {
            if v == 0 || v > 100 {
                return Err(ConfigError::Invalid(format!("uncertainty.{name} must be in 1..=100")));
            }
        }
        if !(0.0..=2.0).contains(&self.backend.temperature) {
            return Err(ConfigError::Invalid("backend.temperature must be in [0, 2]".into()));
        }
        if self.backend.max_input_chars < 256 {
            return Err(ConfigError::Invalid("backend.max_input_chars must be at least 256".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    #[test]
    fn defaults_follow_the_uncertainty_table() {
        let c = Config::default();
        assert_eq!(c.uncertainty.closed_range, 10);
        assert_eq!(c.uncertainty.open_range, 20);
        assert_eq!(c.uncertainty.inferred, 50);
        assert_eq!(c.backend.max_retries, 3);
        c.check().unwrap();
    }

    #[test]
    fn toml_sections_and_env_overrides() {
        let mut c = Config::from_toml(
            r#"
            [backend]
            kind = "live"
            url = "https://example.test/v1"
            model = "m"
            temperature = 0.2

            [uncertainty]
            inferred = 40

            [service]
            port = 9000
            "#,
        )
        .unwrap();
        assert_eq!(c.backend.kind, BackendKind::Live);
        assert_eq!(c.uncertainty.inferred, 40);
        assert_eq!(c.uncertainty.closed_range, 10);

        let env: HashMap<&str, &str> = [("PORT", "7000"), ("DATA_DIR", "/tmp/x"), ("BACKEND_MAX_RETRIES", "5")].into();
        c.apply_env(|k| env.get(k).map(|v| v.to_string())).unwrap();
        assert_eq!(c.service.port, 7000);
        assert_eq!(c.service.data_dir, PathBuf::from("/tmp/x"));
        assert_eq!(c.backend.max_retries, 5);

        let bad = c.apply_env(|k| (k == "PORT").then(|| "x".to_string()));
        assert!(matches!(bad, Err(ConfigError::Env { .. })));
        assert!(Config::from_toml("[backend]\nbogus = 1").is_err());
        assert!(Config::from_toml("[uncertainty]\ninferred = 0").unwrap().check().is_err());
    }
}
