use std::time::Duration;

use serde_json::{json, Value};

use super::backend::{BackendError, BackendInfo, Capabilities, CompletionBackend, CompletionRequest};
use crate::config::BackendConfig;

/// OpenAI-style chat completions over HTTP. The API key is read from the
/// environment once at construction and never leaves this struct.
pub struct LiveBackend {
    agent: ureq::Agent,
    endpoint: String,
    model: String,
    temperature: f64,
    api_key: Option<String>,
    capabilities: Capabilities,
}

impl std::fmt::Debug for LiveBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LiveBackend")
            .field("endpoint", &self.endpoint)
            .field("model", &self.model)
            .field("temperature", &self.temperature)
            .field("api_key", &self.api_key.as_ref().map(|_| "<redacted>"))
            .finish()
    }
}

impl LiveBackend {
    pub fn from_config(config: &BackendConfig) -> Result<Self, BackendError> {
        let url = config
            .url
            .as_deref()
            .filter(|u| !u.is_empty())
            .ok_or_else(|| BackendError::Config("backend.url is not set".into()))?;
        let model = config
            .model
            .clone()
            .filter(|m| !m.is_empty())
            .ok_or_else(|| BackendError::Config("backend.model is not set".into()))?;
        let api_key = match &config.api_key_env {
            Some(var) => Some(
                std::env::var(var)
                    .map_err(|_| BackendError::Config(format!("environment variable {var} is not set")))?,
            ),
            None => None,
        };
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(LiveBackend {
            agent,
            endpoint: format!("{}/chat/completions", url.trim_end_matches('/')),
            model,
            temperature: config.temperature,
            api_key,
            capabilities: Capabilities {
                max_input_chars: config.max_input_chars,
            },
        })
    }

    fn body(&self, request: &CompletionRequest<'_>) -> Value {
        json!({
            "model": self.model,
            "temperature": self.temperature,
            "response_format": {"type": "json_object"},
            "messages": [
                {
                    "role": "system",
                    "content": format!(
                        "Reply with a single JSON object that validates against this JSON schema:\n{}",
                        request.contract
                    ),
                },
                {"role": "user", "content": request.prompt},
            ],
        })
    }
}

impl CompletionBackend for LiveBackend {
    fn complete(&self, request: &CompletionRequest<'_>) -> Result<String, BackendError> {
        let mut call = self.agent.post(&self.endpoint);
        if let Some(key) = &self.api_key {
            call = call.header("Authorization", &format!("Bearer {key}"));
        }
        let body = serde_json::to_string(&self.body(request)).expect("request body serializes");
        let mut response = call
            .header("Content-Type", "application/json")
            .send(body)
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        let status = response.status();
        let text = response
            .body_mut()
            .read_to_string()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        if !status.is_success() {
            let snippet: String = text.chars().take(200).collect();
            return Err(BackendError::Transport(format!("HTTP {status}: {snippet}")));
        }
        let payload: Value =
            serde_json::from_str(&text).map_err(|e| BackendError::Transport(format!("response is not JSON: {e}")))?;
        payload
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| BackendError::Transport("response has no choices[0].message.content".into()))
    }

    fn capabilities(&self) -> Capabilities {
        self.capabilities
    }

    fn describe(&self) -> BackendInfo {
        BackendInfo {
            kind: "live".into(),
            model: Some(self.model.clone()),
            temperature: Some(self.temperature),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::backend::Stage;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;

    /// Serves one canned HTTP response and hands back the raw request.
    fn one_shot(status: &str, body: &str) -> (String, std::thread::JoinHandle<String>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let reply = format!(
            "HTTP/1.1 {status}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
            body.len()
        );
        let handle = std::thread::spawn(move || {
            let (mut stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut head = String::new();
            let mut length = 0;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    length = v.trim().parse().unwrap();
                }
                head.push_str(&line);
                if line == "\r\n" {
                    break;
                }
            }
            let mut body = vec![0; length];
            reader.read_exact(&mut body).unwrap();
            stream.write_all(reply.as_bytes()).unwrap();
            head + &String::from_utf8(body).unwrap()
        });
        (format!("http://{addr}/v1"), handle)
    }

    fn config(url: String, key_env: Option<&str>) -> BackendConfig {
        BackendConfig {
            url: Some(url),
            model: Some("test-model".into()),
            api_key_env: key_env.map(String::from),
            ..BackendConfig::default()
        }
    }

    #[test]
    fn posts_chat_completion_and_extracts_content() {
        let (url, server) = one_shot("200 OK", r#"{"choices":[{"message":{"content":"{\"ok\":true}"}}]}"#);
        std::env::set_var("CHARTEXT_TEST_KEY_A", "sk-test");
        let backend = LiveBackend::from_config(&config(url, Some("CHARTEXT_TEST_KEY_A"))).unwrap();
        let contract = json!({"type": "object"});
        let out = backend
            .complete(&CompletionRequest {
                stage: Stage::CreateSchema,
                prompt: "hello",
                contract: &contract,
                attempt: 0,
            })
            .unwrap();
        assert_eq!(out, r#"{"ok":true}"#);
        let request = server.join().unwrap();
        assert!(request.starts_with("POST /v1/chat/completions"));
        assert!(request.contains("Bearer sk-test"));
        assert!(request.contains("\"model\":\"test-model\""));
        assert!(!format!("{backend:?}").contains("sk-test"));
    }

    #[test]
    fn http_errors_are_retryable_transport_failures() {
        let (url, server) = one_shot("500 Internal Server Error", "{}");
        let backend = LiveBackend::from_config(&config(url, None)).unwrap();
        let contract = json!({});
        let err = backend
            .complete(&CompletionRequest {
                stage: Stage::CreateSchema,
                prompt: "p",
                contract: &contract,
                attempt: 0,
            })
            .unwrap_err();
        server.join().unwrap();
        assert!(err.is_retryable());
        assert!(err.to_string().contains("500"));
    }

    #[test]
    fn missing_settings_are_config_errors() {
        let mut c = config("http://localhost".into(), Some("CHARTEXT_TEST_KEY_UNSET"));
        assert!(matches!(LiveBackend::from_config(&c), Err(BackendError::Config(_))));
        c.api_key_env = None;
        c.model = None;
        assert!(matches!(LiveBackend::from_config(&c), Err(BackendError::Config(_))));
    }
}
