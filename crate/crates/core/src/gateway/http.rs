//! Chat-completions / embeddings over HTTP using the de-facto JSON shapes.

use std::io::Read;
use std::time::Duration;

use serde::Deserialize;

use super::{Backend, ChatRequest, Subject, TransportError};

pub struct HttpBackend {
    agent: ureq::Agent,
    base_url: String,
    api_key: Option<String>,
}

impl HttpBackend {
    pub fn new(base_url: &str, api_key: Option<String>, timeout: Duration) -> Self {
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build();
        Self {
            agent: ureq::Agent::new_with_config(config),
            base_url: base_url.trim_end_matches('/').to_string(),
            api_key,
        }
    }

    fn post(&self, path: &str, body: &serde_json::Value) -> Result<String, TransportError> {
        let url = format!("{}/{path}", self.base_url);
        let mut req = self.agent.post(&url).header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req.send(body.to_string().as_bytes()).map_err(map_ureq)?;
        let code = resp.status().as_u16();
        let mut text = String::new();
        resp.body_mut()
            .as_reader()
            .read_to_string(&mut text)
            .map_err(|e| TransportError::Io(e.to_string()))?;
        if (200..300).contains(&code) {
            Ok(text)
        } else {
            Err(TransportError::Status { code, body: text })
        }
    }
}

fn map_ureq(e: ureq::Error) -> TransportError {
    match e {
        ureq::Error::Timeout(_) => TransportError::Timeout,
        ureq::Error::StatusCode(code) => TransportError::Status { code, body: String::new() },
        ureq::Error::Io(io) if io.kind() == std::io::ErrorKind::TimedOut => TransportError::Timeout,
        other => TransportError::Io(other.to_string()),
    }
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ResponseMessage,
}

#[derive(Deserialize)]
struct ResponseMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingDatum>,
}

#[derive(Deserialize)]
struct EmbeddingDatum {
    embedding: Vec<f64>,
    #[serde(default)]
    index: Option<usize>,
}

impl Backend for HttpBackend {
    fn chat(&self, request: &ChatRequest, _subject: Option<&Subject>) -> Result<String, TransportError> {
        let body = serde_json::to_value(request).map_err(|e| TransportError::Malformed(e.to_string()))?;
        let text = self.post("chat/completions", &body)?;
        let parsed: ChatResponse = serde_json::from_str(&text).map_err(|e| TransportError::Malformed(e.to_string()))?;
        parsed
            .choices
            .into_iter()
            .next()
            .map(|c| c.message.content.unwrap_or_default())
            .ok_or_else(|| TransportError::Malformed("response has no choices".into()))
    }

    fn embed(&self, model: &str, texts: &[String]) -> Result<Vec<Vec<f64>>, TransportError> {
        let body = serde_json::json!({ "model": model, "input": texts });
        let text = self.post("embeddings", &body)?;
        let parsed: EmbeddingResponse = serde_json::from_str(&text).map_err(|e| TransportError::Malformed(e.to_string()))?;
        if parsed.data.len() != texts.len() {
            return Err(TransportError::Malformed(format!(
                "expected {} embeddings, got {}",
                texts.len(),
                parsed.data.len()
            )));
        }
        let mut data = parsed.data;
        if data.iter().all(|d| d.index.is_some()) {
            data.sort_by_key(|d| d.index);
        }
        Ok(data.into_iter().map(|d| d.embedding).collect())
    }
}
