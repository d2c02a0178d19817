use std::collections::BTreeMap;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::mock::MockSpec;

pub const MOCK_SCHEME: &str = "mock://";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    /// Delay before the second attempt; doubles on every further attempt.
    pub base_backoff_secs: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { max_attempts: 5, base_backoff_secs: 1.0 }
    }
}

impl RetryPolicy {
    /// Delay after failed attempt number `attempt` (1-based).
    pub fn backoff(&self, attempt: u32) -> Duration {
        let factor = 2f64.powi(attempt.saturating_sub(1) as i32);
        Duration::from_secs_f64((self.base_backoff_secs * factor).max(0.0))
    }
}

/// A chat-completions / embeddings service, or a deterministic mock.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelEndpoint {
    pub name: String,
    /// `http(s)://…/v1` for a real server or `mock://<label>` for a mock.
    pub base_url: String,
    pub model: String,
    pub temperature: f64,
    pub max_in_flight: usize,
    pub retry: RetryPolicy,
    pub timeout_secs: f64,
    /// Environment variable holding the bearer token. `None` sends no auth header.
    pub api_key_env: Option<String>,
    pub embedding_model: Option<String>,
    /// Opaque extra request parameters (e.g. a reasoning-effort setting).
    pub extra: BTreeMap<String, serde_json::Value>,
    /// Mock behaviour for `mock://` endpoints.
    pub mock: Option<MockSpec>,
}

impl Default for ModelEndpoint {
    fn default() -> Self {
        Self {
            name: "default".into(),
            base_url: "mock://rule-based".into(),
            model: "mock".into(),
            temperature: 0.0,
            max_in_flight: 4,
            retry: RetryPolicy::default(),
            timeout_secs: 60.0,
            api_key_env: None,
            embedding_model: None,
            extra: BTreeMap::new(),
            mock: None,
        }
    }
}

impl ModelEndpoint {
    pub fn mock(name: impl Into<String>, spec: MockSpec) -> Self {
        Self {
            name: name.into(),
            base_url: format!("{MOCK_SCHEME}{}", spec.kind.name()),
            model: format!("mock-{}", spec.kind.name()),
            mock: Some(spec),
            ..Self::default()
        }
    }

    pub fn is_mock(&self) -> bool {
        self.base_url.starts_with(MOCK_SCHEME)
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.timeout_secs.max(0.001))
    }

    /// Everything that can change a response. Used in cache keys; excludes
    /// scheduling knobs such as `max_in_flight` and the display name.
    pub fn identity(&self) -> String {
        serde_json::json!({
            "base_url": self.base_url,
            "model": self.model,
            "temperature": self.temperature,
            "extra": self.extra,
            "mock": self.mock,
        })
        .to_string()
    }

    /// Invariant violations, empty when valid.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.temperature >= 0.0) {
            out.push(format!("temperature must be >= 0 (got {})", self.temperature));
        }
        if self.max_in_flight == 0 {
            out.push("max_in_flight must be >= 1".into());
        }
        if self.retry.max_attempts == 0 {
            out.push("retry.max_attempts must be >= 1".into());
        }
        if !(self.retry.base_backoff_secs >= 0.0) {
            out.push("retry.base_backoff_secs must be >= 0".into());
        }
        if !(self.timeout_secs > 0.0) {
            out.push("timeout_secs must be > 0".into());
        }
        if self.is_mock() {
            if let Some(spec) = &self.mock {
                out.extend(spec.problems());
            }
        } else if !(self.base_url.starts_with("http://") || self.base_url.starts_with("https://")) {
            out.push(format!("base_url {:?} must start with http://, https:// or {MOCK_SCHEME}", self.base_url));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backoff_doubles() {
        let p = RetryPolicy { max_attempts: 4, base_backoff_secs: 0.5 };
        assert_eq!(p.backoff(1), Duration::from_millis(500));
        assert_eq!(p.backoff(2), Duration::from_secs(1));
        assert_eq!(p.backoff(3), Duration::from_secs(2));
    }

    #[test]
    fn identity_ignores_scheduling() {
        let a = ModelEndpoint::default();
        let b = ModelEndpoint { max_in_flight: 32, name: "other".into(), ..a.clone() };
        assert_eq!(a.identity(), b.identity());
        let c = ModelEndpoint { temperature: 0.7, ..a.clone() };
        assert_ne!(a.identity(), c.identity());
    }

    #[test]
    fn problems_reported() {
        let e = ModelEndpoint { temperature: -1.0, max_in_flight: 0, base_url: "ftp://x".into(), ..Default::default() };
        assert_eq!(e.problems().len(), 3);
        assert!(ModelEndpoint::default().problems().is_empty());
    }
}
