use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{KamError, PromptText, RelationKind};

/// Connection and decoding settings for a hosted chat-completion endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProviderConfig {
    pub endpoint: String,
    pub model: String,
    pub temperature: f64,
    pub max_retries: u32,
    pub timeout_secs: u64,
    /// Upper bound on concurrent in-flight requests.
    pub max_in_flight: usize,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        ProviderConfig {
            endpoint: String::new(),
            model: "gpt-3.5-turbo".to_string(),
            temperature: 0.0,
            max_retries: 2,
            timeout_secs: 60,
            max_in_flight: 4,
        }
    }
}

impl ProviderConfig {
    /// Overrides endpoint and model from `KAM_ENDPOINT` / `KAM_MODEL`.
    pub fn with_env(mut self) -> Self {
        if let Ok(e) = std::env::var("KAM_ENDPOINT") {
            self.endpoint = e;
        }
        if let Ok(m) = std::env::var("KAM_MODEL") {
            self.model = m;
        }
        self
    }

    pub fn validate(&self) -> Result<(), KamError> {
        if !(self.temperature >= 0.0) {
            return Err(KamError::Provider(format!(
                "temperature must be >= 0, got {}",
                self.temperature
            )));
        }
        if self.max_in_flight == 0 {
            return Err(KamError::Provider("max_in_flight must be >= 1".into()));
        }
        Ok(())
    }
}

/// A chat-completion backend: role-tagged messages in, plain text out.
pub trait Provider: Send + Sync {
    /// Model identity; part of every cache key.
    fn model(&self) -> &str;
    fn complete(&self, prompt: &PromptText) -> Result<String, KamError>;
}

impl<P: Provider + ?Sized> Provider for &P {
    fn model(&self) -> &str {
        (**self).model()
    }
    fn complete(&self, prompt: &PromptText) -> Result<String, KamError> {
        (**self).complete(prompt)
    }
}

/// Cue words that make the offline stub answer contrastive / disagreement.
pub const NEGATION_CUES: &[&str] = &[
    "no", "not", "never", "nope", "wrong", "disagree", "nonsense", "false", "don't", "doesn't", "isn't", "can't",
    "won't", "nobody",
];

/// Deterministic rule-based stand-in for a hosted model. It reads the focal
/// comment back out of the prompt and answers by negation cue.
#[derive(Debug, Clone)]
pub struct StubProvider {
    model: String,
}

impl Default for StubProvider {
    fn default() -> Self {
        StubProvider {
            model: "stub-negation-cue-v1".to_string(),
        }
    }
}

impl StubProvider {
    pub fn new() -> Self {
        Self::default()
    }

    fn focal_text(prompt: &str) -> Option<&str> {
        let rest = prompt.split(" between ").last()?;
        let focal = rest.split(" and ").next()?;
        // the thread lines are `<label>: <text>`
        let prefix = format!("{focal}: ");
        prompt.lines().find_map(|l| l.strip_prefix(prefix.as_str()))
    }

    pub fn has_negation_cue(text: &str) -> bool {
        text.to_lowercase()
            .split(|c: char| !(c.is_alphanumeric() || c == '\''))
            .any(|w| NEGATION_CUES.contains(&w))
    }

    pub fn reply(kind: RelationKind, negated: bool) -> &'static str {
        match (kind, negated) {
            (RelationKind::Logical, true) => "contrastive",
            (RelationKind::Logical, false) => "succession",
            (RelationKind::Act, true) => "disagreement",
            (RelationKind::Act, false) => "agreement",
        }
    }
}

impl Provider for StubProvider {
    fn model(&self) -> &str {
        &self.model
    }

    fn complete(&self, prompt: &PromptText) -> Result<String, KamError> {
        let first = prompt.messages.first().map(|m| m.content.as_str()).unwrap_or("");
        let kind = if first.contains("Determine the conversation act") {
            RelationKind::Act
        } else {
            RelationKind::Logical
        };
        let negated = Self::focal_text(first).is_some_and(Self::has_negation_cue);
        Ok(Self::reply(kind, negated).to_string())
    }
}

/// Wraps a provider and counts `complete` calls.
#[derive(Debug)]
pub struct CountingProvider<P> {
    inner: P,
    calls: AtomicUsize,
}

impl<P: Provider> CountingProvider<P> {
    pub fn new(inner: P) -> Self {
        CountingProvider {
            inner,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn reset(&self) {
        self.calls.store(0, Ordering::SeqCst);
    }
}

impl<P: Provider> Provider for CountingProvider<P> {
    fn model(&self) -> &str {
        self.inner.model()
    }

    fn complete(&self, prompt: &PromptText) -> Result<String, KamError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.complete(prompt)
    }
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    temperature: f64,
    messages: &'a [super::Message],
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatMessage,
}

#[derive(Deserialize)]
struct ChatMessage {
    content: String,
}

/// OpenAI-compatible `POST {endpoint}/chat/completions` client.
pub struct HttpProvider {
    config: ProviderConfig,
    api_key: Option<String>,
    agent: ureq::Agent,
}

impl HttpProvider {
    pub fn new(config: ProviderConfig, api_key: Option<String>) -> Result<Self, KamError> {
        config.validate()?;
        if config.endpoint.is_empty() {
            return Err(KamError::Provider("no endpoint configured (set KAM_ENDPOINT)".into()));
        }
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .build()
            .into();
        Ok(HttpProvider { config, api_key, agent })
    }

    /// Reads `KAM_ENDPOINT`, `KAM_API_KEY` and `KAM_MODEL`.
    pub fn from_env(base: ProviderConfig) -> Result<Self, KamError> {
        let config = base.with_env();
        Self::new(config, std::env::var("KAM_API_KEY").ok())
    }

    fn url(&self) -> String {
        format!("{}/chat/completions", self.config.endpoint.trim_end_matches('/'))
    }

    fn request_once(&self, prompt: &PromptText) -> Result<String, KamError> {
        let body = ChatRequest {
            model: &self.config.model,
            temperature: self.config.temperature,
            messages: &prompt.messages,
        };
        let mut req = self.agent.post(&self.url());
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req.send_json(&body).map_err(|e| KamError::Provider(e.to_string()))?;
        let parsed: ChatResponse = resp
            .body_mut()
            .read_json()
            .map_err(|e| KamError::Provider(format!("malformed response: {e}")))?;
        parsed
            .choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .ok_or_else(|| KamError::Provider("response has no choices".into()))
    }
}

impl Provider for HttpProvider {
    fn model(&self) -> &str {
        &self.config.model
    }

    fn complete(&self, prompt: &PromptText) -> Result<String, KamError> {
        let mut last = None;
        for attempt in 0..=self.config.max_retries {
            match self.request_once(prompt) {
                Ok(text) => return Ok(text),
                Err(e) => {
                    log::warn!("provider attempt {} failed: {e}", attempt + 1);
                    last = Some(e);
                    if attempt < self.config.max_retries {
                        std::thread::sleep(Duration::from_millis(250 << attempt));
                    }
                }
            }
        }
        Err(last.expect("at least one attempt"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conversation::Utterance;
    use crate::kam::build_prompt;

    fn chain(texts: &[&str]) -> Vec<Utterance> {
        texts
            .iter()
            .enumerate()
            .map(|(k, t)| Utterance {
                id: format!("u{k}"),
                parent_id: (k > 0).then(|| format!("u{}", k - 1)),
                author: "a".into(),
                text: t.to_string(),
                depth: k + 1,
                stance: None,
                relevant: true,
            })
            .collect()
    }

    #[test]
    fn stub_cue_rule() {
        let stub = StubProvider::new();
        let c = chain(&["Rockets are great", "No, that is wrong", "I agree completely"]);
        let p2 = build_prompt(&c, 2, RelationKind::Logical).unwrap();
        assert_eq!(stub.complete(&p2).unwrap(), "contrastive");
        let p3 = build_prompt(&c, 3, RelationKind::Logical).unwrap();
        assert_eq!(stub.complete(&p3).unwrap(), "succession");
        let a2 = build_prompt(&c, 2, RelationKind::Act).unwrap();
        assert_eq!(stub.complete(&a2).unwrap(), "disagreement");
        let a3 = build_prompt(&c, 3, RelationKind::Act).unwrap();
        assert_eq!(stub.complete(&a3).unwrap(), "agreement");
        assert_eq!(stub.complete(&p2).unwrap(), stub.complete(&p2).unwrap());
    }

    #[test]
    fn stub_reads_focal_not_parent() {
        // the parent carries the cue, the focal comment does not
        let c = chain(&["This is not good", "Sounds fine to me"]);
        let p = build_prompt(&c, 2, RelationKind::Act).unwrap();
        assert_eq!(
            StubProvider::focal_text(&p.messages[0].content),
            Some("Sounds fine to me")
        );
        assert_eq!(StubProvider::new().complete(&p).unwrap(), "agreement");
    }

    #[test]
    fn counting_wrapper() {
        let c = CountingProvider::new(StubProvider::new());
        let p = build_prompt(&chain(&["a", "b"]), 2, RelationKind::Act).unwrap();
        c.complete(&p).unwrap();
        c.complete(&p).unwrap();
        assert_eq!(c.calls(), 2);
    }

    #[test]
    fn config_validation() {
        let bad = ProviderConfig {
            temperature: -1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        assert!(HttpProvider::new(ProviderConfig::default(), None).is_err());
    }
}
