//! HTTP provider adapter.
//!
//! One adapter per provider API shape; currently the classic completions
//! endpoint (prompt in, text choices plus optional per-position top
//! log-probabilities out). The API key always comes from the environment,
//! never from config files, and is checked at construction so a missing key
//! fails before any work is queued.

use std::collections::BTreeMap;

use serde::Deserialize;
use serde_json::json;

use super::{
    BackendDescriptor, BackendError, CompletionRequest, CompletionResponse, CostLedger,
    LmBackend, NextTokenDistribution, RetryPolicy, Usage, API_KEY_ENV,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Provider {
    OpenAiCompletions,
}

impl Provider {
    fn parse(name: &str) -> Result<Self, BackendError> {
        match name {
            "openai_completions" => Ok(Provider::OpenAiCompletions),
            other => Err(BackendError::Config(format!(
                "unknown provider adapter {other:?} (known: openai_completions)"
            ))),
        }
    }
}

#[derive(Debug)]
pub struct HttpBackend {
    name: String,
    endpoint: String,
    model: String,
    provider: Provider,
    api_key: String,
    top_logprobs: u32,
    retry: RetryPolicy,
    client: reqwest::blocking::Client,
    ledger: CostLedger,
}

impl HttpBackend {
    pub fn from_descriptor(descriptor: &BackendDescriptor) -> Result<Self, BackendError> {
        let endpoint = descriptor
            .endpoint
            .clone()
            .ok_or_else(|| BackendError::Config("http backend needs an endpoint".into()))?;
        let model = descriptor
            .model
            .clone()
            .ok_or_else(|| BackendError::Config("http backend needs a model id".into()))?;
        let provider = Provider::parse(descriptor.provider.as_deref().unwrap_or("openai_completions"))?;
        let api_key = std::env::var(API_KEY_ENV)
            .map_err(|_| BackendError::MissingApiKey(API_KEY_ENV.to_string()))?;
        let client = reqwest::blocking::Client::builder()
            .timeout(std::time::Duration::from_secs(120))
            .build()
            .map_err(|e| BackendError::Config(format!("http client: {e}")))?;
        Ok(HttpBackend {
            name: descriptor.name.clone(),
            endpoint,
            model,
            provider,
            api_key,
            top_logprobs: descriptor.top_logprobs.unwrap_or(100),
            retry: RetryPolicy::default(),
            client,
            ledger: CostLedger::new(descriptor.price_per_1k),
        })
    }

    fn post(&self, body: &serde_json::Value) -> Result<ProviderResponse, BackendError> {
        with_provider_retries(&self.retry, || {
            let response = self
                .client
                .post(&self.endpoint)
                .bearer_auth(&self.api_key)
                .json(body)
                .send()
                .map_err(|e| BackendError::Transport(e.to_string()))?;
            let status = response.status();
            let text = response
                .text()
                .map_err(|e| BackendError::Transport(e.to_string()))?;
            if status.as_u16() == 429 {
                return Err(BackendError::RateLimited(trim_body(&text)));
            }
            if status.is_server_error() {
                return Err(BackendError::Transport(format!(
                    "{status}: {}",
                    trim_body(&text)
                )));
            }
            if !status.is_success() {
                return Err(BackendError::Refused(format!(
                    "{status}: {}",
                    trim_body(&text)
                )));
            }
            serde_json::from_str(&text)
                .map_err(|e| BackendError::Protocol(format!("unparseable provider response: {e}")))
        })
    }
}

fn with_provider_retries<T>(
    policy: &RetryPolicy,
    call: impl FnMut() -> Result<T, BackendError>,
) -> Result<T, BackendError> {
    super::with_retries(policy, call)
}

fn trim_body(text: &str) -> String {
    let trimmed = text.trim();
    if trimmed.len() > 400 {
        format!("{}...", &trimmed[..400])
    } else {
        trimmed.to_string()
    }
}

#[derive(Debug, Deserialize)]
struct ProviderResponse {
    choices: Vec<ProviderChoice>,
    #[serde(default)]
    usage: Option<ProviderUsage>,
}

#[derive(Debug, Deserialize)]
struct ProviderChoice {
    #[serde(default)]
    text: String,
    #[serde(default)]
    logprobs: Option<ProviderLogprobs>,
}

#[derive(Debug, Deserialize)]
struct ProviderLogprobs {
    #[serde(default)]
    token_logprobs: Option<Vec<Option<f64>>>,
    #[serde(default)]
    top_logprobs: Option<Vec<BTreeMap<String, f64>>>,
}

#[derive(Debug, Deserialize)]
struct ProviderUsage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

impl LmBackend for HttpBackend {
    fn name(&self) -> &str {
        &self.name
    }

    fn supports_logprobs(&self) -> bool {
        match self.provider {
            Provider::OpenAiCompletions => true,
        }
    }

    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, BackendError> {
        let mut body = json!({
            "model": self.model,
            "prompt": request.prompt,
            "max_tokens": request.max_tokens,
            "temperature": request.temperature,
        });
        if let Some(stops) = &request.stop_sequences {
            body["stop"] = json!(stops);
        }
        if let Some(k) = request.top_logprobs {
            body["logprobs"] = json!(k);
        }
        let parsed = self.post(&body)?;
        let choice = parsed
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| BackendError::Protocol("provider returned no choices".into()))?;
        let usage = parsed
            .usage
            .map(|u| Usage {
                prompt_tokens: u.prompt_tokens,
                completion_tokens: u.completion_tokens,
            })
            .unwrap_or_default();
        self.ledger.record(usage.prompt_tokens, usage.completion_tokens);
        let token_logprobs = choice.logprobs.and_then(|lp| {
            lp.token_logprobs
                .map(|v| v.into_iter().map(|x| x.unwrap_or(f64::NEG_INFINITY)).collect())
        });
        Ok(CompletionResponse {
            text: choice.text,
            token_logprobs,
            usage,
        })
    }

    fn next_token_logprobs(&self, prompt: &str) -> Result<NextTokenDistribution, BackendError> {
        let body = json!({
            "model": self.model,
            "prompt": prompt,
            "max_tokens": 1,
            "temperature": 0.0,
            "logprobs": self.top_logprobs,
        });
        let parsed = self.post(&body)?;
        let choice = parsed
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| BackendError::Protocol("provider returned no choices".into()))?;
        let top = choice
            .logprobs
            .and_then(|lp| lp.top_logprobs)
            .and_then(|mut v| if v.is_empty() { None } else { Some(v.remove(0)) })
            .ok_or_else(|| {
                BackendError::Protocol("provider response carries no top log-probabilities".into())
            })?;
        let usage = parsed
            .usage
            .map(|u| Usage {
                prompt_tokens: u.prompt_tokens,
                completion_tokens: u.completion_tokens,
            })
            .unwrap_or(Usage {
                prompt_tokens: 0,
                completion_tokens: 1,
            });
        self.ledger.record(usage.prompt_tokens, usage.completion_tokens);
        Ok(NextTokenDistribution::new(top, prompt))
    }

    fn ledger(&self) -> &CostLedger {
        &self.ledger
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::BackendKind;

    fn descriptor() -> BackendDescriptor {
        BackendDescriptor {
            name: "gpt3".into(),
            kind: BackendKind::Http,
            price_per_1k: 0.06,
            params_label: Some("175B".into()),
            rules: None,
            store: None,
            endpoint: Some("https://example.invalid/v1/completions".into()),
            model: Some("davinci".into()),
            provider: Some("openai_completions".into()),
            top_logprobs: Some(100),
        }
    }

    #[test]
    fn missing_api_key_fails_at_construction() {
        // The variable is absent in the test environment.
        std::env::remove_var(API_KEY_ENV);
        let err = HttpBackend::from_descriptor(&descriptor()).unwrap_err();
        assert!(matches!(err, BackendError::MissingApiKey(_)));
    }

    #[test]
    fn unknown_provider_is_a_config_error() {
        let mut d = descriptor();
        d.provider = Some("mystery_api".into());
        std::env::set_var(API_KEY_ENV, "test-key");
        let err = HttpBackend::from_descriptor(&d).unwrap_err();
        std::env::remove_var(API_KEY_ENV);
        assert!(matches!(err, BackendError::Config(_)));
    }

    #[test]
    fn provider_response_parsing() {
        let text = r#"{
            "choices": [{
                "text": " Trump",
                "logprobs": {
                    "token_logprobs": [-0.2],
                    "top_logprobs": [{" Trump": -0.2, " Clinton": -1.7}]
                }
            }],
            "usage": {"prompt_tokens": 80, "completion_tokens": 1}
        }"#;
        let parsed: ProviderResponse = serde_json::from_str(text).unwrap();
        assert_eq!(parsed.choices.len(), 1);
        let top = parsed.choices[0]
            .logprobs
            .as_ref()
            .unwrap()
            .top_logprobs
            .as_ref()
            .unwrap();
        assert_eq!(top[0].len(), 2);
        assert_eq!(parsed.usage.unwrap().prompt_tokens, 80);
    }
}
