//! Deterministic stand-ins for a real language model.
//!
//! A mock backend is a rule file: ordered predicates over the prompt, each
//! with an action that yields either text or a next-token distribution.
//! Anything random (weighted choice, probability jitter) draws from an RNG
//! seeded by the mock seed plus the request content, so results depend only
//! on (seed, request), never on thread scheduling or call order.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use sha2::{Digest, Sha256};

use super::{
    BackendError, CompletionRequest, CompletionResponse, CostLedger, LmBackend,
    NextTokenDistribution, Usage,
};
use crate::survey::SurveyDataset;
use crate::templating::{render_interview, InterviewScript};

/// Whitespace tokenization. Crude, but the mocks only need token counts for
/// truncation and the ledger, and nothing downstream depends on a real
/// tokenizer.
pub(crate) fn count_tokens(text: &str) -> u64 {
    text.split_whitespace().count() as u64
}

fn truncate_tokens(text: &str, max_tokens: u32) -> String {
    let tokens: Vec<&str> = text.split_whitespace().collect();
    if tokens.len() <= max_tokens as usize {
        return text.to_string();
    }
    tokens[..max_tokens as usize].join(" ")
}

#[derive(Debug, Deserialize)]
struct RawRule {
    /// Substring predicate on the prompt; absent on the default rule.
    #[serde(default)]
    when_contains: Option<String>,
    #[serde(default)]
    default: bool,
    #[serde(default)]
    text: Option<String>,
    /// token -> probability, summing to at most 1.
    #[serde(default)]
    distribution: Option<BTreeMap<String, f64>>,
    #[serde(default)]
    choices: Option<Vec<RawChoice>>,
    #[serde(default)]
    split_noise: Option<RawSplitNoise>,
}

#[derive(Debug, Deserialize, Clone)]
struct RawChoice {
    text: String,
    weight: f64,
}

#[derive(Debug, Deserialize, Clone)]
struct RawSplitNoise {
    token_a: String,
    token_b: String,
    base: f64,
    spread: f64,
}

#[derive(Debug, Clone)]
enum Action {
    Text(String),
    /// token -> log-probability.
    Distribution(BTreeMap<String, f64>),
    Choices(Vec<(String, f64)>),
    /// Two-token distribution with seeded jitter on the first token's mass:
    /// p_a = clamp(base + uniform(-spread, spread)).
    SplitNoise {
        token_a: String,
        token_b: String,
        base: f64,
        spread: f64,
    },
}

#[derive(Debug, Clone)]
struct Rule {
    when_contains: Option<String>,
    action: Action,
}

#[derive(Debug)]
pub struct MockBackend {
    name: String,
    rules: Vec<Rule>,
    default_rule: Rule,
    seed: u64,
    ledger: CostLedger,
}

impl MockBackend {
    pub fn from_rule_file(
        name: &str,
        path: &Path,
        seed: u64,
        rate_per_1k: f64,
    ) -> Result<Self, BackendError> {
        let text = std::fs::read_to_string(path).map_err(|source| BackendError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let raw: Vec<RawRule> = serde_json::from_str(&text)
            .map_err(|e| BackendError::Config(format!("{}: {}", path.display(), e)))?;
        Self::from_rules(name, raw, seed, rate_per_1k, &path.display().to_string())
    }

    pub fn from_rule_json(
        name: &str,
        json: &str,
        seed: u64,
        rate_per_1k: f64,
    ) -> Result<Self, BackendError> {
        let raw: Vec<RawRule> = serde_json::from_str(json)
            .map_err(|e| BackendError::Config(format!("inline rules: {}", e)))?;
        Self::from_rules(name, raw, seed, rate_per_1k, "inline rules")
    }

    fn from_rules(
        name: &str,
        raw: Vec<RawRule>,
        seed: u64,
        rate_per_1k: f64,
        origin: &str,
    ) -> Result<Self, BackendError> {
        let mut rules = Vec::new();
        let mut default_rule = None;
        for (i, r) in raw.into_iter().enumerate() {
            let mut actions: Vec<Action> = Vec::new();
            if let Some(t) = r.text {
                actions.push(Action::Text(t));
            }
            if let Some(d) = r.distribution {
                let mut total = 0.0;
                let mut logprobs = BTreeMap::new();
                for (token, p) in d {
                    if !(p > 0.0) {
                        return Err(BackendError::Config(format!(
                            "{origin}: rule {i} gives token {token:?} non-positive probability"
                        )));
                    }
                    total += p;
                    logprobs.insert(token, p.ln());
                }
                if total > 1.0 + 1e-9 {
                    return Err(BackendError::Config(format!(
                        "{origin}: rule {i} distribution sums to {total}, above 1"
                    )));
                }
                actions.push(Action::Distribution(logprobs));
            }
            if let Some(c) = r.choices {
                if c.is_empty() {
                    return Err(BackendError::Config(format!("{origin}: rule {i} has no choices")));
                }
                for ch in &c {
                    if !(ch.weight > 0.0) {
                        return Err(BackendError::Config(format!(
                            "{origin}: rule {i} choice {:?} has non-positive weight",
                            ch.text
                        )));
                    }
                }
                actions.push(Action::Choices(c.into_iter().map(|c| (c.text, c.weight)).collect()));
            }
            if let Some(s) = r.split_noise {
                if !(s.base - s.spread > 0.0 && s.base + s.spread < 1.0) {
                    return Err(BackendError::Config(format!(
                        "{origin}: rule {i} split_noise can leave (0, 1)"
                    )));
                }
                actions.push(Action::SplitNoise {
                    token_a: s.token_a,
                    token_b: s.token_b,
                    base: s.base,
                    spread: s.spread,
                });
            }
            if actions.len() != 1 {
                return Err(BackendError::Config(format!(
                    "{origin}: rule {i} must declare exactly one action, found {}",
                    actions.len()
                )));
            }
            let rule = Rule {
                when_contains: r.when_contains.clone(),
                action: actions.pop().unwrap(),
            };
            if r.default {
                if rule.when_contains.is_some() {
                    return Err(BackendError::Config(format!(
                        "{origin}: rule {i} is default but has a predicate"
                    )));
                }
                if default_rule.replace(rule).is_some() {
                    return Err(BackendError::Config(format!("{origin}: two default rules")));
                }
            } else {
                if rule.when_contains.is_none() {
                    return Err(BackendError::Config(format!(
                        "{origin}: rule {i} has neither a predicate nor default: true"
                    )));
                }
                rules.push(rule);
            }
        }
        let default_rule = default_rule.ok_or_else(|| {
            BackendError::Config(format!("{origin}: a default rule is required"))
        })?;
        Ok(MockBackend {
            name: name.to_string(),
            rules,
            default_rule,
            seed,
            ledger: CostLedger::new(rate_per_1k),
        })
    }

    fn rule_for(&self, prompt: &str) -> &Rule {
        self.rules
            .iter()
            .find(|r| {
                r.when_contains
                    .as_deref()
                    .map(|needle| prompt.contains(needle))
                    .unwrap_or(false)
            })
            .unwrap_or(&self.default_rule)
    }

    // RNG derived from (mock seed, request content): identical requests get
    // identical draws regardless of scheduling.
    fn rng_for(&self, parts: &[&str]) -> ChaCha8Rng {
        let mut hasher = Sha256::new();
        hasher.update(self.seed.to_le_bytes());
        for p in parts {
            hasher.update([0xff]);
            hasher.update(p.as_bytes());
        }
        let digest = hasher.finalize();
        let mut key = [0u8; 8];
        key.copy_from_slice(&digest[..8]);
        ChaCha8Rng::seed_from_u64(u64::from_le_bytes(key))
    }

    fn split_probability(&self, prompt: &str, base: f64, spread: f64) -> f64 {
        let mut rng = self.rng_for(&["split", prompt]);
        let jitter = rng.gen_range(-spread..=spread);
        (base + jitter).clamp(1e-6, 1.0 - 1e-6)
    }
}

// Temperature-scaled weighted choice: mass w^(1/T), T below 1e-6 degrades
// to argmax (first maximum wins, deterministically).
fn choose_weighted<'a>(
    choices: &'a [(String, f64)],
    temperature: f64,
    rng: &mut ChaCha8Rng,
) -> &'a str {
    if temperature < 1e-6 {
        let mut best = &choices[0];
        for c in choices {
            if c.1 > best.1 {
                best = c;
            }
        }
        return &best.0;
    }
    let inv_t = 1.0 / temperature;
    let scaled: Vec<f64> = choices.iter().map(|(_, w)| w.powf(inv_t)).collect();
    let total: f64 = scaled.iter().sum();
    let mut draw = rng.gen_range(0.0..1.0) * total;
    for (i, s) in scaled.iter().enumerate() {
        draw -= s;
        if draw <= 0.0 {
            return &choices[i].0;
        }
    }
    &choices[choices.len() - 1].0
}

impl LmBackend for MockBackend {
    fn name(&self) -> &str {
        &self.name
    }

    fn supports_logprobs(&self) -> bool {
        true
    }

    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, BackendError> {
        let rule = self.rule_for(&request.prompt);
        let temp_key = format!("{:.6}", request.temperature);
        let text = match &rule.action {
            Action::Text(t) => t.clone(),
            Action::Distribution(logprobs) => {
                let choices: Vec<(String, f64)> = logprobs
                    .iter()
                    .map(|(t, lp)| (t.clone(), lp.exp()))
                    .collect();
                let mut rng = self.rng_for(&["complete", &request.prompt, &temp_key]);
                choose_weighted(&choices, request.temperature, &mut rng).to_string()
            }
            Action::Choices(choices) => {
                let mut rng = self.rng_for(&["complete", &request.prompt, &temp_key]);
                choose_weighted(choices, request.temperature, &mut rng).to_string()
            }
            Action::SplitNoise {
                token_a,
                token_b,
                base,
                spread,
            } => {
                let p_a = self.split_probability(&request.prompt, *base, *spread);
                let mut rng = self.rng_for(&["complete", &request.prompt, &temp_key]);
                if rng.gen_range(0.0..1.0) < p_a {
                    token_a.clone()
                } else {
                    token_b.clone()
                }
            }
        };
        let mut text = truncate_tokens(&text, request.max_tokens);
        if let Some(stops) = &request.stop_sequences {
            for stop in stops {
                if let Some(pos) = text.find(stop.as_str()) {
                    text.truncate(pos);
                }
            }
        }
        let usage = Usage {
            prompt_tokens: count_tokens(&request.prompt),
            completion_tokens: count_tokens(&text),
        };
        self.ledger.record(usage.prompt_tokens, usage.completion_tokens);
        Ok(CompletionResponse {
            text,
            token_logprobs: None,
            usage,
        })
    }

    fn next_token_logprobs(&self, prompt: &str) -> Result<NextTokenDistribution, BackendError> {
        let rule = self.rule_for(prompt);
        let logprobs = match &rule.action {
            Action::Distribution(logprobs) => logprobs.clone(),
            Action::SplitNoise {
                token_a,
                token_b,
                base,
                spread,
            } => {
                let p_a = self.split_probability(prompt, *base, *spread);
                let mut map = BTreeMap::new();
                map.insert(token_a.clone(), p_a.ln());
                map.insert(token_b.clone(), (1.0 - p_a).ln());
                map
            }
            Action::Text(t) => {
                let first = t.split_whitespace().next().ok_or_else(|| {
                    BackendError::Protocol("text rule yields an empty distribution".into())
                })?;
                let mut map = BTreeMap::new();
                map.insert(first.to_string(), 0.0);
                map
            }
            Action::Choices(choices) => {
                // Distribution over each choice's first token; shared first
                // tokens pool their weight. No sampling involved.
                let mut weights: BTreeMap<String, f64> = BTreeMap::new();
                let mut total = 0.0;
                for (text, w) in choices {
                    let first = text.split_whitespace().next().ok_or_else(|| {
                        BackendError::Protocol("choice with empty text".into())
                    })?;
                    *weights.entry(first.to_string()).or_insert(0.0) += w;
                    total += w;
                }
                weights
                    .into_iter()
                    .map(|(t, w)| (t, (w / total).ln()))
                    .collect()
            }
        };
        self.ledger.record(count_tokens(prompt), 1);
        Ok(NextTokenDistribution::new(logprobs, prompt))
    }

    fn ledger(&self) -> &CostLedger {
        &self.ledger
    }
}

/// Answers every interview prompt with the respondent's own recorded value.
///
/// Built by rendering every (record, target) prompt of a script up front;
/// the prompt text is the lookup key, so the fixture must make prompts
/// unique (two records that agree on every context item but differ on the
/// target are indistinguishable to any prompt-driven backend).
#[derive(Debug)]
pub struct EchoBackend {
    name: String,
    answers: BTreeMap<String, String>,
    ledger: CostLedger,
}

/// Completion returned when the record has no value for the target; it
/// matches no answer option, so coding yields missing, as it should.
pub const ECHO_NO_ANSWER: &str = "[no answer]";

impl EchoBackend {
    pub fn build(
        dataset: &SurveyDataset,
        script: &InterviewScript,
        targets: &[String],
    ) -> Result<Self, BackendError> {
        let mut answers = BTreeMap::new();
        for record in dataset.records() {
            for target in targets {
                let item = script.item(target).ok_or_else(|| {
                    BackendError::Config(format!("echo: target {target:?} not in script"))
                })?;
                let prompt = render_interview(script, record, target)
                    .map_err(|e| BackendError::Config(format!("echo render: {e}")))?;
                let answer = item
                    .answer_surface(record)
                    .map_err(|e| BackendError::Config(format!("echo answer: {e}")))?
                    .unwrap_or_else(|| ECHO_NO_ANSWER.to_string());
                if let Some(previous) = answers.insert(prompt, answer.clone()) {
                    if previous != answer {
                        return Err(BackendError::Config(format!(
                            "echo: two records render the same {target:?} prompt with different answers"
                        )));
                    }
                }
            }
        }
        Ok(EchoBackend {
            name: "echo".to_string(),
            answers,
            ledger: CostLedger::new(0.0),
        })
    }
}

impl LmBackend for EchoBackend {
    fn name(&self) -> &str {
        &self.name
    }

    fn supports_logprobs(&self) -> bool {
        false
    }

    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, BackendError> {
        let answer = self
            .answers
            .get(&request.prompt)
            .ok_or_else(|| BackendError::Protocol("echo: prompt was never rendered".into()))?;
        let usage = Usage {
            prompt_tokens: count_tokens(&request.prompt),
            completion_tokens: count_tokens(answer),
        };
        self.ledger.record(usage.prompt_tokens, usage.completion_tokens);
        Ok(CompletionResponse {
            text: answer.clone(),
            token_logprobs: None,
            usage,
        })
    }

    fn next_token_logprobs(&self, _prompt: &str) -> Result<NextTokenDistribution, BackendError> {
        Err(BackendError::LogprobsUnsupported(self.name.clone()))
    }

    fn ledger(&self) -> &CostLedger {
        &self.ledger
    }
}
