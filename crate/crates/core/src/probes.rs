//! Next-token probability probes.
//!
//! A probe names the candidates of a head-to-head choice (say, the two
//! candidates of a presidential race) and, per candidate, the token
//! surfaces that count as naming them. Tokenizers split surfaces
//! unpredictably across case and leading spaces, so each surface expands
//! into its case and spacing variants. Collapsing a reported next-token
//! distribution sums each candidate's matching token mass in the log
//! domain; whatever matches no candidate is residual and is ignored, and
//! the candidate masses are then renormalized head-to-head.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::backend::{BackendError, LmBackend, NextTokenDistribution};
use crate::exec::parallel_map;
use crate::survey::SurveyDataset;
use crate::templating::{render_backstory, PersonaTemplate, TemplateError};

#[derive(Debug, thiserror::Error)]
pub enum ProbeError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("probe parse error: {0}")]
    Parse(String),
    #[error("probe validation: {0}")]
    Validation(String),
    #[error("empty next-token distribution")]
    EmptyDistribution,
    #[error("no candidate token received any probability mass")]
    NoSignal,
    #[error("render error: {0}")]
    Template(#[from] TemplateError),
    #[error("backend error: {0}")]
    Backend(#[from] BackendError),
}

/// One candidate: a label and the token surfaces that count for it.
#[derive(Debug, Clone, Deserialize, Serialize)]
pub struct TokenSet {
    pub label: String,
    pub surfaces: Vec<String>,
    /// Expand each surface into case and spacing variants. Off means the
    /// surfaces are matched verbatim.
    #[serde(default = "default_true")]
    pub auto_variants: bool,
}

fn default_true() -> bool {
    true
}

impl TokenSet {
    pub fn variants(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        for s in &self.surfaces {
            if self.auto_variants {
                out.extend(expand_variants(s));
            } else {
                out.insert(s.clone());
            }
        }
        out
    }
}

/// Case and spacing variants of one surface: {lower, UPPER, Title} crossed
/// with {bare, leading space, trailing space, both}, deduplicated.
pub fn expand_variants(surface: &str) -> BTreeSet<String> {
    let lower = surface.to_lowercase();
    let upper = surface.to_uppercase();
    let title = title_case(surface);
    let mut out = BTreeSet::new();
    for case in [lower, upper, title] {
        for spacing in [
            case.clone(),
            format!(" {case}"),
            format!("{case} "),
            format!(" {case} "),
        ] {
            out.insert(spacing);
        }
    }
    out
}

fn title_case(s: &str) -> String {
    let mut chars = s.chars();
    match chars.next() {
        None => String::new(),
        Some(first) => first.to_uppercase().chain(chars.flat_map(|c| c.to_lowercase())).collect(),
    }
}

/// The probe: a prompt stem plus two or more candidate token sets.
#[derive(Debug, Clone, Deserialize, Serialize)]
pub struct Probe {
    pub prompt_suffix: String,
    pub candidates: Vec<TokenSet>,
}

impl Probe {
    pub fn from_json_file(path: &Path) -> Result<Self, ProbeError> {
        let text = std::fs::read_to_string(path).map_err(|source| ProbeError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let probe: Probe = serde_json::from_str(&text)
            .map_err(|e| ProbeError::Parse(format!("{}: {}", path.display(), e)))?;
        probe.validate()?;
        Ok(probe)
    }

    /// Candidate labels must be unique and expanded variant sets disjoint:
    /// a token that could count for two candidates would make the collapse
    /// ambiguous.
    pub fn validate(&self) -> Result<(), ProbeError> {
        if self.candidates.len() < 2 {
            return Err(ProbeError::Validation(
                "a probe needs at least two candidates".into(),
            ));
        }
        let mut labels = BTreeSet::new();
        let mut seen: BTreeMap<String, String> = BTreeMap::new();
        for c in &self.candidates {
            if !labels.insert(c.label.clone()) {
                return Err(ProbeError::Validation(format!(
                    "duplicate candidate label {:?}",
                    c.label
                )));
            }
            if c.surfaces.is_empty() {
                return Err(ProbeError::Validation(format!(
                    "candidate {:?} has no surfaces",
                    c.label
                )));
            }
            for v in c.variants() {
                if let Some(other) = seen.insert(v.clone(), c.label.clone()) {
                    if other != c.label {
                        return Err(ProbeError::Validation(format!(
                            "variant {v:?} belongs to both {other:?} and {:?}",
                            c.label
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// variant -> candidate index, for collapsing.
    fn matcher(&self) -> BTreeMap<String, usize> {
        let mut map = BTreeMap::new();
        for (i, c) in self.candidates.iter().enumerate() {
            for v in c.variants() {
                map.insert(v, i);
            }
        }
        map
    }

    pub fn labels(&self) -> Vec<String> {
        self.candidates.iter().map(|c| c.label.clone()).collect()
    }
}

/// Per-candidate collapsed mass, kept in the log domain so that masses far
/// below f64's linear range still normalize correctly.
#[derive(Debug, Clone)]
pub struct CollapsedMasses {
    labels: Vec<String>,
    /// ln of the candidate's total mass; None when no token matched.
    log_masses: Vec<Option<f64>>,
    /// Probability mass outside every candidate's token set, in [0, 1].
    /// Diagnostic only; it never enters normalization.
    pub residual: f64,
}

impl CollapsedMasses {
    /// Collapsed mass per candidate as plain probabilities (exp of the
    /// log-sum); zero for candidates that matched nothing.
    pub fn masses(&self) -> BTreeMap<String, f64> {
        self.labels
            .iter()
            .zip(&self.log_masses)
            .map(|(l, m)| (l.clone(), m.map(f64::exp).unwrap_or(0.0)))
            .collect()
    }
}

// log(exp(a) + exp(b)) without leaving the log domain.
fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// Sums each candidate's matching token mass via log-sum-exp. Tokens
/// matching no candidate are residual. Errors on an empty distribution.
pub fn collapse(
    distribution: &NextTokenDistribution,
    probe: &Probe,
) -> Result<CollapsedMasses, ProbeError> {
    if distribution.logprobs.is_empty() {
        return Err(ProbeError::EmptyDistribution);
    }
    let matcher = probe.matcher();
    let mut log_masses: Vec<Option<f64>> = vec![None; probe.candidates.len()];
    for (token, &logprob) in &distribution.logprobs {
        if let Some(&i) = matcher.get(token.as_str()) {
            log_masses[i] = Some(match log_masses[i] {
                None => logprob,
                Some(acc) => log_add(acc, logprob),
            });
        }
    }
    let matched: f64 = log_masses
        .iter()
        .flatten()
        .map(|&m| m.exp())
        .sum();
    let residual = (1.0 - matched).clamp(0.0, 1.0);
    Ok(CollapsedMasses {
        labels: probe.labels(),
        log_masses,
        residual,
    })
}

/// Head-to-head probabilities after discarding the residual.
#[derive(Debug, Clone, Serialize)]
pub struct CandidateProbabilities {
    pub probs: BTreeMap<String, f64>,
    pub residual: f64,
}

impl CandidateProbabilities {
    pub fn get(&self, label: &str) -> Option<f64> {
        self.probs.get(label).copied()
    }
}

/// Rescales candidate masses to sum to one. Normalization happens in the
/// log domain, so candidates whose absolute mass underflows still divide
/// correctly. No matched mass at all is a typed no-signal error.
pub fn normalize(collapsed: &CollapsedMasses) -> Result<CandidateProbabilities, ProbeError> {
    let mut total = f64::NEG_INFINITY;
    for m in collapsed.log_masses.iter().flatten() {
        total = log_add(total, *m);
    }
    if total == f64::NEG_INFINITY {
        return Err(ProbeError::NoSignal);
    }
    let probs = collapsed
        .labels
        .iter()
        .zip(&collapsed.log_masses)
        .map(|(l, m)| {
            let p = match m {
                None => 0.0,
                Some(lm) => (lm - total).exp(),
            };
            (l.clone(), p)
        })
        .collect();
    Ok(CandidateProbabilities {
        probs,
        residual: collapsed.residual,
    })
}

/// A dichotomized head-to-head outcome. `First` is the probe's first
/// candidate (the one the probability refers to).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BinaryOutcome {
    First,
    Second,
    Tie,
}

pub const DICHOTOMY_THRESHOLD: f64 = 0.5;

/// Cuts a probability at 0.5. Exactly 0.5 is a tie, surfaced for the
/// caller to flag; it never silently becomes either side.
pub fn dichotomize(p_first: f64) -> BinaryOutcome {
    if p_first > DICHOTOMY_THRESHOLD {
        BinaryOutcome::First
    } else if p_first < DICHOTOMY_THRESHOLD {
        BinaryOutcome::Second
    } else {
        BinaryOutcome::Tie
    }
}

/// The full prompt for a vote probe: rendered backstory, single space, stem.
pub fn build_prompt(
    template: &PersonaTemplate,
    record: &crate::survey::SurveyRecord,
    probe: &Probe,
) -> Result<String, ProbeError> {
    let backstory = render_backstory(template, record)?;
    if backstory.is_empty() {
        Ok(probe.prompt_suffix.clone())
    } else if probe.prompt_suffix.is_empty() {
        Ok(backstory)
    } else {
        Ok(format!("{} {}", backstory, probe.prompt_suffix))
    }
}

/// Average candidate probabilities over a dataset.
#[derive(Debug, Clone, Serialize)]
pub struct MarginalEstimate {
    /// label -> mean normalized probability over records with signal.
    pub means: BTreeMap<String, f64>,
    pub n_signal: usize,
    pub n_no_signal: usize,
}

/// Renders backstory + stem per record, probes the backend, and averages
/// the normalized candidate probabilities. No-signal records are excluded
/// from the mean and counted.
pub fn estimate_marginal(
    dataset: &SurveyDataset,
    template: &PersonaTemplate,
    probe: &Probe,
    backend: &dyn LmBackend,
    parallelism: usize,
) -> Result<MarginalEstimate, ProbeError> {
    if dataset.is_empty() {
        return Err(ProbeError::Validation("empty dataset".into()));
    }
    probe.validate()?;
    let results = parallel_map(dataset.records(), parallelism, |_, record| {
        let prompt = build_prompt(template, record, probe)?;
        let dist = backend.next_token_logprobs(&prompt)?;
        let collapsed = collapse(&dist, probe)?;
        match normalize(&collapsed) {
            Ok(p) => Ok(Some(p)),
            Err(ProbeError::NoSignal) => Ok(None),
            Err(e) => Err(e),
        }
    });
    let mut sums: BTreeMap<String, f64> = probe.labels().into_iter().map(|l| (l, 0.0)).collect();
    let mut n_signal = 0usize;
    let mut n_no_signal = 0usize;
    for r in results {
        match r? {
            Some(p) => {
                n_signal += 1;
                for (label, value) in p.probs {
                    *sums.get_mut(&label).expect("label known") += value;
                }
            }
            None => n_no_signal += 1,
        }
    }
    let means = sums
        .into_iter()
        .map(|(l, s)| (l, if n_signal > 0 { s / n_signal as f64 } else { f64::NAN }))
        .collect();
    Ok(MarginalEstimate {
        means,
        n_signal,
        n_no_signal,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::MockBackend;
    use crate::survey::{Codebook, SurveyRecord, SurveyDataset};
    use crate::templating::{Fragment, PhraseMap};

    fn probe_2016() -> Probe {
        Probe {
            prompt_suffix: "In 2016, I voted for".into(),
            candidates: vec![
                TokenSet {
                    label: "Trump".into(),
                    surfaces: vec!["trump".into(), "donald".into(), "republican".into(), "conservative".into()],
                    auto_variants: true,
                },
                TokenSet {
                    label: "Clinton".into(),
                    surfaces: vec![
                        "clinton".into(), "hillary".into(), "rodham".into(), "senator".into(),
                        "democrat".into(), "democratic".into(), "liberal".into(),
                    ],
                    auto_variants: true,
                },
            ],
        }
    }

    fn dist(pairs: &[(&str, f64)]) -> NextTokenDistribution {
        NextTokenDistribution::new(
            pairs.iter().map(|(t, p)| (t.to_string(), p.ln())).collect(),
            "test prompt",
        )
    }

    #[test]
    fn expand_variants_single_letter() {
        // Two distinct case forms ("a", "A") times four spacings.
        assert_eq!(expand_variants("a").len(), 8);
    }

    #[test]
    fn expand_variants_word_enumeration() {
        let got = expand_variants("trump");
        let expected: BTreeSet<String> = [
            "trump", " trump", "trump ", " trump ",
            "TRUMP", " TRUMP", "TRUMP ", " TRUMP ",
            "Trump", " Trump", "Trump ", " Trump ",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        assert_eq!(got, expected);
    }

    #[test]
    fn auto_variants_off_matches_verbatim() {
        let set = TokenSet {
            label: "x".into(),
            surfaces: vec!["Trump".into()],
            auto_variants: false,
        };
        assert_eq!(set.variants().len(), 1);
        assert!(set.variants().contains("Trump"));
    }

    #[test]
    fn probe_validation_catches_overlap() {
        let bad = Probe {
            prompt_suffix: "s".into(),
            candidates: vec![
                TokenSet { label: "a".into(), surfaces: vec!["liberal".into()], auto_variants: true },
                TokenSet { label: "b".into(), surfaces: vec!["Liberal".into()], auto_variants: true },
            ],
        };
        assert!(bad.validate().is_err());
        assert!(probe_2016().validate().is_ok());
    }

    #[test]
    fn collapse_sums_matching_tokens() {
        let p = probe_2016();
        let c = collapse(&dist(&[("Trump", 0.2), (" trump", 0.1), ("Clinton", 0.15)]), &p).unwrap();
        let masses = c.masses();
        assert!((masses["Trump"] - 0.3).abs() < 1e-12);
        assert!((masses["Clinton"] - 0.15).abs() < 1e-12);
        assert!((c.residual - 0.55).abs() < 1e-12);
    }

    #[test]
    fn collapse_ignores_unmatched_tokens() {
        let p = probe_2016();
        let c = collapse(&dist(&[("the", 0.6), ("a", 0.4)]), &p).unwrap();
        let masses = c.masses();
        assert_eq!(masses["Trump"], 0.0);
        assert_eq!(masses["Clinton"], 0.0);
        assert!((c.residual - 1.0).abs() < 1e-12);
    }

    #[test]
    fn collapse_of_empty_distribution_errors() {
        let p = probe_2016();
        let empty = NextTokenDistribution::new(Default::default(), "x");
        assert!(matches!(collapse(&empty, &p), Err(ProbeError::EmptyDistribution)));
    }

    #[test]
    fn collapse_stays_in_log_domain() {
        // Two tokens at ln p = -700 apiece: the sum is 2e-700, far below
        // what a linear-domain sum could hold onto through normalization.
        let p = probe_2016();
        let d = NextTokenDistribution::new(
            [("Trump".to_string(), -700.0), (" trump".to_string(), -700.0), ("Clinton".to_string(), -700.3)]
                .into_iter()
                .collect(),
            "x",
        );
        let c = collapse(&d, &p).unwrap();
        let lm = c.log_masses[0].unwrap();
        assert!((lm - (2.0f64.ln() - 700.0)).abs() < 1e-9, "log mass {lm}");
        let norm = normalize(&c).unwrap();
        let total: f64 = norm.probs.values().sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert!(norm.probs["Trump"] > 0.5);
    }

    #[test]
    fn normalize_divides_by_total() {
        let p = probe_2016();
        let c = collapse(&dist(&[("Trump", 0.3), ("Clinton", 0.15)]), &p).unwrap();
        let n = normalize(&c).unwrap();
        assert!((n.probs["Trump"] - 2.0 / 3.0).abs() < 1e-12);
        assert!((n.probs["Clinton"] - 1.0 / 3.0).abs() < 1e-12);
        let total: f64 = n.probs.values().sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn normalize_no_signal_is_typed() {
        let p = probe_2016();
        let c = collapse(&dist(&[("the", 0.9)]), &p).unwrap();
        assert!(matches!(normalize(&c), Err(ProbeError::NoSignal)));
    }

    #[test]
    fn dichotomize_threshold() {
        assert_eq!(dichotomize(0.51), BinaryOutcome::First);
        assert_eq!(dichotomize(0.49), BinaryOutcome::Second);
        assert_eq!(dichotomize(0.5), BinaryOutcome::Tie);
    }

    fn trivial_dataset(n: usize) -> SurveyDataset {
        let codebook = Codebook::new(vec![]).unwrap();
        let records = (0..n).map(|i| SurveyRecord::new(format!("r{i}"))).collect();
        SurveyDataset::from_parts(codebook, records, "unit").unwrap()
    }

    #[test]
    fn estimate_marginal_constant_mock() {
        let rules = r#"[{"default": true, "distribution": {"Romney": 0.391, "Obama": 0.609}}]"#;
        let mock = MockBackend::from_rule_json("m", rules, 1, 0.0).unwrap();
        let probe = Probe {
            prompt_suffix: "In 2012, I voted for".into(),
            candidates: vec![
                TokenSet { label: "Romney".into(), surfaces: vec!["romney".into()], auto_variants: true },
                TokenSet { label: "Obama".into(), surfaces: vec!["obama".into()], auto_variants: true },
            ],
        };
        let template = PersonaTemplate { fragments: vec![], suffix: String::new() };
        let ds = trivial_dataset(25);
        let m = estimate_marginal(&ds, &template, &probe, &mock, 4).unwrap();
        assert!((m.means["Romney"] - 0.391).abs() < 1e-9);
        assert_eq!(m.n_signal, 25);
        assert_eq!(m.n_no_signal, 0);
    }

    #[test]
    fn estimate_marginal_counts_no_signal() {
        let rules = r#"[
            {"when_contains": "r0", "distribution": {"the": 0.99}},
            {"default": true, "distribution": {"Romney": 0.5, "Obama": 0.5}}
        ]"#;
        let mock = MockBackend::from_rule_json("m", rules, 1, 0.0).unwrap();
        let probe = Probe {
            prompt_suffix: "suffix".into(),
            candidates: vec![
                TokenSet { label: "Romney".into(), surfaces: vec!["romney".into()], auto_variants: true },
                TokenSet { label: "Obama".into(), surfaces: vec!["obama".into()], auto_variants: true },
            ],
        };
        // Backstory carries the respondent id so the mock can discriminate.
        let template = PersonaTemplate {
            fragments: vec![Fragment {
                id: "id".into(),
                variable: Some("tag".into()),
                text: "I am respondent {value}.".into(),
                map: PhraseMap::Passthrough,
            }],
            suffix: String::new(),
        };
        let codebook = Codebook::new(vec![crate::survey::VariableSpec {
            name: "tag".into(),
            kind: crate::survey::VarKind::FreeText,
            missing_codes: Default::default(),
        }])
        .unwrap();
        let records = (0..10)
            .map(|i| {
                let mut r = SurveyRecord::new(format!("r{i}"));
                r.set("tag", format!("r{i}"));
                r
            })
            .collect();
        let ds = SurveyDataset::from_parts(codebook, records, "unit").unwrap();
        let m = estimate_marginal(&ds, &template, &probe, &mock, 2).unwrap();
        assert_eq!(m.n_no_signal, 1);
        assert_eq!(m.n_signal, 9);
        assert!((m.means["Romney"] - 0.5).abs() < 1e-9);
    }

    #[test]
    fn build_prompt_appends_stem() {
        let template = PersonaTemplate {
            fragments: vec![],
            suffix: "I am a voter.".into(),
        };
        let r = SurveyRecord::new("r1");
        let p = probe_2016();
        assert_eq!(
            build_prompt(&template, &r, &p).unwrap(),
            "I am a voter. In 2016, I voted for"
        );
    }
}
