//! Rendering coded records into first-person conditioning text.
//!
//! A persona template is an ordered list of fragments. Each fragment binds a
//! codebook variable and maps its coded value to a phrase, either through an
//! explicit code-to-phrase map, through numeric bins (age, income), or by
//! passing the raw value through. Fragments whose variable is missing are
//! omitted entirely; the rendered fragments are joined with single spaces
//! and the template suffix comes last.
//!
//! An interview script renders the same record as a transcript of
//! question/answer turns, with one target item left dangling after the
//! interviewer's question so the model supplies the answer.

use std::collections::BTreeSet;
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::survey::{Codebook, SurveyRecord, VarKind};

#[derive(Debug, thiserror::Error)]
pub enum TemplateError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("template parse error: {0}")]
    Parse(String),
    #[error("fragment {fragment}: no phrase for code {code:?}")]
    MissingPhrase { fragment: String, code: String },
    #[error("fragment {fragment}: value {value} falls in no bin")]
    NoBin { fragment: String, value: i64 },
    #[error("fragment {fragment}: value {value:?} is not an integer")]
    NotInteger { fragment: String, value: String },
    #[error("template validation: {0}")]
    Validation(String),
    #[error("interview item for {variable}: answer code {code:?} has no surface")]
    NoSurface { variable: String, code: String },
    #[error("target variable {0:?} is not an item of the interview script")]
    UnknownTarget(String),
    #[error("ablation: unknown fragment id {0:?}")]
    UnknownFragment(String),
}

/// One inclusive interval mapped to a phrase.
#[derive(Debug, Clone, Deserialize, PartialEq)]
pub struct Bin {
    pub min: i64,
    pub max: i64,
    pub phrase: String,
}

/// Ordered, non-overlapping inclusive bins.
#[derive(Debug, Clone, PartialEq)]
pub struct BinMap {
    bins: Vec<Bin>,
}

impl BinMap {
    pub fn new(bins: Vec<Bin>) -> Result<Self, TemplateError> {
        if bins.is_empty() {
            return Err(TemplateError::Validation("empty bin map".into()));
        }
        for b in &bins {
            if b.min > b.max {
                return Err(TemplateError::Validation(format!(
                    "bin {:?} has min > max",
                    b.phrase
                )));
            }
        }
        for pair in bins.windows(2) {
            if pair[1].min <= pair[0].max {
                return Err(TemplateError::Validation(format!(
                    "bins {:?} and {:?} overlap or are out of order",
                    pair[0].phrase, pair[1].phrase
                )));
            }
        }
        Ok(BinMap { bins })
    }

    pub fn bins(&self) -> &[Bin] {
        &self.bins
    }

    /// True when the bins leave no gap over `lo..=hi`.
    pub fn covers(&self, lo: i64, hi: i64) -> bool {
        if self.bins[0].min > lo || self.bins[self.bins.len() - 1].max < hi {
            return false;
        }
        self.bins
            .windows(2)
            .all(|pair| pair[1].min == pair[0].max + 1)
    }
}

/// Maps an integer to the phrase of the bin containing it.
pub fn bin_value(bins: &BinMap, value: i64) -> Option<&str> {
    bins.bins
        .iter()
        .find(|b| value >= b.min && value <= b.max)
        .map(|b| b.phrase.as_str())
}

/// How a fragment turns a coded value into a phrase.
#[derive(Debug, Clone, PartialEq)]
pub enum PhraseMap {
    Categorical(IndexMap<String, String>),
    Bins(BinMap),
    Passthrough,
}

/// One sentence of a backstory, bound to at most one variable.
///
/// `text` contains exactly one `{value}` placeholder, or none for fixed
/// text. A fragment with a variable is omitted when the record is missing
/// that variable.
#[derive(Debug, Clone, PartialEq)]
pub struct Fragment {
    pub id: String,
    pub variable: Option<String>,
    pub text: String,
    pub map: PhraseMap,
}

pub const PLACEHOLDER: &str = "{value}";

impl Fragment {
    fn placeholder_count(&self) -> usize {
        self.text.matches(PLACEHOLDER).count()
    }

    /// Renders this fragment for a record; `None` when the bound variable is
    /// missing.
    pub fn render(&self, record: &SurveyRecord) -> Result<Option<String>, TemplateError> {
        let variable = match &self.variable {
            None => return Ok(Some(self.text.clone())),
            Some(v) => v,
        };
        let raw = match record.get(variable) {
            None => return Ok(None),
            Some(r) => r,
        };
        if self.placeholder_count() == 0 {
            return Ok(Some(self.text.clone()));
        }
        let phrase = match &self.map {
            PhraseMap::Categorical(map) => map
                .get(raw)
                .cloned()
                .ok_or_else(|| TemplateError::MissingPhrase {
                    fragment: self.id.clone(),
                    code: raw.to_string(),
                })?,
            PhraseMap::Bins(bins) => {
                let value = raw.parse::<i64>().map_err(|_| TemplateError::NotInteger {
                    fragment: self.id.clone(),
                    value: raw.to_string(),
                })?;
                bin_value(bins, value)
                    .ok_or(TemplateError::NoBin {
                        fragment: self.id.clone(),
                        value,
                    })?
                    .to_string()
            }
            PhraseMap::Passthrough => raw.to_string(),
        };
        Ok(Some(self.text.replace(PLACEHOLDER, &phrase)))
    }
}

/// Ordered fragments plus a suffix that closes the conditioning text.
#[derive(Debug, Clone, PartialEq)]
pub struct PersonaTemplate {
    pub fragments: Vec<Fragment>,
    pub suffix: String,
}

#[derive(Debug, Deserialize)]
struct RawFragment {
    id: String,
    #[serde(default)]
    variable: Option<String>,
    text: String,
    #[serde(default)]
    map: Option<IndexMap<String, String>>,
    #[serde(default)]
    bins: Option<Vec<Bin>>,
    #[serde(default)]
    passthrough: bool,
}

#[derive(Debug, Deserialize)]
struct RawTemplate {
    fragments: Vec<RawFragment>,
    #[serde(default)]
    suffix: String,
}

impl PersonaTemplate {
    pub fn from_json_file(path: &Path) -> Result<Self, TemplateError> {
        let text = std::fs::read_to_string(path).map_err(|source| TemplateError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let raw: RawTemplate = serde_json::from_str(&text)
            .map_err(|e| TemplateError::Parse(format!("{}: {}", path.display(), e)))?;
        let mut fragments = Vec::new();
        let mut ids = BTreeSet::new();
        for f in raw.fragments {
            if !ids.insert(f.id.clone()) {
                return Err(TemplateError::Validation(format!(
                    "duplicate fragment id {:?}",
                    f.id
                )));
            }
            let map = match (f.map, f.bins, f.passthrough) {
                (Some(m), None, false) => PhraseMap::Categorical(m),
                (None, Some(b), false) => PhraseMap::Bins(BinMap::new(b)?),
                (None, None, true) => PhraseMap::Passthrough,
                (None, None, false) => PhraseMap::Passthrough,
                _ => {
                    return Err(TemplateError::Validation(format!(
                        "fragment {:?} declares more than one of map/bins/passthrough",
                        f.id
                    )))
                }
            };
            let fragment = Fragment {
                id: f.id,
                variable: f.variable,
                text: f.text,
                map,
            };
            let n = fragment.placeholder_count();
            if n > 1 {
                return Err(TemplateError::Validation(format!(
                    "fragment {:?} has {} placeholders, at most one allowed",
                    fragment.id, n
                )));
            }
            if n == 1 && fragment.variable.is_none() {
                return Err(TemplateError::Validation(format!(
                    "fragment {:?} has a placeholder but no variable",
                    fragment.id
                )));
            }
            fragments.push(fragment);
        }
        Ok(PersonaTemplate {
            fragments,
            suffix: raw.suffix,
        })
    }

    /// Checks every fragment against the codebook: bound variables exist,
    /// categorical maps cover every declared level, and bins cover the
    /// declared integer range.
    pub fn validate(&self, codebook: &Codebook) -> Result<(), TemplateError> {
        for f in &self.fragments {
            let variable = match &f.variable {
                None => continue,
                Some(v) => v,
            };
            let spec = codebook
                .get(variable)
                .ok_or_else(|| TemplateError::Validation(format!(
                    "fragment {:?} binds unknown variable {:?}",
                    f.id, variable
                )))?;
            match (&f.map, &spec.kind) {
                (PhraseMap::Categorical(map), VarKind::Categorical { levels }) => {
                    for code in levels.keys() {
                        if !map.contains_key(code) {
                            return Err(TemplateError::Validation(format!(
                                "fragment {:?} has no phrase for level {:?} of {}",
                                f.id, code, variable
                            )));
                        }
                    }
                }
                (PhraseMap::Bins(bins), VarKind::Integer { min, max }) => {
                    if !bins.covers(*min, *max) {
                        return Err(TemplateError::Validation(format!(
                            "fragment {:?} bins do not cover {}..={} of {}",
                            f.id, min, max, variable
                        )));
                    }
                }
                (PhraseMap::Passthrough, _) => {}
                (PhraseMap::Categorical(_), _) => {
                    return Err(TemplateError::Validation(format!(
                        "fragment {:?} maps codes but {} is not categorical",
                        f.id, variable
                    )));
                }
                (PhraseMap::Bins(_), _) => {
                    return Err(TemplateError::Validation(format!(
                        "fragment {:?} bins values but {} is not an integer variable",
                        f.id, variable
                    )));
                }
            }
        }
        Ok(())
    }

    /// Template with a subset of fragments, same order and suffix.
    pub fn with_fragments(&self, keep: &BTreeSet<String>) -> PersonaTemplate {
        PersonaTemplate {
            fragments: self
                .fragments
                .iter()
                .filter(|f| keep.contains(&f.id))
                .cloned()
                .collect(),
            suffix: self.suffix.clone(),
        }
    }

    pub fn fragment_ids(&self) -> Vec<String> {
        self.fragments.iter().map(|f| f.id.clone()).collect()
    }
}

/// Renders the backstory for one record: present fragments in template
/// order, single spaces between them, suffix last. With every variable
/// missing this is just the suffix.
pub fn render_backstory(
    template: &PersonaTemplate,
    record: &SurveyRecord,
) -> Result<String, TemplateError> {
    let mut parts = Vec::new();
    for f in &template.fragments {
        if let Some(text) = f.render(record)? {
            parts.push(text);
        }
    }
    if !template.suffix.is_empty() {
        parts.push(template.suffix.clone());
    }
    Ok(parts.join(" "))
}

/// One interview question bound to a codebook variable.
///
/// Closed items carry answer options (surface string per level code); open
/// items (no options) echo the raw record value, e.g. an age in years.
/// `conditional_on` suppresses the item as a context turn when the guard
/// variable's value is not in the accepted set.
#[derive(Debug, Clone, Deserialize)]
pub struct InterviewItem {
    pub variable: String,
    pub question: String,
    #[serde(default)]
    pub options: Option<Vec<AnswerOption>>,
    #[serde(default)]
    pub conditional_on: Option<Guard>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct AnswerOption {
    pub surface: String,
    pub code: String,
}

#[derive(Debug, Clone, Deserialize)]
pub struct Guard {
    pub variable: String,
    pub levels: BTreeSet<String>,
}

impl Guard {
    pub fn passes(&self, record: &SurveyRecord) -> bool {
        record
            .get(&self.variable)
            .map(|v| self.levels.contains(v))
            .unwrap_or(false)
    }
}

impl InterviewItem {
    /// Surface string for the record's coded answer; `None` when missing.
    pub fn answer_surface(&self, record: &SurveyRecord) -> Result<Option<String>, TemplateError> {
        let code = match record.get(&self.variable) {
            None => return Ok(None),
            Some(c) => c,
        };
        match &self.options {
            None => Ok(Some(code.to_string())),
            Some(options) => options
                .iter()
                .find(|o| o.code == code)
                .map(|o| Some(o.surface.clone()))
                .ok_or_else(|| TemplateError::NoSurface {
                    variable: self.variable.clone(),
                    code: code.to_string(),
                }),
        }
    }
}

/// An ordered interview with speaker labels.
#[derive(Debug, Clone, Deserialize)]
pub struct InterviewScript {
    #[serde(default = "default_interviewer")]
    pub interviewer_label: String,
    #[serde(default = "default_respondent")]
    pub respondent_label: String,
    pub items: Vec<InterviewItem>,
}

fn default_interviewer() -> String {
    "Interviewer:".to_string()
}

fn default_respondent() -> String {
    "Me:".to_string()
}

impl InterviewScript {
    pub fn from_json_file(path: &Path) -> Result<Self, TemplateError> {
        let text = std::fs::read_to_string(path).map_err(|source| TemplateError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let script: InterviewScript = serde_json::from_str(&text)
            .map_err(|e| TemplateError::Parse(format!("{}: {}", path.display(), e)))?;
        script.validate_internal()?;
        Ok(script)
    }

    fn validate_internal(&self) -> Result<(), TemplateError> {
        if self.items.is_empty() {
            return Err(TemplateError::Validation("interview has no items".into()));
        }
        let mut vars = BTreeSet::new();
        for item in &self.items {
            if !vars.insert(item.variable.clone()) {
                return Err(TemplateError::Validation(format!(
                    "duplicate interview item for {:?}",
                    item.variable
                )));
            }
            if let Some(options) = &item.options {
                if options.len() < 2 {
                    return Err(TemplateError::Validation(format!(
                        "item {:?} declares fewer than two options",
                        item.variable
                    )));
                }
                let mut surfaces = BTreeSet::new();
                for o in options {
                    if !surfaces.insert(o.surface.to_lowercase()) {
                        return Err(TemplateError::Validation(format!(
                            "item {:?} repeats surface {:?} after lower-casing",
                            item.variable, o.surface
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn validate(&self, codebook: &Codebook) -> Result<(), TemplateError> {
        self.validate_internal()?;
        for item in &self.items {
            let spec = codebook.get(&item.variable).ok_or_else(|| {
                TemplateError::Validation(format!(
                    "interview item binds unknown variable {:?}",
                    item.variable
                ))
            })?;
            match (&item.options, &spec.kind) {
                (Some(options), VarKind::Categorical { levels }) => {
                    for o in options {
                        if !levels.contains_key(&o.code) {
                            return Err(TemplateError::Validation(format!(
                                "item {:?} option {:?} maps to undeclared level {:?}",
                                item.variable, o.surface, o.code
                            )));
                        }
                    }
                }
                (None, VarKind::Integer { .. }) => {}
                (None, _) => {
                    return Err(TemplateError::Validation(format!(
                        "open item {:?} requires an integer variable",
                        item.variable
                    )));
                }
                (Some(_), _) => {
                    return Err(TemplateError::Validation(format!(
                        "item {:?} has options but {} is not categorical",
                        item.variable, item.variable
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn item(&self, variable: &str) -> Option<&InterviewItem> {
        self.items.iter().find(|i| i.variable == variable)
    }

    pub fn target_variables(&self) -> Vec<String> {
        self.items.iter().map(|i| i.variable.clone()).collect()
    }
}

/// Renders an interview transcript with `target` asked last and left
/// unanswered.
///
/// Non-target items render as question/answer turns in script order. Items
/// whose answer is missing, or whose guard fails, are omitted from the
/// context. The target's question always renders, followed by a bare
/// respondent label; the record's value for the target never appears.
pub fn render_interview(
    script: &InterviewScript,
    record: &SurveyRecord,
    target: &str,
) -> Result<String, TemplateError> {
    let target_item = script
        .item(target)
        .ok_or_else(|| TemplateError::UnknownTarget(target.to_string()))?;
    let mut turns = Vec::new();
    for item in &script.items {
        if item.variable == target {
            continue;
        }
        if let Some(guard) = &item.conditional_on {
            if !guard.passes(record) {
                continue;
            }
        }
        let answer = match item.answer_surface(record)? {
            None => continue,
            Some(a) => a,
        };
        turns.push(format!(
            "{} {}\n{} {}",
            script.interviewer_label, item.question, script.respondent_label, answer
        ));
    }
    turns.push(format!(
        "{} {}\n{}",
        script.interviewer_label, target_item.question, script.respondent_label
    ));
    Ok(turns.join("\n"))
}

/// Which backstory reductions an ablation run explores.
#[derive(Debug, Clone, Deserialize, Serialize)]
pub struct AblationPolicy {
    #[serde(default = "yes")]
    pub full: bool,
    #[serde(default = "yes")]
    pub leave_one_out: bool,
    #[serde(default = "yes")]
    pub leave_two_out: bool,
    #[serde(default = "yes")]
    pub singletons: bool,
    #[serde(default = "yes")]
    pub empty: bool,
    /// When set, restricts leave-two-out to these id pairs.
    #[serde(default)]
    pub explicit_pairs: Option<Vec<(String, String)>>,
}

fn yes() -> bool {
    true
}

impl Default for AblationPolicy {
    fn default() -> Self {
        AblationPolicy {
            full: true,
            leave_one_out: true,
            leave_two_out: true,
            singletons: true,
            empty: true,
            explicit_pairs: None,
        }
    }
}

/// One ablated variant: a label plus the reduced template.
#[derive(Debug, Clone)]
pub struct AblationVariant {
    pub label: String,
    pub template: PersonaTemplate,
}

/// Enumerates ablated templates per the policy, deterministically ordered:
/// full, leave-one-out in fragment order, leave-two-out in pair order,
/// singletons in fragment order, then the empty backstory.
pub fn ablation_variants(
    template: &PersonaTemplate,
    policy: &AblationPolicy,
) -> Result<Vec<AblationVariant>, TemplateError> {
    let ids = template.fragment_ids();
    let id_set: BTreeSet<String> = ids.iter().cloned().collect();
    if let Some(pairs) = &policy.explicit_pairs {
        for (a, b) in pairs {
            for id in [a, b] {
                if !id_set.contains(id) {
                    return Err(TemplateError::UnknownFragment(id.clone()));
                }
            }
            if a == b {
                return Err(TemplateError::Validation(format!(
                    "explicit pair repeats fragment {:?}",
                    a
                )));
            }
        }
    }
    let mut variants = Vec::new();
    let mut push = |label: String, keep: BTreeSet<String>| {
        variants.push(AblationVariant {
            label,
            template: template.with_fragments(&keep),
        });
    };
    if policy.full {
        push("full".to_string(), id_set.clone());
    }
    if policy.leave_one_out {
        for id in &ids {
            let mut keep = id_set.clone();
            keep.remove(id);
            push(format!("no_{id}"), keep);
        }
    }
    if policy.leave_two_out {
        let pairs: Vec<(String, String)> = match &policy.explicit_pairs {
            Some(p) => p.clone(),
            None => {
                let mut all = Vec::new();
                for i in 0..ids.len() {
                    for j in (i + 1)..ids.len() {
                        all.push((ids[i].clone(), ids[j].clone()));
                    }
                }
                all
            }
        };
        for (a, b) in pairs {
            let mut keep = id_set.clone();
            keep.remove(&a);
            keep.remove(&b);
            push(format!("no_{a}_no_{b}"), keep);
        }
    }
    if policy.singletons {
        for id in &ids {
            push(format!("only_{id}"), [id.clone()].into_iter().collect());
        }
    }
    if policy.empty {
        push("empty".to_string(), BTreeSet::new());
    }
    let mut seen = BTreeSet::new();
    for v in &variants {
        if !seen.insert(v.label.clone()) {
            return Err(TemplateError::Validation(format!(
                "duplicate ablation label {:?}",
                v.label
            )));
        }
    }
    Ok(variants)
}
