//! Study orchestration: configs in, report files and a manifest out.
//!
//! Each runner loads its inputs through [`ExperimentConfig`], executes
//! record-major with bounded parallelism, writes delimiter-separated
//! reports plus JSON into the output directory, and finishes with an
//! atomically written [`RunManifest`]. Outputs are byte-stable for a
//! fixed seed; the manifest is the one file that is not, since it
//! carries wall-clock timestamps.

mod ablation;
mod evalplan;
mod interview;
mod vote;
mod wordlist;

pub use ablation::{run_ablation, AblationOutcome, AblationRow};
pub use evalplan::{
    build_evaluation_plan, check_plan_feasibility, EvalPlanParams, EvaluationPlan, PlanCoverage,
};
pub use interview::{
    run_interview_study, run_temperature_sweep, InterviewOutcome, InterviewRun, SweepOutcome,
    TemperatureCell,
};
pub use vote::{run_vote_study, BackendVoteOutcome, ProbeFidelity, VoteStudyOutcome};
pub use wordlist::{run_wordlist_study, WordlistOutcome};

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backend::{
    build_backend, BackendDescriptor, BackendError, CacheStore, CachedBackend, LedgerSnapshot,
    LmBackend,
};
use crate::extraction::ExtractionError;
use crate::probes::{Probe, ProbeError};
use crate::stats::StatError;
use crate::survey::{
    load_dataset, LoadOptions, SubgroupFilter, SurveyDataset, SurveyError,
};
use crate::templating::{
    AblationPolicy, InterviewScript, PersonaTemplate, TemplateError,
};

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Survey(#[from] SurveyError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Probe(#[from] ProbeError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Stat(#[from] StatError),
    #[error(transparent)]
    Extraction(#[from] ExtractionError),
    #[error("infeasible evaluation plan: {reason}")]
    InfeasiblePlan {
        reason: String,
        /// Smallest rater count that would make these parameters work,
        /// when one exists.
        minimal_raters: Option<usize>,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Which study a config drives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StudyKind {
    Wordlist,
    Vote,
    Interview,
    Ablation,
    TemperatureSweep,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub table: PathBuf,
    pub codebook: PathBuf,
    #[serde(default)]
    pub delimiter: Option<char>,
    #[serde(default)]
    pub provenance: Option<String>,
}

/// One vote probe plus the mapping from the human vote variable onto the
/// probe's two candidates. Levels outside both sets (third parties,
/// refusals) leave the human vote undecided for that record.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub label: String,
    pub path: PathBuf,
    pub human_variable: String,
    /// Human codes counting as a vote for the probe's first candidate.
    pub first_levels: std::collections::BTreeSet<String>,
    /// Human codes counting as a vote for the second candidate.
    pub second_levels: std::collections::BTreeSet<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PartyTarget {
    /// Short key used in output files.
    pub label: String,
    /// Text substituted into the prompt.
    pub surface: String,
}

fn default_parties() -> Vec<PartyTarget> {
    vec![
        PartyTarget {
            label: "republican".into(),
            surface: "Republicans".into(),
        },
        PartyTarget {
            label: "democrat".into(),
            surface: "Democrats".into(),
        },
    ]
}

fn default_wordlist_tokens() -> u32 {
    128
}

fn default_interview_tokens() -> u32 {
    5
}

fn default_temperature() -> f64 {
    0.7
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WordlistConfig {
    #[serde(default = "default_parties")]
    pub parties: Vec<PartyTarget>,
    #[serde(default = "default_wordlist_tokens")]
    pub max_tokens: u32,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    /// Variable whose level splits the frequency groups (e.g. the
    /// respondent's own ideology). Absent means one group per party.
    #[serde(default)]
    pub group_by: Option<String>,
}

impl Default for WordlistConfig {
    fn default() -> Self {
        WordlistConfig {
            parties: default_parties(),
            max_tokens: default_wordlist_tokens(),
            temperature: default_temperature(),
            group_by: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InterviewConfig {
    /// Variables to elicit; default is every script item.
    #[serde(default)]
    pub targets: Option<Vec<String>>,
    #[serde(default = "default_interview_tokens")]
    pub max_tokens: u32,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    /// Variables entering the association matrices; default is `targets`.
    #[serde(default)]
    pub association_variables: Option<Vec<String>>,
}

impl Default for InterviewConfig {
    fn default() -> Self {
        InterviewConfig {
            targets: None,
            max_tokens: default_interview_tokens(),
            temperature: default_temperature(),
            association_variables: None,
        }
    }
}

/// Token-count assumptions for pre-run cost estimates.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CostConfig {
    pub avg_prompt_tokens: f64,
    pub completion_tokens: u64,
}

fn default_parallelism() -> usize {
    4
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub study: StudyKind,
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub template: Option<PathBuf>,
    #[serde(default)]
    pub script: Option<PathBuf>,
    #[serde(default)]
    pub probes: Vec<ProbeConfig>,
    #[serde(default)]
    pub subgroups: Option<PathBuf>,
    pub backends: Vec<BackendDescriptor>,
    #[serde(default)]
    pub wordlist: Option<WordlistConfig>,
    #[serde(default)]
    pub interview: Option<InterviewConfig>,
    #[serde(default)]
    pub ablation: Option<AblationPolicy>,
    #[serde(default)]
    pub cost: Option<CostConfig>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    /// Response cache directory; one store per backend inside it.
    #[serde(default)]
    pub cache: Option<PathBuf>,
    /// Default output directory, overridable on the command line.
    #[serde(default)]
    pub out: Option<PathBuf>,
}

impl ExperimentConfig {
    /// Reads a config and resolves every relative path against the
    /// config file's own directory.
    pub fn from_json_file(path: &Path) -> Result<Self, ExperimentError> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        let mut config: ExperimentConfig = serde_json::from_str(&text)
            .map_err(|e| ExperimentError::Config(format!("{}: {}", path.display(), e)))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        config.resolve_paths(base);
        if config.backends.is_empty() {
            return Err(ExperimentError::Config(
                "config declares no backends".into(),
            ));
        }
        if config.parallelism == 0 {
            return Err(ExperimentError::Config("parallelism must be positive".into()));
        }
        Ok(config)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.dataset.table);
        fix(&mut self.dataset.codebook);
        if let Some(p) = &mut self.template {
            fix(p);
        }
        if let Some(p) = &mut self.script {
            fix(p);
        }
        for probe in &mut self.probes {
            fix(&mut probe.path);
        }
        if let Some(p) = &mut self.subgroups {
            fix(p);
        }
        for b in &mut self.backends {
            if let Some(p) = &mut b.rules {
                fix(p);
            }
            if let Some(p) = &mut b.store {
                fix(p);
            }
        }
        if let Some(p) = &mut self.cache {
            fix(p);
        }
        if let Some(p) = &mut self.out {
            fix(p);
        }
    }

    pub fn load_dataset(&self) -> Result<SurveyDataset, ExperimentError> {
        let options = LoadOptions {
            delimiter: self.dataset.delimiter.map(|c| c as u8).unwrap_or(b','),
            provenance: self
                .dataset
                .provenance
                .clone()
                .unwrap_or_else(|| self.dataset.table.display().to_string()),
        };
        Ok(load_dataset(
            &self.dataset.table,
            &self.dataset.codebook,
            &options,
        )?)
    }

    pub fn load_template(&self) -> Result<PersonaTemplate, ExperimentError> {
        let path = self.template.as_ref().ok_or_else(|| {
            ExperimentError::Config("this study needs a persona template".into())
        })?;
        Ok(PersonaTemplate::from_json_file(path)?)
    }

    pub fn load_script(&self) -> Result<InterviewScript, ExperimentError> {
        let path = self
            .script
            .as_ref()
            .ok_or_else(|| ExperimentError::Config("this study needs an interview script".into()))?;
        Ok(InterviewScript::from_json_file(path)?)
    }

    /// Subgroup filters, always starting with the unfiltered sample.
    pub fn load_subgroups(&self) -> Result<Vec<SubgroupFilter>, ExperimentError> {
        let mut filters = vec![SubgroupFilter::whole_sample("Whole sample")];
        if let Some(path) = &self.subgroups {
            filters.extend(SubgroupFilter::list_from_json_file(path)?);
        }
        Ok(filters)
    }

    pub fn load_probe(&self, cfg: &ProbeConfig) -> Result<Probe, ExperimentError> {
        Ok(Probe::from_json_file(&cfg.path)?)
    }
}

/// Run-time knobs that arrive from the command line rather than the
/// config file.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    /// Cache directory; overrides the config's when set.
    pub cache_dir: Option<PathBuf>,
    /// Count exact-0.5 ties as votes for the first candidate instead of
    /// excluding them.
    pub tie_to_first: bool,
    pub config_path: String,
    /// Flag overrides applied on top of the config, echoed verbatim into
    /// the manifest.
    pub overrides: BTreeMap<String, String>,
}

/// A backend plus optional response cache, with the cache statistics
/// still reachable after the run.
pub enum StudyBackend {
    Plain(Box<dyn LmBackend>),
    Cached(CachedBackend),
}

impl StudyBackend {
    pub fn as_lm(&self) -> &dyn LmBackend {
        match self {
            StudyBackend::Plain(b) => b.as_ref(),
            StudyBackend::Cached(b) => b,
        }
    }

    fn cache_stats(&self) -> Option<(u64, u64)> {
        match self {
            StudyBackend::Plain(_) => None,
            StudyBackend::Cached(b) => Some((b.hits(), b.fetches())),
        }
    }
}

/// Builds a study backend, wrapping it in a response cache when a cache
/// directory is configured (one JSONL store per backend name).
pub fn build_study_backend(
    descriptor: &BackendDescriptor,
    seed: u64,
    cache_dir: Option<&Path>,
) -> Result<StudyBackend, ExperimentError> {
    let inner = build_backend(descriptor, seed, Path::new("."))?;
    match cache_dir {
        None => Ok(StudyBackend::Plain(inner)),
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(io_err(dir))?;
            let store_path = dir.join(format!("{}.jsonl", sanitize_name(&descriptor.name)));
            let store = CacheStore::open(&store_path)?;
            Ok(StudyBackend::Cached(CachedBackend::new(inner, store)))
        }
    }
}

/// File-system-safe form of a backend name.
pub fn sanitize_name(name: &str) -> String {
    let cleaned: String = name
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c.to_ascii_lowercase()
            } else {
                '_'
            }
        })
        .collect();
    if cleaned.is_empty() {
        "backend".into()
    } else {
        cleaned
    }
}

/// Per-backend usage totals for the manifest.
#[derive(Debug, Clone, Serialize)]
pub struct BackendRunStats {
    pub name: String,
    pub params_label: Option<String>,
    pub ledger: LedgerSnapshot,
    pub cache_hits: Option<u64>,
    pub cache_fetches: Option<u64>,
}

pub(crate) fn backend_stats(
    descriptor: &BackendDescriptor,
    backend: &StudyBackend,
) -> BackendRunStats {
    let (hits, fetches) = match backend.cache_stats() {
        Some((h, f)) => (Some(h), Some(f)),
        None => (None, None),
    };
    BackendRunStats {
        name: backend.as_lm().name().to_string(),
        params_label: descriptor.params_label.clone(),
        ledger: backend.as_lm().ledger().snapshot(),
        cache_hits: hits,
        cache_fetches: fetches,
    }
}

/// Everything needed to audit or reproduce a run. Written last, via
/// temp-file-plus-rename so a crash never leaves a half manifest.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub study: String,
    pub started_utc: String,
    pub finished_utc: String,
    pub seed: u64,
    pub parallelism: usize,
    pub config_path: String,
    pub config: serde_json::Value,
    pub overrides: BTreeMap<String, String>,
    pub backends: Vec<BackendRunStats>,
    pub counts: BTreeMap<String, u64>,
    /// Files this run wrote, relative to the output directory.
    pub outputs: Vec<String>,
    pub notes: Vec<String>,
}

pub(crate) fn now_utc() -> String {
    time::OffsetDateTime::now_utc()
        .format(&time::format_description::well_known::Rfc3339)
        .expect("rfc3339 formatting cannot fail for a real timestamp")
}

impl RunManifest {
    pub(crate) fn begin(
        study: &str,
        config: &ExperimentConfig,
        options: &RunOptions,
    ) -> Result<Self, ExperimentError> {
        Ok(RunManifest {
            study: study.to_string(),
            started_utc: now_utc(),
            finished_utc: String::new(),
            seed: config.seed,
            parallelism: config.parallelism,
            config_path: options.config_path.clone(),
            config: serde_json::to_value(config)
                .map_err(|e| ExperimentError::Config(format!("config echo: {e}")))?,
            overrides: options.overrides.clone(),
            backends: Vec::new(),
            counts: BTreeMap::new(),
            outputs: Vec::new(),
            notes: Vec::new(),
        })
    }

    pub(crate) fn bump(&mut self, key: &str, by: u64) {
        *self.counts.entry(key.to_string()).or_insert(0) += by;
    }

    /// Stamps the end time and writes atomically to `dir/manifest.json`.
    pub(crate) fn finish(mut self, dir: &Path) -> Result<PathBuf, ExperimentError> {
        self.finished_utc = now_utc();
        let path = dir.join("manifest.json");
        let tmp = dir.join("manifest.json.tmp");
        let body = serde_json::to_string_pretty(&self)
            .map_err(|e| ExperimentError::Config(format!("manifest serialization: {e}")))?;
        std::fs::write(&tmp, body).map_err(io_err(&tmp))?;
        std::fs::rename(&tmp, &path).map_err(io_err(&path))?;
        Ok(path)
    }
}

/// Writes a text report into the run directory and records it in the
/// manifest's output list.
pub(crate) fn write_report(
    dir: &Path,
    name: &str,
    body: &str,
    manifest: &mut RunManifest,
) -> Result<PathBuf, ExperimentError> {
    let path = dir.join(name);
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    std::fs::write(&path, body).map_err(io_err(&path))?;
    manifest.outputs.push(name.to_string());
    Ok(path)
}

/// Maps a record's human vote code onto the probe's candidates.
pub(crate) fn human_vote(
    record: &crate::survey::SurveyRecord,
    probe_cfg: &ProbeConfig,
) -> Option<bool> {
    let code = record.get(&probe_cfg.human_variable)?;
    if probe_cfg.first_levels.contains(code) {
        Some(true)
    } else if probe_cfg.second_levels.contains(code) {
        Some(false)
    } else {
        None
    }
}

/// Validates a probe config against the dataset: the human variable must
/// exist and the mapped levels must be declared.
pub(crate) fn check_probe_config(
    dataset: &SurveyDataset,
    cfg: &ProbeConfig,
) -> Result<(), ExperimentError> {
    let declared = dataset.codebook.level_codes(&cfg.human_variable)?;
    for code in cfg.first_levels.iter().chain(&cfg.second_levels) {
        if !declared.contains(code) {
            return Err(ExperimentError::Config(format!(
                "vote mapping level {:?} is not declared for {:?}",
                code, cfg.human_variable
            )));
        }
    }
    if cfg
        .first_levels
        .intersection(&cfg.second_levels)
        .next()
        .is_some()
    {
        return Err(ExperimentError::Config(format!(
            "vote mapping for {:?} assigns a level to both candidates",
            cfg.human_variable
        )));
    }
    Ok(())
}
