//! Interview-transcript study: show the model a survey interview with one
//! item left unanswered, harvest its short free-text answer, code that
//! answer back through the codebook, and compare the association
//! structure of the synthetic answers against the human rows that
//! produced the transcripts.
//!
//! The headline analysis is the cross matrix: input variable x from the
//! human rows against output variable y from the synthetic rows, whose
//! diagonal measures per-item recovery and whose off-diagonal cells
//! measure whether the model reproduces between-item structure. A
//! within-synthetic matrix is computed alongside it.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::backend::{BackendDescriptor, BackendKind, CompletionRequest, EchoBackend};
use crate::exec::parallel_map;
use crate::extraction::code_interview_completion;
use crate::stats::report::{
    format_association_matrix, format_comparison_summary, format_missingness_pair, SummaryColumn,
};
use crate::stats::{
    association_matrix, compare_matrices, cross_association_matrix, MatrixComparison,
};
use crate::survey::{complete_cases, DescribeRow, SurveyDataset, SurveyRecord};
use crate::templating::{render_interview, InterviewScript};

use super::{
    backend_stats, build_study_backend, sanitize_name, write_report, ExperimentConfig,
    ExperimentError, InterviewConfig, RunManifest, RunOptions, StudyBackend, StudyKind,
};

/// One backend's interview results.
#[derive(Debug, Clone, Serialize)]
pub struct InterviewRun {
    pub backend: String,
    pub dir: PathBuf,
    pub n_records: usize,
    /// Rows answering every association variable in both datasets.
    pub n_complete: usize,
    /// Completions the backend failed to produce; coded as missing.
    pub n_failures: u64,
    /// Completions produced but not codable to a declared level.
    pub n_uncodable: u64,
    /// Association variables with fewer than two observed levels in the
    /// complete-case synthetic rows; their cells carry no information.
    pub zero_variance: Vec<String>,
    /// Cross matrix (human input vs synthetic output) minus the human
    /// matrix, over the upper-triangle pairs defined in both.
    pub comparison_cross: MatrixComparison,
    /// Within-synthetic matrix minus the human matrix.
    pub comparison_synthetic: MatrixComparison,
}

#[derive(Debug)]
pub struct InterviewOutcome {
    pub runs: Vec<InterviewRun>,
    pub manifest_path: PathBuf,
}

/// One temperature's summary inside a sweep.
#[derive(Debug, Clone, Serialize)]
pub struct TemperatureCell {
    pub temperature: f64,
    pub n_complete: usize,
    pub zero_variance: Vec<String>,
    pub comparison: MatrixComparison,
}

#[derive(Debug)]
pub struct SweepOutcome {
    pub cells: Vec<TemperatureCell>,
    pub manifest_path: PathBuf,
}

fn fmt3(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.3}")).unwrap_or_default()
}

/// The request shape every interview query uses: short answer, cut at
/// the first newline.
fn interview_request(prompt: String, max_tokens: u32, temperature: f64) -> CompletionRequest {
    CompletionRequest {
        prompt,
        max_tokens,
        temperature,
        stop_sequences: Some(vec!["\n".to_string()]),
        top_logprobs: None,
    }
}

/// Variables with fewer than two distinct non-missing values.
fn zero_variance_variables(dataset: &SurveyDataset, variables: &[String]) -> Vec<String> {
    variables
        .iter()
        .filter(|var| {
            let mut seen = BTreeSet::new();
            for record in dataset.records() {
                if let Some(value) = record.get(var) {
                    seen.insert(value.to_string());
                    if seen.len() >= 2 {
                        return false;
                    }
                }
            }
            true
        })
        .cloned()
        .collect()
}

fn describe_csv(rows: &[DescribeRow]) -> String {
    let mut out = String::from("variable,n,mean,sd,min,p25,p75,max\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.variable,
            r.n,
            fmt3(r.mean),
            fmt3(r.sd),
            fmt3(r.min),
            fmt3(r.p25),
            fmt3(r.p75),
            fmt3(r.max),
        ));
    }
    out
}

/// Resolved inputs shared by every backend and temperature.
struct InterviewInputs {
    dataset: SurveyDataset,
    script: InterviewScript,
    targets: Vec<String>,
    assoc_vars: Vec<String>,
    icfg: InterviewConfig,
}

fn resolve_inputs(config: &ExperimentConfig) -> Result<InterviewInputs, ExperimentError> {
    let dataset = config.load_dataset()?;
    let script = config.load_script()?;
    script.validate(&dataset.codebook)?;
    let icfg = config.interview.clone().unwrap_or_default();
    let targets = match &icfg.targets {
        Some(list) if list.is_empty() => {
            return Err(ExperimentError::Config(
                "interview.targets is present but empty".into(),
            ));
        }
        Some(list) => {
            for t in list {
                if script.item(t).is_none() {
                    return Err(ExperimentError::Config(format!(
                        "interview target {t:?} is not an item in the script"
                    )));
                }
            }
            list.clone()
        }
        None => script.target_variables(),
    };
    let assoc_vars = icfg
        .association_variables
        .clone()
        .unwrap_or_else(|| targets.clone());
    for v in &assoc_vars {
        if !targets.contains(v) {
            return Err(ExperimentError::Config(format!(
                "association variable {v:?} is not an interview target, so the \
                 synthetic rows would never answer it"
            )));
        }
    }
    Ok(InterviewInputs {
        dataset,
        script,
        targets,
        assoc_vars,
        icfg,
    })
}

/// The echo backend needs the interview materials, so the generic
/// builder cannot make it.
fn build_interview_backend(
    descriptor: &BackendDescriptor,
    inputs: &InterviewInputs,
    config: &ExperimentConfig,
    options: &RunOptions,
) -> Result<StudyBackend, ExperimentError> {
    if descriptor.kind == BackendKind::Echo {
        let echo = EchoBackend::build(&inputs.dataset, &inputs.script, &inputs.targets)?;
        Ok(StudyBackend::Plain(Box::new(echo)))
    } else {
        build_study_backend(descriptor, config.seed, options.cache_dir.as_deref())
    }
}

/// Runs every (record, target) query for one backend at one temperature
/// and writes that run's reports under `prefix` inside the output
/// directory. Backend failures on single completions are tolerated and
/// coded as missing; anything pointing at a configuration problem aborts.
#[allow(clippy::too_many_arguments)]
fn run_backend_interview(
    inputs: &InterviewInputs,
    backend: &StudyBackend,
    temperature: f64,
    parallelism: usize,
    out_root: &Path,
    prefix: &str,
    manifest: &mut RunManifest,
) -> Result<InterviewRun, ExperimentError> {
    let dataset = &inputs.dataset;
    let script = &inputs.script;
    let targets = &inputs.targets;
    let records = dataset.records();
    let lm = backend.as_lm();

    // Record-major order: all of one respondent's items before the next,
    // so reruns replay identically and partial caches stay contiguous.
    let items: Vec<(usize, usize)> = (0..records.len())
        .flat_map(|ri| (0..targets.len()).map(move |ti| (ri, ti)))
        .collect();
    manifest.bump("queries_planned", items.len() as u64);

    let results = parallel_map(&items, parallelism, |_, &(ri, ti)| {
        let prompt = render_interview(script, &records[ri], &targets[ti])?;
        let request = interview_request(prompt, inputs.icfg.max_tokens, temperature);
        // A failed completion costs one row, not the run.
        Ok::<Option<String>, ExperimentError>(lm.complete(&request).ok().map(|r| r.text))
    });

    let mut csv = csv::Writer::from_writer(Vec::new());
    csv.write_record(["respondent_id", "target", "failed", "completion", "code"])
        .map_err(|e| ExperimentError::Config(format!("completions csv: {e}")))?;
    let mut silicon_records: Vec<SurveyRecord> = records
        .iter()
        .map(|r| SurveyRecord::new(r.respondent_id.clone()))
        .collect();
    let mut n_failures = 0u64;
    let mut n_uncodable = 0u64;
    for (&(ri, ti), result) in items.iter().zip(results) {
        let target = &targets[ti];
        let item = script
            .item(target)
            .expect("targets were validated against the script");
        let (failed, completion, code) = match result? {
            None => {
                n_failures += 1;
                (true, String::new(), None)
            }
            Some(text) => {
                let code = code_interview_completion(&text, item, &dataset.codebook)?;
                if code.is_none() {
                    n_uncodable += 1;
                }
                (false, text, code)
            }
        };
        if let Some(code) = &code {
            silicon_records[ri].set(target.clone(), code.clone());
        }
        csv.write_record([
            records[ri].respondent_id.as_str(),
            target,
            if failed { "true" } else { "false" },
            completion.as_str(),
            code.as_deref().unwrap_or(""),
        ])
        .map_err(|e| ExperimentError::Config(format!("completions csv: {e}")))?;
    }
    manifest.bump("failures", n_failures);
    manifest.bump("uncodable", n_uncodable);

    let completions_csv = String::from_utf8(
        csv.into_inner()
            .map_err(|e| ExperimentError::Config(format!("completions csv: {e}")))?,
    )
    .expect("csv writer output is utf-8");
    write_report(
        out_root,
        &format!("{prefix}completions.csv"),
        &completions_csv,
        manifest,
    )?;

    let silicon = SurveyDataset::from_parts(
        dataset.codebook.clone(),
        silicon_records,
        format!("silicon:{}", lm.name()),
    )?;
    let silicon_rel = format!("{prefix}silicon.csv");
    silicon.write_table(&out_root.join(&silicon_rel))?;
    manifest.outputs.push(silicon_rel);

    let assoc = &inputs.assoc_vars;
    write_report(
        out_root,
        &format!("{prefix}missingness.csv"),
        &format_missingness_pair(
            &dataset.provenance,
            &silicon.provenance,
            &dataset.missingness_report(assoc)?,
            &silicon.missingness_report(assoc)?,
        ),
        manifest,
    )?;

    let (h_cc, s_cc) = complete_cases(dataset, &silicon, assoc)?;
    let n_complete = h_cc.len();
    manifest.bump("complete_cases", n_complete as u64);
    let zero_variance = zero_variance_variables(&s_cc, assoc);
    if !zero_variance.is_empty() {
        manifest.notes.push(format!(
            "{prefix}: zero-variance synthetic variables {zero_variance:?} \
             contribute no defined cells"
        ));
    }

    let human_matrix = association_matrix(&h_cc, assoc)?;
    let synthetic_matrix = association_matrix(&s_cc, assoc)?;
    let cross_matrix = cross_association_matrix(&h_cc, &s_cc, assoc)?;
    write_report(
        out_root,
        &format!("{prefix}human_matrix.csv"),
        &format_association_matrix(&human_matrix),
        manifest,
    )?;
    write_report(
        out_root,
        &format!("{prefix}synthetic_matrix.csv"),
        &format_association_matrix(&synthetic_matrix),
        manifest,
    )?;
    write_report(
        out_root,
        &format!("{prefix}cross_matrix.csv"),
        &format_association_matrix(&cross_matrix),
        manifest,
    )?;

    let comparison_cross = compare_matrices(&cross_matrix, &human_matrix)?;
    let comparison_synthetic = compare_matrices(&synthetic_matrix, &human_matrix)?;
    write_report(
        out_root,
        &format!("{prefix}comparison.csv"),
        &format_comparison_summary(&[
            SummaryColumn {
                label: "Estimated vs human".into(),
                comparison: comparison_cross.clone(),
                n: n_complete,
            },
            SummaryColumn {
                label: "Synthetic vs human".into(),
                comparison: comparison_synthetic.clone(),
                n: n_complete,
            },
        ]),
        manifest,
    )?;
    write_report(
        out_root,
        &format!("{prefix}descriptives_human.csv"),
        &describe_csv(&h_cc.describe(assoc)?),
        manifest,
    )?;
    write_report(
        out_root,
        &format!("{prefix}descriptives_silicon.csv"),
        &describe_csv(&s_cc.describe(assoc)?),
        manifest,
    )?;

    Ok(InterviewRun {
        backend: lm.name().to_string(),
        dir: out_root.join(prefix.trim_end_matches('/')),
        n_records: records.len(),
        n_complete,
        n_failures,
        n_uncodable,
        zero_variance,
        comparison_cross,
        comparison_synthetic,
    })
}

/// Runs the interview study for every configured backend.
pub fn run_interview_study(
    config: &ExperimentConfig,
    options: &RunOptions,
) -> Result<InterviewOutcome, ExperimentError> {
    if config.study != StudyKind::Interview {
        return Err(ExperimentError::Config(format!(
            "config declares study {:?}, not an interview study",
            config.study
        )));
    }
    let inputs = resolve_inputs(config)?;
    std::fs::create_dir_all(&options.out_dir).map_err(super::io_err(&options.out_dir))?;
    let mut manifest = RunManifest::begin("interview", config, options)?;
    manifest.bump("records", inputs.dataset.len() as u64);
    manifest
        .notes
        .push(format!("temperature: {}", inputs.icfg.temperature));

    let mut runs = Vec::new();
    for descriptor in &config.backends {
        let backend = build_interview_backend(descriptor, &inputs, config, options)?;
        let prefix = format!("{}/", sanitize_name(&descriptor.name));
        let run = run_backend_interview(
            &inputs,
            &backend,
            inputs.icfg.temperature,
            config.parallelism,
            &options.out_dir,
            &prefix,
            &mut manifest,
        )?;
        manifest.backends.push(backend_stats(descriptor, &backend));
        runs.push(run);
    }

    let manifest_path = manifest.finish(&options.out_dir)?;
    Ok(InterviewOutcome {
        runs,
        manifest_path,
    })
}

/// Repeats the interview study at each temperature, using the first
/// configured backend, and writes a side-by-side summary.
pub fn run_temperature_sweep(
    config: &ExperimentConfig,
    options: &RunOptions,
    temperatures: &[f64],
) -> Result<SweepOutcome, ExperimentError> {
    if config.study != StudyKind::TemperatureSweep {
        return Err(ExperimentError::Config(format!(
            "config declares study {:?}, not a temperature sweep",
            config.study
        )));
    }
    if temperatures.is_empty() {
        return Err(ExperimentError::Config(
            "a temperature sweep needs at least one temperature".into(),
        ));
    }
    let inputs = resolve_inputs(config)?;
    std::fs::create_dir_all(&options.out_dir).map_err(super::io_err(&options.out_dir))?;
    let mut manifest = RunManifest::begin("temperature_sweep", config, options)?;
    manifest.bump("records", inputs.dataset.len() as u64);

    let descriptor = &config.backends[0];
    if config.backends.len() > 1 {
        manifest.notes.push(format!(
            "sweep uses the first backend {:?}; {} other(s) ignored",
            descriptor.name,
            config.backends.len() - 1
        ));
    }
    let backend = build_interview_backend(descriptor, &inputs, config, options)?;
    let sub = sanitize_name(&descriptor.name);

    let mut cells = Vec::new();
    let mut columns = Vec::new();
    for &t in temperatures {
        let prefix = format!("temp_{t}/{sub}/");
        let run = run_backend_interview(
            &inputs,
            &backend,
            t,
            config.parallelism,
            &options.out_dir,
            &prefix,
            &mut manifest,
        )?;
        columns.push(SummaryColumn {
            label: format!("Temp: {t}"),
            comparison: run.comparison_cross.clone(),
            n: run.n_complete,
        });
        cells.push(TemperatureCell {
            temperature: t,
            n_complete: run.n_complete,
            zero_variance: run.zero_variance,
            comparison: run.comparison_cross,
        });
    }
    manifest.backends.push(backend_stats(descriptor, &backend));

    write_report(
        &options.out_dir,
        "summary.csv",
        &format_comparison_summary(&columns),
        &mut manifest,
    )?;
    let report = serde_json::to_string_pretty(&cells)
        .map_err(|e| ExperimentError::Config(format!("sweep report: {e}")))?;
    write_report(&options.out_dir, "sweep_report.json", &report, &mut manifest)?;

    let manifest_path = manifest.finish(&options.out_dir)?;
    Ok(SweepOutcome {
        cells,
        manifest_path,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{CacheStore, CachedResponse, CompletionResponse, RequestEcho, Usage};
    use std::path::Path;

    fn write(path: &Path, body: &str) {
        std::fs::write(path, body).unwrap();
    }

    /// One open integer item plus three two-level items; vote equals
    /// party on every row, gender alternates, and each respondent's age
    /// is unique so every transcript context is unambiguous. Respondent
    /// r11 has no party answer.
    fn interview_fixture(dir: &Path, backends_json: &str) -> PathBuf {
        let codebook = r#"[
            {"name": "age", "kind": "integer", "min": 18, "max": 80},
            {"name": "gender", "kind": "categorical",
             "levels": {"1": "Male", "2": "Female"}},
            {"name": "party", "kind": "categorical",
             "levels": {"1": "Republican", "2": "Democrat"}},
            {"name": "vote", "kind": "categorical",
             "levels": {"1": "Trump", "2": "Clinton"}}
        ]"#;
        write(&dir.join("codebook.json"), codebook);
        let mut table = String::from("respondent_id,age,gender,party,vote\n");
        for i in 0..12 {
            let age = 20 + i;
            let gender = 1 + i % 2;
            let party = 1 + (i / 6) % 2;
            let party_field = if i == 11 {
                String::new()
            } else {
                party.to_string()
            };
            table.push_str(&format!("r{i},{age},{gender},{party_field},{party}\n"));
        }
        write(&dir.join("table.csv"), &table);
        let script = r#"{
            "items": [
                {"variable": "age",
                 "question": "How old are you?"},
                {"variable": "gender",
                 "question": "Are you male or female?",
                 "options": [
                    {"surface": "Male", "code": "1"},
                    {"surface": "Female", "code": "2"}]},
                {"variable": "party",
                 "question": "Which party do you identify with?",
                 "options": [
                    {"surface": "Republican", "code": "1"},
                    {"surface": "Democrat", "code": "2"}]},
                {"variable": "vote",
                 "question": "Who did you vote for?",
                 "options": [
                    {"surface": "Trump", "code": "1"},
                    {"surface": "Clinton", "code": "2"}]}
            ]
        }"#;
        write(&dir.join("script.json"), script);
        let config = format!(
            r#"{{
                "study": "interview",
                "dataset": {{"table": "table.csv", "codebook": "codebook.json",
                             "provenance": "human"}},
                "script": "script.json",
                "backends": {backends_json},
                "parallelism": 2
            }}"#
        );
        let path = dir.join("config.json");
        write(&path, &config);
        path
    }

    fn options(dir: &Path) -> RunOptions {
        RunOptions {
            out_dir: dir.join("out"),
            config_path: "config.json".into(),
            ..RunOptions::default()
        }
    }

    #[test]
    fn echo_backend_reproduces_human_structure() {
        let tmp = tempfile::tempdir().unwrap();
        let config_path = interview_fixture(tmp.path(), r#"[{"name": "echo", "kind": "echo"}]"#);
        let config = ExperimentConfig::from_json_file(&config_path).unwrap();
        let outcome = run_interview_study(&config, &options(tmp.path())).unwrap();

        assert_eq!(outcome.runs.len(), 1);
        let run = &outcome.runs[0];
        assert_eq!(run.n_records, 12);
        // r11's missing party echoes back as an uncodable stand-in.
        assert_eq!(run.n_failures, 0);
        assert_eq!(run.n_uncodable, 1);
        assert_eq!(run.n_complete, 11);
        assert!(run.zero_variance.is_empty());
        // Synthetic rows equal human rows, so every defined difference
        // cell is exactly zero in both comparisons.
        assert_eq!(run.comparison_cross.mean, Some(0.0));
        assert_eq!(run.comparison_cross.n_cells, 3);
        assert_eq!(run.comparison_synthetic.mean, Some(0.0));

        let dir = tmp.path().join("out/echo");
        for name in [
            "completions.csv",
            "silicon.csv",
            "missingness.csv",
            "human_matrix.csv",
            "cross_matrix.csv",
            "synthetic_matrix.csv",
            "comparison.csv",
            "descriptives_human.csv",
            "descriptives_silicon.csv",
        ] {
            assert!(dir.join(name).exists(), "missing {name}");
        }

        let completions = std::fs::read_to_string(dir.join("completions.csv")).unwrap();
        assert_eq!(completions.lines().count(), 37); // header + 12 * 3
        assert!(completions.contains("r0,gender,false,Male,1"));
        assert!(completions.contains("r11,party,false,[no answer],"));

        // The cross matrix diagonal is the per-item recovery and must be
        // perfect for an echo.
        let cross = std::fs::read_to_string(dir.join("cross_matrix.csv")).unwrap();
        let lines: Vec<&str> = cross.lines().collect();
        assert_eq!(lines[0], ",gender,party,vote");
        assert!(lines[1].starts_with("gender,1.000,"));

        // Human matrix has a blank diagonal.
        let human = std::fs::read_to_string(dir.join("human_matrix.csv")).unwrap();
        assert!(human.lines().nth(1).unwrap().starts_with("gender,,"));

        let missing = std::fs::read_to_string(dir.join("missingness.csv")).unwrap();
        assert!(missing.starts_with("Variable,human,silicon:echo\n"));
        // 1 of 12 party answers missing on both sides.
        assert!(missing.contains("party,8.3,8.3"));

        let manifest = std::fs::read_to_string(&outcome.manifest_path).unwrap();
        let value: serde_json::Value = serde_json::from_str(&manifest).unwrap();
        assert_eq!(value["counts"]["queries_planned"], 36);
        assert_eq!(value["counts"]["complete_cases"], 11);
        assert_eq!(value["notes"][0], "temperature: 0.7");
    }

    #[test]
    fn uncodable_default_answers_leave_variables_degenerate() {
        let tmp = tempfile::tempdir().unwrap();
        // "Republican" is an option surface only for party, so gender and
        // vote completions never code and stay missing.
        let rules = r#"[{"default": true, "text": "Republican"}]"#;
        write(&tmp.path().join("rules.json"), rules);
        let backends = r#"[{"name": "mock", "kind": "mock", "rules": "rules.json"}]"#;
        let config_path = interview_fixture(tmp.path(), backends);
        let config = ExperimentConfig::from_json_file(&config_path).unwrap();
        let outcome = run_interview_study(&config, &options(tmp.path())).unwrap();

        let run = &outcome.runs[0];
        // gender and vote never code: 24 uncodable completions.
        assert_eq!(run.n_uncodable, 24);
        // No row answers gender, so no complete cases survive.
        assert_eq!(run.n_complete, 0);
        // Every association variable is flagged: party is constant and
        // the others are empty in the complete-case rows.
        assert_eq!(
            run.zero_variance,
            vec![
                "gender".to_string(),
                "party".to_string(),
                "vote".to_string()
            ]
        );
        assert_eq!(run.comparison_cross.mean, None);
        assert_eq!(run.comparison_cross.n_cells, 0);
    }

    #[test]
    fn backend_failures_are_tolerated_per_completion() {
        let tmp = tempfile::tempdir().unwrap();
        let config_path = interview_fixture(
            tmp.path(),
            r#"[{"name": "gpt3", "kind": "replay", "store": "store.jsonl"}]"#,
        );
        let config = ExperimentConfig::from_json_file(&config_path).unwrap();

        // Seed replayable answers for every prompt except r5's vote item.
        let inputs = resolve_inputs(&config).unwrap();
        let store_path = tmp.path().join("store.jsonl");
        let store = CacheStore::open(&store_path).unwrap();
        for record in inputs.dataset.records() {
            for target in &inputs.targets {
                if record.respondent_id == "r5" && target == "vote" {
                    continue;
                }
                let item = inputs.script.item(target).unwrap();
                let answer = item
                    .answer_surface(record)
                    .unwrap()
                    .unwrap_or_else(|| "skip".to_string());
                let prompt = render_interview(&inputs.script, record, target).unwrap();
                let request = interview_request(prompt, 5, 0.7);
                let echo = RequestEcho::for_completion("gpt3", &request);
                store
                    .put(
                        echo,
                        CachedResponse::Completion(CompletionResponse {
                            text: answer,
                            token_logprobs: None,
                            usage: Usage {
                                prompt_tokens: 10,
                                completion_tokens: 1,
                            },
                        }),
                    )
                    .unwrap();
            }
        }

        let outcome = run_interview_study(&config, &options(tmp.path())).unwrap();
        let run = &outcome.runs[0];
        assert_eq!(run.n_failures, 1);
        // r5 misses vote, r11 echoes "skip" for party: both uncodable or
        // failed, so both rows drop from the complete cases.
        assert_eq!(run.n_complete, 10);
        let completions =
            std::fs::read_to_string(tmp.path().join("out/gpt3/completions.csv")).unwrap();
        assert!(completions.contains("r5,vote,true,,"));
    }

    #[test]
    fn sweep_writes_per_temperature_runs_and_summary() {
        let tmp = tempfile::tempdir().unwrap();
        let config_path = interview_fixture(tmp.path(), r#"[{"name": "echo", "kind": "echo"}]"#);
        let mut config = ExperimentConfig::from_json_file(&config_path).unwrap();
        config.study = StudyKind::TemperatureSweep;
        let outcome = run_temperature_sweep(&config, &options(tmp.path()), &[0.2, 0.9]).unwrap();

        assert_eq!(outcome.cells.len(), 2);
        assert_eq!(outcome.cells[0].temperature, 0.2);
        assert_eq!(outcome.cells[0].n_complete, 11);
        assert_eq!(outcome.cells[1].comparison.mean, Some(0.0));

        for sub in ["temp_0.2", "temp_0.9"] {
            assert!(tmp
                .path()
                .join(format!("out/{sub}/echo/cross_matrix.csv"))
                .exists());
        }
        let summary = std::fs::read_to_string(tmp.path().join("out/summary.csv")).unwrap();
        let lines: Vec<&str> = summary.lines().collect();
        assert_eq!(lines[0], "Statistic,Temp: 0.2,Temp: 0.9");
        assert_eq!(lines[1], "Mean,0.000,0.000");
        assert_eq!(lines[5], "N,11,11");

        let report: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(tmp.path().join("out/sweep_report.json")).unwrap())
                .unwrap();
        assert_eq!(report[0]["temperature"], 0.2);
        assert_eq!(report[0]["n_complete"], 11);
    }

    #[test]
    fn association_variables_must_be_targets() {
        let tmp = tempfile::tempdir().unwrap();
        let config_path = interview_fixture(tmp.path(), r#"[{"name": "echo", "kind": "echo"}]"#);
        let mut config = ExperimentConfig::from_json_file(&config_path).unwrap();
        config.interview = Some(InterviewConfig {
            targets: Some(vec!["gender".into()]),
            association_variables: Some(vec!["gender".into(), "party".into()]),
            ..InterviewConfig::default()
        });
        let err = run_interview_study(&config, &options(tmp.path())).unwrap_err();
        assert!(matches!(err, ExperimentError::Config(_)));
        assert!(err.to_string().contains("party"));
    }

    #[test]
    fn study_kind_is_enforced() {
        let tmp = tempfile::tempdir().unwrap();
        let config_path = interview_fixture(tmp.path(), r#"[{"name": "echo", "kind": "echo"}]"#);
        let mut config = ExperimentConfig::from_json_file(&config_path).unwrap();
        config.study = StudyKind::Vote;
        assert!(matches!(
            run_interview_study(&config, &options(tmp.path())),
            Err(ExperimentError::Config(_))
        ));
        config.study = StudyKind::Interview;
        assert!(matches!(
            run_temperature_sweep(&config, &options(tmp.path()), &[0.7]),
            Err(ExperimentError::Config(_))
        ));
    }
}
