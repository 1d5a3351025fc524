//! Vote-recovery study: condition on each backstory, read the next-token
//! distribution over candidate names, and compare the dichotomized
//! prediction against the respondent's reported vote.

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::Serialize;

use crate::backend::LmBackend;
use crate::exec::parallel_map;
use crate::probes::{
    build_prompt, collapse, dichotomize, normalize, BinaryOutcome, CandidateProbabilities, Probe,
    ProbeError,
};
use crate::stats::report::{format_fidelity_detail, format_fidelity_table};
use crate::stats::{binary_fidelity, BinaryFidelity};
use crate::survey::SurveyDataset;
use crate::templating::PersonaTemplate;

use super::{
    backend_stats, build_study_backend, check_probe_config, human_vote, sanitize_name,
    write_report, ExperimentConfig, ExperimentError, ProbeConfig, RunManifest, RunOptions,
    StudyKind,
};

/// Per-record probe results for one dataset pass, aligned with record
/// order. `None` marks records whose distribution carried no candidate
/// signal at all.
pub(crate) struct ProbeRows {
    pub probs: Vec<Option<CandidateProbabilities>>,
    /// Dichotomized outcome before any tie policy.
    pub raw: Vec<Option<BinaryOutcome>>,
    /// Vote usable for fidelity tables, after the tie policy.
    pub votes: Vec<Option<bool>>,
    pub n_no_signal: u64,
    pub n_ties: u64,
}

/// Runs one probe over every record. Backend failures abort; a
/// distribution with no matching token only marks that record.
pub(crate) fn probe_rows(
    dataset: &SurveyDataset,
    template: &PersonaTemplate,
    probe: &Probe,
    backend: &dyn LmBackend,
    parallelism: usize,
    tie_to_first: bool,
) -> Result<ProbeRows, ExperimentError> {
    let first_label = probe.labels()[0].clone();
    let records = dataset.records();
    let results = parallel_map(records, parallelism, |_, record| {
        let prompt = build_prompt(template, record, probe)?;
        let dist = backend.next_token_logprobs(&prompt)?;
        let collapsed = collapse(&dist, probe)?;
        match normalize(&collapsed) {
            Ok(p) => Ok(Some(p)),
            Err(ProbeError::NoSignal) => Ok(None),
            Err(e) => Err(e),
        }
    });

    let mut probs = Vec::with_capacity(records.len());
    for r in results {
        probs.push(r.map_err(ExperimentError::from)?);
    }

    let mut raw = Vec::with_capacity(probs.len());
    let mut votes = Vec::with_capacity(probs.len());
    let mut n_no_signal = 0;
    let mut n_ties = 0;
    for p in &probs {
        match p {
            None => {
                n_no_signal += 1;
                raw.push(None);
                votes.push(None);
            }
            Some(p) => {
                let p_first = p.get(&first_label).unwrap_or(0.0);
                let outcome = dichotomize(p_first);
                let vote = match outcome {
                    BinaryOutcome::First => Some(true),
                    BinaryOutcome::Second => Some(false),
                    BinaryOutcome::Tie => {
                        n_ties += 1;
                        if tie_to_first {
                            Some(true)
                        } else {
                            None
                        }
                    }
                };
                raw.push(Some(outcome));
                votes.push(vote);
            }
        }
    }
    Ok(ProbeRows {
        probs,
        raw,
        votes,
        n_no_signal,
        n_ties,
    })
}

pub(crate) fn outcome_label(outcome: Option<BinaryOutcome>) -> &'static str {
    match outcome {
        None => "no_signal",
        Some(BinaryOutcome::First) => "first",
        Some(BinaryOutcome::Second) => "second",
        Some(BinaryOutcome::Tie) => "tie",
    }
}

/// Mean normalized probability per candidate over records with signal.
#[derive(Debug, Clone, Serialize)]
pub struct MarginalSummary {
    pub means: BTreeMap<String, f64>,
    pub n_signal: u64,
    pub n_no_signal: u64,
}

pub(crate) fn marginal_summary(probe: &Probe, rows: &ProbeRows) -> MarginalSummary {
    let mut sums: BTreeMap<String, f64> = probe
        .labels()
        .into_iter()
        .map(|l| (l, 0.0))
        .collect();
    let mut n_signal = 0u64;
    for p in rows.probs.iter().flatten() {
        n_signal += 1;
        for (label, sum) in sums.iter_mut() {
            *sum += p.get(label).unwrap_or(0.0);
        }
    }
    let means = sums
        .into_iter()
        .map(|(l, s)| (l, if n_signal > 0 { s / n_signal as f64 } else { f64::NAN }))
        .collect();
    MarginalSummary {
        means,
        n_signal,
        n_no_signal: rows.n_no_signal,
    }
}

/// Whole-sample fidelity for one probe under one backend.
#[derive(Debug, Clone)]
pub struct ProbeFidelity {
    pub probe: String,
    pub whole_sample: BinaryFidelity,
    pub n_no_signal: u64,
    pub n_ties: u64,
    pub marginal: MarginalSummary,
}

#[derive(Debug)]
pub struct BackendVoteOutcome {
    pub backend: String,
    pub dir: PathBuf,
    pub probes: Vec<ProbeFidelity>,
}

#[derive(Debug)]
pub struct VoteStudyOutcome {
    pub per_backend: Vec<BackendVoteOutcome>,
    pub manifest_path: PathBuf,
}

fn paired(
    humans: &[Option<bool>],
    silicon: &[Option<bool>],
    indices: &[usize],
) -> Vec<(Option<bool>, Option<bool>)> {
    indices.iter().map(|&i| (humans[i], silicon[i])).collect()
}

/// Runs the full vote study: every probe against every backend, fidelity
/// split by subgroup, per-record probabilities and marginal means on disk.
pub fn run_vote_study(
    config: &ExperimentConfig,
    options: &RunOptions,
) -> Result<VoteStudyOutcome, ExperimentError> {
    if config.study != StudyKind::Vote {
        return Err(ExperimentError::Config(
            "config does not describe a vote study".into(),
        ));
    }
    if config.probes.is_empty() {
        return Err(ExperimentError::Config("a vote study needs probes".into()));
    }
    let dataset = config.load_dataset()?;
    let template = config.load_template()?;
    template.validate(&dataset.codebook)?;
    let subgroups = config.load_subgroups()?;
    let mut probes: Vec<(&ProbeConfig, Probe)> = Vec::new();
    for cfg in &config.probes {
        check_probe_config(&dataset, cfg)?;
        probes.push((cfg, config.load_probe(cfg)?));
    }
    let subgroup_rows: Vec<(String, Vec<usize>)> = subgroups
        .iter()
        .map(|f| Ok((f.name.clone(), dataset.subgroup_indices(f)?)))
        .collect::<Result<_, ExperimentError>>()?;

    std::fs::create_dir_all(&options.out_dir).map_err(super::io_err(&options.out_dir))?;
    let mut manifest = RunManifest::begin("vote", config, options)?;
    manifest.bump("records", dataset.len() as u64);
    let cache_dir = options.cache_dir.as_deref().or(config.cache.as_deref());

    let mut per_backend = Vec::new();
    // Rows for the cross-backend comparison table.
    let mut comparison: Vec<(String, String, BinaryFidelity)> = Vec::new();

    for descriptor in &config.backends {
        let backend = build_study_backend(descriptor, config.seed, cache_dir)?;
        let sub = sanitize_name(&descriptor.name);
        let backend_dir = options.out_dir.join(&sub);
        std::fs::create_dir_all(&backend_dir).map_err(super::io_err(&backend_dir))?;

        let mut prob_rows_csv = csv::Writer::from_writer(Vec::new());
        prob_rows_csv
            .write_record(["respondent_id", "probe", "p_first", "residual", "outcome"])
            .expect("csv into memory");

        let mut fidelity_cells: Vec<(String, Vec<BinaryFidelity>)> = subgroup_rows
            .iter()
            .map(|(name, _)| (name.clone(), Vec::new()))
            .collect();
        let mut detail: Vec<(String, usize, BinaryFidelity)> = Vec::new();
        let mut marginals: BTreeMap<String, MarginalSummary> = BTreeMap::new();
        let mut probe_outcomes = Vec::new();

        for (cfg, probe) in &probes {
            let first_label = probe.labels()[0].clone();
            let rows = probe_rows(
                &dataset,
                &template,
                probe,
                backend.as_lm(),
                config.parallelism,
                options.tie_to_first,
            )?;
            let humans: Vec<Option<bool>> = dataset
                .records()
                .iter()
                .map(|r| human_vote(r, cfg))
                .collect();

            for (i, (record, p)) in dataset.records().iter().zip(&rows.probs).enumerate() {
                let (p_first, residual) = match p {
                    Some(p) => (
                        format!("{:.6}", p.get(&first_label).unwrap_or(0.0)),
                        format!("{:.6}", p.residual),
                    ),
                    None => (String::new(), String::new()),
                };
                let raw = rows.raw[i];
                prob_rows_csv
                    .write_record([
                        record.respondent_id.as_str(),
                        cfg.label.as_str(),
                        p_first.as_str(),
                        residual.as_str(),
                        outcome_label(raw),
                    ])
                    .expect("csv into memory");
            }

            for ((name, indices), cells) in subgroup_rows.iter().zip(&mut fidelity_cells) {
                let fidelity = binary_fidelity(&paired(&humans, &rows.votes, indices));
                let ties_here = indices
                    .iter()
                    .filter(|&&i| rows.raw[i] == Some(BinaryOutcome::Tie))
                    .count();
                detail.push((format!("{}/{}", cfg.label, name), ties_here, fidelity.clone()));
                cells.1.push(fidelity);
                debug_assert_eq!(*name, cells.0);
            }

            let whole = binary_fidelity(&paired(
                &humans,
                &rows.votes,
                &(0..dataset.len()).collect::<Vec<_>>(),
            ));
            comparison.push((cfg.label.clone(), descriptor.name.clone(), whole.clone()));
            manifest.bump("queries_planned", dataset.len() as u64);
            manifest.bump("no_signal", rows.n_no_signal);
            manifest.bump("ties", rows.n_ties);
            marginals.insert(cfg.label.clone(), marginal_summary(probe, &rows));
            probe_outcomes.push(ProbeFidelity {
                probe: cfg.label.clone(),
                whole_sample: whole,
                n_no_signal: rows.n_no_signal,
                n_ties: rows.n_ties,
                marginal: marginals[&cfg.label].clone(),
            });
        }

        let probe_labels: Vec<String> = probes.iter().map(|(c, _)| c.label.clone()).collect();
        let csv_bytes = prob_rows_csv.into_inner().expect("csv into memory");
        write_report(
            &options.out_dir,
            &format!("{sub}/probabilities.csv"),
            std::str::from_utf8(&csv_bytes).expect("csv output is utf-8"),
            &mut manifest,
        )?;
        write_report(
            &options.out_dir,
            &format!("{sub}/fidelity.csv"),
            &format_fidelity_table(&probe_labels, &fidelity_cells),
            &mut manifest,
        )?;
        write_report(
            &options.out_dir,
            &format!("{sub}/fidelity_detail.csv"),
            &format_fidelity_detail(&detail),
            &mut manifest,
        )?;
        let marginal_json = serde_json::to_string_pretty(&marginals)
            .map_err(|e| ExperimentError::Config(format!("marginal serialization: {e}")))?;
        write_report(
            &options.out_dir,
            &format!("{sub}/marginals.json"),
            &marginal_json,
            &mut manifest,
        )?;

        manifest.backends.push(backend_stats(descriptor, &backend));
        per_backend.push(BackendVoteOutcome {
            backend: descriptor.name.clone(),
            dir: backend_dir,
            probes: probe_outcomes,
        });
    }

    if config.backends.len() > 1 {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["probe", "backend", "n", "agreement", "tetrachoric"])
            .expect("csv into memory");
        for (probe, backend, fidelity) in &comparison {
            w.write_record([
                probe.as_str(),
                backend.as_str(),
                &fidelity.n.to_string(),
                &fidelity
                    .agreement
                    .map(|v| format!("{v:.4}"))
                    .unwrap_or_default(),
                &fidelity
                    .tetrachoric
                    .value
                    .map(|v| format!("{v:.4}"))
                    .unwrap_or_default(),
            ])
            .expect("csv into memory");
        }
        let bytes = w.into_inner().expect("csv into memory");
        write_report(
            &options.out_dir,
            "model_comparison.csv",
            std::str::from_utf8(&bytes).expect("csv output is utf-8"),
            &mut manifest,
        )?;
    }

    let manifest_path = manifest.finish(&options.out_dir)?;
    Ok(VoteStudyOutcome {
        per_backend,
        manifest_path,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn write_json(dir: &std::path::Path, name: &str, body: &str) -> PathBuf {
        let path = dir.join(name);
        std::fs::write(&path, body).unwrap();
        path
    }

    /// Two-party dataset: party 1 respondents and their recorded votes lean
    /// one way, party 2 the other. The mock keys on a party phrase in the
    /// prompt, so silicon votes match human votes exactly and every
    /// agreement is 1.
    fn fixture(dir: &std::path::Path) -> PathBuf {
        write_json(
            dir,
            "codebook.json",
            r#"[
                {"name": "party", "kind": "categorical", "levels": {"1": "Republican", "2": "Democrat"}},
                {"name": "vote2016", "kind": "categorical", "levels": {"1": "Clinton", "2": "Trump"}}
            ]"#,
        );
        let mut table = String::from("respondent_id,party,vote2016\n");
        for i in 0..40 {
            let (party, vote) = if i % 2 == 0 { ("1", "2") } else { ("2", "1") };
            table.push_str(&format!("r{i},{party},{vote}\n"));
        }
        write_json(dir, "table.csv", &table);
        write_json(
            dir,
            "template.json",
            r#"{"fragments": [
                {"id": "party", "variable": "party", "text": "I am a {value}.",
                 "map": {"1": "Republican", "2": "Democrat"}}
            ], "suffix": ""}"#,
        );
        write_json(
            dir,
            "probe.json",
            r#"{"prompt_suffix": "In 2016, I voted for",
                "candidates": [
                    {"label": "trump", "surfaces": ["Trump"]},
                    {"label": "clinton", "surfaces": ["Clinton"]}
                ]}"#,
        );
        write_json(
            dir,
            "rules.json",
            r#"[
                {"when_contains": "I am a Republican.", "distribution": {"Trump": 0.9, "Clinton": 0.1}},
                {"when_contains": "I am a Democrat.", "distribution": {"Trump": 0.1, "Clinton": 0.9}},
                {"default": true, "distribution": {"Trump": 0.5, "Clinton": 0.5}}
            ]"#,
        );
        write_json(
            dir,
            "study.json",
            r#"{
                "study": "vote",
                "dataset": {"table": "table.csv", "codebook": "codebook.json"},
                "template": "template.json",
                "probes": [{"label": "2016", "path": "probe.json", "human_variable": "vote2016",
                            "first_levels": ["2"], "second_levels": ["1"]}],
                "backends": [{"name": "mock", "kind": "mock", "rules": "rules.json"}],
                "seed": 11
            }"#,
        )
    }

    #[test]
    fn vote_study_end_to_end_with_perfect_mock() {
        let dir = tempfile::tempdir().unwrap();
        let config_path = fixture(dir.path());
        let config = ExperimentConfig::from_json_file(&config_path).unwrap();
        let out = dir.path().join("out");
        let options = RunOptions {
            out_dir: out.clone(),
            config_path: config_path.display().to_string(),
            ..Default::default()
        };
        let outcome = run_vote_study(&config, &options).unwrap();
        assert_eq!(outcome.per_backend.len(), 1);
        let probe = &outcome.per_backend[0].probes[0];
        assert_eq!(probe.whole_sample.n, 40);
        assert_eq!(probe.whole_sample.agreement, Some(1.0));
        assert_eq!(probe.n_no_signal, 0);
        assert_eq!(probe.n_ties, 0);
        // Marginal: half the records at 0.9 Trump, half at 0.1.
        let trump_mean = probe.marginal.means["trump"];
        assert!((trump_mean - 0.5).abs() < 1e-12, "{trump_mean}");

        let probabilities = std::fs::read_to_string(out.join("mock/probabilities.csv")).unwrap();
        assert!(probabilities.starts_with("respondent_id,probe,p_first,residual,outcome"));
        assert!(probabilities.contains("r0,2016,0.9"));
        assert!(probabilities.lines().count() == 41);

        let fidelity = std::fs::read_to_string(out.join("mock/fidelity.csv")).unwrap();
        assert!(fidelity.contains("Whole sample"));
        assert!(fidelity.contains("1.00"));

        let manifest: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap())
                .unwrap();
        assert_eq!(manifest["counts"]["no_signal"], 0);
        assert_eq!(manifest["counts"]["records"], 40);
        assert_eq!(manifest["backends"][0]["ledger"]["queries"], 40);
        assert!(manifest["outputs"]
            .as_array()
            .unwrap()
            .iter()
            .any(|o| o == "mock/fidelity.csv"));
    }

    #[test]
    fn rerun_with_cache_is_idempotent_and_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let config_path = fixture(dir.path());
        let config = ExperimentConfig::from_json_file(&config_path).unwrap();
        let cache = dir.path().join("cache");
        let run = |out: PathBuf| {
            let options = RunOptions {
                out_dir: out.clone(),
                cache_dir: Some(cache.clone()),
                config_path: config_path.display().to_string(),
                ..Default::default()
            };
            run_vote_study(&config, &options).unwrap();
            out
        };
        let first = run(dir.path().join("out1"));
        let second = run(dir.path().join("out2"));

        for name in ["probabilities.csv", "fidelity.csv", "fidelity_detail.csv", "marginals.json"] {
            let a = std::fs::read(first.join("mock").join(name)).unwrap();
            let b = std::fs::read(second.join("mock").join(name)).unwrap();
            assert_eq!(a, b, "{name} differs between identical runs");
        }

        // Second run must be answered fully from the cache.
        let manifest: serde_json::Value = serde_json::from_str(
            &std::fs::read_to_string(second.join("manifest.json")).unwrap(),
        )
        .unwrap();
        assert_eq!(manifest["backends"][0]["cache_hits"], 40);
        assert_eq!(manifest["backends"][0]["cache_fetches"], 0);
        assert_eq!(manifest["backends"][0]["ledger"]["queries"], 0);
    }

    #[test]
    fn tie_policy_flips_exact_halves() {
        let dir = tempfile::tempdir().unwrap();
        write_json(
            dir.path(),
            "codebook.json",
            r#"[
                {"name": "vote2016", "kind": "categorical", "levels": {"1": "Clinton", "2": "Trump"}}
            ]"#,
        );
        write_json(
            dir.path(),
            "table.csv",
            "respondent_id,vote2016\nr0,2\nr1,2\nr2,1\n",
        );
        write_json(
            dir.path(),
            "template.json",
            r#"{"fragments": [], "suffix": ""}"#,
        );
        write_json(
            dir.path(),
            "probe.json",
            r#"{"prompt_suffix": "In 2016, I voted for",
                "candidates": [
                    {"label": "trump", "surfaces": ["Trump"]},
                    {"label": "clinton", "surfaces": ["Clinton"]}
                ]}"#,
        );
        write_json(
            dir.path(),
            "rules.json",
            r#"[{"default": true, "distribution": {"Trump": 0.4, "Clinton": 0.4}}]"#,
        );
        let config_path = write_json(
            dir.path(),
            "study.json",
            r#"{
                "study": "vote",
                "dataset": {"table": "table.csv", "codebook": "codebook.json"},
                "template": "template.json",
                "probes": [{"label": "2016", "path": "probe.json", "human_variable": "vote2016",
                            "first_levels": ["2"], "second_levels": ["1"]}],
                "backends": [{"name": "mock", "kind": "mock", "rules": "rules.json"}]
            }"#,
        );
        let config = ExperimentConfig::from_json_file(&config_path).unwrap();

        // Default policy: exact ties excluded -> no usable pairs.
        let excluded = run_vote_study(
            &config,
            &RunOptions {
                out_dir: dir.path().join("out_excluded"),
                config_path: config_path.display().to_string(),
                ..Default::default()
            },
        )
        .unwrap();
        let probe = &excluded.per_backend[0].probes[0];
        assert_eq!(probe.n_ties, 3);
        assert_eq!(probe.whole_sample.n, 0);

        // Forced policy: ties count as the first candidate.
        let forced = run_vote_study(
            &config,
            &RunOptions {
                out_dir: dir.path().join("out_forced"),
                tie_to_first: true,
                config_path: config_path.display().to_string(),
                ..Default::default()
            },
        )
        .unwrap();
        let probe = &forced.per_backend[0].probes[0];
        assert_eq!(probe.whole_sample.n, 3);
        // Humans: 2 Trump, 1 Clinton; silicon all Trump -> agreement 2/3.
        let agreement = probe.whole_sample.agreement.unwrap();
        assert!((agreement - 2.0 / 3.0).abs() < 1e-12);
        // The probabilities file still shows the raw tie outcome.
        let probabilities =
            std::fs::read_to_string(dir.path().join("out_forced/mock/probabilities.csv")).unwrap();
        assert_eq!(probabilities.matches(",tie").count(), 3);
    }

    #[test]
    fn no_signal_records_are_counted_and_excluded() {
        let dir = tempfile::tempdir().unwrap();
        write_json(
            dir.path(),
            "codebook.json",
            r#"[
                {"name": "tag", "kind": "free_text"},
                {"name": "vote2016", "kind": "categorical", "levels": {"1": "Clinton", "2": "Trump"}}
            ]"#,
        );
        write_json(
            dir.path(),
            "table.csv",
            "respondent_id,tag,vote2016\nr0,alpha,2\nr1,beta,1\nr2,alpha,2\n",
        );
        write_json(
            dir.path(),
            "template.json",
            r#"{"fragments": [
                {"id": "tag", "variable": "tag", "text": "Tag {value}.", "passthrough": true}
            ], "suffix": ""}"#,
        );
        write_json(
            dir.path(),
            "probe.json",
            r#"{"prompt_suffix": "In 2016, I voted for",
                "candidates": [
                    {"label": "trump", "surfaces": ["Trump"]},
                    {"label": "clinton", "surfaces": ["Clinton"]}
                ]}"#,
        );
        // Records tagged beta answer off-candidate only.
        write_json(
            dir.path(),
            "rules.json",
            r#"[
                {"when_contains": "Tag beta.", "distribution": {"Nixon": 0.9}},
                {"default": true, "distribution": {"Trump": 0.8, "Clinton": 0.1}}
            ]"#,
        );
        let config_path = write_json(
            dir.path(),
            "study.json",
            r#"{
                "study": "vote",
                "dataset": {"table": "table.csv", "codebook": "codebook.json"},
                "template": "template.json",
                "probes": [{"label": "2016", "path": "probe.json", "human_variable": "vote2016",
                            "first_levels": ["2"], "second_levels": ["1"]}],
                "backends": [{"name": "mock", "kind": "mock", "rules": "rules.json"}]
            }"#,
        );
        let config = ExperimentConfig::from_json_file(&config_path).unwrap();
        let outcome = run_vote_study(
            &config,
            &RunOptions {
                out_dir: dir.path().join("out"),
                config_path: config_path.display().to_string(),
                ..Default::default()
            },
        )
        .unwrap();
        let probe = &outcome.per_backend[0].probes[0];
        assert_eq!(probe.n_no_signal, 1);
        assert_eq!(probe.whole_sample.n, 2);
        assert_eq!(probe.whole_sample.agreement, Some(1.0));
        let probabilities =
            std::fs::read_to_string(dir.path().join("out/mock/probabilities.csv")).unwrap();
        assert!(probabilities.contains("r1,2016,,,no_signal"));
    }

    #[test]
    fn rejects_unknown_vote_mapping_level() {
        let dir = tempfile::tempdir().unwrap();
        let config_path = fixture(dir.path());
        let mut config = ExperimentConfig::from_json_file(&config_path).unwrap();
        config.probes[0].first_levels = BTreeSet::from(["9".to_string()]);
        let err = run_vote_study(
            &config,
            &RunOptions {
                out_dir: dir.path().join("out"),
                config_path: String::new(),
                ..Default::default()
            },
        )
        .unwrap_err();
        assert!(matches!(err, ExperimentError::Config(_)), "{err}");
    }

    #[test]
    fn model_comparison_written_for_multiple_backends() {
        let dir = tempfile::tempdir().unwrap();
        let config_path = fixture(dir.path());
        let mut config = ExperimentConfig::from_json_file(&config_path).unwrap();
        let mut second = config.backends[0].clone();
        second.name = "mock-b".into();
        config.backends.push(second);
        let out = dir.path().join("out");
        run_vote_study(
            &config,
            &RunOptions {
                out_dir: out.clone(),
                config_path: config_path.display().to_string(),
                ..Default::default()
            },
        )
        .unwrap();
        let table = std::fs::read_to_string(out.join("model_comparison.csv")).unwrap();
        assert!(table.starts_with("probe,backend,n,agreement,tetrachoric"));
        assert!(table.contains("2016,mock,40,1.0000"));
        assert!(table.contains("2016,mock-b,40,1.0000"));
        assert!(out.join("mock/fidelity.csv").exists());
        assert!(out.join("mock-b/fidelity.csv").exists());
    }
}
