//! Backstory ablation: rerun the vote recovery with systematically
//! reduced templates and report how much each conditioning sentence
//! contributes to agreement with the human votes.

use std::path::PathBuf;

use crate::stats::binary_fidelity;
use crate::survey::SurveyDataset;
use crate::templating::ablation_variants;

use super::vote::probe_rows;
use super::{
    backend_stats, build_study_backend, check_probe_config, human_vote, sanitize_name,
    write_report, ExperimentConfig, ExperimentError, RunManifest, RunOptions, StudyKind,
};

/// Whole-sample result for one reduced template.
#[derive(Debug, Clone)]
pub struct AblationRow {
    pub variant: String,
    pub n_fragments: usize,
    /// Decided pairs entering the agreement.
    pub n: usize,
    pub n_ties: u64,
    pub n_no_signal: u64,
    pub agreement: Option<f64>,
}

#[derive(Debug)]
pub struct AblationOutcome {
    pub backend: String,
    pub rows: Vec<AblationRow>,
    pub manifest_path: PathBuf,
}

fn human_votes(
    dataset: &SurveyDataset,
    cfg: &super::ProbeConfig,
) -> Vec<Option<bool>> {
    dataset
        .records()
        .iter()
        .map(|r| human_vote(r, cfg))
        .collect()
}

/// Runs every template variant against the first configured backend and
/// writes `ablation.csv`: one row per variant with its whole-sample
/// proportion agreement. The `full` variant reproduces the plain vote
/// study's number; the `empty` variant conditions on nothing, so the
/// model makes one constant prediction for every record.
pub fn run_ablation(
    config: &ExperimentConfig,
    options: &RunOptions,
) -> Result<AblationOutcome, ExperimentError> {
    if config.study != StudyKind::Ablation {
        return Err(ExperimentError::Config(
            "config does not describe an ablation study".into(),
        ));
    }
    let probe_cfg = match config.probes.as_slice() {
        [one] => one,
        _ => {
            return Err(ExperimentError::Config(
                "an ablation study takes exactly one probe".into(),
            ))
        }
    };
    let dataset = config.load_dataset()?;
    let template = config.load_template()?;
    template.validate(&dataset.codebook)?;
    check_probe_config(&dataset, probe_cfg)?;
    let probe = config.load_probe(probe_cfg)?;
    let policy = config.ablation.clone().unwrap_or_default();
    let variants = ablation_variants(&template, &policy)?;

    std::fs::create_dir_all(&options.out_dir).map_err(super::io_err(&options.out_dir))?;
    let mut manifest = RunManifest::begin("ablation", config, options)?;
    manifest.bump("records", dataset.len() as u64);
    manifest.bump("variants", variants.len() as u64);
    let cache_dir = options.cache_dir.as_deref().or(config.cache.as_deref());

    let descriptor = &config.backends[0];
    if config.backends.len() > 1 {
        manifest
            .notes
            .push("ablation uses the first configured backend only".into());
    }
    let backend = build_study_backend(descriptor, config.seed, cache_dir)?;
    let humans = human_votes(&dataset, probe_cfg);
    let all_indices: Vec<usize> = (0..dataset.len()).collect();

    let mut rows = Vec::with_capacity(variants.len());
    for variant in &variants {
        let result = probe_rows(
            &dataset,
            &variant.template,
            &probe,
            backend.as_lm(),
            config.parallelism,
            options.tie_to_first,
        )?;
        let pairs: Vec<(Option<bool>, Option<bool>)> = all_indices
            .iter()
            .map(|&i| (humans[i], result.votes[i]))
            .collect();
        let fidelity = binary_fidelity(&pairs);
        manifest.bump("queries_planned", dataset.len() as u64);
        manifest.bump("no_signal", result.n_no_signal);
        manifest.bump("ties", result.n_ties);
        rows.push(AblationRow {
            variant: variant.label.clone(),
            n_fragments: variant.template.fragments.len(),
            n: fidelity.n,
            n_ties: result.n_ties,
            n_no_signal: result.n_no_signal,
            agreement: fidelity.agreement,
        });
    }

    let sub = sanitize_name(&descriptor.name);
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["variant", "n_fragments", "n", "n_ties", "n_no_signal", "agreement"])
        .expect("csv into memory");
    for row in &rows {
        w.write_record([
            row.variant.as_str(),
            &row.n_fragments.to_string(),
            &row.n.to_string(),
            &row.n_ties.to_string(),
            &row.n_no_signal.to_string(),
            &row.agreement.map(|v| format!("{v:.4}")).unwrap_or_default(),
        ])
        .expect("csv into memory");
    }
    let bytes = w.into_inner().expect("csv into memory");
    write_report(
        &options.out_dir,
        &format!("{sub}/ablation.csv"),
        std::str::from_utf8(&bytes).expect("csv output is utf-8"),
        &mut manifest,
    )?;

    manifest.backends.push(backend_stats(descriptor, &backend));
    let manifest_path = manifest.finish(&options.out_dir)?;
    Ok(AblationOutcome {
        backend: descriptor.name.clone(),
        rows,
        manifest_path,
    })
}
