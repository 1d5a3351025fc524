//! Word-list elicitation: for each respondent, ask the conditioned model
//! to list words describing each party, then extract and tabulate the
//! lists. A backend failure marks that record/party cell as failed and the
//! run keeps going — a partial harvest is still a harvest.

use std::collections::BTreeMap;
use std::path::PathBuf;

use crate::backend::CompletionRequest;
use crate::exec::parallel_map;
use crate::extraction::{extract_word_list, word_frequencies, WordList, LIST_LEN};
use crate::survey::SurveyDataset;
use crate::templating::render_backstory;

use super::{
    backend_stats, build_study_backend, sanitize_name, write_report, ExperimentConfig,
    ExperimentError, RunManifest, RunOptions, StudyKind, WordlistConfig,
};

/// Placeholder in the template suffix that receives the party surface.
pub const PARTY_PLACEHOLDER: &str = "{party}";

#[derive(Debug)]
pub struct WordlistOutcome {
    pub backend: String,
    pub dir: PathBuf,
    pub n_records: usize,
    pub n_failures: u64,
    pub n_compliant: u64,
    pub n_non_compliant: u64,
    pub manifest_path: PathBuf,
}

struct Harvest {
    respondent_id: String,
    party: String,
    /// None when the backend failed on this cell.
    list: Option<WordList>,
    group: String,
}

fn group_key(
    dataset: &SurveyDataset,
    record_index: usize,
    wl: &WordlistConfig,
    party_label: &str,
) -> String {
    match &wl.group_by {
        None => format!("target={party_label}"),
        Some(var) => {
            let value = dataset.records()[record_index]
                .get(var)
                .unwrap_or("missing");
            format!("{var}={value}|target={party_label}")
        }
    }
}

/// Runs the word-list study for every configured backend.
pub fn run_wordlist_study(
    config: &ExperimentConfig,
    options: &RunOptions,
) -> Result<Vec<WordlistOutcome>, ExperimentError> {
    if config.study != StudyKind::Wordlist {
        return Err(ExperimentError::Config(
            "config does not describe a word-list study".into(),
        ));
    }
    let wl = config.wordlist.clone().unwrap_or_default();
    if wl.parties.is_empty() {
        return Err(ExperimentError::Config(
            "word-list study needs at least one target party".into(),
        ));
    }
    let dataset = config.load_dataset()?;
    let template = config.load_template()?;
    template.validate(&dataset.codebook)?;
    if !template.suffix.contains(PARTY_PLACEHOLDER) {
        return Err(ExperimentError::Config(format!(
            "word-list template suffix must contain {PARTY_PLACEHOLDER:?}"
        )));
    }
    if let Some(var) = &wl.group_by {
        dataset.codebook.require(var).map_err(ExperimentError::from)?;
    }

    std::fs::create_dir_all(&options.out_dir).map_err(super::io_err(&options.out_dir))?;
    let mut manifest = RunManifest::begin("wordlist", config, options)?;
    manifest.bump("records", dataset.len() as u64);
    let cache_dir = options.cache_dir.as_deref().or(config.cache.as_deref());

    let mut outcomes = Vec::new();
    for descriptor in &config.backends {
        let backend = build_study_backend(descriptor, config.seed, cache_dir)?;
        let sub = sanitize_name(&descriptor.name);

        // One work item per (record, party), record-major so output order
        // is stable and resumable.
        let mut items: Vec<(usize, usize)> = Vec::new();
        for r in 0..dataset.len() {
            for p in 0..wl.parties.len() {
                items.push((r, p));
            }
        }
        let results = parallel_map(&items, config.parallelism, |_, &(r, p)| {
            let record = &dataset.records()[r];
            let party = &wl.parties[p];
            let backstory = render_backstory(&template, record)?;
            let prompt = backstory.replace(PARTY_PLACEHOLDER, &party.surface);
            let request = CompletionRequest {
                prompt,
                max_tokens: wl.max_tokens,
                temperature: wl.temperature,
                stop_sequences: None,
                top_logprobs: None,
            };
            Ok::<_, ExperimentError>(match backend.as_lm().complete(&request) {
                Ok(response) => Some(extract_word_list(&response.text)),
                // Failed cells are recorded, not fatal.
                Err(_) => None,
            })
        });

        let mut harvest = Vec::with_capacity(items.len());
        for (&(r, p), result) in items.iter().zip(results) {
            let list = result?;
            harvest.push(Harvest {
                respondent_id: dataset.records()[r].respondent_id.clone(),
                party: wl.parties[p].label.clone(),
                group: group_key(&dataset, r, &wl, &wl.parties[p].label),
                list,
            });
        }

        let mut n_failures = 0u64;
        let mut n_compliant = 0u64;
        let mut n_non_compliant = 0u64;
        // (party, n_entries) -> count, for the compliance histogram.
        let mut histogram: BTreeMap<(String, usize), u64> = BTreeMap::new();
        let mut groups: BTreeMap<String, Vec<WordList>> = BTreeMap::new();

        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec![
            "respondent_id".to_string(),
            "party".to_string(),
            "failed".to_string(),
            "compliant".to_string(),
        ];
        for i in 1..=LIST_LEN {
            header.push(format!("entry{i}"));
        }
        header.push("raw".to_string());
        w.write_record(&header).expect("csv into memory");

        for h in &harvest {
            match &h.list {
                None => {
                    n_failures += 1;
                    let mut row = vec![
                        h.respondent_id.clone(),
                        h.party.clone(),
                        "true".to_string(),
                        "false".to_string(),
                    ];
                    row.extend(std::iter::repeat(String::new()).take(LIST_LEN + 1));
                    w.write_record(&row).expect("csv into memory");
                }
                Some(list) => {
                    if list.compliant {
                        n_compliant += 1;
                    } else {
                        n_non_compliant += 1;
                    }
                    *histogram
                        .entry((h.party.clone(), list.entries.len()))
                        .or_insert(0) += 1;
                    groups.entry(h.group.clone()).or_default().push(list.clone());
                    let mut row = vec![
                        h.respondent_id.clone(),
                        h.party.clone(),
                        "false".to_string(),
                        list.compliant.to_string(),
                    ];
                    row.extend(list.padded());
                    row.push(list.raw.clone());
                    w.write_record(&row).expect("csv into memory");
                }
            }
        }
        let bytes = w.into_inner().expect("csv into memory");
        write_report(
            &options.out_dir,
            &format!("{sub}/extraction.csv"),
            std::str::from_utf8(&bytes).expect("csv output is utf-8"),
            &mut manifest,
        )?;

        let mut hist = String::from("party,n_entries,count\n");
        for ((party, n_entries), count) in &histogram {
            hist.push_str(&format!("{party},{n_entries},{count}\n"));
        }
        write_report(
            &options.out_dir,
            &format!("{sub}/compliance_histogram.csv"),
            &hist,
            &mut manifest,
        )?;

        let mut freq = csv::Writer::from_writer(Vec::new());
        freq.write_record(["group", "word", "count", "rel_freq"])
            .expect("csv into memory");
        for row in word_frequencies(&groups) {
            freq.write_record([
                row.group.as_str(),
                row.word.as_str(),
                &row.count.to_string(),
                &format!("{:.6}", row.rel_freq),
            ])
            .expect("csv into memory");
        }
        let bytes = freq.into_inner().expect("csv into memory");
        write_report(
            &options.out_dir,
            &format!("{sub}/word_frequencies.csv"),
            std::str::from_utf8(&bytes).expect("csv output is utf-8"),
            &mut manifest,
        )?;

        manifest.bump("queries_planned", items.len() as u64);
        manifest.bump("failures", n_failures);
        manifest.bump("compliant", n_compliant);
        manifest.bump("non_compliant", n_non_compliant);
        manifest.backends.push(backend_stats(descriptor, &backend));
        outcomes.push(WordlistOutcome {
            backend: descriptor.name.clone(),
            dir: options.out_dir.join(&sub),
            n_records: dataset.len(),
            n_failures,
            n_compliant,
            n_non_compliant,
            manifest_path: PathBuf::new(),
        });
    }

    let manifest_path = manifest.finish(&options.out_dir)?;
    for o in &mut outcomes {
        o.manifest_path = manifest_path.clone();
    }
    Ok(outcomes)
}
