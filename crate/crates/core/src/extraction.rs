//! Parsing free-text completions back into coded data.
//!
//! Word-list prompts ask for four words; models answer with numbered
//! lines, bare lines, comma runs, or an essay that ignores the
//! instruction. The extractor tries those shapes in order of confidence
//! and marks the response non-compliant when none fits. Closed interview
//! answers are matched against the item's answer surfaces after
//! truncation and case folding; open numeric answers are parsed and
//! range-checked against the codebook.

use std::collections::BTreeMap;

use regex::Regex;
use serde::Serialize;

use crate::survey::{Codebook, VarKind};
use crate::templating::InterviewItem;

#[derive(Debug, thiserror::Error)]
pub enum ExtractionError {
    #[error("closed-answer matching needs at least two options, item {item:?} has {got}")]
    TooFewOptions { item: String, got: usize },
    #[error("item {0:?} has no options and its variable is not integer-coded")]
    NotCodable(String),
    #[error("unknown variable {0:?}")]
    UnknownVariable(String),
}

/// How many entries a word-list answer is expected to carry.
pub const LIST_LEN: usize = 4;

// An item longer than this many words is prose, not a list entry.
const MAX_ENTRY_WORDS: usize = 6;

/// A parsed word-list response.
#[derive(Debug, Clone, Serialize)]
pub struct WordList {
    /// Cleaned entries in response order, at most [`LIST_LEN`].
    pub entries: Vec<String>,
    /// True when the completion parsed as a list at all.
    pub compliant: bool,
    /// The completion as received, for audit.
    pub raw: String,
}

impl WordList {
    /// Entries padded with empty strings to exactly [`LIST_LEN`] slots, so
    /// downstream tables keep a fixed width.
    pub fn padded(&self) -> [String; LIST_LEN] {
        let mut out: [String; LIST_LEN] = Default::default();
        for (slot, e) in out.iter_mut().zip(&self.entries) {
            *slot = e.clone();
        }
        out
    }
}

fn clean_entry(raw: &str) -> String {
    let trimmed = raw.trim();
    let stripped = trimmed
        .strip_suffix(['.', ',', ';'])
        .unwrap_or(trimmed);
    stripped.trim().to_string()
}

fn listlike(items: &[String]) -> bool {
    items.len() >= 2
        && items
            .iter()
            .all(|i| !i.is_empty() && i.split_whitespace().count() <= MAX_ENTRY_WORDS)
}

/// Parses a word-list completion.
///
/// Shapes tried in order: numbered lines ("1. x" / "2) y"), one item per
/// line, comma-separated items. Numbering is explicit enough to accept on
/// its own; the other two shapes must yield at least two short items or
/// the completion is treated as prose. Entries are trimmed, stripped of
/// one trailing `.,;`, and capped at four.
pub fn extract_word_list(completion: &str) -> WordList {
    let numbered = Regex::new(r"(?m)^\s*\d+[.)]\s*(.+)$").expect("static pattern");
    let raw = completion.to_string();

    let numbered_items: Vec<String> = numbered
        .captures_iter(completion)
        .map(|c| clean_entry(&c[1]))
        .filter(|e| !e.is_empty())
        .collect();
    if !numbered_items.is_empty() {
        return WordList {
            entries: numbered_items.into_iter().take(LIST_LEN).collect(),
            compliant: true,
            raw,
        };
    }

    let line_items: Vec<String> = completion
        .lines()
        .map(clean_entry)
        .filter(|e| !e.is_empty())
        .collect();
    if listlike(&line_items) {
        return WordList {
            entries: line_items.into_iter().take(LIST_LEN).collect(),
            compliant: true,
            raw,
        };
    }

    let comma_items: Vec<String> = completion
        .split(',')
        .map(clean_entry)
        .filter(|e| !e.is_empty())
        .collect();
    if listlike(&comma_items) {
        return WordList {
            entries: comma_items.into_iter().take(LIST_LEN).collect(),
            compliant: true,
            raw,
        };
    }

    WordList {
        entries: Vec::new(),
        compliant: false,
        raw,
    }
}

/// Matches a closed answer against the item's surfaces: truncate at the
/// first newline, trim, lowercase, then require an exact hit. Returns the
/// matched option's code.
pub fn match_closed_answer(
    completion: &str,
    item: &InterviewItem,
) -> Result<Option<String>, ExtractionError> {
    let options = item.options.as_deref().unwrap_or(&[]);
    if options.len() < 2 {
        return Err(ExtractionError::TooFewOptions {
            item: item.variable.clone(),
            got: options.len(),
        });
    }
    let head = completion.split('\n').next().unwrap_or("");
    let folded = head.trim().to_lowercase();
    for opt in options {
        if folded == opt.surface.to_lowercase() {
            return Ok(Some(opt.code.clone()));
        }
    }
    Ok(None)
}

/// Codes one interview completion for `item`: closed items go through
/// surface matching, open items parse as an integer and must land inside
/// the variable's declared range. `None` is a miss — the silicon record
/// stays missing on that variable.
pub fn code_interview_completion(
    completion: &str,
    item: &InterviewItem,
    codebook: &Codebook,
) -> Result<Option<String>, ExtractionError> {
    if item.options.is_some() {
        return match_closed_answer(completion, item);
    }
    let spec = codebook
        .get(&item.variable)
        .ok_or_else(|| ExtractionError::UnknownVariable(item.variable.clone()))?;
    let VarKind::Integer { min, max } = &spec.kind else {
        return Err(ExtractionError::NotCodable(item.variable.clone()));
    };
    let head = completion.split('\n').next().unwrap_or("");
    let token = head.split_whitespace().next().unwrap_or("");
    let token = token.trim_matches(|c: char| !c.is_ascii_digit() && c != '-');
    match token.parse::<i64>() {
        Ok(v) if v >= *min && v <= *max => Ok(Some(v.to_string())),
        _ => Ok(None),
    }
}

/// One row of a word-frequency table.
#[derive(Debug, Clone, Serialize)]
pub struct FrequencyRow {
    pub group: String,
    pub word: String,
    pub count: u64,
    /// Share of the group's total extracted words.
    pub rel_freq: f64,
}

/// Tallies lowercased entries per group. Blank slots are excluded; rows
/// sort by group, then descending count, then word, so output is stable.
pub fn word_frequencies(groups: &BTreeMap<String, Vec<WordList>>) -> Vec<FrequencyRow> {
    let mut rows = Vec::new();
    for (group, lists) in groups {
        let mut counts: BTreeMap<String, u64> = BTreeMap::new();
        let mut total = 0u64;
        for list in lists {
            for entry in &list.entries {
                let word = entry.to_lowercase();
                if word.is_empty() {
                    continue;
                }
                *counts.entry(word).or_insert(0) += 1;
                total += 1;
            }
        }
        for (word, count) in counts {
            rows.push(FrequencyRow {
                group: group.clone(),
                word,
                count,
                rel_freq: count as f64 / total as f64,
            });
        }
    }
    rows.sort_by(|a, b| {
        a.group
            .cmp(&b.group)
            .then(b.count.cmp(&a.count))
            .then(a.word.cmp(&b.word))
    });
    rows
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::survey::VariableSpec;
    use crate::templating::AnswerOption;

    #[test]
    fn numbered_lines_extract() {
        let w = extract_word_list("1. Strong\n2. Patriotic\n3. Honest\n4. Faithful");
        assert!(w.compliant);
        assert_eq!(w.entries, vec!["Strong", "Patriotic", "Honest", "Faithful"]);
    }

    #[test]
    fn numbered_lines_with_parens_and_padding() {
        let w = extract_word_list(" 1) liberal.\n 2) educated,\n");
        assert!(w.compliant);
        assert_eq!(w.entries, vec!["liberal", "educated"]);
        assert_eq!(
            w.padded(),
            ["liberal".to_string(), "educated".to_string(), String::new(), String::new()]
        );
    }

    #[test]
    fn newline_items_extract() {
        let w = extract_word_list("hardworking\nreligious\ntraditional\nproud");
        assert!(w.compliant);
        assert_eq!(w.entries.len(), 4);
        assert_eq!(w.entries[0], "hardworking");
    }

    #[test]
    fn comma_items_extract() {
        let w = extract_word_list("smart, kind, open minded, urban");
        assert!(w.compliant);
        assert_eq!(w.entries, vec!["smart", "kind", "open minded", "urban"]);
    }

    #[test]
    fn first_four_of_more() {
        let w = extract_word_list("a, b, c, d, e, f");
        assert_eq!(w.entries, vec!["a", "b", "c", "d"]);
    }

    #[test]
    fn essay_is_non_compliant() {
        let essay = "I think Democrats are people who care deeply about their communities and tend to vote for social programs.";
        let w = extract_word_list(essay);
        assert!(!w.compliant);
        assert!(w.entries.is_empty());
        assert_eq!(w.raw, essay);
    }

    #[test]
    fn single_bare_word_is_non_compliant() {
        // One unnumbered item is indistinguishable from a prose fragment.
        let w = extract_word_list("liberal");
        assert!(!w.compliant);
    }

    #[test]
    fn single_numbered_item_is_compliant() {
        let w = extract_word_list("1. liberal");
        assert!(w.compliant);
        assert_eq!(w.entries, vec!["liberal"]);
    }

    #[test]
    fn multiline_prose_rejected_by_word_guard() {
        let w = extract_word_list(
            "They are usually very progressive people in my experience\nand they want the government to do more",
        );
        assert!(!w.compliant);
    }

    #[test]
    fn extraction_is_idempotent() {
        let w = extract_word_list("1. Strong\n2. Patriotic\n3. open minded\n4. Faithful");
        let again = extract_word_list(&w.entries.join("\n"));
        assert_eq!(again.entries, w.entries);
    }

    fn yes_no_item() -> InterviewItem {
        InterviewItem {
            variable: "voted".into(),
            question: "Did you vote?".into(),
            options: Some(vec![
                AnswerOption { surface: "yes".into(), code: "1".into() },
                AnswerOption { surface: "no".into(), code: "0".into() },
            ]),
            conditional_on: None,
        }
    }

    #[test]
    fn closed_answer_exact_match() {
        let item = yes_no_item();
        assert_eq!(match_closed_answer(" yes", &item).unwrap(), Some("1".into()));
        assert_eq!(match_closed_answer("NO", &item).unwrap(), Some("0".into()));
    }

    #[test]
    fn closed_answer_truncates_at_newline() {
        let item = yes_no_item();
        assert_eq!(
            match_closed_answer("yes\nInterviewer: next question", &item).unwrap(),
            Some("1".into())
        );
    }

    #[test]
    fn closed_answer_miss_is_none() {
        let item = yes_no_item();
        assert_eq!(match_closed_answer("maybe", &item).unwrap(), None);
        // Prefix is not a match; only the full folded surface counts.
        assert_eq!(match_closed_answer("yes sir", &item).unwrap(), None);
    }

    #[test]
    fn closed_answer_needs_two_options() {
        let mut item = yes_no_item();
        item.options = Some(vec![AnswerOption { surface: "yes".into(), code: "1".into() }]);
        assert!(matches!(
            match_closed_answer("yes", &item),
            Err(ExtractionError::TooFewOptions { .. })
        ));
    }

    fn age_codebook() -> Codebook {
        Codebook::new(vec![VariableSpec {
            name: "age".into(),
            kind: VarKind::Integer { min: 18, max: 110 },
            missing_codes: Default::default(),
        }])
        .unwrap()
    }

    fn age_item() -> InterviewItem {
        InterviewItem {
            variable: "age".into(),
            question: "How old are you?".into(),
            options: None,
            conditional_on: None,
        }
    }

    #[test]
    fn open_integer_parses_and_range_checks() {
        let cb = age_codebook();
        let item = age_item();
        assert_eq!(code_interview_completion("29", &item, &cb).unwrap(), Some("29".into()));
        assert_eq!(
            code_interview_completion("29 years old", &item, &cb).unwrap(),
            Some("29".into())
        );
        assert_eq!(code_interview_completion("29.", &item, &cb).unwrap(), Some("29".into()));
        // Out of declared range or unparseable stays missing.
        assert_eq!(code_interview_completion("8", &item, &cb).unwrap(), None);
        assert_eq!(code_interview_completion("200", &item, &cb).unwrap(), None);
        assert_eq!(code_interview_completion("none of your business", &item, &cb).unwrap(), None);
    }

    #[test]
    fn open_item_on_categorical_variable_errors() {
        let cb = Codebook::new(vec![VariableSpec {
            name: "age".into(),
            kind: VarKind::FreeText,
            missing_codes: Default::default(),
        }])
        .unwrap();
        assert!(matches!(
            code_interview_completion("29", &age_item(), &cb),
            Err(ExtractionError::NotCodable(_))
        ));
    }

    #[test]
    fn frequencies_fold_case_and_sort() {
        let mut groups = BTreeMap::new();
        groups.insert(
            "dem_of_rep".to_string(),
            vec![
                extract_word_list("1. Racist\n2. rich\n3. racist\n4. old"),
                extract_word_list("1. RICH\n2. racist"),
            ],
        );
        let rows = word_frequencies(&groups);
        assert_eq!(rows[0].word, "racist");
        assert_eq!(rows[0].count, 3);
        assert!((rows[0].rel_freq - 0.5).abs() < 1e-12);
        assert_eq!(rows[1].word, "rich");
        assert_eq!(rows[1].count, 2);
        assert_eq!(rows[2].word, "old");
        let total: f64 = rows.iter().map(|r| r.rel_freq).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn frequencies_skip_blank_and_group_separately() {
        let mut groups = BTreeMap::new();
        groups.insert("a".to_string(), vec![extract_word_list("essay that is long enough to fail the parser entirely")]);
        groups.insert("b".to_string(), vec![extract_word_list("1. one")]);
        let rows = word_frequencies(&groups);
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].group, "b");
        assert_eq!(rows[0].count, 1);
        assert!((rows[0].rel_freq - 1.0).abs() < 1e-12);
    }
}
