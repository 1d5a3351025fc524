//! Coded survey tables and their codebooks.
//!
//! A dataset is a CSV table of coded cells plus a codebook declaring, per
//! variable, the legal codes (categorical levels, an integer range, or free
//! text) and which codes mean "missing". Every cell is validated on load;
//! downstream layers can then treat values as either a known level or
//! missing, never garbage.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum SurveyError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error on {path}: {source}")]
    Csv {
        path: String,
        #[source]
        source: csv::Error,
    },
    #[error("codebook error: {0}")]
    Codebook(String),
    #[error("table column {0:?} is not declared in the codebook")]
    UnknownColumn(String),
    #[error("table is missing the respondent_id column")]
    MissingIdColumn,
    #[error("duplicate respondent_id {0:?}")]
    DuplicateRespondent(String),
    #[error("{} invalid cell(s):\n{}", .0.len(), format_cell_errors(.0))]
    InvalidCells(Vec<CellError>),
    #[error("unknown variable {0:?}")]
    UnknownVariable(String),
    #[error("variable {0:?} is free text and cannot be summarized numerically")]
    NotNumeric(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("datasets are not aligned: {0}")]
    Misaligned(String),
    #[error("filter error: {0}")]
    Filter(String),
}

/// One cell that failed validation, identified by row and column.
#[derive(Debug, Clone, Serialize)]
pub struct CellError {
    pub respondent_id: String,
    pub variable: String,
    pub value: String,
    pub reason: String,
}

fn format_cell_errors(errors: &[CellError]) -> String {
    let mut out = String::new();
    for e in errors.iter().take(20) {
        let _ = writeln!(
            out,
            "  respondent {} / {}: {:?} ({})",
            e.respondent_id, e.variable, e.value, e.reason
        );
    }
    if errors.len() > 20 {
        let _ = writeln!(out, "  ... and {} more", errors.len() - 20);
    }
    out
}

/// What kind of values a variable holds.
#[derive(Debug, Clone, PartialEq)]
pub enum VarKind {
    /// Coded levels in declared order: code -> human-readable label.
    Categorical { levels: IndexMap<String, String> },
    /// Integers within an inclusive range.
    Integer { min: i64, max: i64 },
    /// Uninterpreted text.
    FreeText,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VariableSpec {
    pub name: String,
    pub kind: VarKind,
    pub missing_codes: BTreeSet<String>,
}

impl VariableSpec {
    /// Checks one raw cell. `Ok(None)` means missing, `Ok(Some(v))` a valid
    /// coded value.
    pub fn check<'a>(&self, raw: &'a str) -> Result<Option<&'a str>, String> {
        // An empty cell is always missing; write_table emits missing
        // values as empty cells, so a table must round-trip through that.
        if raw.is_empty() || self.missing_codes.contains(raw) {
            return Ok(None);
        }
        match &self.kind {
            VarKind::Categorical { levels } => {
                if levels.contains_key(raw) {
                    Ok(Some(raw))
                } else {
                    Err(format!("not a declared level of {}", self.name))
                }
            }
            VarKind::Integer { min, max } => match raw.parse::<i64>() {
                Ok(v) if v >= *min && v <= *max => Ok(Some(raw)),
                Ok(v) => Err(format!("{} outside {}..={}", v, min, max)),
                Err(_) => Err("not an integer".to_string()),
            },
            VarKind::FreeText => Ok(Some(raw)),
        }
    }
}

// Raw serde shape of one codebook entry; flattened so data files stay
// readable: {"name", "kind", "levels"/"min"/"max", "missing_codes"}.
#[derive(Debug, Deserialize)]
struct RawVariableSpec {
    name: String,
    kind: String,
    #[serde(default)]
    levels: Option<IndexMap<String, String>>,
    #[serde(default)]
    min: Option<i64>,
    #[serde(default)]
    max: Option<i64>,
    #[serde(default)]
    missing_codes: Vec<String>,
}

impl RawVariableSpec {
    fn build(self) -> Result<VariableSpec, SurveyError> {
        let kind = match self.kind.as_str() {
            "categorical" => {
                let levels = self.levels.ok_or_else(|| {
                    SurveyError::Codebook(format!("{}: categorical without levels", self.name))
                })?;
                if levels.is_empty() {
                    return Err(SurveyError::Codebook(format!(
                        "{}: categorical with no levels",
                        self.name
                    )));
                }
                VarKind::Categorical { levels }
            }
            "integer" => {
                let (min, max) = match (self.min, self.max) {
                    (Some(a), Some(b)) if a <= b => (a, b),
                    (Some(_), Some(_)) => {
                        return Err(SurveyError::Codebook(format!(
                            "{}: integer range with min > max",
                            self.name
                        )))
                    }
                    _ => {
                        return Err(SurveyError::Codebook(format!(
                            "{}: integer without min/max",
                            self.name
                        )))
                    }
                };
                VarKind::Integer { min, max }
            }
            "free_text" => VarKind::FreeText,
            other => {
                return Err(SurveyError::Codebook(format!(
                    "{}: unknown kind {:?}",
                    self.name, other
                )))
            }
        };
        Ok(VariableSpec {
            name: self.name,
            kind,
            missing_codes: self.missing_codes.into_iter().collect(),
        })
    }
}

/// Ordered collection of variable declarations.
#[derive(Debug, Clone, Default)]
pub struct Codebook {
    variables: Vec<VariableSpec>,
    by_name: HashMap<String, usize>,
}

impl Codebook {
    pub fn new(variables: Vec<VariableSpec>) -> Result<Self, SurveyError> {
        let mut by_name = HashMap::new();
        for (i, v) in variables.iter().enumerate() {
            if by_name.insert(v.name.clone(), i).is_some() {
                return Err(SurveyError::Codebook(format!(
                    "duplicate variable {:?}",
                    v.name
                )));
            }
        }
        Ok(Codebook { variables, by_name })
    }

    pub fn from_json_file(path: &Path) -> Result<Self, SurveyError> {
        let text = std::fs::read_to_string(path).map_err(|source| SurveyError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let raw: Vec<RawVariableSpec> = serde_json::from_str(&text)
            .map_err(|e| SurveyError::Codebook(format!("{}: {}", path.display(), e)))?;
        let vars = raw
            .into_iter()
            .map(RawVariableSpec::build)
            .collect::<Result<Vec<_>, _>>()?;
        Codebook::new(vars)
    }

    pub fn variables(&self) -> &[VariableSpec] {
        &self.variables
    }

    pub fn get(&self, name: &str) -> Option<&VariableSpec> {
        self.by_name.get(name).map(|&i| &self.variables[i])
    }

    pub fn require(&self, name: &str) -> Result<&VariableSpec, SurveyError> {
        self.get(name)
            .ok_or_else(|| SurveyError::UnknownVariable(name.to_string()))
    }

    /// Declared level codes of a categorical variable, in codebook order.
    pub fn level_codes(&self, name: &str) -> Result<Vec<String>, SurveyError> {
        match &self.require(name)?.kind {
            VarKind::Categorical { levels } => Ok(levels.keys().cloned().collect()),
            _ => Err(SurveyError::Filter(format!(
                "{} has no declared levels",
                name
            ))),
        }
    }
}

/// One respondent's coded answers. Missing values are simply absent.
#[derive(Debug, Clone, PartialEq)]
pub struct SurveyRecord {
    pub respondent_id: String,
    values: BTreeMap<String, String>,
}

impl SurveyRecord {
    pub fn new(respondent_id: impl Into<String>) -> Self {
        SurveyRecord {
            respondent_id: respondent_id.into(),
            values: BTreeMap::new(),
        }
    }

    pub fn set(&mut self, variable: impl Into<String>, value: impl Into<String>) {
        self.values.insert(variable.into(), value.into());
    }

    pub fn get(&self, variable: &str) -> Option<&str> {
        self.values.get(variable).map(|s| s.as_str())
    }

    pub fn is_missing(&self, variable: &str) -> bool {
        self.get(variable).is_none()
    }
}

/// A validated table of records plus the codebook they validate against.
#[derive(Debug, Clone)]
pub struct SurveyDataset {
    pub codebook: Codebook,
    records: Vec<SurveyRecord>,
    pub provenance: String,
}

/// Options for reading a coded CSV table.
#[derive(Debug, Clone)]
pub struct LoadOptions {
    pub delimiter: u8,
    /// Provenance label recorded on the dataset (source name for reports).
    pub provenance: String,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions {
            delimiter: b',',
            provenance: String::new(),
        }
    }
}

/// Reads a coded CSV table and validates every cell against the codebook.
///
/// The first column must be `respondent_id`; every other header must name a
/// codebook variable. Cells matching a variable's missing codes load as
/// missing; anything else must validate, otherwise the full list of
/// offending cells is returned as one error.
pub fn load_dataset(
    table_path: &Path,
    codebook_path: &Path,
    options: &LoadOptions,
) -> Result<SurveyDataset, SurveyError> {
    let codebook = Codebook::from_json_file(codebook_path)?;
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(options.delimiter)
        .from_path(table_path)
        .map_err(|source| SurveyError::Csv {
            path: table_path.display().to_string(),
            source,
        })?;

    let headers = reader
        .headers()
        .map_err(|source| SurveyError::Csv {
            path: table_path.display().to_string(),
            source,
        })?
        .clone();
    let mut columns = Vec::new();
    for (i, h) in headers.iter().enumerate() {
        if i == 0 {
            if h != "respondent_id" {
                return Err(SurveyError::MissingIdColumn);
            }
            continue;
        }
        codebook.require(h).map_err(|_| SurveyError::UnknownColumn(h.to_string()))?;
        columns.push(h.to_string());
    }

    let mut records = Vec::new();
    let mut seen = BTreeSet::new();
    let mut cell_errors = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|source| SurveyError::Csv {
            path: table_path.display().to_string(),
            source,
        })?;
        let id = row.get(0).unwrap_or("").to_string();
        if !seen.insert(id.clone()) {
            return Err(SurveyError::DuplicateRespondent(id));
        }
        let mut record = SurveyRecord::new(id.clone());
        for (j, var) in columns.iter().enumerate() {
            let raw = row.get(j + 1).unwrap_or("");
            let spec = codebook.require(var)?;
            match spec.check(raw) {
                Ok(Some(v)) => record.set(var.clone(), v),
                Ok(None) => {}
                Err(reason) => cell_errors.push(CellError {
                    respondent_id: id.clone(),
                    variable: var.clone(),
                    value: raw.to_string(),
                    reason,
                }),
            }
        }
        records.push(record);
    }
    if !cell_errors.is_empty() {
        return Err(SurveyError::InvalidCells(cell_errors));
    }
    Ok(SurveyDataset {
        codebook,
        records,
        provenance: options.provenance.clone(),
    })
}

impl SurveyDataset {
    pub fn from_parts(
        codebook: Codebook,
        records: Vec<SurveyRecord>,
        provenance: impl Into<String>,
    ) -> Result<Self, SurveyError> {
        let mut seen = BTreeSet::new();
        for r in &records {
            if !seen.insert(r.respondent_id.clone()) {
                return Err(SurveyError::DuplicateRespondent(r.respondent_id.clone()));
            }
        }
        Ok(SurveyDataset {
            codebook,
            records,
            provenance: provenance.into(),
        })
    }

    pub fn records(&self) -> &[SurveyRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn record_by_id(&self, id: &str) -> Option<&SurveyRecord> {
        self.records.iter().find(|r| r.respondent_id == id)
    }

    /// Writes the table back out: `respondent_id` plus every codebook
    /// variable in codebook order, missing cells as empty strings.
    pub fn write_table(&self, path: &Path) -> Result<(), SurveyError> {
        let mut writer = csv::Writer::from_path(path).map_err(|source| SurveyError::Csv {
            path: path.display().to_string(),
            source,
        })?;
        let mut header = vec!["respondent_id".to_string()];
        header.extend(self.codebook.variables().iter().map(|v| v.name.clone()));
        writer
            .write_record(&header)
            .map_err(|source| SurveyError::Csv {
                path: path.display().to_string(),
                source,
            })?;
        for r in &self.records {
            let mut row = vec![r.respondent_id.clone()];
            for v in self.codebook.variables() {
                row.push(r.get(&v.name).unwrap_or("").to_string());
            }
            writer.write_record(&row).map_err(|source| SurveyError::Csv {
                path: path.display().to_string(),
                source,
            })?;
        }
        writer.flush().map_err(|source| SurveyError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Ok(())
    }

    /// Records satisfying every clause of the filter. A record missing a
    /// filtered variable is excluded.
    pub fn filter_subgroup(&self, filter: &SubgroupFilter) -> Result<SurveyDataset, SurveyError> {
        let keep = self.subgroup_indices(filter)?;
        let records = keep.into_iter().map(|i| self.records[i].clone()).collect();
        Ok(SurveyDataset {
            codebook: self.codebook.clone(),
            records,
            provenance: self.provenance.clone(),
        })
    }

    /// Indices of records satisfying every clause, in record order.
    pub fn subgroup_indices(&self, filter: &SubgroupFilter) -> Result<Vec<usize>, SurveyError> {
        for clause in &filter.clauses {
            let spec = self.codebook.require(&clause.variable)?;
            if let Accept::Levels(levels) = &clause.accept {
                if let VarKind::Categorical { levels: declared } = &spec.kind {
                    for l in levels {
                        if !declared.contains_key(l) {
                            return Err(SurveyError::Filter(format!(
                                "{:?} is not a level of {}",
                                l, clause.variable
                            )));
                        }
                    }
                }
            }
        }
        let mut keep = Vec::new();
        'records: for (i, r) in self.records.iter().enumerate() {
            for clause in &filter.clauses {
                let value = match r.get(&clause.variable) {
                    Some(v) => v,
                    None => continue 'records,
                };
                let pass = match &clause.accept {
                    Accept::Levels(levels) => levels.contains(value),
                    Accept::Range { min, max } => match value.parse::<i64>() {
                        Ok(v) => v >= *min && v <= *max,
                        Err(_) => false,
                    },
                };
                if !pass {
                    continue 'records;
                }
            }
            keep.push(i);
        }
        Ok(keep)
    }

    /// Per-variable missing percentage, rounded to one decimal.
    pub fn missingness_report(&self, variables: &[String]) -> Result<MissingnessReport, SurveyError> {
        if self.records.is_empty() {
            return Err(SurveyError::EmptyDataset);
        }
        let mut rows = Vec::new();
        for var in variables {
            self.codebook.require(var)?;
            let missing = self.records.iter().filter(|r| r.is_missing(var)).count();
            let pct = (missing as f64) * 100.0 / (self.records.len() as f64);
            rows.push(MissingnessRow {
                variable: var.clone(),
                missing,
                total: self.records.len(),
                percent: (pct * 10.0).round() / 10.0,
            });
        }
        Ok(MissingnessReport { rows })
    }

    /// Numeric summaries per variable: non-missing N, mean, sample standard
    /// deviation (N-1 denominator), min, 25th and 75th percentiles
    /// (nearest-rank), max. Categorical codes are summarized as their
    /// numeric code values; free-text variables are rejected.
    pub fn describe(&self, variables: &[String]) -> Result<Vec<DescribeRow>, SurveyError> {
        let mut rows = Vec::new();
        for var in variables {
            let spec = self.codebook.require(var)?;
            if matches!(spec.kind, VarKind::FreeText) {
                return Err(SurveyError::NotNumeric(var.clone()));
            }
            let mut values: Vec<f64> = Vec::new();
            for r in &self.records {
                if let Some(v) = r.get(var) {
                    let parsed = v.parse::<f64>().map_err(|_| {
                        SurveyError::Filter(format!(
                            "{}: code {:?} is not numeric, cannot summarize",
                            var, v
                        ))
                    })?;
                    values.push(parsed);
                }
            }
            rows.push(DescribeRow::from_values(var.clone(), &mut values));
        }
        Ok(rows)
    }
}

/// Keeps respondents that are non-missing on every listed variable in both
/// datasets. Inputs must cover the same respondents in the same order; the
/// output pair stays aligned.
pub fn complete_cases(
    a: &SurveyDataset,
    b: &SurveyDataset,
    variables: &[String],
) -> Result<(SurveyDataset, SurveyDataset), SurveyError> {
    if a.len() != b.len() {
        return Err(SurveyError::Misaligned(format!(
            "{} vs {} records",
            a.len(),
            b.len()
        )));
    }
    for (ra, rb) in a.records.iter().zip(&b.records) {
        if ra.respondent_id != rb.respondent_id {
            return Err(SurveyError::Misaligned(format!(
                "respondent {} vs {}",
                ra.respondent_id, rb.respondent_id
            )));
        }
    }
    for var in variables {
        a.codebook.require(var)?;
        b.codebook.require(var)?;
    }
    let mut keep_a = Vec::new();
    let mut keep_b = Vec::new();
    for (ra, rb) in a.records.iter().zip(&b.records) {
        let complete = variables
            .iter()
            .all(|v| !ra.is_missing(v) && !rb.is_missing(v));
        if complete {
            keep_a.push(ra.clone());
            keep_b.push(rb.clone());
        }
    }
    Ok((
        SurveyDataset {
            codebook: a.codebook.clone(),
            records: keep_a,
            provenance: a.provenance.clone(),
        },
        SurveyDataset {
            codebook: b.codebook.clone(),
            records: keep_b,
            provenance: b.provenance.clone(),
        },
    ))
}

/// A named conjunction of per-variable membership clauses.
#[derive(Debug, Clone, Deserialize, Serialize)]
pub struct SubgroupFilter {
    pub name: String,
    #[serde(default)]
    pub clauses: Vec<FilterClause>,
}

impl SubgroupFilter {
    /// The vacuous filter: keeps every record.
    pub fn whole_sample(name: impl Into<String>) -> Self {
        SubgroupFilter {
            name: name.into(),
            clauses: Vec::new(),
        }
    }

    pub fn list_from_json_file(path: &Path) -> Result<Vec<SubgroupFilter>, SurveyError> {
        let text = std::fs::read_to_string(path).map_err(|source| SurveyError::Io {
            path: path.display().to_string(),
            source,
        })?;
        serde_json::from_str(&text)
            .map_err(|e| SurveyError::Filter(format!("{}: {}", path.display(), e)))
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
pub struct FilterClause {
    pub variable: String,
    #[serde(flatten)]
    pub accept: Accept,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Accept {
    /// Value must be one of these level codes.
    Levels(BTreeSet<String>),
    /// Integer value within an inclusive range.
    Range { min: i64, max: i64 },
}

#[derive(Debug, Clone, Serialize)]
pub struct MissingnessRow {
    pub variable: String,
    pub missing: usize,
    pub total: usize,
    pub percent: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct MissingnessReport {
    pub rows: Vec<MissingnessRow>,
}

impl MissingnessReport {
    pub fn percent_for(&self, variable: &str) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.variable == variable)
            .map(|r| r.percent)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct DescribeRow {
    pub variable: String,
    pub n: usize,
    pub mean: Option<f64>,
    pub sd: Option<f64>,
    pub min: Option<f64>,
    pub p25: Option<f64>,
    pub p75: Option<f64>,
    pub max: Option<f64>,
}

impl DescribeRow {
    fn from_values(variable: String, values: &mut Vec<f64>) -> Self {
        let n = values.len();
        if n == 0 {
            return DescribeRow {
                variable,
                n: 0,
                mean: None,
                sd: None,
                min: None,
                p25: None,
                p75: None,
                max: None,
            };
        }
        values.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mean = values.iter().sum::<f64>() / n as f64;
        let sd = if n >= 2 {
            let ss = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>();
            Some((ss / (n as f64 - 1.0)).sqrt())
        } else {
            None
        };
        DescribeRow {
            variable,
            n,
            mean: Some(mean),
            sd,
            min: Some(values[0]),
            p25: Some(nearest_rank(values, 25.0)),
            p75: Some(nearest_rank(values, 75.0)),
            max: Some(values[n - 1]),
        }
    }
}

// Nearest-rank percentile on a sorted slice: value at rank ceil(p/100 * n),
// 1-indexed.
fn nearest_rank(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let rank = ((p / 100.0) * n as f64).ceil() as usize;
    sorted[rank.clamp(1, n) - 1]
}
