//! Agreement and association statistics over coded survey variables.
//!
//! Every estimator returns a [`MetricResult`]: a value when one is
//! defined, otherwise `None` plus a degenerate reason in the diagnostics.
//! Degenerate inputs (a zero margin, no variance) are data facts to be
//! reported, not process errors; `StatError` is reserved for structural
//! misuse such as mismatched vector lengths or a non-2x2 table where one
//! is required.

pub mod bivariate;
pub mod icc;
pub mod report;
pub mod tetrachoric;

use std::collections::BTreeMap;

use serde::Serialize;

use crate::survey::{SurveyDataset, VarKind};

pub use bivariate::{bvn_upper, phi, quantile};
pub use icc::{icc_pair, IccEstimates};
pub use tetrachoric::tetrachoric;

#[derive(Debug, thiserror::Error)]
pub enum StatError {
    #[error("paired vectors differ in length: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("value {0:?} is not among the declared levels")]
    UnknownLevel(String),
    #[error("no jointly observed pairs")]
    NoData,
    #[error("expected a 2x2 table, got {rows}x{cols}")]
    NotTwoByTwo { rows: usize, cols: usize },
    #[error("table is not square with matching levels")]
    NotSquare,
    #[error("need at least {need} paired subjects, got {got}")]
    TooFewSubjects { need: usize, got: usize },
    #[error("variable {0:?} is free text; association needs coded levels")]
    FreeTextVariable(String),
    #[error("unknown variable {0:?}")]
    UnknownVariable(String),
    #[error("matrices cover different variable sets")]
    VariableSetMismatch,
    #[error("datasets are not row-aligned: {0}")]
    Misaligned(String),
    #[error("quantile undefined at p = {0}")]
    QuantileDomain(f64),
    #[error("root finder could not bracket a solution")]
    NoBracket,
}

/// Estimator diagnostics carried alongside the value.
#[derive(Debug, Clone, Default, Serialize)]
pub struct Diagnostics {
    /// Root-finder iterations, when an iterative solve ran.
    pub iterations: u32,
    /// A zero cell was replaced by the 0.5 continuity correction.
    pub zero_cell_corrected: bool,
    /// The estimate hit the boundary of the parameter space.
    pub clamped: bool,
    /// Why no value is defined, when `value` is `None`.
    pub degenerate: Option<String>,
    /// Named intermediate quantities, for audit.
    pub components: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct MetricResult {
    pub value: Option<f64>,
    pub diagnostics: Diagnostics,
}

impl MetricResult {
    pub fn of(value: f64) -> Self {
        MetricResult {
            value: Some(value),
            diagnostics: Diagnostics::default(),
        }
    }

    pub fn degenerate(reason: impl Into<String>) -> Self {
        MetricResult {
            value: None,
            diagnostics: Diagnostics {
                degenerate: Some(reason.into()),
                ..Diagnostics::default()
            },
        }
    }
}

/// A cross-tabulation with explicit, ordered level lists.
#[derive(Debug, Clone, Serialize)]
pub struct ContingencyTable {
    pub row_levels: Vec<String>,
    pub col_levels: Vec<String>,
    /// counts[i][j] pairs row level i with column level j.
    pub counts: Vec<Vec<u64>>,
    pub n: u64,
}

impl ContingencyTable {
    /// Builds a table from fixed counts; levels and count shape must agree.
    pub fn from_counts(
        row_levels: Vec<String>,
        col_levels: Vec<String>,
        counts: Vec<Vec<u64>>,
    ) -> Result<Self, StatError> {
        if counts.len() != row_levels.len()
            || counts.iter().any(|r| r.len() != col_levels.len())
        {
            return Err(StatError::NotSquare);
        }
        let n = counts.iter().flatten().sum();
        if n == 0 {
            return Err(StatError::NoData);
        }
        Ok(ContingencyTable {
            row_levels,
            col_levels,
            counts,
            n,
        })
    }

    pub fn row_margins(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn col_margins(&self) -> Vec<u64> {
        (0..self.col_levels.len())
            .map(|j| self.counts.iter().map(|r| r[j]).sum())
            .collect()
    }

    fn is_square(&self) -> bool {
        self.row_levels == self.col_levels
    }
}

/// Cross-tabulates paired codes, keeping only pairs observed on both
/// sides. Codes must come from the declared level lists.
pub fn crosstab<'a>(
    pairs: impl IntoIterator<Item = (Option<&'a str>, Option<&'a str>)>,
    row_levels: &[String],
    col_levels: &[String],
) -> Result<ContingencyTable, StatError> {
    let row_index: BTreeMap<&str, usize> = row_levels
        .iter()
        .enumerate()
        .map(|(i, l)| (l.as_str(), i))
        .collect();
    let col_index: BTreeMap<&str, usize> = col_levels
        .iter()
        .enumerate()
        .map(|(i, l)| (l.as_str(), i))
        .collect();
    let mut counts = vec![vec![0u64; col_levels.len()]; row_levels.len()];
    let mut n = 0u64;
    for (a, b) in pairs {
        let (Some(a), Some(b)) = (a, b) else { continue };
        let &i = row_index
            .get(a)
            .ok_or_else(|| StatError::UnknownLevel(a.to_string()))?;
        let &j = col_index
            .get(b)
            .ok_or_else(|| StatError::UnknownLevel(b.to_string()))?;
        counts[i][j] += 1;
        n += 1;
    }
    if n == 0 {
        return Err(StatError::NoData);
    }
    Ok(ContingencyTable {
        row_levels: row_levels.to_vec(),
        col_levels: col_levels.to_vec(),
        counts,
        n,
    })
}

/// Share of pairs on the main diagonal. Requires a square table with
/// identical level order on both axes.
pub fn proportion_agreement(table: &ContingencyTable) -> Result<f64, StatError> {
    if !table.is_square() {
        return Err(StatError::NotSquare);
    }
    let diag: u64 = (0..table.row_levels.len())
        .map(|i| table.counts[i][i])
        .sum();
    Ok(diag as f64 / table.n as f64)
}

/// Cohen's kappa: chance-corrected agreement. When expected agreement is
/// already 1 (all mass in one level on both sides) the correction divides
/// by zero and the statistic is undefined.
pub fn cohens_kappa(table: &ContingencyTable) -> Result<MetricResult, StatError> {
    let po = proportion_agreement(table)?;
    let n = table.n as f64;
    let rows = table.row_margins();
    let cols = table.col_margins();
    let pe: f64 = rows
        .iter()
        .zip(&cols)
        .map(|(&r, &c)| (r as f64 / n) * (c as f64 / n))
        .sum();
    let mut result = if (1.0 - pe).abs() < 1e-15 {
        MetricResult::degenerate("expected agreement is 1; kappa undefined")
    } else {
        MetricResult::of((po - pe) / (1.0 - pe))
    };
    result.diagnostics.components.insert("po".into(), po);
    result.diagnostics.components.insert("pe".into(), pe);
    Ok(result)
}

/// Cramer's V. Levels with a zero margin are dropped first (they carry no
/// observations); if fewer than two levels survive on either axis the
/// association is undefined for lack of variance.
pub fn cramers_v(table: &ContingencyTable) -> Result<MetricResult, StatError> {
    let rows_keep: Vec<usize> = table
        .row_margins()
        .iter()
        .enumerate()
        .filter(|(_, &m)| m > 0)
        .map(|(i, _)| i)
        .collect();
    let cols_keep: Vec<usize> = table
        .col_margins()
        .iter()
        .enumerate()
        .filter(|(_, &m)| m > 0)
        .map(|(j, _)| j)
        .collect();
    if rows_keep.len() < 2 || cols_keep.len() < 2 {
        return Ok(MetricResult::degenerate(
            "fewer than two observed levels; association undefined",
        ));
    }
    let n = table.n as f64;
    let rm = table.row_margins();
    let cm = table.col_margins();
    let mut chi2 = 0.0;
    for &i in &rows_keep {
        for &j in &cols_keep {
            let expected = rm[i] as f64 * cm[j] as f64 / n;
            let observed = table.counts[i][j] as f64;
            chi2 += (observed - expected).powi(2) / expected;
        }
    }
    let k = rows_keep.len().min(cols_keep.len()) as f64;
    let v = (chi2 / (n * (k - 1.0))).sqrt();
    let mut result = MetricResult::of(v);
    result.diagnostics.components.insert("chi2".into(), chi2);
    result
        .diagnostics
        .components
        .insert("levels".into(), k);
    Ok(result)
}

/// Pairwise Cramer's V over a set of variables. Cells are keyed by the
/// ordered variable pair; the diagonal is omitted and both orientations of
/// a pair carry the same (symmetric) value.
#[derive(Debug, Clone, Serialize)]
pub struct AssociationMatrix {
    pub variables: Vec<String>,
    pub cells: BTreeMap<(String, String), MetricResult>,
}

impl AssociationMatrix {
    pub fn get(&self, a: &str, b: &str) -> Option<&MetricResult> {
        self.cells.get(&(a.to_string(), b.to_string()))
    }
}

// The level list a variable contributes to a crosstab: declared codes for
// categorical variables, observed distinct values for integer ones.
fn association_levels(
    dataset: &SurveyDataset,
    variable: &str,
) -> Result<Vec<String>, StatError> {
    let spec = dataset
        .codebook
        .get(variable)
        .ok_or_else(|| StatError::UnknownVariable(variable.to_string()))?;
    match &spec.kind {
        VarKind::Categorical { levels } => Ok(levels.keys().cloned().collect()),
        VarKind::Integer { .. } => {
            let mut seen: Vec<i64> = Vec::new();
            for r in dataset.records() {
                if let Some(v) = r.get(variable) {
                    if let Ok(x) = v.parse::<i64>() {
                        if !seen.contains(&x) {
                            seen.push(x);
                        }
                    }
                }
            }
            seen.sort_unstable();
            Ok(seen.into_iter().map(|x| x.to_string()).collect())
        }
        VarKind::FreeText => Err(StatError::FreeTextVariable(variable.to_string())),
    }
}

/// Builds the full pairwise association matrix within one dataset. Pairs
/// with no jointly observed records, or without two observed levels, get
/// a degenerate cell instead of a number.
pub fn association_matrix(
    dataset: &SurveyDataset,
    variables: &[String],
) -> Result<AssociationMatrix, StatError> {
    let mut levels = BTreeMap::new();
    for v in variables {
        levels.insert(v.clone(), association_levels(dataset, v)?);
    }
    let mut cells = BTreeMap::new();
    for (i, a) in variables.iter().enumerate() {
        for b in variables.iter().skip(i + 1) {
            let la = &levels[a];
            let lb = &levels[b];
            let result = if la.len() < 2 || lb.len() < 2 {
                MetricResult::degenerate("fewer than two observed levels; association undefined")
            } else {
                let pairs = dataset
                    .records()
                    .iter()
                    .map(|r| (r.get(a), r.get(b)));
                match crosstab(pairs, la, lb) {
                    Ok(t) => cramers_v(&t)?,
                    Err(StatError::NoData) => {
                        MetricResult::degenerate("no jointly observed pairs")
                    }
                    Err(e) => return Err(e),
                }
            };
            cells.insert((a.clone(), b.clone()), result.clone());
            cells.insert((b.clone(), a.clone()), result);
        }
    }
    Ok(AssociationMatrix {
        variables: variables.to_vec(),
        cells,
    })
}

/// Pairwise association between variables of one dataset (rows) and
/// variables of a second, row-aligned dataset (columns): cell `(x, y)` is
/// Cramer's V between `a`'s `x` and `b`'s `y` over jointly observed
/// records. Unlike the within-dataset matrix this one is not symmetric
/// and keeps its diagonal — `(x, x)` measures how well the second dataset
/// reproduces `x` itself.
pub fn cross_association_matrix(
    a: &SurveyDataset,
    b: &SurveyDataset,
    variables: &[String],
) -> Result<AssociationMatrix, StatError> {
    if a.len() != b.len() {
        return Err(StatError::Misaligned(format!(
            "{} vs {} records",
            a.len(),
            b.len()
        )));
    }
    for (ra, rb) in a.records().iter().zip(b.records()) {
        if ra.respondent_id != rb.respondent_id {
            return Err(StatError::Misaligned(format!(
                "respondent {} vs {}",
                ra.respondent_id, rb.respondent_id
            )));
        }
    }
    let mut levels_a = BTreeMap::new();
    let mut levels_b = BTreeMap::new();
    for v in variables {
        levels_a.insert(v.clone(), association_levels(a, v)?);
        levels_b.insert(v.clone(), association_levels(b, v)?);
    }
    let mut cells = BTreeMap::new();
    for x in variables {
        for y in variables {
            let la = &levels_a[x];
            let lb = &levels_b[y];
            let result = if la.len() < 2 || lb.len() < 2 {
                MetricResult::degenerate("fewer than two observed levels; association undefined")
            } else {
                let pairs = a
                    .records()
                    .iter()
                    .zip(b.records())
                    .map(|(ra, rb)| (ra.get(x), rb.get(y)));
                match crosstab(pairs, la, lb) {
                    Ok(t) => cramers_v(&t)?,
                    Err(StatError::NoData) => {
                        MetricResult::degenerate("no jointly observed pairs")
                    }
                    Err(e) => return Err(e),
                }
            };
            cells.insert((x.clone(), y.clone()), result);
        }
    }
    Ok(AssociationMatrix {
        variables: variables.to_vec(),
        cells,
    })
}

/// Cell-wise difference summary between two association matrices with the
/// same variable set (first minus second). Only cells defined in both
/// matrices enter; each unordered pair counts once.
#[derive(Debug, Clone, Serialize)]
pub struct MatrixComparison {
    pub mean: Option<f64>,
    pub min: Option<f64>,
    pub max: Option<f64>,
    /// Sample standard deviation of the differences; needs two cells.
    pub sd: Option<f64>,
    pub n_cells: usize,
    /// Unordered pairs skipped because either side was degenerate.
    pub n_skipped: usize,
}

pub fn compare_matrices(
    a: &AssociationMatrix,
    b: &AssociationMatrix,
) -> Result<MatrixComparison, StatError> {
    let mut va = a.variables.clone();
    let mut vb = b.variables.clone();
    va.sort();
    vb.sort();
    if va != vb {
        return Err(StatError::VariableSetMismatch);
    }
    let mut diffs = Vec::new();
    let mut skipped = 0usize;
    for (i, x) in a.variables.iter().enumerate() {
        for y in a.variables.iter().skip(i + 1) {
            let key = (x.clone(), y.clone());
            let ca = a.cells.get(&key).and_then(|m| m.value);
            let cb = b.cells.get(&key).and_then(|m| m.value);
            match (ca, cb) {
                (Some(p), Some(q)) => diffs.push(p - q),
                _ => skipped += 1,
            }
        }
    }
    if diffs.is_empty() {
        return Ok(MatrixComparison {
            mean: None,
            min: None,
            max: None,
            sd: None,
            n_cells: 0,
            n_skipped: skipped,
        });
    }
    let n = diffs.len() as f64;
    let mean = diffs.iter().sum::<f64>() / n;
    let min = diffs.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = diffs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sd = if diffs.len() >= 2 {
        let ss: f64 = diffs.iter().map(|d| (d - mean).powi(2)).sum();
        Some((ss / (n - 1.0)).sqrt())
    } else {
        None
    };
    Ok(MatrixComparison {
        mean: Some(mean),
        min: Some(min),
        max: Some(max),
        sd,
        n_cells: diffs.len(),
        n_skipped: skipped,
    })
}

/// Agreement between two dichotomized vote vectors on one subgroup.
#[derive(Debug, Clone, Serialize)]
pub struct BinaryFidelity {
    /// Pairs where both sides are decided (neither missing nor tied).
    pub n: usize,
    pub agreement: Option<f64>,
    pub tetrachoric: MetricResult,
    /// counts[human][silicon], indexed 0/1; absent when n = 0.
    pub table: Option<ContingencyTable>,
}

/// Crosses paired binary outcomes. `None` entries (missing, or ties the
/// caller chose not to force) are excluded pairwise.
pub fn binary_fidelity(pairs: &[(Option<bool>, Option<bool>)]) -> BinaryFidelity {
    let levels = vec!["0".to_string(), "1".to_string()];
    let as_code = |v: Option<bool>| v.map(|b| if b { "1" } else { "0" });
    let coded: Vec<(Option<&str>, Option<&str>)> = pairs
        .iter()
        .map(|&(a, b)| (as_code(a), as_code(b)))
        .collect();
    match crosstab(coded, &levels, &levels) {
        Ok(table) => {
            let agreement = proportion_agreement(&table).ok();
            let tetra = tetrachoric(&table)
                .unwrap_or_else(|e| MetricResult::degenerate(e.to_string()));
            BinaryFidelity {
                n: table.n as usize,
                agreement,
                tetrachoric: tetra,
                table: Some(table),
            }
        }
        Err(_) => BinaryFidelity {
            n: 0,
            agreement: None,
            tetrachoric: MetricResult::degenerate("no jointly decided pairs"),
            table: None,
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::survey::{Codebook, SurveyRecord, VariableSpec};
    use indexmap::IndexMap;

    fn table(counts: Vec<Vec<u64>>) -> ContingencyTable {
        let r: Vec<String> = (0..counts.len()).map(|i| i.to_string()).collect();
        let c: Vec<String> = (0..counts[0].len()).map(|i| i.to_string()).collect();
        ContingencyTable::from_counts(r, c, counts).unwrap()
    }

    #[test]
    fn crosstab_counts_and_skips_missing() {
        let levels = vec!["a".to_string(), "b".to_string()];
        let pairs = vec![
            (Some("a"), Some("a")),
            (Some("a"), Some("b")),
            (Some("b"), Some("b")),
            (None, Some("a")),
            (Some("a"), None),
        ];
        let t = crosstab(pairs, &levels, &levels).unwrap();
        assert_eq!(t.n, 3);
        assert_eq!(t.counts, vec![vec![1, 1], vec![0, 1]]);
        assert_eq!(t.row_margins(), vec![2, 1]);
        assert_eq!(t.col_margins(), vec![1, 2]);
    }

    #[test]
    fn crosstab_rejects_unknown_level() {
        let levels = vec!["a".to_string()];
        let err = crosstab(vec![(Some("x"), Some("a"))], &levels, &levels).unwrap_err();
        assert!(matches!(err, StatError::UnknownLevel(v) if v == "x"));
    }

    #[test]
    fn crosstab_all_missing_is_no_data() {
        let levels = vec!["a".to_string(), "b".to_string()];
        let err = crosstab(vec![(None, Some("a"))], &levels, &levels).unwrap_err();
        assert!(matches!(err, StatError::NoData));
    }

    #[test]
    fn agreement_and_kappa_hand_table() {
        // 35/15/15/35: agreement 0.70, expected agreement 0.5, kappa 0.4.
        let t = table(vec![vec![35, 15], vec![15, 35]]);
        assert!((proportion_agreement(&t).unwrap() - 0.70).abs() < 1e-12);
        let k = cohens_kappa(&t).unwrap();
        assert!((k.value.unwrap() - 0.4).abs() < 1e-12);
        assert!((k.diagnostics.components["pe"] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn kappa_degenerate_when_expected_agreement_is_one() {
        let t = table(vec![vec![50, 0], vec![0, 0]]);
        let k = cohens_kappa(&t).unwrap();
        assert!(k.value.is_none());
        assert!(k.diagnostics.degenerate.is_some());
    }

    #[test]
    fn agreement_requires_square() {
        let t = ContingencyTable::from_counts(
            vec!["a".into(), "b".into()],
            vec!["x".into(), "y".into()],
            vec![vec![1, 0], vec![0, 1]],
        )
        .unwrap();
        assert!(matches!(proportion_agreement(&t), Err(StatError::NotSquare)));
    }

    #[test]
    fn cramers_v_hand_values() {
        let half = cramers_v(&table(vec![vec![30, 10], vec![10, 30]])).unwrap();
        assert!((half.value.unwrap() - 0.5).abs() < 1e-12);
        let perfect = cramers_v(&table(vec![vec![40, 0], vec![0, 40]])).unwrap();
        assert!((perfect.value.unwrap() - 1.0).abs() < 1e-12);
        let none = cramers_v(&table(vec![vec![20, 20], vec![20, 20]])).unwrap();
        assert!(none.value.unwrap().abs() < 1e-12);
    }

    #[test]
    fn cramers_v_drops_zero_margin_levels() {
        // Middle column never observed: the 2x3 collapses to 2x2.
        let t = ContingencyTable::from_counts(
            vec!["0".into(), "1".into()],
            vec!["a".into(), "b".into(), "c".into()],
            vec![vec![30, 0, 10], vec![10, 0, 30]],
        )
        .unwrap();
        let v = cramers_v(&t).unwrap();
        assert!((v.value.unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn cramers_v_degenerate_on_single_level() {
        let t = ContingencyTable::from_counts(
            vec!["0".into(), "1".into()],
            vec!["a".into(), "b".into()],
            vec![vec![30, 0], vec![20, 0]],
        )
        .unwrap();
        let v = cramers_v(&t).unwrap();
        assert!(v.value.is_none());
        assert!(v.diagnostics.degenerate.is_some());
    }

    fn two_var_dataset() -> SurveyDataset {
        let mut levels_ab = IndexMap::new();
        levels_ab.insert("0".to_string(), "no".to_string());
        levels_ab.insert("1".to_string(), "yes".to_string());
        let codebook = Codebook::new(vec![
            VariableSpec {
                name: "x".into(),
                kind: crate::survey::VarKind::Categorical { levels: levels_ab.clone() },
                missing_codes: Default::default(),
            },
            VariableSpec {
                name: "y".into(),
                kind: crate::survey::VarKind::Categorical { levels: levels_ab },
                missing_codes: Default::default(),
            },
            VariableSpec {
                name: "z".into(),
                kind: crate::survey::VarKind::Integer { min: 0, max: 9 },
                missing_codes: Default::default(),
            },
        ])
        .unwrap();
        // x == y always; z echoes x as 0/1 integers.
        let records = (0..40)
            .map(|i| {
                let mut r = SurveyRecord::new(format!("r{i}"));
                let v = if i % 2 == 0 { "1" } else { "0" };
                r.set("x", v);
                r.set("y", v);
                r.set("z", v);
                r
            })
            .collect();
        SurveyDataset::from_parts(codebook, records, "unit").unwrap()
    }

    #[test]
    fn association_matrix_symmetric_no_diagonal() {
        let ds = two_var_dataset();
        let vars = vec!["x".to_string(), "y".to_string(), "z".to_string()];
        let m = association_matrix(&ds, &vars).unwrap();
        assert_eq!(m.cells.len(), 6);
        assert!(m.get("x", "x").is_none());
        let xy = m.get("x", "y").unwrap().value.unwrap();
        let yx = m.get("y", "x").unwrap().value.unwrap();
        assert!((xy - 1.0).abs() < 1e-12);
        assert_eq!(xy, yx);
        // Integer variable participates through observed values.
        assert!((m.get("x", "z").unwrap().value.unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn compare_matrices_summary() {
        let ds = two_var_dataset();
        let vars = vec!["x".to_string(), "y".to_string(), "z".to_string()];
        let a = association_matrix(&ds, &vars).unwrap();
        let c = compare_matrices(&a, &a).unwrap();
        assert_eq!(c.n_cells, 3);
        assert_eq!(c.mean, Some(0.0));
        assert_eq!(c.min, Some(0.0));
        assert_eq!(c.max, Some(0.0));
        assert_eq!(c.sd, Some(0.0));
    }

    #[test]
    fn compare_matrices_rejects_different_variables() {
        let ds = two_var_dataset();
        let a = association_matrix(&ds, &["x".to_string(), "y".to_string()]).unwrap();
        let b = association_matrix(&ds, &["x".to_string(), "z".to_string()]).unwrap();
        assert!(matches!(
            compare_matrices(&a, &b),
            Err(StatError::VariableSetMismatch)
        ));
    }

    #[test]
    fn binary_fidelity_counts_and_excludes_undecided() {
        let pairs = vec![
            (Some(true), Some(true)),
            (Some(false), Some(false)),
            (Some(true), Some(false)),
            (None, Some(true)),
            (Some(false), None),
        ];
        let f = binary_fidelity(&pairs);
        assert_eq!(f.n, 3);
        assert!((f.agreement.unwrap() - 2.0 / 3.0).abs() < 1e-12);
        let t = f.table.unwrap();
        assert_eq!(t.counts[1][1], 1);
        assert_eq!(t.counts[1][0], 1);
    }

    #[test]
    fn binary_fidelity_empty_is_flagged() {
        let f = binary_fidelity(&[(None, Some(true)), (Some(true), None)]);
        assert_eq!(f.n, 0);
        assert!(f.agreement.is_none());
        assert!(f.tetrachoric.value.is_none());
    }

    /// Second dataset mirrors the first except that its y is x inverted:
    /// every cross cell is |V| = 1, and the diagonal is present.
    #[test]
    fn cross_matrix_keeps_diagonal_and_orientation() {
        let a = two_var_dataset();
        let mut flipped = Vec::new();
        for r in a.records() {
            let mut f = SurveyRecord::new(r.respondent_id.clone());
            let x = r.get("x").unwrap();
            f.set("x", x);
            f.set("y", if x == "1" { "0" } else { "1" });
            f.set("z", x);
            flipped.push(f);
        }
        let b = SurveyDataset::from_parts(a.codebook.clone(), flipped, "unit").unwrap();
        let vars = vec!["x".to_string(), "y".to_string()];
        let m = cross_association_matrix(&a, &b, &vars).unwrap();
        // All four ordered cells exist, including the diagonal.
        assert_eq!(m.cells.len(), 4);
        for x in &vars {
            for y in &vars {
                let v = m.get(x, y).unwrap().value.unwrap();
                assert!((v - 1.0).abs() < 1e-12, "{x},{y} -> {v}");
            }
        }
    }

    #[test]
    fn cross_matrix_requires_aligned_rows() {
        let a = two_var_dataset();
        // Same records, shifted ids: alignment check must fire.
        let shifted: Vec<SurveyRecord> = a
            .records()
            .iter()
            .map(|r| {
                let mut s = SurveyRecord::new(format!("{}x", r.respondent_id));
                s.set("x", r.get("x").unwrap());
                s
            })
            .collect();
        let b = SurveyDataset::from_parts(a.codebook.clone(), shifted, "unit").unwrap();
        let err = cross_association_matrix(&a, &b, &["x".to_string()]).unwrap_err();
        assert!(matches!(err, StatError::Misaligned(_)));
    }

    #[test]
    fn cross_matrix_diagonal_measures_recovery() {
        // b reproduces x with two disagreements out of 40: V below 1 but
        // well above 0.
        let a = two_var_dataset();
        let noisy: Vec<SurveyRecord> = a
            .records()
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let mut s = SurveyRecord::new(r.respondent_id.clone());
                let x = r.get("x").unwrap();
                let flip = i < 2;
                s.set("x", if flip { if x == "1" { "0" } else { "1" } } else { x });
                s
            })
            .collect();
        let b = SurveyDataset::from_parts(a.codebook.clone(), noisy, "unit").unwrap();
        let m = cross_association_matrix(&a, &b, &["x".to_string()]).unwrap();
        let v = m.get("x", "x").unwrap().value.unwrap();
        assert!(v > 0.8 && v < 1.0, "{v}");
    }
}
