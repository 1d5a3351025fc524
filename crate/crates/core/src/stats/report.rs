//! CSV layouts for the headline result tables.
//!
//! These are presentation-layer functions: they take already-computed
//! statistics and freeze the column order, headers, and decimal places.
//! Undefined values render as empty cells, never as zeros.

use crate::survey::MissingnessReport;

use super::{AssociationMatrix, BinaryFidelity, MatrixComparison};

fn fmt_opt(v: Option<f64>, decimals: usize) -> String {
    match v {
        Some(x) => {
            let s = format!("{x:.decimals$}");
            // A value rounding to zero prints "0.00", never "-0.00".
            match s.strip_prefix('-') {
                Some(rest) if rest.chars().all(|c| c == '0' || c == '.') => rest.to_string(),
                _ => s,
            }
        }
        None => String::new(),
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Subgroup fidelity table: one row per subgroup, one
/// (tetrachoric, proportion-agreement) column pair per election year.
pub fn format_fidelity_table(
    years: &[String],
    rows: &[(String, Vec<BinaryFidelity>)],
) -> String {
    let mut header = vec!["Variable".to_string()];
    for y in years {
        header.push(format!("{y} Tetra."));
        header.push(format!("{y} Prop. Agree"));
    }
    let mut out = header.join(",") + "\n";
    for (label, cells) in rows {
        let mut fields = vec![csv_field(label)];
        for cell in cells {
            fields.push(fmt_opt(cell.tetrachoric.value, 2));
            fields.push(fmt_opt(cell.agreement, 2));
        }
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

/// One labelled column of the association-difference summary.
#[derive(Debug, Clone)]
pub struct SummaryColumn {
    pub label: String,
    pub comparison: MatrixComparison,
    /// Complete cases behind the column's matrices.
    pub n: usize,
}

/// Association-difference summary: statistics as rows, one column per
/// condition (e.g. sampling temperature).
pub fn format_comparison_summary(columns: &[SummaryColumn]) -> String {
    let mut out = String::from("Statistic");
    for c in columns {
        out.push(',');
        out.push_str(&csv_field(&c.label));
    }
    out.push('\n');
    let rows: [(&str, Box<dyn Fn(&SummaryColumn) -> String>); 5] = [
        ("Mean", Box::new(|c| fmt_opt(c.comparison.mean, 3))),
        ("Minimum", Box::new(|c| fmt_opt(c.comparison.min, 3))),
        ("Maximum", Box::new(|c| fmt_opt(c.comparison.max, 3))),
        (
            "Standard Deviation",
            Box::new(|c| fmt_opt(c.comparison.sd, 3)),
        ),
        ("N", Box::new(|c| c.n.to_string())),
    ];
    for (name, cell) in rows {
        out.push_str(name);
        for c in columns {
            out.push(',');
            out.push_str(&cell(c));
        }
        out.push('\n');
    }
    out
}

/// Side-by-side missingness percentages for two datasets over the same
/// variables, one decimal place.
pub fn format_missingness_pair(
    left_label: &str,
    right_label: &str,
    left: &MissingnessReport,
    right: &MissingnessReport,
) -> String {
    let mut out = format!(
        "Variable,{},{}\n",
        csv_field(left_label),
        csv_field(right_label)
    );
    for row in &left.rows {
        let rp = right.percent_for(&row.variable);
        out.push_str(&format!(
            "{},{},{}\n",
            csv_field(&row.variable),
            format!("{:.1}", row.percent),
            rp.map(|p| format!("{p:.1}")).unwrap_or_default(),
        ));
    }
    out
}

/// Square CSV layout of an association matrix: variables across the
/// header and down the first column, three decimal places, blank where
/// no defined value exists (degenerate cells, or the diagonal of a
/// within-dataset matrix).
pub fn format_association_matrix(matrix: &AssociationMatrix) -> String {
    let mut out = String::new();
    for v in &matrix.variables {
        out.push(',');
        out.push_str(&csv_field(v));
    }
    out.push('\n');
    for row in &matrix.variables {
        out.push_str(&csv_field(row));
        for col in &matrix.variables {
            out.push(',');
            let cell = matrix
                .cells
                .get(&(row.clone(), col.clone()))
                .and_then(|m| m.value);
            out.push_str(&fmt_opt(cell, 3));
        }
        out.push('\n');
    }
    out
}

/// Per-subgroup fidelity detail: counts, ties, agreement, tetrachoric,
/// and the estimator flags that qualify them.
pub fn format_fidelity_detail(rows: &[(String, usize, BinaryFidelity)]) -> String {
    let mut out = String::from(
        "subgroup,n,n_ties,agreement,tetrachoric,zero_cell_corrected,clamped,degenerate\n",
    );
    for (label, n_ties, cell) in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            csv_field(label),
            cell.n,
            n_ties,
            fmt_opt(cell.agreement, 4),
            fmt_opt(cell.tetrachoric.value, 4),
            cell.tetrachoric.diagnostics.zero_cell_corrected,
            cell.tetrachoric.diagnostics.clamped,
            csv_field(cell.tetrachoric.diagnostics.degenerate.as_deref().unwrap_or("")),
        ));
    }
    out
}
