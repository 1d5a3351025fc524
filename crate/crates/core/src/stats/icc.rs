//! Intraclass correlation for two paired raters.
//!
//! Average-measure ICCs from the two-way layout: subjects are rows, the
//! two raters columns. Which of the three forms applies depends on
//! whether rater identity is a random or fixed effect, so all three are
//! computed and the caller conservatively reports the minimum.

use serde::Serialize;

use super::{MetricResult, StatError};

const RATERS: f64 = 2.0;

#[derive(Debug, Clone, Serialize)]
pub struct IccEstimates {
    /// One-way random, average of k measurements.
    pub icc1k: MetricResult,
    /// Two-way random, average measures (rater drawn from a population).
    pub icc2k: MetricResult,
    /// Two-way mixed, average measures (these raters only).
    pub icc3k: MetricResult,
}

impl IccEstimates {
    /// Smallest defined estimate, the conservative headline number.
    pub fn minimum(&self) -> Option<f64> {
        [&self.icc1k, &self.icc2k, &self.icc3k]
            .iter()
            .filter_map(|m| m.value)
            .fold(None, |acc, v| Some(acc.map_or(v, |a: f64| a.min(v))))
    }
}

/// Computes ICC(1,k), ICC(2,k), ICC(3,k) for paired scores with k = 2.
///
/// Needs at least three subjects for the mean squares to have any degrees
/// of freedom worth reporting. No between-subject variance makes every
/// form undefined (0/0), reported as degenerate rather than a number.
pub fn icc_pair(a: &[f64], b: &[f64]) -> Result<IccEstimates, StatError> {
    if a.len() != b.len() {
        return Err(StatError::LengthMismatch(a.len(), b.len()));
    }
    let n = a.len();
    if n < 3 {
        return Err(StatError::TooFewSubjects { need: 3, got: n });
    }
    let nf = n as f64;
    let grand: f64 = a.iter().chain(b).sum::<f64>() / (nf * RATERS);
    let col_a: f64 = a.iter().sum::<f64>() / nf;
    let col_b: f64 = b.iter().sum::<f64>() / nf;

    let mut ss_rows = 0.0;
    let mut ss_total = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        let row_mean = (x + y) / RATERS;
        ss_rows += RATERS * (row_mean - grand).powi(2);
        ss_total += (x - grand).powi(2) + (y - grand).powi(2);
    }
    let ss_cols = nf * ((col_a - grand).powi(2) + (col_b - grand).powi(2));
    let ss_error = (ss_total - ss_rows - ss_cols).max(0.0);
    let ss_within = ss_cols + ss_error;

    let ms_rows = ss_rows / (nf - 1.0);
    let ms_within = ss_within / (nf * (RATERS - 1.0));
    let ms_cols = ss_cols / (RATERS - 1.0);
    let ms_error = ss_error / ((nf - 1.0) * (RATERS - 1.0));

    if ms_rows <= 0.0 {
        let reason = "no between-subject variance; reliability undefined";
        return Ok(IccEstimates {
            icc1k: MetricResult::degenerate(reason),
            icc2k: MetricResult::degenerate(reason),
            icc3k: MetricResult::degenerate(reason),
        });
    }

    let with_components = |value: f64| {
        let mut m = MetricResult::of(value);
        let c = &mut m.diagnostics.components;
        c.insert("ms_rows".into(), ms_rows);
        c.insert("ms_within".into(), ms_within);
        c.insert("ms_cols".into(), ms_cols);
        c.insert("ms_error".into(), ms_error);
        m
    };

    let icc1k = with_components((ms_rows - ms_within) / ms_rows);
    let denom2 = ms_rows + (ms_cols - ms_error) / nf;
    let icc2k = if denom2.abs() < 1e-300 {
        MetricResult::degenerate("zero denominator in two-way random form")
    } else {
        with_components((ms_rows - ms_error) / denom2)
    };
    let icc3k = with_components((ms_rows - ms_error) / ms_rows);
    Ok(IccEstimates { icc1k, icc2k, icc3k })
}
