//! Tetrachoric correlation for 2x2 tables.
//!
//! The model: both observed binaries are thresholded latent standard
//! normals with correlation rho. The thresholds are fixed by the margins,
//! leaving rho as the single unknown; it is recovered by solving
//! P(X > h, Y > k; rho) = p11 with a bracketed root finder. The quadrant
//! probability is strictly increasing in rho, so the root is unique when
//! it exists and otherwise the estimate is the nearer boundary.

use super::bivariate::{bvn_upper, quantile};
use super::{ContingencyTable, MetricResult, StatError};

/// Convergence target on |P(quadrant) - p11|.
const ROOT_TOL: f64 = 1e-10;
/// The solver works strictly inside (-1, 1).
const RHO_EDGE: f64 = 1.0 - 1e-9;
const MAX_ITER: u32 = 200;

/// Brent's method on a bracketing interval [a, b] with f(a), f(b) of
/// opposite sign. Returns the root and the iteration count.
fn brent_root(
    f: impl Fn(f64) -> f64,
    mut a: f64,
    mut b: f64,
    mut fa: f64,
    mut fb: f64,
) -> Result<(f64, u32), StatError> {
    if fa * fb > 0.0 {
        return Err(StatError::NoBracket);
    }
    let mut c = a;
    let mut fc = fa;
    let mut d = b - a;
    let mut e = d;
    for iter in 1..=MAX_ITER {
        if fb.abs() > fc.abs() {
            // Keep b the best estimate, c on the other side.
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        let tol = 2.0 * f64::EPSILON * b.abs() + ROOT_TOL / 2.0;
        let xm = (c - b) / 2.0;
        if fb.abs() < ROOT_TOL || xm.abs() <= tol {
            return Ok((b, iter));
        }
        if e.abs() >= tol && fa.abs() > fb.abs() {
            // Inverse quadratic interpolation (secant when a == c).
            let s = fb / fa;
            let (mut p, mut q) = if a == c {
                (2.0 * xm * s, 1.0 - s)
            } else {
                let q = fa / fc;
                let r = fb / fc;
                (
                    s * (2.0 * xm * q * (q - r) - (b - a) * (r - 1.0)),
                    (q - 1.0) * (r - 1.0) * (s - 1.0),
                )
            };
            if p > 0.0 {
                q = -q;
            }
            p = p.abs();
            if 2.0 * p < (3.0 * xm * q - (tol * q).abs()).min((e * q).abs()) {
                e = d;
                d = p / q;
            } else {
                d = xm;
                e = d;
            }
        } else {
            d = xm;
            e = d;
        }
        a = b;
        fa = fb;
        b += if d.abs() > tol {
            d
        } else if xm > 0.0 {
            tol
        } else {
            -tol
        };
        fb = f(b);
        if (fb > 0.0) == (fc > 0.0) {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
    }
    // Brent's method cannot run this long on a genuine bracket.
    Err(StatError::NoBracket)
}

/// Estimates the tetrachoric correlation of a 2x2 table whose second row
/// and column are the "positive" level.
///
/// A zero margin leaves a threshold at infinity and the correlation
/// undefined — reported as degenerate before any correction. A zero cell
/// with healthy margins gets the 0.5 continuity correction on every cell,
/// flagged in the diagnostics. An estimate pinned at the boundary sets
/// the `clamped` flag.
pub fn tetrachoric(table: &ContingencyTable) -> Result<MetricResult, StatError> {
    if table.row_levels.len() != 2 || table.col_levels.len() != 2 {
        return Err(StatError::NotTwoByTwo {
            rows: table.row_levels.len(),
            cols: table.col_levels.len(),
        });
    }
    if table.row_margins().contains(&0) || table.col_margins().contains(&0) {
        return Ok(MetricResult::degenerate(
            "zero margin: a threshold is unbounded and the correlation undefined",
        ));
    }
    let mut cells = [
        [table.counts[0][0] as f64, table.counts[0][1] as f64],
        [table.counts[1][0] as f64, table.counts[1][1] as f64],
    ];
    let corrected = cells.iter().flatten().any(|&c| c == 0.0);
    if corrected {
        for row in &mut cells {
            for c in row {
                *c += 0.5;
            }
        }
    }
    let n = cells.iter().flatten().sum::<f64>();
    let p1_plus = (cells[1][0] + cells[1][1]) / n;
    let p_plus1 = (cells[0][1] + cells[1][1]) / n;
    let p11 = cells[1][1] / n;
    let h = quantile(1.0 - p1_plus)?;
    let k = quantile(1.0 - p_plus1)?;

    let f = |rho: f64| bvn_upper(h, k, rho) - p11;
    let (lo, hi) = (-RHO_EDGE, RHO_EDGE);
    let (flo, fhi) = (f(lo), f(hi));
    let mut result = if flo > 0.0 {
        // Even maximal negative correlation predicts too much joint mass.
        let mut m = MetricResult::of(-1.0);
        m.diagnostics.clamped = true;
        m
    } else if fhi < 0.0 {
        let mut m = MetricResult::of(1.0);
        m.diagnostics.clamped = true;
        m
    } else {
        let (rho, iterations) = brent_root(f, lo, hi, flo, fhi)?;
        let mut m = MetricResult::of(rho);
        m.diagnostics.iterations = iterations;
        m
    };
    result.diagnostics.zero_cell_corrected = corrected;
    let c = &mut result.diagnostics.components;
    c.insert("h".into(), h);
    c.insert("k".into(), k);
    c.insert("p11".into(), p11);
    Ok(result)
}
