//! Convergence CSV and the plain-text gap table.

use std::io::{self, Write};

use crate::bounds::{ConvergenceRecord, GapRow};

pub const CONVERGENCE_HEADER: &str =
    "iteration,lower_bound,upper_estimate,upper_stderr,gap,relative_gap,cuts_total,wall_millis";

/// 17 significant digits, enough to round-trip any `f64`.
pub fn format_float(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        format!("{v}")
    }
}

pub fn write_convergence_csv<W: Write>(mut out: W, records: &[ConvergenceRecord]) -> io::Result<()> {
    writeln!(out, "{CONVERGENCE_HEADER}")?;
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.iteration,
            format_float(r.lower_bound),
            format_float(r.upper_estimate),
            format_float(r.upper_stderr),
            format_float(r.gap),
            format_float(r.relative_gap),
            r.cuts_total,
            r.wall_millis
        )?;
    }
    Ok(())
}

pub fn write_gap_table<W: Write>(mut out: W, rows: &[GapRow]) -> io::Result<()> {
    writeln!(
        out,
        "{:>8}  {:>14}  {:>14}  {:>12}  {:>10}  {:>10}",
        "iter", "value below", "value above", "gap", "relative", "millis"
    )?;
    for r in rows {
        let rel = if r.relative_gap.is_finite() {
            format!("{:.2}%", 100.0 * r.relative_gap)
        } else {
            "-".to_string()
        };
        writeln!(
            out,
            "{:>8}  {:>14.6}  {:>14.6}  {:>12.4e}  {:>10}  {:>10}",
            r.iteration, r.lower_bound, r.upper_estimate, r.gap, rel, r.wall_millis
        )?;
    }
    Ok(())
}
