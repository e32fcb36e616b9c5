//! Output emission: `rows.csv`, `summary.json`, and the optional
//! `plot.svg`.
//!
//! The CSV is the deterministic contract: fixed column order, floats in
//! 17-significant-digit scientific notation, and a `wall_ms` column
//! reserved as `0` so identical (config, seed) runs emit identical bytes.
//! Wall-clock timing lives in `summary.json` instead.

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};

use crate::study::{Row, StudyOutcome};

/// Column order of `rows.csv`.
pub const ROWS_HEADER: [&str; 17] = [
    "study",
    "n",
    "d",
    "lambda",
    "sigma",
    "loss",
    "replicate",
    "seed",
    "err_rdr",
    "err_ls",
    "gap",
    "gap_bound",
    "fdcon_ok",
    "ees_ok",
    "iters",
    "stat_resid",
    "wall_ms",
];

/// Formats a float with 17 significant digits, round-trip exact for every
/// finite value.
pub fn format_float(value: f64) -> String {
    format!("{value:.16e}")
}

fn record(row: &Row) -> Vec<String> {
    vec![
        row.study.clone(),
        row.n.to_string(),
        row.d.to_string(),
        format_float(row.lambda),
        format_float(row.sigma),
        row.loss.clone(),
        row.replicate.to_string(),
        row.seed.to_string(),
        format_float(row.err_rdr),
        format_float(row.err_ls),
        format_float(row.gap),
        format_float(row.gap_bound),
        row.fdcon_ok.to_string(),
        row.ees_ok.to_string(),
        row.iters.to_string(),
        format_float(row.stat_resid),
        "0".to_string(),
    ]
}

/// Renders the CSV content for `rows`.
pub fn rows_csv(rows: &[Row]) -> Result<String> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer.write_record(ROWS_HEADER)?;
    for row in rows {
        writer.write_record(record(row))?;
    }
    let bytes = writer.into_inner().context("CSV buffer")?;
    Ok(String::from_utf8(bytes).expect("CSV content is UTF-8"))
}

/// Writes `rows.csv`, `summary.json`, and (when present) `plot.svg` into
/// `out_dir`, creating the directory if needed. Returns the list of file
/// names written.
pub fn emit_outputs(out_dir: &Path, outcome: &StudyOutcome) -> Result<Vec<String>> {
    fs::create_dir_all(out_dir)
        .with_context(|| format!("cannot create output directory {}", out_dir.display()))?;
    let mut written = Vec::new();

    let csv_path = out_dir.join("rows.csv");
    fs::write(&csv_path, rows_csv(&outcome.rows)?)
        .with_context(|| format!("cannot write {}", csv_path.display()))?;
    written.push("rows.csv".to_string());

    let json_path = out_dir.join("summary.json");
    let mut json = serde_json::to_string_pretty(&outcome.summary).context("summary encoding")?;
    json.push('\n');
    fs::write(&json_path, json)
        .with_context(|| format!("cannot write {}", json_path.display()))?;
    written.push("summary.json".to_string());

    if let Some(plot) = &outcome.plot {
        let svg_path = out_dir.join("plot.svg");
        fs::write(&svg_path, plot)
            .with_context(|| format!("cannot write {}", svg_path.display()))?;
        written.push("plot.svg".to_string());
    }
    Ok(written)
}
