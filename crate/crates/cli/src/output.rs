//! Atomic file output and report tables.

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use xdisease::eval::{ScopeReport, ScoreRecord};
use xdisease::{ScopeKind, StreamKey};

/// Writes `bytes` to a temporary sibling of `path`, then renames it into
/// place so readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    fs::write(&tmp, bytes).with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, path).with_context(|| format!("renaming into {}", path.display()))?;
    Ok(())
}

/// Runs a CSV writer into memory.
pub fn csv_bytes<E: Into<anyhow::Error>>(f: impl FnOnce(&mut Vec<u8>) -> Result<(), E>) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    f(&mut buf).map_err(Into::into)?;
    Ok(buf)
}

fn key_fields(k: &StreamKey) -> [String; 4] {
    [k.source.clone(), k.disease.clone(), k.subtype_str().to_string(), k.location.clone()]
}

fn table(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    Ok(w.into_inner().map_err(|e| anyhow::anyhow!("{e}"))?)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes the scope comparison as wide and long CSV tables plus JSON.
pub fn write_report(dir: &Path, report: &ScopeReport, scores: &[ScoreRecord]) -> Result<()> {
    let scopes = ScopeKind::ALL;
    let wide = report.rows.iter().map(|r| {
        let mut row: Vec<String> = key_fields(&r.target).into();
        row.push(r.forecaster.to_string());
        row.extend(scopes.iter().map(|k| r.mae[k].to_string()));
        row.extend(scopes[1..].iter().map(|k| r.ratio[k].to_string()));
        row.push(r.best_scope.to_string());
        row
    });
    write_atomic(
        &dir.join("scope_comparison.csv"),
        &table(
            &[
                "target_source", "disease", "subtype", "location", "model",
                "mae_single_stream", "mae_single_disease", "mae_mode_of_transmission", "mae_all_data",
                "ratio_single_disease", "ratio_mode_of_transmission", "ratio_all_data", "best_scope",
            ],
            wide,
        )?,
    )?;

    let fractions = report.fractions.iter().map(|f| {
        vec![f.forecaster.to_string(), f.scope.to_string(), f.n_targets.to_string(), f.fraction_outperformed.to_string()]
    });
    write_atomic(
        &dir.join("scope_fractions.csv"),
        &table(&["model", "scope", "n_targets", "fraction_outperformed"], fractions)?,
    )?;

    let summaries = report.summaries.iter().map(|s| {
        let mut row: Vec<String> = key_fields(&s.target).into();
        row.extend([
            s.scope.to_string(),
            s.summary.n_series.to_string(),
            s.summary.mean_cov_10wk.to_string(),
            s.summary.n_rows.to_string(),
            s.summary.mean_sample_entropy.to_string(),
        ]);
        row
    });
    write_atomic(
        &dir.join("training_summary.csv"),
        &table(
            &["target_source", "disease", "subtype", "location", "scope", "n_series", "mean_cov_10wk", "n_rows", "mean_sample_entropy"],
            summaries,
        )?,
    )?;

    let long = scores.iter().map(|s| {
        let mut row: Vec<String> = key_fields(&s.target).into();
        row.extend([
            s.forecaster.to_string(),
            s.scope.to_string(),
            s.mae.to_string(),
            opt(s.wis),
            opt(s.coverage95),
            opt(s.mae_ratio_vs_single_stream),
        ]);
        row
    });
    write_atomic(
        &dir.join("scores_long.csv"),
        &table(
            &["target_source", "disease", "subtype", "location", "model", "scope", "mae", "wis", "coverage95", "mae_ratio_vs_single_stream"],
            long,
        )?,
    )?;

    write_atomic(&dir.join("report.json"), serde_json::to_string_pretty(report)?.as_bytes())?;
    Ok(())
}
