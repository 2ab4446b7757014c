use std::fs;
use std::path::{Path, PathBuf};

use super::{write_csv, Layout};
use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};

pub const REPORT_HEADER: [&str; 7] = ["section", "name", "replicate", "layer", "k", "statistic", "value"];

type Row = [String; 7];

fn row(section: &str, name: &str, replicate: &str, layer: &str, k: &str, statistic: &str, value: &str) -> Row {
    [section, name, replicate, layer, k, statistic, value].map(str::to_string)
}

fn read_table(path: &Path) -> CliResult<Option<(csv::StringRecord, Vec<csv::StringRecord>)>> {
    if !path.is_file() {
        return Ok(None);
    }
    let mut r = csv::Reader::from_path(path).map_err(|e| CliError::csv(path, e))?;
    let header = r.headers().map_err(|e| CliError::csv(path, e))?.clone();
    let rows = r
        .records()
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| CliError::csv(path, e))?;
    Ok(Some((header, rows)))
}

fn column(header: &csv::StringRecord, name: &str, path: &Path) -> CliResult<usize> {
    header
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| CliError::Config(format!("{}: missing column {name:?}", path.display())))
}

/// Merges the training summary, the measure distribution and every ablation
/// curve found under the output directory into one long-format
/// `report.csv`. Missing inputs are skipped; returns the number of rows.
pub fn report(cfg: &ExperimentConfig) -> CliResult<usize> {
    let layout = Layout::new(cfg);
    let mut rows: Vec<Row> = Vec::new();

    let path = layout.train_summary();
    if let Some((h, records)) = read_table(&path)? {
        let (rep, status, best, acc) = (
            column(&h, "replicate", &path)?,
            column(&h, "status", &path)?,
            column(&h, "best_epoch", &path)?,
            column(&h, "test_accuracy", &path)?,
        );
        for rec in &records {
            rows.push(row("train", "status", &rec[rep], "", "", "status", &rec[status]));
            if !rec[acc].is_empty() {
                rows.push(row("train", "best_epoch", &rec[rep], "", "", "value", &rec[best]));
                rows.push(row("train", "test_accuracy", &rec[rep], "", "", "value", &rec[acc]));
            }
        }
    }

    let path = layout.distribution();
    if let Some((h, records)) = read_table(&path)? {
        let (layer, measure) = (column(&h, "layer", &path)?, column(&h, "measure", &path)?);
        let stats: Vec<(usize, String)> = h
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != layer && i != measure)
            .map(|(i, s)| (i, s.to_string()))
            .collect();
        for rec in &records {
            for (i, stat) in &stats {
                rows.push(row(
                    "measures",
                    &rec[measure],
                    "pooled",
                    &rec[layer],
                    "",
                    stat,
                    &rec[*i],
                ));
            }
        }
    }

    for (label, path) in curve_files(&layout.curves_dir())? {
        let Some((h, records)) = read_table(&path)? else {
            continue;
        };
        let (k, mean, std) = (
            column(&h, "k", &path)?,
            column(&h, "mean_error", &path)?,
            column(&h, "std_error", &path)?,
        );
        for rec in &records {
            rows.push(row("ablation", &label, "mean", "", &rec[k], "mean_error", &rec[mean]));
            rows.push(row("ablation", &label, "mean", "", &rec[k], "std_error", &rec[std]));
        }
    }

    let n = rows.len();
    write_csv(&layout.report(), &REPORT_HEADER, rows)?;
    Ok(n)
}

/// Aggregated curve files (not the per-replicate ones), sorted by label.
fn curve_files(dir: &Path) -> CliResult<Vec<(String, PathBuf)>> {
    if !dir.is_dir() {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| CliError::io(dir, e))? {
        let path = entry.map_err(|e| CliError::io(dir, e))?.path();
        let Some(stem) = path.file_stem().and_then(|s| s.to_str()) else {
            continue;
        };
        if path.extension().is_some_and(|e| e == "csv") && !stem.ends_with("_replicates") {
            out.push((stem.to_string(), path));
        }
    }
    out.sort();
    Ok(out)
}
