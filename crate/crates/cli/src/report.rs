//! Aggregate run directories into plot-ready CSV series.
//!
//! Run files are named `<method>_seed<k>.jsonl`; the reporter groups by
//! method, aligns records on their `iter` field and emits per-method series
//! files (`<method>_series.csv`) plus a `summary.csv` across methods. The
//! aggregated value is whichever metric a record carries (scaled minimum,
//! RMSE, episode reward, or the raw observation as a fallback).

use std::collections::BTreeMap;
use std::path::Path;

use metasurrogate_core::decision::RunRecord;

use crate::{CliError, Result};

fn metric_of(r: &RunRecord) -> Option<(f64, &'static str)> {
    if let Some(v) = r.scaled_min {
        return Some((v, "scaled_min"));
    }
    if let Some(v) = r.rmse {
        return Some((v, "rmse"));
    }
    if let Some(v) = r.episode_reward {
        return Some((v, "episode_reward"));
    }
    r.observed.map(|v| (v, "observed"))
}

/// `<method>_seed<digits>` -> method; anything else is not a run file.
fn method_of(stem: &str) -> Option<String> {
    let pos = stem.rfind("_seed")?;
    let digits = &stem[pos + 5..];
    if digits.is_empty() || !digits.chars().all(|c| c.is_ascii_digit()) {
        return None;
    }
    Some(stem[..pos].to_string())
}

/// Per-iteration aggregate across one method's runs.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesPoint {
    pub iter: usize,
    pub mean: f64,
    pub stddev: f64,
    pub n: usize,
    pub metric: &'static str,
}

/// Load every `*.jsonl` run in `dir`, grouped by method.
pub fn load_runs(dir: &Path) -> Result<BTreeMap<String, Vec<Vec<RunRecord>>>> {
    let mut groups: BTreeMap<String, Vec<Vec<RunRecord>>> = BTreeMap::new();
    let entries = std::fs::read_dir(dir)
        .map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))?;
    let mut paths: Vec<_> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
        .collect();
    paths.sort();
    for path in paths {
        let stem = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or_default()
            .to_string();
        let Some(method) = method_of(&stem) else {
            continue; // not a run file (e.g. a task dump)
        };
        let text = std::fs::read_to_string(&path)
            .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        let mut records = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let rec: RunRecord = serde_json::from_str(line).map_err(|e| {
                CliError::Data(format!("{}:{}: bad record: {e}", path.display(), i + 1))
            })?;
            records.push(rec);
        }
        groups.entry(method).or_default().push(records);
    }
    if groups.is_empty() {
        return Err(CliError::Data(format!(
            "{}: no .jsonl run files to report on",
            dir.display()
        )));
    }
    Ok(groups)
}

/// Mean/stddev per iteration across a method's runs.
pub fn aggregate(runs: &[Vec<RunRecord>]) -> Vec<SeriesPoint> {
    let mut by_iter: BTreeMap<usize, (Vec<f64>, &'static str)> = BTreeMap::new();
    for run in runs {
        for rec in run {
            if let Some((v, metric)) = metric_of(rec) {
                let entry = by_iter.entry(rec.iter).or_insert((Vec::new(), metric));
                entry.0.push(v);
                entry.1 = metric;
            }
        }
    }
    by_iter
        .into_iter()
        .map(|(iter, (vals, metric))| {
            let n = vals.len();
            let mean = vals.iter().sum::<f64>() / n as f64;
            let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            SeriesPoint {
                iter,
                mean,
                stddev: var.sqrt(),
                n,
                metric,
            }
        })
        .collect()
}

/// Write series and summary CSVs for a run directory; returns the summary
/// rows `(method, points, final_mean, final_stddev)`.
pub fn report(dir: &Path) -> Result<Vec<(String, usize, f64, f64)>> {
    let groups = load_runs(dir)?;
    let mut summary = Vec::new();
    for (method, runs) in &groups {
        let series = aggregate(runs);
        let path = dir.join(format!("{method}_series.csv"));
        let mut w = csv::Writer::from_path(&path)
            .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        w.write_record(["iter", "mean", "stddev", "n", "metric"])
            .map_err(|e| CliError::Data(e.to_string()))?;
        for p in &series {
            w.write_record([
                p.iter.to_string(),
                format!("{}", p.mean),
                format!("{}", p.stddev),
                p.n.to_string(),
                p.metric.to_string(),
            ])
            .map_err(|e| CliError::Data(e.to_string()))?;
        }
        w.flush().map_err(|e| CliError::Data(e.to_string()))?;
        if let Some(last) = series.last() {
            summary.push((method.clone(), series.len(), last.mean, last.stddev));
        }
    }
    let path = dir.join("summary.csv");
    let mut w = csv::Writer::from_path(&path)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    w.write_record(["method", "points", "final_mean", "final_stddev"])
        .map_err(|e| CliError::Data(e.to_string()))?;
    for (m, p, mean, std) in &summary {
        w.write_record([m.clone(), p.to_string(), format!("{mean}"), format!("{std}")])
            .map_err(|e| CliError::Data(e.to_string()))?;
    }
    w.flush().map_err(|e| CliError::Data(e.to_string()))?;
    Ok(summary)
}
