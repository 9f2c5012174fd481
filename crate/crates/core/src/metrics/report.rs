//! Scoring finished runs against a reference of actual prices and winners.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::stats::{aggregate_alignment, log_r_squared, quantile, spearman, winner_matches};
use crate::scenario::Algorithm;
use crate::workflow::{FinalStrategyRow, WorkflowError, FINAL_STRATEGY, RUN_META};

pub const METRICS: &str = "metrics.csv";
/// Drug id of the rows pooling every drug of an algorithm.
pub const POOLED: &str = "ALL";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferenceRow {
    pub drug_id: String,
    pub firm_id: String,
    pub actual_price: f64,
    /// 0 or 1.
    pub actual_winner: u8,
}

fn schema(path: &Path, message: impl std::fmt::Display) -> WorkflowError {
    WorkflowError::Config(format!("{}: {message}", path.display()))
}

pub fn load_reference(path: impl AsRef<Path>) -> Result<Vec<ReferenceRow>, WorkflowError> {
    let path = path.as_ref();
    let mut rdr = csv::Reader::from_path(path).map_err(|e| match e.kind() {
        csv::ErrorKind::Io(_) => WorkflowError::io(path, &e),
        _ => schema(path, &e),
    })?;
    let headers = rdr.headers().map_err(|e| schema(path, e))?.clone();
    for col in ["drug_id", "firm_id", "actual_price", "actual_winner"] {
        if !headers.iter().any(|h| h == col) {
            return Err(schema(path, format!("missing column `{col}`")));
        }
    }
    let mut rows = Vec::new();
    for (i, r) in rdr.deserialize::<ReferenceRow>().enumerate() {
        let row = r.map_err(|e| schema(path, format!("row {}: {e}", i + 1)))?;
        if row.actual_winner > 1 {
            return Err(schema(path, format!("row {}: actual_winner must be 0 or 1", i + 1)));
        }
        if !(row.actual_price > 0.0) {
            return Err(schema(path, format!("row {}: actual_price must be positive", i + 1)));
        }
        rows.push(row);
    }
    Ok(rows)
}

/// Final strategy of one base-setting task found in a run directory.
#[derive(Clone, Debug, PartialEq)]
pub struct RunEntry {
    pub dir: PathBuf,
    pub drug_id: String,
    pub algorithm: Algorithm,
    pub x: usize,
    pub firms: Vec<FinalStrategyRow>,
}

fn find_files(dir: &Path, name: &str, out: &mut Vec<PathBuf>) -> std::io::Result<()> {
    let mut entries: Vec<_> = fs::read_dir(dir)?.collect::<Result<_, _>>()?;
    entries.sort_by_key(|e| e.file_name());
    for e in entries {
        let p = e.path();
        if e.file_type()?.is_dir() {
            find_files(&p, name, out)?;
        } else if e.file_name() == name {
            out.push(p);
        }
    }
    Ok(())
}

/// Every completed base-setting task below `run_dir`, sorted by drug and
/// algorithm. Sensitivity runs are skipped.
pub fn collect_runs(run_dir: &Path) -> Result<Vec<RunEntry>, WorkflowError> {
    let mut files = Vec::new();
    find_files(run_dir, FINAL_STRATEGY, &mut files).map_err(|e| WorkflowError::io(run_dir, e))?;
    let mut runs = Vec::new();
    for file in files {
        let dir = file.parent().unwrap_or(run_dir).to_path_buf();
        let meta_path = dir.join(RUN_META);
        let text = fs::read_to_string(&meta_path).map_err(|e| WorkflowError::io(&meta_path, e))?;
        let meta: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| schema(&meta_path, e))?;
        let overrides = meta["task"]["overrides"].as_array().map_or(0, Vec::len);
        if overrides > 0 {
            continue;
        }
        let drug_id = meta["task"]["scenario_ref"]
            .as_str()
            .ok_or_else(|| schema(&meta_path, "missing task.scenario_ref"))?
            .to_string();
        let algorithm: Algorithm = serde_json::from_value(meta["task"]["algorithm"].clone())
            .map_err(|e| schema(&meta_path, e))?;
        let x = meta["scenario"]["x"]
            .as_u64()
            .ok_or_else(|| schema(&meta_path, "missing scenario.x"))? as usize;
        let mut rdr = csv::Reader::from_path(&file).map_err(|e| schema(&file, e))?;
        let firms = rdr
            .deserialize()
            .collect::<Result<Vec<FinalStrategyRow>, _>>()
            .map_err(|e| schema(&file, e))?;
        runs.push(RunEntry {
            dir,
            drug_id,
            algorithm,
            x,
            firms,
        });
    }
    runs.sort_by(|a, b| (&a.drug_id, a.algorithm.as_str()).cmp(&(&b.drug_id, b.algorithm.as_str())));
    Ok(runs)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricRow {
    pub drug_id: String,
    pub algorithm: Algorithm,
    pub spearman: f64,
    pub p: f64,
    pub r2: f64,
    /// Slot-weighted alignment (the per-drug rate on per-drug rows).
    pub alignment: f64,
    /// Mean of per-drug rates; pooled rows only.
    pub alignment_macro: Option<f64>,
    pub n_firms: usize,
}

struct Scored {
    pred: Vec<f64>,
    actual: Vec<f64>,
    matched: usize,
    slots: usize,
}

fn score(run: &RunEntry, reference: &[ReferenceRow]) -> Result<Scored, WorkflowError> {
    let mut pred = Vec::with_capacity(run.firms.len());
    let mut actual = Vec::with_capacity(run.firms.len());
    let mut winners = Vec::with_capacity(run.firms.len());
    for f in &run.firms {
        let r = reference
            .iter()
            .find(|r| r.drug_id == run.drug_id && r.firm_id == f.firm_id)
            .ok_or_else(|| {
                WorkflowError::Config(format!(
                    "reference has no row for drug {} firm {}",
                    run.drug_id, f.firm_id
                ))
            })?;
        pred.push(f.final_price);
        actual.push(r.actual_price);
        winners.push(r.actual_winner == 1);
    }
    let actual_slots = winners.iter().filter(|w| **w).count();
    if actual_slots != run.x {
        log::warn!(
            "drug {}: reference marks {actual_slots} winners but the tender selects {}",
            run.drug_id,
            run.x
        );
    }
    Ok(Scored {
        matched: winner_matches(&pred, &winners, run.x),
        slots: run.x,
        pred,
        actual,
    })
}

fn row(drug_id: &str, algorithm: Algorithm, pred: &[f64], actual: &[f64], alignment: f64) -> MetricRow {
    let s = spearman(pred, actual);
    MetricRow {
        drug_id: drug_id.to_string(),
        algorithm,
        spearman: s.map_or(f64::NAN, |s| s.rho),
        p: s.map_or(f64::NAN, |s| s.p_value),
        r2: log_r_squared(pred, actual).unwrap_or(f64::NAN),
        alignment,
        alignment_macro: None,
        n_firms: pred.len(),
    }
}

/// Per-drug rows followed by one pooled row per algorithm.
pub fn reference_metrics(runs: &[RunEntry], reference: &[ReferenceRow]) -> Result<Vec<MetricRow>, WorkflowError> {
    let mut rows = Vec::new();
    let mut pooled: BTreeMap<&str, (Algorithm, Vec<f64>, Vec<f64>, Vec<(usize, usize)>)> = BTreeMap::new();
    for run in runs {
        let s = score(run, reference)?;
        rows.push(row(
            &run.drug_id,
            run.algorithm,
            &s.pred,
            &s.actual,
            s.matched as f64 / s.slots as f64,
        ));
        let e = pooled
            .entry(run.algorithm.as_str())
            .or_insert_with(|| (run.algorithm, Vec::new(), Vec::new(), Vec::new()));
        e.1.extend(&s.pred);
        e.2.extend(&s.actual);
        e.3.push((s.matched, s.slots));
    }
    for (algorithm, pred, actual, align) in pooled.into_values() {
        let (micro, macro_) = aggregate_alignment(&align);
        let mut r = row(POOLED, algorithm, &pred, &actual, micro);
        r.alignment_macro = Some(macro_);
        rows.push(r);
    }
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProfitRow {
    pub drug_id: String,
    pub algorithm: Algorithm,
    pub n_firms: usize,
    pub mean_price: f64,
    pub mean_profit: f64,
    pub profit_min: f64,
    pub profit_q25: f64,
    pub profit_median: f64,
    pub profit_q75: f64,
    pub profit_max: f64,
}

fn profit_row(drug_id: &str, algorithm: Algorithm, prices: &[f64], profits: &[f64]) -> ProfitRow {
    let n = profits.len();
    ProfitRow {
        drug_id: drug_id.to_string(),
        algorithm,
        n_firms: n,
        mean_price: prices.iter().sum::<f64>() / n as f64,
        mean_profit: profits.iter().sum::<f64>() / n as f64,
        profit_min: quantile(profits, 0.0),
        profit_q25: quantile(profits, 0.25),
        profit_median: quantile(profits, 0.5),
        profit_q75: quantile(profits, 0.75),
        profit_max: quantile(profits, 1.0),
    }
}

/// Profit summaries per drug and pooled per algorithm.
pub fn profit_summary(runs: &[RunEntry]) -> Vec<ProfitRow> {
    let mut rows = Vec::new();
    let mut pooled: BTreeMap<&str, (Algorithm, Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for run in runs.iter().filter(|r| !r.firms.is_empty()) {
        let prices: Vec<f64> = run.firms.iter().map(|f| f.final_price).collect();
        let profits: Vec<f64> = run.firms.iter().map(|f| f.profit).collect();
        rows.push(profit_row(&run.drug_id, run.algorithm, &prices, &profits));
        let e = pooled
            .entry(run.algorithm.as_str())
            .or_insert_with(|| (run.algorithm, Vec::new(), Vec::new()));
        e.1.extend(prices);
        e.2.extend(profits);
    }
    for (algorithm, prices, profits) in pooled.into_values() {
        rows.push(profit_row(POOLED, algorithm, &prices, &profits));
    }
    rows
}
