//! Bound-violation accounting over dialogue records.

use std::io::Write;

use serde::Serialize;

use super::DialogueRecord;
use crate::agents::Phase;

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ConstraintStats {
    pub batch_id: String,
    pub records: usize,
    pub below_cost: usize,
    pub above_max: usize,
    pub fallbacks: usize,
}

fn pct(count: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        (10_000.0 * count as f64 / total as f64).round() / 100.0
    }
}

impl ConstraintStats {
    /// Counts training-phase records whose raw bid fell outside `[C, P_max]`.
    pub fn from_records<'a>(
        batch_id: &str,
        records: impl IntoIterator<Item = &'a DialogueRecord>,
    ) -> Self {
        let mut s = Self {
            batch_id: batch_id.to_string(),
            ..Self::default()
        };
        for r in records.into_iter().filter(|r| r.phase == Phase::Train.as_str()) {
            s.records += 1;
            s.below_cost += r.below_cost as usize;
            s.above_max += r.above_max as usize;
            s.fallbacks += r.fallback as usize;
        }
        s
    }

    pub fn merge(&mut self, other: &ConstraintStats) {
        self.records += other.records;
        self.below_cost += other.below_cost;
        self.above_max += other.above_max;
        self.fallbacks += other.fallbacks;
    }

    /// Percentage of records below cost, rounded to 2 decimals.
    pub fn below_pct(&self) -> f64 {
        pct(self.below_cost, self.records)
    }

    pub fn above_pct(&self) -> f64 {
        pct(self.above_max, self.records)
    }
}

pub fn constraint_stats(batch_id: &str, records: &[DialogueRecord]) -> ConstraintStats {
    ConstraintStats::from_records(batch_id, records)
}

/// Per-batch rows (merged by batch id, in first-seen order) plus a `Total`
/// row.
pub fn constraint_table(rows: &[ConstraintStats]) -> Vec<ConstraintStats> {
    let mut out: Vec<ConstraintStats> = Vec::new();
    for r in rows {
        match out.iter_mut().find(|o| o.batch_id == r.batch_id) {
            Some(o) => o.merge(r),
            None => out.push(r.clone()),
        }
    }
    let mut total = ConstraintStats {
        batch_id: "Total".into(),
        ..ConstraintStats::default()
    };
    for r in &out {
        total.merge(r);
    }
    out.push(total);
    out
}

pub fn write_constraint_csv<W: Write>(w: W, rows: &[ConstraintStats]) -> csv::Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record([
        "batch_id",
        "dialogue_records",
        "below_cost",
        "below_cost_pct",
        "above_max",
        "above_max_pct",
        "fallbacks",
    ])?;
    for r in rows {
        wr.write_record([
            r.batch_id.clone(),
            r.records.to_string(),
            r.below_cost.to_string(),
            format!("{:.2}", r.below_pct()),
            r.above_max.to_string(),
            format!("{:.2}", r.above_pct()),
            r.fallbacks.to_string(),
        ])?;
    }
    wr.flush()?;
    Ok(())
}
