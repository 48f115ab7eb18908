//! Per-iteration metrics rows, run reports and their CSV form.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::config::Framework;

pub const CSV_HEADER: &str =
    "iteration,simulated_time_s,per_node_storage_bytes,global_loss,committed_blocks,rejected_blocks,evictions";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub iteration: u64,
    pub simulated_time_s: f64,
    /// Maximum over nodes.
    pub per_node_storage_bytes: u64,
    pub global_loss: f64,
    pub committed_blocks: u64,
    pub rejected_blocks: u64,
    pub evictions: u64,
}

pub fn to_csv(rows: &[MetricsRow]) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(
            s,
            "{},{:.6},{},{:.12e},{},{},{}",
            r.iteration, r.simulated_time_s, r.per_node_storage_bytes, r.global_loss, r.committed_blocks, r.rejected_blocks, r.evictions
        );
    }
    s
}

pub fn from_csv(text: &str) -> Result<Vec<MetricsRow>, String> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == CSV_HEADER => {}
        Some(h) => return Err(format!("unexpected header {h:?}")),
        None => return Err("empty file".into()),
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 7 {
            return Err(format!("line {}: expected 7 fields, found {}", i + 2, f.len()));
        }
        let err = |what: &str| format!("line {}: bad {what}", i + 2);
        rows.push(MetricsRow {
            iteration: f[0].parse().map_err(|_| err("iteration"))?,
            simulated_time_s: f[1].parse().map_err(|_| err("simulated_time_s"))?,
            per_node_storage_bytes: f[2].parse().map_err(|_| err("per_node_storage_bytes"))?,
            global_loss: f[3].parse().map_err(|_| err("global_loss"))?,
            committed_blocks: f[4].parse().map_err(|_| err("committed_blocks"))?,
            rejected_blocks: f[5].parse().map_err(|_| err("rejected_blocks"))?,
            evictions: f[6].parse().map_err(|_| err("evictions"))?,
        });
    }
    Ok(rows)
}

/// Protocol-level diagnostics gathered by the harness during a run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    pub peak_retained_payloads: usize,
    pub peak_retained_sets: usize,
    pub storage_violations: usize,
    pub conflicting_commits: usize,
    pub falsified_commits: usize,
    pub misbehavior_reports: usize,
    pub rejections: BTreeMap<String, usize>,
    pub skipped_updates: usize,
    /// Inter-committee handoffs consumed per (iteration, committee), min and max.
    pub handoffs_min: Option<usize>,
    pub handoffs_max: Option<usize>,
    /// Every completed iteration's final aggregation was bit-identical across honest nodes.
    pub finals_identical: bool,
    pub oracle_max_error: f64,
    pub honest_digests_agree: bool,
    /// (honest-leader windows after GST, windows that committed within 3 views)
    pub liveness_windows: usize,
    pub liveness_ok: usize,
    /// Honest-leader windows skipped because an honest member had to defer the block.
    pub liveness_excluded: usize,
    /// (byzantine selection entries in committed steps, those with weight 0)
    pub byzantine_entries: usize,
    pub byzantine_zero_weight: usize,
    pub fallback_steps: usize,
    pub view_changes: usize,
    pub handoff_fallbacks: usize,
    pub omniscient_fallbacks: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub framework: Framework,
    pub n: usize,
    pub c: usize,
    pub payload_bytes: u64,
    pub rows: Vec<MetricsRow>,
    pub iteration_times: Vec<f64>,
    pub final_params: Vec<f64>,
    pub final_loss: f64,
    pub liveness_failure: Option<String>,
    pub stats: RunStats,
    pub trace_digest: String,
}

impl RunReport {
    pub fn mean_iteration_time(&self) -> f64 {
        if self.iteration_times.is_empty() {
            return f64::NAN;
        }
        self.iteration_times.iter().sum::<f64>() / self.iteration_times.len() as f64
    }

    pub fn final_storage(&self) -> u64 {
        self.rows.last().map_or(0, |r| r.per_node_storage_bytes)
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip() {
        let rows = vec![MetricsRow {
            iteration: 1,
            simulated_time_s: 12.5,
            per_node_storage_bytes: 56_000_000,
            global_loss: 0.125,
            committed_blocks: 4,
            rejected_blocks: 0,
            evictions: 0,
        }];
        let text = to_csv(&rows);
        assert!(text.starts_with(CSV_HEADER));
        assert_eq!(from_csv(&text).unwrap(), rows);
        assert!(from_csv("a,b\n").is_err());
        assert!(from_csv("").is_err());
    }
}
