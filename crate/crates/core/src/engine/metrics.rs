//! Per-slot metrics, run summaries, and their on-disk formats.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::regret::{KeyRegret, RegretPoint};
use crate::error::{Error, Result};
use crate::topology::NodeId;
use crate::workload::TaskId;

/// One slot of a run. `costs` and `queues` cover the queued (non-entry) nodes
/// in id order; the queue value is the one after the slot's update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotMetrics {
    pub slot: u64,
    pub jobs: u64,
    pub errors: u64,
    pub hard_jobs: u64,
    pub hard_hits: u64,
    pub feedback: u64,
    pub mean_entropy: f64,
    pub drift_penalty: f64,
    pub costs: Vec<f64>,
    pub queues: Vec<f64>,
}

/// Fixed leading columns of `metrics.csv`; per-node columns follow.
pub const FIXED_COLUMNS: [&str; 8] = [
    "slot",
    "jobs",
    "errors",
    "hard_jobs",
    "hard_hits",
    "feedback",
    "mean_entropy",
    "drift_penalty",
];

pub fn csv_header(queued: &[NodeId]) -> Vec<String> {
    let mut h: Vec<String> = FIXED_COLUMNS.iter().map(|s| s.to_string()).collect();
    h.extend(queued.iter().map(|n| format!("cost_{n}")));
    h.extend(queued.iter().map(|n| format!("queue_{n}")));
    h
}

pub fn write_metrics_csv(path: &Path, queued: &[NodeId], rows: &[SlotMetrics]) -> Result<()> {
    let csv_err = |e| Error::Csv {
        context: format!("writing {}", path.display()),
        source: e,
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(csv_header(queued)).map_err(csv_err)?;
    for r in rows {
        let mut rec = vec![
            r.slot.to_string(),
            r.jobs.to_string(),
            r.errors.to_string(),
            r.hard_jobs.to_string(),
            r.hard_hits.to_string(),
            r.feedback.to_string(),
            r.mean_entropy.to_string(),
            r.drift_penalty.to_string(),
        ];
        rec.extend(r.costs.iter().map(f64::to_string));
        rec.extend(r.queues.iter().map(f64::to_string));
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush()
        .map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

/// One job's route.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathRecord {
    pub job_id: u64,
    pub slot: u64,
    pub task: TaskId,
    pub hop_cost: f64,
    pub path: Vec<NodeId>,
    pub exit_layer: usize,
    pub reached_oracle: bool,
    pub error: bool,
    pub hard: bool,
}

pub fn write_paths_jsonl(path: &Path, records: &[PathRecord]) -> Result<()> {
    let file =
        File::create(path).map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r).map_err(|e| Error::Json {
            context: format!("writing {}", path.display()),
            source: e,
        })?;
        w.write_all(b"\n")
            .map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
    }
    w.flush()
        .map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeCost {
    pub node: NodeId,
    pub layer: usize,
    pub avg_cost: f64,
    pub final_queue: f64,
    pub max_queue: f64,
}

/// Headline numbers of one seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub run_id: String,
    pub policy: String,
    pub topology: String,
    pub placement: String,
    pub seed: u64,
    pub jobs: u64,
    pub slots: u64,
    pub error_rate: f64,
    pub hit_rate: f64,
    pub feedback_rate: f64,
    pub hard_jobs: u64,
    pub offload_prob: Option<f64>,
    pub nodes: Vec<NodeCost>,
    pub regret_curve: Vec<RegretPoint>,
    pub entropy_curve: Vec<(u64, f64)>,
    pub regret: Vec<KeyRegret>,
    /// Fed estimates where the baseline fell outside `(0, 2f]`.
    pub baseline_violations: u64,
    pub baseline_checks: u64,
    pub mean_baseline: f64,
}

impl RunSummary {
    /// Entropy at the latest checkpoint at or before `slot`.
    pub fn entropy_at(&self, slot: u64) -> Option<f64> {
        self.entropy_curve
            .iter()
            .rev()
            .find(|(s, _)| *s <= slot)
            .map(|&(_, e)| e)
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Json {
            context: "serializing summary".into(),
            source: e,
        })?;
        std::fs::write(path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        serde_json::from_str(&text).map_err(|e| Error::Json {
            context: format!("parsing {}", path.display()),
            source: e,
        })
    }
}

/// Mean and sample standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_order() {
        let h = csv_header(&[NodeId(4), NodeId(6)]);
        assert_eq!(&h[..8], &FIXED_COLUMNS.map(String::from));
        assert_eq!(&h[8..], &["cost_n4", "cost_n6", "queue_n4", "queue_n6"]);
    }

    #[test]
    fn mean_std_examples() {
        assert_eq!(mean_std(&[2.0]), (2.0, 0.0));
        let (m, s) = mean_std(&[1.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 2f64.sqrt()).abs() < 1e-12);
    }
}
