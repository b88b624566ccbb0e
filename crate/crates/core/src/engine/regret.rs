//! Regret against the best fixed expert in hindsight.
//!
//! For every (node, task) the tracker sums the realized per-job loss `F_n` of
//! the running policy and, per expert, the full-feedback loss that expert would
//! have incurred on the same jobs. Regret is the realized sum minus the best
//! expert's sum.

use serde::{Deserialize, Serialize};

use crate::estimation::{expert_loss, UplinkTerm};
use crate::routing::ExpertGrid;
use crate::topology::{NodeId, Topology};
use crate::workload::TaskId;

#[derive(Debug, Clone, Default)]
struct KeyState {
    jobs: u64,
    realized: f64,
    experts: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct RegretTracker {
    keys: Vec<Vec<KeyState>>,
    entries: Vec<NodeId>,
}

/// Regret of one (node, task) key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyRegret {
    pub node: NodeId,
    pub task: TaskId,
    pub jobs: u64,
    pub realized: f64,
    pub best_expert: usize,
    pub best_loss: f64,
    pub regret: f64,
}

/// Aggregate entry-node regret after `jobs` jobs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegretPoint {
    pub jobs: u64,
    pub regret: f64,
    pub per_job: f64,
}

impl RegretTracker {
    pub fn new(topo: &Topology, num_tasks: usize) -> Self {
        Self {
            keys: vec![vec![KeyState::default(); num_tasks]; topo.num_nodes()],
            entries: topo.entry_nodes().to_vec(),
        }
    }

    pub fn record(&mut self, n: NodeId, y: TaskId, realized: f64, expert_losses: &[f64]) {
        let k = &mut self.keys[n.index()][y.index()];
        if k.experts.is_empty() {
            k.experts = vec![0.0; expert_losses.len()];
        }
        k.jobs += 1;
        k.realized += realized;
        for (a, &l) in k.experts.iter_mut().zip(expert_losses) {
            *a += l;
        }
    }

    fn key_regret(n: NodeId, y: TaskId, k: &KeyState) -> Option<KeyRegret> {
        if k.jobs == 0 {
            return None;
        }
        let (best_expert, best_loss) = k
            .experts
            .iter()
            .copied()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))?;
        Some(KeyRegret {
            node: n,
            task: y,
            jobs: k.jobs,
            realized: k.realized,
            best_expert,
            best_loss,
            regret: k.realized - best_loss,
        })
    }

    pub fn get(&self, n: NodeId, y: TaskId) -> Option<KeyRegret> {
        Self::key_regret(n, y, &self.keys[n.index()][y.index()])
    }

    /// Every key that saw at least one job.
    pub fn all(&self) -> Vec<KeyRegret> {
        self.keys
            .iter()
            .enumerate()
            .flat_map(|(n, row)| {
                row.iter().enumerate().filter_map(move |(y, k)| {
                    Self::key_regret(NodeId(n as u32), TaskId(y as u32), k)
                })
            })
            .collect()
    }

    /// Sum of regrets over all entry-node keys.
    pub fn entry_regret(&self) -> f64 {
        self.entries
            .iter()
            .flat_map(|&n| {
                self.keys[n.index()]
                    .iter()
                    .enumerate()
                    .filter_map(move |(y, k)| Self::key_regret(n, TaskId(y as u32), k))
            })
            .map(|k| k.regret)
            .sum()
    }
}

/// What a visited node saw for one job, enough to re-evaluate any expert.
#[derive(Debug, Clone, PartialEq)]
pub struct LossRecord {
    pub node: NodeId,
    pub task: TaskId,
    pub z: f64,
    pub local_error: f64,
    pub uplinks: Vec<UplinkTerm>,
    pub realized: f64,
}

/// Re-evaluates every expert on a log of records and returns the regret of
/// each (node, task) key by exhaustive enumeration of the expert grid.
pub fn regret_oracle(
    records: &[LossRecord],
    grid_of: impl Fn(NodeId) -> ExpertGrid,
    v: f64,
) -> Vec<KeyRegret> {
    use std::collections::BTreeMap;
    let mut acc: BTreeMap<(NodeId, TaskId), KeyState> = BTreeMap::new();
    for r in records {
        let grid = grid_of(r.node);
        let k = acc.entry((r.node, r.task)).or_default();
        if k.experts.is_empty() {
            k.experts = vec![0.0; grid.len()];
        }
        k.jobs += 1;
        k.realized += r.realized;
        for (e, slot) in k.experts.iter_mut().enumerate() {
            let d = grid.destination_of(e);
            *slot += expert_loss(grid.threshold_of(e), r.z, r.local_error, v, r.uplinks[d]);
        }
    }
    acc.iter()
        .filter_map(|(&(n, y), k)| RegretTracker::key_regret(n, y, k))
        .collect()
}
