//! Virtual queues for the long-term per-node cost budgets.
//!
//! Each non-entry node `n` carries `Q_n`, which grows by the cost it received in
//! a slot and drains by its budget `γ_n τ`. Routing decisions in slot `t` see
//! the values frozen at the start of the slot; updates are applied once, after
//! every job of the slot has been routed.

use crate::topology::{NodeId, Topology};

/// One step of the queue recursion: `max(q + cost - γτ, 0)`.
pub fn queue_update(q: f64, realized_cost: f64, gamma_tau: f64) -> f64 {
    (q + realized_cost - gamma_tau).max(0.0)
}

/// Total cost received by a node in one slot, `Σ c^j(n', n)` over its inbound hops.
pub fn realized_cost<'a>(inbound_costs: impl IntoIterator<Item = &'a f64>) -> f64 {
    inbound_costs.into_iter().sum()
}

/// Realized per-slot drift-plus-penalty objective: `Σ q_n C_n + v Σ_j b_j`.
pub fn drift_penalty_diagnostic(
    queues: &[f64],
    slot_costs: &[f64],
    slot_errors: f64,
    v: f64,
) -> f64 {
    let weighted: f64 = queues.iter().zip(slot_costs).map(|(q, c)| q * c).sum();
    weighted + v * slot_errors
}

/// Queue values for every node, indexed by node id. Entry nodes stay at 0.
#[derive(Debug, Clone, PartialEq)]
pub struct QueueState {
    q: Vec<f64>,
    budget: Vec<f64>,
}

impl QueueState {
    pub fn new(topo: &Topology) -> Self {
        let budget = topo
            .nodes()
            .map(|n| topo.resource_budget(n.id).map_or(0.0, |g| g * topo.tau()))
            .collect();
        Self {
            q: vec![0.0; topo.num_nodes()],
            budget,
        }
    }

    pub fn get(&self, n: NodeId) -> f64 {
        self.q[n.index()]
    }

    pub fn values(&self) -> &[f64] {
        &self.q
    }

    /// Applies one slot of realized costs (indexed by node id). Nodes without a
    /// budget (entry nodes) are left at zero.
    pub fn apply(&mut self, slot_costs: &[f64]) {
        for ((q, &c), &b) in self.q.iter_mut().zip(slot_costs).zip(&self.budget) {
            if b > 0.0 {
                *q = queue_update(*q, c, b);
            }
        }
    }
}
