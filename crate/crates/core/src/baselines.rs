//! Non-learning routers and the estimator variants of the learning router.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::topology::Topology;

/// Every routing policy the simulator can run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    PureLocal,
    Random,
    RoundRobin,
    LyExp4,
    VrLocalLoss,
    VrLyExp4,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 6] = [
        PolicyKind::VrLyExp4,
        PolicyKind::VrLocalLoss,
        PolicyKind::LyExp4,
        PolicyKind::Random,
        PolicyKind::RoundRobin,
        PolicyKind::PureLocal,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::PureLocal => "pure_local",
            PolicyKind::Random => "random",
            PolicyKind::RoundRobin => "round_robin",
            PolicyKind::LyExp4 => "ly_exp4",
            PolicyKind::VrLocalLoss => "vr_local_loss",
            PolicyKind::VrLyExp4 => "vr_ly_exp4",
        }
    }

    pub fn is_learning(self) -> bool {
        variant_flags(self).is_some()
    }

    pub fn static_kind(self) -> Option<StaticKind> {
        match self {
            PolicyKind::PureLocal => Some(StaticKind::PureLocal),
            PolicyKind::Random => Some(StaticKind::Random),
            PolicyKind::RoundRobin => Some(StaticKind::RoundRobin),
            _ => None,
        }
    }
}

impl std::fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StaticKind {
    PureLocal,
    Random,
    RoundRobin,
}

/// State of a static router for one run.
#[derive(Debug, Clone, PartialEq)]
pub struct StaticPolicyConfig {
    pub kind: StaticKind,
    pub offload_prob: f64,
    rr_counters: Vec<usize>,
}

impl StaticPolicyConfig {
    pub fn new(kind: StaticKind, offload_prob: f64, num_nodes: usize) -> Self {
        let offload_prob = match kind {
            StaticKind::PureLocal => 0.0,
            _ => offload_prob.clamp(0.0, 1.0),
        };
        Self {
            kind,
            offload_prob,
            rr_counters: vec![0; num_nodes],
        }
    }

    /// Action for a job at node index `node` with `fan` uplinks:
    /// 0 terminates locally, `d + 1` offloads to the `d`-th uplink.
    pub fn static_action<R: Rng + ?Sized>(
        &mut self,
        node: usize,
        fan: usize,
        rng: &mut R,
    ) -> usize {
        if self.kind == StaticKind::PureLocal || fan == 0 || !rng.random_bool(self.offload_prob) {
            return 0;
        }
        match self.kind {
            StaticKind::Random => 1 + rng.random_range(0..fan),
            StaticKind::RoundRobin => {
                let c = &mut self.rr_counters[node];
                let d = *c % fan;
                *c += 1;
                1 + d
            }
            StaticKind::PureLocal => unreachable!(),
        }
    }
}

/// Per-hop offload probability that keeps the expected inbound cost of a
/// layer-2 node within its share of the budget. The budget is scaled by the
/// ratio of layer-2 to entry nodes, so a node that serves two entry nodes gets
/// half of `γ` per entry node. Capped at 1.
pub fn calibrate_offload_prob(topo: &Topology, rate_per_entry: f64, mean_job_cost: f64) -> f64 {
    let share = topo.layer(2).len() as f64 / topo.layer(1).len() as f64;
    let gamma = topo.resource_budget(topo.layer(2)[0]).unwrap_or(0.0) * topo.tau();
    offload_prob_for(gamma * share, rate_per_entry * mean_job_cost)
}

/// `min(1, budget / expected cost per entry node per slot)`.
pub fn offload_prob_for(effective_budget: f64, cost_per_slot: f64) -> f64 {
    if cost_per_slot <= 0.0 {
        1.0
    } else {
        (effective_budget / cost_per_slot).min(1.0)
    }
}

/// How a learning policy turns full-feedback losses into estimates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EstimatorFlags {
    pub variance_reduced: bool,
    /// Drop the downstream expected loss from the offload branch.
    pub local_loss: bool,
}

pub fn variant_flags(kind: PolicyKind) -> Option<EstimatorFlags> {
    match kind {
        PolicyKind::LyExp4 => Some(EstimatorFlags {
            variance_reduced: false,
            local_loss: false,
        }),
        PolicyKind::VrLocalLoss => Some(EstimatorFlags {
            variance_reduced: true,
            local_loss: true,
        }),
        PolicyKind::VrLyExp4 => Some(EstimatorFlags {
            variance_reduced: true,
            local_loss: false,
        }),
        _ => None,
    }
}
