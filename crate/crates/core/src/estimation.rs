//! Loss estimation under terminal-only feedback.
//!
//! A job's loss at node `n` is only observed when the job eventually reaches
//! the oracle, which happens with probability `ρ_n`. Both `ρ_n` and the
//! expected downstream loss `f̄_n` are computed by a backward pass from the
//! oracle layer over every node's action distribution for the job.
//!
//! Two estimators of an expert's full-feedback loss `f` are provided:
//!
//! * naive importance weighting: `1{fb} f / ρ`
//! * variance-reduced: `1{fb} (f - β) / ρ + β`, with a per-expert baseline
//!   `β` tracked as an exponential moving average of `f / ρ` over fed jobs.
//!
//! Both are unbiased for `f` whenever `fb ~ Bernoulli(ρ)`; the second has lower
//! variance when `0 < β ≤ 2f`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::routing::ActionDistribution;
use crate::topology::{NodeId, NodeRef, Topology};
use crate::workload::TaskId;

/// Which distribution each recursion runs over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecursionMode {
    /// `ρ` over the mixed (sampling) distribution.
    pub rho_mixed: bool,
    /// `f̄` over the mixed distribution instead of the raw one.
    pub fbar_mixed: bool,
}

impl Default for RecursionMode {
    fn default() -> Self {
        Self {
            rho_mixed: true,
            fbar_mixed: false,
        }
    }
}

/// Queue-weighted hop cost and expected downstream loss of one uplink.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct UplinkTerm {
    /// `q_{n'} c^j(n, n')`
    pub queue_cost: f64,
    /// `f̄_{n'}(j)`
    pub fbar: f64,
}

impl UplinkTerm {
    pub fn total(&self) -> f64 {
        self.queue_cost + self.fbar
    }
}

/// Reach probability of a non-oracle node: `Σ_a p(a) ρ_a` over its uplinks.
/// `probs` is indexed by action, so `probs[0]` (local termination) is skipped.
pub fn reach_prob(node: NodeId, probs: &[f64], uplink_rho: &[f64]) -> Result<f64> {
    debug_assert_eq!(probs.len(), uplink_rho.len() + 1);
    let rho: f64 = probs[1..].iter().zip(uplink_rho).map(|(p, r)| p * r).sum();
    if rho > 0.0 && rho.is_finite() {
        Ok(rho)
    } else {
        Err(Error::ReachProbability { node: node.0, rho })
    }
}

/// Expected loss `f̄_n = v p(0) b + Σ_a p(a) (q_a c + f̄_a)`.
pub fn expected_loss(probs: &[f64], local_error: f64, v: f64, uplinks: &[UplinkTerm]) -> f64 {
    debug_assert_eq!(probs.len(), uplinks.len() + 1);
    v * probs[0] * local_error
        + probs[1..]
            .iter()
            .zip(uplinks)
            .map(|(p, u)| p * u.total())
            .sum::<f64>()
}

/// Full-feedback loss of threshold expert `θ` routing to the given uplink.
pub fn expert_loss(threshold: f64, z: f64, local_error: f64, v: f64, uplink: UplinkTerm) -> f64 {
    if threshold > z {
        uplink.total()
    } else {
        v * local_error
    }
}

pub fn naive_estimate(f: f64, rho: f64, fb: bool) -> f64 {
    if fb {
        f / rho
    } else {
        0.0
    }
}

pub fn vr_estimate(f: f64, baseline: f64, rho: f64, fb: bool) -> f64 {
    if fb {
        (f - baseline) / rho + baseline
    } else {
        baseline
    }
}

/// Closed-form variances `(naive, vr)` of the two estimators when
/// `fb ~ Bernoulli(ρ)`.
pub fn variance_pair(f: f64, baseline: f64, rho: f64) -> (f64, f64) {
    let k = (1.0 - rho) / rho;
    (f * f * k, (f - baseline).powi(2) * k)
}

/// Sufficient condition for the variance-reduced estimator to beat the naive one.
pub fn variance_reduction_condition(f: f64, baseline: f64) -> bool {
    baseline > 0.0 && baseline <= 2.0 * f
}

/// One EMA step on a fed job; no-op otherwise.
pub fn baseline_update(baseline: &mut f64, eta_b: f64, f: f64, rho: f64, fb: bool) {
    if fb {
        *baseline = (1.0 - eta_b) * *baseline + eta_b * f / rho;
    }
}

/// Per (node, task, expert) baselines, all starting at zero.
#[derive(Debug, Clone)]
pub struct BaselineTable {
    values: Vec<Option<Vec<Vec<f64>>>>,
    eta_b: f64,
}

impl BaselineTable {
    pub fn new(
        topo: &Topology,
        experts_per_node: impl Fn(NodeRef) -> usize,
        num_tasks: usize,
        eta_b: f64,
    ) -> Self {
        let values = topo
            .nodes()
            .map(|n| {
                (!topo.is_oracle(n.id)).then(|| vec![vec![0.0; experts_per_node(n)]; num_tasks])
            })
            .collect();
        Self { values, eta_b }
    }

    pub fn eta_b(&self) -> f64 {
        self.eta_b
    }

    pub fn get(&self, n: NodeId, y: TaskId) -> &[f64] {
        &self.values[n.index()]
            .as_ref()
            .expect("no baselines at the oracle")[y.index()]
    }

    pub fn get_mut(&mut self, n: NodeId, y: TaskId) -> &mut [f64] {
        &mut self.values[n.index()]
            .as_mut()
            .expect("no baselines at the oracle")[y.index()]
    }

    pub fn update(&mut self, n: NodeId, y: TaskId, expert: usize, f: f64, rho: f64, fb: bool) {
        let eta_b = self.eta_b;
        baseline_update(&mut self.get_mut(n, y)[expert], eta_b, f, rho, fb);
    }

    /// Mean baseline over every entry, for diagnostics.
    pub fn mean(&self) -> f64 {
        let mut total = 0.0;
        let mut count = 0usize;
        for rows in self.values.iter().flatten() {
            for row in rows {
                total += row.iter().sum::<f64>();
                count += row.len();
            }
        }
        if count == 0 {
            0.0
        } else {
            total / count as f64
        }
    }
}

/// What a node reports about a job when asked by an upstream recursion.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeEval {
    pub z: f64,
    pub local_error: f64,
    pub dist: ActionDistribution,
}

/// Per-node `ρ` and `f̄` for one job, indexed by node id.
#[derive(Debug, Clone, PartialEq)]
pub struct RecursionSnapshot {
    pub rho: Vec<f64>,
    pub fbar: Vec<f64>,
    pub evals: Vec<Option<NodeEval>>,
    hop_cost: f64,
}

impl RecursionSnapshot {
    /// Runs the backward pass over layers `K, K-1, ..., from_layer`.
    ///
    /// `query` is the downstream interface: given a node, it returns the node's
    /// confidence, local error and action distribution for this job. It is
    /// called once per non-oracle node in the covered layers. `hop_cost` is the
    /// job's transfer cost `c^j` (identical on every hop) and `queues` the
    /// slot-start queue values indexed by node id.
    pub fn compute(
        topo: &Topology,
        from_layer: usize,
        hop_cost: f64,
        queues: &[f64],
        v: f64,
        mode: RecursionMode,
        mut query: impl FnMut(NodeRef) -> NodeEval,
    ) -> Result<Self> {
        let n = topo.num_nodes();
        let mut rho = vec![f64::NAN; n];
        let mut fbar = vec![f64::NAN; n];
        let evals = vec![None; n];
        let k = topo.depth();
        for &o in topo.layer(k) {
            rho[o.index()] = 1.0;
            fbar[o.index()] = 0.0;
        }
        let mut snap = Self {
            rho,
            fbar,
            evals,
            hop_cost,
        };
        for layer in (from_layer.max(1)..k).rev() {
            for &id in topo.layer(layer) {
                let node = NodeRef { id, layer };
                snap.extend(topo, node, query(node), queues, v, mode)?;
            }
        }
        Ok(snap)
    }

    /// Adds one non-oracle node whose uplinks are already covered.
    pub fn extend(
        &mut self,
        topo: &Topology,
        node: NodeRef,
        eval: NodeEval,
        queues: &[f64],
        v: f64,
        mode: RecursionMode,
    ) -> Result<()> {
        let ups = topo.uplinks(node)?;
        let up_rho: Vec<f64> = ups.iter().map(|u| self.rho[u.index()]).collect();
        let terms: Vec<UplinkTerm> = ups.iter().map(|&u| self.uplink_term(u, queues)).collect();
        let rho_dist = if mode.rho_mixed {
            &eval.dist.mixed
        } else {
            &eval.dist.raw
        };
        let fbar_dist = if mode.fbar_mixed {
            &eval.dist.mixed
        } else {
            &eval.dist.raw
        };
        let i = node.id.index();
        self.rho[i] = reach_prob(node.id, rho_dist, &up_rho)?;
        self.fbar[i] = expected_loss(fbar_dist, eval.local_error, v, &terms);
        self.evals[i] = Some(eval);
        Ok(())
    }

    /// Uplink term for `to` as seen from any node of the previous layer.
    pub fn uplink_term(&self, to: NodeId, queues: &[f64]) -> UplinkTerm {
        UplinkTerm {
            queue_cost: queues[to.index()] * self.hop_cost,
            fbar: self.fbar[to.index()],
        }
    }

    pub fn hop_cost(&self) -> f64 {
        self.hop_cost
    }
}
