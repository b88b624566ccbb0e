//! Model onloading: which models each node keeps in memory.
//!
//! The utility of a set `S` at a node is the expected accuracy of the best
//! model in `S` over the node's task mixture, minus `ν` times the memory of
//! models that were not loaded in the previous epoch. Greedy adds models by
//! marginal gain per unit of memory until nothing fits or every gain is
//! negative.

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::topology::{NodeId, Topology};
use crate::workload::{Catalog, ModelId, TaskId};

/// Loaded model sets per node, indexed by node id. The oracle's set is empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    pub loaded: Vec<Vec<ModelId>>,
    pub epoch: u64,
}

impl Placement {
    pub fn empty(topo: &Topology) -> Self {
        Self {
            loaded: vec![Vec::new(); topo.num_nodes()],
            epoch: 0,
        }
    }

    pub fn models_at(&self, n: NodeId) -> &[ModelId] {
        &self.loaded[n.index()]
    }

    /// Memory used at `n`.
    pub fn memory_used(&self, catalog: &Catalog, n: NodeId) -> f64 {
        self.loaded[n.index()]
            .iter()
            .map(|&m| catalog.size(m))
            .sum()
    }

    /// Knapsack feasibility at every node.
    pub fn is_feasible(&self, topo: &Topology, catalog: &Catalog) -> bool {
        topo.nodes()
            .all(|n| self.memory_used(catalog, n.id) <= topo.memory_budget(n.id) + 1e-9)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlacementKind {
    Greedy,
    RandomFixed,
    LayerDiverse,
}

/// Everything the utility of one node depends on.
#[derive(Debug, Clone, Copy)]
pub struct PlacementUtilityCtx<'a> {
    pub catalog: &'a Catalog,
    /// Estimated arrival mixture over task types at the node.
    pub mixture: &'a [f64],
    pub switch_penalty: f64,
    pub previous: &'a [ModelId],
}

impl PlacementUtilityCtx<'_> {
    fn switch_cost(&self, m: ModelId) -> f64 {
        if self.previous.contains(&m) {
            0.0
        } else {
            self.switch_penalty * self.catalog.size(m)
        }
    }

    /// Per-task best error over `set`, 1 for tasks nothing in `set` can serve.
    fn best_errors(&self, set: &[ModelId]) -> Vec<f64> {
        (0..self.catalog.num_tasks())
            .map(|t| {
                set.iter()
                    .map(|&m| self.catalog.expected_error(TaskId(t as u32), m))
                    .fold(1.0, f64::min)
            })
            .collect()
    }

    fn accuracy_gain(&self, best: &[f64], m: ModelId) -> f64 {
        self.mixture
            .iter()
            .zip(best)
            .enumerate()
            .filter(|(_, (&p, _))| p > 0.0)
            .map(|(t, (&p, &cur))| {
                p * (cur - self.catalog.expected_error(TaskId(t as u32), m)).max(0.0)
            })
            .sum()
    }
}

/// Expected-accuracy part of the utility.
pub fn accuracy_term(ctx: &PlacementUtilityCtx, set: &[ModelId]) -> f64 {
    ctx.mixture
        .iter()
        .zip(ctx.best_errors(set))
        .map(|(p, e)| p * (1.0 - e))
        .sum()
}

pub fn utility(ctx: &PlacementUtilityCtx, set: &[ModelId]) -> f64 {
    accuracy_term(ctx, set) - set.iter().map(|&m| ctx.switch_cost(m)).sum::<f64>()
}

/// `U(S ∪ {m}) − U(S)` in closed form: the mixture-weighted error reduction
/// over the current best, minus the switching penalty of `m`.
pub fn marginal_gain(ctx: &PlacementUtilityCtx, m: ModelId, set: &[ModelId]) -> f64 {
    debug_assert!(!set.contains(&m));
    ctx.accuracy_gain(&ctx.best_errors(set), m) - ctx.switch_cost(m)
}

/// One greedy step's bookkeeping, kept for diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GreedyStep {
    pub model: ModelId,
    pub gain: f64,
    pub accuracy_gain: f64,
}

/// Marginal-density greedy under a memory budget. Returns the chosen set in
/// order of addition.
pub fn greedy_onload(ctx: &PlacementUtilityCtx, budget: f64, pool: &[ModelId]) -> Vec<ModelId> {
    greedy_trace(ctx, budget, pool)
        .into_iter()
        .map(|s| s.model)
        .collect()
}

/// Like [`greedy_onload`] but also reports each step's gains.
pub fn greedy_trace(ctx: &PlacementUtilityCtx, budget: f64, pool: &[ModelId]) -> Vec<GreedyStep> {
    let mut pool: Vec<ModelId> = pool.to_vec();
    pool.sort_unstable();
    pool.dedup();
    let mut chosen: Vec<GreedyStep> = Vec::new();
    let mut best = vec![1.0; ctx.catalog.num_tasks()];
    let mut remaining = budget;
    loop {
        let mut pick: Option<(f64, GreedyStep)> = None;
        for &m in &pool {
            let size = ctx.catalog.size(m);
            if size > remaining || chosen.iter().any(|s| s.model == m) {
                continue;
            }
            let acc = ctx.accuracy_gain(&best, m);
            let gain = acc - ctx.switch_cost(m);
            let density = gain / size;
            if pick.as_ref().is_none_or(|(d, _)| density > *d) {
                pick = Some((
                    density,
                    GreedyStep {
                        model: m,
                        gain,
                        accuracy_gain: acc,
                    },
                ));
            }
        }
        let Some((_, step)) = pick else { break };
        if step.gain < 0.0 {
            break;
        }
        remaining -= ctx.catalog.size(step.model);
        for (t, b) in best.iter_mut().enumerate() {
            *b = b.min(ctx.catalog.expected_error(TaskId(t as u32), step.model));
        }
        chosen.push(step);
    }
    chosen
}

/// Fills the budget by repeatedly adding a uniformly random model that still fits.
pub fn random_fill<R: Rng + ?Sized>(
    catalog: &Catalog,
    budget: f64,
    pool: &[ModelId],
    rng: &mut R,
) -> Vec<ModelId> {
    let mut candidates: Vec<ModelId> = pool.to_vec();
    candidates.sort_unstable();
    candidates.dedup();
    let mut chosen = Vec::new();
    let mut remaining = budget;
    loop {
        let feasible: Vec<usize> = (0..candidates.len())
            .filter(|&i| catalog.size(candidates[i]) <= remaining)
            .collect();
        let Some(&i) = feasible.choose(rng) else {
            break;
        };
        let m = candidates.swap_remove(i);
        remaining -= catalog.size(m);
        chosen.push(m);
    }
    chosen
}

/// Round-robin partition of the pool into `k` groups by model index.
pub fn layer_groups(pool: &[ModelId], k: usize) -> Vec<Vec<ModelId>> {
    let mut sorted = pool.to_vec();
    sorted.sort_unstable();
    let mut groups = vec![Vec::new(); k];
    for (i, m) in sorted.into_iter().enumerate() {
        groups[i % k].push(m);
    }
    groups
}

/// Fixed placements for the two non-adaptive baselines.
pub fn baseline_placement<R: Rng + ?Sized>(
    kind: PlacementKind,
    topo: &Topology,
    catalog: &Catalog,
    rng: &mut R,
) -> Placement {
    let pool: Vec<ModelId> = catalog.model_ids().collect();
    let groups = layer_groups(&pool, topo.depth());
    let mut placement = Placement::empty(topo);
    for n in topo.nodes() {
        if topo.is_oracle(n.id) {
            continue;
        }
        let candidates = match kind {
            PlacementKind::LayerDiverse => &groups[n.layer - 1],
            _ => &pool,
        };
        placement.loaded[n.id.index()] =
            random_fill(catalog, topo.memory_budget(n.id), candidates, rng);
    }
    placement
}
