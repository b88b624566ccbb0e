//! Per-node EXP4 over joint (threshold, destination) experts.
//!
//! Expert `e = (h, d)` recommends offloading to destination `d` when the local
//! confidence is below threshold `θ_h` and local termination otherwise. A node
//! keeps one weight vector per task type and turns it into an action
//! distribution over `{local} ∪ U_n`, mixed with the uniform distribution at
//! rate `λ`.
//!
//! Action indices: `0` is local termination, `d + 1` offloads to `U_n[d]`.

use rand::Rng;

use crate::error::{Error, Result};
use crate::topology::{NodeId, Topology};
use crate::workload::TaskId;

/// Uniform threshold grid `{0, 0.1, ..., 1.0}`.
pub fn default_thresholds() -> Vec<f64> {
    (0..=10).map(|i| i as f64 / 10.0).collect()
}

/// Joint expert space `H × U_n`, indexed `h * |U_n| + d`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpertGrid {
    thresholds: Vec<f64>,
    destinations: Vec<NodeId>,
}

impl ExpertGrid {
    pub fn new(thresholds: Vec<f64>, destinations: Vec<NodeId>) -> Result<Self> {
        if thresholds.is_empty() {
            return Err(Error::config(
                "params.thresholds",
                "threshold grid is empty",
            ));
        }
        if thresholds.iter().any(|t| !(0.0..=1.0).contains(t)) {
            return Err(Error::config(
                "params.thresholds",
                "thresholds must lie in [0, 1]",
            ));
        }
        if thresholds.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::config(
                "params.thresholds",
                "thresholds must be strictly increasing",
            ));
        }
        if destinations.is_empty() {
            return Err(Error::Routing(
                "expert grid needs at least one destination".into(),
            ));
        }
        Ok(Self {
            thresholds,
            destinations,
        })
    }

    pub fn len(&self) -> usize {
        self.thresholds.len() * self.destinations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn thresholds(&self) -> &[f64] {
        &self.thresholds
    }

    pub fn destinations(&self) -> &[NodeId] {
        &self.destinations
    }

    pub fn num_actions(&self) -> usize {
        self.destinations.len() + 1
    }

    /// `(threshold index, destination index)` of expert `e`.
    pub fn expert(&self, e: usize) -> (usize, usize) {
        (e / self.destinations.len(), e % self.destinations.len())
    }

    pub fn threshold_of(&self, e: usize) -> f64 {
        self.thresholds[e / self.destinations.len()]
    }

    pub fn destination_of(&self, e: usize) -> usize {
        e % self.destinations.len()
    }

    /// Action an expert recommends at confidence `z`.
    pub fn recommend(&self, e: usize, z: f64) -> usize {
        if self.threshold_of(e) > z {
            self.destination_of(e) + 1
        } else {
            0
        }
    }
}

/// Raw expert-induced distribution `p` and its exploration-mixed version `p̃`.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionDistribution {
    pub raw: Vec<f64>,
    pub mixed: Vec<f64>,
}

impl ActionDistribution {
    pub fn from_raw(raw: Vec<f64>, lambda: f64) -> Self {
        let floor = lambda / raw.len() as f64;
        let mixed = raw.iter().map(|p| (1.0 - lambda) * p + floor).collect();
        Self { raw, mixed }
    }

    /// Total mixed probability of leaving the node.
    pub fn offload_prob(&self) -> f64 {
        self.mixed[1..].iter().sum()
    }
}

/// Aggregates expert weights into action probabilities at confidence `z`.
pub fn action_probs(grid: &ExpertGrid, weights: &[f64], z: f64, lambda: f64) -> ActionDistribution {
    debug_assert_eq!(weights.len(), grid.len());
    let mut raw = vec![0.0; grid.num_actions()];
    for (e, &w) in weights.iter().enumerate() {
        raw[grid.recommend(e, z)] += w;
    }
    ActionDistribution::from_raw(raw, lambda)
}

/// Samples an action index from the mixed distribution.
pub fn sample_action<R: Rng + ?Sized>(dist: &ActionDistribution, rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (a, &p) in dist.mixed.iter().enumerate() {
        acc += p;
        if u < acc {
            return a;
        }
    }
    // rounding left a sliver above the cumulative sum; take the last positive action
    dist.mixed.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

/// Exponential weights `w_e ∝ exp(-η ĝ_e)`, written into `out`.
pub fn exp_weights(cum_loss: &[f64], eta: f64, out: &mut [f64]) {
    let min = cum_loss.iter().copied().fold(f64::INFINITY, f64::min);
    let mut total = 0.0;
    for (w, &g) in out.iter_mut().zip(cum_loss) {
        *w = (-eta * (g - min)).exp();
        total += *w;
    }
    out.iter_mut().for_each(|w| *w /= total);
}

/// Shannon entropy in nats.
pub fn entropy(weights: &[f64]) -> f64 {
    weights
        .iter()
        .filter(|&&w| w > 0.0)
        .map(|&w| -w * w.ln())
        .sum()
}

#[derive(Debug, Clone)]
struct TaskState {
    weights: Vec<f64>,
    cum_loss: Vec<f64>,
    entropy: f64,
    stale: bool,
}

#[derive(Debug, Clone)]
struct NodeState {
    grid: ExpertGrid,
    eta: f64,
    tasks: Vec<TaskState>,
}

/// Weights and cumulative losses for every (non-oracle node, task type).
#[derive(Debug, Clone)]
pub struct ExpertTable {
    nodes: Vec<Option<NodeState>>,
    lambda: f64,
}

impl ExpertTable {
    /// `eta = None` picks `sqrt(ln|E_n| / horizon)` per node.
    pub fn new(
        topo: &Topology,
        thresholds: &[f64],
        num_tasks: usize,
        lambda: f64,
        eta: Option<f64>,
        horizon: f64,
    ) -> Result<Self> {
        let mut nodes = Vec::with_capacity(topo.num_nodes());
        for n in topo.nodes() {
            if topo.is_oracle(n.id) {
                nodes.push(None);
                continue;
            }
            let grid = ExpertGrid::new(thresholds.to_vec(), topo.uplinks(n)?.to_vec())?;
            let size = grid.len();
            let eta = eta.unwrap_or_else(|| ((size as f64).ln() / horizon).sqrt());
            let uniform = 1.0 / size as f64;
            let task = TaskState {
                weights: vec![uniform; size],
                cum_loss: vec![0.0; size],
                entropy: (size as f64).ln(),
                stale: false,
            };
            nodes.push(Some(NodeState {
                grid,
                eta,
                tasks: vec![task; num_tasks],
            }));
        }
        Ok(Self { nodes, lambda })
    }

    fn node(&self, n: NodeId) -> &NodeState {
        self.nodes[n.index()]
            .as_ref()
            .expect("oracle nodes have no expert table")
    }

    fn task_mut(&mut self, n: NodeId, y: TaskId) -> &mut TaskState {
        &mut self.nodes[n.index()]
            .as_mut()
            .expect("oracle nodes have no expert table")
            .tasks[y.index()]
    }

    pub fn grid(&self, n: NodeId) -> &ExpertGrid {
        &self.node(n).grid
    }

    pub fn eta(&self, n: NodeId) -> f64 {
        self.node(n).eta
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn weights(&self, n: NodeId, y: TaskId) -> &[f64] {
        &self.node(n).tasks[y.index()].weights
    }

    pub fn cum_loss(&self, n: NodeId, y: TaskId) -> &[f64] {
        &self.node(n).tasks[y.index()].cum_loss
    }

    /// Action distribution for a job of type `y` with confidence `z` at node `n`.
    pub fn action_probs(&self, n: NodeId, y: TaskId, z: f64) -> ActionDistribution {
        let node = self.node(n);
        action_probs(&node.grid, &node.tasks[y.index()].weights, z, self.lambda)
    }

    /// Recomputes `w(t)` from `ĝ(t-1)` for one (node, task).
    pub fn update_weights(&mut self, n: NodeId, y: TaskId) {
        let eta = self.node(n).eta;
        let task = self.task_mut(n, y);
        exp_weights(&task.cum_loss, eta, &mut task.weights);
        task.entropy = entropy(&task.weights);
        task.stale = false;
    }

    /// Slot-start refresh: recomputes every table whose losses changed since the
    /// last refresh. Equivalent to updating all of them.
    pub fn refresh(&mut self) {
        for node in self.nodes.iter_mut().flatten() {
            let eta = node.eta;
            for task in node.tasks.iter_mut().filter(|t| t.stale) {
                exp_weights(&task.cum_loss, eta, &mut task.weights);
                task.entropy = entropy(&task.weights);
                task.stale = false;
            }
        }
    }

    /// `ĝ_e += loss_e` for every expert of (n, y).
    pub fn accumulate_loss(&mut self, n: NodeId, y: TaskId, losses: &[f64]) -> Result<()> {
        if let Some((e, &value)) = losses.iter().enumerate().find(|(_, l)| !l.is_finite()) {
            return Err(Error::NonFiniteLoss {
                node: n.0,
                task: y.index(),
                expert: e,
                value,
            });
        }
        let task = self.task_mut(n, y);
        assert_eq!(losses.len(), task.cum_loss.len(), "one loss per expert");
        let mut changed = false;
        for (g, &l) in task.cum_loss.iter_mut().zip(losses) {
            *g += l;
            changed |= l != 0.0;
        }
        task.stale |= changed;
        Ok(())
    }

    pub fn entropy(&self, n: NodeId, y: TaskId) -> f64 {
        self.node(n).tasks[y.index()].entropy
    }

    /// Expert-weight entropy averaged over every (non-oracle node, task type).
    pub fn mean_entropy(&self) -> f64 {
        let mut total = 0.0;
        let mut count = 0usize;
        for node in self.nodes.iter().flatten() {
            for task in &node.tasks {
                total += task.entropy;
                count += 1;
            }
        }
        if count == 0 {
            0.0
        } else {
            total / count as f64
        }
    }
}

#[cfg(test)]
mod tests {
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::topology::build_topology;

    fn grid(thresholds: Vec<f64>, fan: u32) -> ExpertGrid {
        ExpertGrid::new(thresholds, (0..fan).map(NodeId).collect()).unwrap()
    }

    #[test]
    fn hand_enumerated_action_probs() {
        let g = grid(vec![0.3, 0.7], 1);
        let d = action_probs(&g, &[0.5, 0.5], 0.5, 0.1);
        // θ=0.3 ≤ z keeps local, θ=0.7 > z offloads
        assert_eq!(d.raw, vec![0.5, 0.5]);
    }

    #[test]
    fn confident_job_stays_local() {
        let g = grid(vec![0.0, 0.5, 0.9], 2);
        let w = vec![1.0 / 6.0; 6];
        let lambda = 0.1;
        let d = action_probs(&g, &w, 1.0, lambda);
        assert_abs_diff_eq!(d.raw[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(d.mixed[0], 1.0 - lambda + lambda / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn exploration_floor_with_one_destination() {
        let g = grid(default_thresholds(), 1);
        let w = vec![1.0 / 11.0; 11];
        for z in [0.0, 0.35, 1.0] {
            let d = action_probs(&g, &w, z, 0.1);
            assert!(d.mixed.iter().all(|&p| p >= 0.05 - 1e-15));
        }
    }

    #[test]
    fn equal_losses_give_uniform_weights() {
        let mut w = vec![0.0; 4];
        exp_weights(&[3.0; 4], 0.7, &mut w);
        for x in w {
            assert_abs_diff_eq!(x, 0.25, epsilon = 1e-15);
        }
    }

    #[test]
    fn closed_form_softmax() {
        let eta = 0.3;
        let mut w = vec![0.0; 2];
        exp_weights(&[0.0, std::f64::consts::LN_2 / eta], eta, &mut w);
        assert_abs_diff_eq!(w[0], 2.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(w[1], 1.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn huge_losses_do_not_overflow() {
        let mut w = vec![0.0; 3];
        exp_weights(&[1e300, 1e300 + 1e290, -1e300], 1.0, &mut w);
        assert!(w.iter().all(|x| x.is_finite()));
        assert_abs_diff_eq!(w.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn degenerate_distribution_always_local() {
        let d = ActionDistribution {
            raw: vec![1.0, 0.0],
            mixed: vec![1.0, 0.0],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..1000 {
            assert_eq!(sample_action(&d, &mut rng), 0);
        }
    }

    #[test]
    fn sampling_frequencies() {
        let d = ActionDistribution {
            raw: vec![0.3, 0.7],
            mixed: vec![0.3, 0.7],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let n = 100_000;
        let zeros = (0..n).filter(|_| sample_action(&d, &mut rng) == 0).count();
        let sd = (0.3f64 * 0.7 / n as f64).sqrt();
        assert!((zeros as f64 / n as f64 - 0.3).abs() < 3.0 * sd);

        let mut a = ChaCha8Rng::seed_from_u64(5);
        let mut b = ChaCha8Rng::seed_from_u64(5);
        let xs: Vec<_> = (0..100).map(|_| sample_action(&d, &mut a)).collect();
        let ys: Vec<_> = (0..100).map(|_| sample_action(&d, &mut b)).collect();
        assert_eq!(xs, ys);
    }

    #[test]
    fn accumulate_touches_only_named_experts() {
        let topo = build_topology(&[1, 2, 1], &[Some(5.0), Some(5.0), None], 0.4, 1.0).unwrap();
        let mut t = ExpertTable::new(&topo, &[0.2, 0.8], 3, 0.1, Some(0.5), 1.0).unwrap();
        let n = NodeId(0);
        let y = TaskId(1);
        t.accumulate_loss(n, y, &[0.0; 4]).unwrap();
        assert_eq!(t.cum_loss(n, y), &[0.0; 4]);
        t.accumulate_loss(n, y, &[0.0, 2.0, 0.0, 0.0]).unwrap();
        assert_eq!(t.cum_loss(n, y), &[0.0, 2.0, 0.0, 0.0]);
        assert_eq!(t.cum_loss(n, TaskId(0)), &[0.0; 4]);
        assert!(t.accumulate_loss(n, y, &[f64::NAN, 0.0, 0.0, 0.0]).is_err());
        t.refresh();
        assert!(t.weights(n, y)[1] < t.weights(n, y)[0]);
        assert_abs_diff_eq!(t.weights(n, TaskId(0))[0], 0.25, epsilon = 1e-15);
    }

    #[test]
    fn replayed_cumulative_loss() {
        let topo = build_topology(&[1, 1], &[Some(5.0), None], 0.4, 1.0).unwrap();
        let mut t = ExpertTable::new(&topo, &[0.5], 1, 0.1, None, 100.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut running = 0.0;
        for _ in 0..500 {
            let l: f64 = rng.random_range(0.0..10.0);
            running += l;
            t.accumulate_loss(NodeId(0), TaskId(0), &[l]).unwrap();
        }
        assert_abs_diff_eq!(t.cum_loss(NodeId(0), TaskId(0))[0], running, epsilon = 1e-9);
    }

    #[test]
    fn default_eta_uses_grid_size() {
        let topo = build_topology(&[4, 2, 1], &[Some(30.0), Some(100.0), None], 0.4, 1.0).unwrap();
        let t = ExpertTable::new(&topo, &default_thresholds(), 2, 0.1, None, 20_000.0).unwrap();
        assert_abs_diff_eq!(
            t.eta(NodeId(0)),
            (22f64.ln() / 20_000.0).sqrt(),
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            t.eta(NodeId(4)),
            (11f64.ln() / 20_000.0).sqrt(),
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            t.mean_entropy(),
            (2.0 * 4.0 * 22f64.ln() + 2.0 * 2.0 * 11f64.ln()) / 12.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn rejects_unsorted_thresholds() {
        assert!(ExpertGrid::new(vec![0.5, 0.5], vec![NodeId(1)]).is_err());
        assert!(ExpertGrid::new(vec![0.5, 1.5], vec![NodeId(1)]).is_err());
    }

    proptest! {
        #[test]
        fn simplex_and_floor(
            losses in prop::collection::vec(-50.0f64..50.0, 1..12),
            fan in 1u32..4,
            z in 0.0f64..=1.0,
            lambda in 0.01f64..0.99,
            eta in 0.0f64..5.0,
        ) {
            let thresholds: Vec<f64> = (0..losses.len()).map(|i| i as f64 / losses.len() as f64).collect();
            let g = grid(thresholds, fan);
            let cum: Vec<f64> = (0..g.len()).map(|e| losses[e % losses.len()] * (e as f64 + 1.0)).collect();
            let mut w = vec![0.0; g.len()];
            exp_weights(&cum, eta, &mut w);
            prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(w.iter().all(|&x| x >= 0.0));
            let best = cum.iter().copied().fold(f64::INFINITY, f64::min);
            let w_best = cum.iter().zip(&w).find(|(c, _)| **c == best).map(|(_, w)| *w).unwrap();
            prop_assert!(w.iter().all(|&x| x <= w_best));

            let d = action_probs(&g, &w, z, lambda);
            prop_assert!((d.raw.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!((d.mixed.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let floor = lambda / (fan as f64 + 1.0);
            prop_assert!(d.mixed.iter().all(|&p| p >= floor - 1e-15));
        }

        #[test]
        fn shift_invariance(
            losses in prop::collection::vec(-20.0f64..20.0, 2..20),
            shift in -1e3f64..1e3,
            eta in 0.01f64..2.0,
        ) {
            let mut a = vec![0.0; losses.len()];
            let mut b = vec![0.0; losses.len()];
            exp_weights(&losses, eta, &mut a);
            let shifted: Vec<f64> = losses.iter().map(|l| l + shift).collect();
            exp_weights(&shifted, eta, &mut b);
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }
}
