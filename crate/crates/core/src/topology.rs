//! Layered node hierarchy.
//!
//! Layer 1 holds the entry nodes where jobs arrive, layer `K` holds the
//! oracle. Every node in layer `k < K` may offload to any node of layer
//! `k + 1`. Node ids are assigned densely, layer by layer, starting at 0.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense node identifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl NodeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}

/// A node together with its (1-based) layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeRef {
    pub id: NodeId,
    pub layer: usize,
}

/// Serializable description of a topology, as it appears in experiment configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologySpec {
    pub layer_sizes: Vec<usize>,
    /// One entry per layer; `null` (or a missing trailing entry) means unbounded.
    /// The oracle entry is ignored.
    pub memory_budgets: Vec<Option<f64>>,
    /// Per-slot cost budget `γ` shared by every non-entry node.
    pub resource_budget: f64,
    #[serde(default = "default_tau")]
    pub tau: f64,
    /// Multiplier applied to every hop's transfer cost.
    #[serde(default = "default_distance_factor")]
    pub distance_factor: f64,
}

fn default_tau() -> f64 {
    1.0
}

fn default_distance_factor() -> f64 {
    1.0
}

impl TopologySpec {
    /// 4-2-1 hierarchy with memory budgets (30, 100, unbounded).
    pub fn three_layer() -> Self {
        Self::with_budgets(vec![4, 2, 1], vec![Some(30.0), Some(100.0), None])
    }

    /// 8-4-2-1 hierarchy with memory budgets (30, 80, 200, unbounded).
    pub fn four_layer() -> Self {
        Self::with_budgets(
            vec![8, 4, 2, 1],
            vec![Some(30.0), Some(80.0), Some(200.0), None],
        )
    }

    /// 16-8-4-2-1 hierarchy with memory budgets (30, 80, 150, 200, unbounded).
    pub fn five_layer() -> Self {
        Self::with_budgets(
            vec![16, 8, 4, 2, 1],
            vec![Some(30.0), Some(80.0), Some(150.0), Some(200.0), None],
        )
    }

    fn with_budgets(layer_sizes: Vec<usize>, memory_budgets: Vec<Option<f64>>) -> Self {
        Self {
            layer_sizes,
            memory_budgets,
            resource_budget: 0.4,
            tau: 1.0,
            distance_factor: 1.0,
        }
    }

    /// Short label such as `4-2-1`.
    pub fn label(&self) -> String {
        self.layer_sizes
            .iter()
            .map(|s| s.to_string())
            .collect::<Vec<_>>()
            .join("-")
    }

    pub fn build(&self) -> Result<Topology> {
        let mut topo = build_topology(
            &self.layer_sizes,
            &self.memory_budgets,
            self.resource_budget,
            self.tau,
        )?;
        if !(self.distance_factor.is_finite() && self.distance_factor > 0.0) {
            return Err(Error::Topology(format!(
                "distance factor must be positive, got {}",
                self.distance_factor
            )));
        }
        topo.distance_factor = self.distance_factor;
        Ok(topo)
    }
}

/// Immutable K-layer hierarchy.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    layers: Vec<Vec<NodeId>>,
    layer_of: Vec<usize>,
    memory_budget: Vec<f64>,
    resource_budget: Vec<Option<f64>>,
    tau: f64,
    distance_factor: f64,
}

/// Builds a topology with uniform per-slot resource budget on every non-entry node.
///
/// `memory_budgets` holds one entry per layer; the last entry is ignored and the
/// oracle is treated as unbounded. Missing or `None` entries for non-oracle
/// layers are rejected.
pub fn build_topology(
    layer_sizes: &[usize],
    memory_budgets: &[Option<f64>],
    resource_budget: f64,
    tau: f64,
) -> Result<Topology> {
    let k = layer_sizes.len();
    if k < 2 {
        return Err(Error::Topology(format!("need at least 2 layers, got {k}")));
    }
    if let Some(pos) = layer_sizes.iter().position(|&s| s == 0) {
        return Err(Error::Topology(format!("layer {} is empty", pos + 1)));
    }
    if !(resource_budget.is_finite() && resource_budget > 0.0) {
        return Err(Error::Topology(format!(
            "resource budget must be positive, got {resource_budget}"
        )));
    }
    if !(tau.is_finite() && tau > 0.0) {
        return Err(Error::Topology(format!("tau must be positive, got {tau}")));
    }

    let mut layers = Vec::with_capacity(k);
    let mut layer_of = Vec::new();
    let mut memory_budget = Vec::new();
    let mut res_budget = Vec::new();
    let mut next = 0u32;
    for (li, &size) in layer_sizes.iter().enumerate() {
        let layer = li + 1;
        let mu = if layer == k {
            f64::INFINITY
        } else {
            match memory_budgets.get(li).copied().flatten() {
                Some(mu) if mu.is_finite() && mu > 0.0 => mu,
                Some(mu) => {
                    return Err(Error::Topology(format!(
                        "memory budget of layer {layer} must be positive, got {mu}"
                    )))
                }
                None => {
                    return Err(Error::Topology(format!(
                        "memory budget of layer {layer} is missing"
                    )))
                }
            }
        };
        let mut ids = Vec::with_capacity(size);
        for _ in 0..size {
            ids.push(NodeId(next));
            layer_of.push(layer);
            memory_budget.push(mu);
            res_budget.push((layer > 1).then_some(resource_budget));
            next += 1;
        }
        layers.push(ids);
    }

    Ok(Topology {
        layers,
        layer_of,
        memory_budget,
        resource_budget: res_budget,
        tau,
        distance_factor: 1.0,
    })
}

impl Topology {
    /// Number of layers `K`.
    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn num_nodes(&self) -> usize {
        self.layer_of.len()
    }

    /// Nodes of a 1-based layer.
    pub fn layer(&self, layer: usize) -> &[NodeId] {
        &self.layers[layer - 1]
    }

    pub fn layers(&self) -> &[Vec<NodeId>] {
        &self.layers
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeRef> + '_ {
        self.layer_of.iter().enumerate().map(|(i, &layer)| NodeRef {
            id: NodeId(i as u32),
            layer,
        })
    }

    pub fn node(&self, id: NodeId) -> Result<NodeRef> {
        self.layer_of
            .get(id.index())
            .map(|&layer| NodeRef { id, layer })
            .ok_or(Error::UnknownNode(id.0))
    }

    pub fn layer_of(&self, id: NodeId) -> usize {
        self.layer_of[id.index()]
    }

    pub fn is_oracle(&self, id: NodeId) -> bool {
        self.layer_of(id) == self.depth()
    }

    pub fn entry_nodes(&self) -> &[NodeId] {
        &self.layers[0]
    }

    /// Memory capacity `μ_n`; infinite for the oracle.
    pub fn memory_budget(&self, id: NodeId) -> f64 {
        self.memory_budget[id.index()]
    }

    /// Per-slot resource budget `γ_n`; `None` for entry nodes.
    pub fn resource_budget(&self, id: NodeId) -> Option<f64> {
        self.resource_budget[id.index()]
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn distance_factor(&self) -> f64 {
        self.distance_factor
    }

    /// Valid routing destinations `U_n`: every node of the next layer.
    pub fn uplinks(&self, node: NodeRef) -> Result<&[NodeId]> {
        if node.layer >= self.depth() {
            return Err(Error::NoUplinks(node.id.0));
        }
        Ok(&self.layers[node.layer])
    }

    /// Nodes that carry a virtual queue (layers 2..K).
    pub fn queued_nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.layers[1..].iter().flatten().copied()
    }

    /// Short label such as `4-2-1`.
    pub fn label(&self) -> String {
        self.layers
            .iter()
            .map(|l| l.len().to_string())
            .collect::<Vec<_>>()
            .join("-")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn three_layer() -> Topology {
        build_topology(&[4, 2, 1], &[Some(30.0), Some(100.0), None], 0.4, 1.0).unwrap()
    }

    #[test]
    fn three_layer_shape() {
        let t = three_layer();
        assert_eq!(t.num_nodes(), 7);
        assert_eq!(t.depth(), 3);
        assert_eq!(t.memory_budget(NodeId(0)), 30.0);
        assert_eq!(t.memory_budget(NodeId(5)), 100.0);
        assert!(t.memory_budget(NodeId(6)).is_infinite());
        assert_eq!(t.resource_budget(NodeId(0)), None);
        assert_eq!(t.resource_budget(NodeId(4)), Some(0.4));
        assert_eq!(t.resource_budget(NodeId(6)), Some(0.4));
    }

    #[test]
    fn minimal_chain() {
        let t = build_topology(&[1, 1], &[Some(30.0), None], 0.4, 1.0).unwrap();
        assert_eq!(t.num_nodes(), 2);
        assert!(t.is_oracle(NodeId(1)));
    }

    #[test]
    fn five_layer_has_31_nodes() {
        let t = TopologySpec::five_layer().build().unwrap();
        assert_eq!(t.num_nodes(), 31);
        assert_eq!(TopologySpec::four_layer().build().unwrap().num_nodes(), 15);
    }

    #[test]
    fn canonical_topologies_halve_per_layer() {
        for spec in [
            TopologySpec::three_layer(),
            TopologySpec::four_layer(),
            TopologySpec::five_layer(),
        ] {
            let t = spec.build().unwrap();
            let k = t.depth();
            for layer in 1..=k {
                assert_eq!(t.layer(layer).len(), 1 << (k - layer));
            }
        }
    }

    #[test]
    fn uplinks_are_full_fan_out() {
        let t = three_layer();
        let entry = t.node(NodeId(0)).unwrap();
        assert_eq!(t.uplinks(entry).unwrap(), &[NodeId(4), NodeId(5)]);
        let mid = t.node(NodeId(5)).unwrap();
        assert_eq!(t.uplinks(mid).unwrap(), &[NodeId(6)]);
        let oracle = t.node(NodeId(6)).unwrap();
        assert!(matches!(t.uplinks(oracle), Err(Error::NoUplinks(6))));
        for n in t.nodes().filter(|n| n.layer < 3) {
            assert_eq!(t.uplinks(n).unwrap().len(), t.layer(n.layer + 1).len());
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(build_topology(&[3], &[Some(1.0)], 0.4, 1.0).is_err());
        assert!(build_topology(&[2, 0, 1], &[Some(1.0), Some(1.0), None], 0.4, 1.0).is_err());
        assert!(build_topology(&[2, 1], &[Some(0.0), None], 0.4, 1.0).is_err());
        assert!(build_topology(&[2, 1], &[Some(-3.0), None], 0.4, 1.0).is_err());
        assert!(build_topology(&[2, 1], &[None, None], 0.4, 1.0).is_err());
        assert!(build_topology(&[2, 1], &[Some(5.0), None], 0.0, 1.0).is_err());
    }

    #[test]
    fn spec_round_trips_through_json() {
        let spec = TopologySpec::four_layer();
        let text = serde_json::to_string(&spec).unwrap();
        let back: TopologySpec = serde_json::from_str(&text).unwrap();
        assert_eq!(spec, back);
        assert_eq!(back.label(), "8-4-2-1");
    }
}
