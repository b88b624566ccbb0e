//! Online routing for multi-layer hierarchical inference.
//!
//! Jobs enter at the bottom layer of a node hierarchy and are either answered
//! locally or forwarded one layer up, until the top layer (an oracle that never
//! errs) is reached. Routing is learned per node and task type with EXP4 over
//! (confidence threshold, destination) experts; long-run per-node cost budgets
//! are enforced through virtual queues; loss feedback exists only for jobs
//! that reach the oracle and is importance weighted, optionally with a
//! variance-reducing baseline. Models are placed on nodes by a marginal-density
//! greedy rule under memory budgets.

pub mod baselines;
pub mod control;
pub mod engine;
pub mod error;
pub mod estimation;
pub mod placement;
pub mod routing;
pub mod topology;
pub mod validate;
pub mod workload;

pub use baselines::PolicyKind;
pub use engine::{run_experiment, ExperimentConfig, RunOutput, RunSummary, Simulation};
pub use error::{Error, Result};
pub use placement::PlacementKind;
pub use topology::{NodeId, NodeRef, Topology, TopologySpec};
