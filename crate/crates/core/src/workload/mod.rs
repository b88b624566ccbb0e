//! Job stream: model catalog, arrivals, per-job correctness and confidence.
//!
//! A [`Catalog`] fixes the task types, the model pool and the expected error of
//! every (task, model) pair. Jobs carry their realized correctness bit for every
//! model, drawn once when the job is created, so a job queried twice at the same
//! node always sees the same answer.

mod arrivals;
mod inference;
mod synthetic;
mod trace;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::topology::NodeId;

pub use arrivals::{dirichlet, ArrivalModel, JobSource, JobStream};
pub use inference::{confidence, inference_error, select_model, ConfidenceModel};
pub use synthetic::{default_model_roster, ModelTemplate, SyntheticSpec, SyntheticUniverse};
pub use trace::{load_trace, write_trace, Trace, TraceRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Text,
    Vision,
}

/// Index of a task type in its [`Catalog`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TaskId(pub u32);

impl TaskId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "t{}", self.0)
    }
}

/// Index of a model in its [`Catalog`]. Lower index wins ties.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ModelId(pub u32);

impl ModelId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskInfo {
    pub name: String,
    pub modality: Modality,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub id: String,
    /// Memory footprint `s_m` in memory units.
    pub size: f64,
    pub modalities: Vec<Modality>,
}

impl ModelSpec {
    pub fn supports(&self, modality: Modality) -> bool {
        self.modalities.contains(&modality)
    }
}

/// Task types, model pool and the expected-error table `ε̄(y, m)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Catalog {
    tasks: Vec<TaskInfo>,
    models: Vec<ModelSpec>,
    // row-major [task][model]; 1.0 where the modality is unsupported
    error: Vec<f64>,
}

impl Catalog {
    /// `error[t][m]` is the expected error of model `m` on task `t`. Entries for
    /// unsupported modalities are forced to 1.
    pub fn new(tasks: Vec<TaskInfo>, models: Vec<ModelSpec>, error: Vec<Vec<f64>>) -> Self {
        assert_eq!(
            error.len(),
            tasks.len(),
            "error table rows must match tasks"
        );
        let mut flat = Vec::with_capacity(tasks.len() * models.len());
        for (task, row) in tasks.iter().zip(&error) {
            assert_eq!(
                row.len(),
                models.len(),
                "error table columns must match models"
            );
            for (model, &e) in models.iter().zip(row) {
                flat.push(if model.supports(task.modality) {
                    e.clamp(0.0, 1.0)
                } else {
                    1.0
                });
            }
        }
        Self {
            tasks,
            models,
            error: flat,
        }
    }

    pub fn tasks(&self) -> &[TaskInfo] {
        &self.tasks
    }

    pub fn models(&self) -> &[ModelSpec] {
        &self.models
    }

    pub fn num_tasks(&self) -> usize {
        self.tasks.len()
    }

    pub fn num_models(&self) -> usize {
        self.models.len()
    }

    pub fn task(&self, t: TaskId) -> &TaskInfo {
        &self.tasks[t.index()]
    }

    pub fn model(&self, m: ModelId) -> &ModelSpec {
        &self.models[m.index()]
    }

    pub fn model_ids(&self) -> impl Iterator<Item = ModelId> {
        (0..self.models.len() as u32).map(ModelId)
    }

    pub fn size(&self, m: ModelId) -> f64 {
        self.models[m.index()].size
    }

    pub fn supports(&self, m: ModelId, t: TaskId) -> bool {
        self.models[m.index()].supports(self.tasks[t.index()].modality)
    }

    /// Expected error of `m` on task `t` (1 when unsupported).
    pub fn expected_error(&self, t: TaskId, m: ModelId) -> f64 {
        self.error[t.index() * self.models.len() + m.index()]
    }

    pub fn model_by_name(&self, id: &str) -> Option<ModelId> {
        self.models
            .iter()
            .position(|m| m.id == id)
            .map(|i| ModelId(i as u32))
    }
}

/// One inference job.
#[derive(Debug, Clone, PartialEq)]
pub struct Job {
    pub id: u64,
    pub arrival_slot: u64,
    pub task: TaskId,
    pub entry: NodeId,
    /// Transfer size in cost units.
    pub size_units: f64,
    /// `correct[m]` is true when model `m` answers this job correctly.
    pub correct: Vec<bool>,
}

impl Job {
    /// True when no model in the pool answers correctly.
    pub fn is_hard(&self) -> bool {
        hard_job_tagging(self)
    }
}

/// A job is hard iff every model gets it wrong.
pub fn hard_job_tagging(job: &Job) -> bool {
    job.correct.iter().all(|&c| !c)
}
