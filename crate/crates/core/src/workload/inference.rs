use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Catalog, Job, ModelId, TaskId};

/// Gaussian confidence scores centred on the best loaded model's expected accuracy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceModel {
    pub noise_std: f64,
}

impl Default for ConfidenceModel {
    fn default() -> Self {
        Self { noise_std: 0.1 }
    }
}

/// Model-selection rule: the loaded model with the lowest expected error on the
/// task, ties broken by lowest id. `None` if no loaded model supports the task.
pub fn select_model(catalog: &Catalog, task: TaskId, loaded: &[ModelId]) -> Option<ModelId> {
    loaded
        .iter()
        .copied()
        .filter(|&m| catalog.supports(m, task))
        .min_by(|&a, &b| {
            catalog
                .expected_error(task, a)
                .total_cmp(&catalog.expected_error(task, b))
                .then(a.cmp(&b))
        })
}

/// Confidence score `z ∈ [0, 1]` for `job` at a node holding `loaded`.
pub fn confidence<R: Rng + ?Sized>(
    catalog: &Catalog,
    job: &Job,
    loaded: &[ModelId],
    cm: &ConfidenceModel,
    rng: &mut R,
) -> f64 {
    let center = select_model(catalog, job.task, loaded)
        .map(|m| 1.0 - catalog.expected_error(job.task, m))
        .unwrap_or(0.0);
    let noise = if cm.noise_std > 0.0 {
        Normal::new(0.0, cm.noise_std)
            .expect("noise std validated by config")
            .sample(rng)
    } else {
        0.0
    };
    (center + noise).clamp(0.0, 1.0)
}

/// Realized local inference error `b ∈ {0, 1}`. The oracle never errs; a node
/// with no capable model always errs.
pub fn inference_error(catalog: &Catalog, job: &Job, loaded: &[ModelId], oracle: bool) -> bool {
    if oracle {
        return false;
    }
    match select_model(catalog, job.task, loaded) {
        Some(m) => !job.correct[m.index()],
        None => true,
    }
}
