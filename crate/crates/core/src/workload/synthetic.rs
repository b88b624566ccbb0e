//! Synthetic stand-in for a benchmark trace.
//!
//! Each task type gets a latent difficulty and each model a skill that grows
//! with the logarithm of its size; a per-(task, model) affinity term lets small
//! models specialise. On top of that, every task has an "impossible" component:
//! with probability `h_y` a job of type `y` defeats every model. The component
//! is concentrated on difficult task types and scaled so that the expected
//! fraction of hard jobs under a uniform task mix matches `hard_fraction`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Catalog, Modality, ModelSpec, TaskId, TaskInfo};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelTemplate {
    pub id: String,
    pub size: f64,
    /// Vision-language models also accept text jobs.
    pub vision: bool,
}

/// 8 text-only and 15 vision-language models, sized in billions of parameters.
pub fn default_model_roster() -> Vec<ModelTemplate> {
    let text = [0.5, 0.5, 0.774, 1.5, 7.0, 16.0, 67.0, 72.0];
    let vision = [
        1.0, 2.2, 3.0, 4.2, 7.0, 7.0, 7.0, 8.0, 12.0, 16.0, 27.0, 27.0, 32.0, 72.0, 78.0,
    ];
    let mut roster = Vec::with_capacity(text.len() + vision.len());
    for (i, &size) in text.iter().enumerate() {
        roster.push(ModelTemplate {
            id: format!("lm{i:02}-{size}b"),
            size,
            vision: false,
        });
    }
    for (i, &size) in vision.iter().enumerate() {
        roster.push(ModelTemplate {
            id: format!("vlm{i:02}-{size}b"),
            size,
            vision: true,
        });
    }
    roster
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub num_tasks: usize,
    pub text_task_fraction: f64,
    /// Target fraction of jobs that no model answers correctly.
    pub hard_fraction: f64,
    /// Seed for the task/model universe; held fixed across runs so that seeds
    /// only vary arrivals and routing, as with a fixed benchmark trace.
    pub universe_seed: u64,
    pub difficulty_spread: f64,
    pub affinity_spread: f64,
    pub base_skill: f64,
    /// Skill gained per e-fold of model size.
    pub size_skill: f64,
    /// Concentration of the impossible component on difficult tasks.
    pub hardness_tilt: f64,
    pub max_impossible: f64,
    pub text_size: [f64; 2],
    pub vision_size: [f64; 2],
    pub models: Vec<ModelTemplate>,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            num_tasks: 12,
            text_task_fraction: 0.614,
            hard_fraction: 0.11,
            universe_seed: 7,
            difficulty_spread: 0.8,
            affinity_spread: 0.7,
            base_skill: -0.3,
            size_skill: 0.35,
            hardness_tilt: 1.5,
            max_impossible: 0.8,
            text_size: [1.0, 5.0],
            vision_size: [10.0, 20.0],
            models: default_model_roster(),
        }
    }
}

/// Generated universe plus the latent quantities needed to sample jobs.
#[derive(Debug, Clone)]
pub struct SyntheticUniverse {
    pub catalog: Catalog,
    impossible: Vec<f64>,
    // [task][model] error probability given the job is not impossible
    cond_error: Vec<Vec<f64>>,
    text_size: [f64; 2],
    vision_size: [f64; 2],
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl SyntheticSpec {
    pub fn build(&self) -> SyntheticUniverse {
        let mut rng = ChaCha8Rng::seed_from_u64(self.universe_seed);
        let n_text = ((self.num_tasks as f64) * self.text_task_fraction).round() as usize;
        let tasks: Vec<TaskInfo> = (0..self.num_tasks)
            .map(|t| {
                let modality = if t < n_text {
                    Modality::Text
                } else {
                    Modality::Vision
                };
                let prefix = match modality {
                    Modality::Text => "text",
                    Modality::Vision => "vision",
                };
                TaskInfo {
                    name: format!("{prefix}-{t:03}"),
                    modality,
                }
            })
            .collect();
        let models: Vec<ModelSpec> = self
            .models
            .iter()
            .map(|m| ModelSpec {
                id: m.id.clone(),
                size: m.size,
                modalities: if m.vision {
                    vec![Modality::Text, Modality::Vision]
                } else {
                    vec![Modality::Text]
                },
            })
            .collect();

        let z: Vec<f64> = (0..self.num_tasks)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        let skill: Vec<f64> = models
            .iter()
            .map(|m| self.base_skill + self.size_skill * m.size.ln())
            .collect();
        let cond_error: Vec<Vec<f64>> = z
            .iter()
            .map(|&zt| {
                skill
                    .iter()
                    .map(|&s| {
                        let aff: f64 = StandardNormal.sample(&mut rng);
                        sigmoid(self.difficulty_spread * zt + self.affinity_spread * aff - s)
                    })
                    .collect()
            })
            .collect();

        // probability that every model fails on a non-impossible job
        let natural: Vec<f64> = tasks
            .iter()
            .zip(&cond_error)
            .map(|(task, row)| {
                models
                    .iter()
                    .zip(row)
                    .map(|(m, &e)| if m.supports(task.modality) { e } else { 1.0 })
                    .product()
            })
            .collect();
        let tilt: Vec<f64> = z
            .iter()
            .map(|&zt| (self.hardness_tilt * zt).exp())
            .collect();
        let impossible_at = |scale: f64| -> Vec<f64> {
            tilt.iter()
                .map(|&w| (scale * w).min(self.max_impossible))
                .collect()
        };
        let hard_rate = |h: &[f64]| -> f64 {
            h.iter()
                .zip(&natural)
                .map(|(&h, &nat)| h + (1.0 - h) * nat)
                .sum::<f64>()
                / self.num_tasks.max(1) as f64
        };
        let (mut lo, mut hi) = (0.0, 1.0);
        while hard_rate(&impossible_at(hi)) < self.hard_fraction && hi < 1e6 {
            hi *= 2.0;
        }
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if hard_rate(&impossible_at(mid)) < self.hard_fraction {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let impossible = impossible_at(lo);

        let error: Vec<Vec<f64>> = cond_error
            .iter()
            .zip(&impossible)
            .map(|(row, &h)| row.iter().map(|&e| h + (1.0 - h) * e).collect())
            .collect();

        SyntheticUniverse {
            catalog: Catalog::new(tasks, models, error),
            impossible,
            cond_error,
            text_size: self.text_size,
            vision_size: self.vision_size,
        }
    }
}

impl SyntheticUniverse {
    /// Expected hard-job fraction under the given task mixture.
    pub fn expected_hard_fraction(&self, mixture: &[f64]) -> f64 {
        let c = &self.catalog;
        mixture
            .iter()
            .enumerate()
            .map(|(t, &w)| {
                let task = TaskId(t as u32);
                let natural: f64 = c
                    .model_ids()
                    .map(|m| {
                        if c.supports(m, task) {
                            self.cond_error[t][m.index()]
                        } else {
                            1.0
                        }
                    })
                    .product();
                let h = self.impossible[t];
                w * (h + (1.0 - h) * natural)
            })
            .sum()
    }

    pub fn impossible_rate(&self, task: TaskId) -> f64 {
        self.impossible[task.index()]
    }

    pub fn mean_size(&self, task: TaskId) -> f64 {
        let [lo, hi] = self.size_range(task);
        0.5 * (lo + hi)
    }

    fn size_range(&self, task: TaskId) -> [f64; 2] {
        match self.catalog.task(task).modality {
            Modality::Text => self.text_size,
            Modality::Vision => self.vision_size,
        }
    }

    /// Draws a job's size and per-model correctness bits.
    pub fn sample<R: Rng + ?Sized>(&self, task: TaskId, rng: &mut R) -> (f64, Vec<bool>) {
        let [lo, hi] = self.size_range(task);
        let size = if hi > lo {
            rng.random_range(lo..hi)
        } else {
            lo
        };
        let t = task.index();
        let n = self.catalog.num_models();
        if rng.random::<f64>() < self.impossible[t] {
            return (size, vec![false; n]);
        }
        let correct = self
            .catalog
            .model_ids()
            .map(|m| {
                let u: f64 = rng.random();
                self.catalog.supports(m, task) && u >= self.cond_error[t][m.index()]
            })
            .collect();
        (size, correct)
    }
}
