use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Poisson};

use super::{Catalog, Job, SyntheticUniverse, TaskId, Trace};
use crate::topology::NodeId;

/// Symmetric Dirichlet draw over `k` categories.
pub fn dirichlet<R: Rng + ?Sized>(alpha: f64, k: usize, rng: &mut R) -> Vec<f64> {
    let gamma = Gamma::new(alpha, 1.0).expect("dirichlet concentration must be positive");
    let mut v: Vec<f64> = (0..k).map(|_| gamma.sample(rng)).collect();
    let total: f64 = v.iter().sum();
    if total > 0.0 {
        v.iter_mut().for_each(|x| *x /= total);
    } else {
        // every gamma draw underflowed; only reachable for tiny alpha
        let i = rng.random_range(0..k);
        v[i] = 1.0;
    }
    v
}

/// Where jobs come from: a synthetic universe or a recorded trace.
#[derive(Debug, Clone)]
pub enum JobSource {
    Synthetic(SyntheticUniverse),
    Trace {
        trace: Trace,
        by_task: Vec<Vec<usize>>,
    },
}

impl JobSource {
    pub fn from_trace(trace: Trace) -> Self {
        let mut by_task = vec![Vec::new(); trace.catalog.num_tasks()];
        for (i, rec) in trace.records.iter().enumerate() {
            by_task[rec.task.index()].push(i);
        }
        JobSource::Trace { trace, by_task }
    }

    pub fn catalog(&self) -> &Catalog {
        match self {
            JobSource::Synthetic(u) => &u.catalog,
            JobSource::Trace { trace, .. } => &trace.catalog,
        }
    }

    /// Task types that can actually be drawn.
    pub fn available_tasks(&self) -> Vec<bool> {
        match self {
            JobSource::Synthetic(u) => vec![true; u.catalog.num_tasks()],
            JobSource::Trace { by_task, .. } => by_task.iter().map(|r| !r.is_empty()).collect(),
        }
    }

    /// Mean transfer size of a task type.
    pub fn mean_size(&self, task: TaskId) -> f64 {
        match self {
            JobSource::Synthetic(u) => u.mean_size(task),
            JobSource::Trace { trace, by_task } => {
                let rows = &by_task[task.index()];
                if rows.is_empty() {
                    0.0
                } else {
                    rows.iter()
                        .map(|&i| trace.records[i].size_units)
                        .sum::<f64>()
                        / rows.len() as f64
                }
            }
        }
    }

    fn sample<R: Rng + ?Sized>(&self, task: TaskId, rng: &mut R) -> (f64, Vec<bool>) {
        match self {
            JobSource::Synthetic(u) => u.sample(task, rng),
            JobSource::Trace { trace, by_task } => {
                let rows = &by_task[task.index()];
                let rec = &trace.records[rows[rng.random_range(0..rows.len())]];
                (rec.size_units, rec.correct.clone())
            }
        }
    }
}

/// Stationary arrival process: Poisson counts per entry node and a fixed
/// task mixture per entry node.
#[derive(Debug, Clone, PartialEq)]
pub struct ArrivalModel {
    pub rate_per_entry: f64,
    pub entries: Vec<NodeId>,
    pub mixtures: Vec<Vec<f64>>,
}

impl ArrivalModel {
    /// Draws one Dirichlet(`alpha`) mixture per entry node over the available tasks.
    pub fn draw<R: Rng + ?Sized>(
        entries: &[NodeId],
        available: &[bool],
        rate_per_entry: f64,
        alpha: f64,
        rng: &mut R,
    ) -> Self {
        let support: Vec<usize> = available
            .iter()
            .enumerate()
            .filter_map(|(i, &a)| a.then_some(i))
            .collect();
        let mixtures = entries
            .iter()
            .map(|_| {
                let w = dirichlet(alpha, support.len(), rng);
                let mut full = vec![0.0; available.len()];
                for (&t, p) in support.iter().zip(w) {
                    full[t] = p;
                }
                full
            })
            .collect();
        Self {
            rate_per_entry,
            entries: entries.to_vec(),
            mixtures,
        }
    }

    pub fn mixture_of(&self, entry: NodeId) -> Option<&[f64]> {
        self.entries
            .iter()
            .position(|&e| e == entry)
            .map(|i| self.mixtures[i].as_slice())
    }

    /// Mixture of all arrivals pooled over entry nodes.
    pub fn pooled_mixture(&self) -> Vec<f64> {
        let n = self.mixtures.first().map_or(0, Vec::len);
        let mut out = vec![0.0; n];
        for m in &self.mixtures {
            for (o, p) in out.iter_mut().zip(m) {
                *o += p / self.mixtures.len() as f64;
            }
        }
        out
    }
}

/// Sequential job generator. The RNG stream order defines the job stream.
#[derive(Debug)]
pub struct JobStream<'a> {
    source: &'a JobSource,
    arrivals: ArrivalModel,
    cumulative: Vec<Vec<f64>>,
    poisson: Option<Poisson<f64>>,
    rng: ChaCha8Rng,
    next_id: u64,
}

impl<'a> JobStream<'a> {
    pub fn new(source: &'a JobSource, arrivals: ArrivalModel, rng: ChaCha8Rng) -> Self {
        let cumulative = arrivals
            .mixtures
            .iter()
            .map(|m| {
                let mut acc = 0.0;
                m.iter()
                    .map(|p| {
                        acc += p;
                        acc
                    })
                    .collect()
            })
            .collect();
        let poisson = (arrivals.rate_per_entry > 0.0)
            .then(|| Poisson::new(arrivals.rate_per_entry).expect("rate validated by config"));
        Self {
            source,
            arrivals,
            cumulative,
            poisson,
            rng,
            next_id: 0,
        }
    }

    pub fn arrivals(&self) -> &ArrivalModel {
        &self.arrivals
    }

    pub fn jobs_generated(&self) -> u64 {
        self.next_id
    }

    /// Jobs arriving in slot `t`, entry node by entry node.
    pub fn generate_slot(&mut self, t: u64) -> Vec<Job> {
        let Some(poisson) = self.poisson else {
            return Vec::new();
        };
        let mut jobs = Vec::new();
        for (e, &entry) in self.arrivals.entries.iter().enumerate() {
            let count = poisson.sample(&mut self.rng) as u64;
            for _ in 0..count {
                let cum = &self.cumulative[e];
                let u: f64 = self.rng.random::<f64>() * cum.last().copied().unwrap_or(0.0);
                let t_idx = cum.partition_point(|&c| c <= u).min(cum.len() - 1);
                let task = TaskId(t_idx as u32);
                let (size_units, correct) = self.source.sample(task, &mut self.rng);
                jobs.push(Job {
                    id: self.next_id,
                    arrival_slot: t,
                    task,
                    entry,
                    size_units,
                    correct,
                });
                self.next_id += 1;
            }
        }
        jobs
    }
}
