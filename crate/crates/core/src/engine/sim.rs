//! The slotted simulation loop.
//!
//! Each slot: refresh expert weights from last slot's cumulative losses,
//! re-run model onloading at epoch boundaries, route every arriving job layer by
//! layer, deliver feedback, then update the virtual queues with the slot's
//! realized costs. All routing decisions in a slot see the queue values frozen
//! at its start.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::config::ExperimentConfig;
use super::metrics::{
    write_metrics_csv, write_paths_jsonl, NodeCost, PathRecord, RunSummary, SlotMetrics,
};
use super::regret::{LossRecord, RegretPoint, RegretTracker};
use crate::baselines::{calibrate_offload_prob, variant_flags, EstimatorFlags, StaticPolicyConfig};
use crate::control::{drift_penalty_diagnostic, QueueState};
use crate::error::{Error, Result};
use crate::estimation::{
    expert_loss, naive_estimate, variance_reduction_condition, vr_estimate, BaselineTable,
    NodeEval, RecursionSnapshot, UplinkTerm,
};
use crate::placement::{
    baseline_placement, greedy_onload, Placement, PlacementKind, PlacementUtilityCtx,
};
use crate::routing::{sample_action, ActionDistribution, ExpertTable};
use crate::topology::{NodeId, NodeRef, Topology};
use crate::workload::{
    confidence, inference_error, load_trace, ArrivalModel, Catalog, ConfidenceModel, Job,
    JobSource, JobStream, ModelId, TaskId,
};

/// Builds the job source named by the config.
pub fn build_source(cfg: &ExperimentConfig) -> Result<JobSource> {
    match &cfg.workload.trace {
        Some(path) => Ok(JobSource::from_trace(load_trace(path)?)),
        None => Ok(JobSource::Synthetic(cfg.workload.synthetic.build())),
    }
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const ARRIVALS: u64 = 1;
const ROUTING: u64 = 2;
const PLACEMENT: u64 = 3;

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix(splitmix(seed) ^ stream))
}

/// Per-(job, node) randomness for confidence scores: a pure function of the
/// seed, job and node, so any node can be queried any number of times.
fn job_node_rng(seed: u64, job: u64, node: NodeId) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix(splitmix(splitmix(seed) ^ job) ^ u64::from(node.0)))
}

struct Learner {
    experts: ExpertTable,
    baselines: BaselineTable,
    flags: EstimatorFlags,
    regret: RegretTracker,
    violations: u64,
    checks: u64,
}

/// Result of one seed.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub summary: RunSummary,
    pub queued: Vec<NodeId>,
    pub slots: Vec<SlotMetrics>,
    pub paths: Vec<PathRecord>,
    pub loss_log: Vec<LossRecord>,
}

impl RunOutput {
    /// Writes `metrics.csv`, `summary.json` and (if recorded) `paths.jsonl`
    /// into `dir`, creating it.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)
            .map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
        write_metrics_csv(&dir.join("metrics.csv"), &self.queued, &self.slots)?;
        self.summary.write_json(&dir.join("summary.json"))?;
        if !self.paths.is_empty() {
            write_paths_jsonl(&dir.join("paths.jsonl"), &self.paths)?;
        }
        Ok(())
    }
}

/// Directory of one seed's outputs under `out`.
pub fn run_dir(out: &Path, run_id: &str, seed: u64) -> PathBuf {
    out.join(format!("{run_id}-s{seed}"))
}

pub struct Simulation<'a> {
    cfg: &'a ExperimentConfig,
    topo: Topology,
    catalog: &'a Catalog,
    seed: u64,
    stream: JobStream<'a>,
    routing_rng: ChaCha8Rng,
    confidence_model: ConfidenceModel,
    queues: QueueState,
    learner: Option<Learner>,
    static_policy: Option<StaticPolicyConfig>,
    placement: Placement,
    epoch_counts: Vec<Vec<f64>>,
    queued: Vec<NodeId>,

    slot: u64,
    jobs_done: u64,
    errors: u64,
    hard_jobs: u64,
    hard_hits: u64,
    feedback: u64,
    cost_total: Vec<f64>,
    max_queue: Vec<f64>,

    slots: Vec<SlotMetrics>,
    paths: Vec<PathRecord>,
    regret_curve: Vec<RegretPoint>,
    entropy_curve: Vec<(u64, f64)>,
    record_paths: bool,
    record_losses: bool,
    loss_log: Vec<LossRecord>,
}

impl<'a> Simulation<'a> {
    pub fn new(cfg: &'a ExperimentConfig, source: &'a JobSource, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let topo = cfg.topology.build()?;
        let catalog = source.catalog();
        let mut arrivals_rng = stream_rng(seed, ARRIVALS);
        let arrivals = ArrivalModel::draw(
            topo.entry_nodes(),
            &source.available_tasks(),
            cfg.workload.rate_per_entry,
            cfg.workload.dirichlet_alpha,
            &mut arrivals_rng,
        );
        let mean_cost: f64 = arrivals
            .pooled_mixture()
            .iter()
            .enumerate()
            .map(|(y, p)| p * source.mean_size(TaskId(y as u32)))
            .sum::<f64>()
            * topo.distance_factor();
        let stream = JobStream::new(source, arrivals, arrivals_rng);

        let p = &cfg.params;
        let learner = match variant_flags(cfg.policy) {
            Some(flags) => {
                let experts = ExpertTable::new(
                    &topo,
                    &p.thresholds,
                    catalog.num_tasks(),
                    p.lambda,
                    p.eta,
                    cfg.total_jobs as f64,
                )?;
                let baselines = BaselineTable::new(
                    &topo,
                    |n| experts.grid(n.id).len(),
                    catalog.num_tasks(),
                    p.eta_b,
                );
                Some(Learner {
                    experts,
                    baselines,
                    flags,
                    regret: RegretTracker::new(&topo, catalog.num_tasks()),
                    violations: 0,
                    checks: 0,
                })
            }
            None => None,
        };
        let static_policy = cfg.policy.static_kind().map(|kind| {
            let prob = p.offload_prob.unwrap_or_else(|| {
                calibrate_offload_prob(&topo, cfg.workload.rate_per_entry, mean_cost)
            });
            StaticPolicyConfig::new(kind, prob, topo.num_nodes())
        });

        let mut placement_rng = stream_rng(seed, PLACEMENT);
        let placement = match cfg.placement.kind {
            PlacementKind::Greedy => Placement::empty(&topo),
            kind => baseline_placement(kind, &topo, catalog, &mut placement_rng),
        };
        let queued: Vec<NodeId> = topo.queued_nodes().collect();
        let n = topo.num_nodes();
        Ok(Self {
            cfg,
            catalog,
            seed,
            stream,
            routing_rng: stream_rng(seed, ROUTING),
            confidence_model: ConfidenceModel {
                noise_std: p.confidence_std,
            },
            queues: QueueState::new(&topo),
            learner,
            static_policy,
            placement,
            epoch_counts: vec![vec![0.0; catalog.num_tasks()]; n],
            queued,
            slot: 0,
            jobs_done: 0,
            errors: 0,
            hard_jobs: 0,
            hard_hits: 0,
            feedback: 0,
            cost_total: vec![0.0; n],
            max_queue: vec![0.0; n],
            slots: Vec::new(),
            paths: Vec::new(),
            regret_curve: Vec::new(),
            entropy_curve: Vec::new(),
            record_paths: cfg.output.paths,
            record_losses: false,
            loss_log: Vec::new(),
            topo,
        })
    }

    /// Keeps every visited node's full-feedback inputs for replay checks.
    pub fn record_losses(mut self, on: bool) -> Self {
        self.record_losses = on;
        self
    }

    pub fn topology(&self) -> &Topology {
        &self.topo
    }

    pub fn placement(&self) -> &Placement {
        &self.placement
    }

    pub fn queues(&self) -> &QueueState {
        &self.queues
    }

    pub fn experts(&self) -> Option<&ExpertTable> {
        self.learner.as_ref().map(|l| &l.experts)
    }

    pub fn jobs_done(&self) -> u64 {
        self.jobs_done
    }

    pub fn is_done(&self) -> bool {
        self.jobs_done >= self.cfg.total_jobs
    }

    fn local_view(&self, job: &Job, node: NodeRef) -> (f64, f64) {
        let loaded = self.placement.models_at(node.id);
        let mut rng = job_node_rng(self.seed, job.id, node.id);
        let z = confidence(self.catalog, job, loaded, &self.confidence_model, &mut rng);
        let b = inference_error(self.catalog, job, loaded, false);
        (z, if b { 1.0 } else { 0.0 })
    }

    fn eval(&self, job: &Job, node: NodeRef) -> NodeEval {
        let (z, local_error) = self.local_view(job, node);
        let experts = &self.learner.as_ref().expect("learning policy").experts;
        NodeEval {
            z,
            local_error,
            dist: experts.action_probs(node.id, job.task, z),
        }
    }

    fn onload(&mut self) {
        let pool: Vec<ModelId> = self.catalog.model_ids().collect();
        let uniform = vec![1.0 / self.catalog.num_tasks() as f64; self.catalog.num_tasks()];
        let arrivals = self.stream.arrivals().clone();
        for n in self.topo.nodes() {
            if self.topo.is_oracle(n.id) {
                continue;
            }
            let counts = &self.epoch_counts[n.id.index()];
            let total: f64 = counts.iter().sum();
            let empirical: Vec<f64>;
            let mixture: &[f64] = if let Some(m) = arrivals.mixture_of(n.id) {
                m
            } else if total > 0.0 {
                empirical = counts.iter().map(|c| c / total).collect();
                &empirical
            } else {
                &uniform
            };
            let previous = self.placement.loaded[n.id.index()].clone();
            let ctx = PlacementUtilityCtx {
                catalog: self.catalog,
                mixture,
                // the initial deployment is not a switch
                switch_penalty: if self.slot <= 1 {
                    0.0
                } else {
                    self.cfg.params.nu
                },
                previous: &previous,
            };
            self.placement.loaded[n.id.index()] =
                greedy_onload(&ctx, self.topo.memory_budget(n.id), &pool);
        }
        for c in &mut self.epoch_counts {
            c.iter_mut().for_each(|x| *x = 0.0);
        }
        self.placement.epoch = self.slot;
    }

    /// Runs one slot and returns its metrics.
    pub fn run_slot(&mut self) -> Result<SlotMetrics> {
        self.slot += 1;
        let t = self.slot;
        if let Some(l) = &mut self.learner {
            l.experts.refresh();
        }
        if self.cfg.placement.kind == PlacementKind::Greedy
            && (t - 1).is_multiple_of(self.cfg.placement.epoch_slots)
        {
            self.onload();
        }
        let mut jobs = self.stream.generate_slot(t);
        let remaining = self.cfg.total_jobs.saturating_sub(self.jobs_done);
        jobs.truncate(remaining as usize);

        let q = self.queues.values().to_vec();
        let mut costs = vec![0.0; self.topo.num_nodes()];
        let mut m = SlotMetrics {
            slot: t,
            jobs: jobs.len() as u64,
            errors: 0,
            hard_jobs: 0,
            hard_hits: 0,
            feedback: 0,
            mean_entropy: 0.0,
            drift_penalty: 0.0,
            costs: Vec::new(),
            queues: Vec::new(),
        };
        for job in &jobs {
            let rec = self.process_job(job, &q, &mut costs)?;
            m.errors += rec.error as u64;
            m.hard_jobs += rec.hard as u64;
            m.hard_hits += (rec.hard && rec.reached_oracle) as u64;
            m.feedback += rec.reached_oracle as u64;
            if self.record_paths {
                self.paths.push(rec);
            }
        }
        self.queues.apply(&costs);

        m.drift_penalty = drift_penalty_diagnostic(&q, &costs, m.errors as f64, self.cfg.params.v);
        m.mean_entropy = self
            .learner
            .as_ref()
            .map_or(0.0, |l| l.experts.mean_entropy());
        m.costs = self.queued.iter().map(|n| costs[n.index()]).collect();
        m.queues = self.queued.iter().map(|&n| self.queues.get(n)).collect();
        for (i, c) in costs.iter().enumerate() {
            self.cost_total[i] += c;
            self.max_queue[i] = self.max_queue[i].max(self.queues.values()[i]);
        }
        self.errors += m.errors;
        self.hard_jobs += m.hard_jobs;
        self.hard_hits += m.hard_hits;
        self.feedback += m.feedback;
        if t.is_multiple_of(self.cfg.output.entropy_interval) {
            self.entropy_curve.push((t, m.mean_entropy));
        }
        self.slots.push(m.clone());
        Ok(m)
    }

    fn process_job(&mut self, job: &Job, q: &[f64], costs: &mut [f64]) -> Result<PathRecord> {
        let k = self.topo.depth();
        let hop = job.size_units * self.topo.distance_factor();
        let mut cur = NodeRef {
            id: job.entry,
            layer: 1,
        };
        let mut path = vec![job.entry];
        let mut visited: Vec<(NodeRef, NodeEval, usize)> = Vec::new();
        let mut error = false;
        let reached_oracle = loop {
            if self.topo.is_oracle(cur.id) {
                break true;
            }
            self.epoch_counts[cur.id.index()][job.task.index()] += 1.0;
            let fan = self.topo.uplinks(cur)?.len();
            let (eval, action) = if self.learner.is_some() {
                let eval = self.eval(job, cur);
                let a = sample_action(&eval.dist, &mut self.routing_rng);
                (eval, a)
            } else {
                let (z, b) = self.local_view(job, cur);
                let policy = self.static_policy.as_mut().expect("static policy");
                let a = policy.static_action(cur.id.index(), fan, &mut self.routing_rng);
                let eval = NodeEval {
                    z,
                    local_error: b,
                    dist: ActionDistribution {
                        raw: Vec::new(),
                        mixed: Vec::new(),
                    },
                };
                (eval, a)
            };
            let b = eval.local_error;
            visited.push((cur, eval, action));
            if action == 0 {
                error = b > 0.0;
                break false;
            }
            let next = self.topo.uplinks(cur)?[action - 1];
            costs[next.index()] += hop;
            path.push(next);
            cur = NodeRef {
                id: next,
                layer: cur.layer + 1,
            };
            if path.len() > k {
                return Err(Error::Routing(format!(
                    "job {} path {:?} exceeds {k} layers",
                    job.id, path
                )));
            }
        };

        if self.learner.is_some() {
            self.deliver_feedback(job, hop, q, &visited, reached_oracle)?;
        }

        self.jobs_done += 1;
        if let Some(l) = &self.learner {
            if self
                .jobs_done
                .is_multiple_of(self.cfg.output.regret_interval)
            {
                let r = l.regret.entry_regret();
                self.regret_curve.push(RegretPoint {
                    jobs: self.jobs_done,
                    regret: r,
                    per_job: r / self.jobs_done as f64,
                });
            }
        }
        Ok(PathRecord {
            job_id: job.id,
            slot: self.slot,
            task: job.task,
            hop_cost: hop,
            exit_layer: path.len(),
            path,
            reached_oracle,
            error,
            hard: job.is_hard(),
        })
    }

    fn deliver_feedback(
        &mut self,
        job: &Job,
        hop: f64,
        q: &[f64],
        visited: &[(NodeRef, NodeEval, usize)],
        fb: bool,
    ) -> Result<()> {
        let p = &self.cfg.params;
        let (v, mode) = (p.v, p.recursion);
        let mut snap =
            RecursionSnapshot::compute(&self.topo, 2, hop, q, v, mode, |n| self.eval(job, n))?;
        let (entry, entry_eval, _) = &visited[0];
        snap.extend(&self.topo, *entry, entry_eval.clone(), q, v, mode)?;

        let learner = self.learner.as_mut().expect("learning policy");
        let flags = learner.flags;
        let y = job.task;
        for (node, eval, action) in visited {
            let n = node.id;
            let rho = snap.rho[n.index()];
            let grid = learner.experts.grid(n);
            let full: Vec<UplinkTerm> = grid
                .destinations()
                .iter()
                .map(|&d| snap.uplink_term(d, q))
                .collect();
            let realized = if *action == 0 {
                v * eval.local_error
            } else {
                full[action - 1].total()
            };
            let mut full_losses = Vec::with_capacity(grid.len());
            let mut estimates = Vec::with_capacity(grid.len());
            let betas = learner.baselines.get(n, y);
            let mut fed_losses = Vec::new();
            for e in 0..grid.len() {
                let theta = grid.threshold_of(e);
                let term = full[grid.destination_of(e)];
                let f_full = expert_loss(theta, eval.z, eval.local_error, v, term);
                let f = if flags.local_loss {
                    expert_loss(
                        theta,
                        eval.z,
                        eval.local_error,
                        v,
                        UplinkTerm { fbar: 0.0, ..term },
                    )
                } else {
                    f_full
                };
                full_losses.push(f_full);
                if flags.variance_reduced {
                    let beta = betas[e];
                    if fb {
                        learner.checks += 1;
                        learner.violations += !variance_reduction_condition(f, beta) as u64;
                    }
                    estimates.push(vr_estimate(f, beta, rho, fb));
                } else {
                    estimates.push(naive_estimate(f, rho, fb));
                }
                fed_losses.push(f);
            }
            if flags.variance_reduced && fb {
                for (e, &f) in fed_losses.iter().enumerate() {
                    learner.baselines.update(n, y, e, f, rho, fb);
                }
            }
            if flags.variance_reduced || fb {
                learner.experts.accumulate_loss(n, y, &estimates)?;
            }
            learner.regret.record(n, y, realized, &full_losses);
            if self.record_losses {
                self.loss_log.push(LossRecord {
                    node: n,
                    task: y,
                    z: eval.z,
                    local_error: eval.local_error,
                    uplinks: full,
                    realized,
                });
            }
        }
        Ok(())
    }

    /// Runs slots until the configured number of jobs has been processed.
    pub fn run(mut self) -> Result<RunOutput> {
        while !self.is_done() {
            self.run_slot()?;
        }
        Ok(self.finish())
    }

    fn finish(self) -> RunOutput {
        let jobs = self.jobs_done.max(1) as f64;
        let slots = self.slot.max(1) as f64;
        let nodes = self
            .queued
            .iter()
            .map(|&n| NodeCost {
                node: n,
                layer: self.topo.layer_of(n),
                avg_cost: self.cost_total[n.index()] / slots,
                final_queue: self.queues.get(n),
                max_queue: self.max_queue[n.index()],
            })
            .collect();
        let (regret, violations, checks, mean_baseline) = match &self.learner {
            Some(l) => (l.regret.all(), l.violations, l.checks, l.baselines.mean()),
            None => (Vec::new(), 0, 0, 0.0),
        };
        let summary = RunSummary {
            run_id: self.cfg.run_id.clone(),
            policy: self.cfg.policy.name().to_string(),
            topology: self.topo.label(),
            placement: placement_name(self.cfg.placement.kind).to_string(),
            seed: self.seed,
            jobs: self.jobs_done,
            slots: self.slot,
            error_rate: self.errors as f64 / jobs,
            hit_rate: if self.hard_jobs == 0 {
                0.0
            } else {
                self.hard_hits as f64 / self.hard_jobs as f64
            },
            feedback_rate: self.feedback as f64 / jobs,
            hard_jobs: self.hard_jobs,
            offload_prob: self.static_policy.as_ref().map(|s| s.offload_prob),
            nodes,
            regret_curve: self.regret_curve,
            entropy_curve: self.entropy_curve,
            regret,
            baseline_violations: violations,
            baseline_checks: checks,
            mean_baseline,
        };
        RunOutput {
            summary,
            queued: self.queued,
            slots: self.slots,
            paths: self.paths,
            loss_log: self.loss_log,
        }
    }
}

pub fn placement_name(kind: PlacementKind) -> &'static str {
    match kind {
        PlacementKind::Greedy => "greedy",
        PlacementKind::RandomFixed => "random_fixed",
        PlacementKind::LayerDiverse => "layer_diverse",
    }
}

/// Runs one seed.
pub fn run_seed(cfg: &ExperimentConfig, source: &JobSource, seed: u64) -> Result<RunOutput> {
    Simulation::new(cfg, source, seed)?.run()
}

/// Runs every seed of the config in parallel, in seed order.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<RunOutput>> {
    cfg.validate()?;
    let source = build_source(cfg)?;
    cfg.seeds
        .par_iter()
        .map(|&s| run_seed(cfg, &source, s))
        .collect()
}
