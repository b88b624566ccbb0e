//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

use std::process::ExitCode;
use std::time::Instant;

use hiroute::engine::{build_source, run_seed, RunSummary};
use hiroute::estimation::{
    expected_loss, naive_estimate, reach_prob, variance_pair, vr_estimate, UplinkTerm,
};
use hiroute::placement::{accuracy_term, greedy_onload, utility, PlacementUtilityCtx};
use hiroute::workload::{Catalog, Modality, ModelId, ModelSpec, TaskInfo};
use hiroute::{run_experiment, ExperimentConfig, NodeId, PlacementKind, PolicyKind, TopologySpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn mean(xs: impl IntoIterator<Item = f64>) -> f64 {
    let (s, n) = xs
        .into_iter()
        .fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

fn config(policy: PolicyKind, placement: PlacementKind) -> ExperimentConfig {
    let mut cfg = ExperimentConfig {
        policy,
        ..Default::default()
    };
    cfg.placement.kind = placement;
    cfg
}

fn run(cfg: &ExperimentConfig) -> Vec<RunSummary> {
    run_experiment(cfg)
        .expect("simulation runs")
        .into_iter()
        .map(|o| o.summary)
        .collect()
}

fn error_rate(runs: &[RunSummary]) -> f64 {
    mean(runs.iter().map(|s| s.error_rate))
}

fn hit_rate(runs: &[RunSummary]) -> f64 {
    mean(runs.iter().map(|s| s.hit_rate))
}

fn feedback_rate(runs: &[RunSummary]) -> f64 {
    mean(runs.iter().map(|s| s.feedback_rate))
}

/// Two-point expectation and variance of an estimator under `fb ~ Bernoulli(ρ)`.
fn two_point(rho: f64, est: impl Fn(bool) -> f64) -> (f64, f64) {
    let (hit, miss) = (est(true), est(false));
    let m = rho * hit + (1.0 - rho) * miss;
    (
        m,
        rho * (hit - m).powi(2) + (1.0 - rho) * (miss - m).powi(2),
    )
}

fn unbiasedness() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for _ in 0..10_000 {
        let f = rng.random_range(0.0..10.0);
        let beta = rng.random_range(-10.0..20.0);
        let rho = rng.random_range(0.001..=1.0);
        let (m, _) = two_point(rho, |fb| vr_estimate(f, beta, rho, fb));
        worst = worst.max((m - f).abs());
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        worst <= 1e-10 && secs < 1.0,
        format!("max |E - f| = {worst:.2e}, {secs:.3} s"),
    )
}

fn variance_ordering() -> Verdict {
    let mut violations = 0;
    let mut closed_form_gap = 0.0f64;
    let f = 1.7;
    for i in 0..200 {
        let ratio = 2.0 * i as f64 / 199.0;
        let beta = ratio * f;
        for k in 0..200 {
            let rho = 0.005 + 0.995 * k as f64 / 199.0;
            let (_, naive) = two_point(rho, |fb| naive_estimate(f, rho, fb));
            let (_, vr) = two_point(rho, |fb| vr_estimate(f, beta, rho, fb));
            let (cn, cv) = variance_pair(f, beta, rho);
            closed_form_gap =
                closed_form_gap.max((cn - naive).abs().max((cv - vr).abs()) / naive.max(1.0));
            let tol = 1e-9 * naive.max(1.0);
            let ordered = cv <= cn + tol;
            let equal_at_ends = !(i == 0 || i == 199) || (cv - cn).abs() <= tol;
            if !ordered || !equal_at_ends {
                violations += 1;
            }
        }
    }

    let (f, beta, rho) = (1.0, 0.8, 0.25);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let n = 100_000;
    let (mut sn, mut sn2, mut sv, mut sv2) = (0.0, 0.0, 0.0, 0.0);
    for _ in 0..n {
        let fb = rng.random_bool(rho);
        let a = naive_estimate(f, rho, fb);
        let b = vr_estimate(f, beta, rho, fb);
        sn += a;
        sn2 += a * a;
        sv += b;
        sv2 += b * b;
    }
    let nf = n as f64;
    let var_naive = sn2 / nf - (sn / nf).powi(2);
    let var_vr = sv2 / nf - (sv / nf).powi(2);
    let mc_ok = (var_naive / 3.0 - 1.0).abs() <= 0.05 && (var_vr / 0.12 - 1.0).abs() <= 0.05;
    verdict(
        violations == 0 && closed_form_gap < 1e-9 && mc_ok,
        format!("grid violations {violations}, closed-form gap {closed_form_gap:.1e}, MC var naive {var_naive:.3} vr {var_vr:.4}"),
    )
}

fn queue_feasibility(vr: &[RunSummary], secs_per_seed: f64) -> Verdict {
    let nodes: Vec<NodeId> = vr[0]
        .nodes
        .iter()
        .filter(|n| n.layer > 1)
        .map(|n| n.node)
        .collect();
    let node_mean = |n: NodeId, f: &dyn Fn(&RunSummary, &hiroute::engine::NodeCost) -> f64| {
        mean(vr.iter().map(|s| {
            let c = s.nodes.iter().find(|c| c.node == n).expect("node present");
            f(s, c)
        }))
    };
    let cost = nodes
        .iter()
        .map(|&n| node_mean(n, &|_, c| c.avg_cost))
        .fold(0.0, f64::max);
    let qt = nodes
        .iter()
        .map(|&n| node_mean(n, &|s, c| c.final_queue / s.slots as f64))
        .fold(0.0, f64::max);
    let worst_seed = vr
        .iter()
        .flat_map(|s| {
            s.nodes
                .iter()
                .filter(|c| c.layer > 1)
                .map(move |c| c.final_queue / s.slots as f64)
        })
        .fold(0.0, f64::max);
    verdict(
        cost <= 0.45 && qt < 0.02 && secs_per_seed <= 300.0,
        format!("max node cost {cost:.3}, max Q/T {qt:.4} (worst single seed {worst_seed:.4}), {secs_per_seed:.2} s/seed"),
    )
}

fn near<T: Copy>(points: impl Iterator<Item = (u64, T)>, target: u64) -> T {
    points
        .min_by_key(|(x, _)| x.abs_diff(target))
        .expect("non-empty curve")
        .1
}

fn regret_trend(vr: &[RunSummary]) -> Verdict {
    let at = |g| {
        mean(
            vr.iter()
                .map(|s| near(s.regret_curve.iter().map(|p| (p.jobs, p.per_job)), g)),
        )
    };
    let (early, late) = (at(2_000), at(20_000));
    let ratio = late / early;
    verdict(
        ratio <= 0.7,
        format!("R/G at 2k {early:.3}, at 20k {late:.3}, ratio {ratio:.3}"),
    )
}

fn entropy_decay(vr: &[RunSummary], ly: &[RunSummary]) -> Verdict {
    let at = |runs: &[RunSummary]| {
        mean(
            runs.iter()
                .map(|s| near(s.entropy_curve.iter().copied(), 10_000)),
        )
    };
    let (a, b) = (at(vr), at(ly));
    verdict(
        a <= b,
        format!("entropy at slot 10000: vr {a:.4}, ly {b:.4}"),
    )
}

fn chain_oracles() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst_rho = 0.0f64;
    for depth in 2..=5 {
        for _ in 0..50 {
            // node 0 is the entry, node depth-1 the oracle
            let up: Vec<f64> = (0..depth - 1)
                .map(|_| rng.random_range(0.05..0.95))
                .collect();
            let mut rho = 1.0;
            for n in (0..depth - 1).rev() {
                rho =
                    reach_prob(NodeId(n as u32), &[1.0 - up[n], up[n]], &[rho]).expect("positive");
            }
            let product: f64 = up.iter().product();
            worst_rho = worst_rho.max((rho - product).abs());
        }
    }

    let mut worst_loss = 0.0f64;
    for _ in 0..200 {
        let v = rng.random_range(1.0..100.0);
        let c = rng.random_range(0.5..20.0);
        let (q1, q2) = (rng.random_range(0.0..5.0), rng.random_range(0.0..5.0));
        let (b0, b1) = (rng.random::<f64>(), rng.random::<f64>());
        let p0: f64 = rng.random_range(0.05..0.95);
        let p1: f64 = rng.random_range(0.05..0.95);
        let fbar1 = expected_loss(
            &[1.0 - p1, p1],
            b1,
            v,
            &[UplinkTerm {
                queue_cost: q2 * c,
                fbar: 0.0,
            }],
        );
        let fbar0 = expected_loss(
            &[1.0 - p0, p0],
            b0,
            v,
            &[UplinkTerm {
                queue_cost: q1 * c,
                fbar: fbar1,
            }],
        );
        let mut exhaustive = 0.0;
        for a0 in [false, true] {
            for a1 in [false, true] {
                let pr = if a0 { p0 } else { 1.0 - p0 } * if a1 { p1 } else { 1.0 - p1 };
                let loss = match (a0, a1) {
                    (false, _) => v * b0,
                    (true, false) => q1 * c + v * b1,
                    (true, true) => q1 * c + q2 * c,
                };
                exhaustive += pr * loss;
            }
        }
        worst_loss = worst_loss.max((fbar0 - exhaustive).abs());
    }
    verdict(
        worst_rho <= 1e-12 && worst_loss <= 1e-10,
        format!("max rho gap {worst_rho:.1e}, max loss gap {worst_loss:.1e}"),
    )
}

fn random_catalog(rng: &mut ChaCha8Rng, models: usize, tasks: usize) -> (Catalog, Vec<f64>) {
    let task_info = (0..tasks)
        .map(|i| TaskInfo {
            name: format!("t{i}"),
            modality: Modality::Text,
        })
        .collect();
    let model_info = (0..models)
        .map(|i| ModelSpec {
            id: format!("m{i}"),
            size: rng.random_range(1..=4) as f64,
            modalities: vec![Modality::Text],
        })
        .collect();
    let errors = (0..tasks)
        .map(|_| (0..models).map(|_| rng.random::<f64>()).collect())
        .collect();
    let mut mix: Vec<f64> = (0..tasks).map(|_| rng.random::<f64>()).collect();
    let total: f64 = mix.iter().sum();
    mix.iter_mut().for_each(|p| *p /= total);
    (Catalog::new(task_info, model_info, errors), mix)
}

fn subset(mask: u32) -> Vec<ModelId> {
    (0..32)
        .filter(|i| mask >> i & 1 == 1)
        .map(ModelId)
        .collect()
}

/// Mixture-weighted accuracy of the best model per task, recomputed from the table.
fn accuracy_oracle(cat: &Catalog, mix: &[f64], set: &[ModelId]) -> f64 {
    mix.iter()
        .enumerate()
        .map(|(t, p)| {
            let best = set
                .iter()
                .map(|&m| cat.expected_error(hiroute::workload::TaskId(t as u32), m))
                .fold(1.0, f64::min);
            p * (1.0 - best)
        })
        .sum()
}

fn submodularity() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut violations = 0;
    let mut mismatches = 0;
    for _ in 0..100 {
        let (cat, mix) = random_catalog(&mut rng, 5, 4);
        let ctx = PlacementUtilityCtx {
            catalog: &cat,
            mixture: &mix,
            switch_penalty: 0.0,
            previous: &[],
        };
        let acc: Vec<f64> = (0..32u32)
            .map(|s| accuracy_oracle(&cat, &mix, &subset(s)))
            .collect();
        for s in 0..32u32 {
            if (accuracy_term(&ctx, &subset(s)) - acc[s as usize]).abs() > 1e-12 {
                mismatches += 1;
            }
        }
        for b in 0..32u32 {
            // every a ⊆ b
            let mut a = b;
            loop {
                for m in (0..5).filter(|m| b >> m & 1 == 0) {
                    let gain_a = acc[(a | 1 << m) as usize] - acc[a as usize];
                    let gain_b = acc[(b | 1 << m) as usize] - acc[b as usize];
                    if gain_a < gain_b - 1e-12 {
                        violations += 1;
                    }
                }
                if a == 0 {
                    break;
                }
                a = (a - 1) & b;
            }
        }
    }

    let nu = hiroute::engine::Params::default().nu;
    let (mut ratio_fail, mut gap_fail, mut worst_gap) = (0, 0, 0.0f64);
    for _ in 0..500 {
        let n = rng.random_range(2..=6);
        let (cat, mix) = random_catalog(&mut rng, n, 4);
        let previous: Vec<ModelId> = subset(rng.random_range(0..1u32 << n));
        let ctx = PlacementUtilityCtx {
            catalog: &cat,
            mixture: &mix,
            switch_penalty: nu,
            previous: &previous,
        };
        let budget = 8.0;
        let pool: Vec<ModelId> = subset((1 << n) - 1);
        let greedy = utility(&ctx, &greedy_onload(&ctx, budget, &pool));
        let opt = (0..1u32 << n)
            .map(subset)
            .filter(|s| s.iter().map(|&m| cat.size(m)).sum::<f64>() <= budget)
            .map(|s| {
                let acc = accuracy_oracle(&cat, &mix, &s);
                let switch: f64 = s
                    .iter()
                    .filter(|m| !previous.contains(m))
                    .map(|&m| ctx.switch_penalty * cat.size(m))
                    .sum();
                acc - switch
            })
            .fold(f64::NEG_INFINITY, f64::max);
        if greedy < 0.5 * opt - 1e-12 {
            ratio_fail += 1;
        }
        if greedy < opt - 0.25 - 1e-12 {
            gap_fail += 1;
        }
        worst_gap = worst_gap.max(opt - greedy);
    }
    verdict(
        violations == 0 && mismatches == 0 && ratio_fail == 0 && gap_fail == 0,
        format!(
            "diminishing-returns violations {violations}, utility mismatches {mismatches}, greedy below half {ratio_fail}, below opt-0.25 {gap_fail}, worst gap {worst_gap:.3}"
        ),
    )
}

fn depth_decay() -> Verdict {
    let expected = [0.0146, 0.0017, 0.0002];
    let topologies = [
        TopologySpec::three_layer(),
        TopologySpec::four_layer(),
        TopologySpec::five_layer(),
    ];
    let jobs = [20_000, 100_000, 400_000];
    let mut pinned = Vec::new();
    let mut calibrated = Vec::new();
    for (topo, &jobs) in topologies.iter().zip(&jobs) {
        let mut cfg = config(PolicyKind::Random, PlacementKind::Greedy);
        cfg.topology = topo.clone();
        cfg.total_jobs = jobs;
        calibrated.push(feedback_rate(&run(&cfg)));
        cfg.params.offload_prob = Some(0.12);
        pinned.push(feedback_rate(&run(&cfg)));
    }
    let within = pinned
        .iter()
        .zip(expected)
        .all(|(&got, want)| got <= 3.0 * want && got >= want / 3.0);
    // one order of magnitude per layer on a log10 scale, i.e. a drop of at
    // least sqrt(10); the reference pattern itself drops 8.6x then 8.5x
    let decays = |r: &[f64]| {
        r.windows(2)
            .all(|w| w[1] > 0.0 && w[0] / w[1] >= 10f64.sqrt())
    };
    verdict(
        within && decays(&pinned) && decays(&calibrated),
        format!(
            "p=0.12: {:.5} {:.5} {:.5} (drops {:.1}x {:.1}x); calibrated: {:.5} {:.5} {:.5} (drops {:.1}x {:.1}x)",
            pinned[0],
            pinned[1],
            pinned[2],
            pinned[0] / pinned[1],
            pinned[1] / pinned[2],
            calibrated[0],
            calibrated[1],
            calibrated[2],
            calibrated[0] / calibrated[1],
            calibrated[1] / calibrated[2]
        ),
    )
}

fn table_orderings(res: &Results) -> Verdict {
    let e = |r: &[RunSummary]| error_rate(r);
    let statics = [&res.random, &res.round_robin, &res.pure_local];
    let best_static = statics.iter().map(|r| e(r)).fold(f64::INFINITY, f64::min);
    let static_hit = [&res.random, &res.round_robin, &res.pure_local]
        .iter()
        .map(|r| hit_rate(r))
        .fold(0.0, f64::max);
    let (vr, ll, ly) = (e(&res.vr), e(&res.local_loss), e(&res.ly));
    let (hv, hl) = (hit_rate(&res.vr), hit_rate(&res.ly));
    verdict(
        vr < ll && ll < ly && ly < best_static && hv > hl && static_hit < 0.01,
        format!(
            "error vr {vr:.4} < local-loss {ll:.4} < ly {ly:.4} < static {best_static:.4} \
             (random {:.4}, round-robin {:.4}, pure-local {:.4}); hit vr {hv:.4} ly {hl:.4}, static max {static_hit:.4}",
            e(&res.random),
            e(&res.round_robin),
            e(&res.pure_local)
        ),
    )
}

fn placement_ablation(res: &Results) -> Verdict {
    let (g, r, l) = (
        error_rate(&res.vr),
        error_rate(&res.random_fixed),
        error_rate(&res.layer_diverse),
    );
    verdict(
        g < r && r < l,
        format!("greedy {g:.4} < random-fixed {r:.4} < layer-diverse {l:.4}"),
    )
}

fn determinism() -> Verdict {
    let cfg = ExperimentConfig::default();
    let source = build_source(&cfg).expect("source");
    let dirs = [
        tempfile::tempdir().expect("tempdir"),
        tempfile::tempdir().expect("tempdir"),
    ];
    let bytes: Vec<Vec<u8>> = dirs
        .iter()
        .map(|d| {
            run_seed(&cfg, &source, 3)
                .expect("run")
                .write(d.path())
                .expect("write");
            std::fs::read(d.path().join("metrics.csv")).expect("metrics.csv")
        })
        .collect();
    verdict(
        bytes[0] == bytes[1] && !bytes[0].is_empty(),
        format!("{} bytes each", bytes[0].len()),
    )
}

struct Results {
    vr: Vec<RunSummary>,
    local_loss: Vec<RunSummary>,
    ly: Vec<RunSummary>,
    random: Vec<RunSummary>,
    round_robin: Vec<RunSummary>,
    pure_local: Vec<RunSummary>,
    random_fixed: Vec<RunSummary>,
    layer_diverse: Vec<RunSummary>,
    vr_secs_per_seed: f64,
}

fn simulate() -> Results {
    let start = Instant::now();
    let vr_cfg = config(PolicyKind::VrLyExp4, PlacementKind::Greedy);
    let vr = run(&vr_cfg);
    // seeds run in parallel; wall time over the seed count is a lower bound, so
    // charge the whole batch to every seed instead
    let vr_secs_per_seed = start.elapsed().as_secs_f64();
    let g = |p| run(&config(p, PlacementKind::Greedy));
    Results {
        vr,
        local_loss: g(PolicyKind::VrLocalLoss),
        ly: g(PolicyKind::LyExp4),
        random: g(PolicyKind::Random),
        round_robin: g(PolicyKind::RoundRobin),
        pure_local: g(PolicyKind::PureLocal),
        random_fixed: run(&config(PolicyKind::VrLyExp4, PlacementKind::RandomFixed)),
        layer_diverse: run(&config(PolicyKind::VrLyExp4, PlacementKind::LayerDiverse)),
        vr_secs_per_seed,
    }
}

type Check<'a> = Box<dyn Fn() -> Verdict + 'a>;

fn main() -> ExitCode {
    let res = simulate();
    let checks: Vec<(&str, Check)> = vec![
        ("estimator unbiasedness", Box::new(unbiasedness)),
        ("variance ordering", Box::new(variance_ordering)),
        (
            "queue feasibility",
            Box::new(|| queue_feasibility(&res.vr, res.vr_secs_per_seed)),
        ),
        ("policy orderings", Box::new(|| table_orderings(&res))),
        ("feedback depth decay", Box::new(depth_decay)),
        ("reach probability recursion", Box::new(chain_oracles)),
        ("submodularity and greedy quality", Box::new(submodularity)),
        ("sublinear regret", Box::new(|| regret_trend(&res.vr))),
        (
            "entropy decay",
            Box::new(|| entropy_decay(&res.vr, &res.ly)),
        ),
        ("placement ablation", Box::new(|| placement_ablation(&res))),
        ("determinism", Box::new(determinism)),
    ];
    let mut failed = 0;
    for (i, (name, check)) in checks.iter().enumerate() {
        let v = check();
        if !v.pass {
            failed += 1;
        }
        println!(
            "{} {:>2} {name}: {}",
            if v.pass { "PASS" } else { "FAIL" },
            i + 1,
            v.detail
        );
    }
    println!(
        "{} of {} criteria passed",
        checks.len() - failed,
        checks.len()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
