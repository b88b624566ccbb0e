//! Fast self-checks of the core invariants, runnable from the command line.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::estimation::{variance_pair, vr_estimate, NodeEval, RecursionMode, RecursionSnapshot};
use crate::placement::{accuracy_term, PlacementUtilityCtx};
use crate::routing::{exp_weights, ActionDistribution};
use crate::topology::build_topology;
use crate::workload::{Catalog, Modality, ModelId, ModelSpec, TaskInfo};

/// Deliberate bugs for checking that the suite can fail.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    /// Adds the baseline back with the wrong sign in the fed branch.
    BaselineSign,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PropertyResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn estimate(fault: Option<Fault>, f: f64, beta: f64, rho: f64, fb: bool) -> f64 {
    match (fault, fb) {
        (Some(Fault::BaselineSign), true) => (f - beta) / rho - beta,
        _ => vr_estimate(f, beta, rho, fb),
    }
}

fn unbiasedness(fault: Option<Fault>, rng: &mut ChaCha8Rng) -> PropertyResult {
    let mut worst = 0.0f64;
    for _ in 0..10_000 {
        let f = rng.random_range(-100.0..100.0);
        let beta = rng.random_range(-100.0..100.0);
        let rho = rng.random_range(0.001..=1.0);
        let e = rho * estimate(fault, f, beta, rho, true)
            + (1.0 - rho) * estimate(fault, f, beta, rho, false);
        worst = worst.max((e - f).abs());
    }
    PropertyResult {
        name: "estimator unbiasedness",
        passed: worst <= 1e-10,
        detail: format!("max |E[est] - f| = {worst:.3e}"),
    }
}

fn monte_carlo(fault: Option<Fault>, rng: &mut ChaCha8Rng) -> PropertyResult {
    let (f, beta, rho) = (1.0, 0.8, 0.25);
    let n = 100_000;
    let draws: Vec<f64> = (0..n)
        .map(|_| estimate(fault, f, beta, rho, rng.random_bool(rho)))
        .collect();
    let mean = draws.iter().sum::<f64>() / n as f64;
    let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let se = (var / n as f64).sqrt();
    PropertyResult {
        name: "estimator Monte Carlo mean",
        passed: (mean - f).abs() <= 4.0 * se,
        detail: format!("mean {mean:.5} vs {f}, 4 SE = {:.5}", 4.0 * se),
    }
}

fn variance_ordering() -> PropertyResult {
    let mut bad = 0;
    for i in 0..200 {
        for j in 0..200 {
            let ratio = 2.0 * (i as f64 + 0.5) / 200.0;
            let rho = (j as f64 + 0.5) / 200.0;
            let (naive, vr) = variance_pair(1.0, ratio, rho);
            bad += (vr > naive * (1.0 + 1e-12)) as usize;
        }
    }
    let (n, v) = variance_pair(1.0, 0.8, 0.25);
    let exact = (n - 3.0).abs() < 1e-12 && (v - 0.12).abs() < 1e-12;
    PropertyResult {
        name: "variance ordering",
        passed: bad == 0 && exact,
        detail: format!("{bad} grid violations; (f=1, b=0.8, rho=0.25) -> ({n:.4}, {v:.4})"),
    }
}

fn weight_simplex(rng: &mut ChaCha8Rng) -> PropertyResult {
    let mut worst = 0.0f64;
    let mut negative = false;
    for _ in 0..1000 {
        let k = rng.random_range(2..40);
        let losses: Vec<f64> = (0..k).map(|_| rng.random_range(-50.0..50.0)).collect();
        let mut w = vec![0.0; k];
        exp_weights(&losses, rng.random_range(0.01..2.0), &mut w);
        worst = worst.max((w.iter().sum::<f64>() - 1.0).abs());
        negative |= w.iter().any(|&x| x < 0.0);
    }
    PropertyResult {
        name: "weight simplex",
        passed: worst < 1e-9 && !negative,
        detail: format!("max |sum w - 1| = {worst:.3e}"),
    }
}

fn submodularity(rng: &mut ChaCha8Rng) -> PropertyResult {
    const M: usize = 5;
    let mut violations = 0;
    for _ in 0..20 {
        let tasks = 4;
        let errors: Vec<Vec<f64>> = (0..tasks)
            .map(|_| (0..M).map(|_| rng.random()).collect())
            .collect();
        let cat = Catalog::new(
            (0..tasks)
                .map(|i| TaskInfo {
                    name: format!("t{i}"),
                    modality: Modality::Text,
                })
                .collect(),
            (0..M)
                .map(|i| ModelSpec {
                    id: format!("m{i}"),
                    size: 1.0,
                    modalities: vec![Modality::Text],
                })
                .collect(),
            errors,
        );
        let mix = vec![0.25; tasks];
        let ctx = PlacementUtilityCtx {
            catalog: &cat,
            mixture: &mix,
            switch_penalty: 0.0,
            previous: &[],
        };
        let set = |mask: u32| -> Vec<ModelId> {
            (0..M as u32)
                .filter(|i| mask >> i & 1 == 1)
                .map(ModelId)
                .collect()
        };
        for b in 0u32..1 << M {
            for a in 0u32..1 << M {
                if a & !b != 0 {
                    continue;
                }
                for m in 0..M as u32 {
                    if b >> m & 1 == 1 {
                        continue;
                    }
                    let gain = |s: u32| {
                        accuracy_term(&ctx, &set(s | 1 << m)) - accuracy_term(&ctx, &set(s))
                    };
                    violations += (gain(a) < gain(b) - 1e-12) as usize;
                }
            }
        }
    }
    PropertyResult {
        name: "placement submodularity",
        passed: violations == 0,
        detail: format!("{violations} diminishing-returns violations"),
    }
}

fn reach_chain(rng: &mut ChaCha8Rng) -> PropertyResult {
    let mut worst = 0.0f64;
    for depth in 2..=5usize {
        for _ in 0..50 {
            let offload: Vec<f64> = (0..depth - 1)
                .map(|_| rng.random_range(0.01..1.0))
                .collect();
            let mut budgets = vec![Some(1.0); depth - 1];
            budgets.push(None);
            let topo = build_topology(&vec![1; depth], &budgets, 0.4, 1.0).expect("chain is valid");
            let snap = RecursionSnapshot::compute(
                &topo,
                1,
                1.0,
                &vec![0.0; depth],
                70.0,
                RecursionMode::default(),
                |n| {
                    let p = offload[n.id.index()];
                    NodeEval {
                        z: 0.5,
                        local_error: 0.0,
                        dist: ActionDistribution {
                            raw: vec![1.0 - p, p],
                            mixed: vec![1.0 - p, p],
                        },
                    }
                },
            );
            match snap {
                Ok(s) => worst = worst.max((s.rho[0] - offload.iter().product::<f64>()).abs()),
                Err(_) => worst = f64::INFINITY,
            }
        }
    }
    PropertyResult {
        name: "reach probability on chains",
        passed: worst <= 1e-12,
        detail: format!("max |rho - product| = {worst:.3e}"),
    }
}

/// Runs every property with a fixed seed.
pub fn run_suite(fault: Option<Fault>) -> Vec<PropertyResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    vec![
        unbiasedness(fault, &mut rng),
        monte_carlo(fault, &mut rng),
        variance_ordering(),
        weight_simplex(&mut rng),
        submodularity(&mut rng),
        reach_chain(&mut rng),
    ]
}
