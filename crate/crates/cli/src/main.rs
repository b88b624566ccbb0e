use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use hiroute::engine::{
    build_source, mean_std, parse_override, placement_name, run_dir, run_seed, ExperimentConfig,
    RunOutput, RunSummary,
};
use hiroute::validate::{run_suite, Fault};
use hiroute::Error;
use rayon::prelude::*;
use serde::Serialize;

#[derive(Parser)]
#[command(
    name = "hiroute",
    version,
    about = "Hierarchical inference routing simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment (every seed of the config).
    Run(RunArgs),
    /// Run the cross product of the config's sweep axes.
    Sweep(RunArgs),
    /// Run the fast property suite.
    Validate(ValidateArgs),
    /// Summarize the runs found under an output directory.
    Report(ReportArgs),
}

#[derive(Args)]
struct RunArgs {
    /// JSON experiment config; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dotted-key override, e.g. `params.lambda=0.2` (repeatable).
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Maximum concurrent runs.
    #[arg(long)]
    jobs: Option<usize>,
    /// Added to every seed.
    #[arg(long, default_value_t = 0)]
    seed_offset: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum FaultArg {
    BetaSign,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long, hide = true, value_enum)]
    inject_fault: Option<FaultArg>,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

/// Failure class, mapped to the process exit code.
enum Failure {
    Config(anyhow::Error),
    Runtime(anyhow::Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config { .. } | Error::Json { .. } | Error::Topology(_) => {
                Failure::Config(e.into())
            }
            other => Failure::Runtime(other.into()),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => cmd_run(&a),
        Command::Sweep(a) => cmd_sweep(&a),
        Command::Validate(a) => cmd_validate(&a),
        Command::Report(a) => cmd_report(&a),
    };
    match result {
        Ok(code) => code,
        Err(Failure::Config(e)) => {
            eprintln!("config error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn load_config(args: &RunArgs) -> Result<ExperimentConfig, Failure> {
    let overrides = args
        .overrides
        .iter()
        .map(|s| parse_override(s))
        .collect::<Result<Vec<_>, _>>()?;
    let mut cfg = match &args.config {
        Some(path) => ExperimentConfig::load(path, &overrides)?,
        None => {
            let mut v = serde_json::json!({});
            for (k, val) in &overrides {
                hiroute::engine::apply_override(&mut v, k, val)?;
            }
            ExperimentConfig::from_value(v)?
        }
    };
    for s in &mut cfg.seeds {
        *s += args.seed_offset;
    }
    Ok(cfg)
}

fn pool(jobs: Option<usize>) -> Result<rayon::ThreadPool, Failure> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = jobs {
        b = b.num_threads(n.max(1));
    }
    b.build().map_err(|e| Failure::Runtime(e.into()))
}

fn run_all(
    cfgs: &[ExperimentConfig],
    jobs: Option<usize>,
) -> Result<Vec<Vec<hiroute::Result<RunOutput>>>, Failure> {
    let sources = cfgs
        .iter()
        .map(build_source)
        .collect::<Result<Vec<_>, _>>()?;
    let tasks: Vec<(usize, u64)> = cfgs
        .iter()
        .enumerate()
        .flat_map(|(i, c)| c.seeds.iter().map(move |&s| (i, s)))
        .collect();
    let outputs: Vec<(usize, hiroute::Result<RunOutput>)> = pool(jobs)?.install(|| {
        tasks
            .par_iter()
            .map(|&(i, s)| (i, run_seed(&cfgs[i], &sources[i], s)))
            .collect()
    });
    let mut grouped: Vec<Vec<_>> = cfgs.iter().map(|_| Vec::new()).collect();
    for (i, r) in outputs {
        grouped[i].push(r);
    }
    Ok(grouped)
}

#[derive(Serialize)]
struct Row {
    policy: String,
    topology: String,
    placement: String,
    seeds: usize,
    feedback_mean: f64,
    feedback_std: f64,
    hit_mean: f64,
    hit_std: f64,
    error_mean: f64,
    error_std: f64,
    failed: usize,
}

fn aggregate(
    policy: String,
    topology: String,
    placement: String,
    sums: &[&RunSummary],
    failed: usize,
) -> Row {
    let col = |f: fn(&RunSummary) -> f64| mean_std(&sums.iter().map(|s| f(s)).collect::<Vec<_>>());
    let (feedback_mean, feedback_std) = col(|s| s.feedback_rate);
    let (hit_mean, hit_std) = col(|s| s.hit_rate);
    let (error_mean, error_std) = col(|s| s.error_rate);
    Row {
        policy,
        topology,
        placement,
        seeds: sums.len(),
        feedback_mean,
        feedback_std,
        hit_mean,
        hit_std,
        error_mean,
        error_std,
        failed,
    }
}

fn print_rows(rows: &[Row]) {
    println!(
        "{:<14} {:<12} {:<14} {:>16} {:>16} {:>16}",
        "policy", "topology", "placement", "feedback", "hit", "error"
    );
    for r in rows {
        println!(
            "{:<14} {:<12} {:<14} {:>7.4} ± {:<6.4} {:>7.4} ± {:<6.4} {:>7.4} ± {:<6.4}",
            r.policy,
            r.topology,
            r.placement,
            r.feedback_mean,
            r.feedback_std,
            r.hit_mean,
            r.hit_std,
            r.error_mean,
            r.error_std
        );
    }
}

fn write_rows(path: &Path, rows: &[Row]) -> anyhow::Result<()> {
    let mut w =
        csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes each seed's outputs and returns the successful summaries plus the
/// number of failures.
fn collect(
    cfg: &ExperimentConfig,
    results: Vec<hiroute::Result<RunOutput>>,
    out: &Path,
) -> (Vec<RunSummary>, usize) {
    let mut sums = Vec::new();
    let mut failed = 0;
    for (seed, r) in cfg.seeds.iter().zip(results) {
        match r.and_then(|o| {
            o.write(&run_dir(out, &cfg.run_id, *seed))?;
            Ok(o.summary)
        }) {
            Ok(s) => sums.push(s),
            Err(e) => {
                eprintln!("{} seed {seed}: {e}", cfg.run_id);
                failed += 1;
            }
        }
    }
    (sums, failed)
}

fn cmd_run(args: &RunArgs) -> Result<ExitCode, Failure> {
    let cfg = load_config(args)?;
    let mut results = run_all(std::slice::from_ref(&cfg), args.jobs)?;
    let (sums, failed) = collect(&cfg, results.remove(0), &args.out);
    if failed > 0 {
        return Err(Failure::Runtime(anyhow::anyhow!(
            "{failed} of {} seeds failed",
            cfg.seeds.len()
        )));
    }
    let refs: Vec<&RunSummary> = sums.iter().collect();
    let row = aggregate(
        cfg.policy.name().into(),
        cfg.topology.label(),
        placement_name(cfg.placement.kind).into(),
        &refs,
        0,
    );
    print_rows(&[row]);
    Ok(ExitCode::SUCCESS)
}

fn cmd_sweep(args: &RunArgs) -> Result<ExitCode, Failure> {
    let base = load_config(args)?;
    let sweep = match &base.sweep {
        Some(s) if !s.is_empty() => s.clone(),
        _ => {
            return Err(Error::Config {
                field: "sweep".into(),
                reason: "no sweep axes given".into(),
            }
            .into())
        }
    };
    let policies = if sweep.policies.is_empty() {
        vec![base.policy]
    } else {
        sweep.policies.clone()
    };
    let topologies = if sweep.topologies.is_empty() {
        vec![base.topology.clone()]
    } else {
        sweep.topologies.clone()
    };
    let placements = if sweep.placements.is_empty() {
        vec![base.placement.kind]
    } else {
        sweep.placements.clone()
    };
    let mut cells = Vec::new();
    for topo in &topologies {
        for &placement in &placements {
            for &policy in &policies {
                let mut c = base.clone();
                c.sweep = None;
                c.policy = policy;
                c.topology = topo.clone();
                c.placement.kind = placement;
                c.run_id = format!(
                    "{}-{}-{}",
                    policy.name(),
                    topo.label(),
                    placement_name(placement)
                );
                cells.push(c);
            }
        }
    }
    let results = run_all(&cells, args.jobs)?;
    let mut rows = Vec::new();
    let mut any_failed = false;
    for (cell, res) in cells.iter().zip(results) {
        let (sums, failed) = collect(cell, res, &args.out);
        any_failed |= failed > 0;
        let refs: Vec<&RunSummary> = sums.iter().collect();
        rows.push(aggregate(
            cell.policy.name().into(),
            cell.topology.label(),
            placement_name(cell.placement.kind).into(),
            &refs,
            failed,
        ));
    }
    print_rows(&rows);
    let table = args.out.join("sweep.csv");
    write_rows(&table, &rows).map_err(Failure::Runtime)?;
    println!(
        "{} cells, {} runs; table written to {}",
        cells.len(),
        cells.len() * base.seeds.len(),
        table.display()
    );
    if any_failed {
        return Err(Failure::Runtime(anyhow::anyhow!("some sweep cells failed")));
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_validate(args: &ValidateArgs) -> Result<ExitCode, Failure> {
    let fault = args.inject_fault.map(|f| match f {
        FaultArg::BetaSign => Fault::BaselineSign,
    });
    let results = run_suite(fault);
    let mut ok = true;
    for r in &results {
        println!(
            "{} {}: {}",
            if r.passed { "PASS" } else { "FAIL" },
            r.name,
            r.detail
        );
        ok &= r.passed;
    }
    Ok(if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(3)
    })
}

fn cmd_report(args: &ReportArgs) -> Result<ExitCode, Failure> {
    let entries = std::fs::read_dir(&args.out)
        .with_context(|| format!("reading {}", args.out.display()))
        .map_err(Failure::Runtime)?;
    let mut groups: BTreeMap<(String, String, String), Vec<RunSummary>> = BTreeMap::new();
    for entry in entries.flatten() {
        let path = entry.path().join("summary.json");
        if path.is_file() {
            let s = RunSummary::read_json(&path)?;
            groups
                .entry((s.policy.clone(), s.topology.clone(), s.placement.clone()))
                .or_default()
                .push(s);
        }
    }
    if groups.is_empty() {
        return Err(Failure::Runtime(anyhow::anyhow!(
            "no summary.json files under {}",
            args.out.display()
        )));
    }
    let rows: Vec<Row> = groups
        .into_iter()
        .map(|((p, t, pl), sums)| aggregate(p, t, pl, &sums.iter().collect::<Vec<_>>(), 0))
        .collect();
    print_rows(&rows);
    Ok(ExitCode::SUCCESS)
}
