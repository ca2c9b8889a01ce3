use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use nomafl_core::config::{ExperimentConfig, SchedulerMode};
use nomafl_core::experiment::{self, Scenario, ScheduleMethod, Scheme};
use nomafl_core::power_alloc::{self, PowerProblem};
use nomafl_core::quantize;
use nomafl_core::sched_graph::{self, DeviceId, SchedulePattern, SchedulingGraph};

/// Federated learning over a NOMA uplink: scheduling, power control and
/// rate-adaptive quantization.
#[derive(Debug, Parser)]
#[command(name = "nomafl", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run every configured scheme and seed and write metrics.
    Simulate(RunArgs),
    /// Build a schedule and print it with its weighted sum rate.
    Schedule(ScheduleArgs),
    /// Solve one power allocation problem.
    Powalloc(PowallocArgs),
    /// Run the quantizer conformance vectors.
    QuantizeCheck,
}

#[derive(Debug, Args)]
struct RunArgs {
    /// JSON config; omitted keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Replaces the configured seed list with this one seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (overrides `output_dir`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Print the effective configuration and exit.
    #[arg(long)]
    dump_config: bool,
}

#[derive(Debug, Args)]
struct ScheduleArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Scheme whose power rule weighs the vertices.
    #[arg(long, default_value = "opt_sched_opt_power")]
    scheme: String,
    /// JSON array of per-round arrays of per-device weights; a group weighs
    /// the sum of its members. Replaces the channel-derived weights.
    #[arg(long)]
    weight_table: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct PowallocArgs {
    /// Squared channel gains, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    gains: Vec<f64>,
    /// Per-device power limits in watts; a single value applies to all.
    #[arg(long, value_delimiter = ',', default_value = "0.01")]
    max_power: Vec<f64>,
    /// Noise power in watts.
    #[arg(long)]
    noise: f64,
    /// Rate weights; all 1 when omitted.
    #[arg(long, value_delimiter = ',')]
    weights: Vec<f64>,
    #[arg(long, default_value_t = power_alloc::DEFAULT_EPSILON)]
    epsilon: f64,
    /// Cross-check against the grid oracle (at most 3 devices).
    #[arg(long)]
    oracle: bool,
}

/// Bad invocation, reported with exit status 2.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

const MAX_POWALLOC_DEVICES: usize = 8;

fn load_config(args: &RunArgs) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = match &args.config {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            if text.trim().is_empty() {
                ExperimentConfig::default()
            } else {
                serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
            }
        }
        None => ExperimentConfig::default(),
    };
    if let Some(s) = args.seed {
        cfg.seeds = vec![s];
    }
    if let Some(out) = &args.out {
        cfg.output_dir = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn simulate(args: RunArgs) -> anyhow::Result<()> {
    let cfg = load_config(&args)?;
    if args.dump_config {
        println!("{}", cfg.to_json());
        return Ok(());
    }
    if experiment::resolve_scheduler(&cfg) == ScheduleMethod::Sequential && cfg.scheduler == SchedulerMode::Auto {
        eprintln!(
            "note: {} graph vertices exceed the cap of {}; optimal schemes use sequential scheduling",
            SchedulingGraph::vertex_count(cfg.devices, cfg.group_size, cfg.rounds),
            cfg.vertex_cap
        );
    }
    let data = experiment::load_dataset(&cfg, Path::new("."))?;
    log::info!(
        "{} samples, {} schemes, seeds {:?}",
        data.len(),
        cfg.schemes.len(),
        cfg.seeds
    );
    let comparison = experiment::compare_schemes(&cfg, &data)?;
    for run in &comparison.runs {
        let violations = sched_graph::validate_pattern(&run.schedule, cfg.devices, cfg.group_size, cfg.rounds);
        if !violations.is_empty() {
            bail!("{}: schedule failed validation: {}", run.run_id, violations[0]);
        }
    }
    let written = experiment::write_outputs(&cfg.output_dir, &comparison)?;
    for run in &comparison.runs {
        println!(
            "{:<28} final accuracy {:.4}  time {:.2} s",
            run.run_id,
            run.final_accuracy(),
            run.rounds.last().map_or(0.0, |r| r.cumulative_time_s)
        );
    }
    for p in written {
        println!("wrote {}", p.display());
    }
    Ok(())
}

fn schedule(args: ScheduleArgs) -> anyhow::Result<()> {
    let cfg = load_config(&args.run)?;
    if args.run.dump_config {
        println!("{}", cfg.to_json());
        return Ok(());
    }
    let (m, k, t) = (cfg.devices, cfg.group_size, cfg.rounds);
    let method = experiment::resolve_scheduler(&cfg);
    if method == ScheduleMethod::Sequential && cfg.scheduler == SchedulerMode::Auto {
        println!(
            "# scheduler: sequential ({} graph vertices exceed the cap of {})",
            SchedulingGraph::vertex_count(m, k, t),
            cfg.vertex_cap
        );
    } else {
        println!(
            "# scheduler: {}",
            if method == ScheduleMethod::Graph {
                "graph"
            } else {
                "sequential"
            }
        );
    }

    let (pattern, total) = if let Some(path) = &args.weight_table {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let table: Vec<Vec<f64>> = serde_json::from_str(&text).context("weight table must be an array of arrays")?;
        if table.len() != t || table.iter().any(|r| r.len() != m) {
            bail!(Usage(format!("weight table must be {t} rounds of {m} device weights")));
        }
        let weight = |g: &[DeviceId], r: usize| g.iter().map(|&d| table[r][d]).sum::<f64>();
        let pattern = build_pattern(&cfg, method, weight)?;
        let total: f64 = pattern.rounds.iter().enumerate().map(|(r, g)| weight(g, r)).sum();
        (pattern, total)
    } else {
        let scheme: Scheme = args.scheme.parse()?;
        let data = experiment::load_dataset(&cfg, Path::new("."))?;
        let scenario = Scenario::new(&cfg, &data, cfg.seeds[0])?;
        let weight = |g: &[DeviceId], r: usize| {
            experiment::allocate(&cfg, &scenario, scheme, g, r).map_or(0.0, |a| a.weighted_sum_rate())
        };
        let pattern = build_pattern(&cfg, method, weight)?;
        let total: f64 = pattern.rounds.iter().enumerate().map(|(r, g)| weight(g, r)).sum();
        (pattern, total)
    };
    print_pattern(&pattern, total, &args, &cfg)
}

fn build_pattern<F>(cfg: &ExperimentConfig, method: ScheduleMethod, weight: F) -> anyhow::Result<SchedulePattern>
where
    F: Fn(&[DeviceId], usize) -> f64 + Sync + Send,
{
    let (m, k, t) = (cfg.devices, cfg.group_size, cfg.rounds);
    Ok(match method {
        ScheduleMethod::Graph => {
            let graph = SchedulingGraph::build(m, k, t, cfg.vertex_cap, cfg.execution, &weight)?;
            let mut pattern = graph.pattern_of(&graph.greedy_mwis().selected);
            let filled = sched_graph::sequential_fill(&mut pattern, m, k, cfg.execution, &weight);
            if !filled.is_empty() {
                println!("# rounds filled sequentially: {filled:?}");
            }
            pattern
        }
        _ => sched_graph::sequential_schedule(m, k, t, cfg.execution, &weight),
    })
}

fn print_pattern(
    pattern: &SchedulePattern,
    total: f64,
    args: &ScheduleArgs,
    cfg: &ExperimentConfig,
) -> anyhow::Result<()> {
    let violations = sched_graph::validate_pattern(pattern, cfg.devices, cfg.group_size, cfg.rounds);
    if let Some(v) = violations.first() {
        bail!("schedule failed validation: {v}");
    }
    match &args.run.out {
        Some(path) => {
            fs::write(path, pattern.to_string()).with_context(|| format!("writing {}", path.display()))?;
            println!("wrote {}", path.display());
        }
        None => print!("{pattern}"),
    }
    println!("# total weight: {total}");
    Ok(())
}

fn powalloc(args: PowallocArgs) -> anyhow::Result<()> {
    let k = args.gains.len();
    if !(1..=MAX_POWALLOC_DEVICES).contains(&k) {
        bail!(Usage(format!(
            "powalloc takes 1 to {MAX_POWALLOC_DEVICES} devices, got {k}"
        )));
    }
    let max_power = match args.max_power.len() {
        1 => vec![args.max_power[0]; k],
        n if n == k => args.max_power.clone(),
        n => bail!(Usage(format!("--max-power has {n} values for {k} gains"))),
    };
    let weights = match args.weights.len() {
        0 => vec![1.0; k],
        n if n == k => args.weights.clone(),
        n => bail!(Usage(format!("--weights has {n} values for {k} gains"))),
    };
    if args.oracle && k > power_alloc::ORACLE_MAX_DEVICES {
        bail!(Usage(format!(
            "--oracle supports at most {} devices",
            power_alloc::ORACLE_MAX_DEVICES
        )));
    }
    let problem = PowerProblem::new(args.gains, max_power, args.noise, weights.clone())?;
    let s = power_alloc::solve_polyblock(&problem, args.epsilon, power_alloc::DEFAULT_MAX_ITERATIONS)?;
    println!("device  power_w        rate_bps_hz");
    for i in 0..k {
        println!("{i:<7} {:<14.6e} {:.6}", s.powers[i], s.rates.spectral_efficiency[i]);
    }
    println!("decode order: {:?}", s.rates.decode_order);
    println!("objective: {:.9}", s.objective);
    println!("weighted sum rate: {:.9}", s.weighted_sum_rate(&weights));
    println!(
        "iterations: {}{}",
        s.iterations,
        if s.converged { "" } else { " (not converged)" }
    );
    if args.oracle {
        let resolution = if k <= 2 { 1e-3 } else { 1e-2 };
        let o = power_alloc::solve_grid_oracle(&problem, resolution)?;
        let gap = (o.objective - s.objective) / o.objective;
        println!("oracle objective: {:.9} (grid {resolution} x p_max)", o.objective);
        println!("relative gap: {gap:.3e}");
    }
    Ok(())
}

fn quantize_check() -> anyhow::Result<()> {
    let mut failed = 0;
    for case in quantize::conformance_cases() {
        let got = quantize::quantize(&case.input, case.bits)?.values;
        let ok =
            got.len() == case.expected.len() && got.iter().zip(&case.expected).all(|(a, b)| (a - b).abs() <= 1e-12);
        println!("{} b={}: {}", if ok { "PASS" } else { "FAIL" }, case.bits, case.name);
        if !ok {
            println!("  expected {:?}\n  got      {:?}", case.expected, got);
            failed += 1;
        }
    }
    // Spot check of the per-element bound on an affine grid of inputs.
    for bits in (1..=8).chain([16, 32]) {
        let xs: Vec<f64> = (0..=1000).map(|i| -1.0 + 2.0 * i as f64 / 1000.0).collect();
        let q = quantize::quantize(&xs, bits)?.values;
        let bound = quantize::quantization_error_bound(bits)?;
        let worst = xs.iter().zip(&q).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let ok = worst <= bound + 1e-15;
        println!(
            "{} b={bits}: max error {worst:.3e} <= {bound:.3e}",
            if ok { "PASS" } else { "FAIL" }
        );
        failed += usize::from(!ok);
    }
    if failed > 0 {
        bail!("{failed} conformance checks failed");
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("NOMAFL_LOG", "warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Schedule(a) => schedule(a),
        Command::Powalloc(a) => powalloc(a),
        Command::QuantizeCheck => quantize_check(),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<Usage>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
