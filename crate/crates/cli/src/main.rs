//! `skyshare`: run, compare, replay and verify spectrum-sharing experiments.

mod output;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use skyshare::config::{self, ExperimentConfig};
use skyshare::engine::{self, Mode, RunOutput};
use skyshare::learner::QTable;
use skyshare::verify;

#[derive(Parser)]
#[command(name = "skyshare", version, about = "UAV spectrum-sharing simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train with one mode and export metrics.
    Run(RunArgs),
    /// Run several modes on the same worlds and seeds.
    Compare(CompareArgs),
    /// Greedy execution from dumped Q-tables.
    Replay(ReplayArgs),
    /// Run the invariant suite.
    Verify(VerifyArgs),
    /// List the bundled presets.
    Presets,
}

#[derive(Args, Clone)]
struct Source {
    /// Bundled preset name (see `skyshare presets`).
    #[arg(long, conflicts_with = "config")]
    preset: Option<String>,
    /// Path to a TOML config file.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct Overrides {
    /// First seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of consecutive seeds starting at --seed.
    #[arg(long, default_value_t = 1)]
    seeds: u64,
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    runs: Option<usize>,
    /// Unbounded episodes that end when the relay's battery runs out.
    #[arg(long)]
    lifetime: bool,
    /// Output directory root.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    source: Source,
    #[command(flatten)]
    overrides: Overrides,
    /// Comparison mode 0-4.
    #[arg(long)]
    mode: Option<u8>,
    /// Write the final Q-table of every UAV.
    #[arg(long)]
    dump_qtables: bool,
    /// Run the invariant suite first and stop if it fails.
    #[arg(long)]
    verify: bool,
    /// Also write per-UAV min-max normalized throughput.
    #[arg(long)]
    normalize: bool,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    source: Source,
    #[command(flatten)]
    overrides: Overrides,
    /// Comma-separated modes, e.g. 0,1,2,3,4.
    #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4")]
    modes: Vec<u8>,
}

#[derive(Args)]
struct ReplayArgs {
    #[command(flatten)]
    source: Source,
    /// Seed the Q-tables were trained with.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Directory holding uav<i>.csv Q-tables.
    #[arg(long)]
    qtables: PathBuf,
    #[arg(long)]
    mode: Option<u8>,
    #[arg(long)]
    steps: Option<usize>,
    /// Trajectory log path; printed to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    #[command(flatten)]
    source: Source,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Compare(args) => cmd_compare(args),
        Command::Replay(args) => cmd_replay(args),
        Command::Verify(args) => cmd_verify(args),
        Command::Presets => {
            for name in config::preset_names() {
                let s = config::preset(name)?.structure();
                println!(
                    "{name:<26} grid {}x{} regions {:>3} region {}x{} states {:>3} q-table {:>4} steps {}",
                    s.grid[0], s.grid[1], s.regions, s.region_size[0], s.region_size[1], s.states, s.qtable_size, s.steps
                );
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn load(source: &Source) -> Result<ExperimentConfig> {
    let cfg = load_unchecked(source)?;
    cfg.validate().context("invalid config")?;
    Ok(cfg)
}

fn load_unchecked(source: &Source) -> Result<ExperimentConfig> {
    match (&source.preset, &source.config) {
        (Some(name), None) => Ok(ExperimentConfig::parse(config::preset_source(name)?)?),
        (None, Some(path)) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            ExperimentConfig::parse(&text).with_context(|| format!("parsing {}", path.display()))
        }
        (None, None) => bail!("one of --preset or --config is required"),
        (Some(_), Some(_)) => unreachable!("clap rejects both"),
    }
}

/// Applies command-line overrides; the declared structure no longer describes
/// an overridden config, so it is dropped before revalidating.
fn apply(mut cfg: ExperimentConfig, o: &Overrides, mode: Option<u8>) -> Result<ExperimentConfig> {
    let mut changed = false;
    if let Some(v) = o.episodes {
        cfg.run.episodes = v;
        changed = true;
    }
    if let Some(v) = o.steps {
        cfg.run.steps = v;
        changed = true;
    }
    if let Some(v) = o.runs {
        cfg.run.runs = v;
        changed = true;
    }
    if o.lifetime {
        cfg.run.lifetime_mode = true;
    }
    if let Some(m) = mode {
        cfg.run.mode = Mode::try_from(m)?;
    }
    if changed {
        cfg.structure = None;
    }
    cfg.validate()?;
    if o.seeds == 0 {
        bail!("--seeds must be at least 1");
    }
    Ok(cfg)
}

fn seeds(o: &Overrides) -> Vec<u64> {
    (0..o.seeds).map(|k| o.seed + k).collect()
}

fn train(cfg: &ExperimentConfig, seed: u64) -> Result<(skyshare::Scenario, RunOutput)> {
    let scenario = cfg.scenario(seed)?;
    let out = engine::run(&scenario, &cfg.run_config(seed), &cfg.learning)
        .with_context(|| format!("seed {seed}"))?;
    Ok((scenario, out))
}

fn cmd_run(args: RunArgs) -> Result<ExitCode> {
    let cfg = apply(load(&args.source)?, &args.overrides, args.mode)?;
    let seeds = seeds(&args.overrides);
    if args.verify {
        for &seed in &seeds {
            let report = verify::verify(&cfg, seed)?;
            print!("{report}");
            if !report.passed() {
                eprintln!("verification failed for seed {seed}; not running");
                return Ok(ExitCode::FAILURE);
            }
        }
    }
    let hash = output::config_hash(&cfg);
    let results: Vec<_> = seeds
        .par_iter()
        .map(|&seed| train(&cfg, seed).map(|r| (seed, r)))
        .collect::<Result<_>>()?;
    for (seed, (scenario, out)) in results {
        let dir = args.overrides.out.join(format!("{hash}-seed{seed}"));
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        fs::write(dir.join("config.toml"), cfg.to_toml())?;
        fs::write(dir.join("scenario.toml"), scenario.to_toml())?;
        output::write_metrics(&dir.join("metrics.csv"), &out.metrics)?;
        output::write_allocation(&dir.join("allocation.csv"), &scenario, &out)?;
        let summary = output::summarize(&cfg, seed, &out);
        fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
        if args.normalize {
            output::write_normalized(&dir.join("normalized_rate.csv"), &out.metrics)?;
        }
        if args.dump_qtables {
            let qdir = dir.join("qtables");
            fs::create_dir_all(&qdir)?;
            for (u, q) in out.final_qtables.iter().enumerate() {
                let file = fs::File::create(qdir.join(format!("uav{u}.csv")))?;
                q.write_flat(std::io::BufWriter::new(file))?;
            }
        }
        println!(
            "mode={} seed={} final_sum_rate={:.4} relay_lifetime={:.1} out={}",
            cfg.run.mode.index(),
            seed,
            summary.final_sum_rate.mean,
            summary.relay_lifetime.mean,
            dir.display()
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_compare(args: CompareArgs) -> Result<ExitCode> {
    let base = apply(load(&args.source)?, &args.overrides, None)?;
    let mut modes = Vec::new();
    for &m in &args.modes {
        let mode = Mode::try_from(m)?;
        if !modes.contains(&mode) {
            modes.push(mode);
        }
    }
    let seeds = seeds(&args.overrides);
    let jobs: Vec<(Mode, u64)> = modes.iter().flat_map(|&m| seeds.iter().map(move |&s| (m, s))).collect();
    let results: Vec<output::ModeSeedResult> = jobs
        .par_iter()
        .map(|&(mode, seed)| {
            let mut cfg = base.clone();
            cfg.run.mode = mode;
            let (_, out) = train(&cfg, seed)?;
            Ok(output::ModeSeedResult::new(mode, seed, &out.metrics))
        })
        .collect::<Result<_>>()?;

    let hash = output::config_hash(&base);
    let dir = args.overrides.out.join(format!(
        "{hash}-compare-seed{}x{}",
        args.overrides.seed, args.overrides.seeds
    ));
    fs::create_dir_all(&dir)?;
    fs::write(dir.join("config.toml"), base.to_toml())?;
    output::write_compare_long(&dir.join("compare.csv"), &results)?;
    let report = output::compare_report(&modes, &results);
    fs::write(dir.join("compare_summary.json"), serde_json::to_string_pretty(&report)? + "\n")?;
    if modes.len() < 2 {
        println!("single mode: nothing to compare against");
    }
    println!("{:<5} {:>24} {:>24} {:>24}", "mode", "final sum rate", "relay lifetime", "energy rate (J/step)");
    for row in &report {
        println!(
            "{:<5} {:>24} {:>24} {:>24}",
            row.mode,
            format!("{:.4} ± {:.4}", row.final_sum_rate.mean, row.final_sum_rate.std),
            format!("{:.1} ± {:.1}", row.relay_lifetime.mean, row.relay_lifetime.std),
            format!("{:.4} ± {:.4}", row.energy_rate.mean, row.energy_rate.std),
        );
    }
    println!("out={}", dir.display());
    Ok(ExitCode::SUCCESS)
}

fn read_qtables(dir: &Path, uavs: usize) -> Result<Vec<QTable>> {
    (0..uavs)
        .map(|u| {
            let path = dir.join(format!("uav{u}.csv"));
            let file = fs::File::open(&path).with_context(|| format!("opening {}", path.display()))?;
            QTable::read_flat(std::io::BufReader::new(file)).with_context(|| format!("parsing {}", path.display()))
        })
        .collect()
}

fn cmd_replay(args: ReplayArgs) -> Result<ExitCode> {
    let mut cfg = load(&args.source)?;
    if let Some(m) = args.mode {
        cfg.run.mode = Mode::try_from(m)?;
    }
    let scenario = cfg.scenario(args.seed)?;
    let policy = engine::apply_mode(cfg.run.mode);
    let alloc = engine::allocate_for_mode(&policy, &scenario, &mut engine::allocation_rng(args.seed))?;
    let tables = read_qtables(&args.qtables, scenario.uav_count())?;
    let steps = args.steps.unwrap_or(cfg.run.steps);
    let log = engine::replay_greedy(&scenario, &alloc, &tables, steps, args.seed)?;
    match &args.out {
        Some(path) => output::write_trajectory(fs::File::create(path)?, &log)?,
        None => output::write_trajectory(std::io::stdout().lock(), &log)?,
    }
    for u in 0..scenario.uav_count() {
        if let Some(last) = log.iter().rev().find(|r| r.uav == u) {
            eprintln!("uav {u} ({}) ends at cell {} with rate {:.6}", last.role.as_str(), last.cell, last.rate);
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_verify(args: VerifyArgs) -> Result<ExitCode> {
    let cfg = load_unchecked(&args.source)?;
    let report = verify::verify(&cfg, args.seed).context("verification aborted")?;
    print!("{report}");
    let failed: Vec<&str> = report.failures().map(|c| c.name).collect();
    if failed.is_empty() {
        println!("all checks passed");
        Ok(ExitCode::SUCCESS)
    } else {
        println!("failed: {}", failed.join(", "));
        Ok(ExitCode::FAILURE)
    }
}
