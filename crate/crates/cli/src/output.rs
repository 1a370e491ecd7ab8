//! Artifact writers: metrics CSV, summaries, comparison tables, trajectories.

use std::io::Write;
use std::path::Path;

use anyhow::Result;
use serde::Serialize;
use sha2::{Digest, Sha256};

use skyshare::allocator::Role;
use skyshare::config::ExperimentConfig;
use skyshare::engine::{EpisodeMetrics, MetricsTensor, Mode, RunOutput, StepRecord};
use skyshare::Scenario;

/// Episodes averaged for the "final" throughput figures.
pub const FINAL_EPISODES: usize = 5;

/// First 12 hex digits of the SHA-256 of the effective config.
pub fn config_hash(cfg: &ExperimentConfig) -> String {
    let digest = Sha256::digest(cfg.to_toml().as_bytes());
    digest.iter().take(6).map(|b| format!("{b:02x}")).collect()
}

#[derive(Serialize)]
struct MetricsRow {
    run: usize,
    episode: usize,
    uav: usize,
    role: &'static str,
    region: usize,
    sum_rate: f64,
    cum_reward: f64,
    moves: usize,
    lifetime_tx: usize,
    energy_rate: f64,
    final_energy: f64,
}

pub fn write_metrics(path: &Path, m: &MetricsTensor) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for (run, episode, uav, x) in m.iter() {
        w.serialize(MetricsRow {
            run,
            episode,
            uav,
            role: x.role.as_str(),
            region: x.region,
            sum_rate: x.sum_throughput,
            cum_reward: x.cumulative_reward,
            moves: x.movement_count,
            lifetime_tx: x.lifetime_transmissions,
            energy_rate: x.energy_consumption_rate,
            final_energy: x.final_energy,
        })?;
    }
    w.flush()?;
    Ok(())
}

/// Per-UAV min-max normalization of the episode throughput over all runs.
pub fn write_normalized(path: &Path, m: &MetricsTensor) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["run", "episode", "uav", "sum_rate_norm"])?;
    for uav in 0..m.uavs {
        let values: Vec<f64> = m.iter().filter(|r| r.2 == uav).map(|r| r.3.sum_throughput).collect();
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        for (run, episode, _, x) in m.iter().filter(|r| r.2 == uav) {
            let norm = if hi > lo { (x.sum_throughput - lo) / (hi - lo) } else { 0.0 };
            w.write_record([run.to_string(), episode.to_string(), uav.to_string(), norm.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct AllocationRow {
    run: Option<usize>,
    episode: usize,
    uav: usize,
    role: &'static str,
    region: usize,
    hops: usize,
    initial_energy: f64,
    post_flight_energy: f64,
}

/// Initial allocation plus every re-allocation (run left empty for the
/// initial one, which every run starts from).
pub fn write_allocation(path: &Path, scenario: &Scenario, out: &RunOutput) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut emit = |run, episode, s: &Scenario, a: &skyshare::Allocation| -> Result<()> {
        for rec in a.records(s) {
            w.serialize(AllocationRow {
                run,
                episode,
                uav: rec.uav,
                role: rec.role.as_str(),
                region: rec.region,
                hops: rec.hops,
                initial_energy: rec.initial_energy,
                post_flight_energy: rec.post_flight_energy,
            })?;
        }
        Ok(())
    };
    emit(None, 0, scenario, &out.allocation)?;
    for r in &out.reallocations {
        emit(Some(r.run), r.episode, &r.scenario, &r.allocation)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
    pub ci95: f64,
    pub n: usize,
}

impl Stat {
    pub fn of(xs: &[f64]) -> Stat {
        let n = xs.len();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Stat {
            mean,
            std,
            ci95: 1.96 * std / (n as f64).sqrt(),
            n,
        }
    }
}

#[derive(Serialize)]
pub struct Summary {
    pub config: String,
    pub seed: u64,
    pub mode: u8,
    pub runs: usize,
    pub episodes: usize,
    pub steps: usize,
    pub lifetime_mode: bool,
    /// All-UAV throughput of the last episode, across runs.
    pub final_sum_rate: Stat,
    /// Relay transmissions per episode, across runs and episodes.
    pub relay_lifetime: Stat,
    /// Energy consumption rate, across runs, episodes and UAVs.
    pub energy_rate: Stat,
    pub first_episode_moves: Stat,
    pub last_episode_moves: Stat,
    pub stalled_moves: usize,
    pub reallocations: usize,
}

pub fn summarize(cfg: &ExperimentConfig, seed: u64, out: &RunOutput) -> Summary {
    let m = &out.metrics;
    let last = m.episodes - 1;
    let per_run = |e: usize, f: &dyn Fn(&EpisodeMetrics) -> f64| -> Vec<f64> {
        (0..m.runs).map(|r| m.episode(r, e).iter().map(f).sum()).collect()
    };
    let relay: Vec<f64> = m
        .iter()
        .filter(|r| r.3.role == Role::Relay)
        .map(|r| r.3.lifetime_transmissions as f64)
        .collect();
    let energy: Vec<f64> = m.iter().map(|r| r.3.energy_consumption_rate).collect();
    let uavs = m.uavs as f64;
    Summary {
        config: cfg.name.clone(),
        seed,
        mode: cfg.run.mode.index(),
        runs: m.runs,
        episodes: m.episodes,
        steps: cfg.run.steps,
        lifetime_mode: cfg.run.lifetime_mode,
        final_sum_rate: Stat::of(&per_run(last, &|x| x.sum_throughput)),
        relay_lifetime: Stat::of(&relay),
        energy_rate: Stat::of(&energy),
        first_episode_moves: Stat::of(
            &per_run(0, &|x| x.movement_count as f64).iter().map(|v| v / uavs).collect::<Vec<_>>(),
        ),
        last_episode_moves: Stat::of(
            &per_run(last, &|x| x.movement_count as f64).iter().map(|v| v / uavs).collect::<Vec<_>>(),
        ),
        stalled_moves: m.iter().map(|r| r.3.stalled_moves).sum(),
        reallocations: out.reallocations.len(),
    }
}

/// Scalars of one (mode, seed) training run.
pub struct ModeSeedResult {
    pub mode: Mode,
    pub seed: u64,
    pub final_sum_rate: f64,
    pub relay_lifetime: f64,
    pub energy_rate: f64,
    /// Per episode, averaged over runs: (sum rate, relay transmissions, energy rate).
    pub per_episode: Vec<(f64, f64, f64)>,
}

impl ModeSeedResult {
    pub fn new(mode: Mode, seed: u64, m: &MetricsTensor) -> Self {
        let tail = m.episodes.saturating_sub(FINAL_EPISODES);
        let per_episode = (0..m.episodes)
            .map(|e| {
                let mut acc = (0.0, 0.0, 0.0);
                for r in 0..m.runs {
                    let ep = m.episode(r, e);
                    acc.0 += ep.iter().map(|x| x.sum_throughput).sum::<f64>();
                    acc.1 += ep
                        .iter()
                        .filter(|x| x.role == Role::Relay)
                        .map(|x| x.lifetime_transmissions as f64)
                        .sum::<f64>();
                    acc.2 += ep.iter().map(|x| x.energy_consumption_rate).sum::<f64>() / m.uavs as f64;
                }
                let runs = m.runs as f64;
                (acc.0 / runs, acc.1 / runs, acc.2 / runs)
            })
            .collect();
        ModeSeedResult {
            mode,
            seed,
            final_sum_rate: m.mean_sum_throughput(tail..m.episodes),
            relay_lifetime: m.mean_relay_lifetime(),
            energy_rate: m.mean_energy_rate(),
            per_episode,
        }
    }
}

/// Long format: mode, seed, episode, metric, value.
pub fn write_compare_long(path: &Path, results: &[ModeSeedResult]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["mode", "seed", "episode", "metric", "value"])?;
    for r in results {
        for (e, (rate, life, energy)) in r.per_episode.iter().enumerate() {
            for (metric, v) in [("sum_rate", rate), ("relay_lifetime", life), ("energy_rate", energy)] {
                w.write_record([
                    r.mode.index().to_string(),
                    r.seed.to_string(),
                    e.to_string(),
                    metric.to_string(),
                    v.to_string(),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
pub struct CompareRow {
    pub mode: u8,
    pub final_sum_rate: Stat,
    pub relay_lifetime: Stat,
    pub energy_rate: Stat,
}

pub fn compare_report(modes: &[Mode], results: &[ModeSeedResult]) -> Vec<CompareRow> {
    modes
        .iter()
        .map(|&mode| {
            let rs: Vec<&ModeSeedResult> = results.iter().filter(|r| r.mode == mode).collect();
            let col = |f: fn(&ModeSeedResult) -> f64| Stat::of(&rs.iter().map(|r| f(r)).collect::<Vec<_>>());
            CompareRow {
                mode: mode.index(),
                final_sum_rate: col(|r| r.final_sum_rate),
                relay_lifetime: col(|r| r.relay_lifetime),
                energy_rate: col(|r| r.energy_rate),
            }
        })
        .collect()
}

pub fn write_trajectory<W: Write>(w: W, log: &[StepRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(w);
    w.write_record(["step", "uav", "role", "region", "cell", "action", "rate", "energy"])?;
    for r in log {
        w.write_record([
            r.step.to_string(),
            r.uav.to_string(),
            r.role.as_str().to_string(),
            r.region.to_string(),
            r.cell.to_string(),
            r.action.to_string(),
            r.rate.to_string(),
            r.energy_after.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
