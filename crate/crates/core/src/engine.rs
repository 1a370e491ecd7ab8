//! Runs x episodes x steps training loop with energy accounting, lifetime
//! measurement, the re-allocation hook, and the five comparison modes.
//!
//! Per step, every live UAV acts in index order. A UAV that cannot pay for
//! the action it picked dies and takes no further part in the episode. Fixed
//! length episodes always run their full step count; in lifetime mode the
//! episode lasts until the relay dies.

use std::collections::BTreeMap;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::allocator::{self, Allocation, Role};
use crate::channel::{self, TimeAllocation};
use crate::error::{Error, Result};
use crate::learner::{self, Action, AgentState, LearningParams, QTable};
use crate::scenario::{CellId, Position3D, RegionId, RegionShape, Scenario, UavId};

/// Comparison modes 0-4.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Mode {
    /// Prioritized regions, matching allocation, Q-learning.
    Proposed = 0,
    /// Prioritized regions, random allocation, Q-learning.
    RandomAllocation = 1,
    /// Random regions, random allocation, Q-learning.
    RandomRegionsAndAllocation = 2,
    /// Random regions, matching allocation, Q-learning.
    RandomRegions = 3,
    /// Prioritized regions, matching allocation, random walk.
    RandomWalk = 4,
}

impl Mode {
    pub const ALL: [Mode; 5] = [
        Mode::Proposed,
        Mode::RandomAllocation,
        Mode::RandomRegionsAndAllocation,
        Mode::RandomRegions,
        Mode::RandomWalk,
    ];

    pub fn index(self) -> u8 {
        self as u8
    }
}

impl TryFrom<u8> for Mode {
    type Error = Error;

    fn try_from(v: u8) -> Result<Mode> {
        Mode::ALL
            .get(v as usize)
            .copied()
            .ok_or_else(|| Error::invalid("mode", format!("{v} is not in 0..=4")))
    }
}

impl From<Mode> for u8 {
    fn from(m: Mode) -> u8 {
        m as u8
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegionPolicy {
    Prioritized,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AllocationPolicy {
    Matching,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mobility {
    QLearning,
    RandomWalk,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModePolicy {
    pub regions: RegionPolicy,
    pub allocation: AllocationPolicy,
    pub mobility: Mobility,
}

pub fn apply_mode(mode: Mode) -> ModePolicy {
    use AllocationPolicy as A;
    use Mobility as M;
    use RegionPolicy as R;
    let (regions, allocation, mobility) = match mode {
        Mode::Proposed => (R::Prioritized, A::Matching, M::QLearning),
        Mode::RandomAllocation => (R::Prioritized, A::Random, M::QLearning),
        Mode::RandomRegionsAndAllocation => (R::Random, A::Random, M::QLearning),
        Mode::RandomRegions => (R::Random, A::Matching, M::QLearning),
        Mode::RandomWalk => (R::Prioritized, A::Matching, M::RandomWalk),
    };
    ModePolicy {
        regions,
        allocation,
        mobility,
    }
}

/// Emergency-center stage under a mode's region and allocation policies.
pub fn allocate_for_mode<R: Rng + ?Sized>(
    policy: &ModePolicy,
    scenario: &Scenario,
    rng: &mut R,
) -> Result<Allocation> {
    let n = scenario.uav_count();
    if n < 2 {
        return Err(Error::Infeasible("at least two UAVs are required".into()));
    }
    let (primary, regions) = match policy.regions {
        RegionPolicy::Prioritized => {
            let primary = allocator::select_primary_region(scenario);
            (primary, allocator::prioritized_regions(scenario, primary)?)
        }
        RegionPolicy::Random => {
            let m = scenario.grid().region_count();
            let primary = rng.random_range(0..m);
            let others: Vec<RegionId> = (0..m).filter(|&r| r != primary).collect();
            let picked = index::sample(rng, others.len(), n - 1);
            (primary, picked.into_iter().map(|k| others[k]).collect())
        }
    };
    match policy.allocation {
        AllocationPolicy::Matching => {
            let (relay, _) = allocator::select_relay_uav(scenario, primary)?;
            allocator::assign_sensing_to(scenario, relay, primary, &regions)
        }
        AllocationPolicy::Random => {
            let mut uavs: Vec<UavId> = (0..n).collect();
            uavs.shuffle(rng);
            let assignment = uavs[1..].iter().copied().zip(regions).collect();
            Allocation::charge_flights(scenario, primary, uavs[0], assignment)
        }
    }
}

/// Scripted environment change applied at the start of an episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioChange {
    pub episode: usize,
    /// Dynamicity level reported for this change; compared against the threshold.
    #[serde(default = "default_level")]
    pub level: f64,
    #[serde(default)]
    pub primary_tx: Option<Position3D>,
    #[serde(default)]
    pub primary_rx: Option<Position3D>,
    #[serde(default)]
    pub emergency_center: Option<Position3D>,
}

fn default_level() -> f64 {
    1.0
}

/// Re-allocation trigger: strictly above the threshold. An infinite threshold
/// disables it.
pub fn dynamicity_hook(signal: f64, threshold: f64) -> bool {
    signal > threshold
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub runs: usize,
    pub episodes: usize,
    pub steps: usize,
    pub mode: Mode,
    #[serde(default = "default_threshold")]
    pub dynamicity_threshold: f64,
    #[serde(default)]
    pub lifetime_mode: bool,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default)]
    pub schedule: Vec<ScenarioChange>,
}

fn default_threshold() -> f64 {
    f64::INFINITY
}

impl RunConfig {
    pub fn new(runs: usize, episodes: usize, steps: usize) -> Self {
        RunConfig {
            runs,
            episodes,
            steps,
            mode: Mode::Proposed,
            dynamicity_threshold: f64::INFINITY,
            lifetime_mode: false,
            master_seed: 0,
            schedule: Vec::new(),
        }
    }

    /// `steps == 0` is accepted (empty episodes); run and episode counts
    /// must be positive.
    pub fn validate(&self) -> Result<()> {
        if self.runs == 0 {
            return Err(Error::invalid("runs", "must be at least 1"));
        }
        if self.episodes == 0 {
            return Err(Error::invalid("episodes", "must be at least 1"));
        }
        if self.dynamicity_threshold.is_nan() || self.dynamicity_threshold < 0.0 {
            return Err(Error::invalid("dynamicity_threshold", "must be >= 0 or inf"));
        }
        Ok(())
    }
}

/// Per-UAV measurements for one episode.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpisodeMetrics {
    pub role: Role,
    pub region: RegionId,
    /// Rate accumulated over the episode's transmissions (bits/s/Hz).
    pub sum_throughput: f64,
    pub cumulative_reward: f64,
    pub movement_count: usize,
    /// Successful transmissions in the episode.
    pub lifetime_transmissions: usize,
    /// Joules per step over the first three quarters of the episode.
    pub energy_consumption_rate: f64,
    pub start_energy: f64,
    pub final_energy: f64,
    /// Moves that left the rate unchanged (punished like a degrading move).
    pub stalled_moves: usize,
    /// Steps the episode lasted.
    pub episode_steps: usize,
}

/// Runs x episodes x UAVs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsTensor {
    pub runs: usize,
    pub episodes: usize,
    pub uavs: usize,
    data: Vec<EpisodeMetrics>,
}

impl MetricsTensor {
    pub fn get(&self, run: usize, episode: usize, uav: UavId) -> &EpisodeMetrics {
        &self.data[(run * self.episodes + episode) * self.uavs + uav]
    }

    pub fn episode(&self, run: usize, episode: usize) -> &[EpisodeMetrics] {
        let start = (run * self.episodes + episode) * self.uavs;
        &self.data[start..start + self.uavs]
    }

    /// `(run, episode, uav, metrics)` in run-major order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, UavId, &EpisodeMetrics)> {
        self.data.iter().enumerate().map(move |(i, m)| {
            let uav = i % self.uavs;
            let re = i / self.uavs;
            (re / self.episodes, re % self.episodes, uav, m)
        })
    }

    /// Mean over runs of the all-UAV throughput sum, averaged over `episodes`.
    pub fn mean_sum_throughput(&self, episodes: std::ops::Range<usize>) -> f64 {
        let mut total = 0.0;
        let mut count = 0;
        for run in 0..self.runs {
            for e in episodes.clone() {
                total += self.episode(run, e).iter().map(|m| m.sum_throughput).sum::<f64>();
                count += 1;
            }
        }
        total / count as f64
    }

    /// Mean relay transmission count over all runs and episodes.
    pub fn mean_relay_lifetime(&self) -> f64 {
        let relay: Vec<f64> = self
            .data
            .iter()
            .filter(|m| m.role == Role::Relay)
            .map(|m| m.lifetime_transmissions as f64)
            .collect();
        relay.iter().sum::<f64>() / relay.len() as f64
    }

    /// Mean energy consumption rate over all runs, episodes and UAVs.
    pub fn mean_energy_rate(&self) -> f64 {
        self.data.iter().map(|m| m.energy_consumption_rate).sum::<f64>() / self.data.len() as f64
    }

    /// Mean movement count of one UAV over an episode window and all runs.
    pub fn mean_movements(&self, uav: UavId, episodes: std::ops::Range<usize>) -> f64 {
        let mut total = 0.0;
        let mut count = 0;
        for run in 0..self.runs {
            for e in episodes.clone() {
                total += self.get(run, e, uav).movement_count as f64;
                count += 1;
            }
        }
        total / count as f64
    }
}

/// Energy consumption rate of a per-step energy trace (`trace[t]` is the
/// energy after `t` steps). Uses `k = floor(3T/4)` steps:
/// `(trace[0] - trace[k]) / k`.
pub fn energy_consumption_rate(trace: &[f64]) -> Result<f64> {
    let steps = trace.len().saturating_sub(1);
    if steps < 4 {
        return Err(Error::EpisodeTooShort { steps });
    }
    let k = 3 * steps / 4;
    Ok((trace[0] - trace[k]) / k as f64)
}

/// One agent action, as seen by observers.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepRecord {
    pub run: usize,
    pub episode: usize,
    pub step: usize,
    pub uav: UavId,
    pub role: Role,
    pub region: RegionId,
    pub cell: CellId,
    pub action: usize,
    pub moved: bool,
    pub rate: f64,
    pub reward: f64,
    pub energy_before: f64,
    pub energy_after: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reallocation {
    pub run: usize,
    pub episode: usize,
    pub scenario: Scenario,
    pub allocation: Allocation,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub metrics: MetricsTensor,
    pub allocation: Allocation,
    pub reallocations: Vec<Reallocation>,
    /// Q-tables at the end of the last run, indexed by UAV.
    pub final_qtables: Vec<QTable>,
    /// Region each final Q-table belongs to.
    pub final_regions: Vec<RegionId>,
}

/// Independent random stream for one purpose under a master seed.
pub fn stream_rng(master_seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(stream);
    rng
}

/// Per-UAV stream; independent of the fleet size.
pub fn agent_rng(master_seed: u64, uav: UavId) -> ChaCha8Rng {
    stream_rng(master_seed, uav as u64 + 1)
}

/// Stream used by the emergency center's random policies.
pub fn allocation_rng(master_seed: u64) -> ChaCha8Rng {
    stream_rng(master_seed, 0)
}

/// Region-level view of one agent's environment.
struct AgentEnv {
    role: Role,
    region: RegionId,
    /// Rate at each local cell of the region.
    rates: Vec<f64>,
}

/// Rate table for every local cell of a UAV's assigned region.
pub fn region_rates(scenario: &Scenario, alloc: &Allocation, uav: UavId) -> Result<Vec<f64>> {
    let grid = scenario.grid();
    let region = alloc.region_of(uav);
    let shares = TimeAllocation::from_priorities(&alloc.sensing_assignment, scenario.priorities())?;
    grid.cells_of(region)?
        .into_iter()
        .map(|c| {
            let pos = grid.cell_to_position(c)?;
            match alloc.role(uav) {
                Role::Relay => channel::primary_rate(pos, scenario),
                Role::Sensing => {
                    let lambda = shares.share(uav).expect("every sensing UAV has a share");
                    channel::sensing_rate(pos, lambda, scenario)
                }
            }
        })
        .collect()
}

fn build_envs(scenario: &Scenario, alloc: &Allocation) -> Result<Vec<AgentEnv>> {
    (0..scenario.uav_count())
        .map(|u| {
            Ok(AgentEnv {
                role: alloc.role(u),
                region: alloc.region_of(u),
                rates: region_rates(scenario, alloc, u)?,
            })
        })
        .collect()
}

/// Training loop without a step observer.
pub fn run(scenario: &Scenario, config: &RunConfig, params: &LearningParams) -> Result<RunOutput> {
    run_observed(scenario, config, params, |_| {})
}

/// Training loop; `observer` sees every executed agent step.
pub fn run_observed<F: FnMut(&StepRecord)>(
    scenario: &Scenario,
    config: &RunConfig,
    params: &LearningParams,
    mut observer: F,
) -> Result<RunOutput> {
    config.validate()?;
    params.validate()?;
    let policy = apply_mode(config.mode);
    let learning = policy.mobility == Mobility::QLearning;
    let n = scenario.uav_count();
    let shape = scenario.grid().shape();
    let phys = *scenario.phys();

    let mut alloc_rng = allocation_rng(config.master_seed);
    let initial_alloc = allocate_for_mode(&policy, scenario, &mut alloc_rng)?;
    let initial_envs = build_envs(scenario, &initial_alloc)?;

    let mut rngs: Vec<ChaCha8Rng> = (0..n).map(|u| agent_rng(config.master_seed, u)).collect();
    let mut qtables: Vec<QTable> = (0..n).map(|_| QTable::zeros(shape.states())).collect();
    let mut data = Vec::with_capacity(config.runs * config.episodes * n);
    let mut reallocations = Vec::new();
    let mut traces: Vec<Vec<f64>> = vec![Vec::new(); n];
    let mut final_regions = Vec::new();

    for run in 0..config.runs {
        let mut world = scenario.clone();
        let mut alloc = initial_alloc.clone();
        let mut envs = build_world_envs(&initial_envs);
        qtables.iter_mut().for_each(QTable::reset);

        for episode in 0..config.episodes {
            let changes: Vec<&ScenarioChange> =
                config.schedule.iter().filter(|c| c.episode == episode).collect();
            if !changes.is_empty() {
                let mut nodes = world.nodes().clone();
                for c in &changes {
                    if let Some(p) = c.primary_tx {
                        nodes.primary_tx = p;
                    }
                    if let Some(p) = c.primary_rx {
                        nodes.primary_rx = p;
                    }
                    if let Some(p) = c.emergency_center {
                        nodes.emergency_center = p;
                    }
                }
                let signal = changes.iter().map(|c| c.level).fold(f64::NEG_INFINITY, f64::max);
                if dynamicity_hook(signal, config.dynamicity_threshold) {
                    // The controller re-plans from where the UAVs currently start.
                    let grid = world.grid();
                    nodes.uav_initial_cells = (0..n)
                        .map(|u| grid.region_center(alloc.region_of(u)))
                        .collect::<Result<_>>()?;
                    nodes.uav_initial_energy = alloc.post_flight_energy.clone();
                    world = world.with_nodes(nodes)?;
                    alloc = allocate_for_mode(&policy, &world, &mut alloc_rng)?;
                    qtables.iter_mut().for_each(QTable::reset);
                    reallocations.push(Reallocation {
                        run,
                        episode,
                        scenario: world.clone(),
                        allocation: alloc.clone(),
                    });
                } else {
                    world = world.with_nodes(nodes)?;
                }
                envs = build_envs(&world, &alloc)?;
            }

            let mut states: Vec<AgentState> = (0..n)
                .map(|u| AgentState {
                    cell: shape.center(),
                    energy: alloc.post_flight_energy[u],
                    last_rate: envs[u].rates[shape.center()],
                    alive: true,
                })
                .collect();
            let mut metrics: Vec<EpisodeMetrics> = (0..n)
                .map(|u| EpisodeMetrics {
                    role: envs[u].role,
                    region: envs[u].region,
                    sum_throughput: 0.0,
                    cumulative_reward: 0.0,
                    movement_count: 0,
                    lifetime_transmissions: 0,
                    energy_consumption_rate: 0.0,
                    start_energy: states[u].energy,
                    final_energy: states[u].energy,
                    stalled_moves: 0,
                    episode_steps: 0,
                })
                .collect();
            for (u, t) in traces.iter_mut().enumerate() {
                t.clear();
                t.push(states[u].energy);
            }

            let relay = alloc.relay_uav;
            let mut step = 0;
            let cost = |a: Action| phys.psi_tx + if a.is_move() { phys.psi_move } else { 0.0 };
            while config.lifetime_mode || step < config.steps {
                if config.lifetime_mode && !states[relay].alive {
                    break;
                }
                for u in 0..n {
                    let st = &mut states[u];
                    if !st.alive {
                        continue;
                    }
                    let a = match policy.mobility {
                        Mobility::QLearning => {
                            learner::choose_action(&qtables[u], shape, st.cell, params, &mut rngs[u])
                        }
                        Mobility::RandomWalk => learner::random_action(shape, st.cell, &mut rngs[u]),
                    };
                    if st.energy < cost(a) {
                        st.alive = false;
                        continue;
                    }
                    let next = learner::step_transition(shape, st.cell, a)?;
                    let moved = a.is_move();
                    let energy_before = st.energy;
                    if moved {
                        st.energy -= phys.psi_move;
                    }
                    let rate = envs[u].rates[next];
                    st.energy -= phys.psi_tx;
                    let r = learner::reward(moved, rate, st.last_rate, params);
                    if learning {
                        learner::q_update(&mut qtables[u], shape, st.cell, a, r, next, params);
                    }

                    let m = &mut metrics[u];
                    m.sum_throughput += rate;
                    m.cumulative_reward += r;
                    m.lifetime_transmissions += 1;
                    if moved {
                        m.movement_count += 1;
                        if r == params.beta3 && rate >= st.last_rate {
                            m.stalled_moves += 1;
                        }
                    }
                    observer(&StepRecord {
                        run,
                        episode,
                        step,
                        uav: u,
                        role: envs[u].role,
                        region: envs[u].region,
                        cell: world.grid().local_to_global(envs[u].region, next)?,
                        action: a.index(),
                        moved,
                        rate,
                        reward: r,
                        energy_before,
                        energy_after: st.energy,
                    });
                    st.cell = next;
                    st.last_rate = rate;
                }
                step += 1;
                for (u, t) in traces.iter_mut().enumerate() {
                    t.push(states[u].energy);
                }
            }

            for (u, m) in metrics.iter_mut().enumerate() {
                m.final_energy = states[u].energy;
                m.episode_steps = step;
                m.energy_consumption_rate = energy_consumption_rate(&traces[u]).unwrap_or(0.0);
            }
            data.extend(metrics);
        }
        if run + 1 == config.runs {
            final_regions = envs.iter().map(|e| e.region).collect();
        }
    }

    Ok(RunOutput {
        metrics: MetricsTensor {
            runs: config.runs,
            episodes: config.episodes,
            uavs: n,
            data,
        },
        allocation: initial_alloc,
        reallocations,
        final_qtables: qtables,
        final_regions,
    })
}

fn build_world_envs(envs: &[AgentEnv]) -> Vec<AgentEnv> {
    envs.iter()
        .map(|e| AgentEnv {
            role: e.role,
            region: e.region,
            rates: e.rates.clone(),
        })
        .collect()
}

/// Transmissions until the relay (and so the network) goes down, per UAV, for
/// every run and episode of a lifetime-mode run.
pub fn lifetime_run(
    scenario: &Scenario,
    config: &RunConfig,
    params: &LearningParams,
) -> Result<Vec<Vec<Vec<usize>>>> {
    let config = RunConfig {
        lifetime_mode: true,
        ..config.clone()
    };
    let out = run(scenario, &config, params)?;
    let m = &out.metrics;
    Ok((0..m.runs)
        .map(|r| {
            (0..m.episodes)
                .map(|e| m.episode(r, e).iter().map(|x| x.lifetime_transmissions).collect())
                .collect()
        })
        .collect())
}

/// Greedy execution from fixed Q-tables: no exploration, no updates. Returns
/// the executed steps; tie-breaks draw from each UAV's stream of `seed`.
pub fn replay_greedy(
    scenario: &Scenario,
    alloc: &Allocation,
    qtables: &[QTable],
    steps: usize,
    seed: u64,
) -> Result<Vec<StepRecord>> {
    let n = scenario.uav_count();
    let shape: RegionShape = scenario.grid().shape();
    if qtables.len() != n {
        return Err(Error::ShapeMismatch(format!("{} q-tables for {n} UAVs", qtables.len())));
    }
    if let Some(q) = qtables.iter().find(|q| q.states() != shape.states()) {
        return Err(Error::ShapeMismatch(format!(
            "q-table has {} states, regions have {}",
            q.states(),
            shape.states()
        )));
    }
    let greedy = LearningParams {
        epsilon: 0.0,
        ..LearningParams::default()
    };
    let envs = build_envs(scenario, alloc)?;
    let mut rngs: Vec<ChaCha8Rng> = (0..n).map(|u| agent_rng(seed, u)).collect();
    let mut cells = vec![shape.center(); n];
    let mut energy = alloc.post_flight_energy.clone();
    let mut last: Vec<f64> = envs.iter().map(|e| e.rates[shape.center()]).collect();
    let phys = scenario.phys();
    let mut log = Vec::new();
    for step in 0..steps {
        for u in 0..n {
            let a = learner::choose_action(&qtables[u], shape, cells[u], &greedy, &mut rngs[u]);
            let next = learner::step_transition(shape, cells[u], a)?;
            let before = energy[u];
            let cost = phys.psi_tx + if a.is_move() { phys.psi_move } else { 0.0 };
            if before < cost {
                continue;
            }
            energy[u] -= cost;
            let rate = envs[u].rates[next];
            log.push(StepRecord {
                run: 0,
                episode: 0,
                step,
                uav: u,
                role: envs[u].role,
                region: envs[u].region,
                cell: scenario.grid().local_to_global(envs[u].region, next)?,
                action: a.index(),
                moved: a.is_move(),
                rate,
                reward: learner::reward(a.is_move(), rate, last[u], &greedy),
                energy_before: before,
                energy_after: energy[u],
            });
            cells[u] = next;
            last[u] = rate;
        }
    }
    Ok(log)
}

/// Mean over runs of each UAV's per-episode values; helper for reports.
pub fn per_uav_series<F: Fn(&EpisodeMetrics) -> f64>(m: &MetricsTensor, f: F) -> BTreeMap<UavId, Vec<f64>> {
    (0..m.uavs)
        .map(|u| {
            let series = (0..m.episodes)
                .map(|e| (0..m.runs).map(|r| f(m.get(r, e, u))).sum::<f64>() / m.runs as f64)
                .collect();
            (u, series)
        })
        .collect()
}
