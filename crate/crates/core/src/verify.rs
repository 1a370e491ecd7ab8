//! Invariant suite behind `skyshare verify`: parameter validation, Q-value
//! boundedness, oracle equivalences, and the per-episode energy ledger.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::allocator::{self, Allocation, Role};
use crate::channel::TimeAllocation;
use crate::config::ExperimentConfig;
use crate::engine::{self, RunConfig};
use crate::error::Result;
use crate::learner::{self, QTable};
use crate::oracle::{self, OracleRole};
use crate::scenario::{random_scenario, Scenario};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Pass,
    Fail,
    Skip,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub status: Status,
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Report {
    pub checks: Vec<Check>,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.status != Status::Fail)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| c.status == Status::Fail)
    }

    fn push(&mut self, name: &'static str, ok: bool, detail: impl Into<String>) {
        let status = if ok { Status::Pass } else { Status::Fail };
        self.checks.push(Check {
            name,
            status,
            detail: detail.into(),
        });
    }

    fn skip(&mut self, name: &'static str, detail: impl Into<String>) {
        self.checks.push(Check {
            name,
            status: Status::Skip,
            detail: detail.into(),
        });
    }
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            let tag = match c.status {
                Status::Pass => "PASS",
                Status::Fail => "FAIL",
                Status::Skip => "SKIP",
            };
            writeln!(f, "{tag} {:<22} {}", c.name, c.detail)?;
        }
        Ok(())
    }
}

const BOUNDEDNESS_UPDATES: usize = 100_000;
const ORACLE_SCENARIOS: u64 = 50;
const LEDGER_STEPS: usize = 200;

/// Runs every check for `config` on the world drawn for `seed`. Allocation
/// infeasibility aborts the suite with an error instead of a report.
pub fn verify(config: &ExperimentConfig, seed: u64) -> Result<Report> {
    let mut report = Report::default();
    let params = config.learning;
    let params_ok = match params.validate() {
        Ok(()) => {
            report.push("learning-params", true, "alpha, gamma, epsilon, beta ordering");
            true
        }
        Err(e) => {
            report.push("learning-params", false, e.to_string());
            false
        }
    };
    match config.physical.validate() {
        Ok(()) => report.push("physical-params", true, "powers, noise, energy costs"),
        Err(e) => report.push("physical-params", false, e.to_string()),
    }

    let scenario = config.scenario(seed)?;
    let alloc = allocator::allocate(&scenario)?;
    let shape = scenario.grid().shape();

    // Raw parameters on purpose: the bound must hold for any reward triple.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut q = QTable::zeros(shape.states());
    let rewards = [params.beta1, params.beta2, params.beta3];
    let mut worst: f64 = 0.0;
    for _ in 0..BOUNDEDNESS_UPDATES {
        let s = rng.random_range(0..shape.states());
        let legal = learner::legal_actions(shape, s);
        let a = legal.nth(rng.random_range(0..legal.len())).expect("non-empty");
        let next = learner::step_transition(shape, s, a)?;
        let r = rewards[rng.random_range(0..3)];
        learner::q_update(&mut q, shape, s, a, r, next, &params);
        worst = worst.max(q.sup_norm());
    }
    let bound = params.q_bound();
    report.push(
        "q-boundedness",
        worst <= bound,
        format!("max |Q| {worst:.6} over {BOUNDEDNESS_UPDATES} updates, bound {bound:.6}"),
    );

    let mut relay_mismatch = 0;
    let mut matching_mismatch = 0;
    let mut matching_skipped = 0;
    for k in 0..ORACLE_SCENARIOS {
        let s = if k == 0 {
            scenario.clone()
        } else {
            match random_scenario(seed.wrapping_add(k), &config.template()) {
                Ok(s) => s,
                Err(_) => continue,
            }
        };
        let primary = allocator::select_primary_region(&s);
        let Ok((relay, _)) = allocator::select_relay_uav(&s, primary) else { continue };
        if oracle::exhaustive_relay(&s, primary).0 != relay {
            relay_mismatch += 1;
        }
        let sensing: Vec<usize> = (0..s.uav_count()).filter(|&u| u != relay).collect();
        if sensing.len() > oracle::MATCHING_MAX_UAVS {
            matching_skipped += 1;
            continue;
        }
        let Ok(regions) = allocator::prioritized_regions(&s, primary) else { continue };
        let fast = allocator::contest(&s, &sensing, &regions)?.0;
        match oracle::exhaustive_matching(&s, &sensing, &regions) {
            Ok(m) if m == fast => {}
            _ => matching_mismatch += 1,
        }
    }
    report.push(
        "relay-oracle",
        relay_mismatch == 0,
        format!("{relay_mismatch} mismatches over {ORACLE_SCENARIOS} scenarios"),
    );
    if matching_skipped as u64 == ORACLE_SCENARIOS {
        report.skip("matching-oracle", "fleet exceeds the exhaustive-matching guard");
    } else {
        report.push(
            "matching-oracle",
            matching_mismatch == 0,
            format!("{matching_mismatch} mismatches over {ORACLE_SCENARIOS} scenarios"),
        );
    }

    check_rates(&mut report, &scenario, &alloc)?;
    check_best_cells(&mut report, &scenario, &alloc, config)?;

    if params_ok {
        let mut run = RunConfig::new(1, 3, config.run.steps.min(LEDGER_STEPS));
        run.mode = config.run.mode;
        run.master_seed = seed;
        let out = engine::run(&scenario, &run, &params)?;
        let phys = scenario.phys();
        let mut bad = 0;
        for (_, _, _, m) in out.metrics.iter() {
            let spent = phys.psi_move * m.movement_count as f64 + phys.psi_tx * m.lifetime_transmissions as f64;
            if m.start_energy - m.final_energy != spent {
                bad += 1;
            }
        }
        report.push("energy-ledger", bad == 0, format!("{bad} episode/UAV pairs off the ledger"));
    } else {
        report.skip("energy-ledger", "learning parameters invalid");
    }
    Ok(report)
}

fn oracle_role(scenario: &Scenario, alloc: &Allocation, uav: usize) -> Result<OracleRole> {
    Ok(match alloc.role(uav) {
        Role::Relay => OracleRole::Relay,
        Role::Sensing => {
            let shares = TimeAllocation::from_priorities(&alloc.sensing_assignment, scenario.priorities())?;
            OracleRole::Sensing {
                lambda: shares.share(uav).expect("sensing UAVs have shares"),
            }
        }
    })
}

fn check_rates(report: &mut Report, scenario: &Scenario, alloc: &Allocation) -> Result<()> {
    let mut worst: f64 = 0.0;
    let mut finite = true;
    for u in 0..scenario.uav_count() {
        let fast = engine::region_rates(scenario, alloc, u)?;
        let slow = oracle::region_rate_table(scenario, alloc.region_of(u), oracle_role(scenario, alloc, u)?);
        for (a, b) in fast.iter().zip(&slow) {
            finite &= a.is_finite() && *a > 0.0;
            worst = worst.max((a - b).abs() / b.abs().max(f64::MIN_POSITIVE));
        }
    }
    report.push("channel-finite", finite, "every assigned cell has a positive finite rate");
    report.push(
        "channel-oracle",
        worst <= 1e-12,
        format!("max relative gap {worst:.3e} against the oracle rates"),
    );
    Ok(())
}

fn check_best_cells(
    report: &mut Report,
    scenario: &Scenario,
    alloc: &Allocation,
    config: &ExperimentConfig,
) -> Result<()> {
    let grid = scenario.grid();
    if grid.states_per_region() > oracle::VALUE_ITERATION_MAX_STATES {
        report.skip("best-cell-oracle", "regions exceed the value-iteration guard");
        return Ok(());
    }
    let shape = grid.shape();
    let mut disagreements = Vec::new();
    for u in 0..scenario.uav_count() {
        let region = alloc.region_of(u);
        let role = oracle_role(scenario, alloc, u)?;
        let (best, _) = oracle::best_cell(scenario, region, role)?;
        let rates = oracle::region_rate_table(scenario, region, role);
        let vi = oracle::value_iteration(&rates, shape.width, shape.height, &config.learning, 1e-10, 100_000)?;
        let rest = vi.resting_cell(shape.center());
        if rest != Some(grid.global_to_local(region, best)?) {
            disagreements.push(u);
        }
    }
    report.push(
        "best-cell-oracle",
        disagreements.is_empty(),
        if disagreements.is_empty() {
            "value iteration rests at the best cell for every UAV".to_string()
        } else {
            format!("UAVs {disagreements:?} rest elsewhere")
        },
    );
    Ok(())
}

/// Greedy absorbing cell per UAV, in global cell ids, for a set of Q-tables.
pub fn greedy_resting_cells(scenario: &Scenario, alloc: &Allocation, qtables: &[QTable]) -> Result<Vec<Option<usize>>> {
    let grid = scenario.grid();
    let shape = grid.shape();
    (0..scenario.uav_count())
        .map(|u| {
            learner::greedy_absorbing_cell(&qtables[u], shape, shape.center())
                .map(|c| grid.local_to_global(alloc.region_of(u), c))
                .transpose()
        })
        .collect()
}
