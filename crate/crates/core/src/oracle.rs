//! Brute-force reference solvers used to check the fast paths: exhaustive
//! best cell, value iteration on a region, exhaustive relay choice, and the
//! sensing contest replayed under every processing order.
//!
//! Everything here recomputes geometry and rates from raw coordinates rather
//! than calling into `channel` or `allocator`.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::learner::LearningParams;
use crate::scenario::{CellId, Position3D, RegionId, Scenario, UavId};

/// Largest region (in cells) value iteration will accept.
pub const VALUE_ITERATION_MAX_STATES: usize = 81;
/// Largest sensing fleet the exhaustive contest will enumerate.
pub const MATCHING_MAX_UAVS: usize = 7;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OracleRole {
    Relay,
    Sensing { lambda: f64 },
}

fn gain(a: Position3D, b: Position3D, n: f64) -> f64 {
    let d2 = (a.x - b.x).powi(2) + (a.y - b.y).powi(2) + (a.z - b.z).powi(2);
    d2.sqrt().powf(-n)
}

fn cell_position(scenario: &Scenario, cell: CellId) -> Position3D {
    let g = scenario.grid();
    let (x, y) = (cell % g.length_l1, cell / g.length_l1);
    Position3D::new(
        x as f64 * g.cell_pitch,
        y as f64 * g.cell_pitch,
        g.uav_altitude,
    )
}

/// Rate a UAV in `role` would get at global `cell`.
pub fn oracle_rate(scenario: &Scenario, cell: CellId, role: OracleRole) -> f64 {
    let p = scenario.phys();
    let nodes = scenario.nodes();
    let pos = cell_position(scenario, cell);
    let n = p.path_loss_exponent;
    match role {
        OracleRole::Relay => {
            // No direct PT-PR term: the primary link is assumed fully blocked.
            let snr_in = p.p_pt * gain(nodes.primary_tx, pos, n) / p.noise_power;
            let snr_out = p.p_uav * gain(pos, nodes.primary_rx, n) / p.noise_power;
            0.5 * (1.0 + snr_in * snr_out / (1.0 + snr_in + snr_out)).log2()
        }
        OracleRole::Sensing { lambda } => {
            let snr = p.p_uav * gain(pos, nodes.emergency_center, n) / p.noise_power;
            0.5 * lambda * (1.0 + snr).log2()
        }
    }
}

fn region_cells(scenario: &Scenario, region: RegionId) -> Vec<CellId> {
    let g = scenario.grid();
    let per_row = g.length_l1 / g.region_r1;
    let (ox, oy) = ((region % per_row) * g.region_r1, (region / per_row) * g.region_r2);
    let mut cells = Vec::with_capacity(g.region_r1 * g.region_r2);
    for dy in 0..g.region_r2 {
        for dx in 0..g.region_r1 {
            cells.push((oy + dy) * g.length_l1 + ox + dx);
        }
    }
    cells
}

/// Exhaustive argmax of the rate over a region's cells; ties go to the lowest
/// global cell id.
pub fn best_cell(scenario: &Scenario, region: RegionId, role: OracleRole) -> Result<(CellId, f64)> {
    if region >= scenario.grid().region_count() {
        return Err(Error::OutOfRange {
            what: "region",
            index: region,
            limit: scenario.grid().region_count(),
        });
    }
    let mut best: Option<(CellId, f64)> = None;
    for cell in region_cells(scenario, region) {
        let r = oracle_rate(scenario, cell, role);
        if best.is_none_or(|(_, b)| r > b) {
            best = Some((cell, r));
        }
    }
    Ok(best.expect("regions are non-empty"))
}

/// Optimal action values for one region.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimalValues {
    pub width: usize,
    pub height: usize,
    /// `q[s][a]`, `NEG_INFINITY` for illegal actions.
    pub q: Vec<[f64; 5]>,
    pub sweeps: usize,
}

impl OptimalValues {
    pub fn value(&self, s: usize) -> f64 {
        self.q[s].iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Greedy walk from `start` until the policy stays; `None` on a cycle.
    pub fn resting_cell(&self, start: usize) -> Option<usize> {
        let mut s = start;
        for _ in 0..=self.q.len() {
            let best = self.value(s);
            if self.q[s][4] == best {
                return Some(s);
            }
            let a = (0..4).find(|&a| self.q[s][a] == best)?;
            s = self.neighbour(s, a)?;
        }
        None
    }

    fn neighbour(&self, s: usize, a: usize) -> Option<usize> {
        let (x, y) = (s % self.width, s / self.width);
        match a {
            0 if y > 0 => Some(s - self.width),
            1 if y + 1 < self.height => Some(s + self.width),
            2 if x > 0 => Some(s - 1),
            3 if x + 1 < self.width => Some(s + 1),
            4 => Some(s),
            _ => None,
        }
    }
}

/// Value iteration on the deterministic single-agent region MDP where the
/// state is the local cell and the reward compares the rate at the new cell
/// with the rate at the current one.
pub fn value_iteration(
    rates: &[f64],
    width: usize,
    height: usize,
    params: &LearningParams,
    tol: f64,
    max_sweeps: usize,
) -> Result<OptimalValues> {
    let states = width * height;
    if states > VALUE_ITERATION_MAX_STATES {
        return Err(Error::GuardExceeded(format!(
            "value iteration limited to {VALUE_ITERATION_MAX_STATES} states, got {states}"
        )));
    }
    if rates.len() != states {
        return Err(Error::ShapeMismatch(format!("{} rates for {states} cells", rates.len())));
    }
    let mut out = OptimalValues {
        width,
        height,
        q: vec![[f64::NEG_INFINITY; 5]; states],
        sweeps: 0,
    };
    let mut v = vec![0.0; states];
    for sweep in 1..=max_sweeps {
        let mut delta: f64 = 0.0;
        for s in 0..states {
            for a in 0..5 {
                let Some(next) = out.neighbour(s, a) else { continue };
                let r = if a == 4 {
                    params.beta2
                } else if rates[next] - rates[s] > 1e-9 * rates[next].abs().max(rates[s].abs()) {
                    params.beta1
                } else {
                    params.beta3
                };
                out.q[s][a] = r + params.gamma * v[next];
            }
        }
        for (s, vs) in v.iter_mut().enumerate() {
            let nv = out.value(s);
            delta = delta.max((nv - *vs).abs());
            *vs = nv;
        }
        if delta < tol {
            out.sweeps = sweep;
            return Ok(out);
        }
    }
    Err(Error::NonConvergence { sweeps: max_sweeps })
}

/// Local-cell rate table for a region computed from raw coordinates.
pub fn region_rate_table(scenario: &Scenario, region: RegionId, role: OracleRole) -> Vec<f64> {
    region_cells(scenario, region)
        .into_iter()
        .map(|c| oracle_rate(scenario, c, role))
        .collect()
}

fn hops(scenario: &Scenario, from: CellId, region: RegionId) -> usize {
    let g = scenario.grid();
    let per_row = g.length_l1 / g.region_r1;
    let cx = (region % per_row) * g.region_r1 + g.region_r1 / 2;
    let cy = (region / per_row) * g.region_r2 + g.region_r2 / 2;
    let (x, y) = (from % g.length_l1, from / g.length_l1);
    x.abs_diff(cx) + y.abs_diff(cy)
}

fn residual(scenario: &Scenario, uav: UavId, region: RegionId) -> f64 {
    scenario.initial_energy(uav)
        - hops(scenario, scenario.initial_cell(uav), region) as f64 * scenario.phys().psi_move
}

/// Relay by full scan: every UAV scored, best score, then larger initial
/// energy, then lower index.
pub fn exhaustive_relay(scenario: &Scenario, primary: RegionId) -> (UavId, f64) {
    let mut scored: Vec<(UavId, f64)> = (0..scenario.uav_count())
        .map(|u| (u, residual(scenario, u, primary)))
        .collect();
    scored.sort_by(|a, b| {
        b.1.total_cmp(&a.1)
            .then(scenario.initial_energy(b.0).total_cmp(&scenario.initial_energy(a.0)))
            .then(a.0.cmp(&b.0))
    });
    scored[0]
}

/// The contest with claims inside each round handled one at a time in the
/// order `order` (positions into `uavs`); a later claimant displaces the
/// tentative holder only if it has strictly more residual energy for the
/// region, or equal residual and strictly more initial energy, or both equal
/// and a lower index.
pub fn replay_contest(
    scenario: &Scenario,
    uavs: &[UavId],
    regions: &[RegionId],
    order: &[usize],
) -> Option<BTreeMap<UavId, RegionId>> {
    let mut closed: Vec<RegionId> = Vec::new();
    let mut result = BTreeMap::new();
    while result.len() < uavs.len() {
        let mut holders: BTreeMap<RegionId, UavId> = BTreeMap::new();
        for &k in order {
            let u = uavs[k];
            if result.contains_key(&u) {
                continue;
            }
            let choice = regions
                .iter()
                .copied()
                .filter(|r| !closed.contains(r))
                .map(|r| (r, residual(scenario, u, r)))
                .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)))?
                .0;
            let take = match holders.get(&choice) {
                None => true,
                Some(&h) => {
                    let (gu, gh) = (residual(scenario, u, choice), residual(scenario, h, choice));
                    let (eu, eh) = (scenario.initial_energy(u), scenario.initial_energy(h));
                    gu > gh || (gu == gh && (eu > eh || (eu == eh && u < h)))
                }
            };
            if take {
                holders.insert(choice, u);
            }
        }
        for (r, u) in holders {
            closed.push(r);
            result.insert(u, r);
        }
    }
    Some(result)
}

/// Replays the contest under every processing order and requires a single
/// outcome, which must be a bijection onto distinct regions.
pub fn exhaustive_matching(
    scenario: &Scenario,
    uavs: &[UavId],
    regions: &[RegionId],
) -> Result<BTreeMap<UavId, RegionId>> {
    if uavs.len() > MATCHING_MAX_UAVS {
        return Err(Error::GuardExceeded(format!(
            "exhaustive matching limited to {MATCHING_MAX_UAVS} UAVs, got {}",
            uavs.len()
        )));
    }
    let mut order: Vec<usize> = (0..uavs.len()).collect();
    let mut outcome: Option<BTreeMap<UavId, RegionId>> = None;
    loop {
        let m = replay_contest(scenario, uavs, regions, &order)
            .ok_or_else(|| Error::Infeasible("fewer regions than UAVs".into()))?;
        match &outcome {
            None => outcome = Some(m),
            Some(prev) if *prev != m => {
                return Err(Error::Infeasible(format!(
                    "contest outcome depends on processing order: {prev:?} vs {m:?}"
                )))
            }
            Some(_) => {}
        }
        if !next_permutation(&mut order) {
            break;
        }
    }
    let m = outcome.expect("at least one order");
    let mut used: Vec<RegionId> = m.values().copied().collect();
    used.sort_unstable();
    used.dedup();
    if used.len() != uavs.len() {
        return Err(Error::Infeasible("contest outcome is not injective".into()));
    }
    Ok(m)
}

fn next_permutation(v: &mut [usize]) -> bool {
    let Some(i) = (1..v.len()).rev().find(|&i| v[i - 1] < v[i]) else {
        return false;
    };
    let j = (i..v.len()).rev().find(|&j| v[j] > v[i - 1]).expect("pivot has a successor");
    v.swap(i - 1, j);
    v[i..].reverse();
    true
}
