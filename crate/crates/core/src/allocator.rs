//! Emergency-center stage: primary region choice, relay selection and the
//! preference-list contest that places sensing UAVs on prioritized regions.
//!
//! Flight distances are Manhattan hop counts from a UAV's initial cell to the
//! center cell of the target region; a flight costs `hops * psi_move` joules.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::scenario::{RegionId, Scenario, UavId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Relay,
    Sensing,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Relay => "relay",
            Role::Sensing => "sensing",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Allocation {
    pub primary_region: RegionId,
    pub relay_uav: UavId,
    pub sensing_assignment: BTreeMap<UavId, RegionId>,
    pub post_flight_energy: Vec<f64>,
    pub flight_hops: Vec<usize>,
}

/// One line of the allocation log.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UavAllocation {
    pub uav: UavId,
    pub role: Role,
    pub region: RegionId,
    pub hops: usize,
    pub initial_energy: f64,
    pub post_flight_energy: f64,
}

impl Allocation {
    /// Builds the allocation for a fixed relay/region map and charges the
    /// flights. Fails if any UAV cannot afford its flight.
    pub fn charge_flights(
        scenario: &Scenario,
        primary_region: RegionId,
        relay_uav: UavId,
        sensing_assignment: BTreeMap<UavId, RegionId>,
    ) -> Result<Allocation> {
        let n = scenario.uav_count();
        let psi = scenario.phys().psi_move;
        let mut flight_hops = vec![0; n];
        let mut post_flight_energy = vec![0.0; n];
        for uav in 0..n {
            let region = if uav == relay_uav {
                primary_region
            } else {
                *sensing_assignment.get(&uav).ok_or_else(|| {
                    Error::Infeasible(format!("UAV {uav} has neither a relay nor a sensing role"))
                })?
            };
            let hops = hops_to_region(scenario, uav, region)?;
            let left = scenario.initial_energy(uav) - hops as f64 * psi;
            if left < 0.0 {
                return Err(Error::Infeasible(format!(
                    "UAV {uav} needs {} J to reach region {region} but holds {} J",
                    hops as f64 * psi,
                    scenario.initial_energy(uav)
                )));
            }
            flight_hops[uav] = hops;
            post_flight_energy[uav] = left;
        }
        let alloc = Allocation {
            primary_region,
            relay_uav,
            sensing_assignment,
            post_flight_energy,
            flight_hops,
        };
        alloc.validate(scenario)?;
        Ok(alloc)
    }

    pub fn region_of(&self, uav: UavId) -> RegionId {
        if uav == self.relay_uav {
            self.primary_region
        } else {
            self.sensing_assignment[&uav]
        }
    }

    pub fn role(&self, uav: UavId) -> Role {
        if uav == self.relay_uav {
            Role::Relay
        } else {
            Role::Sensing
        }
    }

    pub fn records(&self, scenario: &Scenario) -> Vec<UavAllocation> {
        (0..self.post_flight_energy.len())
            .map(|uav| UavAllocation {
                uav,
                role: self.role(uav),
                region: self.region_of(uav),
                hops: self.flight_hops[uav],
                initial_energy: scenario.initial_energy(uav),
                post_flight_energy: self.post_flight_energy[uav],
            })
            .collect()
    }

    /// Structural invariants: one UAV per region, relay excluded from the
    /// sensing map, energies consistent with the charged hops.
    pub fn validate(&self, scenario: &Scenario) -> Result<()> {
        let n = scenario.uav_count();
        if self.sensing_assignment.contains_key(&self.relay_uav) {
            return Err(Error::Infeasible("relay also holds a sensing region".into()));
        }
        if self.sensing_assignment.len() != n - 1 {
            return Err(Error::Infeasible(format!(
                "{} sensing UAVs assigned, expected {}",
                self.sensing_assignment.len(),
                n - 1
            )));
        }
        let regions: BTreeSet<RegionId> = self.sensing_assignment.values().copied().collect();
        if regions.len() != n - 1 || regions.contains(&self.primary_region) {
            return Err(Error::Infeasible("sensing regions must be distinct and exclude the primary region".into()));
        }
        let psi = scenario.phys().psi_move;
        for uav in 0..n {
            let expected = scenario.initial_energy(uav) - self.flight_hops[uav] as f64 * psi;
            if self.post_flight_energy[uav] != expected || expected < 0.0 {
                return Err(Error::Infeasible(format!("energy ledger broken for UAV {uav}")));
            }
        }
        Ok(())
    }
}

pub fn hops_to_region(scenario: &Scenario, uav: UavId, region: RegionId) -> Result<usize> {
    let grid = scenario.grid();
    grid.manhattan(scenario.initial_cell(uav), grid.region_center(region)?)
}

/// Residual energy after flying to `region`: `E - d * psi_move`.
pub fn residual_energy(scenario: &Scenario, uav: UavId, region: RegionId) -> Result<f64> {
    Ok(scenario.initial_energy(uav) - hops_to_region(scenario, uav, region)? as f64 * scenario.phys().psi_move)
}

/// Region whose center is nearest the primary receiver.
pub fn select_primary_region(scenario: &Scenario) -> RegionId {
    scenario.grid().closest_region(scenario.nodes().primary_rx)
}

/// Argmax of `E(u) - d(u) * psi_move` toward the primary region's center.
/// Ties prefer the larger initial energy, then the lower index.
pub fn select_relay_uav(scenario: &Scenario, primary_region: RegionId) -> Result<(UavId, f64)> {
    if scenario.uav_count() < 2 {
        return Err(Error::Infeasible("relay selection needs at least two UAVs".into()));
    }
    let mut best: Option<(UavId, f64)> = None;
    for uav in 0..scenario.uav_count() {
        let score = residual_energy(scenario, uav, primary_region)?;
        let better = match best {
            None => true,
            Some((b, bs)) => match score.total_cmp(&bs) {
                Ordering::Greater => true,
                Ordering::Equal => scenario.initial_energy(uav) > scenario.initial_energy(b),
                Ordering::Less => false,
            },
        };
        if better {
            best = Some((uav, score));
        }
    }
    let (uav, score) = best.expect("at least two UAVs");
    if score < 0.0 {
        return Err(Error::Infeasible(format!(
            "no UAV can reach primary region {primary_region} (best residual {score} J)"
        )));
    }
    Ok((uav, score))
}

/// Regions sorted by descending residual energy for `uav`; ties to lower id.
pub fn preference_list(uav: UavId, scenario: &Scenario, regions: &[RegionId]) -> Result<Vec<RegionId>> {
    let mut scored = regions
        .iter()
        .map(|&r| residual_energy(scenario, uav, r).map(|g| (r, g)))
        .collect::<Result<Vec<_>>>()?;
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(scored.into_iter().map(|(r, _)| r).collect())
}

/// The `n - 1` heaviest prioritized regions other than `exclude`.
pub fn prioritized_regions(scenario: &Scenario, exclude: RegionId) -> Result<Vec<RegionId>> {
    let need = scenario.uav_count() - 1;
    let ranked: Vec<RegionId> = scenario
        .priorities()
        .ranked()
        .into_iter()
        .filter(|&r| r != exclude)
        .take(need)
        .collect();
    if ranked.len() < need {
        return Err(Error::Infeasible(format!(
            "{} prioritized regions besides region {exclude}, {need} needed",
            ranked.len()
        )));
    }
    Ok(ranked)
}

/// Places the non-relay UAVs on the prioritized regions (primary excluded).
pub fn assign_sensing(scenario: &Scenario, relay: UavId, primary_region: RegionId) -> Result<Allocation> {
    let regions = prioritized_regions(scenario, primary_region)?;
    assign_sensing_to(scenario, relay, primary_region, &regions)
}

/// Contest over an explicit region set.
pub fn assign_sensing_to(
    scenario: &Scenario,
    relay: UavId,
    primary_region: RegionId,
    regions: &[RegionId],
) -> Result<Allocation> {
    let sensing: Vec<UavId> = (0..scenario.uav_count()).filter(|&u| u != relay).collect();
    if regions.len() < sensing.len() || regions.contains(&primary_region) {
        return Err(Error::Infeasible(format!(
            "{} candidate regions (primary excluded) for {} sensing UAVs",
            regions.iter().filter(|&&r| r != primary_region).count(),
            sensing.len()
        )));
    }
    let assignment = contest(scenario, &sensing, regions)?.0;
    Allocation::charge_flights(scenario, primary_region, relay, assignment)
}

/// Round-based contest. Every unassigned UAV claims its best region that is
/// still free; each claimed region goes to the claimant with the most residual
/// energy for it (then larger initial energy, then lower index) and is closed.
/// Returns the matching and the number of rounds.
pub fn contest(
    scenario: &Scenario,
    uavs: &[UavId],
    regions: &[RegionId],
) -> Result<(BTreeMap<UavId, RegionId>, usize)> {
    let prefs = uavs
        .iter()
        .map(|&u| preference_list(u, scenario, regions))
        .collect::<Result<Vec<_>>>()?;
    let mut cursor = vec![0usize; uavs.len()];
    let mut taken = BTreeSet::new();
    let mut assignment = BTreeMap::new();
    let mut pending: Vec<usize> = (0..uavs.len()).collect();
    let mut rounds = 0;

    while !pending.is_empty() {
        rounds += 1;
        let mut claims: BTreeMap<RegionId, Vec<usize>> = BTreeMap::new();
        for &k in &pending {
            while cursor[k] < prefs[k].len() && taken.contains(&prefs[k][cursor[k]]) {
                cursor[k] += 1;
            }
            let region = *prefs[k].get(cursor[k]).ok_or_else(|| {
                Error::Infeasible(format!("UAV {} ran out of regions", uavs[k]))
            })?;
            claims.entry(region).or_default().push(k);
        }
        for (region, claimants) in claims {
            let mut winner = claimants[0];
            for &k in &claimants[1..] {
                if beats(scenario, uavs[k], uavs[winner], region)? {
                    winner = k;
                }
            }
            taken.insert(region);
            assignment.insert(uavs[winner], region);
        }
        pending.retain(|k| !assignment.contains_key(&uavs[*k]));
    }
    Ok((assignment, rounds))
}

fn beats(scenario: &Scenario, a: UavId, b: UavId, region: RegionId) -> Result<bool> {
    let (ga, gb) = (residual_energy(scenario, a, region)?, residual_energy(scenario, b, region)?);
    Ok(match ga.total_cmp(&gb) {
        Ordering::Greater => true,
        Ordering::Less => false,
        Ordering::Equal => match scenario.initial_energy(a).total_cmp(&scenario.initial_energy(b)) {
            Ordering::Greater => true,
            Ordering::Less => false,
            Ordering::Equal => a < b,
        },
    })
}

/// Full emergency-center pipeline: primary region, relay, sensing contest.
pub fn allocate(scenario: &Scenario) -> Result<Allocation> {
    let primary = select_primary_region(scenario);
    let (relay, _) = select_relay_uav(scenario, primary)?;
    assign_sensing(scenario, relay, primary)
}
