//! Scenario builders shared by the integration tests.

#![allow(dead_code)]

use skyshare::scenario::CellId;
use skyshare::{
    build_scenario, random_scenario, GridSpec, NodeSet, PhysicalParams, Position3D, PriorityMap,
    Scenario, ScenarioTemplate,
};

pub fn ground(x: f64, y: f64) -> Position3D {
    Position3D::new(x, y, 0.0)
}

pub fn scenario(
    grid: GridSpec,
    cells: Vec<CellId>,
    energy: Vec<f64>,
    pt: Position3D,
    pr: Position3D,
    ec: Position3D,
    weights: Vec<f64>,
) -> Scenario {
    build_scenario(
        grid,
        NodeSet {
            primary_tx: pt,
            primary_rx: pr,
            emergency_center: ec,
            uav_initial_cells: cells,
            uav_initial_energy: energy,
        },
        PhysicalParams::default(),
        PriorityMap { weights },
    )
    .unwrap()
}

/// Five UAVs on a 9x9 grid of 3x3 regions.
pub fn random_9x9(seed: u64) -> Scenario {
    random_scenario(seed, &ScenarioTemplate::new(GridSpec::new(9, 9, 3, 3), 5)).unwrap()
}

/// `random_9x9` with every UAV already parked on the center of the region the
/// allocator will give it, holding `energy` joules.
pub fn parked_9x9(seed: u64, energy: f64) -> Scenario {
    let base = random_9x9(seed);
    let grid = *base.grid();
    let primary = grid.closest_region(base.nodes().primary_rx);
    let mut regions = vec![primary];
    regions.extend(base.priorities().ranked());
    let cells = regions
        .iter()
        .take(base.uav_count())
        .map(|&r| grid.region_center(r).unwrap())
        .collect();
    let mut nodes = base.nodes().clone();
    nodes.uav_initial_cells = cells;
    nodes.uav_initial_energy = vec![energy; base.uav_count()];
    base.with_nodes(nodes).unwrap()
}
