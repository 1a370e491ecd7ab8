mod common;

use common::{ground, scenario};
use skyshare::allocator::{
    contest, hops_to_region, preference_list, prioritized_regions, select_primary_region, select_relay_uav,
};
use skyshare::engine::{self, RunConfig, ScenarioChange};
use skyshare::oracle::{exhaustive_matching, exhaustive_relay};
use skyshare::{allocate, Error, GridSpec, LearningParams, Position3D, Role};

#[test]
fn relay_example_prefers_residual_energy() {
    // Region 0 is centered on (4, 4); UAV 0 sits 10 hops away, UAV 1 two.
    let s = scenario(
        GridSpec::new(27, 27, 9, 9),
        vec![4 * 27 + 14, 4 * 27 + 6],
        vec![5000.0, 4500.0],
        ground(20.0, 20.0),
        ground(4.0, 4.0),
        Position3D::new(13.0, 13.0, 20.0),
        [vec![0.0, 1.0], vec![0.0; 7]].concat(),
    );
    assert_eq!(select_primary_region(&s), 0);
    assert_eq!(hops_to_region(&s, 0, 0).unwrap(), 10);
    assert_eq!(hops_to_region(&s, 1, 0).unwrap(), 2);
    assert_eq!(select_relay_uav(&s, 0).unwrap(), (0, 4900.0));
    assert_eq!(exhaustive_relay(&s, 0), (0, 4900.0));

    let a = allocate(&s).unwrap();
    assert_eq!(a.relay_uav, 0);
    assert_eq!(a.sensing_assignment[&1], 1);
    assert_eq!(a.post_flight_energy, vec![4900.0, 4500.0 - 70.0]);
}

#[test]
fn preference_example() {
    // From (2, 2): region 0 is 2 hops, region 1 is 3, region 5 is 7.
    let s = scenario(
        GridSpec::new(9, 9, 3, 3),
        vec![2 * 9 + 2, 80],
        vec![4500.0, 4500.0],
        ground(0.0, 8.0),
        ground(8.0, 8.0),
        Position3D::new(4.0, 4.0, 20.0),
        vec![1.0, 2.0, 0.0, 0.0, 0.0, 3.0, 0.0, 0.0, 0.0],
    );
    assert_eq!(preference_list(0, &s, &[1, 5, 0]).unwrap(), vec![0, 1, 5]);
    let g: Vec<f64> = [0, 1, 5]
        .iter()
        .map(|&r| skyshare::allocator::residual_energy(&s, 0, r).unwrap())
        .collect();
    assert_eq!(g, vec![4480.0, 4470.0, 4430.0]);
}

#[test]
fn contest_goes_to_larger_residual() {
    // Both UAVs are two hops from region 4; UAV 1 holds more energy.
    let s = scenario(
        GridSpec::new(9, 9, 3, 3),
        vec![2 * 9 + 4, 6 * 9 + 4],
        vec![4500.0, 5000.0],
        ground(0.0, 8.0),
        ground(8.0, 8.0),
        Position3D::new(4.0, 4.0, 20.0),
        vec![1.0, 0.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0, 0.0],
    );
    let (m, rounds) = contest(&s, &[0, 1], &[4, 0]).unwrap();
    assert_eq!(m[&1], 4);
    assert_eq!(m[&0], 0);
    assert_eq!(rounds, 2);
    assert_eq!(exhaustive_matching(&s, &[0, 1], &[4, 0]).unwrap(), m);
}

#[test]
fn contest_agrees_with_exhaustive_matching() {
    for seed in 0..300 {
        let s = common::random_9x9(seed);
        let a = allocate(&s).unwrap();
        let primary = select_primary_region(&s);
        assert_eq!(a.primary_region, primary);
        assert_eq!(a.relay_uav, exhaustive_relay(&s, primary).0, "seed {seed}");
        let sensing: Vec<usize> = (0..5).filter(|&u| u != a.relay_uav).collect();
        let regions = prioritized_regions(&s, primary).unwrap();
        assert_eq!(regions.len(), 4);
        let oracle = exhaustive_matching(&s, &sensing, &regions).unwrap();
        assert_eq!(a.sensing_assignment, oracle, "seed {seed}");
    }
}

#[test]
fn flights_conserve_energy() {
    for seed in 0..100 {
        let s = common::random_9x9(seed);
        let a = allocate(&s).unwrap();
        for u in 0..s.uav_count() {
            let region = a.region_of(u);
            let (cx, cy) = ((region % 3) * 3 + 1, (region / 3) * 3 + 1);
            let cell = s.initial_cell(u);
            let hops = (cell % 9).abs_diff(cx) + (cell / 9).abs_diff(cy);
            assert_eq!(a.flight_hops[u], hops);
            assert_eq!(a.post_flight_energy[u], s.initial_energy(u) - 10.0 * hops as f64);
            assert!(a.post_flight_energy[u] >= 0.0);
        }
        let roles: Vec<Role> = (0..5).map(|u| a.role(u)).collect();
        assert_eq!(roles.iter().filter(|r| **r == Role::Relay).count(), 1);
    }
}

#[test]
fn unreachable_primary_is_infeasible() {
    let s = scenario(
        GridSpec::new(9, 9, 3, 3),
        vec![80, 79],
        vec![50.0, 50.0],
        ground(8.0, 0.0),
        ground(0.0, 0.0),
        Position3D::new(4.0, 4.0, 20.0),
        vec![0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0],
    );
    assert!(matches!(allocate(&s), Err(Error::Infeasible(_))));
}

fn moved_receiver_config(seed: u64, threshold: f64) -> (skyshare::Scenario, RunConfig, usize) {
    let s = common::random_9x9(seed);
    let primary = select_primary_region(&s);
    let target = (0..9)
        .find(|&r| r != primary && s.priorities().weight(r) == 0.0)
        .unwrap();
    let center = s.grid().region_center(target).unwrap();
    let (x, y) = s.grid().cell_xy(center).unwrap();
    let mut cfg = RunConfig::new(1, 25, 20);
    cfg.master_seed = seed;
    cfg.dynamicity_threshold = threshold;
    cfg.schedule = vec![ScenarioChange {
        episode: 20,
        level: 1.0,
        primary_tx: None,
        primary_rx: Some(ground(x as f64, y as f64)),
        emergency_center: None,
    }];
    (s, cfg, target)
}

#[test]
fn receiver_move_above_threshold_reallocates_once() {
    for seed in 0..10 {
        let (s, cfg, target) = moved_receiver_config(seed, 0.0);
        let out = engine::run(&s, &cfg, &LearningParams::default()).unwrap();
        assert_eq!(out.reallocations.len(), 1);
        let r = &out.reallocations[0];
        assert_eq!(r.episode, 20);
        assert_eq!(r.allocation.primary_region, target);
        assert_eq!(r.allocation.relay_uav, exhaustive_relay(&r.scenario, target).0);
        assert_eq!(out.metrics.get(0, 19, out.allocation.relay_uav).role, Role::Relay);
        assert_eq!(out.metrics.get(0, 20, r.allocation.relay_uav).role, Role::Relay);
        assert_eq!(out.metrics.get(0, 20, r.allocation.relay_uav).region, target);
    }
}

#[test]
fn infinite_threshold_never_reallocates() {
    let (s, cfg, _) = moved_receiver_config(3, f64::INFINITY);
    let out = engine::run(&s, &cfg, &LearningParams::default()).unwrap();
    assert!(out.reallocations.is_empty());
    let relay = out.allocation.relay_uav;
    assert_eq!(out.metrics.get(0, 24, relay).region, out.allocation.primary_region);
}
