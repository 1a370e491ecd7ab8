//! Deterministic line-of-sight link gains and the three throughput quantities:
//! amplify-and-forward primary rate, per-UAV sensing rate, and the sensing sum
//! at the emergency center. Rates are spectral efficiencies (bits/s/Hz) with
//! the half-duplex factor of one half kept inside each formula.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::scenario::{PriorityMap, Position3D, RegionId, Scenario, UavId};

/// Power gain `|h|^2` of a link.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct LinkGain(f64);

impl LinkGain {
    pub const ZERO: LinkGain = LinkGain(0.0);

    pub fn value(self) -> f64 {
        self.0
    }
}

/// Link endpoint, either a fixed node of the scenario or an arbitrary point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Endpoint {
    PrimaryTx,
    PrimaryRx,
    EmergencyCenter,
    At(Position3D),
}

/// Unit-reference LoS gain `d^-n`.
pub fn los_gain(a: Position3D, b: Position3D, path_loss_exponent: f64) -> Result<LinkGain> {
    let d = a.distance(&b);
    if d == 0.0 {
        return Err(Error::Singularity("zero-length link"));
    }
    Ok(LinkGain(d.powf(-path_loss_exponent)))
}

/// Gain between two endpoints of `scenario`. The direct primary link is
/// treated as absent.
pub fn link_gain(scenario: &Scenario, a: Endpoint, b: Endpoint) -> Result<LinkGain> {
    use Endpoint::*;
    if matches!((a, b), (PrimaryTx, PrimaryRx) | (PrimaryRx, PrimaryTx)) {
        return Ok(LinkGain::ZERO);
    }
    los_gain(position(scenario, a), position(scenario, b), scenario.phys().path_loss_exponent)
}

fn position(scenario: &Scenario, e: Endpoint) -> Position3D {
    let nodes = scenario.nodes();
    match e {
        Endpoint::PrimaryTx => nodes.primary_tx,
        Endpoint::PrimaryRx => nodes.primary_rx,
        Endpoint::EmergencyCenter => nodes.emergency_center,
        Endpoint::At(p) => p,
    }
}

/// AF relay rate from received powers: `a = P_PT |h_PT,U|^2`,
/// `b = P_U |h_U,PR|^2`, `direct = P_PT |h_PT,PR|^2`.
///
/// Every power is taken relative to the noise floor, so the relayed term is
/// `ab / (noise (noise + a + b))`. With unit noise this is the textbook
/// `ab / (1 + a + b)`; with raw watts and a nanowatt floor, leaving the
/// powers unnormalized would put the relay link at ~1e-5 bits/s/Hz.
pub fn af_rate(direct: f64, a: f64, b: f64, noise: f64) -> f64 {
    let (d, a, b) = (direct / noise, a / noise, b / noise);
    0.5 * (1.0 + d + a * b / (1.0 + a + b)).log2()
}

pub fn primary_rate(relay_pos: Position3D, scenario: &Scenario) -> Result<f64> {
    let phys = scenario.phys();
    let relay = Endpoint::At(relay_pos);
    let h_direct = link_gain(scenario, Endpoint::PrimaryTx, Endpoint::PrimaryRx)?;
    let h_in = link_gain(scenario, Endpoint::PrimaryTx, relay)
        .map_err(|_| Error::Singularity("relay coincides with the primary transmitter"))?;
    let h_out = link_gain(scenario, relay, Endpoint::PrimaryRx)
        .map_err(|_| Error::Singularity("relay coincides with the primary receiver"))?;
    Ok(af_rate(
        phys.p_pt * h_direct.value(),
        phys.p_pt * h_in.value(),
        phys.p_uav * h_out.value(),
        phys.noise_power,
    ))
}

pub fn sensing_rate(uav_pos: Position3D, lambda: f64, scenario: &Scenario) -> Result<f64> {
    if !(lambda > 0.0 && lambda <= 1.0) {
        return Err(Error::invalid("lambda", format!("must lie in (0, 1], got {lambda}")));
    }
    let phys = scenario.phys();
    let h = link_gain(scenario, Endpoint::At(uav_pos), Endpoint::EmergencyCenter)
        .map_err(|_| Error::Singularity("UAV coincides with the emergency center"))?;
    Ok(lambda / 2.0 * (1.0 + phys.p_uav * h.value() / phys.noise_power).log2())
}

/// Time shares of the sensing half-slot, keyed by UAV.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeAllocation {
    shares: BTreeMap<UavId, f64>,
}

impl TimeAllocation {
    pub fn new(shares: BTreeMap<UavId, f64>) -> Result<Self> {
        if let Some((_, l)) = shares.iter().find(|(_, l)| !(**l > 0.0 && **l <= 1.0)) {
            return Err(Error::invalid("lambda", format!("share {l} outside (0, 1]")));
        }
        let total: f64 = shares.values().sum();
        if total > 1.0 + 1e-12 {
            return Err(Error::invalid("lambda", format!("shares sum to {total} > 1")));
        }
        Ok(TimeAllocation { shares })
    }

    /// Shares proportional to the priority weights of the assigned regions.
    /// When any assigned region carries no weight the slot is split evenly.
    pub fn from_priorities(
        assignment: &BTreeMap<UavId, RegionId>,
        prio: &PriorityMap,
    ) -> Result<Self> {
        let weights: Vec<f64> = assignment.values().map(|&r| prio.weight(r)).collect();
        let total: f64 = weights.iter().sum();
        let even = weights.iter().any(|&w| w <= 0.0);
        let shares = assignment
            .keys()
            .zip(&weights)
            .map(|(&u, &w)| {
                let share = if even {
                    1.0 / assignment.len() as f64
                } else {
                    w / total
                };
                (u, share)
            })
            .collect();
        TimeAllocation::new(shares)
    }

    pub fn share(&self, uav: UavId) -> Option<f64> {
        self.shares.get(&uav).copied()
    }

    pub fn shares(&self) -> &BTreeMap<UavId, f64> {
        &self.shares
    }
}

/// Sum of sensing rates over the sensing set.
pub fn total_sensing_rate(
    positions: &BTreeMap<UavId, Position3D>,
    alloc: &TimeAllocation,
    scenario: &Scenario,
) -> Result<f64> {
    if positions.len() != alloc.shares.len() || positions.keys().any(|u| !alloc.shares.contains_key(u))
    {
        return Err(Error::ShapeMismatch(
            "positions and time shares must cover the same sensing UAVs".into(),
        ));
    }
    positions
        .iter()
        .map(|(u, p)| sensing_rate(*p, alloc.shares[u], scenario))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{build_scenario, GridSpec, NodeSet, PhysicalParams};

    const EPS: f64 = 1e-12;

    fn scenario_with(phys: PhysicalParams) -> Scenario {
        let grid = GridSpec::new(9, 9, 3, 3);
        build_scenario(
            grid,
            NodeSet {
                primary_tx: Position3D::new(0.0, 4.0, 0.0),
                primary_rx: Position3D::new(8.0, 4.0, 0.0),
                emergency_center: Position3D::new(4.0, 0.0, 20.0),
                uav_initial_cells: vec![0, 40],
                uav_initial_energy: vec![4500.0, 4500.0],
            },
            phys,
            crate::scenario::PriorityMap {
                weights: vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
            },
        )
        .unwrap()
    }

    fn default_scenario() -> Scenario {
        scenario_with(PhysicalParams::default())
    }

    #[test]
    fn gain_values() {
        let o = Position3D::new(0.0, 0.0, 0.0);
        assert_eq!(los_gain(o, Position3D::new(1.0, 0.0, 0.0), 2.0).unwrap().value(), 1.0);
        let g = los_gain(o, Position3D::new(6.0, 8.0, 0.0), 2.0).unwrap().value();
        assert!((g - 0.01).abs() < EPS);
        assert!(matches!(los_gain(o, o, 2.0), Err(Error::Singularity(_))));
    }

    #[test]
    fn direct_primary_link_is_absent() {
        let s = default_scenario();
        assert_eq!(link_gain(&s, Endpoint::PrimaryTx, Endpoint::PrimaryRx).unwrap(), LinkGain::ZERO);
        assert_eq!(link_gain(&s, Endpoint::PrimaryRx, Endpoint::PrimaryTx).unwrap(), LinkGain::ZERO);
    }

    #[test]
    fn gain_is_symmetric() {
        let s = default_scenario();
        let p = Position3D::new(3.0, 2.0, 10.0);
        for e in [Endpoint::PrimaryTx, Endpoint::PrimaryRx, Endpoint::EmergencyCenter] {
            assert_eq!(
                link_gain(&s, e, Endpoint::At(p)).unwrap(),
                link_gain(&s, Endpoint::At(p), e).unwrap()
            );
        }
    }

    #[test]
    fn af_rate_unit_substitution() {
        // 0.5 * log2(1 + 1/3)
        let expected = 0.5 * (4.0f64 / 3.0).log2();
        assert!((af_rate(0.0, 1.0, 1.0, 1.0) - expected).abs() < EPS);
        assert!((expected - 0.207_518_749_639_422).abs() < 1e-12);
    }

    #[test]
    fn af_rate_limit_in_a() {
        let b: f64 = 3.0;
        let limit = 0.5 * (1.0 + b).log2();
        assert!((af_rate(0.0, 1e9, b, 1.0) - limit).abs() < 1e-8);
    }

    #[test]
    fn primary_rate_decreases_moving_away() {
        let s = default_scenario();
        // Midpoint between PT and PR; moving straight up increases both distances.
        let mut prev = f64::INFINITY;
        for z in [1.0, 2.0, 5.0, 10.0, 50.0] {
            let r = primary_rate(Position3D::new(4.0, 4.0, z), &s).unwrap();
            assert!(r > 0.0 && r.is_finite());
            assert!(r < prev);
            prev = r;
        }
    }

    #[test]
    fn primary_rate_singularity() {
        let s = default_scenario();
        assert!(matches!(
            primary_rate(Position3D::new(0.0, 4.0, 0.0), &s),
            Err(Error::Singularity(_))
        ));
    }

    #[test]
    fn sensing_rate_unit_snr() {
        // P_U * |h|^2 = sigma^2 when d^2 = P_U / sigma^2.
        let phys = PhysicalParams {
            p_uav: 4.0,
            noise_power: 1.0,
            ..PhysicalParams::default()
        };
        let s = scenario_with(phys);
        let ec = s.nodes().emergency_center;
        let p = Position3D::new(ec.x, ec.y, ec.z - 2.0);
        let r1 = sensing_rate(p, 1.0, &s).unwrap();
        assert!((r1 - 0.5).abs() < EPS);
        let r_half = sensing_rate(p, 0.5, &s).unwrap();
        assert!((r_half - r1 / 2.0).abs() < EPS);
    }

    #[test]
    fn sensing_rate_table_constants() {
        // P_U = 20 mW, sigma^2 = 1 nW, d = 10: SNR = 2e5.
        let s = default_scenario();
        let ec = s.nodes().emergency_center;
        let p = Position3D::new(ec.x, ec.y, ec.z - 10.0);
        let r = sensing_rate(p, 1.0, &s).unwrap();
        let expected = 0.5 * (1.0f64 + 2e5).log2();
        assert!((r - expected).abs() < 1e-9);
        assert!((2.0 * r - 17.609_647).abs() < 1e-5);
    }

    #[test]
    fn sensing_rate_rejects_bad_lambda() {
        let s = default_scenario();
        let p = Position3D::new(0.0, 0.0, 10.0);
        assert!(sensing_rate(p, 0.0, &s).is_err());
        assert!(sensing_rate(p, 1.5, &s).is_err());
    }

    #[test]
    fn time_allocation_from_weights() {
        let prio = crate::scenario::PriorityMap {
            weights: vec![1.0, 3.0, 0.0],
        };
        let assign: BTreeMap<UavId, RegionId> = [(2, 0), (5, 1)].into_iter().collect();
        let t = TimeAllocation::from_priorities(&assign, &prio).unwrap();
        assert_eq!(t.share(2), Some(0.25));
        assert_eq!(t.share(5), Some(0.75));
        let assign: BTreeMap<UavId, RegionId> = [(2, 0), (5, 2)].into_iter().collect();
        let t = TimeAllocation::from_priorities(&assign, &prio).unwrap();
        assert_eq!(t.share(2), Some(0.5));
        assert!(TimeAllocation::new([(0, 0.7), (1, 0.7)].into_iter().collect()).is_err());
    }

    #[test]
    fn total_sensing_rate_sums() {
        let s = default_scenario();
        let p0 = Position3D::new(1.0, 1.0, 10.0);
        let single: BTreeMap<_, _> = [(0, p0)].into_iter().collect();
        let t1 = TimeAllocation::new([(0, 1.0)].into_iter().collect()).unwrap();
        assert_eq!(
            total_sensing_rate(&single, &t1, &s).unwrap(),
            sensing_rate(p0, 1.0, &s).unwrap()
        );

        // Mirror images about the EC's x coordinate are equidistant.
        let ec = s.nodes().emergency_center;
        let a = Position3D::new(ec.x - 2.0, 3.0, 10.0);
        let b = Position3D::new(ec.x + 2.0, 3.0, 10.0);
        let pair: BTreeMap<_, _> = [(0, a), (1, b)].into_iter().collect();
        let t2 = TimeAllocation::new([(0, 0.5), (1, 0.5)].into_iter().collect()).unwrap();
        let total = total_sensing_rate(&pair, &t2, &s).unwrap();
        assert!((total - 2.0 * sensing_rate(a, 0.5, &s).unwrap()).abs() < EPS);

        let mismatched = TimeAllocation::new([(0, 0.5), (3, 0.5)].into_iter().collect()).unwrap();
        assert!(matches!(
            total_sensing_rate(&pair, &mismatched, &s),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn rates_finite_over_grid() {
        let s = default_scenario();
        let g = s.grid();
        for c in 0..g.cell_count() {
            let p = g.cell_to_position(c).unwrap();
            let r = primary_rate(p, &s).unwrap();
            assert!(r.is_finite() && r > 0.0);
            let r = sensing_rate(p, 1.0, &s).unwrap();
            assert!(r.is_finite() && r >= 0.0);
        }
    }

    #[test]
    fn sensing_rate_monotone() {
        let s = default_scenario();
        let ec = s.nodes().emergency_center;
        let mut prev = f64::INFINITY;
        for dz in [1.0, 2.0, 4.0, 8.0] {
            let r = sensing_rate(Position3D::new(ec.x, ec.y, ec.z - dz), 0.3, &s).unwrap();
            assert!(r < prev);
            prev = r;
        }
        let p = Position3D::new(2.0, 2.0, 10.0);
        assert!(sensing_rate(p, 0.2, &s).unwrap() < sensing_rate(p, 0.3, &s).unwrap());
    }
}
