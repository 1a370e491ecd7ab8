//! World description: grid geometry, region tiling, node placement, priorities
//! and the physical constants shared by every other module.
//!
//! Cells are indexed row-major (`cell = y * length_l1 + x`) and so are regions
//! (`region = (y / region_r2) * regions_x + x / region_r1`). Within a region, a
//! "local" cell index uses the same row-major convention over the region's
//! `region_r1 x region_r2` tile.

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type CellId = usize;
pub type RegionId = usize;
pub type UavId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub length_l1: usize,
    pub length_l2: usize,
    pub region_r1: usize,
    pub region_r2: usize,
    pub uav_altitude: f64,
    #[serde(default = "default_pitch")]
    pub cell_pitch: f64,
}

fn default_pitch() -> f64 {
    1.0
}

impl GridSpec {
    pub fn new(length_l1: usize, length_l2: usize, region_r1: usize, region_r2: usize) -> Self {
        GridSpec {
            length_l1,
            length_l2,
            region_r1,
            region_r2,
            uav_altitude: 10.0,
            cell_pitch: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (field, v) in [
            ("length_l1", self.length_l1),
            ("length_l2", self.length_l2),
            ("region_r1", self.region_r1),
            ("region_r2", self.region_r2),
        ] {
            if v == 0 {
                return Err(Error::invalid(field, "must be at least 1"));
            }
        }
        if !self.length_l1.is_multiple_of(self.region_r1) {
            return Err(Error::invalid(
                "region_r1",
                format!("{} does not tile length_l1 = {}", self.region_r1, self.length_l1),
            ));
        }
        if !self.length_l2.is_multiple_of(self.region_r2) {
            return Err(Error::invalid(
                "region_r2",
                format!("{} does not tile length_l2 = {}", self.region_r2, self.length_l2),
            ));
        }
        if !(self.uav_altitude.is_finite() && self.uav_altitude > 0.0) {
            return Err(Error::invalid("uav_altitude", "must be finite and > 0"));
        }
        if !(self.cell_pitch.is_finite() && self.cell_pitch > 0.0) {
            return Err(Error::invalid("cell_pitch", "must be finite and > 0"));
        }
        Ok(())
    }

    pub fn cell_count(&self) -> usize {
        self.length_l1 * self.length_l2
    }

    pub fn regions_x(&self) -> usize {
        self.length_l1 / self.region_r1
    }

    pub fn regions_y(&self) -> usize {
        self.length_l2 / self.region_r2
    }

    /// Number of regions `M`.
    pub fn region_count(&self) -> usize {
        self.regions_x() * self.regions_y()
    }

    /// States per region, i.e. cells in one tile.
    pub fn states_per_region(&self) -> usize {
        self.region_r1 * self.region_r2
    }

    pub fn shape(&self) -> RegionShape {
        RegionShape {
            width: self.region_r1,
            height: self.region_r2,
        }
    }

    fn check_cell(&self, cell: CellId) -> Result<()> {
        if cell >= self.cell_count() {
            return Err(Error::OutOfRange {
                what: "cell",
                index: cell,
                limit: self.cell_count(),
            });
        }
        Ok(())
    }

    fn check_region(&self, region: RegionId) -> Result<()> {
        if region >= self.region_count() {
            return Err(Error::OutOfRange {
                what: "region",
                index: region,
                limit: self.region_count(),
            });
        }
        Ok(())
    }

    /// `(x, y)` = `(column, row)` of a cell.
    pub fn cell_xy(&self, cell: CellId) -> Result<(usize, usize)> {
        self.check_cell(cell)?;
        Ok((cell % self.length_l1, cell / self.length_l1))
    }

    pub fn cell_at(&self, x: usize, y: usize) -> Result<CellId> {
        if x >= self.length_l1 || y >= self.length_l2 {
            return Err(Error::OutOfRange {
                what: "cell coordinate",
                index: if x >= self.length_l1 { x } else { y },
                limit: if x >= self.length_l1 {
                    self.length_l1
                } else {
                    self.length_l2
                },
            });
        }
        Ok(y * self.length_l1 + x)
    }

    pub fn cell_to_position(&self, cell: CellId) -> Result<Position3D> {
        let (x, y) = self.cell_xy(cell)?;
        Ok(self.xy_position(x, y, self.uav_altitude))
    }

    pub(crate) fn xy_position(&self, x: usize, y: usize, z: f64) -> Position3D {
        Position3D {
            x: x as f64 * self.cell_pitch,
            y: y as f64 * self.cell_pitch,
            z,
        }
    }

    pub fn region_of(&self, cell: CellId) -> Result<RegionId> {
        let (x, y) = self.cell_xy(cell)?;
        Ok((y / self.region_r2) * self.regions_x() + x / self.region_r1)
    }

    /// Grid coordinates of the region's top-left cell.
    pub fn region_origin(&self, region: RegionId) -> Result<(usize, usize)> {
        self.check_region(region)?;
        let rx = region % self.regions_x();
        let ry = region / self.regions_x();
        Ok((rx * self.region_r1, ry * self.region_r2))
    }

    pub fn cells_of(&self, region: RegionId) -> Result<Vec<CellId>> {
        let (x0, y0) = self.region_origin(region)?;
        let mut cells = Vec::with_capacity(self.states_per_region());
        for y in y0..y0 + self.region_r2 {
            for x in x0..x0 + self.region_r1 {
                cells.push(y * self.length_l1 + x);
            }
        }
        Ok(cells)
    }

    /// Center cell `(floor(R1/2), floor(R2/2))` of the region, as a grid cell.
    pub fn region_center(&self, region: RegionId) -> Result<CellId> {
        let (x0, y0) = self.region_origin(region)?;
        Ok((y0 + self.region_r2 / 2) * self.length_l1 + x0 + self.region_r1 / 2)
    }

    pub fn local_to_global(&self, region: RegionId, local: usize) -> Result<CellId> {
        if local >= self.states_per_region() {
            return Err(Error::OutOfRange {
                what: "local cell",
                index: local,
                limit: self.states_per_region(),
            });
        }
        let (x0, y0) = self.region_origin(region)?;
        Ok((y0 + local / self.region_r1) * self.length_l1 + x0 + local % self.region_r1)
    }

    pub fn global_to_local(&self, region: RegionId, cell: CellId) -> Result<usize> {
        let (x, y) = self.cell_xy(cell)?;
        let (x0, y0) = self.region_origin(region)?;
        if x < x0 || y < y0 || x >= x0 + self.region_r1 || y >= y0 + self.region_r2 {
            return Err(Error::OutOfRange {
                what: "cell outside region",
                index: cell,
                limit: self.cell_count(),
            });
        }
        Ok((y - y0) * self.region_r1 + (x - x0))
    }

    /// Hop count between two cells under 4-directional movement.
    pub fn manhattan(&self, a: CellId, b: CellId) -> Result<usize> {
        let (ax, ay) = self.cell_xy(a)?;
        let (bx, by) = self.cell_xy(b)?;
        Ok(ax.abs_diff(bx) + ay.abs_diff(by))
    }

    /// Region whose center cell is closest (3D Euclidean) to `target`; ties go
    /// to the lowest region id.
    pub fn closest_region(&self, target: Position3D) -> RegionId {
        let mut best = (0, f64::INFINITY);
        for region in 0..self.region_count() {
            let center = self
                .region_center(region)
                .and_then(|c| self.cell_to_position(c))
                .expect("region ids below region_count are valid");
            let d = center.distance(&target);
            if d < best.1 {
                best = (region, d);
            }
        }
        best.0
    }
}

/// Dimensions of one region tile; the learner's state space.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RegionShape {
    pub width: usize,
    pub height: usize,
}

impl RegionShape {
    pub fn states(&self) -> usize {
        self.width * self.height
    }

    pub fn center(&self) -> usize {
        (self.height / 2) * self.width + self.width / 2
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Position3D {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Position3D {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Position3D { x, y, z }
    }

    pub fn distance(&self, other: &Position3D) -> f64 {
        let (dx, dy, dz) = (self.x - other.x, self.y - other.y, self.z - other.z);
        (dx * dx + dy * dy + dz * dz).sqrt()
    }

    fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeSet {
    pub primary_tx: Position3D,
    pub primary_rx: Position3D,
    pub emergency_center: Position3D,
    pub uav_initial_cells: Vec<CellId>,
    pub uav_initial_energy: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicalParams {
    pub p_pt: f64,
    pub p_uav: f64,
    pub noise_power: f64,
    pub path_loss_exponent: f64,
    pub psi_move: f64,
    pub psi_tx: f64,
}

impl Default for PhysicalParams {
    fn default() -> Self {
        PhysicalParams {
            p_pt: 10e-3,
            p_uav: 20e-3,
            noise_power: 1e-9,
            path_loss_exponent: 2.0,
            psi_move: 10.0,
            psi_tx: 0.5,
        }
    }
}

impl PhysicalParams {
    pub fn validate(&self) -> Result<()> {
        for (field, v) in [
            ("p_pt", self.p_pt),
            ("p_uav", self.p_uav),
            ("noise_power", self.noise_power),
            ("path_loss_exponent", self.path_loss_exponent),
            ("psi_tx", self.psi_tx),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(field, format!("must be finite and > 0, got {v}")));
            }
        }
        if !(self.psi_move.is_finite() && self.psi_move > self.psi_tx) {
            return Err(Error::invalid(
                "psi_move",
                format!("must exceed psi_tx ({}), got {}", self.psi_tx, self.psi_move),
            ));
        }
        Ok(())
    }
}

/// Priority weight per region, indexed by region id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorityMap {
    pub weights: Vec<f64>,
}

impl PriorityMap {
    pub fn weight(&self, region: RegionId) -> f64 {
        self.weights.get(region).copied().unwrap_or(0.0)
    }

    /// Regions with positive weight, heaviest first (ties to the lower id).
    pub fn ranked(&self) -> Vec<RegionId> {
        let mut regions: Vec<RegionId> = (0..self.weights.len())
            .filter(|&r| self.weights[r] > 0.0)
            .collect();
        regions.sort_by(|&a, &b| self.weights[b].total_cmp(&self.weights[a]).then(a.cmp(&b)));
        regions
    }
}

/// Validated, immutable world description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ScenarioDef", into = "ScenarioDef")]
pub struct Scenario {
    grid: GridSpec,
    nodes: NodeSet,
    phys: PhysicalParams,
    prio: PriorityMap,
}

#[derive(Serialize, Deserialize)]
struct ScenarioDef {
    grid: GridSpec,
    nodes: NodeSet,
    phys: PhysicalParams,
    prio: PriorityMap,
}

impl TryFrom<ScenarioDef> for Scenario {
    type Error = Error;

    fn try_from(def: ScenarioDef) -> Result<Self> {
        build_scenario(def.grid, def.nodes, def.phys, def.prio)
    }
}

impl From<Scenario> for ScenarioDef {
    fn from(s: Scenario) -> Self {
        ScenarioDef {
            grid: s.grid,
            nodes: s.nodes,
            phys: s.phys,
            prio: s.prio,
        }
    }
}

pub fn build_scenario(
    grid: GridSpec,
    nodes: NodeSet,
    phys: PhysicalParams,
    prio: PriorityMap,
) -> Result<Scenario> {
    grid.validate()?;
    phys.validate()?;

    let n = nodes.uav_initial_cells.len();
    if n == 0 {
        return Err(Error::invalid("uav_initial_cells", "at least one UAV is required"));
    }
    if nodes.uav_initial_energy.len() != n {
        return Err(Error::invalid(
            "uav_initial_energy",
            format!("{} entries for {} UAVs", nodes.uav_initial_energy.len(), n),
        ));
    }
    if grid.region_count() < n {
        return Err(Error::invalid(
            "region_r1",
            format!("{} regions cannot host {} UAVs", grid.region_count(), n),
        ));
    }
    for &cell in &nodes.uav_initial_cells {
        if cell >= grid.cell_count() {
            return Err(Error::invalid(
                "uav_initial_cells",
                format!("cell {cell} outside a {}-cell grid", grid.cell_count()),
            ));
        }
    }
    if let Some(e) = nodes
        .uav_initial_energy
        .iter()
        .find(|e| !(e.is_finite() && **e > 0.0))
    {
        return Err(Error::invalid("uav_initial_energy", format!("must be > 0, got {e}")));
    }
    for (field, p) in [
        ("primary_tx", nodes.primary_tx),
        ("primary_rx", nodes.primary_rx),
        ("emergency_center", nodes.emergency_center),
    ] {
        if !p.is_finite() || p.z < 0.0 {
            return Err(Error::invalid(field, "position must be finite with z >= 0"));
        }
    }
    if nodes.primary_tx == nodes.primary_rx {
        return Err(Error::invalid("primary_rx", "coincides with primary_tx"));
    }

    if prio.weights.len() != grid.region_count() {
        return Err(Error::invalid(
            "weights",
            format!("{} weights for {} regions", prio.weights.len(), grid.region_count()),
        ));
    }
    if let Some(w) = prio.weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
        return Err(Error::invalid("weights", format!("must be finite and >= 0, got {w}")));
    }
    let positive = prio.weights.iter().filter(|w| **w > 0.0).count();
    if positive < n - 1 {
        return Err(Error::invalid(
            "weights",
            format!("{positive} prioritized regions for {} sensing UAVs", n - 1),
        ));
    }

    Ok(Scenario {
        grid,
        nodes,
        phys,
        prio,
    })
}

impl Scenario {
    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn nodes(&self) -> &NodeSet {
        &self.nodes
    }

    pub fn phys(&self) -> &PhysicalParams {
        &self.phys
    }

    pub fn priorities(&self) -> &PriorityMap {
        &self.prio
    }

    pub fn uav_count(&self) -> usize {
        self.nodes.uav_initial_cells.len()
    }

    pub fn initial_energy(&self, uav: UavId) -> f64 {
        self.nodes.uav_initial_energy[uav]
    }

    pub fn initial_cell(&self, uav: UavId) -> CellId {
        self.nodes.uav_initial_cells[uav]
    }

    /// Copy with the node set replaced; revalidated.
    pub fn with_nodes(&self, nodes: NodeSet) -> Result<Scenario> {
        build_scenario(self.grid, nodes, self.phys, self.prio.clone())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario is always representable as TOML")
    }

    pub fn from_toml(text: &str) -> Result<Scenario> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }
}

/// Everything `random_scenario` needs besides the seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenarioTemplate {
    pub grid: GridSpec,
    pub phys: PhysicalParams,
    pub uavs: usize,
    /// Altitude of the emergency center.
    pub ec_altitude: f64,
    pub energy_min: f64,
    pub energy_max: f64,
}

impl ScenarioTemplate {
    pub fn new(grid: GridSpec, uavs: usize) -> Self {
        ScenarioTemplate {
            grid,
            phys: PhysicalParams::default(),
            uavs,
            ec_altitude: 2.0 * grid.uav_altitude,
            energy_min: 4000.0,
            energy_max: 5000.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        self.phys.validate()?;
        if self.uavs == 0 {
            return Err(Error::invalid("uavs", "at least one UAV is required"));
        }
        if self.grid.region_count() < self.uavs {
            return Err(Error::invalid(
                "uavs",
                format!("{} UAVs exceed {} regions", self.uavs, self.grid.region_count()),
            ));
        }
        if !(self.ec_altitude.is_finite() && self.ec_altitude >= 0.0) {
            return Err(Error::invalid("ec_altitude", "must be finite and >= 0"));
        }
        if !(self.energy_min.ceil() > 0.0 && self.energy_min.ceil() <= self.energy_max.floor()) {
            return Err(Error::invalid(
                "energy_min",
                "energy range must contain a positive whole joule",
            ));
        }
        Ok(())
    }
}

/// Seeded random instance. UAV energies are whole joules so that every energy
/// value stays exactly representable under the 10 J / 0.5 J charges.
pub fn random_scenario(seed: u64, template: &ScenarioTemplate) -> Result<Scenario> {
    template.validate()?;
    let grid = template.grid;
    let cells = grid.cell_count();
    let n = template.uavs;
    if n > cells {
        return Err(Error::Placement { wanted: n, cells });
    }
    if cells < 3 {
        return Err(Error::Placement { wanted: 3, cells });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let uav_initial_cells = index::sample(&mut rng, cells, n).into_vec();
    let lo = template.energy_min.ceil() as u64;
    let hi = template.energy_max.floor() as u64;
    let uav_initial_energy = (0..n).map(|_| rng.random_range(lo..=hi) as f64).collect();

    let fixed = index::sample(&mut rng, cells, 3).into_vec();
    let ground = |cell: CellId, z: f64| {
        let (x, y) = (cell % grid.length_l1, cell / grid.length_l1);
        grid.xy_position(x, y, z)
    };
    let primary_tx = ground(fixed[0], 0.0);
    let primary_rx = ground(fixed[1], 0.0);
    let emergency_center = ground(fixed[2], template.ec_altitude);

    // The region nearest the primary receiver is kept free of priority so the
    // primary region and the sensing regions never collide.
    let m = grid.region_count();
    let primary = grid.closest_region(primary_rx);
    let candidates: Vec<RegionId> = (0..m).filter(|&r| r != primary).collect();
    let picked = index::sample(&mut rng, candidates.len(), n - 1).into_vec();
    let mut ranks: Vec<f64> = (1..n).map(|k| k as f64).collect();
    ranks.shuffle(&mut rng);
    let mut weights = vec![0.0; m];
    for (slot, rank) in picked.into_iter().zip(ranks) {
        weights[candidates[slot]] = rank;
    }

    build_scenario(
        grid,
        NodeSet {
            primary_tx,
            primary_rx,
            emergency_center,
            uav_initial_cells,
            uav_initial_energy,
        },
        template.phys,
        PriorityMap { weights },
    )
}
