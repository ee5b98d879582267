//! Domain entities and the synthetic scenario generator.
//!
//! The generator stands in for travel-survey, postcode, and charger
//! datasets: it builds a grid road network, places chargers zone by
//! zone, and emits driver agents whose feature regimes (trip distance,
//! initial battery, charger density, trip co-occurrence) are
//! distinguishable enough to cluster. Everything is deterministic given
//! `(config, seed)`.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::CoreError;
use crate::math;
use crate::road::{self, ChargerId, Edge, Node, NodeId, Path, RoadGraph};

/// Buffer radius for the CD/TCD metrics, metres.
pub const BUFFER_M: f64 = 500.0;

/// Table A1 attribute bounds for generated chargers.
pub const PRICE_RANGE: (f64, f64) = (0.3, 1.1);
pub const SPEED_RANGE: (f64, f64) = (6.4, 300.2);
pub const INITIAL_FEE_RANGE: (f64, f64) = (0.0, 0.6);
pub const ADDITIONAL_FEE_RANGE: (f64, f64) = (1.2, 24.0);
pub const PORTS_RANGE: (u32, u32) = (1, 12);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvSpec {
    pub name: String,
    pub battery_kwh: f64,
    pub consumption_wh_per_mi: f64,
}

impl EvSpec {
    /// Driving range in miles at the given state of charge.
    pub fn range_mi(&self, soc: f64) -> f64 {
        soc * self.battery_kwh * 1000.0 / self.consumption_wh_per_mi
    }

    /// SOC fraction consumed by driving the given distance.
    pub fn soc_per_mi(&self) -> f64 {
        self.consumption_wh_per_mi / (self.battery_kwh * 1000.0)
    }
}

/// Top-5 UK EV models used as the default vehicle catalog.
pub fn default_ev_catalog() -> Vec<EvSpec> {
    [
        ("Tesla Model Y", 57.5, 267.0),
        ("Tesla Model 3", 57.5, 221.0),
        ("Kia Niro EV", 64.8, 270.0),
        ("Volkswagen ID.3", 59.0, 268.0),
        ("Nissan Leaf", 39.0, 269.0),
    ]
    .into_iter()
    .map(|(name, battery_kwh, consumption_wh_per_mi)| EvSpec {
        name: String::from(name),
        battery_kwh,
        consumption_wh_per_mi,
    })
    .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Purpose {
    Work,
    Leisure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Charger {
    pub charger_id: ChargerId,
    pub node_id: NodeId,
    pub ports: u32,
    pub price_gbp_per_kwh: f64,
    pub speed_kw: f64,
    pub initial_parking_fee_gbp: f64,
    pub additional_parking_fee_gbp_per_h: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trip {
    pub origin: NodeId,
    pub destination: NodeId,
    pub purpose: Purpose,
    /// Minutes past midnight, in [0, 1440).
    pub start_time_min: f64,
    pub planned_distance_mi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriverAgent {
    pub agent_id: u32,
    pub ev: EvSpec,
    pub soc: f64,
    pub soc_threshold: f64,
    pub trips: Vec<Trip>,
    pub cluster_id: Option<u32>,
    /// Chargers per mile along the first planned route (Supp. buffer metric).
    pub cd: f64,
    /// Concurrent trips per mile crossing the first route's buffer.
    pub tcd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub graph: RoadGraph,
    pub chargers: Vec<Charger>,
    pub agents: Vec<DriverAgent>,
    pub seed: u64,
}

impl Scenario {
    pub fn charger(&self, id: ChargerId) -> Option<&Charger> {
        self.chargers.iter().find(|c| c.charger_id == id)
    }
}

// ---------------------------------------------------------------------------
// generator configuration

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub nx: u32,
    pub ny: u32,
    pub spacing_km: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ZoneSpec {
    pub id: u32,
    pub x0_km: f64,
    pub y0_km: f64,
    pub x1_km: f64,
    pub y1_km: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChargerPlacement {
    pub zone: u32,
    pub count: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormalSpec {
    pub mean: f64,
    pub sd: f64,
}

/// One driver regime: a block of agents sharing OD zones and feature
/// distributions, mirroring one row of the five-cluster structure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegimeSpec {
    pub name: String,
    pub agents: u32,
    pub origin_zone: u32,
    pub dest_zone: u32,
    pub trip_distance_mi: NormalSpec,
    pub initial_soc: NormalSpec,
    /// Fraction of agents assigned a work first trip.
    pub work_fraction: f64,
    /// Trip start window, minutes past midnight.
    pub start_window_min: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub grid: GridSpec,
    pub zones: Vec<ZoneSpec>,
    pub chargers: Vec<ChargerPlacement>,
    pub regimes: Vec<RegimeSpec>,
    #[serde(default = "default_ev_catalog")]
    pub ev_catalog: Vec<EvSpec>,
    #[serde(default = "default_threshold_spec")]
    pub soc_threshold: ThresholdSpec,
    /// Ports drawn uniformly from this range (within Table A1's 1-12).
    #[serde(default = "default_ports")]
    pub ports_range: (u32, u32),
    /// Charger speed drawn uniformly from this range, kW.
    #[serde(default = "default_speed")]
    pub speed_kw_range: (f64, f64),
    /// Travel speed used for trip time windows, mph.
    #[serde(default = "default_speed_mph")]
    pub speed_mph: f64,
    /// Zero-division cap for chance_charge = CD / TCD, trips per mile.
    #[serde(default = "default_epsilon_tcd")]
    pub epsilon_tcd: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThresholdSpec {
    pub mean: f64,
    pub sd: f64,
    pub lo: f64,
    pub hi: f64,
}

fn default_threshold_spec() -> ThresholdSpec {
    ThresholdSpec { mean: 0.2, sd: 0.05, lo: 0.05, hi: 0.5 }
}

fn default_ports() -> (u32, u32) {
    (1, 4)
}

fn default_speed() -> (f64, f64) {
    SPEED_RANGE
}

fn default_speed_mph() -> f64 {
    40.0
}

fn default_epsilon_tcd() -> f64 {
    0.01
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), CoreError> {
        let bad = |field: &str| Err(CoreError::InvalidConfig(String::from(field)));
        if self.grid.nx == 0 || self.grid.ny == 0 {
            return bad("grid.nx/ny");
        }
        if !(self.grid.spacing_km > 0.0) {
            return bad("grid.spacing_km");
        }
        let mut zone_ids = alloc::collections::BTreeSet::new();
        for z in &self.zones {
            if !zone_ids.insert(z.id) {
                return bad("zones.id (duplicate)");
            }
            if z.x1_km <= z.x0_km || z.y1_km <= z.y0_km {
                return bad("zones extent");
            }
        }
        for c in &self.chargers {
            if !zone_ids.contains(&c.zone) {
                return bad("chargers.zone");
            }
        }
        for r in &self.regimes {
            if !zone_ids.contains(&r.origin_zone) || !zone_ids.contains(&r.dest_zone) {
                return bad("regimes zone reference");
            }
            if !(r.trip_distance_mi.mean > 0.0) || !(r.trip_distance_mi.sd >= 0.0) {
                return bad("regimes.trip_distance_mi");
            }
            if !(r.initial_soc.mean > 0.0 && r.initial_soc.mean < 1.0) || !(r.initial_soc.sd > 0.0)
            {
                return bad("regimes.initial_soc");
            }
            if !(0.0..=1.0).contains(&r.work_fraction) {
                return bad("regimes.work_fraction");
            }
            let (s, e) = r.start_window_min;
            if !(0.0..1440.0).contains(&s) || !(0.0..1440.0).contains(&e) || e < s {
                return bad("regimes.start_window_min");
            }
        }
        if self.ev_catalog.is_empty() {
            return bad("ev_catalog");
        }
        for ev in &self.ev_catalog {
            if !(ev.battery_kwh > 0.0) || !(ev.consumption_wh_per_mi > 0.0) {
                return bad("ev_catalog entry");
            }
        }
        let t = &self.soc_threshold;
        if !(t.lo > 0.0 && t.hi < 1.0 && t.lo < t.hi && t.sd > 0.0) {
            return bad("soc_threshold");
        }
        if self.ports_range.0 < PORTS_RANGE.0
            || self.ports_range.1 > PORTS_RANGE.1
            || self.ports_range.0 > self.ports_range.1
        {
            return bad("ports_range");
        }
        if self.speed_kw_range.0 < SPEED_RANGE.0
            || self.speed_kw_range.1 > SPEED_RANGE.1
            || self.speed_kw_range.0 > self.speed_kw_range.1
        {
            return bad("speed_kw_range");
        }
        if !(self.speed_mph > 0.0) {
            return bad("speed_mph");
        }
        if !(self.epsilon_tcd > 0.0) {
            return bad("epsilon_tcd");
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// sampling helpers

/// Draw from Normal(mean, sd) truncated to the open interval (lo, hi)
/// by rejection; errors out after 10,000 rejections.
pub fn sample_truncated_normal<R: Rng>(
    rng: &mut R,
    mean: f64,
    sd: f64,
    lo: f64,
    hi: f64,
) -> Result<f64, CoreError> {
    const CAP: u32 = 10_000;
    for _ in 0..CAP {
        let u1: f64 = rng.random();
        let u2: f64 = rng.random();
        // Box-Muller; u1 is in [0,1), flip to (0,1] so the log is finite
        let z = math::sqrt(-2.0 * math::ln(1.0 - u1)) * math::cos(2.0 * core::f64::consts::PI * u2);
        let x = mean + sd * z;
        if x > lo && x < hi {
            return Ok(x);
        }
    }
    Err(CoreError::SamplingExhausted)
}

/// Initial SOC draw, truncated to (0, 1).
pub fn sample_initial_soc<R: Rng>(rng: &mut R, mean: f64, sd: f64) -> Result<f64, CoreError> {
    sample_truncated_normal(rng, mean, sd, 0.0, 1.0)
}

// ---------------------------------------------------------------------------
// OD selection

/// Pick a trip origin uniformly from the origin zone, then the
/// destination-zone node whose shortest-path distance best matches the
/// requested trip distance.
pub fn select_od<R: Rng>(
    graph: &RoadGraph,
    zones: &BTreeMap<u32, Vec<NodeId>>,
    origin_zone: u32,
    dest_zone: u32,
    trip_distance_mi: f64,
    rng: &mut R,
) -> Result<(NodeId, NodeId), CoreError> {
    let origins = zones
        .get(&origin_zone)
        .filter(|v| !v.is_empty())
        .ok_or_else(|| CoreError::InvalidConfig(format!("empty zone {origin_zone}")))?;
    let dests = zones
        .get(&dest_zone)
        .filter(|v| !v.is_empty())
        .ok_or_else(|| CoreError::InvalidConfig(format!("empty zone {dest_zone}")))?;
    let origin = origins[rng.random_range(0..origins.len())];
    let dist = road::shortest_distances(graph, origin, None)?;
    let mut best: Option<(NodeId, f64)> = None;
    for &cand in dests {
        if let Some(&d) = dist.get(&cand) {
            let gap = math::abs(d - trip_distance_mi);
            let better = match best {
                None => true,
                Some((_, g)) => gap < g,
            };
            if better {
                best = Some((cand, gap));
            }
        }
    }
    match best {
        Some((dest, _)) => Ok((origin, dest)),
        None => Err(CoreError::NoPath { from: origin, to: dests[0] }),
    }
}

// ---------------------------------------------------------------------------
// environmental metrics

/// Charger density: chargers within the 500 m route buffer per route mile.
pub fn compute_cd(path: &Path, chargers: &[Charger], graph: &RoadGraph) -> Result<f64, CoreError> {
    if path.total_length_mi <= 0.0 {
        return Err(CoreError::ZeroLengthPath);
    }
    let mut count = 0usize;
    for c in chargers {
        let pos = graph.position(c.node_id)?;
        if road::distance_to_path(pos, path, graph)? <= BUFFER_M {
            count += 1;
        }
    }
    Ok(count as f64 / path.total_length_mi)
}

/// Closed-interval overlap of two time windows.
pub fn windows_overlap(a: (f64, f64), b: (f64, f64)) -> bool {
    a.0 <= b.1 && b.0 <= a.1
}

/// Whether any point of `other` lies within the 500 m buffer of `path`.
fn path_intersects_buffer(path: &Path, other: &Path, graph: &RoadGraph) -> Result<bool, CoreError> {
    if path.node_sequence.is_empty() || other.node_sequence.is_empty() {
        return Err(CoreError::EmptyPath);
    }
    let buffer_km = BUFFER_M / 1000.0;
    let own: Vec<(f64, f64)> = path
        .node_sequence
        .iter()
        .map(|n| graph.position(*n))
        .collect::<Result<_, _>>()?;
    let theirs: Vec<(f64, f64)> = other
        .node_sequence
        .iter()
        .map(|n| graph.position(*n))
        .collect::<Result<_, _>>()?;
    // vertex checks catch degenerate single-node paths
    for &p in &theirs {
        if road::distance_to_path(p, path, graph)? <= BUFFER_M {
            return Ok(true);
        }
    }
    if own.len() < 2 || theirs.len() < 2 {
        return Ok(false);
    }
    for oa in own.windows(2) {
        for ob in theirs.windows(2) {
            if math::segment_segment_distance(oa[0], oa[1], ob[0], ob[1]) <= buffer_km {
                return Ok(true);
            }
        }
    }
    Ok(false)
}

/// Trip co-occurrence density: concurrent trips crossing the route's
/// 500 m buffer per route mile.
pub fn compute_tcd(
    path: &Path,
    own_window: (f64, f64),
    other_trips: &[(Path, (f64, f64))],
    graph: &RoadGraph,
) -> Result<f64, CoreError> {
    if path.total_length_mi <= 0.0 {
        return Err(CoreError::ZeroLengthPath);
    }
    if own_window.1 < own_window.0 {
        return Err(CoreError::InvalidConfig(String::from("own_window")));
    }
    let mut count = 0usize;
    for (other, window) in other_trips {
        if window.1 < window.0 {
            return Err(CoreError::InvalidConfig(String::from("other window")));
        }
        if windows_overlap(own_window, *window) && path_intersects_buffer(path, other, graph)? {
            count += 1;
        }
    }
    Ok(count as f64 / path.total_length_mi)
}

// ---------------------------------------------------------------------------
// scenario generation

/// Node ids laid out row-major over the grid.
fn grid_node_id(nx: u32, ix: u32, iy: u32) -> NodeId {
    iy * nx + ix
}

fn build_grid_graph(
    grid: &GridSpec,
    charger_nodes: &[(NodeId, ChargerId)],
) -> Result<RoadGraph, CoreError> {
    let mut nodes = Vec::new();
    let mut edges = Vec::new();
    let spacing_mi = grid.spacing_km / math::KM_PER_MI;
    for iy in 0..grid.ny {
        for ix in 0..grid.nx {
            nodes.push(Node {
                id: grid_node_id(grid.nx, ix, iy),
                x_km: ix as f64 * grid.spacing_km,
                y_km: iy as f64 * grid.spacing_km,
            });
            if ix + 1 < grid.nx {
                edges.push(Edge {
                    a: grid_node_id(grid.nx, ix, iy),
                    b: grid_node_id(grid.nx, ix + 1, iy),
                    length_mi: spacing_mi,
                });
            }
            if iy + 1 < grid.ny {
                edges.push(Edge {
                    a: grid_node_id(grid.nx, ix, iy),
                    b: grid_node_id(grid.nx, ix, iy + 1),
                    length_mi: spacing_mi,
                });
            }
        }
    }
    RoadGraph::new(nodes, edges, charger_nodes.to_vec())
}

/// Zone membership over grid nodes; first matching zone wins.
pub fn zone_nodes(graph: &RoadGraph, zones: &[ZoneSpec]) -> BTreeMap<u32, Vec<NodeId>> {
    let mut out: BTreeMap<u32, Vec<NodeId>> = BTreeMap::new();
    for z in zones {
        out.insert(z.id, Vec::new());
    }
    for n in graph.nodes() {
        for z in zones {
            if n.x_km >= z.x0_km && n.x_km <= z.x1_km && n.y_km >= z.y0_km && n.y_km <= z.y1_km {
                out.get_mut(&z.id).unwrap().push(n.id);
                break;
            }
        }
    }
    out
}

fn uniform_in<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

/// Deterministic synthetic scenario from `(config, seed)`.
pub fn generate_scenario(config: &ScenarioConfig, seed: u64) -> Result<Scenario, CoreError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // place chargers zone by zone on distinct nodes
    let bare_graph = build_grid_graph(&config.grid, &[])?;
    let zones = zone_nodes(&bare_graph, &config.zones);
    for z in &config.zones {
        if zones.get(&z.id).is_none_or(|v| v.is_empty()) {
            return Err(CoreError::InvalidConfig(format!("zone {} contains no nodes", z.id)));
        }
    }
    let mut taken = alloc::collections::BTreeSet::new();
    let mut placements: Vec<(NodeId, ChargerId)> = Vec::new();
    let mut chargers: Vec<Charger> = Vec::new();
    let mut next_id: ChargerId = 0;
    for placement in &config.chargers {
        let mut candidates: Vec<NodeId> = zones[&placement.zone]
            .iter()
            .copied()
            .filter(|n| !taken.contains(n))
            .collect();
        if (candidates.len() as u32) < placement.count {
            return Err(CoreError::InvalidConfig(format!(
                "zone {} cannot host {} chargers",
                placement.zone, placement.count
            )));
        }
        for _ in 0..placement.count {
            let node = candidates.remove(rng.random_range(0..candidates.len()));
            taken.insert(node);
            let (p_lo, p_hi) = config.ports_range;
            chargers.push(Charger {
                charger_id: next_id,
                node_id: node,
                ports: rng.random_range(p_lo..=p_hi),
                price_gbp_per_kwh: uniform_in(&mut rng, PRICE_RANGE.0, PRICE_RANGE.1),
                speed_kw: uniform_in(&mut rng, config.speed_kw_range.0, config.speed_kw_range.1),
                initial_parking_fee_gbp: uniform_in(
                    &mut rng,
                    INITIAL_FEE_RANGE.0,
                    INITIAL_FEE_RANGE.1,
                ),
                additional_parking_fee_gbp_per_h: uniform_in(
                    &mut rng,
                    ADDITIONAL_FEE_RANGE.0,
                    ADDITIONAL_FEE_RANGE.1,
                ),
            });
            placements.push((node, next_id));
            next_id += 1;
        }
    }
    let graph = build_grid_graph(&config.grid, &placements)?;

    // agents regime by regime
    let mut agents: Vec<DriverAgent> = Vec::new();
    let mut planned: Vec<(Path, (f64, f64))> = Vec::new();
    let mut agent_id: u32 = 0;
    for regime in &config.regimes {
        for _ in 0..regime.agents {
            let soc = sample_initial_soc(&mut rng, regime.initial_soc.mean, regime.initial_soc.sd)?;
            let t = &config.soc_threshold;
            let soc_threshold = sample_truncated_normal(&mut rng, t.mean, t.sd, t.lo, t.hi)?;
            let ev = config.ev_catalog[rng.random_range(0..config.ev_catalog.len())].clone();
            let target = sample_truncated_normal(
                &mut rng,
                regime.trip_distance_mi.mean,
                regime.trip_distance_mi.sd.max(1e-9),
                0.1,
                f64::INFINITY,
            )?;
            let (origin, destination) =
                select_od(&graph, &zones, regime.origin_zone, regime.dest_zone, target, &mut rng)?;
            let path = road::shortest_path(&graph, origin, destination)?;
            let purpose = if rng.random::<f64>() < regime.work_fraction {
                Purpose::Work
            } else {
                Purpose::Leisure
            };
            let start_time_min =
                uniform_in(&mut rng, regime.start_window_min.0, regime.start_window_min.1);
            let end_time_min = start_time_min + path.total_length_mi / config.speed_mph * 60.0;
            let trip = Trip {
                origin,
                destination,
                purpose,
                start_time_min,
                planned_distance_mi: path.total_length_mi,
            };
            agents.push(DriverAgent {
                agent_id,
                ev,
                soc,
                soc_threshold,
                trips: alloc::vec![trip],
                cluster_id: None,
                cd: 0.0,
                tcd: 0.0,
            });
            planned.push((path, (start_time_min, end_time_min)));
            agent_id += 1;
        }
    }

    // environmental features against the full population
    for i in 0..agents.len() {
        let (path, window) = &planned[i];
        if path.total_length_mi > 0.0 {
            agents[i].cd = compute_cd(path, &chargers, &graph)?;
            let others: Vec<(Path, (f64, f64))> = planned
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, t)| t.clone())
                .collect();
            agents[i].tcd = compute_tcd(path, *window, &others, &graph)?;
        }
    }

    Ok(Scenario { graph, chargers, agents, seed })
}
