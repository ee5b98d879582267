//! Weighted road network with shortest-path routing and charger
//! reachability queries.
//!
//! Edge lengths are in miles and node coordinates in planar kilometres;
//! buffer queries are expressed in metres. The graph is immutable after
//! construction and safe to share across workers.

use alloc::collections::{BTreeMap, BTreeSet, BinaryHeap};
use alloc::format;
use alloc::vec::Vec;
use core::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::CoreError;
use crate::math;

pub type NodeId = u32;
pub type ChargerId = u32;

/// Geometry tolerance for the edge-length consistency check.
const GEOM_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: NodeId,
    pub x_km: f64,
    pub y_km: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub a: NodeId,
    pub b: NodeId,
    pub length_mi: f64,
}

/// Undirected weighted road graph carrying charger placements.
///
/// Serializes as plain node/edge/charger lists; the adjacency index is
/// rebuilt (and invariants re-checked) on deserialization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RoadGraphRepr", into = "RoadGraphRepr")]
pub struct RoadGraph {
    nodes: Vec<Node>,
    edges: Vec<Edge>,
    charger_at_node: BTreeMap<NodeId, ChargerId>,
    index: GraphIndex,
}

#[derive(Serialize, Deserialize)]
struct RoadGraphRepr {
    nodes: Vec<Node>,
    edges: Vec<Edge>,
    chargers: Vec<(NodeId, ChargerId)>,
}

impl TryFrom<RoadGraphRepr> for RoadGraph {
    type Error = CoreError;

    fn try_from(repr: RoadGraphRepr) -> Result<Self, CoreError> {
        RoadGraph::new(repr.nodes, repr.edges, repr.chargers)
    }
}

impl From<RoadGraph> for RoadGraphRepr {
    fn from(g: RoadGraph) -> Self {
        let chargers = g.charger_at_node.iter().map(|(n, c)| (*n, *c)).collect();
        RoadGraphRepr { nodes: g.nodes, edges: g.edges, chargers }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
struct GraphIndex {
    position: BTreeMap<NodeId, (f64, f64)>,
    adjacency: BTreeMap<NodeId, Vec<(NodeId, f64)>>,
}

/// A routed path: ordered node ids plus total length in miles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Path {
    pub node_sequence: Vec<NodeId>,
    pub total_length_mi: f64,
}

impl RoadGraph {
    pub fn new(
        nodes: Vec<Node>,
        edges: Vec<Edge>,
        chargers: Vec<(NodeId, ChargerId)>,
    ) -> Result<Self, CoreError> {
        let mut position = BTreeMap::new();
        for n in &nodes {
            if position.insert(n.id, (n.x_km, n.y_km)).is_some() {
                return Err(CoreError::InvalidGraph(format!("duplicate node id {}", n.id)));
            }
        }
        let mut adjacency: BTreeMap<NodeId, Vec<(NodeId, f64)>> = BTreeMap::new();
        for n in &nodes {
            adjacency.insert(n.id, Vec::new());
        }
        for e in &edges {
            if e.length_mi <= 0.0 {
                return Err(CoreError::InvalidGraph(format!(
                    "edge {}-{} has non-positive length",
                    e.a, e.b
                )));
            }
            let pa = *position.get(&e.a).ok_or(CoreError::UnknownNode(e.a))?;
            let pb = *position.get(&e.b).ok_or(CoreError::UnknownNode(e.b))?;
            let euclid_mi = math::dist2d(pa, pb) / math::KM_PER_MI;
            if e.length_mi + GEOM_EPS < euclid_mi {
                return Err(CoreError::InvalidGraph(format!(
                    "edge {}-{} shorter than straight-line distance",
                    e.a, e.b
                )));
            }
            adjacency.get_mut(&e.a).unwrap().push((e.b, e.length_mi));
            adjacency.get_mut(&e.b).unwrap().push((e.a, e.length_mi));
        }
        for neigh in adjacency.values_mut() {
            neigh.sort_by(|x, y| x.0.cmp(&y.0).then(x.1.total_cmp(&y.1)));
        }
        let mut charger_at_node = BTreeMap::new();
        for (node, charger) in chargers {
            if !position.contains_key(&node) {
                return Err(CoreError::UnknownNode(node));
            }
            if charger_at_node.insert(node, charger).is_some() {
                return Err(CoreError::InvalidGraph(format!(
                    "node {node} holds more than one charger"
                )));
            }
        }
        Ok(RoadGraph {
            nodes,
            edges,
            charger_at_node,
            index: GraphIndex { position, adjacency },
        })
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn contains(&self, node: NodeId) -> bool {
        self.index.position.contains_key(&node)
    }

    pub fn position(&self, node: NodeId) -> Result<(f64, f64), CoreError> {
        self.index
            .position
            .get(&node)
            .copied()
            .ok_or(CoreError::UnknownNode(node))
    }

    pub fn charger_at(&self, node: NodeId) -> Option<ChargerId> {
        self.charger_at_node.get(&node).copied()
    }

    pub fn chargers(&self) -> impl Iterator<Item = (NodeId, ChargerId)> + '_ {
        self.charger_at_node.iter().map(|(n, c)| (*n, *c))
    }

    pub fn neighbors(&self, node: NodeId) -> &[(NodeId, f64)] {
        self.index
            .adjacency
            .get(&node)
            .map(|v| v.as_slice())
            .unwrap_or(&[])
    }

    /// Edge length between two adjacent nodes, if the edge exists.
    pub fn edge_length(&self, a: NodeId, b: NodeId) -> Option<f64> {
        self.neighbors(a)
            .iter()
            .find(|(n, _)| *n == b)
            .map(|(_, l)| *l)
    }
}

/// Heap entry ordered so the binary max-heap pops the smallest
/// (distance, lexicographic path) pair first.
struct HeapEntry {
    dist: f64,
    path: Vec<NodeId>,
}

impl PartialEq for HeapEntry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for HeapEntry {}
impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .dist
            .total_cmp(&self.dist)
            .then_with(|| other.path.cmp(&self.path))
    }
}

/// Minimum-length path with a deterministic tie-break: among equal-length
/// paths, the lexicographically smallest node sequence wins.
pub fn shortest_path(graph: &RoadGraph, origin: NodeId, dest: NodeId) -> Result<Path, CoreError> {
    if !graph.contains(origin) {
        return Err(CoreError::UnknownNode(origin));
    }
    if !graph.contains(dest) {
        return Err(CoreError::UnknownNode(dest));
    }
    let mut settled: BTreeSet<NodeId> = BTreeSet::new();
    let mut heap = BinaryHeap::new();
    heap.push(HeapEntry { dist: 0.0, path: alloc::vec![origin] });
    while let Some(entry) = heap.pop() {
        let node = *entry.path.last().unwrap();
        if settled.contains(&node) {
            continue;
        }
        settled.insert(node);
        if node == dest {
            return Ok(Path { node_sequence: entry.path, total_length_mi: entry.dist });
        }
        for &(next, len) in graph.neighbors(node) {
            if !settled.contains(&next) {
                let mut path = entry.path.clone();
                path.push(next);
                heap.push(HeapEntry { dist: entry.dist + len, path });
            }
        }
    }
    Err(CoreError::NoPath { from: origin, to: dest })
}

/// Shortest-path distances (miles) from `origin` to every node within
/// `limit_mi`; `None` scans the whole component.
pub fn shortest_distances(
    graph: &RoadGraph,
    origin: NodeId,
    limit_mi: Option<f64>,
) -> Result<BTreeMap<NodeId, f64>, CoreError> {
    if !graph.contains(origin) {
        return Err(CoreError::UnknownNode(origin));
    }
    let mut dist: BTreeMap<NodeId, f64> = BTreeMap::new();
    let mut heap: BinaryHeap<HeapEntry> = BinaryHeap::new();
    heap.push(HeapEntry { dist: 0.0, path: alloc::vec![origin] });
    while let Some(entry) = heap.pop() {
        let node = *entry.path.last().unwrap();
        if dist.contains_key(&node) {
            continue;
        }
        if let Some(limit) = limit_mi {
            if entry.dist > limit {
                continue;
            }
        }
        dist.insert(node, entry.dist);
        for &(next, len) in graph.neighbors(node) {
            if !dist.contains_key(&next) {
                heap.push(HeapEntry { dist: entry.dist + len, path: alloc::vec![node, next] });
            }
        }
    }
    Ok(dist)
}

/// Minimum Euclidean distance in metres from a point (km coordinates) to
/// the path polyline.
pub fn distance_to_path(
    point_km: (f64, f64),
    path: &Path,
    graph: &RoadGraph,
) -> Result<f64, CoreError> {
    if path.node_sequence.is_empty() {
        return Err(CoreError::EmptyPath);
    }
    let mut best = f64::INFINITY;
    if path.node_sequence.len() == 1 {
        best = math::dist2d(point_km, graph.position(path.node_sequence[0])?);
    } else {
        for pair in path.node_sequence.windows(2) {
            let a = graph.position(pair[0])?;
            let b = graph.position(pair[1])?;
            best = best.min(math::point_segment_distance(point_km, a, b));
        }
    }
    Ok(best * 1000.0)
}

/// All chargers whose shortest-path distance from `position` is within
/// `range_mi`.
pub fn reachable_chargers(
    graph: &RoadGraph,
    position: NodeId,
    range_mi: f64,
) -> Result<BTreeSet<ChargerId>, CoreError> {
    let dist = shortest_distances(graph, position, Some(range_mi))?;
    let mut out = BTreeSet::new();
    for (node, charger) in graph.chargers() {
        if dist.get(&node).is_some_and(|d| *d <= range_mi) {
            out.insert(charger);
        }
    }
    Ok(out)
}

/// Chargers within range ordered by shortest-path distance (ties by id).
pub fn nearest_chargers(
    graph: &RoadGraph,
    position: NodeId,
    range_mi: f64,
    limit: usize,
) -> Result<Vec<(ChargerId, NodeId, f64)>, CoreError> {
    let dist = shortest_distances(graph, position, Some(range_mi))?;
    let mut found: Vec<(ChargerId, NodeId, f64)> = graph
        .chargers()
        .filter_map(|(node, charger)| {
            dist.get(&node)
                .filter(|d| **d <= range_mi)
                .map(|d| (charger, node, *d))
        })
        .collect();
    found.sort_by(|x, y| x.2.total_cmp(&y.2).then(x.0.cmp(&y.0)));
    found.truncate(limit);
    Ok(found)
}

impl Path {
    /// Checks the path is walkable in `graph` and its length matches the
    /// traversed edges.
    pub fn validate(&self, graph: &RoadGraph) -> Result<(), CoreError> {
        if self.node_sequence.is_empty() {
            return Err(CoreError::EmptyPath);
        }
        let mut sum = 0.0;
        for pair in self.node_sequence.windows(2) {
            sum += graph
                .edge_length(pair[0], pair[1])
                .ok_or_else(|| CoreError::InvalidGraph(format!(
                    "path uses missing edge {}-{}",
                    pair[0], pair[1]
                )))?;
        }
        if math::abs(sum - self.total_length_mi) > 1e-9 {
            return Err(CoreError::InvalidGraph(format!(
                "path length {} does not match edge sum {}",
                self.total_length_mi, sum
            )));
        }
        Ok(())
    }
}
