//! Road graph: an axis-aligned grid of directed edges joined at intersections.
//!
//! Networks are loaded from a TOML description (see `networks/default-grid.toml`)
//! and validated once; afterwards a [`RoadNetwork`] is immutable and can be
//! shared between concurrently running scenarios.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::Point;

pub type NodeId = u32;
pub type EdgeId = u32;

/// Lateral distance between adjacent lanes, in meters.
pub const DEFAULT_LANE_WIDTH: f64 = 3.5;

const DEFAULT_GRID: &str = include_str!("../../../networks/default-grid.toml");

/// Compass heading of a directed edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Heading {
    N,
    S,
    E,
    W,
}

impl Heading {
    pub fn unit(self) -> (f64, f64) {
        match self {
            Heading::N => (0.0, 1.0),
            Heading::S => (0.0, -1.0),
            Heading::E => (1.0, 0.0),
            Heading::W => (-1.0, 0.0),
        }
    }

    /// Unit vector pointing to the driver's left.
    pub fn left(self) -> (f64, f64) {
        let (x, y) = self.unit();
        (-y, x)
    }

    fn from_delta(dx: f64, dy: f64) -> Option<Heading> {
        const EPS: f64 = 1e-9;
        match (dx.abs() < EPS, dy.abs() < EPS) {
            (true, false) if dy > 0.0 => Some(Heading::N),
            (true, false) => Some(Heading::S),
            (false, true) if dx > 0.0 => Some(Heading::E),
            (false, true) => Some(Heading::W),
            _ => None,
        }
    }
}

impl fmt::Display for Heading {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Heading::N => "N",
            Heading::S => "S",
            Heading::E => "E",
            Heading::W => "W",
        };
        f.write_str(s)
    }
}

/// Where a vehicle goes once it clears its next intersection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NextDirection {
    Heading(Heading),
    Terminal,
}

impl NextDirection {
    /// Fixed order used to break ties between equally sized direction groups:
    /// E before N before S, with TERMINAL last.
    pub fn tie_order(self) -> u8 {
        match self {
            NextDirection::Heading(Heading::E) => 0,
            NextDirection::Heading(Heading::N) => 1,
            NextDirection::Heading(Heading::S) => 2,
            NextDirection::Heading(Heading::W) => 3,
            NextDirection::Terminal => 4,
        }
    }
}

impl fmt::Display for NextDirection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NextDirection::Heading(h) => write!(f, "{h}"),
            NextDirection::Terminal => f.write_str("TERMINAL"),
        }
    }
}

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("failed to read network file: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed network file: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("duplicate node id {0}")]
    DuplicateNode(NodeId),
    #[error("duplicate edge id {0}")]
    DuplicateEdge(EdgeId),
    #[error("edge {edge} references unknown node {node}")]
    UnknownNode { edge: EdgeId, node: NodeId },
    #[error("unknown node {0}")]
    NoSuchNode(NodeId),
    #[error("unknown edge {0}")]
    UnknownEdge(EdgeId),
    #[error("edge {0} is not axis-aligned or has zero length")]
    NotAxisAligned(EdgeId),
    #[error("edge {edge} declares heading {declared} but its endpoints run {actual}")]
    HeadingMismatch {
        edge: EdgeId,
        declared: Heading,
        actual: Heading,
    },
    #[error("edge {edge} declares length {declared} m but its endpoints are {actual} m apart")]
    LengthMismatch {
        edge: EdgeId,
        declared: f64,
        actual: f64,
    },
    #[error("edge {0} must have at least one lane")]
    NoLanes(EdgeId),
    #[error("two edges leave node {node} heading {heading}")]
    ParallelEdges { node: NodeId, heading: Heading },
    #[error("edge lengths sum to {actual} m, declared total is {declared} m")]
    TotalLengthMismatch { declared: f64, actual: f64 },
    #[error("turn rule at node {0} allows a westbound exit")]
    WestboundTurn(NodeId),
    #[error("turn rule at node {node} names heading {heading} with no matching edge")]
    TurnWithoutEdge { node: NodeId, heading: Heading },
    #[error("entry node {0} has no outgoing edge")]
    EntryWithoutOutgoing(NodeId),
    #[error("exit node {0} has no incoming edge")]
    ExitWithoutIncoming(NodeId),
    #[error("no exit is reachable from entry node {0}")]
    Disconnected(NodeId),
    #[error("vehicles arriving at node {node} heading {heading} have no legal continuation")]
    DeadEnd { node: NodeId, heading: Heading },
    #[error("turn rules allow a vehicle to loop through edge {0}")]
    Cycle(EdgeId),
    #[error("node {0} is not an entry node")]
    NotAnEntry(NodeId),
    #[error("position on edge {0} is not part of the route")]
    NotOnRoute(EdgeId),
    #[error("offset {offset} m is outside edge {edge}")]
    OffsetOutOfRange { edge: EdgeId, offset: f64 },
}

/// On-disk network description.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NetworkSpec {
    /// Declared sum of all edge lengths; checked to within 1 m when present.
    #[serde(default)]
    pub total_length: Option<f64>,
    #[serde(default = "default_lane_width")]
    pub lane_width: f64,
    pub entries: Vec<NodeId>,
    pub exits: Vec<NodeId>,
    pub nodes: Vec<NodeSpec>,
    pub edges: Vec<EdgeSpec>,
    #[serde(default)]
    pub turns: Vec<TurnSpec>,
}

fn default_lane_width() -> f64 {
    DEFAULT_LANE_WIDTH
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NodeSpec {
    pub id: NodeId,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EdgeSpec {
    pub id: EdgeId,
    pub from: NodeId,
    pub to: NodeId,
    pub length: f64,
    pub heading: Heading,
    #[serde(default = "default_lanes")]
    pub lanes: u8,
}

fn default_lanes() -> u8 {
    2
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TurnSpec {
    pub node: NodeId,
    pub incoming: Heading,
    pub outgoing: Vec<Heading>,
}

impl NetworkSpec {
    pub fn from_toml(text: &str) -> Result<Self, NetworkError> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self, NetworkError> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    /// The bundled 60 km grid.
    pub fn default_grid() -> Self {
        Self::from_toml(DEFAULT_GRID).expect("bundled network parses")
    }

    pub fn default_grid_text() -> &'static str {
        DEFAULT_GRID
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    pub id: EdgeId,
    pub from: NodeId,
    pub to: NodeId,
    pub length: f64,
    pub heading: Heading,
    pub lanes: u8,
}

/// Location of a vehicle on the network.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoutePosition {
    pub edge: EdgeId,
    pub offset: f64,
    pub lane: u8,
}

impl RoutePosition {
    pub fn new(edge: EdgeId, offset: f64, lane: u8) -> Self {
        Self { edge, offset, lane }
    }
}

/// Ordered edges from an entry node to an exit node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Route {
    pub edges: Vec<EdgeId>,
    pub exit: NodeId,
}

impl Route {
    pub fn index_of(&self, edge: EdgeId) -> Option<usize> {
        self.edges.iter().position(|&e| e == edge)
    }
}

/// Turn probabilities for the three vehicle groups.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TurnProbabilities {
    pub straight_only: f64,
    pub occasional: f64,
    pub frequent: f64,
}

impl Default for TurnProbabilities {
    fn default() -> Self {
        Self {
            straight_only: 0.0,
            occasional: 0.25,
            frequent: 0.75,
        }
    }
}

/// How eagerly a vehicle changes direction at intersections.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TurnProfile {
    StraightOnly,
    Occasional,
    Frequent,
}

impl TurnProfile {
    pub fn probability(self, p: &TurnProbabilities) -> f64 {
        match self {
            TurnProfile::StraightOnly => p.straight_only,
            TurnProfile::Occasional => p.occasional,
            TurnProfile::Frequent => p.frequent,
        }
    }
}

/// Validated, immutable road graph.
#[derive(Debug, Clone)]
pub struct RoadNetwork {
    nodes: BTreeMap<NodeId, Point>,
    edges: BTreeMap<EdgeId, Edge>,
    outgoing: BTreeMap<(NodeId, Heading), EdgeId>,
    turns: BTreeMap<(Heading, NodeId), BTreeSet<Heading>>,
    entries: Vec<NodeId>,
    exits: Vec<NodeId>,
    lane_width: f64,
    total_length: f64,
}

impl RoadNetwork {
    pub fn build(spec: &NetworkSpec) -> Result<Self, NetworkError> {
        let mut nodes = BTreeMap::new();
        for n in &spec.nodes {
            if nodes.insert(n.id, Point::new(n.x, n.y)).is_some() {
                return Err(NetworkError::DuplicateNode(n.id));
            }
        }

        let mut edges = BTreeMap::new();
        let mut outgoing = BTreeMap::new();
        for e in &spec.edges {
            let from = *nodes.get(&e.from).ok_or(NetworkError::UnknownNode {
                edge: e.id,
                node: e.from,
            })?;
            let to = *nodes.get(&e.to).ok_or(NetworkError::UnknownNode {
                edge: e.id,
                node: e.to,
            })?;
            let actual = Heading::from_delta(to.x - from.x, to.y - from.y)
                .ok_or(NetworkError::NotAxisAligned(e.id))?;
            if actual != e.heading {
                return Err(NetworkError::HeadingMismatch {
                    edge: e.id,
                    declared: e.heading,
                    actual,
                });
            }
            let dist = from.distance(to);
            if (dist - e.length).abs() > 1e-6 * dist.max(1.0) {
                return Err(NetworkError::LengthMismatch {
                    edge: e.id,
                    declared: e.length,
                    actual: dist,
                });
            }
            if e.lanes == 0 {
                return Err(NetworkError::NoLanes(e.id));
            }
            if outgoing.insert((e.from, e.heading), e.id).is_some() {
                return Err(NetworkError::ParallelEdges {
                    node: e.from,
                    heading: e.heading,
                });
            }
            let edge = Edge {
                id: e.id,
                from: e.from,
                to: e.to,
                length: e.length,
                heading: e.heading,
                lanes: e.lanes,
            };
            if edges.insert(e.id, edge).is_some() {
                return Err(NetworkError::DuplicateEdge(e.id));
            }
        }

        let total_length: f64 = edges.values().map(|e| e.length).sum();
        if let Some(declared) = spec.total_length {
            if (declared - total_length).abs() > 1.0 {
                return Err(NetworkError::TotalLengthMismatch {
                    declared,
                    actual: total_length,
                });
            }
        }

        let incoming_headings: BTreeSet<(NodeId, Heading)> =
            edges.values().map(|e| (e.to, e.heading)).collect();
        let mut turns: BTreeMap<(Heading, NodeId), BTreeSet<Heading>> = BTreeMap::new();
        for t in &spec.turns {
            if !nodes.contains_key(&t.node) {
                return Err(NetworkError::NoSuchNode(t.node));
            }
            if !incoming_headings.contains(&(t.node, t.incoming)) {
                return Err(NetworkError::TurnWithoutEdge {
                    node: t.node,
                    heading: t.incoming,
                });
            }
            let set = turns.entry((t.incoming, t.node)).or_default();
            for &h in &t.outgoing {
                if h == Heading::W {
                    return Err(NetworkError::WestboundTurn(t.node));
                }
                if !outgoing.contains_key(&(t.node, h)) {
                    return Err(NetworkError::TurnWithoutEdge {
                        node: t.node,
                        heading: h,
                    });
                }
                set.insert(h);
            }
        }

        for &n in &spec.entries {
            if !nodes.contains_key(&n) {
                return Err(NetworkError::NoSuchNode(n));
            }
            if !edges.values().any(|e| e.from == n) {
                return Err(NetworkError::EntryWithoutOutgoing(n));
            }
        }
        for &n in &spec.exits {
            if !nodes.contains_key(&n) {
                return Err(NetworkError::NoSuchNode(n));
            }
            if !edges.values().any(|e| e.to == n) {
                return Err(NetworkError::ExitWithoutIncoming(n));
            }
        }

        let net = RoadNetwork {
            nodes,
            edges,
            outgoing,
            turns,
            entries: spec.entries.clone(),
            exits: spec.exits.clone(),
            lane_width: spec.lane_width,
            total_length,
        };
        net.check_reachability()?;
        Ok(net)
    }

    /// The bundled 60 km grid with four entries and four exits.
    pub fn default_grid() -> Self {
        Self::build(&NetworkSpec::default_grid()).expect("bundled network is valid")
    }

    /// Every edge reachable from an entry must lead on (or end at an exit),
    /// every entry must reach an exit, and no route may revisit an edge.
    fn check_reachability(&self) -> Result<(), NetworkError> {
        #[derive(Clone, Copy, PartialEq)]
        enum Mark {
            Active,
            Done,
        }
        let mut marks: BTreeMap<EdgeId, Mark> = BTreeMap::new();
        let mut reaches_exit: BTreeMap<EdgeId, bool> = BTreeMap::new();

        // Iterative DFS over edge states; the successor relation is fixed by the turn map.
        fn visit(
            net: &RoadNetwork,
            start: EdgeId,
            marks: &mut BTreeMap<EdgeId, Mark>,
            reaches_exit: &mut BTreeMap<EdgeId, bool>,
        ) -> Result<(), NetworkError> {
            let mut stack: Vec<(EdgeId, Vec<EdgeId>)> = Vec::new();
            if marks.contains_key(&start) {
                return Ok(());
            }
            marks.insert(start, Mark::Active);
            stack.push((start, net.successors(start)?));
            while let Some((edge, pending)) = stack.last_mut() {
                let edge = *edge;
                if let Some(next) = pending.pop() {
                    match marks.get(&next) {
                        Some(Mark::Active) => return Err(NetworkError::Cycle(next)),
                        Some(Mark::Done) => {}
                        None => {
                            marks.insert(next, Mark::Active);
                            let succ = net.successors(next)?;
                            stack.push((next, succ));
                        }
                    }
                } else {
                    stack.pop();
                    marks.insert(edge, Mark::Done);
                    let e = &net.edges[&edge];
                    let ok = net.exits.contains(&e.to)
                        || net
                            .successors(edge)?
                            .iter()
                            .any(|s| reaches_exit.get(s).copied().unwrap_or(false));
                    reaches_exit.insert(edge, ok);
                }
            }
            Ok(())
        }

        for &entry in &self.entries {
            let starts: Vec<EdgeId> = self
                .edges
                .values()
                .filter(|e| e.from == entry)
                .map(|e| e.id)
                .collect();
            for &s in &starts {
                visit(self, s, &mut marks, &mut reaches_exit)?;
            }
            if !starts.iter().any(|s| reaches_exit[s]) {
                return Err(NetworkError::Disconnected(entry));
            }
        }
        Ok(())
    }

    /// Edges a vehicle may take after `edge`; errors on a dead end.
    fn successors(&self, edge: EdgeId) -> Result<Vec<EdgeId>, NetworkError> {
        let e = &self.edges[&edge];
        if self.exits.contains(&e.to) {
            return Ok(Vec::new());
        }
        let allowed = self.allowed_turns(e.heading, e.to);
        if allowed.is_empty() {
            return Err(NetworkError::DeadEnd {
                node: e.to,
                heading: e.heading,
            });
        }
        Ok(allowed.iter().map(|h| self.outgoing[&(e.to, *h)]).collect())
    }

    pub fn allowed_turns(&self, incoming: Heading, node: NodeId) -> BTreeSet<Heading> {
        self.turns
            .get(&(incoming, node))
            .cloned()
            .unwrap_or_default()
    }

    pub fn edge(&self, id: EdgeId) -> Result<&Edge, NetworkError> {
        self.edges.get(&id).ok_or(NetworkError::UnknownEdge(id))
    }

    pub fn edges(&self) -> impl Iterator<Item = &Edge> {
        self.edges.values()
    }

    pub fn node(&self, id: NodeId) -> Result<Point, NetworkError> {
        self.nodes
            .get(&id)
            .copied()
            .ok_or(NetworkError::NoSuchNode(id))
    }

    pub fn outgoing_edge(&self, node: NodeId, heading: Heading) -> Option<EdgeId> {
        self.outgoing.get(&(node, heading)).copied()
    }

    pub fn entries(&self) -> &[NodeId] {
        &self.entries
    }

    pub fn exits(&self) -> &[NodeId] {
        &self.exits
    }

    pub fn total_length(&self) -> f64 {
        self.total_length
    }

    pub fn lane_width(&self) -> f64 {
        self.lane_width
    }

    /// Planar coordinates of a route position, shifted one lane width to the
    /// left of the heading per lane index.
    pub fn planar_position(&self, pos: &RoutePosition) -> Result<Point, NetworkError> {
        let edge = self.edge(pos.edge)?;
        let start = self.nodes[&edge.from];
        Ok(start
            .offset(edge.heading.unit(), pos.offset)
            .offset(edge.heading.left(), self.lane_width * f64::from(pos.lane)))
    }

    /// End node of the current edge and the distance left to reach it.
    pub fn next_intersection(
        &self,
        route: &Route,
        pos: &RoutePosition,
    ) -> Result<(NodeId, f64), NetworkError> {
        if route.index_of(pos.edge).is_none() {
            return Err(NetworkError::NotOnRoute(pos.edge));
        }
        let edge = self.edge(pos.edge)?;
        Ok((edge.to, (edge.length - pos.offset).max(0.0)))
    }

    pub fn direction_after_next_intersection(
        &self,
        route: &Route,
        pos: &RoutePosition,
    ) -> Result<NextDirection, NetworkError> {
        let idx = route
            .index_of(pos.edge)
            .ok_or(NetworkError::NotOnRoute(pos.edge))?;
        match route.edges.get(idx + 1) {
            Some(&next) => Ok(NextDirection::Heading(self.edge(next)?.heading)),
            None => Ok(NextDirection::Terminal),
        }
    }

    /// Walks the graph from `entry`, turning at each intersection with
    /// probability `turn_probability` (uniformly among legal turns) and
    /// otherwise continuing straight, until an exit is reached.
    pub fn sample_route<R: Rng + ?Sized>(
        &self,
        entry: NodeId,
        turn_probability: f64,
        rng: &mut R,
    ) -> Result<Route, NetworkError> {
        if !self.entries.contains(&entry) {
            return Err(NetworkError::NotAnEntry(entry));
        }
        let starts: Vec<EdgeId> = self
            .edges
            .values()
            .filter(|e| e.from == entry)
            .map(|e| e.id)
            .collect();
        let first = if starts.len() == 1 {
            starts[0]
        } else {
            starts[rng.random_range(0..starts.len())]
        };

        let mut edges = vec![first];
        let limit = self.edges.len();
        loop {
            let current = &self.edges[edges.last().expect("route is non-empty")];
            if self.exits.contains(&current.to) {
                return Ok(Route {
                    edges,
                    exit: current.to,
                });
            }
            let allowed = self.allowed_turns(current.heading, current.to);
            let straight = allowed.contains(&current.heading);
            let turns: Vec<Heading> = allowed
                .iter()
                .copied()
                .filter(|&h| h != current.heading)
                .collect();
            let next_heading = match (straight, turns.is_empty()) {
                (_, true) if straight => current.heading,
                (_, true) => {
                    return Err(NetworkError::DeadEnd {
                        node: current.to,
                        heading: current.heading,
                    })
                }
                (false, false) => turns[rng.random_range(0..turns.len())],
                (true, false) => {
                    if rng.random::<f64>() < turn_probability {
                        turns[rng.random_range(0..turns.len())]
                    } else {
                        current.heading
                    }
                }
            };
            edges.push(self.outgoing[&(current.to, next_heading)]);
            if edges.len() > limit {
                return Err(NetworkError::Cycle(*edges.last().unwrap()));
            }
        }
    }

    /// Checks that consecutive edges connect and respect the turn map.
    pub fn route_is_legal(&self, route: &Route) -> bool {
        let Some(&first) = route.edges.first() else {
            return false;
        };
        let Ok(e0) = self.edge(first) else {
            return false;
        };
        if !self.entries.contains(&e0.from) {
            return false;
        }
        for pair in route.edges.windows(2) {
            let (Ok(a), Ok(b)) = (self.edge(pair[0]), self.edge(pair[1])) else {
                return false;
            };
            if a.to != b.from || !self.allowed_turns(a.heading, a.to).contains(&b.heading) {
                return false;
            }
        }
        let last = self.edges[route.edges.last().unwrap()].to;
        last == route.exit && self.exits.contains(&last)
    }

    /// Offset the position would have after moving `distance` meters further,
    /// as long as it stays on the current edge.
    pub fn validate_position(&self, pos: &RoutePosition) -> Result<(), NetworkError> {
        let edge = self.edge(pos.edge)?;
        if pos.offset < 0.0 || pos.offset > edge.length + 1e-9 {
            return Err(NetworkError::OffsetOutOfRange {
                edge: pos.edge,
                offset: pos.offset,
            });
        }
        Ok(())
    }
}
