//! Grid road network: intersections, directed links, boundary zones (TAZs) and
//! the mapping from inter-intersection links to state-matrix cells.
//!
//! Intersections are numbered row-major, row 0 on the north edge and column 0 on
//! the west edge. Node ids `0..M` are intersections; TAZ nodes follow at `M..`.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TopologyError {
    #[error("grid dimensions must be positive, got {rows}x{cols}")]
    BadDimensions { rows: usize, cols: usize },
    #[error("link length must be positive, got {0}")]
    BadLength(f64),
    #[error("free-flow speed must be positive, got {0}")]
    BadSpeed(f64),
    #[error("unsupported network config format_version {0}")]
    FormatVersion(u32),
    #[error("unknown TAZ '{0}'")]
    UnknownTaz(String),
    #[error("origin and destination are the same TAZ ({0})")]
    SameOriginDestination(String),
    #[error("no route from {from} to {to}")]
    Unreachable { from: String, to: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NodeId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct IntersectionId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LinkId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TazId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    Eastbound,
    Westbound,
    Northbound,
    Southbound,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    NorthSouth,
    EastWest,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Movement {
    Left,
    Straight,
    Right,
}

impl Movement {
    pub const ALL: [Movement; 3] = [Movement::Straight, Movement::Left, Movement::Right];

    pub fn as_str(self) -> &'static str {
        match self {
            Movement::Left => "left",
            Movement::Straight => "straight",
            Movement::Right => "right",
        }
    }

    pub fn index(self) -> usize {
        match self {
            Movement::Straight => 0,
            Movement::Left => 1,
            Movement::Right => 2,
        }
    }
}

impl Orientation {
    pub fn axis(self) -> Axis {
        match self {
            Orientation::Eastbound | Orientation::Westbound => Axis::EastWest,
            Orientation::Northbound | Orientation::Southbound => Axis::NorthSouth,
        }
    }

    pub fn opposite(self) -> Orientation {
        match self {
            Orientation::Eastbound => Orientation::Westbound,
            Orientation::Westbound => Orientation::Eastbound,
            Orientation::Northbound => Orientation::Southbound,
            Orientation::Southbound => Orientation::Northbound,
        }
    }

    /// Compass heading in quarter turns clockwise from north.
    fn heading(self) -> u8 {
        match self {
            Orientation::Northbound => 0,
            Orientation::Eastbound => 1,
            Orientation::Southbound => 2,
            Orientation::Westbound => 3,
        }
    }

    /// Turning movement from a link with this orientation onto one with `next`.
    /// `None` for a U-turn.
    pub fn movement_to(self, next: Orientation) -> Option<Movement> {
        match (next.heading() + 4 - self.heading()) % 4 {
            0 => Some(Movement::Straight),
            1 => Some(Movement::Right),
            3 => Some(Movement::Left),
            _ => None,
        }
    }
}

/// Lanes at the downstream approach of a link. Fixed at two straight lanes, one
/// left-turn lane and one right-turn lane.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApproachLanes {
    pub straight: u8,
    pub left: u8,
    pub right: u8,
}

impl ApproachLanes {
    pub const STANDARD: ApproachLanes = ApproachLanes {
        straight: 2,
        left: 1,
        right: 1,
    };

    pub fn for_movement(&self, movement: Movement) -> u8 {
        match movement {
            Movement::Straight => self.straight,
            Movement::Left => self.left,
            Movement::Right => self.right,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkKind {
    /// Between two signalized intersections; has a state-matrix cell.
    Internal,
    /// From a boundary zone into the grid.
    Approach(TazId),
    /// From the grid out to a boundary zone.
    Exit(TazId),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkSpec {
    pub id: LinkId,
    pub from: NodeId,
    pub to: NodeId,
    pub length_m: f64,
    pub free_flow_speed_mps: f64,
    pub lanes: ApproachLanes,
    pub orientation: Orientation,
    pub kind: LinkKind,
}

impl LinkSpec {
    pub fn free_flow_time_s(&self) -> f64 {
        self.length_m / self.free_flow_speed_mps
    }

    pub fn is_internal(&self) -> bool {
        self.kind == LinkKind::Internal
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntersectionSpec {
    pub id: IntersectionId,
    pub row: usize,
    pub col: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TazSide {
    West,
    East,
    North,
    South,
}

impl TazSide {
    fn prefix(self) -> char {
        match self {
            TazSide::West => 'W',
            TazSide::East => 'E',
            TazSide::North => 'N',
            TazSide::South => 'S',
        }
    }

    /// Direction of travel on the link from this zone into the grid.
    fn inbound(self) -> Orientation {
        match self {
            TazSide::West => Orientation::Eastbound,
            TazSide::East => Orientation::Westbound,
            TazSide::North => Orientation::Southbound,
            TazSide::South => Orientation::Northbound,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TazRole {
    Source,
    Sink,
    Both,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TazSpec {
    pub id: TazId,
    /// `W0`, `E2`, `N1`, ... side letter plus row (W/E) or column (N/S).
    pub name: String,
    pub side: TazSide,
    pub node: NodeId,
    pub attached: IntersectionId,
    pub role: TazRole,
    pub approach_link: LinkId,
    pub exit_link: LinkId,
}

/// Network configuration file contents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    #[serde(default = "default_format_version")]
    pub format_version: u32,
    pub grid_rows: usize,
    pub grid_cols: usize,
    pub link_length_m: f64,
    pub free_flow_speed_mps: f64,
}

fn default_format_version() -> u32 {
    1
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            format_version: 1,
            grid_rows: 3,
            grid_cols: 3,
            link_length_m: 300.0,
            free_flow_speed_mps: 13.89,
        }
    }
}

impl NetworkConfig {
    pub fn build(&self) -> Result<NetworkTopology, TopologyError> {
        if self.format_version != 1 {
            return Err(TopologyError::FormatVersion(self.format_version));
        }
        build_grid(
            self.grid_rows,
            self.grid_cols,
            self.link_length_m,
            self.free_flow_speed_mps,
        )
    }
}

/// An ordered list of links from an origin zone to a destination zone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Route {
    pub links: Vec<LinkId>,
    /// `movements[k]` is the turn made at the downstream end of `links[k]`;
    /// one entry fewer than `links`.
    pub movements: Vec<Movement>,
}

impl Route {
    pub fn movement_after(&self, position: usize) -> Option<Movement> {
        self.movements.get(position).copied()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkTopology {
    pub grid_rows: usize,
    pub grid_cols: usize,
    pub intersections: Vec<IntersectionSpec>,
    pub links: Vec<LinkSpec>,
    pub tazs: Vec<TazSpec>,
    internal_links: Vec<LinkId>,
    incoming: Vec<Vec<LinkId>>,
    outgoing: Vec<Vec<LinkId>>,
    cells: HashMap<(usize, usize), LinkId>,
}

/// Builds a `rows x cols` grid with bidirectional links on every grid edge and
/// one boundary zone per perimeter approach.
pub fn build_grid(
    rows: usize,
    cols: usize,
    link_length_m: f64,
    free_flow_speed_mps: f64,
) -> Result<NetworkTopology, TopologyError> {
    if rows == 0 || cols == 0 {
        return Err(TopologyError::BadDimensions { rows, cols });
    }
    if !(link_length_m > 0.0) || !link_length_m.is_finite() {
        return Err(TopologyError::BadLength(link_length_m));
    }
    if !(free_flow_speed_mps > 0.0) || !free_flow_speed_mps.is_finite() {
        return Err(TopologyError::BadSpeed(free_flow_speed_mps));
    }

    let m = rows * cols;
    let intersections: Vec<IntersectionSpec> = (0..m)
        .map(|i| IntersectionSpec {
            id: IntersectionId(i),
            row: i / cols,
            col: i % cols,
        })
        .collect();

    let mut links = Vec::new();
    let push_link = |links: &mut Vec<LinkSpec>, from, to, orientation, kind| {
        let id = LinkId(links.len());
        links.push(LinkSpec {
            id,
            from: NodeId(from),
            to: NodeId(to),
            length_m: link_length_m,
            free_flow_speed_mps,
            lanes: ApproachLanes::STANDARD,
            orientation,
            kind,
        });
        id
    };

    // Inter-intersection links in lexicographic (from, to) order.
    for i in 0..m {
        let (r, c) = (i / cols, i % cols);
        if r > 0 {
            push_link(&mut links, i, i - cols, Orientation::Northbound, LinkKind::Internal);
        }
        if c > 0 {
            push_link(&mut links, i, i - 1, Orientation::Westbound, LinkKind::Internal);
        }
        if c + 1 < cols {
            push_link(&mut links, i, i + 1, Orientation::Eastbound, LinkKind::Internal);
        }
        if r + 1 < rows {
            push_link(&mut links, i, i + cols, Orientation::Southbound, LinkKind::Internal);
        }
    }

    let mut zones: Vec<(TazSide, usize, usize)> = Vec::new();
    zones.extend((0..rows).map(|r| (TazSide::West, r, r * cols)));
    zones.extend((0..rows).map(|r| (TazSide::East, r, r * cols + cols - 1)));
    zones.extend((0..cols).map(|c| (TazSide::North, c, c)));
    zones.extend((0..cols).map(|c| (TazSide::South, c, (rows - 1) * cols + c)));

    let approach_ids: Vec<LinkId> = zones
        .iter()
        .enumerate()
        .map(|(k, &(side, _, attached))| {
            push_link(
                &mut links,
                m + k,
                attached,
                side.inbound(),
                LinkKind::Approach(TazId(k)),
            )
        })
        .collect();
    let exit_ids: Vec<LinkId> = zones
        .iter()
        .enumerate()
        .map(|(k, &(side, _, attached))| {
            push_link(
                &mut links,
                attached,
                m + k,
                side.inbound().opposite(),
                LinkKind::Exit(TazId(k)),
            )
        })
        .collect();

    let tazs = zones
        .iter()
        .enumerate()
        .map(|(k, &(side, index, attached))| TazSpec {
            id: TazId(k),
            name: format!("{}{}", side.prefix(), index),
            side,
            node: NodeId(m + k),
            attached: IntersectionId(attached),
            role: TazRole::Both,
            approach_link: approach_ids[k],
            exit_link: exit_ids[k],
        })
        .collect();

    let node_count = m + zones.len();
    let mut incoming = vec![Vec::new(); node_count];
    let mut outgoing = vec![Vec::new(); node_count];
    let mut cells = HashMap::new();
    let mut internal_links = Vec::new();
    for link in &links {
        incoming[link.to.0].push(link.id);
        outgoing[link.from.0].push(link.id);
        if link.is_internal() {
            internal_links.push(link.id);
            cells.insert((link.from.0, link.to.0), link.id);
        }
    }

    Ok(NetworkTopology {
        grid_rows: rows,
        grid_cols: cols,
        intersections,
        links,
        tazs,
        internal_links,
        incoming,
        outgoing,
        cells,
    })
}

/// State-matrix cell of a link: (upstream intersection, downstream intersection).
/// Links touching a boundary zone have no cell.
pub fn matrix_cell(link: &LinkSpec) -> Option<(usize, usize)> {
    match link.kind {
        LinkKind::Internal => Some((link.from.0, link.to.0)),
        LinkKind::Approach(_) | LinkKind::Exit(_) => None,
    }
}

impl NetworkTopology {
    /// Number of signalized intersections (`M`).
    pub fn intersection_count(&self) -> usize {
        self.intersections.len()
    }

    /// Number of inter-intersection links (`L`).
    pub fn internal_link_count(&self) -> usize {
        self.internal_links.len()
    }

    pub fn internal_links(&self) -> &[LinkId] {
        &self.internal_links
    }

    pub fn link(&self, id: LinkId) -> &LinkSpec {
        &self.links[id.0]
    }

    pub fn taz(&self, id: TazId) -> &TazSpec {
        &self.tazs[id.0]
    }

    pub fn taz_by_name(&self, name: &str) -> Result<TazId, TopologyError> {
        self.tazs
            .iter()
            .find(|t| t.name == name)
            .map(|t| t.id)
            .ok_or_else(|| TopologyError::UnknownTaz(name.to_string()))
    }

    /// Links entering an intersection, ascending by id.
    pub fn incoming(&self, intersection: IntersectionId) -> &[LinkId] {
        &self.incoming[intersection.0]
    }

    pub fn outgoing(&self, intersection: IntersectionId) -> &[LinkId] {
        &self.outgoing[intersection.0]
    }

    /// Links leaving any node, intersection or zone.
    pub fn node_outgoing(&self, node: NodeId) -> &[LinkId] {
        &self.outgoing[node.0]
    }

    pub fn is_intersection(&self, node: NodeId) -> bool {
        node.0 < self.intersections.len()
    }

    pub fn link_at_cell(&self, row: usize, col: usize) -> Option<LinkId> {
        self.cells.get(&(row, col)).copied()
    }

    /// Human-readable link label, e.g. `0>1`, `W0>0`, `2>E0`.
    pub fn link_label(&self, id: LinkId) -> String {
        let link = self.link(id);
        format!("{}>{}", self.node_label(link.from), self.node_label(link.to))
    }

    pub fn node_label(&self, node: NodeId) -> String {
        if self.is_intersection(node) {
            node.0.to_string()
        } else {
            self.tazs[node.0 - self.intersections.len()].name.clone()
        }
    }

    pub fn link_by_label(&self, label: &str) -> Option<LinkId> {
        (0..self.links.len())
            .map(LinkId)
            .find(|&id| self.link_label(id) == label)
    }

    /// Minimum free-flow-time route; ties go to the lexicographically smallest
    /// node-id sequence. Boundary zones other than the endpoints are never
    /// traversed.
    pub fn shortest_route(&self, origin: TazId, destination: TazId) -> Result<Route, TopologyError> {
        if origin.0 >= self.tazs.len() {
            return Err(TopologyError::UnknownTaz(format!("#{}", origin.0)));
        }
        if destination.0 >= self.tazs.len() {
            return Err(TopologyError::UnknownTaz(format!("#{}", destination.0)));
        }
        if origin == destination {
            return Err(TopologyError::SameOriginDestination(
                self.taz(origin).name.clone(),
            ));
        }
        let source = self.taz(origin).node;
        let target = self.taz(destination).node;

        // Link costs in microseconds keep tie detection exact.
        let cost = |l: LinkId| (self.link(l).free_flow_time_s() * 1e6).round() as u64;
        let mut best: HashMap<NodeId, (u64, Vec<usize>)> = HashMap::new();
        let mut heap = BinaryHeap::new();
        best.insert(source, (0, vec![source.0]));
        heap.push(Reverse((0u64, vec![source.0])));

        while let Some(Reverse((dist, path))) = heap.pop() {
            let node = NodeId(*path.last().expect("non-empty path"));
            if best.get(&node).map_or(false, |b| (b.0, &b.1) < (dist, &path)) {
                continue;
            }
            if node == target {
                return Ok(self.route_from_nodes(&path));
            }
            if node != source && !self.is_intersection(node) {
                continue;
            }
            for &l in &self.outgoing[node.0] {
                let next = self.link(l).to;
                let next_dist = dist + cost(l);
                let mut next_path = path.clone();
                next_path.push(next.0);
                let better = match best.get(&next) {
                    None => true,
                    Some((d, p)) => (next_dist, &next_path) < (*d, p),
                };
                if better {
                    best.insert(next, (next_dist, next_path.clone()));
                    heap.push(Reverse((next_dist, next_path)));
                }
            }
        }
        Err(TopologyError::Unreachable {
            from: self.taz(origin).name.clone(),
            to: self.taz(destination).name.clone(),
        })
    }

    fn route_from_nodes(&self, nodes: &[usize]) -> Route {
        let links: Vec<LinkId> = nodes
            .windows(2)
            .map(|w| {
                *self.outgoing[w[0]]
                    .iter()
                    .find(|&&l| self.link(l).to.0 == w[1])
                    .expect("consecutive nodes are linked")
            })
            .collect();
        let movements = links
            .windows(2)
            .map(|w| {
                self.link(w[0])
                    .orientation
                    .movement_to(self.link(w[1]).orientation)
                    .expect("simple grid paths never U-turn")
            })
            .collect();
        Route { links, movements }
    }
}

impl fmt::Display for LinkId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "L{}", self.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn grid3() -> NetworkTopology {
        build_grid(3, 3, 300.0, 13.89).unwrap()
    }

    #[test]
    fn three_by_three_has_nine_intersections() {
        let t = grid3();
        assert_eq!(t.intersection_count(), 9);
        assert_eq!(t.tazs.len(), 12);
    }

    #[test]
    fn single_node_grid_has_only_boundary_links() {
        let t = build_grid(1, 1, 300.0, 13.89).unwrap();
        assert_eq!(t.intersection_count(), 1);
        assert_eq!(t.internal_link_count(), 0);
        let approaches = t
            .links
            .iter()
            .filter(|l| matches!(l.kind, LinkKind::Approach(_)))
            .count();
        assert_eq!(approaches, 4);
    }

    #[test]
    fn internal_link_count_matches_edge_enumeration() {
        for (rows, cols) in [(1, 2), (2, 2), (3, 3), (2, 5), (4, 3)] {
            let t = build_grid(rows, cols, 300.0, 13.89).unwrap();
            let mut edges = 0;
            for r in 0..rows {
                for c in 0..cols {
                    if c + 1 < cols {
                        edges += 1;
                    }
                    if r + 1 < rows {
                        edges += 1;
                    }
                }
            }
            assert_eq!(t.internal_link_count(), 2 * edges, "{rows}x{cols}");
        }
        assert_eq!(grid3().internal_link_count(), 24);
    }

    #[test]
    fn bad_dimensions_rejected() {
        assert!(matches!(
            build_grid(0, 3, 300.0, 13.89),
            Err(TopologyError::BadDimensions { .. })
        ));
        assert!(matches!(
            build_grid(3, 3, 0.0, 13.89),
            Err(TopologyError::BadLength(_))
        ));
        assert!(matches!(
            build_grid(3, 3, 300.0, -1.0),
            Err(TopologyError::BadSpeed(_))
        ));
    }

    #[test]
    fn interior_nodes_have_four_link_pairs() {
        let t = grid3();
        let centre = IntersectionId(4);
        assert_eq!(t.incoming(centre).len(), 4);
        assert_eq!(t.outgoing(centre).len(), 4);
        for l in t.incoming(centre) {
            assert!(t.link(*l).is_internal());
        }
    }

    #[test]
    fn matrix_cells_follow_link_direction() {
        let t = grid3();
        let l01 = t.link_at_cell(0, 1).unwrap();
        assert_eq!(matrix_cell(t.link(l01)), Some((0, 1)));
        let l10 = t.link_at_cell(1, 0).unwrap();
        assert_eq!(matrix_cell(t.link(l10)), Some((1, 0)));
        assert_eq!(t.link(l01).orientation, Orientation::Eastbound);
    }

    #[test]
    fn boundary_links_have_no_cell() {
        let t = grid3();
        for link in &t.links {
            if !link.is_internal() {
                assert_eq!(matrix_cell(link), None);
            }
        }
    }

    #[test]
    fn cells_are_a_bijection_onto_grid_adjacency() {
        for (rows, cols) in [(1, 2), (3, 3), (2, 4)] {
            let t = build_grid(rows, cols, 300.0, 13.89).unwrap();
            let cells: HashSet<(usize, usize)> = t
                .internal_links()
                .iter()
                .map(|&l| matrix_cell(t.link(l)).unwrap())
                .collect();
            assert_eq!(cells.len(), t.internal_link_count());
            let m = rows * cols;
            let mut adjacency = HashSet::new();
            for i in 0..m {
                for j in 0..m {
                    let (ri, ci, rj, cj) = (i / cols, i % cols, j / cols, j % cols);
                    if ri.abs_diff(rj) + ci.abs_diff(cj) == 1 {
                        adjacency.insert((i, j));
                    }
                }
            }
            assert_eq!(cells, adjacency);
            assert!(cells.iter().all(|(r, c)| r != c));
        }
    }

    #[test]
    fn turn_classification() {
        use Orientation::*;
        assert_eq!(Eastbound.movement_to(Eastbound), Some(Movement::Straight));
        assert_eq!(Eastbound.movement_to(Northbound), Some(Movement::Left));
        assert_eq!(Eastbound.movement_to(Southbound), Some(Movement::Right));
        assert_eq!(Eastbound.movement_to(Westbound), None);
        assert_eq!(Southbound.movement_to(Eastbound), Some(Movement::Left));
        assert_eq!(Northbound.movement_to(Eastbound), Some(Movement::Right));
    }

    #[test]
    fn west_to_east_route_is_straight() {
        let t = grid3();
        let w1 = t.taz_by_name("W1").unwrap();
        let e1 = t.taz_by_name("E1").unwrap();
        let route = t.shortest_route(w1, e1).unwrap();
        assert_eq!(route.links.len(), 4);
        assert!(route.movements.iter().all(|&m| m == Movement::Straight));
        let labels: Vec<String> = route.links.iter().map(|&l| t.link_label(l)).collect();
        assert_eq!(labels, ["W1>3", "3>4", "4>5", "5>E1"]);
    }

    #[test]
    fn same_origin_destination_is_an_error() {
        let t = grid3();
        let w0 = t.taz_by_name("W0").unwrap();
        assert!(matches!(
            t.shortest_route(w0, w0),
            Err(TopologyError::SameOriginDestination(_))
        ));
    }

    /// Enumerate every simple path between two zones and keep the cheapest,
    /// breaking ties by node sequence.
    fn brute_force_route(t: &NetworkTopology, o: TazId, d: TazId) -> Vec<usize> {
        fn dfs(
            t: &NetworkTopology,
            node: usize,
            target: usize,
            path: &mut Vec<usize>,
            cost: u64,
            best: &mut Option<(u64, Vec<usize>)>,
        ) {
            if node == target {
                let cand = (cost, path.clone());
                if best.as_ref().map_or(true, |b| cand < *b) {
                    *best = Some(cand);
                }
                return;
            }
            if path.len() > 1 && !t.is_intersection(NodeId(node)) {
                return;
            }
            for &l in t.node_outgoing(NodeId(node)) {
                let next = t.link(l).to.0;
                if path.contains(&next) {
                    continue;
                }
                path.push(next);
                let c = (t.link(l).free_flow_time_s() * 1e6).round() as u64;
                dfs(t, next, target, path, cost + c, best);
                path.pop();
            }
        }
        let (s, g) = (t.taz(o).node.0, t.taz(d).node.0);
        let mut best = None;
        dfs(t, s, g, &mut vec![s], 0, &mut best);
        best.unwrap().1
    }

    #[test]
    fn routes_match_exhaustive_enumeration() {
        let t = grid3();
        for o in 0..t.tazs.len() {
            for d in 0..t.tazs.len() {
                if o == d {
                    continue;
                }
                let route = t.shortest_route(TazId(o), TazId(d)).unwrap();
                let mut nodes = vec![t.link(route.links[0]).from.0];
                nodes.extend(route.links.iter().map(|&l| t.link(l).to.0));
                assert_eq!(nodes, brute_force_route(&t, TazId(o), TazId(d)), "{o}->{d}");
            }
        }
    }

    #[test]
    fn corner_to_corner_route_is_a_monotone_staircase() {
        let t = grid3();
        let w0 = t.taz_by_name("W0").unwrap();
        let e2 = t.taz_by_name("E2").unwrap();
        let route = t.shortest_route(w0, e2).unwrap();
        // 1 approach + 4 internal + 1 exit
        assert_eq!(route.links.len(), 6);
        for &l in &route.links[1..route.links.len() - 1] {
            let o = t.link(l).orientation;
            assert!(o == Orientation::Eastbound || o == Orientation::Southbound);
        }
    }

    #[test]
    fn routes_are_connected_and_acyclic() {
        let t = build_grid(2, 4, 250.0, 12.0).unwrap();
        for o in 0..t.tazs.len() {
            for d in 0..t.tazs.len() {
                if o == d {
                    continue;
                }
                let route = t.shortest_route(TazId(o), TazId(d)).unwrap();
                let mut seen = HashSet::new();
                seen.insert(t.link(route.links[0]).from);
                for w in route.links.windows(2) {
                    assert_eq!(t.link(w[0]).to, t.link(w[1]).from);
                }
                for &l in &route.links {
                    assert!(seen.insert(t.link(l).to), "node revisited");
                }
                assert_eq!(route.movements.len(), route.links.len() - 1);
            }
        }
    }

    #[test]
    fn network_config_roundtrip() {
        let json = r#"{"format_version":1,"grid_rows":2,"grid_cols":3,"link_length_m":250.0,"free_flow_speed_mps":12.5}"#;
        let cfg: NetworkConfig = serde_json::from_str(json).unwrap();
        let t = cfg.build().unwrap();
        assert_eq!(t.intersection_count(), 6);
        let bad = NetworkConfig {
            format_version: 9,
            ..cfg
        };
        assert!(matches!(bad.build(), Err(TopologyError::FormatVersion(9))));
    }
}
