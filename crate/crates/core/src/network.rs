//! Road network model: nodes, directed links, sensor placement and OD pairs.
//!
//! A [`Network`] is immutable once built. Besides the raw records it keeps a
//! few lookup tables (id to index, outgoing adjacency, sensor index per link)
//! that every other module relies on.

use std::collections::{HashMap, HashSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Format tag written into every network file.
pub const NETWORK_FORMAT: &str = "odcal-net-1";

/// Approach axis used by the two-phase signal model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Approach {
    NorthSouth,
    EastWest,
}

/// Green window `[start, end)` in seconds within the cycle for one approach.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GreenWindow {
    pub approach: Approach,
    pub start: f64,
    pub end: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalSpec {
    /// Cycle length in seconds.
    pub cycle: f64,
    pub green: Vec<GreenWindow>,
}

impl SignalSpec {
    /// Fixed-cycle two-phase plan: north-south green for the first
    /// `ns_share` of the cycle, east-west green for the rest.
    pub fn two_phase(cycle: f64, ns_share: f64) -> Self {
        let split = cycle * ns_share;
        SignalSpec {
            cycle,
            green: vec![
                GreenWindow {
                    approach: Approach::NorthSouth,
                    start: 0.0,
                    end: split,
                },
                GreenWindow {
                    approach: Approach::EastWest,
                    start: split,
                    end: cycle,
                },
            ],
        }
    }

    pub fn is_green(&self, approach: Approach, time: f64) -> bool {
        let phase = time.rem_euclid(self.cycle);
        self.green
            .iter()
            .any(|w| w.approach == approach && phase >= w.start && phase < w.end)
    }
}

impl Default for SignalSpec {
    fn default() -> Self {
        SignalSpec::two_phase(60.0, 0.5)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: String,
    pub x: f64,
    pub y: f64,
    pub signalized: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub signal_spec: Option<SignalSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Link {
    pub id: String,
    pub from: String,
    pub to: String,
    /// Meters.
    pub length: f64,
    pub lanes: u32,
    /// Meters per second.
    pub speed_limit: f64,
    pub has_sensor: bool,
}

impl Link {
    pub fn free_flow_time(&self) -> f64 {
        self.length / self.speed_limit
    }
}

/// On-disk shape of a network document.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NetworkFile {
    pub format: String,
    pub nodes: Vec<Node>,
    pub links: Vec<Link>,
    pub sensor_links: Vec<String>,
    pub od_pairs: Vec<(String, String)>,
}

/// A single invariant violation found by [`validate`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    DuplicateNode(String),
    DuplicateLink(String),
    UnknownNode { link: String, node: String },
    SelfLoop(String),
    BadLength(String),
    BadLanes(String),
    BadSpeed(String),
    SignalMismatch(String),
    UnknownSensorLink(String),
    DuplicateSensorLink(String),
    SensorFlagMismatch(String),
    UnknownOdNode { origin: String, destination: String, node: String },
    DegenerateOdPair(String),
    DuplicateOdPair { origin: String, destination: String },
    Unreachable { origin: String, destination: String },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::DuplicateNode(id) => write!(f, "duplicate node id {id}"),
            Violation::DuplicateLink(id) => write!(f, "duplicate link id {id}"),
            Violation::UnknownNode { link, node } => {
                write!(f, "link {link} references unknown node {node}")
            }
            Violation::SelfLoop(id) => write!(f, "link {id} starts and ends at the same node"),
            Violation::BadLength(id) => write!(f, "link {id} has non-positive length"),
            Violation::BadLanes(id) => write!(f, "link {id} has no lanes"),
            Violation::BadSpeed(id) => write!(f, "link {id} has non-positive speed limit"),
            Violation::SignalMismatch(id) => {
                write!(f, "node {id}: signal_spec must be present iff signalized")
            }
            Violation::UnknownSensorLink(id) => write!(f, "sensor link {id} does not exist"),
            Violation::DuplicateSensorLink(id) => write!(f, "sensor link {id} listed twice"),
            Violation::SensorFlagMismatch(id) => {
                write!(f, "link {id}: has_sensor disagrees with sensor_links")
            }
            Violation::UnknownOdNode {
                origin,
                destination,
                node,
            } => write!(f, "od pair ({origin}, {destination}) references unknown node {node}"),
            Violation::DegenerateOdPair(id) => {
                write!(f, "od pair ({id}, {id}) has identical endpoints")
            }
            Violation::DuplicateOdPair {
                origin,
                destination,
            } => write!(f, "od pair ({origin}, {destination}) listed twice"),
            Violation::Unreachable {
                origin,
                destination,
            } => write!(f, "destination {destination} unreachable from {origin}"),
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ValidateOptions {
    pub allow_self_loops: bool,
}

/// Validated, indexed road network.
#[derive(Debug, Clone)]
pub struct Network {
    nodes: Vec<Node>,
    links: Vec<Link>,
    sensor_links: Vec<usize>,
    od_pairs: Vec<(usize, usize)>,
    node_index: HashMap<String, usize>,
    link_index: HashMap<String, usize>,
    link_ends: Vec<(usize, usize)>,
    out_links: Vec<Vec<usize>>,
    sensor_of_link: Vec<Option<usize>>,
}

impl Network {
    /// Builds and validates a network with default options.
    pub fn new(file: NetworkFile) -> Result<Self> {
        Self::with_options(file, ValidateOptions::default())
    }

    pub fn with_options(file: NetworkFile, opts: ValidateOptions) -> Result<Self> {
        if file.format != NETWORK_FORMAT {
            return Err(Error::Format(format!(
                "expected network format {NETWORK_FORMAT}, found {}",
                file.format
            )));
        }
        let violations = validate_with(&file, opts);
        if !violations.is_empty() {
            return Err(Error::InvalidNetwork(violations));
        }
        Ok(Self::index(file))
    }

    // Assumes `file` has already passed validation.
    fn index(file: NetworkFile) -> Self {
        let node_index: HashMap<String, usize> = file
            .nodes
            .iter()
            .enumerate()
            .map(|(i, n)| (n.id.clone(), i))
            .collect();
        let link_index: HashMap<String, usize> = file
            .links
            .iter()
            .enumerate()
            .map(|(i, l)| (l.id.clone(), i))
            .collect();
        let link_ends: Vec<(usize, usize)> = file
            .links
            .iter()
            .map(|l| (node_index[&l.from], node_index[&l.to]))
            .collect();
        let mut out_links = vec![Vec::new(); file.nodes.len()];
        for (i, &(from, _)) in link_ends.iter().enumerate() {
            out_links[from].push(i);
        }
        let sensor_links: Vec<usize> = file.sensor_links.iter().map(|id| link_index[id]).collect();
        let mut sensor_of_link = vec![None; file.links.len()];
        for (k, &l) in sensor_links.iter().enumerate() {
            sensor_of_link[l] = Some(k);
        }
        let od_pairs = file
            .od_pairs
            .iter()
            .map(|(o, d)| (node_index[o], node_index[d]))
            .collect();
        Network {
            nodes: file.nodes,
            links: file.links,
            sensor_links,
            od_pairs,
            node_index,
            link_index,
            link_ends,
            out_links,
            sensor_of_link,
        }
    }

    pub fn to_file(&self) -> NetworkFile {
        NetworkFile {
            format: NETWORK_FORMAT.to_string(),
            nodes: self.nodes.clone(),
            links: self.links.clone(),
            sensor_links: self
                .sensor_links
                .iter()
                .map(|&l| self.links[l].id.clone())
                .collect(),
            od_pairs: self
                .od_pairs
                .iter()
                .map(|&(o, d)| (self.nodes[o].id.clone(), self.nodes[d].id.clone()))
                .collect(),
        }
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn node(&self, idx: usize) -> &Node {
        &self.nodes[idx]
    }

    pub fn link(&self, idx: usize) -> &Link {
        &self.links[idx]
    }

    pub fn node_idx(&self, id: &str) -> Option<usize> {
        self.node_index.get(id).copied()
    }

    pub fn link_idx(&self, id: &str) -> Option<usize> {
        self.link_index.get(id).copied()
    }

    /// `(from, to)` node indices of a link.
    pub fn link_ends(&self, link: usize) -> (usize, usize) {
        self.link_ends[link]
    }

    /// Outgoing links of a node in ascending link index order.
    pub fn out_links(&self, node: usize) -> &[usize] {
        &self.out_links[node]
    }

    /// Link index for every sensor; position in this slice is the sensor index.
    pub fn sensor_links(&self) -> &[usize] {
        &self.sensor_links
    }

    pub fn num_sensors(&self) -> usize {
        self.sensor_links.len()
    }

    pub fn sensor_of_link(&self, link: usize) -> Option<usize> {
        self.sensor_of_link[link]
    }

    pub fn od_pairs(&self) -> &[(usize, usize)] {
        &self.od_pairs
    }

    pub fn num_od_pairs(&self) -> usize {
        self.od_pairs.len()
    }

    pub fn od_label(&self, m: usize) -> (&str, &str) {
        let (o, d) = self.od_pairs[m];
        (&self.nodes[o].id, &self.nodes[d].id)
    }

    /// Approach axis of a link as seen by its downstream junction.
    pub fn approach(&self, link: usize) -> Approach {
        let (from, to) = self.link_ends[link];
        let dx = (self.nodes[to].x - self.nodes[from].x).abs();
        let dy = (self.nodes[to].y - self.nodes[from].y).abs();
        if dy >= dx {
            Approach::NorthSouth
        } else {
            Approach::EastWest
        }
    }
}

/// Free-flow travel time `length / speed_limit` for every link, in link order.
pub fn free_flow_times(net: &Network) -> Vec<f64> {
    net.links().iter().map(Link::free_flow_time).collect()
}

/// Checks every network invariant and reports all violations found.
pub fn validate(file: &NetworkFile) -> Vec<Violation> {
    validate_with(file, ValidateOptions::default())
}

pub fn validate_with(file: &NetworkFile, opts: ValidateOptions) -> Vec<Violation> {
    let mut out = Vec::new();

    let mut node_index = HashMap::new();
    for (i, n) in file.nodes.iter().enumerate() {
        if node_index.insert(n.id.as_str(), i).is_some() {
            out.push(Violation::DuplicateNode(n.id.clone()));
        }
        if n.signalized != n.signal_spec.is_some() {
            out.push(Violation::SignalMismatch(n.id.clone()));
        }
    }

    let mut link_ids = HashSet::new();
    let mut adjacency = vec![Vec::new(); file.nodes.len()];
    for l in &file.links {
        if !link_ids.insert(l.id.as_str()) {
            out.push(Violation::DuplicateLink(l.id.clone()));
        }
        let from = node_index.get(l.from.as_str()).copied();
        let to = node_index.get(l.to.as_str()).copied();
        for (node, idx) in [(&l.from, from), (&l.to, to)] {
            if idx.is_none() {
                out.push(Violation::UnknownNode {
                    link: l.id.clone(),
                    node: node.clone(),
                });
            }
        }
        if l.from == l.to && !opts.allow_self_loops {
            out.push(Violation::SelfLoop(l.id.clone()));
        }
        if !(l.length > 0.0 && l.length.is_finite()) {
            out.push(Violation::BadLength(l.id.clone()));
        }
        if l.lanes < 1 {
            out.push(Violation::BadLanes(l.id.clone()));
        }
        if !(l.speed_limit > 0.0 && l.speed_limit.is_finite()) {
            out.push(Violation::BadSpeed(l.id.clone()));
        }
        if let (Some(a), Some(b)) = (from, to) {
            adjacency[a].push(b);
        }
    }

    let mut sensors = HashSet::new();
    for id in &file.sensor_links {
        if !link_ids.contains(id.as_str()) {
            out.push(Violation::UnknownSensorLink(id.clone()));
        }
        if !sensors.insert(id.as_str()) {
            out.push(Violation::DuplicateSensorLink(id.clone()));
        }
    }
    for l in &file.links {
        if l.has_sensor != sensors.contains(l.id.as_str()) {
            out.push(Violation::SensorFlagMismatch(l.id.clone()));
        }
    }

    let mut seen_pairs = HashSet::new();
    let mut reach_cache: HashMap<usize, Vec<bool>> = HashMap::new();
    for (o, d) in &file.od_pairs {
        let mut missing = false;
        for node in [o, d] {
            if !node_index.contains_key(node.as_str()) {
                out.push(Violation::UnknownOdNode {
                    origin: o.clone(),
                    destination: d.clone(),
                    node: node.clone(),
                });
                missing = true;
            }
        }
        if o == d {
            out.push(Violation::DegenerateOdPair(o.clone()));
            continue;
        }
        if !seen_pairs.insert((o.as_str(), d.as_str())) {
            out.push(Violation::DuplicateOdPair {
                origin: o.clone(),
                destination: d.clone(),
            });
        }
        if missing {
            continue;
        }
        let oi = node_index[o.as_str()];
        let di = node_index[d.as_str()];
        let reach = reach_cache
            .entry(oi)
            .or_insert_with(|| reachable_from(&adjacency, oi));
        if !reach[di] {
            out.push(Violation::Unreachable {
                origin: o.clone(),
                destination: d.clone(),
            });
        }
    }
    out
}

fn reachable_from(adjacency: &[Vec<usize>], start: usize) -> Vec<bool> {
    let mut seen = vec![false; adjacency.len()];
    let mut queue = VecDeque::from([start]);
    seen[start] = true;
    while let Some(u) = queue.pop_front() {
        for &v in &adjacency[u] {
            if !seen[v] {
                seen[v] = true;
                queue.push_back(v);
            }
        }
    }
    seen
}

/// Which grid nodes act as points of interest (origins and destinations).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoiSelector {
    AllNodes,
    /// Outer boundary ring plus one inner ring at offset `(min(rows, cols) - 1) / 3`.
    RingPattern,
}

#[derive(Debug, Clone)]
pub struct GridSpec {
    pub rows: usize,
    pub cols: usize,
    pub link_length: f64,
    pub lanes: u32,
    pub speed_limit: f64,
    pub sensors_on_all_links: bool,
    pub poi: PoiSelector,
    pub signal: SignalSpec,
}

impl GridSpec {
    pub fn new(rows: usize, cols: usize, link_length: f64) -> Self {
        GridSpec {
            rows,
            cols,
            link_length,
            lanes: 2,
            speed_limit: 13.89,
            sensors_on_all_links: true,
            poi: PoiSelector::AllNodes,
            signal: SignalSpec::default(),
        }
    }

    pub fn poi(mut self, poi: PoiSelector) -> Self {
        self.poi = poi;
        self
    }
}

pub fn grid_node_id(r: usize, c: usize) -> String {
    format!("n{r}_{c}")
}

/// Rectangular signalized grid with bidirectional links between orthogonal
/// neighbours. Row index grows along +y, column index along +x.
pub fn generate_grid(spec: &GridSpec) -> Result<Network> {
    let (rows, cols) = (spec.rows, spec.cols);
    if rows < 2 || cols < 2 {
        return Err(Error::InvalidArgument(format!(
            "grid needs at least 2x2 nodes, got {rows}x{cols}"
        )));
    }
    if !(spec.link_length > 0.0) || !(spec.speed_limit > 0.0) || spec.lanes < 1 {
        return Err(Error::InvalidArgument(
            "grid link length, speed limit and lanes must be positive".into(),
        ));
    }

    let mut nodes = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            nodes.push(Node {
                id: grid_node_id(r, c),
                x: c as f64 * spec.link_length,
                y: r as f64 * spec.link_length,
                signalized: true,
                signal_spec: Some(spec.signal.clone()),
            });
        }
    }

    let mut links = Vec::new();
    let mut push_pair = |a: String, b: String| {
        for (from, to) in [(a.clone(), b.clone()), (b, a)] {
            links.push(Link {
                id: format!("{from}-{to}"),
                from,
                to,
                length: spec.link_length,
                lanes: spec.lanes,
                speed_limit: spec.speed_limit,
                has_sensor: spec.sensors_on_all_links,
            });
        }
    };
    for r in 0..rows {
        for c in 0..cols {
            if c + 1 < cols {
                push_pair(grid_node_id(r, c), grid_node_id(r, c + 1));
            }
            if r + 1 < rows {
                push_pair(grid_node_id(r, c), grid_node_id(r + 1, c));
            }
        }
    }
    let sensor_links = links
        .iter()
        .filter(|l| l.has_sensor)
        .map(|l| l.id.clone())
        .collect();

    let pois: Vec<String> = (0..rows)
        .flat_map(|r| (0..cols).map(move |c| (r, c)))
        .filter(|&(r, c)| is_poi(spec.poi, rows, cols, r, c))
        .map(|(r, c)| grid_node_id(r, c))
        .collect();
    let mut od_pairs = Vec::with_capacity(pois.len() * pois.len().saturating_sub(1));
    for o in &pois {
        for d in &pois {
            if o != d {
                od_pairs.push((o.clone(), d.clone()));
            }
        }
    }

    Network::new(NetworkFile {
        format: NETWORK_FORMAT.to_string(),
        nodes,
        links,
        sensor_links,
        od_pairs,
    })
}

fn is_poi(sel: PoiSelector, rows: usize, cols: usize, r: usize, c: usize) -> bool {
    match sel {
        PoiSelector::AllNodes => true,
        PoiSelector::RingPattern => {
            let on_ring = |k: usize| {
                if 2 * k >= rows || 2 * k >= cols {
                    return false;
                }
                let (r0, r1, c0, c1) = (k, rows - 1 - k, k, cols - 1 - k);
                (r >= r0 && r <= r1 && c >= c0 && c <= c1) && (r == r0 || r == r1 || c == c0 || c == c1)
            };
            let inner = (rows.min(cols) - 1) / 3;
            on_ring(0) || (inner > 0 && on_ring(inner))
        }
    }
}
