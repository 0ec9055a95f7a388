//! Per-OD route database.
//!
//! Each OD pair keeps at most `rho` loopless routes. The set starts with the
//! shortest path under free-flow times and grows by one "best new route" per
//! calibration round, found by scanning loopless k-shortest paths (Yen) under
//! the latest link travel times.
//!
//! Ties between equal-cost paths are broken lexicographically on the link
//! index sequence, so route discovery is reproducible run to run.

use std::cmp::Ordering;
use std::collections::{BTreeSet, BinaryHeap, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::Network;

/// A loopless path between the endpoints of OD pair `od`, as link indices.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Route {
    pub od: usize,
    pub links: Vec<usize>,
}

impl Route {
    pub fn cost(&self, tau: &[f64]) -> f64 {
        path_cost(&self.links, tau)
    }

    /// Checks connectivity, endpoints and link-level simplicity.
    pub fn is_valid(&self, net: &Network) -> bool {
        let Some(&(origin, destination)) = net.od_pairs().get(self.od) else {
            return false;
        };
        if self.links.is_empty() || self.links.iter().any(|&l| l >= net.links().len()) {
            return false;
        }
        if net.link_ends(self.links[0]).0 != origin
            || net.link_ends(*self.links.last().unwrap()).1 != destination
        {
            return false;
        }
        let connected = self
            .links
            .windows(2)
            .all(|w| net.link_ends(w[0]).1 == net.link_ends(w[1]).0);
        let mut seen = self.links.clone();
        seen.sort_unstable();
        seen.dedup();
        connected && seen.len() == self.links.len()
    }
}

/// Travel times of a route under one link travel-time vector.
#[derive(Debug, Clone, PartialEq)]
pub struct RouteCosts {
    /// Origin to destination.
    pub theta: f64,
    /// `(sensor index, time from origin to the entry of the sensor link)`
    /// for sensors on the route, in route order. Sensors not listed are
    /// unreachable on this route (infinite time).
    pub sensor_times: Vec<(usize, f64)>,
}

impl RouteCosts {
    pub fn theta_ik(&self, sensor: usize) -> f64 {
        self.sensor_times
            .iter()
            .find(|&&(k, _)| k == sensor)
            .map_or(f64::INFINITY, |&(_, t)| t)
    }
}

pub fn route_costs(route: &Route, net: &Network, tau: &[f64]) -> RouteCosts {
    let mut elapsed = 0.0;
    let mut sensor_times = Vec::new();
    for &l in &route.links {
        if let Some(k) = net.sensor_of_link(l) {
            sensor_times.push((k, elapsed));
        }
        elapsed += tau[l];
    }
    RouteCosts {
        theta: elapsed,
        sensor_times,
    }
}

fn path_cost(links: &[usize], tau: &[f64]) -> f64 {
    links.iter().map(|&l| tau[l]).sum()
}

#[derive(Debug, Clone)]
pub struct RouteDb {
    rho: usize,
    scan_limit: usize,
    routes: Vec<Vec<Route>>,
}

impl RouteDb {
    pub fn rho(&self) -> usize {
        self.rho
    }

    pub fn scan_limit(&self) -> usize {
        self.scan_limit
    }

    /// Overrides the number of k-shortest candidates examined per update
    /// (defaults to `2 * rho`).
    pub fn set_scan_limit(&mut self, limit: usize) {
        self.scan_limit = limit.max(1);
    }

    pub fn routes(&self, od: usize) -> &[Route] {
        &self.routes[od]
    }

    pub fn num_od_pairs(&self) -> usize {
        self.routes.len()
    }

    pub fn total_routes(&self) -> usize {
        self.routes.iter().map(Vec::len).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = &[Route]> {
        self.routes.iter().map(Vec::as_slice)
    }

    /// Route costs for every stored route under `tau`, indexed `[od][route]`.
    pub fn costs(&self, net: &Network, tau: &[f64]) -> Vec<Vec<RouteCosts>> {
        self.routes
            .par_iter()
            .map(|set| set.iter().map(|r| route_costs(r, net, tau)).collect())
            .collect()
    }

    /// Builds a database from explicit route sets, checking each route.
    pub fn from_routes(net: &Network, rho: usize, routes: Vec<Vec<Route>>) -> Result<Self> {
        if routes.len() != net.num_od_pairs() {
            return Err(Error::Dimension(format!(
                "{} route sets for {} od pairs",
                routes.len(),
                net.num_od_pairs()
            )));
        }
        for (m, set) in routes.iter().enumerate() {
            if set.is_empty() {
                return Err(Error::EmptyRouteSet(m));
            }
            if set.len() > rho {
                return Err(Error::InvalidArgument(format!(
                    "od pair {m} holds {} routes, limit is {rho}",
                    set.len()
                )));
            }
            if let Some(bad) = set.iter().find(|r| r.od != m || !r.is_valid(net)) {
                return Err(Error::InvalidArgument(format!(
                    "invalid route for od pair {m}: {:?}",
                    bad.links
                )));
            }
        }
        Ok(RouteDb {
            rho,
            scan_limit: 2 * rho,
            routes,
        })
    }

    pub fn snapshot(&self, net: &Network) -> RouteDbSnapshot {
        RouteDbSnapshot {
            rho: self.rho,
            od_pairs: self
                .routes
                .iter()
                .enumerate()
                .map(|(m, set)| {
                    let (origin, destination) = net.od_label(m);
                    OdRoutes {
                        origin: origin.to_string(),
                        destination: destination.to_string(),
                        routes: set
                            .iter()
                            .map(|r| r.links.iter().map(|&l| net.link(l).id.clone()).collect())
                            .collect(),
                    }
                })
                .collect(),
        }
    }
}

/// Exported route database: per OD pair, each route's link ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteDbSnapshot {
    pub rho: usize,
    pub od_pairs: Vec<OdRoutes>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OdRoutes {
    pub origin: String,
    pub destination: String,
    pub routes: Vec<Vec<String>>,
}

/// One shortest path per OD pair under `tau`.
pub fn init_shortest_paths(net: &Network, tau: &[f64], rho: usize) -> Result<RouteDb> {
    if rho == 0 {
        return Err(Error::InvalidArgument("rho must be at least 1".into()));
    }
    check_tau(net, tau)?;

    let mut by_origin: HashMap<usize, Vec<usize>> = HashMap::new();
    for (m, &(o, _)) in net.od_pairs().iter().enumerate() {
        by_origin.entry(o).or_default().push(m);
    }
    let mut origins: Vec<usize> = by_origin.keys().copied().collect();
    origins.sort_unstable();

    let trees: Vec<(usize, Vec<Option<Label>>)> = origins
        .par_iter()
        .map(|&o| (o, dijkstra(net, tau, o, None, &Bans::none(net))))
        .collect();

    let mut routes: Vec<Vec<Route>> = vec![Vec::new(); net.num_od_pairs()];
    for (o, labels) in trees {
        for &m in &by_origin[&o] {
            let d = net.od_pairs()[m].1;
            match &labels[d] {
                Some(label) => routes[m].push(Route {
                    od: m,
                    links: label.path.clone(),
                }),
                None => {
                    let (origin, destination) = net.od_label(m);
                    return Err(Error::Unreachable {
                        origin: origin.to_string(),
                        destination: destination.to_string(),
                    });
                }
            }
        }
    }
    Ok(RouteDb {
        rho,
        scan_limit: 2 * rho,
        routes,
    })
}

/// Outcome of one route-set update.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RouteUpdate {
    Unchanged,
    Appended,
    /// The stored route at this position was evicted.
    Replaced(usize),
}

/// Adds the cheapest route of OD pair `m` that is not stored yet.
///
/// With a full set the candidate replaces the most expensive stored route,
/// and only if it is strictly cheaper.
pub fn add_best_new_route(db: &mut RouteDb, net: &Network, tau: &[f64], m: usize) -> RouteUpdate {
    let candidate = best_new_route(net, tau, &db.routes[m], db.scan_limit);
    apply_candidate(&mut db.routes[m], db.rho, tau, m, candidate)
}

/// Runs [`add_best_new_route`] for every OD pair in parallel.
pub fn add_best_new_routes(db: &mut RouteDb, net: &Network, tau: &[f64]) -> Vec<RouteUpdate> {
    let (rho, limit) = (db.rho, db.scan_limit);
    db.routes
        .par_iter_mut()
        .enumerate()
        .map(|(m, set)| {
            let candidate = best_new_route(net, tau, set, limit);
            apply_candidate(set, rho, tau, m, candidate)
        })
        .collect()
}

fn apply_candidate(
    set: &mut Vec<Route>,
    rho: usize,
    tau: &[f64],
    m: usize,
    candidate: Option<(f64, Vec<usize>)>,
) -> RouteUpdate {
    let Some((cost, links)) = candidate else {
        return RouteUpdate::Unchanged;
    };
    let route = Route { od: m, links };
    if set.len() < rho {
        set.push(route);
        return RouteUpdate::Appended;
    }
    // Worst stored route; on equal cost the later one goes.
    let (worst, worst_cost) = set
        .iter()
        .enumerate()
        .map(|(i, r)| (i, r.cost(tau)))
        .fold((0, f64::NEG_INFINITY), |acc, (i, c)| if c >= acc.1 { (i, c) } else { acc });
    if cost < worst_cost {
        set.remove(worst);
        set.push(route);
        RouteUpdate::Replaced(worst)
    } else {
        RouteUpdate::Unchanged
    }
}

fn best_new_route(
    net: &Network,
    tau: &[f64],
    stored: &[Route],
    scan_limit: usize,
) -> Option<(f64, Vec<usize>)> {
    let first = stored.first()?;
    let (o, d) = net.od_pairs()[first.od];
    let mut yen = KShortest::new(net, tau, o, d);
    for _ in 0..scan_limit {
        let (cost, path) = yen.next()?;
        if !stored.iter().any(|r| r.links == path) {
            return Some((cost, path));
        }
    }
    None
}

fn check_tau(net: &Network, tau: &[f64]) -> Result<()> {
    if tau.len() != net.links().len() {
        return Err(Error::Dimension(format!(
            "travel-time vector has {} entries for {} links",
            tau.len(),
            net.links().len()
        )));
    }
    if tau.iter().any(|&t| !(t > 0.0 && t.is_finite())) {
        return Err(Error::InvalidArgument(
            "link travel times must be positive and finite".into(),
        ));
    }
    Ok(())
}

#[derive(Debug, Clone)]
struct Label {
    cost: f64,
    path: Vec<usize>,
}

struct Bans {
    links: Vec<bool>,
    nodes: Vec<bool>,
}

impl Bans {
    fn none(net: &Network) -> Self {
        Bans {
            links: vec![false; net.links().len()],
            nodes: vec![false; net.nodes().len()],
        }
    }
}

#[derive(PartialEq)]
struct HeapEntry {
    cost: f64,
    node: usize,
}

impl Eq for HeapEntry {}

impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .cost
            .total_cmp(&self.cost)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Label-setting shortest paths from `source`, lexicographic tie-break on
/// the link sequence. Stops early once `target` is settled.
fn dijkstra(
    net: &Network,
    tau: &[f64],
    source: usize,
    target: Option<usize>,
    bans: &Bans,
) -> Vec<Option<Label>> {
    let mut labels: Vec<Option<Label>> = vec![None; net.nodes().len()];
    let mut settled = vec![false; net.nodes().len()];
    let mut heap = BinaryHeap::new();
    labels[source] = Some(Label {
        cost: 0.0,
        path: Vec::new(),
    });
    heap.push(HeapEntry {
        cost: 0.0,
        node: source,
    });
    while let Some(HeapEntry { cost, node }) = heap.pop() {
        if settled[node] {
            continue;
        }
        settled[node] = true;
        if Some(node) == target {
            break;
        }
        let base = labels[node].clone().expect("queued nodes carry a label");
        debug_assert_eq!(base.cost, cost);
        for &l in net.out_links(node) {
            let next = net.link_ends(l).1;
            if bans.links[l] || bans.nodes[next] || settled[next] {
                continue;
            }
            let new_cost = cost + tau[l];
            let better = match &labels[next] {
                None => true,
                Some(old) => match new_cost.total_cmp(&old.cost) {
                    Ordering::Less => true,
                    Ordering::Equal => lex_less_extended(&base.path, l, &old.path),
                    Ordering::Greater => false,
                },
            };
            if better {
                let mut path = base.path.clone();
                path.push(l);
                labels[next] = Some(Label {
                    cost: new_cost,
                    path,
                });
                heap.push(HeapEntry {
                    cost: new_cost,
                    node: next,
                });
            }
        }
    }
    labels
}

// Is `prefix ++ [last]` lexicographically smaller than `other`?
fn lex_less_extended(prefix: &[usize], last: usize, other: &[usize]) -> bool {
    prefix
        .iter()
        .copied()
        .chain(std::iter::once(last))
        .cmp(other.iter().copied())
        == Ordering::Less
}

#[derive(Debug, Clone, PartialEq)]
struct Candidate {
    cost: f64,
    path: Vec<usize>,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.cost
            .total_cmp(&other.cost)
            .then_with(|| self.path.cmp(&other.path))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Loopless k-shortest paths in nondecreasing cost order (Yen's algorithm).
pub struct KShortest<'a> {
    net: &'a Network,
    tau: &'a [f64],
    source: usize,
    target: usize,
    found: Vec<Vec<usize>>,
    candidates: BTreeSet<Candidate>,
    exhausted: bool,
}

impl<'a> KShortest<'a> {
    pub fn new(net: &'a Network, tau: &'a [f64], source: usize, target: usize) -> Self {
        KShortest {
            net,
            tau,
            source,
            target,
            found: Vec::new(),
            candidates: BTreeSet::new(),
            exhausted: false,
        }
    }

    fn spur_candidates(&mut self) {
        let prev = self.found.last().expect("called after the first path").clone();
        let mut bans = Bans::none(self.net);
        for i in 0..prev.len() {
            let spur_node = self.net.link_ends(prev[i]).0;
            let root = &prev[..i];
            bans.links.iter_mut().for_each(|b| *b = false);
            bans.nodes.iter_mut().for_each(|b| *b = false);
            for p in &self.found {
                if p.len() > i && p[..i] == *root {
                    bans.links[p[i]] = true;
                }
            }
            for &l in root {
                bans.nodes[self.net.link_ends(l).0] = true;
            }
            let labels = dijkstra(self.net, self.tau, spur_node, Some(self.target), &bans);
            if let Some(spur) = &labels[self.target] {
                let mut path = root.to_vec();
                path.extend_from_slice(&spur.path);
                if self.found.contains(&path) {
                    continue;
                }
                let cost = path_cost(&path, self.tau);
                self.candidates.insert(Candidate { cost, path });
            }
        }
    }
}

impl Iterator for KShortest<'_> {
    type Item = (f64, Vec<usize>);

    fn next(&mut self) -> Option<Self::Item> {
        if self.exhausted {
            return None;
        }
        if self.found.is_empty() {
            let labels = dijkstra(
                self.net,
                self.tau,
                self.source,
                Some(self.target),
                &Bans::none(self.net),
            );
            let Some(label) = labels[self.target].clone() else {
                self.exhausted = true;
                return None;
            };
            let cost = path_cost(&label.path, self.tau);
            self.found.push(label.path.clone());
            return Some((cost, label.path));
        }
        self.spur_candidates();
        match self.candidates.pop_first() {
            Some(c) => {
                self.found.push(c.path.clone());
                Some((c.cost, c.path))
            }
            None => {
                self.exhausted = true;
                None
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{generate_grid, free_flow_times, GridSpec, Link, Node, NetworkFile, NETWORK_FORMAT};

    fn node(id: &str, x: f64, y: f64) -> Node {
        Node { id: id.into(), x, y, signalized: false, signal_spec: None }
    }

    fn link(id: &str, from: &str, to: &str, sensor: bool) -> Link {
        Link {
            id: id.into(),
            from: from.into(),
            to: to.into(),
            length: 100.0,
            lanes: 1,
            speed_limit: 10.0,
            has_sensor: sensor,
        }
    }

    fn build(nodes: Vec<Node>, links: Vec<Link>, od: Vec<(&str, &str)>) -> Network {
        let sensor_links = links.iter().filter(|l| l.has_sensor).map(|l| l.id.clone()).collect();
        Network::new(NetworkFile {
            format: NETWORK_FORMAT.into(),
            nodes,
            links,
            sensor_links,
            od_pairs: od.into_iter().map(|(o, d)| (o.into(), d.into())).collect(),
        })
        .unwrap()
    }

    /// s -> t via three disjoint two-link branches through a, b, c.
    fn three_route_diamond() -> Network {
        build(
            vec![node("s", 0.0, 0.0), node("a", 1.0, 1.0), node("b", 1.0, 0.0), node("c", 1.0, -1.0), node("t", 2.0, 0.0)],
            vec![
                link("sa", "s", "a", false),
                link("at", "a", "t", false),
                link("sb", "s", "b", false),
                link("bt", "b", "t", false),
                link("sc", "s", "c", false),
                link("ct", "c", "t", false),
            ],
            vec![("s", "t")],
        )
    }

    #[test]
    fn single_link_network() {
        let net = build(vec![node("a", 0.0, 0.0), node("b", 1.0, 0.0)], vec![link("ab", "a", "b", true)], vec![("a", "b")]);
        let db = init_shortest_paths(&net, &[10.0], 10).unwrap();
        assert_eq!(db.routes(0)[0].links, vec![0]);
    }

    #[test]
    fn parallel_links_pick_cheaper() {
        let net = build(
            vec![node("a", 0.0, 0.0), node("b", 1.0, 0.0)],
            vec![link("slow", "a", "b", false), link("fast", "a", "b", false)],
            vec![("a", "b")],
        );
        let db = init_shortest_paths(&net, &[40.0, 30.0], 10).unwrap();
        assert_eq!(db.routes(0)[0].links, vec![1]);
    }

    #[test]
    fn corner_to_corner_on_4x4() {
        let net = generate_grid(&GridSpec::new(4, 4, 400.0)).unwrap();
        let nu = free_flow_times(&net);
        let db = init_shortest_paths(&net, &nu, 10).unwrap();
        let m = net
            .od_pairs()
            .iter()
            .position(|&p| p == (net.node_idx("n0_0").unwrap(), net.node_idx("n3_3").unwrap()))
            .unwrap();
        let r = &db.routes(m)[0];
        assert_eq!(r.links.len(), 6);
        assert!((r.cost(&nu) - 6.0 * nu[0]).abs() < 1e-9);
        assert!(r.is_valid(&net));
    }

    #[test]
    fn equal_cost_ties_resolve_lexicographically() {
        let net = three_route_diamond();
        let db = init_shortest_paths(&net, &[1.0; 6], 10).unwrap();
        assert_eq!(db.routes(0)[0].links, vec![0, 1]);
    }

    #[test]
    fn non_positive_tau_is_rejected() {
        let net = build(
            vec![node("a", 0.0, 0.0), node("b", 1.0, 0.0)],
            vec![link("ab", "a", "b", false), link("ba", "b", "a", false)],
            vec![("a", "b")],
        );
        let err = init_shortest_paths(&net, &[1.0, 0.0], 10).unwrap_err();
        assert!(matches!(err, Error::InvalidArgument(_)));
    }

    #[test]
    fn path_graph_has_no_alternative() {
        let net = build(
            vec![node("a", 0.0, 0.0), node("b", 1.0, 0.0), node("c", 2.0, 0.0)],
            vec![link("ab", "a", "b", false), link("bc", "b", "c", false)],
            vec![("a", "c")],
        );
        let tau = [5.0, 5.0];
        let mut db = init_shortest_paths(&net, &tau, 10).unwrap();
        assert_eq!(add_best_new_route(&mut db, &net, &tau, 0), RouteUpdate::Unchanged);
        assert_eq!(db.routes(0).len(), 1);
    }

    #[test]
    fn cheaper_alternative_is_appended() {
        let net = build(
            vec![node("a", 0.0, 0.0), node("b", 1.0, 0.0)],
            vec![link("A", "a", "b", false), link("B", "a", "b", false)],
            vec![("a", "b")],
        );
        let mut db = init_shortest_paths(&net, &[10.0, 20.0], 10).unwrap();
        assert_eq!(db.routes(0)[0].links, vec![0]);
        let tau = [30.0, 20.0];
        assert_eq!(add_best_new_route(&mut db, &net, &tau, 0), RouteUpdate::Appended);
        assert_eq!(db.routes(0)[1].links, vec![1]);
    }

    #[test]
    fn full_set_evicts_worst() {
        let net = three_route_diamond();
        // A = via a, B = via b, C = via c.
        let routes = vec![vec![
            Route { od: 0, links: vec![0, 1] },
            Route { od: 0, links: vec![2, 3] },
        ]];
        let mut db = RouteDb::from_routes(&net, 2, routes).unwrap();
        let tau = [1.0, 1.0, 5.0, 5.0, 2.0, 2.0];

        // Brute-force enumeration of every simple s-t route and its cost.
        let all: [(Vec<usize>, f64); 3] = [(vec![0, 1], 2.0), (vec![2, 3], 10.0), (vec![4, 5], 4.0)];
        let best_missing = all
            .iter()
            .filter(|(p, _)| db.routes(0).iter().all(|r| &r.links != p))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap();
        assert_eq!(best_missing.0, vec![4, 5]);
        let worst_stored = all[..2].iter().max_by(|a, b| a.1.total_cmp(&b.1)).unwrap();
        assert_eq!(worst_stored.0, vec![2, 3]);

        assert_eq!(add_best_new_route(&mut db, &net, &tau, 0), RouteUpdate::Replaced(1));
        let now: Vec<_> = db.routes(0).iter().map(|r| r.links.clone()).collect();
        assert_eq!(now, vec![vec![0, 1], vec![4, 5]]);

        // The remaining candidate (B) is now worse than everything stored.
        assert_eq!(add_best_new_route(&mut db, &net, &tau, 0), RouteUpdate::Unchanged);
    }

    #[test]
    fn k_shortest_enumerates_in_cost_order() {
        let net = three_route_diamond();
        let tau = [3.0, 3.0, 1.0, 1.0, 2.0, 2.0];
        let paths: Vec<_> = KShortest::new(&net, &tau, 0, 4).collect();
        let costs: Vec<f64> = paths.iter().map(|p| p.0).collect();
        assert_eq!(costs, vec![2.0, 4.0, 6.0]);
    }

    #[test]
    fn route_cost_examples() {
        let net = build(
            vec![node("a", 0.0, 0.0), node("b", 1.0, 0.0), node("c", 2.0, 0.0), node("d", 3.0, 0.0)],
            vec![link("ab", "a", "b", false), link("bc", "b", "c", true), link("cd", "c", "d", false)],
            vec![("a", "d")],
        );
        let r = Route { od: 0, links: vec![0, 1, 2] };
        let c = route_costs(&r, &net, &[10.0, 20.0, 30.0]);
        assert_eq!(c.theta, 60.0);
        assert_eq!(c.theta_ik(0), 10.0);

        let single = build(
            vec![node("a", 0.0, 0.0), node("b", 1.0, 0.0), node("c", 2.0, 0.0)],
            vec![link("ab", "a", "b", true), link("bc", "b", "c", true)],
            vec![("a", "b")],
        );
        let r = Route { od: 0, links: vec![0] };
        let c = route_costs(&r, &single, &[7.0, 9.0]);
        assert_eq!(c.theta_ik(0), 0.0);
        assert_eq!(c.theta_ik(1), f64::INFINITY);
    }

    #[test]
    fn snapshot_lists_link_ids() {
        let net = three_route_diamond();
        let db = init_shortest_paths(&net, &[1.0, 1.0, 2.0, 2.0, 3.0, 3.0], 4).unwrap();
        let snap = db.snapshot(&net);
        assert_eq!(snap.od_pairs[0].routes, vec![vec!["sa".to_string(), "at".to_string()]]);
    }
}
