//! Second-stage recourse: route stationed ambulances to realised demand.
//!
//! For a stationing `x` and demand `d` the fewest unserved calls is
//! `sum(d)` minus the maximum flow of the bipartite network
//! source -> station (cap `x_i`) -> region over feasible edges (uncapped)
//! -> sink (cap `d_j`). Max-flow on integer capacities has an integral
//! optimum, so the routing is always whole ambulances.

use std::collections::{HashSet, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geogrid::{CoverageMatrix, Grid};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FlowError {
    #[error("{what} has length {found}, expected {expected}")]
    Dimension { what: &'static str, expected: usize, found: usize },
    #[error("duplicate edge ({0}, {1})")]
    DuplicateEdge(usize, usize),
    #[error("edge ({0}, {1}) is outside the {2} x {3} station/region space")]
    EdgeOutOfRange(usize, usize, usize, usize),
    #[error("stationing uses {used} ambulances but the fleet has {fleet}")]
    FleetExceeded { used: u64, fleet: u32 },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Deployment {
    pub x: Vec<u32>,
    pub fleet_bound: u32,
}

impl Deployment {
    pub fn new(x: Vec<u32>, fleet_bound: u32) -> Result<Self, FlowError> {
        let used: u64 = x.iter().map(|&v| v as u64).sum();
        if used > fleet_bound as u64 {
            return Err(FlowError::FleetExceeded { used, fleet: fleet_bound });
        }
        Ok(Self { x, fleet_bound })
    }

    pub fn total(&self) -> u32 {
        self.x.iter().sum()
    }
}

/// The feasible dispatch edges `E`, kept in insertion order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeasibleEdges {
    pub n_stations: usize,
    pub n_regions: usize,
    edges: Vec<(usize, usize)>,
}

impl FeasibleEdges {
    pub fn new(n_stations: usize, n_regions: usize, edges: Vec<(usize, usize)>) -> Result<Self, FlowError> {
        let mut seen = HashSet::with_capacity(edges.len());
        for &(i, j) in &edges {
            if i >= n_stations || j >= n_regions {
                return Err(FlowError::EdgeOutOfRange(i, j, n_stations, n_regions));
            }
            if !seen.insert((i, j)) {
                return Err(FlowError::DuplicateEdge(i, j));
            }
        }
        Ok(Self { n_stations, n_regions, edges })
    }

    pub fn from_coverage(cov: &CoverageMatrix) -> Self {
        Self { n_stations: cov.n_stations, n_regions: cov.n_regions, edges: cov.edges() }
    }

    /// Every station may serve every region.
    pub fn complete(n_stations: usize, n_regions: usize) -> Self {
        let edges = (0..n_stations).flat_map(|i| (0..n_regions).map(move |j| (i, j))).collect();
        Self { n_stations, n_regions, edges }
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        self.edges.contains(&(i, j))
    }
}

/// Station-side and region-side incidence matrices, one column per edge.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Incidence {
    pub b_station: Vec<Vec<u8>>,
    pub b_region: Vec<Vec<u8>>,
}

impl Incidence {
    fn apply(rows: &[Vec<u8>], y: &[u32]) -> Vec<u64> {
        rows.iter().map(|r| r.iter().zip(y).map(|(&b, &v)| b as u64 * v as u64).sum()).collect()
    }

    /// Ambulances sent out of each station.
    pub fn station_load(&self, y: &[u32]) -> Vec<u64> {
        Self::apply(&self.b_station, y)
    }

    /// Ambulances arriving in each region.
    pub fn region_load(&self, y: &[u32]) -> Vec<u64> {
        Self::apply(&self.b_region, y)
    }
}

pub fn incidence(edges: &[(usize, usize)], n_stations: usize, n_regions: usize) -> Result<Incidence, FlowError> {
    let e = FeasibleEdges::new(n_stations, n_regions, edges.to_vec())?;
    let mut b_station = vec![vec![0u8; e.len()]; n_stations];
    let mut b_region = vec![vec![0u8; e.len()]; n_regions];
    for (k, &(i, j)) in e.edges().iter().enumerate() {
        b_station[i][k] = 1;
        b_region[j][k] = 1;
    }
    Ok(Incidence { b_station, b_region })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Routing {
    /// Flow on each feasible edge, aligned with [`FeasibleEdges::edges`].
    pub y: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShortfallResult {
    pub z: Vec<u32>,
    pub total: u64,
    pub routing: Routing,
}

impl ShortfallResult {
    /// Edge-list dump: `station,region,flow` for nonzero flows.
    pub fn routing_csv(&self, edges: &FeasibleEdges) -> String {
        let mut s = String::from("station,region,flow\n");
        for (&(i, j), &f) in edges.edges().iter().zip(&self.routing.y) {
            if f > 0 {
                s.push_str(&format!("{i},{j},{f}\n"));
            }
        }
        s
    }
}

const INF: u64 = u64::MAX / 4;

/// Dinic max-flow on the fixed recourse topology. Capacities on the
/// source and sink arcs are reset for every evaluation.
#[derive(Debug, Clone)]
pub struct RecourseNetwork {
    n_stations: usize,
    n_regions: usize,
    head: Vec<usize>,
    to: Vec<usize>,
    next: Vec<usize>,
    cap: Vec<u64>,
    // arc ids
    source_arcs: Vec<usize>,
    wildcard_arc: usize,
    sink_arcs: Vec<usize>,
    edge_arcs: Vec<usize>,
    level: Vec<i32>,
    iter: Vec<usize>,
}

const NIL: usize = usize::MAX;

impl RecourseNetwork {
    pub fn new(edges: &FeasibleEdges) -> Self {
        let (ni, nj) = (edges.n_stations, edges.n_regions);
        // source, stations, wildcard, regions, sink
        let n_nodes = ni + nj + 3;
        let mut net = Self {
            n_stations: ni,
            n_regions: nj,
            head: vec![NIL; n_nodes],
            to: Vec::new(),
            next: Vec::new(),
            cap: Vec::new(),
            source_arcs: Vec::with_capacity(ni),
            wildcard_arc: 0,
            sink_arcs: Vec::with_capacity(nj),
            edge_arcs: Vec::with_capacity(edges.len()),
            level: vec![0; n_nodes],
            iter: vec![0; n_nodes],
        };
        let src = 0;
        let wild = ni + 1;
        let region = |j: usize| ni + 2 + j;
        let sink = n_nodes - 1;
        for i in 0..ni {
            let a = net.add_arc(src, 1 + i, 0);
            net.source_arcs.push(a);
        }
        net.wildcard_arc = net.add_arc(src, wild, 0);
        for &(i, j) in edges.edges() {
            let a = net.add_arc(1 + i, region(j), INF);
            net.edge_arcs.push(a);
        }
        for j in 0..nj {
            net.add_arc(wild, region(j), INF);
        }
        for j in 0..nj {
            let a = net.add_arc(region(j), sink, 0);
            net.sink_arcs.push(a);
        }
        net
    }

    fn add_arc(&mut self, u: usize, v: usize, c: u64) -> usize {
        let id = self.to.len();
        self.to.push(v);
        self.cap.push(c);
        self.next.push(self.head[u]);
        self.head[u] = id;
        self.to.push(u);
        self.cap.push(0);
        self.next.push(self.head[v]);
        self.head[v] = id + 1;
        id
    }

    fn reset(&mut self, x: &[u32], wildcard: u32, d: &[u32]) {
        for a in (0..self.cap.len()).step_by(2) {
            self.cap[a + 1] = 0;
        }
        for (k, &a) in self.source_arcs.iter().enumerate() {
            self.cap[a] = x[k] as u64;
        }
        self.cap[self.wildcard_arc] = wildcard as u64;
        for (j, &a) in self.sink_arcs.iter().enumerate() {
            self.cap[a] = d[j] as u64;
        }
        for &a in &self.edge_arcs {
            self.cap[a] = INF;
        }
        let base = self.source_arcs.len() + 1 + self.edge_arcs.len();
        for j in 0..self.n_regions {
            self.cap[2 * (base + j)] = INF;
        }
    }

    fn bfs(&mut self, s: usize, t: usize) -> bool {
        self.level.iter_mut().for_each(|l| *l = -1);
        self.level[s] = 0;
        let mut q = VecDeque::from([s]);
        while let Some(u) = q.pop_front() {
            let mut a = self.head[u];
            while a != NIL {
                let v = self.to[a];
                if self.cap[a] > 0 && self.level[v] < 0 {
                    self.level[v] = self.level[u] + 1;
                    q.push_back(v);
                }
                a = self.next[a];
            }
        }
        self.level[t] >= 0
    }

    fn dfs(&mut self, u: usize, t: usize, f: u64) -> u64 {
        if u == t {
            return f;
        }
        while self.iter[u] != NIL {
            let a = self.iter[u];
            let v = self.to[a];
            if self.cap[a] > 0 && self.level[v] == self.level[u] + 1 {
                let pushed = self.dfs(v, t, f.min(self.cap[a]));
                if pushed > 0 {
                    self.cap[a] -= pushed;
                    self.cap[a ^ 1] += pushed;
                    return pushed;
                }
            }
            self.iter[u] = self.next[a];
        }
        0
    }

    fn max_flow(&mut self) -> u64 {
        let s = 0;
        let t = self.head.len() - 1;
        let mut flow = 0;
        while self.bfs(s, t) {
            self.iter.copy_from_slice(&self.head);
            loop {
                let f = self.dfs(s, t, INF);
                if f == 0 {
                    break;
                }
                flow += f;
            }
        }
        flow
    }

    fn check(&self, x: &[u32], d: &[u32]) -> Result<(), FlowError> {
        if x.len() != self.n_stations {
            return Err(FlowError::Dimension { what: "stationing", expected: self.n_stations, found: x.len() });
        }
        if d.len() != self.n_regions {
            return Err(FlowError::Dimension { what: "demand", expected: self.n_regions, found: d.len() });
        }
        Ok(())
    }

    /// Total unmet demand when `wildcard` extra ambulances may serve any
    /// region regardless of the edge set.
    pub fn shortfall_total(&mut self, x: &[u32], wildcard: u32, d: &[u32]) -> Result<u64, FlowError> {
        self.check(x, d)?;
        self.reset(x, wildcard, d);
        let demand: u64 = d.iter().map(|&v| v as u64).sum();
        Ok(demand - self.max_flow())
    }

    pub fn solve(&mut self, x: &[u32], d: &[u32]) -> Result<ShortfallResult, FlowError> {
        let total = self.shortfall_total(x, 0, d)?;
        let y: Vec<u32> = self.edge_arcs.iter().map(|&a| self.cap[a ^ 1] as u32).collect();
        let z: Vec<u32> = self.sink_arcs.iter().enumerate().map(|(j, &a)| d[j] - self.cap[a ^ 1] as u32).collect();
        Ok(ShortfallResult { z, total, routing: Routing { y } })
    }
}

/// Minimum shortfall for stationing `x` against demand `d` over edges `E`.
pub fn min_shortfall(x: &Deployment, d: &[u32], edges: &FeasibleEdges) -> Result<ShortfallResult, FlowError> {
    RecourseNetwork::new(edges).solve(&x.x, d)
}

/// Closest station (by travel time from its cell to `region`) that has an
/// ambulance free. When `edges` is given only feasible edges count. Ties go
/// to the lowest station index.
pub fn nearest_available(
    available: &[u32],
    region: usize,
    grid: &Grid,
    edges: Option<&FeasibleEdges>,
) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &count) in available.iter().enumerate() {
        if count == 0 {
            continue;
        }
        if let Some(e) = edges {
            if !e.contains(i, region) {
                continue;
            }
        }
        let t = grid.travel(grid.station_cells[i], region);
        if best.is_none_or(|(_, bt)| t < bt) {
            best = Some((i, t));
        }
    }
    best.map(|(i, _)| i)
}
