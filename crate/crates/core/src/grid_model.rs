//! Radial low-voltage grid: buses, lines, the substation transformer, radiality
//! checks, parent/child maps and feeder-zone partitioning.
//!
//! Bus 0 is always the slack (the MV side of the substation). The transformer is
//! treated as one more series branch of the tree; its rating is only used for the
//! transformer-loading metric.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap, HashSet, VecDeque};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type BusId = usize;
pub type ZoneId = usize;

#[derive(Debug, Error)]
pub enum TopologyError {
    #[error("topology is not radial: {0}")]
    NotRadial(ValidationReport),
    #[error("failed to read topology {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("failed to parse topology {path}: {source}")]
    Parse {
        path: String,
        #[source]
        source: serde_json::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BusKind {
    Slack,
    /// Busbar or cable junction without connected consumers.
    Junction,
    LoadCapable,
}

fn default_nominal_voltage() -> f64 {
    230.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    pub id: BusId,
    pub kind: BusKind,
    #[serde(default = "default_nominal_voltage")]
    pub nominal_voltage: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
}

impl Bus {
    pub fn new(id: BusId, kind: BusKind) -> Self {
        Self {
            id,
            kind,
            nominal_voltage: default_nominal_voltage(),
            name: None,
        }
    }
}

/// Series-impedance line. `r` and `x` are per unit on the grid bases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Line {
    pub from_bus: BusId,
    pub to_bus: BusId,
    pub r: f64,
    pub x: f64,
    /// Thermal current limit in amperes.
    pub i_thermal_max: f64,
}

impl Line {
    pub fn new(from_bus: BusId, to_bus: BusId, r: f64, x: f64, i_thermal_max: f64) -> Self {
        Self {
            from_bus,
            to_bus,
            r,
            x,
            i_thermal_max,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transformer {
    pub hv_bus: BusId,
    pub lv_bus: BusId,
    pub r: f64,
    pub x: f64,
    /// Rated apparent power in kVA.
    pub s_rated: f64,
}

/// Per-unit bases. Currents in amperes are derived from the line-to-line base
/// voltage as `I_base = S_base / (sqrt(3) * V_base)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bases {
    pub s_base_mva: f64,
    pub v_base_kv: f64,
}

impl Default for Bases {
    fn default() -> Self {
        Self {
            s_base_mva: 1.0,
            v_base_kv: 0.4,
        }
    }
}

impl Bases {
    pub fn s_base_kva(&self) -> f64 {
        self.s_base_mva * 1000.0
    }

    pub fn i_base_a(&self) -> f64 {
        self.s_base_mva * 1e6 / (3f64.sqrt() * self.v_base_kv * 1e3)
    }

    /// kW (or kvar) to per unit.
    pub fn kw_to_pu(&self, kw: f64) -> f64 {
        kw / self.s_base_kva()
    }

    pub fn pu_to_kw(&self, pu: f64) -> f64 {
        pu * self.s_base_kva()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BranchKind {
    Transformer,
    Line(usize),
}

/// Uniform view over the transformer and the lines, in solver order:
/// the transformer first (when present), then the lines in file order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Branch {
    pub kind: BranchKind,
    pub a: BusId,
    pub b: BusId,
    pub r: f64,
    pub x: f64,
}

impl Branch {
    pub fn impedance(&self) -> f64 {
        self.r.hypot(self.x)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridTopology {
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub bases: Bases,
    pub buses: Vec<Bus>,
    #[serde(default)]
    pub lines: Vec<Line>,
    #[serde(default)]
    pub transformer: Option<Transformer>,
    /// Filled by [`GridTopology::assign_zones`]; not part of the file format.
    #[serde(skip)]
    pub zone_of: BTreeMap<BusId, ZoneId>,
}

impl GridTopology {
    pub fn new(buses: Vec<Bus>, lines: Vec<Line>, transformer: Option<Transformer>) -> Self {
        Self {
            name: String::new(),
            bases: Bases::default(),
            buses,
            lines,
            transformer,
            zone_of: BTreeMap::new(),
        }
    }

    pub fn from_json_str(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, TopologyError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| TopologyError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json_str(&text).map_err(|source| TopologyError::Parse {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("topology serializes")
    }

    pub fn n_buses(&self) -> usize {
        self.buses.len()
    }

    pub fn branches(&self) -> Vec<Branch> {
        let mut out = Vec::with_capacity(self.lines.len() + 1);
        if let Some(t) = &self.transformer {
            out.push(Branch {
                kind: BranchKind::Transformer,
                a: t.hv_bus,
                b: t.lv_bus,
                r: t.r,
                x: t.x,
            });
        }
        out.extend(self.lines.iter().enumerate().map(|(i, l)| Branch {
            kind: BranchKind::Line(i),
            a: l.from_bus,
            b: l.to_bus,
            r: l.r,
            x: l.x,
        }));
        out
    }

    /// Computes the zone partition and stores it in `zone_of`.
    pub fn assign_zones(&mut self) -> Result<ZonePartition, TopologyError> {
        let partition = partition_zones(self)?;
        self.zone_of = partition.zone_of.clone();
        Ok(partition)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TopologyViolation {
    Empty,
    NonDenseIds { position: usize, id: BusId },
    SlackNotAtZero { bus: BusId },
    SlackCount { count: usize },
    UnknownBus { branch: usize, bus: BusId },
    SelfLoop { branch: usize, bus: BusId },
    DuplicateEdge { a: BusId, b: BusId },
    Cycle { branch: usize, a: BusId, b: BusId },
    Disconnected { bus: BusId },
    BadImpedance { branch: usize },
    BadRating { branch: usize },
    BadNominalVoltage { bus: BusId },
    TransformerNotAtSlack,
}

impl fmt::Display for TopologyViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use TopologyViolation::*;
        match self {
            Empty => write!(f, "grid has no buses"),
            NonDenseIds { position, id } => {
                write!(f, "bus at position {position} has id {id}; ids must be 0..n")
            }
            SlackNotAtZero { bus } => write!(f, "slack bus must be bus 0, found at {bus}"),
            SlackCount { count } => write!(f, "expected exactly one slack bus, found {count}"),
            UnknownBus { branch, bus } => write!(f, "branch {branch} references unknown bus {bus}"),
            SelfLoop { branch, bus } => write!(f, "branch {branch} connects bus {bus} to itself"),
            DuplicateEdge { a, b } => write!(f, "duplicate edge {a}-{b}"),
            Cycle { branch, a, b } => write!(f, "branch {branch} ({a}-{b}) closes a cycle"),
            Disconnected { bus } => write!(f, "bus {bus} is not reachable from the slack"),
            BadImpedance { branch } => {
                write!(f, "branch {branch} needs r >= 0, x >= 0 and not both zero")
            }
            BadRating { branch } => write!(f, "branch {branch} needs a positive rating"),
            BadNominalVoltage { bus } => write!(f, "bus {bus} needs a positive nominal voltage"),
            TransformerNotAtSlack => write!(f, "transformer must connect to the slack bus"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<TopologyViolation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn has_cycle(&self) -> bool {
        self.violations
            .iter()
            .any(|v| matches!(v, TopologyViolation::Cycle { .. }))
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return write!(f, "ok");
        }
        let parts: Vec<String> = self.violations.iter().map(|v| v.to_string()).collect();
        write!(f, "{}", parts.join("; "))
    }
}

struct DisjointSet {
    parent: Vec<usize>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        self.parent[ra] = rb;
        true
    }
}

/// Checks that the buses and branches form a tree rooted at the slack bus.
pub fn validate_radial(topology: &GridTopology) -> ValidationReport {
    use TopologyViolation::*;
    let mut violations = Vec::new();
    let n = topology.buses.len();
    if n == 0 {
        violations.push(Empty);
        return ValidationReport { violations };
    }
    for (pos, bus) in topology.buses.iter().enumerate() {
        if bus.id != pos {
            violations.push(NonDenseIds {
                position: pos,
                id: bus.id,
            });
        }
        if !(bus.nominal_voltage > 0.0) {
            violations.push(BadNominalVoltage { bus: bus.id });
        }
    }
    let slacks: Vec<BusId> = topology
        .buses
        .iter()
        .filter(|b| b.kind == BusKind::Slack)
        .map(|b| b.id)
        .collect();
    if slacks.len() != 1 {
        violations.push(SlackCount {
            count: slacks.len(),
        });
    }
    for &s in &slacks {
        if s != 0 {
            violations.push(SlackNotAtZero { bus: s });
        }
    }
    if let Some(t) = &topology.transformer {
        if t.hv_bus != 0 && t.lv_bus != 0 {
            violations.push(TransformerNotAtSlack);
        }
        if !(t.s_rated > 0.0) {
            violations.push(BadRating { branch: 0 });
        }
    }
    let offset = usize::from(topology.transformer.is_some());
    for (i, line) in topology.lines.iter().enumerate() {
        if !(line.i_thermal_max > 0.0) {
            violations.push(BadRating { branch: i + offset });
        }
    }

    let mut dsu = DisjointSet::new(n);
    let mut seen = HashSet::new();
    for (i, br) in topology.branches().iter().enumerate() {
        if !(br.r >= 0.0 && br.x >= 0.0 && (br.r > 0.0 || br.x > 0.0)) {
            violations.push(BadImpedance { branch: i });
        }
        let mut known = true;
        for bus in [br.a, br.b] {
            if bus >= n {
                violations.push(UnknownBus { branch: i, bus });
                known = false;
            }
        }
        if !known {
            continue;
        }
        if br.a == br.b {
            violations.push(SelfLoop {
                branch: i,
                bus: br.a,
            });
            continue;
        }
        let key = (br.a.min(br.b), br.a.max(br.b));
        if !seen.insert(key) {
            violations.push(DuplicateEdge { a: key.0, b: key.1 });
            continue;
        }
        if !dsu.union(br.a, br.b) {
            violations.push(Cycle {
                branch: i,
                a: br.a,
                b: br.b,
            });
        }
    }
    let root = dsu.find(0);
    for bus in 1..n {
        if dsu.find(bus) != root {
            violations.push(Disconnected { bus });
        }
    }
    ValidationReport { violations }
}

/// Parent/child structure of a radial grid, oriented away from the slack.
#[derive(Debug, Clone, PartialEq)]
pub struct RadialStructure {
    pub parent: Vec<Option<BusId>>,
    /// Index into [`GridTopology::branches`] of the branch feeding each bus.
    pub parent_branch: Vec<Option<usize>>,
    pub children: Vec<Vec<BusId>>,
    /// Breadth-first order from the root; every parent precedes its children.
    pub order: Vec<BusId>,
}

impl RadialStructure {
    pub fn depth_first_subtree(&self, root: BusId) -> Vec<BusId> {
        let mut out = Vec::new();
        let mut stack = vec![root];
        while let Some(b) = stack.pop() {
            out.push(b);
            for &c in self.children[b].iter().rev() {
                stack.push(c);
            }
        }
        out
    }
}

/// Builds parent and children maps by breadth-first search from bus 0.
pub fn parent_child_maps(topology: &GridTopology) -> Result<RadialStructure, TopologyError> {
    let report = validate_radial(topology);
    if !report.is_ok() {
        return Err(TopologyError::NotRadial(report));
    }
    let n = topology.n_buses();
    let branches = topology.branches();
    let mut adjacency: Vec<Vec<(BusId, usize)>> = vec![Vec::new(); n];
    for (i, br) in branches.iter().enumerate() {
        adjacency[br.a].push((br.b, i));
        adjacency[br.b].push((br.a, i));
    }
    for adj in &mut adjacency {
        adj.sort_unstable();
    }
    let mut parent = vec![None; n];
    let mut parent_branch = vec![None; n];
    let mut children = vec![Vec::new(); n];
    let mut order = Vec::with_capacity(n);
    let mut visited = vec![false; n];
    let mut queue = VecDeque::from([0]);
    visited[0] = true;
    while let Some(bus) = queue.pop_front() {
        order.push(bus);
        for &(next, br) in &adjacency[bus] {
            if !visited[next] {
                visited[next] = true;
                parent[next] = Some(bus);
                parent_branch[next] = Some(br);
                children[bus].push(next);
                queue.push_back(next);
            }
        }
    }
    Ok(RadialStructure {
        parent,
        parent_branch,
        children,
        order,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Zone {
    pub id: ZoneId,
    /// Backbone bus the feeder leaves from.
    pub attach_bus: BusId,
    /// First bus of the feeder.
    pub head_bus: BusId,
    pub buses: Vec<BusId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ZonePartition {
    /// Sorted bus ids of the main branch from the substation.
    pub backbone: Vec<BusId>,
    pub zones: Vec<Zone>,
    pub zone_of: BTreeMap<BusId, ZoneId>,
    /// Impedance-weighted distance of each bus from the slack.
    pub distance: Vec<f64>,
}

impl ZonePartition {
    pub fn is_backbone(&self, bus: BusId) -> bool {
        self.backbone.binary_search(&bus).is_ok()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct HeapEntry {
    dist: f64,
    bus: BusId,
}

impl Eq for HeapEntry {}

impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .dist
            .total_cmp(&self.dist)
            .then_with(|| other.bus.cmp(&self.bus))
    }
}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Single-source shortest paths from `source` with branch weight `|z|`.
/// Returns (distance, predecessor).
pub fn dijkstra(topology: &GridTopology, source: BusId) -> (Vec<f64>, Vec<Option<BusId>>) {
    let n = topology.n_buses();
    let mut adjacency: Vec<Vec<(BusId, f64)>> = vec![Vec::new(); n];
    for br in topology.branches() {
        if br.a < n && br.b < n {
            let w = br.impedance();
            adjacency[br.a].push((br.b, w));
            adjacency[br.b].push((br.a, w));
        }
    }
    let mut dist = vec![f64::INFINITY; n];
    let mut pred = vec![None; n];
    let mut heap = BinaryHeap::new();
    dist[source] = 0.0;
    heap.push(HeapEntry {
        dist: 0.0,
        bus: source,
    });
    while let Some(HeapEntry { dist: d, bus }) = heap.pop() {
        if d > dist[bus] {
            continue;
        }
        for &(next, w) in &adjacency[bus] {
            let nd = d + w;
            if nd < dist[next] {
                dist[next] = nd;
                pred[next] = Some(bus);
                heap.push(HeapEntry { dist: nd, bus: next });
            }
        }
    }
    (dist, pred)
}

/// Splits the grid into feeder control zones.
///
/// The backbone is the union of the shortest (impedance-weighted) paths from the
/// slack to every junction bus; with no junctions it is the slack alone. Every
/// subtree hanging off a backbone bus becomes one zone.
pub fn partition_zones(topology: &GridTopology) -> Result<ZonePartition, TopologyError> {
    let radial = parent_child_maps(topology)?;
    let (distance, pred) = dijkstra(topology, 0);
    let n = topology.n_buses();
    let mut on_backbone = vec![false; n];
    on_backbone[0] = true;
    for bus in topology
        .buses
        .iter()
        .filter(|b| b.kind == BusKind::Junction)
    {
        let mut cur = Some(bus.id);
        while let Some(b) = cur {
            if on_backbone[b] && b != bus.id {
                break;
            }
            on_backbone[b] = true;
            cur = pred[b];
        }
    }
    let backbone: Vec<BusId> = (0..n).filter(|&b| on_backbone[b]).collect();

    let mut heads: Vec<(BusId, BusId)> = Vec::new();
    for &b in &backbone {
        for &c in &radial.children[b] {
            if !on_backbone[c] {
                heads.push((c, b));
            }
        }
    }
    heads.sort_unstable();

    let mut zones = Vec::with_capacity(heads.len());
    let mut zone_of = BTreeMap::new();
    for (id, &(head, attach)) in heads.iter().enumerate() {
        let mut buses = radial.depth_first_subtree(head);
        buses.sort_unstable();
        for &b in &buses {
            zone_of.insert(b, id);
        }
        zones.push(Zone {
            id,
            attach_bus: attach,
            head_bus: head,
            buses,
        });
    }
    Ok(ZonePartition {
        backbone,
        zones,
        zone_of,
        distance,
    })
}
