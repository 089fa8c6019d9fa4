//! Directed memory graphs and the TeleHammer / PeriHammer feasibility checks.
//!
//! A graph holds memory nodes, the entities that may touch them, and timed
//! edges `(from, via, to, cycles)`. An edge is a *memory access edge* when no
//! valid sibling with the same `from` and `via` is at least as fast.

use crate::mmu::{Machine, MmuError, Served, TraceEvent};
use std::cmp::Reverse;
use std::collections::{BTreeSet, BinaryHeap, HashMap};
use std::fmt::{self, Write as _};
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NodeKind {
    Register,
    CacheLine,
    RowBuffer,
    DramRow,
    Other,
}

impl FromStr for NodeKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "register" => Ok(Self::Register),
            "cacheline" => Ok(Self::CacheLine),
            "rowbuffer" => Ok(Self::RowBuffer),
            "dramrow" => Ok(Self::DramRow),
            "other" => Ok(Self::Other),
            _ => Err(format!("unknown node kind `{s}`")),
        }
    }
}

impl fmt::Display for NodeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Register => "register",
            Self::CacheLine => "cacheline",
            Self::RowBuffer => "rowbuffer",
            Self::DramRow => "dramrow",
            Self::Other => "other",
        })
    }
}

pub type NodeId = usize;
pub type EntityId = usize;
pub type EdgeId = usize;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Node {
    pub name: String,
    pub kind: NodeKind,
    pub row: Option<u64>,
    pub valid: bool,
    pub sensitive: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Edge {
    pub from: NodeId,
    pub via: EntityId,
    pub to: NodeId,
    pub latency: u64,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GraphError {
    #[error("unknown node `{0}`")]
    UnknownNode(String),
    #[error("unknown entity `{0}`")]
    UnknownEntity(String),
    #[error("duplicate id `{0}`")]
    Duplicate(String),
    #[error("node `{0}`: {1}")]
    BadNode(String, String),
    #[error("entity `{entity}` may not access `{node}`")]
    PermissionViolation { entity: String, node: String },
    #[error("edge into `{node}` is faster than the node access itself ({latency} < {t_node})")]
    LatencyBelowNode { node: String, latency: u64, t_node: u64 },
    #[error("edge target `{0}` is invalid")]
    TargetInvalid(String),
    #[error("empty path")]
    EmptyPath,
    #[error("invalid path: {0}")]
    InvalidPath(String),
    #[error("equal-latency valid siblings out of `{0}`; no unique access edge")]
    NoUniqueAccessEdge(String),
    #[error("attacker can access the victim directly; this is not TeleHammer")]
    AttackerHasVictimAccess,
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Condition {
    RowValidity,
    RowDistance,
    PathExists,
    TimeBudget,
    Permission,
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

pub const ALL_CONDITIONS: [Condition; 5] = [
    Condition::RowValidity,
    Condition::RowDistance,
    Condition::PathExists,
    Condition::TimeBudget,
    Condition::Permission,
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct FeasibilityParams {
    pub r_max: u64,
    pub t_max: u64,
    pub t_set: u64,
    /// Cost for the attacker to touch its own node (`m_a`, or `m_h` for
    /// PeriHammer).
    pub t_node_attacker: u64,
    pub t_delta: u64,
}

/// A chain of edges; an empty path stands for `m_a = m_h`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CommPath {
    pub edges: Vec<EdgeId>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeasibilityReport {
    pub feasible: bool,
    pub failed: Vec<Condition>,
    pub witness: Option<CommPath>,
    pub total_latency: u64,
}

impl FeasibilityReport {
    fn new(failed: BTreeSet<Condition>, witness: Option<CommPath>, total_latency: u64) -> Self {
        let failed: Vec<Condition> = failed.into_iter().collect();
        Self { feasible: failed.is_empty(), failed, witness, total_latency }
    }

    pub fn holds(&self, c: Condition) -> bool {
        !self.failed.contains(&c)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MemGraph {
    nodes: Vec<Node>,
    node_ix: HashMap<String, NodeId>,
    entities: Vec<String>,
    entity_ix: HashMap<String, EntityId>,
    perms: Vec<BTreeSet<EntityId>>,
    edges: Vec<Edge>,
    t_node: HashMap<(EntityId, NodeId), u64>,
    /// Optional default query stored with a graph file.
    pub query: Option<Query>,
    pub params: Option<FeasibilityParams>,
}

/// Which question a graph file asks: attacker, m_a, m_h, m_v.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Query {
    pub attacker: String,
    pub m_a: String,
    pub m_h: String,
    pub m_v: String,
}

impl MemGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_node(
        &mut self,
        name: &str,
        kind: NodeKind,
        row: Option<u64>,
        valid: bool,
        sensitive: bool,
    ) -> Result<NodeId, GraphError> {
        if self.node_ix.contains_key(name) {
            return Err(GraphError::Duplicate(name.into()));
        }
        if (kind == NodeKind::DramRow) != row.is_some() {
            return Err(GraphError::BadNode(name.into(), "a row index is given exactly for dramrow nodes".into()));
        }
        if sensitive && !valid {
            return Err(GraphError::BadNode(name.into(), "sensitive nodes must be valid".into()));
        }
        let id = self.nodes.len();
        self.nodes.push(Node { name: name.into(), kind, row, valid, sensitive });
        self.node_ix.insert(name.into(), id);
        self.perms.push(BTreeSet::new());
        Ok(id)
    }

    pub fn add_entity(&mut self, name: &str) -> Result<EntityId, GraphError> {
        if self.entity_ix.contains_key(name) {
            return Err(GraphError::Duplicate(name.into()));
        }
        let id = self.entities.len();
        self.entities.push(name.into());
        self.entity_ix.insert(name.into(), id);
        Ok(id)
    }

    pub fn grant(&mut self, node: NodeId, entity: EntityId) {
        self.perms[node].insert(entity);
    }

    pub fn set_t_node(&mut self, entity: EntityId, node: NodeId, cycles: u64) {
        self.t_node.insert((entity, node), cycles);
    }

    pub fn t_node(&self, entity: EntityId, node: NodeId) -> u64 {
        self.t_node.get(&(entity, node)).copied().unwrap_or(0)
    }

    pub fn set_valid(&mut self, node: NodeId, valid: bool) {
        let n = &mut self.nodes[node];
        n.valid = valid;
        if !valid {
            n.sensitive = false;
        }
    }

    pub fn add_edge(&mut self, from: NodeId, via: EntityId, to: NodeId, latency: u64) -> Result<EdgeId, GraphError> {
        if from >= self.nodes.len() {
            return Err(GraphError::UnknownNode(format!("#{from}")));
        }
        if to >= self.nodes.len() {
            return Err(GraphError::UnknownNode(format!("#{to}")));
        }
        if via >= self.entities.len() {
            return Err(GraphError::UnknownEntity(format!("#{via}")));
        }
        if !self.perms[to].contains(&via) {
            return Err(GraphError::PermissionViolation {
                entity: self.entities[via].clone(),
                node: self.nodes[to].name.clone(),
            });
        }
        let t_node = self.t_node(via, to);
        if latency < t_node {
            return Err(GraphError::LatencyBelowNode { node: self.nodes[to].name.clone(), latency, t_node });
        }
        self.edges.push(Edge { from, via, to, latency });
        Ok(self.edges.len() - 1)
    }

    pub fn node_id(&self, name: &str) -> Result<NodeId, GraphError> {
        self.node_ix.get(name).copied().ok_or_else(|| GraphError::UnknownNode(name.into()))
    }

    pub fn entity_id(&self, name: &str) -> Result<EntityId, GraphError> {
        self.entity_ix.get(name).copied().ok_or_else(|| GraphError::UnknownEntity(name.into()))
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id]
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn entity(&self, id: EntityId) -> &str {
        &self.entities[id]
    }

    pub fn edge(&self, id: EdgeId) -> &Edge {
        &self.edges[id]
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn can_access(&self, entity: EntityId, node: NodeId) -> bool {
        self.perms[node].contains(&entity)
    }

    /// Scale one edge's latency, keeping the node-access lower bound.
    pub fn set_edge_latency(&mut self, id: EdgeId, latency: u64) {
        let e = self.edges[id];
        self.edges[id].latency = latency.max(self.t_node(e.via, e.to));
    }

    fn siblings(&self, e: &Edge) -> impl Iterator<Item = &Edge> + '_ {
        let (from, via, to) = (e.from, e.via, e.to);
        self.edges.iter().filter(move |s| s.from == from && s.via == via && s.to != to)
    }

    pub fn is_memory_access_edge(&self, id: EdgeId) -> Result<bool, GraphError> {
        let e = &self.edges[id];
        if !self.nodes[e.to].valid {
            return Err(GraphError::TargetInvalid(self.nodes[e.to].name.clone()));
        }
        Ok(self.siblings(e).all(|s| !self.nodes[s.to].valid || s.latency > e.latency))
    }

    /// Like [`is_memory_access_edge`](Self::is_memory_access_edge) but
    /// reports a tie with a valid sibling as an error.
    pub fn classify_edge(&self, id: EdgeId) -> Result<bool, GraphError> {
        let e = &self.edges[id];
        if self.is_memory_access_edge(id)? {
            return Ok(true);
        }
        let tied = self.siblings(e).any(|s| self.nodes[s.to].valid && s.latency == e.latency);
        let faster = self.siblings(e).any(|s| self.nodes[s.to].valid && s.latency < e.latency);
        if tied && !faster {
            return Err(GraphError::NoUniqueAccessEdge(self.nodes[e.from].name.clone()));
        }
        Ok(false)
    }

    /// Diagnostics that are not errors: ties and edges exactly as fast as
    /// the node access.
    pub fn lint(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (i, e) in self.edges.iter().enumerate() {
            if self.nodes[e.to].valid {
                if let Err(err) = self.classify_edge(i) {
                    out.push(err.to_string());
                }
            }
            if self.t_node.contains_key(&(e.via, e.to)) && e.latency == self.t_node(e.via, e.to) {
                out.push(format!(
                    "edge {} -{}-> {} has latency equal to the node access",
                    self.nodes[e.from].name, self.entities[e.via], self.nodes[e.to].name
                ));
            }
        }
        out.sort();
        out.dedup();
        out
    }

    fn check_path(&self, path: &CommPath) -> Result<(), GraphError> {
        let mut seen = BTreeSet::new();
        for (i, &id) in path.edges.iter().enumerate() {
            let e = self.edges.get(id).ok_or_else(|| GraphError::InvalidPath(format!("no edge #{id}")))?;
            if i == 0 {
                seen.insert(e.from);
            } else if self.edges[path.edges[i - 1]].to != e.from {
                return Err(GraphError::InvalidPath(format!("edge {i} does not continue the chain")));
            }
            if !seen.insert(e.to) {
                return Err(GraphError::InvalidPath(format!("node `{}` repeats", self.nodes[e.to].name)));
            }
            if !self.is_memory_access_edge(id)? {
                return Err(GraphError::InvalidPath(format!("edge {i} is not a memory access edge")));
            }
        }
        Ok(())
    }

    pub fn path_latency(&self, path: &CommPath) -> Result<u64, GraphError> {
        if path.edges.is_empty() {
            return Err(GraphError::EmptyPath);
        }
        self.check_path(path)?;
        Ok(self.latency_rec(&path.edges))
    }

    fn latency_rec(&self, edges: &[EdgeId]) -> u64 {
        let (last, prefix) = edges.split_last().expect("non-empty");
        let t = self.edges[*last].latency;
        if prefix.is_empty() {
            t
        } else {
            self.latency_rec(prefix) + t
        }
    }

    /// Lowest-latency chain of memory access edges from `a` to `h`.
    /// Ties between equal totals keep the first path found in node order.
    pub fn shortest_path(&self, a: NodeId, h: NodeId) -> Option<(CommPath, u64)> {
        if a == h {
            return Some((CommPath::default(), 0));
        }
        let mut out: Vec<Vec<EdgeId>> = vec![Vec::new(); self.nodes.len()];
        for (i, e) in self.edges.iter().enumerate() {
            if self.nodes[e.to].valid && self.is_memory_access_edge(i) == Ok(true) {
                out[e.from].push(i);
            }
        }
        let mut dist = vec![u64::MAX; self.nodes.len()];
        let mut prev: Vec<Option<EdgeId>> = vec![None; self.nodes.len()];
        let mut heap = BinaryHeap::new();
        dist[a] = 0;
        heap.push(Reverse((0u64, a)));
        while let Some(Reverse((d, n))) = heap.pop() {
            if d > dist[n] {
                continue;
            }
            if n == h {
                break;
            }
            for &ei in &out[n] {
                let e = &self.edges[ei];
                let nd = d.saturating_add(e.latency);
                if nd < dist[e.to] {
                    dist[e.to] = nd;
                    prev[e.to] = Some(ei);
                    heap.push(Reverse((nd, e.to)));
                }
            }
        }
        if dist[h] == u64::MAX {
            return None;
        }
        let mut edges = Vec::new();
        let mut n = h;
        while let Some(ei) = prev[n] {
            edges.push(ei);
            n = self.edges[ei].from;
        }
        edges.reverse();
        Some((CommPath { edges }, dist[h]))
    }

    fn row_conditions(&self, m_h: NodeId, m_v: NodeId, r_max: u64, failed: &mut BTreeSet<Condition>) {
        let (h, v) = (&self.nodes[m_h], &self.nodes[m_v]);
        match (h.row, v.row) {
            (Some(rh), Some(rv)) => {
                if !v.sensitive || !h.valid || !v.valid {
                    failed.insert(Condition::RowValidity);
                }
                if rh.abs_diff(rv) > r_max {
                    failed.insert(Condition::RowDistance);
                }
            }
            _ => {
                failed.insert(Condition::RowValidity);
            }
        }
    }

    pub fn check_telehammer(
        &self,
        attacker: EntityId,
        m_a: NodeId,
        m_h: NodeId,
        m_v: NodeId,
        p: &FeasibilityParams,
    ) -> Result<FeasibilityReport, GraphError> {
        if self.can_access(attacker, m_v) {
            return Err(GraphError::AttackerHasVictimAccess);
        }
        let mut failed = BTreeSet::new();
        self.row_conditions(m_h, m_v, p.r_max, &mut failed);
        if !self.can_access(attacker, m_a) {
            failed.insert(Condition::Permission);
        }
        let (witness, total) = match self.shortest_path(m_a, m_h) {
            Some((path, lat)) => {
                let total = p.t_set.saturating_add(p.t_node_attacker).saturating_add(lat).saturating_add(p.t_delta);
                if total > p.t_max {
                    failed.insert(Condition::TimeBudget);
                }
                (Some(path), total)
            }
            None => {
                failed.insert(Condition::PathExists);
                (None, 0)
            }
        };
        Ok(FeasibilityReport::new(failed, witness, total))
    }

    pub fn check_perihammer(
        &self,
        attacker: EntityId,
        m_h: NodeId,
        m_v: NodeId,
        p: &FeasibilityParams,
    ) -> FeasibilityReport {
        let mut failed = BTreeSet::new();
        self.row_conditions(m_h, m_v, p.r_max, &mut failed);
        if !self.can_access(attacker, m_h) {
            failed.insert(Condition::Permission);
        }
        let total = p.t_set.saturating_add(p.t_node_attacker).saturating_add(p.t_delta);
        if total > p.t_max {
            failed.insert(Condition::TimeBudget);
        }
        FeasibilityReport::new(failed, Some(CommPath::default()), total)
    }

    pub fn parse(text: &str) -> Result<Self, GraphError> {
        let mut g = Self::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let perr = |msg: String| GraphError::Parse { line, msg };
            let l = raw.split('#').next().unwrap_or("").trim();
            if l.is_empty() {
                continue;
            }
            let toks: Vec<&str> = l.split_whitespace().collect();
            let at = |e: GraphError| GraphError::Parse { line, msg: e.to_string() };
            let num = |s: &str| s.parse::<u64>().map_err(|e| perr(format!("`{s}`: {e}")));
            match toks[0] {
                "node" => {
                    if toks.len() < 2 {
                        return Err(perr("node needs an id".into()));
                    }
                    let (mut kind, mut row, mut valid, mut sensitive) = (NodeKind::Other, None, true, false);
                    for kv in &toks[2..] {
                        let (k, v) = kv.split_once('=').ok_or_else(|| perr(format!("expected key=value, got `{kv}`")))?;
                        match k {
                            "kind" => kind = v.parse().map_err(perr)?,
                            "row" => row = if v == "none" { None } else { Some(num(v)?) },
                            "valid" => valid = bit(v).map_err(perr)?,
                            "sensitive" => sensitive = bit(v).map_err(perr)?,
                            _ => return Err(perr(format!("unknown node attribute `{k}`"))),
                        }
                    }
                    g.add_node(toks[1], kind, row, valid, sensitive).map_err(at)?;
                }
                "entity" => {
                    if toks.len() != 2 {
                        return Err(perr("entity takes one id".into()));
                    }
                    g.add_entity(toks[1]).map_err(at)?;
                }
                "perm" => {
                    if toks.len() < 3 {
                        return Err(perr("perm needs a node and at least one entity".into()));
                    }
                    let n = g.node_id(toks[1]).map_err(at)?;
                    for e in &toks[2..] {
                        let e = g.entity_id(e).map_err(at)?;
                        g.grant(n, e);
                    }
                }
                "tnode" => {
                    if toks.len() != 4 {
                        return Err(perr("tnode <entity> <node> <cycles>".into()));
                    }
                    let e = g.entity_id(toks[1]).map_err(at)?;
                    let n = g.node_id(toks[2]).map_err(at)?;
                    g.set_t_node(e, n, num(toks[3])?);
                }
                "edge" => {
                    if toks.len() != 5 {
                        return Err(perr("edge <from> <entity> <to> <cycles>".into()));
                    }
                    let f = g.node_id(toks[1]).map_err(at)?;
                    let e = g.entity_id(toks[2]).map_err(at)?;
                    let t = g.node_id(toks[3]).map_err(at)?;
                    g.add_edge(f, e, t, num(toks[4])?).map_err(at)?;
                }
                "query" => {
                    if toks.len() != 5 {
                        return Err(perr("query <attacker> <m_a> <m_h> <m_v>".into()));
                    }
                    g.query = Some(Query {
                        attacker: toks[1].into(),
                        m_a: toks[2].into(),
                        m_h: toks[3].into(),
                        m_v: toks[4].into(),
                    });
                }
                "params" => {
                    let mut p = FeasibilityParams::default();
                    for kv in &toks[1..] {
                        let (k, v) = kv.split_once('=').ok_or_else(|| perr(format!("expected key=value, got `{kv}`")))?;
                        let v = num(v)?;
                        match k {
                            "r_max" => p.r_max = v,
                            "t_max" => p.t_max = v,
                            "t_set" => p.t_set = v,
                            "t_node" => p.t_node_attacker = v,
                            "t_delta" => p.t_delta = v,
                            _ => return Err(perr(format!("unknown parameter `{k}`"))),
                        }
                    }
                    g.params = Some(p);
                }
                other => return Err(perr(format!("unknown record `{other}`"))),
            }
        }
        Ok(g)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for e in &self.entities {
            let _ = writeln!(s, "entity {e}");
        }
        for n in &self.nodes {
            let row = n.row.map_or("none".to_string(), |r| r.to_string());
            let _ = writeln!(
                s,
                "node {} kind={} row={} valid={} sensitive={}",
                n.name, n.kind, row, n.valid as u8, n.sensitive as u8
            );
        }
        for (i, p) in self.perms.iter().enumerate() {
            if !p.is_empty() {
                let ents: Vec<&str> = p.iter().map(|&e| self.entities[e].as_str()).collect();
                let _ = writeln!(s, "perm {} {}", self.nodes[i].name, ents.join(" "));
            }
        }
        let mut tn: Vec<_> = self.t_node.iter().collect();
        tn.sort();
        for (&(e, n), c) in tn {
            let _ = writeln!(s, "tnode {} {} {c}", self.entities[e], self.nodes[n].name);
        }
        for e in &self.edges {
            let _ = writeln!(
                s,
                "edge {} {} {} {}",
                self.nodes[e.from].name, self.entities[e.via], self.nodes[e.to].name, e.latency
            );
        }
        if let Some(q) = &self.query {
            let _ = writeln!(s, "query {} {} {} {}", q.attacker, q.m_a, q.m_h, q.m_v);
        }
        if let Some(p) = &self.params {
            let _ = writeln!(
                s,
                "params r_max={} t_max={} t_set={} t_node={} t_delta={}",
                p.r_max, p.t_max, p.t_set, p.t_node_attacker, p.t_delta
            );
        }
        s
    }

    pub fn path_names(&self, path: &CommPath) -> Vec<String> {
        let mut v = Vec::new();
        for (i, &id) in path.edges.iter().enumerate() {
            let e = &self.edges[id];
            if i == 0 {
                v.push(self.nodes[e.from].name.clone());
            }
            v.push(self.nodes[e.to].name.clone());
        }
        v
    }
}

fn bit(v: &str) -> Result<bool, String> {
    match v {
        "0" => Ok(false),
        "1" => Ok(true),
        _ => Err(format!("expected 0 or 1, got `{v}`")),
    }
}

/// Graph induced by one access on a copy of the machine, with the nodes the
/// caller usually queries.
#[derive(Debug, Clone)]
pub struct DerivedGraph {
    pub graph: MemGraph,
    pub user: EntityId,
    pub walker: EntityId,
    /// The user's virtual address.
    pub m_a: NodeId,
    /// Last node of the translation chain.
    pub end: NodeId,
    /// DRAM row nodes of page-table entries, outermost level first.
    pub pte_rows: Vec<NodeId>,
}

/// Replay one access to `vaddr` on a clone of `machine` and build the graph
/// of its translation path. Edge latencies are the cycles the simulator
/// charged for each step.
pub fn derive_graph_from_sim(machine: &Machine, vaddr: u64) -> Result<DerivedGraph, MmuError> {
    if machine.translate(vaddr).is_none() {
        return Err(MmuError::UnmappedAddress(vaddr));
    }
    let mut m = machine.clone();
    m.set_trace(true);
    m.mem_access(vaddr)?;
    let trace: Vec<TraceEvent> = m.last_trace().to_vec();
    let cfg = machine.config();
    let llc_lat = cfg.cache.llc.latency as u64;

    let mut g = MemGraph::new();
    let user = g.add_entity("user").unwrap();
    let walker = g.add_entity("walker").unwrap();
    let m_a = g.add_node(&format!("va:{vaddr:#x}"), NodeKind::Other, None, true, false).unwrap();
    g.grant(m_a, user);
    let mut cur = m_a;
    let mut carry = 0u64;
    let mut pte_rows = Vec::new();
    for ev in trace {
        match ev {
            TraceEvent::Tlb { page, hit, latency } => {
                let valid = hit != crate::tlb::TlbHit::Miss;
                let n = g.add_node(&format!("tlb:{page:#x}"), NodeKind::CacheLine, None, valid, false).unwrap();
                g.grant(n, user);
                g.add_edge(cur, user, n, latency as u64).unwrap();
                if valid {
                    cur = n;
                } else {
                    carry = latency as u64;
                }
            }
            TraceEvent::Psc { level, latency } => {
                let n = g.add_node(&format!("psc:{level}"), NodeKind::CacheLine, None, true, false).unwrap();
                g.grant(n, walker);
                g.add_edge(cur, walker, n, carry + latency as u64).unwrap();
                carry = 0;
                cur = n;
            }
            TraceEvent::Pte { level, paddr, served, latency } => {
                let line = format!("pte{level}:{:#x}", paddr & !63);
                let lat = carry + latency as u64;
                carry = 0;
                match served {
                    Served::Dram { bank, row, .. } => {
                        let stale = g.add_node(&line, NodeKind::CacheLine, None, false, false).unwrap();
                        g.grant(stale, walker);
                        g.add_edge(cur, walker, stale, llc_lat).unwrap();
                        let rb = g.add_node(&format!("rowbuf{level}:b{bank}"), NodeKind::RowBuffer, None, true, false).unwrap();
                        g.grant(rb, walker);
                        let to_buf = llc_lat.min(lat);
                        g.add_edge(cur, walker, rb, to_buf).unwrap();
                        let r = g
                            .add_node(&format!("row{level}:b{bank}:r{row}"), NodeKind::DramRow, Some(row as u64), true, true)
                            .unwrap();
                        g.grant(r, walker);
                        g.add_edge(rb, walker, r, lat - to_buf).unwrap();
                        pte_rows.push(r);
                        cur = r;
                    }
                    _ => {
                        let n = g.add_node(&line, NodeKind::CacheLine, None, true, false).unwrap();
                        g.grant(n, walker);
                        g.add_edge(cur, walker, n, lat).unwrap();
                        cur = n;
                    }
                }
            }
            TraceEvent::Data { .. } => break,
        }
    }
    Ok(DerivedGraph { graph: g, user, walker, m_a, end: cur, pte_rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain() -> (MemGraph, Vec<EdgeId>) {
        let mut g = MemGraph::new();
        let u = g.add_entity("u").unwrap();
        let mut prev = g.add_node("n0", NodeKind::Register, None, true, false).unwrap();
        let mut ids = Vec::new();
        for (i, lat) in [50u64, 70, 200].iter().enumerate() {
            let n = g.add_node(&format!("n{}", i + 1), NodeKind::CacheLine, None, true, false).unwrap();
            g.grant(n, u);
            ids.push(g.add_edge(prev, u, n, *lat).unwrap());
            prev = n;
        }
        (g, ids)
    }

    #[test]
    fn latency_of_chain() {
        let (g, ids) = chain();
        assert_eq!(g.path_latency(&CommPath { edges: ids[..1].to_vec() }).unwrap(), 50);
        assert_eq!(g.path_latency(&CommPath { edges: ids }).unwrap(), 320);
        assert_eq!(g.path_latency(&CommPath::default()), Err(GraphError::EmptyPath));
    }

    #[test]
    fn permission_enforced() {
        let mut g = MemGraph::new();
        let u = g.add_entity("u").unwrap();
        let a = g.add_node("a", NodeKind::Other, None, true, false).unwrap();
        let b = g.add_node("b", NodeKind::Other, None, true, false).unwrap();
        assert!(matches!(g.add_edge(a, u, b, 1), Err(GraphError::PermissionViolation { .. })));
        g.grant(b, u);
        assert!(g.add_edge(a, u, b, 1).is_ok());
    }

    #[test]
    fn flush_makes_slow_edge_the_access_edge() {
        let mut g = MemGraph::new();
        let u = g.add_entity("u").unwrap();
        let a = g.add_node("a", NodeKind::Other, None, true, false).unwrap();
        let c = g.add_node("c", NodeKind::CacheLine, None, true, false).unwrap();
        let r = g.add_node("r", NodeKind::DramRow, Some(3), true, false).unwrap();
        g.grant(c, u);
        g.grant(r, u);
        g.add_edge(a, u, c, 10).unwrap();
        let slow = g.add_edge(a, u, r, 40).unwrap();
        assert_eq!(g.is_memory_access_edge(slow), Ok(false));
        g.set_valid(c, false);
        assert_eq!(g.is_memory_access_edge(slow), Ok(true));
    }

    #[test]
    fn ties_are_reported() {
        let mut g = MemGraph::new();
        let u = g.add_entity("u").unwrap();
        let a = g.add_node("a", NodeKind::Other, None, true, false).unwrap();
        let b = g.add_node("b", NodeKind::Other, None, true, false).unwrap();
        let c = g.add_node("c", NodeKind::Other, None, true, false).unwrap();
        g.grant(b, u);
        g.grant(c, u);
        let e = g.add_edge(a, u, b, 5).unwrap();
        g.add_edge(a, u, c, 5).unwrap();
        assert_eq!(g.is_memory_access_edge(e), Ok(false));
        assert!(matches!(g.classify_edge(e), Err(GraphError::NoUniqueAccessEdge(_))));
        assert_eq!(g.shortest_path(a, b), None);
    }

    #[test]
    fn text_round_trip() {
        let (mut g, _) = chain();
        g.query = Some(Query { attacker: "u".into(), m_a: "n0".into(), m_h: "n3".into(), m_v: "n3".into() });
        let t = g.to_text();
        let back = MemGraph::parse(&t).unwrap();
        assert_eq!(back.to_text(), t);
    }
}
