//! Task graphs, platforms and plans.
//!
//! A user task is a DAG of executable nodes bracketed by a `Start` and an
//! `End` sentinel. Several user DAGs are merged into one [`MergedDag`] by
//! sharing a single public `Start` node while every user keeps its own
//! private `End` node. Node ids are a topological order and are the only
//! ordering used anywhere else in the crate.
//!
//! Units: payloads are stored in bytes, CPU work in cycles. Rates in
//! [`Platform`] are bits/s and cycles/s; the factor 8 is applied by the
//! timing engine.

use std::cmp::Reverse;
use std::collections::{BTreeSet, BinaryHeap};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

pub type NodeId = usize;
pub type UserId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NodeKind {
    Start,
    End,
    Exec,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Node {
    pub id: NodeId,
    pub owner: UserId,
    pub kind: NodeKind,
    pub cycles: u64,
    pub upload_bytes: u64,
}

impl Node {
    pub fn is_exec(&self) -> bool {
        self.kind == NodeKind::Exec
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DepEdge {
    pub src: NodeId,
    pub dst: NodeId,
    pub bytes: u64,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DagError {
    #[error("dependency cycle detected among task nodes")]
    CycleDetected,
    #[error("node {0} does not lie on a Start -> End path")]
    DisconnectedNode(NodeId),
    #[error("edge {src} -> {dst} is invalid: {reason}")]
    InvalidEdge {
        src: NodeId,
        dst: NodeId,
        reason: &'static str,
    },
    #[error("node {id} is invalid: {reason}")]
    InvalidNode { id: NodeId, reason: &'static str },
    #[error("malformed graph: {0}")]
    Malformed(String),
    #[error("cannot merge an empty list of user DAGs")]
    NoUsers,
}

/// One executable subtask before sentinel insertion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TaskNode {
    pub cycles: u64,
    pub upload_bytes: u64,
    /// Result payload returned to the user if this node ends up as a sink.
    pub result_bytes: u64,
}

/// Dependency between two [`TaskNode`]s, indexed by their position in the input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TaskEdge {
    pub src: usize,
    pub dst: usize,
    pub bytes: u64,
}

/// A single user's DAG with `Start` at id 0 and `End` at the last id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UserDag {
    pub owner: UserId,
    pub nodes: Vec<Node>,
    pub edges: Vec<DepEdge>,
}

impl UserDag {
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn exec_count(&self) -> usize {
        self.nodes.len() - 2
    }

    pub fn start_out_degree(&self) -> usize {
        self.edges.iter().filter(|e| e.src == 0).count()
    }
}

/// Wraps raw executable nodes with `Start`/`End` sentinels and assigns
/// topological ids.
///
/// Sources are wired to `Start` with 0-byte edges and sinks to `End` with
/// their `result_bytes`. Ids follow Kahn's algorithm, breaking ties by the
/// input index, so an input that is already topologically ordered keeps
/// its order.
pub fn build_user_dag(
    nodes: &[TaskNode],
    edges: &[TaskEdge],
    owner: UserId,
) -> Result<UserDag, DagError> {
    let n = nodes.len();
    for (i, node) in nodes.iter().enumerate() {
        if node.cycles == 0 {
            return Err(DagError::InvalidNode {
                id: i,
                reason: "executable node needs cycles > 0",
            });
        }
    }
    let mut seen = BTreeSet::new();
    let mut succ = vec![Vec::new(); n];
    let mut indeg = vec![0usize; n];
    for e in edges {
        if e.src >= n || e.dst >= n {
            return Err(DagError::InvalidEdge {
                src: e.src,
                dst: e.dst,
                reason: "endpoint out of range",
            });
        }
        if e.src == e.dst {
            return Err(DagError::CycleDetected);
        }
        if !seen.insert((e.src, e.dst)) {
            return Err(DagError::InvalidEdge {
                src: e.src,
                dst: e.dst,
                reason: "duplicate edge",
            });
        }
        succ[e.src].push(*e);
        indeg[e.dst] += 1;
    }

    let mut ready: BinaryHeap<Reverse<usize>> = (0..n)
        .filter(|&i| indeg[i] == 0)
        .map(Reverse)
        .collect();
    let mut order = Vec::with_capacity(n);
    let mut remaining = indeg.clone();
    while let Some(Reverse(i)) = ready.pop() {
        order.push(i);
        for e in &succ[i] {
            remaining[e.dst] -= 1;
            if remaining[e.dst] == 0 {
                ready.push(Reverse(e.dst));
            }
        }
    }
    if order.len() != n {
        return Err(DagError::CycleDetected);
    }

    // input index -> new id (Start takes 0)
    let mut new_id = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        new_id[i] = pos + 1;
    }
    let end = n + 1;

    let mut out_nodes = Vec::with_capacity(n + 2);
    out_nodes.push(Node {
        id: 0,
        owner,
        kind: NodeKind::Start,
        cycles: 0,
        upload_bytes: 0,
    });
    for &i in &order {
        out_nodes.push(Node {
            id: new_id[i],
            owner,
            kind: NodeKind::Exec,
            cycles: nodes[i].cycles,
            upload_bytes: nodes[i].upload_bytes,
        });
    }
    out_nodes.push(Node {
        id: end,
        owner,
        kind: NodeKind::End,
        cycles: 0,
        upload_bytes: 0,
    });

    let mut out_edges = Vec::with_capacity(edges.len() + 2);
    for &i in &order {
        if indeg[i] == 0 {
            out_edges.push(DepEdge {
                src: 0,
                dst: new_id[i],
                bytes: 0,
            });
        }
    }
    for e in edges {
        out_edges.push(DepEdge {
            src: new_id[e.src],
            dst: new_id[e.dst],
            bytes: e.bytes,
        });
    }
    for &i in &order {
        if succ[i].is_empty() {
            out_edges.push(DepEdge {
                src: new_id[i],
                dst: end,
                bytes: nodes[i].result_bytes,
            });
        }
    }
    if n == 0 {
        out_edges.push(DepEdge {
            src: 0,
            dst: end,
            bytes: 0,
        });
    }
    out_edges.sort_by_key(|e| (e.src, e.dst));

    let dag = UserDag {
        owner,
        nodes: out_nodes,
        edges: out_edges,
    };
    // Re-check through the merged-graph validator so both paths share one
    // definition of a well-formed task.
    let nodes = dag.nodes.iter().map(|n| Node { owner: 0, ..n.clone() }).collect();
    MergedDag::from_parts(1, nodes, dag.edges.clone())?;
    Ok(dag)
}

/// Merges per-user DAGs into one graph with a public `Start`.
///
/// Users are laid out one after another, so user `k`'s nodes occupy a
/// contiguous id block and the result stays topologically indexed. The
/// owner of every node becomes its DAG's position in `dags`.
pub fn merge_dags(dags: &[UserDag]) -> Result<MergedDag, DagError> {
    if dags.is_empty() {
        return Err(DagError::NoUsers);
    }
    let mut nodes = vec![Node {
        id: 0,
        owner: 0,
        kind: NodeKind::Start,
        cycles: 0,
        upload_bytes: 0,
    }];
    let mut edges = Vec::new();
    for (k, dag) in dags.iter().enumerate() {
        let offset = nodes.len() - 1;
        let remap = |id: NodeId| if id == 0 { 0 } else { id + offset };
        for node in dag.nodes.iter().skip(1) {
            nodes.push(Node {
                id: remap(node.id),
                owner: k,
                ..node.clone()
            });
        }
        for e in &dag.edges {
            edges.push(DepEdge {
                src: remap(e.src),
                dst: remap(e.dst),
                bytes: e.bytes,
            });
        }
    }
    MergedDag::from_parts(dags.len(), nodes, edges)
}

/// Multi-user task graph with a public `Start` (id 0) and one `End` per user.
#[derive(Debug, Clone, PartialEq)]
pub struct MergedDag {
    k: usize,
    nodes: Vec<Node>,
    edges: Vec<DepEdge>,
    ends: Vec<NodeId>,
    /// Incoming edges per node, ascending by source id.
    preds: Vec<Vec<DepEdge>>,
    /// Outgoing edges per node, ascending by destination id.
    succs: Vec<Vec<DepEdge>>,
}

impl MergedDag {
    /// Validates and indexes a raw node/edge list.
    pub fn from_parts(
        k: usize,
        nodes: Vec<Node>,
        mut edges: Vec<DepEdge>,
    ) -> Result<Self, DagError> {
        if k == 0 {
            return Err(DagError::NoUsers);
        }
        let n = nodes.len();
        for (i, node) in nodes.iter().enumerate() {
            if node.id != i {
                return Err(DagError::Malformed(format!(
                    "node at position {i} has id {}",
                    node.id
                )));
            }
            match node.kind {
                NodeKind::Start | NodeKind::End => {
                    if node.cycles != 0 || node.upload_bytes != 0 {
                        return Err(DagError::InvalidNode {
                            id: i,
                            reason: "sentinel nodes carry no cycles or data",
                        });
                    }
                }
                NodeKind::Exec => {
                    if node.cycles == 0 {
                        return Err(DagError::InvalidNode {
                            id: i,
                            reason: "executable node needs cycles > 0",
                        });
                    }
                }
            }
            if node.owner >= k {
                return Err(DagError::InvalidNode {
                    id: i,
                    reason: "owner out of range",
                });
            }
        }
        if n == 0 || nodes[0].kind != NodeKind::Start {
            return Err(DagError::Malformed("node 0 must be Start".into()));
        }
        if nodes.iter().filter(|x| x.kind == NodeKind::Start).count() != 1 {
            return Err(DagError::Malformed("exactly one Start node required".into()));
        }
        let mut ends = vec![usize::MAX; k];
        for node in nodes.iter().filter(|x| x.kind == NodeKind::End) {
            if ends[node.owner] != usize::MAX {
                return Err(DagError::Malformed(format!(
                    "user {} has more than one End node",
                    node.owner
                )));
            }
            ends[node.owner] = node.id;
        }
        if let Some(user) = ends.iter().position(|&e| e == usize::MAX) {
            return Err(DagError::Malformed(format!("user {user} has no End node")));
        }

        edges.sort_by_key(|e| (e.src, e.dst));
        let mut preds = vec![Vec::new(); n];
        let mut succs = vec![Vec::new(); n];
        for (idx, e) in edges.iter().enumerate() {
            if e.src >= n || e.dst >= n {
                return Err(DagError::InvalidEdge {
                    src: e.src,
                    dst: e.dst,
                    reason: "endpoint out of range",
                });
            }
            if e.src == e.dst {
                return Err(DagError::CycleDetected);
            }
            if e.src > e.dst {
                return Err(DagError::InvalidEdge {
                    src: e.src,
                    dst: e.dst,
                    reason: "ids must follow topological order",
                });
            }
            if idx > 0 && edges[idx - 1].src == e.src && edges[idx - 1].dst == e.dst {
                return Err(DagError::InvalidEdge {
                    src: e.src,
                    dst: e.dst,
                    reason: "duplicate edge",
                });
            }
            let (s, d) = (&nodes[e.src], &nodes[e.dst]);
            if s.kind == NodeKind::End {
                return Err(DagError::InvalidEdge {
                    src: e.src,
                    dst: e.dst,
                    reason: "End has no successors",
                });
            }
            if s.kind == NodeKind::Start && e.bytes != 0 {
                return Err(DagError::InvalidEdge {
                    src: e.src,
                    dst: e.dst,
                    reason: "edges out of Start carry 0 bytes",
                });
            }
            if s.kind != NodeKind::Start && s.owner != d.owner {
                return Err(DagError::InvalidEdge {
                    src: e.src,
                    dst: e.dst,
                    reason: "cross-user edge",
                });
            }
            preds[e.dst].push(*e);
            succs[e.src].push(*e);
        }

        // Forward reachability from Start and backward from each owner's End.
        let mut from_start = vec![false; n];
        from_start[0] = true;
        for i in 0..n {
            if from_start[i] {
                for e in &succs[i] {
                    from_start[e.dst] = true;
                }
            }
        }
        let mut to_end = vec![false; n];
        for &end in &ends {
            to_end[end] = true;
        }
        for i in (0..n).rev() {
            if nodes[i].kind == NodeKind::Exec {
                to_end[i] = succs[i].iter().any(|e| to_end[e.dst]);
            }
        }
        for node in &nodes {
            let ok = match node.kind {
                NodeKind::Start => true,
                NodeKind::End => from_start[node.id] && !preds[node.id].is_empty(),
                NodeKind::Exec => from_start[node.id] && to_end[node.id],
            };
            if !ok {
                return Err(DagError::DisconnectedNode(node.id));
            }
        }

        Ok(Self {
            k,
            nodes,
            edges,
            ends,
            preds,
            succs,
        })
    }

    pub fn users(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id]
    }

    pub fn edges(&self) -> &[DepEdge] {
        &self.edges
    }

    /// `End` node id of every user, indexed by user.
    pub fn ends(&self) -> &[NodeId] {
        &self.ends
    }

    pub fn preds(&self, id: NodeId) -> &[DepEdge] {
        &self.preds[id]
    }

    pub fn succs(&self, id: NodeId) -> &[DepEdge] {
        &self.succs[id]
    }

    pub fn exec_ids(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes.iter().filter(|n| n.is_exec()).map(|n| n.id)
    }

    pub fn exec_count(&self) -> usize {
        self.exec_ids().count()
    }

    /// Bytes returned to the user when `id` feeds its owner's `End`.
    pub fn result_bytes(&self, id: NodeId) -> Option<u64> {
        let end = self.ends[self.nodes[id].owner];
        self.succs[id].iter().find(|e| e.dst == end).map(|e| e.bytes)
    }

    /// Dense N x N 0/1 matrix, `adj[src][dst] = 1`, with a unit diagonal.
    pub fn adjacency_matrix(&self) -> Vec<Vec<u8>> {
        let n = self.len();
        let mut adj = vec![vec![0u8; n]; n];
        for (i, row) in adj.iter_mut().enumerate() {
            row[i] = 1;
        }
        for e in &self.edges {
            adj[e.src][e.dst] = 1;
        }
        adj
    }

    pub fn to_file(&self) -> DagFile {
        DagFile {
            k: self.k,
            nodes: self.nodes.clone(),
            edges: self.edges.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_file()).expect("DAG serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, ModelIoError> {
        let file: DagFile = serde_json::from_str(text)?;
        Ok(file.into_dag()?)
    }

    pub fn load(path: &Path) -> Result<Self, ModelIoError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelIoError> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }
}

/// On-disk DAG document.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DagFile {
    #[serde(rename = "K")]
    pub k: usize,
    pub nodes: Vec<Node>,
    pub edges: Vec<DepEdge>,
}

impl DagFile {
    pub fn into_dag(self) -> Result<MergedDag, DagError> {
        MergedDag::from_parts(self.k, self.nodes, self.edges)
    }
}

#[derive(Debug, Error)]
pub enum ModelIoError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Dag(#[from] DagError),
    #[error("platform is invalid: {0}")]
    Platform(String),
}

/// K user devices (one processor each) and M edge servers with P processors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Platform<T> {
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "M")]
    pub m: usize,
    /// cycles/s of every user device
    pub f_ue: T,
    /// cycles/s of every edge-server processor
    pub f_es: T,
    pub procs_per_es: usize,
    /// bits/s between a user device and an edge server
    pub tr_l: T,
    /// bits/s between two edge servers
    pub tr_s: T,
}

impl<T: Scalar> Platform<T> {
    /// Single user, single one-processor 10 GHz edge, 1 GHz device, 2 Mbps uplink.
    pub fn single_edge() -> Self {
        Self {
            k: 1,
            m: 1,
            f_ue: T::from_f64(1.0e9).unwrap(),
            f_es: T::from_f64(10.0e9).unwrap(),
            procs_per_es: 1,
            tr_l: T::from_f64(2.0e6).unwrap(),
            tr_s: T::from_f64(20.0e6).unwrap(),
        }
    }

    /// Multi-user multi-edge defaults: two 10 GHz processors per server and
    /// a 20 Mbps inter-server link.
    pub fn multi_edge(k: usize, m: usize) -> Self {
        Self {
            k,
            m,
            procs_per_es: 2,
            ..Self::single_edge()
        }
    }

    /// Total number of devices, `K + M`.
    pub fn devices(&self) -> usize {
        self.k + self.m
    }

    pub fn validate(&self) -> Result<(), ModelIoError> {
        let positive = |v: T| v > T::zero() && v.is_finite();
        if self.k == 0 {
            return Err(ModelIoError::Platform("K must be >= 1".into()));
        }
        if self.m > 0 && self.procs_per_es == 0 {
            return Err(ModelIoError::Platform(
                "edge servers need at least one processor".into(),
            ));
        }
        if !(positive(self.f_ue) && positive(self.f_es) && positive(self.tr_l) && positive(self.tr_s))
        {
            return Err(ModelIoError::Platform(
                "frequencies and rates must be positive".into(),
            ));
        }
        Ok(())
    }
}

impl<T: Scalar + Serialize + for<'de> Deserialize<'de>> Platform<T> {
    pub fn load(path: &Path) -> Result<Self, ModelIoError> {
        let p: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        p.validate()?;
        Ok(p)
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelIoError> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

/// Where a node executes: its owner's device or an edge server (1-based).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(from = "usize", into = "usize")]
pub enum Location {
    Own,
    Edge(usize),
}

impl Location {
    /// Wire encoding: 0 is the owner's device, `m` is edge server `m`.
    pub fn index(self) -> usize {
        match self {
            Location::Own => 0,
            Location::Edge(m) => m,
        }
    }

    pub fn from_index(index: usize) -> Self {
        if index == 0 {
            Location::Own
        } else {
            Location::Edge(index)
        }
    }

    pub fn is_offloaded(self) -> bool {
        matches!(self, Location::Edge(_))
    }

    /// All `M + 1` locations in index order.
    pub fn all(servers: usize) -> impl Iterator<Item = Location> {
        (0..=servers).map(Location::from_index)
    }
}

impl From<usize> for Location {
    fn from(index: usize) -> Self {
        Location::from_index(index)
    }
}

impl From<Location> for usize {
    fn from(loc: Location) -> Self {
        loc.index()
    }
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Location::Own => write!(f, "own"),
            Location::Edge(m) => write!(f, "es{m}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Action {
    pub node: NodeId,
    pub loc: Location,
}

impl Action {
    pub fn new(node: NodeId, loc: Location) -> Self {
        Self { node, loc }
    }
}

/// Ordered offloading decisions. Serializes as `[{"node":..,"loc":..}, ...]`.
#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Plan(pub Vec<Action>);

impl Plan {
    pub fn actions(&self) -> &[Action] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn prefix(&self, len: usize) -> &[Action] {
        &self.0[..len]
    }
}

impl FromIterator<Action> for Plan {
    fn from_iter<I: IntoIterator<Item = Action>>(iter: I) -> Self {
        Plan(iter.into_iter().collect())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PlanViolation {
    #[error("action {pos}: node {node} does not exist")]
    UnknownNode { pos: usize, node: NodeId },
    #[error("action {pos}: node {node} is a sentinel, not executable")]
    NotExecutable { pos: usize, node: NodeId },
    #[error("action {pos}: node {node} scheduled twice")]
    Duplicate { pos: usize, node: NodeId },
    #[error("action {pos}: node {node} scheduled before its predecessor {pred}")]
    Dependency {
        pos: usize,
        node: NodeId,
        pred: NodeId,
    },
    #[error("complete plan is missing node {node}")]
    MissingNode { node: NodeId },
}

/// Checks a plan (or a plan prefix when `complete` is false) for
/// dependency safety. Returns the first violation in plan order.
pub fn validate_plan(dag: &MergedDag, plan: &[Action], complete: bool) -> Result<(), PlanViolation> {
    let mut done = vec![false; dag.len()];
    for (pos, a) in plan.iter().enumerate() {
        if a.node >= dag.len() {
            return Err(PlanViolation::UnknownNode { pos, node: a.node });
        }
        if !dag.node(a.node).is_exec() {
            return Err(PlanViolation::NotExecutable { pos, node: a.node });
        }
        if done[a.node] {
            return Err(PlanViolation::Duplicate { pos, node: a.node });
        }
        if let Some(e) = dag
            .preds(a.node)
            .iter()
            .find(|e| dag.node(e.src).is_exec() && !done[e.src])
        {
            return Err(PlanViolation::Dependency {
                pos,
                node: a.node,
                pred: e.src,
            });
        }
        done[a.node] = true;
    }
    if complete {
        if let Some(node) = dag.exec_ids().find(|&i| !done[i]) {
            return Err(PlanViolation::MissingNode { node });
        }
    }
    Ok(())
}
