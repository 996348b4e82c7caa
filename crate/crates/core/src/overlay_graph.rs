//! Directed overlay with an external source, path queries and accusation delays.

use std::collections::VecDeque;
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

pub type NodeId = usize;

/// A vertex of the dissemination graph: the external source or a node of N.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Vertex {
    Source,
    Node(NodeId),
}

impl Vertex {
    /// Serialized index: -1 for the source.
    pub fn index(self) -> i64 {
        match self {
            Vertex::Source => -1,
            Vertex::Node(i) => i as i64,
        }
    }

    pub fn from_index(ix: i64) -> Option<Vertex> {
        match ix {
            -1 => Some(Vertex::Source),
            i if i >= 0 => Some(Vertex::Node(i as usize)),
            _ => None,
        }
    }

    pub fn node(self) -> Option<NodeId> {
        match self {
            Vertex::Source => None,
            Vertex::Node(i) => Some(i),
        }
    }
}

impl fmt::Display for Vertex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Vertex::Source => write!(f, "s"),
            Vertex::Node(i) => write!(f, "{i}"),
        }
    }
}

impl Serialize for Vertex {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_i64(self.index())
    }
}

impl<'de> Deserialize<'de> for Vertex {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let ix = i64::deserialize(d)?;
        Vertex::from_index(ix).ok_or_else(|| serde::de::Error::custom(format!("bad vertex {ix}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OverlayGraph {
    n: usize,
    out: Vec<Vec<NodeId>>,
    inn: Vec<Vec<NodeId>>,
    source_targets: Vec<NodeId>,
    edges: Vec<(NodeId, NodeId)>,
    edge_ix: Vec<usize>,
}

const NO_EDGE: usize = usize::MAX;

/// Builds a graph over nodes `0..n`, failing closed on any invariant violation.
pub fn build_graph(
    n: usize,
    edge_list: &[(NodeId, NodeId)],
    source_targets: &[NodeId],
) -> Result<OverlayGraph> {
    if source_targets.is_empty() {
        return Err(Error::EmptySourceTargets);
    }
    let mut out = vec![Vec::new(); n];
    let mut inn = vec![Vec::new(); n];
    let mut edge_ix = vec![NO_EDGE; n * n];
    for &(u, v) in edge_list {
        for x in [u, v] {
            if x >= n {
                return Err(Error::NodeOutOfRange { node: x as i64, n });
            }
        }
        if u == v {
            return Err(Error::SelfLoop(u));
        }
        if edge_ix[u * n + v] != NO_EDGE {
            return Err(Error::DuplicateEdge(u, v));
        }
        edge_ix[u * n + v] = 0;
        out[u].push(v);
        inn[v].push(u);
    }
    let mut targets = source_targets.to_vec();
    targets.sort_unstable();
    targets.dedup();
    if let Some(&t) = targets.iter().find(|&&t| t >= n) {
        return Err(Error::NodeOutOfRange { node: t as i64, n });
    }
    for l in out.iter_mut().chain(inn.iter_mut()) {
        l.sort_unstable();
    }
    let mut edges = Vec::with_capacity(edge_list.len());
    for u in 0..n {
        for &v in &out[u] {
            edge_ix[u * n + v] = edges.len();
            edges.push((u, v));
        }
    }
    let g = OverlayGraph {
        n,
        out,
        inn,
        source_targets: targets,
        edges,
        edge_ix,
    };
    let seen = g.reach_from(Vertex::Source, None);
    if let Some(i) = (0..n).find(|&i| !seen[i]) {
        return Err(Error::DisconnectedFromSource(i));
    }
    Ok(g)
}

impl OverlayGraph {
    pub fn n(&self) -> usize {
        self.n
    }

    /// N_i, sorted.
    pub fn out_neighbors(&self, i: NodeId) -> &[NodeId] {
        &self.out[i]
    }

    /// N_i^{-1} restricted to nodes, sorted.
    pub fn in_neighbors(&self, i: NodeId) -> &[NodeId] {
        &self.inn[i]
    }

    /// N_i^{-1} including the source when i ∈ N_s.
    pub fn in_vertices(&self, i: NodeId) -> Vec<Vertex> {
        let mut v = Vec::with_capacity(self.inn[i].len() + 1);
        if self.is_source_target(i) {
            v.push(Vertex::Source);
        }
        v.extend(self.inn[i].iter().map(|&k| Vertex::Node(k)));
        v
    }

    pub fn source_targets(&self) -> &[NodeId] {
        &self.source_targets
    }

    pub fn is_source_target(&self, i: NodeId) -> bool {
        self.source_targets.binary_search(&i).is_ok()
    }

    /// Edges among nodes in lexicographic order; positions are the edge indices.
    pub fn edges(&self) -> &[(NodeId, NodeId)] {
        &self.edges
    }

    pub fn edge_index(&self, u: NodeId, v: NodeId) -> Option<usize> {
        if u >= self.n || v >= self.n {
            return None;
        }
        match self.edge_ix[u * self.n + v] {
            NO_EDGE => None,
            e => Some(e),
        }
    }

    pub fn has_edge(&self, u: Vertex, v: NodeId) -> bool {
        match u {
            Vertex::Source => self.is_source_target(v),
            Vertex::Node(u) => self.edge_index(u, v).is_some(),
        }
    }

    /// Peers of a vertex: N_v ∪ N_v^{-1} (source included where adjacent).
    pub fn peers(&self, v: Vertex) -> Vec<Vertex> {
        match v {
            Vertex::Source => self.source_targets.iter().map(|&i| Vertex::Node(i)).collect(),
            Vertex::Node(i) => {
                let mut p = self.in_vertices(i);
                p.extend(self.out[i].iter().map(|&j| Vertex::Node(j)));
                p.sort_unstable();
                p.dedup();
                p
            }
        }
    }

    fn successors(&self, v: Vertex) -> &[NodeId] {
        match v {
            Vertex::Source => &self.source_targets,
            Vertex::Node(i) => &self.out[i],
        }
    }

    /// Nodes reachable from `from` without entering `avoid`.
    pub(crate) fn reach_from(&self, from: Vertex, avoid: Option<NodeId>) -> Vec<bool> {
        let d = self.hops_from(from, avoid);
        d.iter().map(Option::is_some).collect()
    }

    /// BFS hop counts from `from` to each node, never entering `avoid`.
    pub fn hops_from(&self, from: Vertex, avoid: Option<NodeId>) -> Vec<Option<u32>> {
        let mut dist = vec![None; self.n];
        if from.node().is_some() && from.node() == avoid {
            return dist;
        }
        let mut queue = VecDeque::new();
        if let Vertex::Node(i) = from {
            dist[i] = Some(0);
        }
        queue.push_back((from, 0u32));
        while let Some((v, d)) = queue.pop_front() {
            for &w in self.successors(v) {
                if Some(w) == avoid || dist[w].is_some() {
                    continue;
                }
                dist[w] = Some(d + 1);
                queue.push_back((Vertex::Node(w), d + 1));
            }
        }
        dist
    }

    /// True iff a directed path from `from` to `to` exists that never visits `avoid`.
    pub fn path_exists_avoiding(&self, from: Vertex, to: NodeId, avoid: Option<NodeId>) -> bool {
        if Some(to) == avoid {
            return false;
        }
        if from == Vertex::Node(to) {
            return from.node() != avoid;
        }
        self.hops_from(from, avoid)[to].is_some()
    }

    /// True iff `k` lies on some simple path from the source to `i`.
    pub fn on_simple_source_path(&self, i: NodeId, k: NodeId) -> bool {
        if k == i {
            return true;
        }
        let mut on_path = vec![false; self.n];
        self.simple_path_dfs(Vertex::Source, i, k, false, &mut on_path)
    }

    fn simple_path_dfs(
        &self,
        v: Vertex,
        target: NodeId,
        via: NodeId,
        seen_via: bool,
        on_path: &mut Vec<bool>,
    ) -> bool {
        for &w in self.successors(v) {
            if on_path[w] {
                continue;
            }
            if w == target {
                if seen_via {
                    return true;
                }
                continue;
            }
            // prune: the target must stay reachable without revisiting the current path
            if !self.reachable_avoiding_set(w, target, on_path) {
                continue;
            }
            on_path[w] = true;
            let found = self.simple_path_dfs(Vertex::Node(w), target, via, seen_via || w == via, on_path);
            on_path[w] = false;
            if found {
                return true;
            }
        }
        false
    }

    fn reachable_avoiding_set(&self, from: NodeId, to: NodeId, blocked: &[bool]) -> bool {
        let mut seen = vec![false; self.n];
        let mut stack = vec![from];
        seen[from] = true;
        while let Some(u) = stack.pop() {
            if u == to {
                return true;
            }
            for &w in &self.out[u] {
                if !seen[w] && !blocked[w] {
                    seen[w] = true;
                    stack.push(w);
                }
            }
        }
        false
    }

    /// Necessary topology condition for punishing `i` after it drops `j`: some node
    /// k ≠ i on a simple source-to-i path is reachable from j without crossing i.
    pub fn lemma_paths_condition(&self, i: NodeId, j: NodeId) -> Result<bool> {
        if self.edge_index(i, j).is_none() {
            return Err(Error::NotAnEdge(i, j));
        }
        let from_j = self.reach_from(Vertex::Node(j), Some(i));
        Ok((0..self.n)
            .filter(|&k| k != i && from_j[k])
            .any(|k| self.on_simple_source_path(i, k)))
    }

    /// Every node can be reached from the source avoiding any single other node.
    pub fn is_redundant(&self) -> bool {
        (0..self.n).all(|j| {
            let r = self.reach_from(Vertex::Source, Some(j));
            (0..self.n).all(|i| i == j || r[i])
        })
    }

    /// Every out-neighbor of `i` reaches every in-neighbor of `i` without crossing `i`.
    pub fn supports_full_indirect(&self, i: NodeId) -> bool {
        self.out[i].iter().all(|&j| {
            let r = self.reach_from(Vertex::Node(j), Some(i));
            self.inn[i].iter().all(|&k| r[k])
        })
    }

    /// Per-edge booleans of `lemma_paths_condition`, in edge order.
    pub fn lemma_paths_all(&self) -> Vec<bool> {
        self.edges
            .iter()
            .map(|&(i, j)| self.lemma_paths_condition(i, j).unwrap_or(false))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DelayOverride {
    pub observer: Vertex,
    pub accused: NodeId,
    pub victim: NodeId,
    /// `None` encodes an accusation that never arrives.
    pub delay: Option<u32>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DelayModelConfig {
    #[serde(default)]
    pub overrides: Vec<DelayOverride>,
}

/// del_k[i,j] for every observer (nodes, then the source) and every edge.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DelayMatrix {
    n: usize,
    delay: Vec<Vec<Option<u32>>>,
}

impl DelayMatrix {
    fn obs_ix(&self, v: Vertex) -> usize {
        match v {
            Vertex::Source => self.n,
            Vertex::Node(k) => k,
        }
    }

    /// Delay for observer `k` of `accused`'s defection toward `victim`; `None` is infinite.
    pub fn get(&self, g: &OverlayGraph, k: Vertex, accused: NodeId, victim: NodeId) -> Option<u32> {
        let e = g.edge_index(accused, victim).expect("delay queried on a non-edge");
        self.delay[self.obs_ix(k)][e]
    }

    pub fn get_by_edge(&self, k: Vertex, e: usize) -> Option<u32> {
        self.delay[self.obs_ix(k)][e]
    }

    /// Largest finite delay in the matrix.
    pub fn max_finite(&self) -> u32 {
        self.delay.iter().flatten().flatten().copied().max().unwrap_or(0)
    }

    /// mdel_i: maximum delay of accusations against `i` toward its in-neighbors
    /// (the source included); `None` when one of them is infinite.
    pub fn mdel(&self, g: &OverlayGraph, i: NodeId) -> Option<u32> {
        let mut m = 0;
        for &j in g.out_neighbors(i) {
            for k in g.in_vertices(i) {
                m = m.max(self.get(g, k, i, j)?);
            }
        }
        Some(m)
    }

    /// Uniform matrix with every entry zero (public-monitoring equivalent).
    pub fn zeros(g: &OverlayGraph) -> DelayMatrix {
        DelayMatrix {
            n: g.n(),
            delay: vec![vec![Some(0); g.edges().len()]; g.n() + 1],
        }
    }
}

/// Default model: hop count of the shortest path from the victim to the observer that
/// avoids the accused. The source learns through the closest node it feeds directly.
pub fn compute_delays(g: &OverlayGraph, model: &DelayModelConfig) -> Result<DelayMatrix> {
    let n = g.n();
    let mut delay = vec![vec![None; g.edges().len()]; n + 1];
    for (e, &(i, j)) in g.edges().iter().enumerate() {
        let d = g.hops_from(Vertex::Node(j), Some(i));
        for k in 0..n {
            delay[k][e] = d[k];
        }
        delay[i][e] = Some(0);
        delay[j][e] = Some(0);
        delay[n][e] = g
            .source_targets()
            .iter()
            .filter(|&&t| t != i)
            .filter_map(|&t| d[t])
            .min();
    }
    for o in &model.overrides {
        let e = g.edge_index(o.accused, o.victim).ok_or_else(|| Error::InvalidOverride {
            observer: o.observer,
            accused: o.accused,
            victim: o.victim,
            reason: "not an edge".into(),
        })?;
        let k = match o.observer {
            Vertex::Source => n,
            Vertex::Node(k) if k < n => k,
            Vertex::Node(k) => return Err(Error::NodeOutOfRange { node: k as i64, n }),
        };
        if (k == o.accused || k == o.victim) && o.delay != Some(0) {
            return Err(Error::InvalidOverride {
                observer: o.observer,
                accused: o.accused,
                victim: o.victim,
                reason: "endpoints of the edge observe with zero delay".into(),
            });
        }
        delay[k][e] = o.delay;
    }
    Ok(DelayMatrix { n, delay })
}
