//! Immutable weighted graphs and the per-episode state that walks them.
//!
//! Node ids are dense `0..n`. Adjacency lists are kept sorted by neighbour id,
//! and every "lowest index" tie-break in the crate relies on that order.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub type NodeId = usize;

/// Undirected graph with strictly positive edge weights and optional 2-D
/// node coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedGraph {
    adjacency: Vec<Vec<(NodeId, f64)>>,
    coords: Option<Vec<[f64; 2]>>,
}

impl WeightedGraph {
    /// Builds a graph from an undirected edge list. Each edge is listed once.
    pub fn from_edges(node_count: usize, edges: &[(NodeId, NodeId, f64)]) -> Result<Self> {
        let mut adjacency: Vec<Vec<(NodeId, f64)>> = vec![Vec::new(); node_count];
        for &(u, v, w) in edges {
            if u >= node_count || v >= node_count {
                return Err(Error::InvalidArgument(format!(
                    "edge ({u}, {v}) references a node outside 0..{node_count}"
                )));
            }
            if u == v {
                return Err(Error::InvalidArgument(format!("self-loop at node {u}")));
            }
            if !(w > 0.0 && w.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "edge ({u}, {v}) has non-positive or non-finite weight {w}"
                )));
            }
            adjacency[u].push((v, w));
            adjacency[v].push((u, w));
        }
        for (u, list) in adjacency.iter_mut().enumerate() {
            list.sort_by_key(|&(v, _)| v);
            if list.windows(2).any(|pair| pair[0].0 == pair[1].0) {
                return Err(Error::InvalidArgument(format!("duplicate edge at node {u}")));
            }
        }
        Ok(Self {
            adjacency,
            coords: None,
        })
    }

    pub fn with_coords(mut self, coords: Vec<[f64; 2]>) -> Result<Self> {
        if coords.len() != self.adjacency.len() {
            return Err(Error::InvalidArgument(format!(
                "{} coordinates supplied for {} nodes",
                coords.len(),
                self.adjacency.len()
            )));
        }
        self.coords = Some(coords);
        Ok(self)
    }

    pub fn node_count(&self) -> usize {
        self.adjacency.len()
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum::<usize>() / 2
    }

    pub fn contains(&self, node: NodeId) -> bool {
        node < self.adjacency.len()
    }

    /// Neighbours of `node` with edge weights, sorted by neighbour id.
    pub fn neighbors(&self, node: NodeId) -> &[(NodeId, f64)] {
        &self.adjacency[node]
    }

    pub fn degree(&self, node: NodeId) -> usize {
        self.adjacency[node].len()
    }

    pub fn edge_weight(&self, u: NodeId, v: NodeId) -> Option<f64> {
        let list = self.adjacency.get(u)?;
        list.binary_search_by_key(&v, |&(n, _)| n)
            .ok()
            .map(|i| list[i].1)
    }

    pub fn coords(&self) -> Option<&[[f64; 2]]> {
        self.coords.as_deref()
    }

    pub fn coord(&self, node: NodeId) -> Option<[f64; 2]> {
        self.coords.as_ref().map(|c| c[node])
    }

    /// Iterates each undirected edge once as `(u, v, w)` with `u < v`.
    pub fn edges(&self) -> impl Iterator<Item = (NodeId, NodeId, f64)> + '_ {
        self.adjacency.iter().enumerate().flat_map(|(u, list)| {
            list.iter()
                .filter(move |&&(v, _)| u < v)
                .map(move |&(v, w)| (u, v, w))
        })
    }

    pub fn total_weight(&self) -> f64 {
        self.edges().map(|(_, _, w)| w).sum()
    }

    /// Finite stand-in for "unreachable": strictly larger than any path length.
    pub fn unreachable_distance(&self) -> f64 {
        self.total_weight() + 1.0
    }

    pub fn check_node(&self, node: NodeId) -> Result<()> {
        if self.contains(node) {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "node {node} is not in a graph with {} nodes",
                self.node_count()
            )))
        }
    }
}

/// Weighted shortest distances from one source node.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceTable {
    pub source: NodeId,
    distances: Vec<f64>,
    unreachable: f64,
}

impl DistanceTable {
    pub fn get(&self, node: NodeId) -> f64 {
        self.distances[node]
    }

    pub fn is_reachable(&self, node: NodeId) -> bool {
        self.distances[node] < self.unreachable
    }

    /// Sentinel stored for unreachable nodes.
    pub fn unreachable_value(&self) -> f64 {
        self.unreachable
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.distances
    }
}

#[derive(PartialEq)]
struct HeapEntry(f64, NodeId);

impl Eq for HeapEntry {}

impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on distance, then on node id
        other
            .0
            .total_cmp(&self.0)
            .then_with(|| other.1.cmp(&self.1))
    }
}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Dijkstra from `source`. Unreachable nodes hold
/// [`WeightedGraph::unreachable_distance`].
pub fn shortest_distances(graph: &WeightedGraph, source: NodeId) -> Result<DistanceTable> {
    graph.check_node(source)?;
    let unreachable = graph.unreachable_distance();
    let mut dist = vec![f64::INFINITY; graph.node_count()];
    let mut heap = BinaryHeap::new();
    dist[source] = 0.0;
    heap.push(HeapEntry(0.0, source));
    while let Some(HeapEntry(d, u)) = heap.pop() {
        if d > dist[u] {
            continue;
        }
        for &(v, w) in graph.neighbors(u) {
            let candidate = d + w;
            if candidate < dist[v] {
                dist[v] = candidate;
                heap.push(HeapEntry(candidate, v));
            }
        }
    }
    for d in &mut dist {
        if d.is_infinite() {
            *d = unreachable;
        }
    }
    Ok(DistanceTable {
        source,
        distances: dist,
        unreachable,
    })
}

/// Unweighted hop counts from `source`; `None` for unreachable nodes.
pub fn hop_distances(graph: &WeightedGraph, source: NodeId) -> Result<Vec<Option<usize>>> {
    graph.check_node(source)?;
    let mut hops = vec![None; graph.node_count()];
    let mut queue = VecDeque::new();
    hops[source] = Some(0);
    queue.push_back(source);
    while let Some(u) = queue.pop_front() {
        let next = hops[u].map(|h| h + 1);
        for &(v, _) in graph.neighbors(u) {
            if hops[v].is_none() {
                hops[v] = next;
                queue.push_back(v);
            }
        }
    }
    Ok(hops)
}

/// Induced subgraph around a centre node with the local-to-global id map.
///
/// Local ids follow breadth-first discovery order, so the centre is always
/// local node 0 and `hops` is non-decreasing.
#[derive(Debug, Clone)]
pub struct Subgraph {
    pub graph: WeightedGraph,
    pub local_to_global: Vec<NodeId>,
    pub hops: Vec<usize>,
}

impl Subgraph {
    pub fn center(&self) -> NodeId {
        0
    }

    pub fn global(&self, local: NodeId) -> NodeId {
        self.local_to_global[local]
    }

    pub fn local(&self, global: NodeId) -> Option<NodeId> {
        self.local_to_global.iter().position(|&g| g == global)
    }
}

pub fn k_hop_neighborhood(graph: &WeightedGraph, center: NodeId, k: usize) -> Result<Subgraph> {
    graph.check_node(center)?;
    let mut local_of = vec![usize::MAX; graph.node_count()];
    let mut order = vec![center];
    let mut hops = vec![0];
    local_of[center] = 0;
    let mut head = 0;
    while head < order.len() {
        let u = order[head];
        let h = hops[head];
        head += 1;
        if h == k {
            continue;
        }
        for &(v, _) in graph.neighbors(u) {
            if local_of[v] == usize::MAX {
                local_of[v] = order.len();
                order.push(v);
                hops.push(h + 1);
            }
        }
    }
    let mut edges = Vec::new();
    for (lu, &u) in order.iter().enumerate() {
        for &(v, w) in graph.neighbors(u) {
            let lv = local_of[v];
            if lv != usize::MAX && lu < lv {
                edges.push((lu, lv, w));
            }
        }
    }
    let mut local = WeightedGraph::from_edges(order.len(), &edges)?;
    if let Some(coords) = graph.coords() {
        local = local.with_coords(order.iter().map(|&g| coords[g]).collect())?;
    }
    Ok(Subgraph {
        graph: local,
        local_to_global: order,
        hops,
    })
}

/// Mutable state of one walk: start, goals, budget, step counter, trajectory.
///
/// `t` is the index of the move about to be taken, so it starts at 1 and a
/// move made while `t > budget` is past the time limit.
#[derive(Debug, Clone)]
pub struct EpisodeContext {
    pub start: NodeId,
    pub goals: Vec<NodeId>,
    pub true_goal_index: usize,
    pub budget: f64,
    pub t: usize,
    visited: Vec<bool>,
    trajectory: Vec<NodeId>,
}

impl EpisodeContext {
    pub fn new(
        graph: &WeightedGraph,
        start: NodeId,
        goals: Vec<NodeId>,
        true_goal_index: usize,
        budget: f64,
    ) -> Result<Self> {
        graph.check_node(start)?;
        for &g in &goals {
            graph.check_node(g)?;
        }
        if true_goal_index >= goals.len() {
            return Err(Error::InvalidArgument(format!(
                "true goal index {true_goal_index} out of range for {} goals",
                goals.len()
            )));
        }
        for (i, g) in goals.iter().enumerate() {
            if goals[..i].contains(g) {
                return Err(Error::InvalidArgument(format!("goal {g} listed twice")));
            }
        }
        let mut visited = vec![false; graph.node_count()];
        visited[start] = true;
        Ok(Self {
            start,
            goals,
            true_goal_index,
            budget,
            t: 1,
            visited,
            trajectory: vec![start],
        })
    }

    pub fn current(&self) -> NodeId {
        *self.trajectory.last().expect("trajectory is never empty")
    }

    pub fn true_goal(&self) -> NodeId {
        self.goals[self.true_goal_index]
    }

    pub fn trajectory(&self) -> &[NodeId] {
        &self.trajectory
    }

    pub fn is_visited(&self, node: NodeId) -> bool {
        self.visited.get(node).copied().unwrap_or(false)
    }

    pub fn moves_taken(&self) -> usize {
        self.trajectory.len() - 1
    }

    /// Remaining budget as seen by the policy while deciding move `t`.
    pub fn remaining_budget(&self) -> f64 {
        self.budget - self.t as f64
    }

    /// Moves along edge `(current, next)`. Returns whether `next` was new.
    pub fn advance(&mut self, graph: &WeightedGraph, next: NodeId) -> Result<bool> {
        let here = self.current();
        if graph.edge_weight(here, next).is_none() {
            return Err(Error::InvalidArgument(format!(
                "no edge between {here} and {next}"
            )));
        }
        let first_visit = !self.visited[next];
        self.visited[next] = true;
        self.trajectory.push(next);
        self.t += 1;
        Ok(first_visit)
    }

    /// Whether the move that produced the current position exceeded the budget.
    pub fn last_move_timed_out(&self) -> bool {
        self.moves_taken() as f64 > self.budget
    }
}

/// How raw attribute values are presented to the policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttributeScaling {
    /// Values exactly as defined: hop-free distances and remaining steps.
    #[default]
    Raw,
    /// Distances and remaining budget divided by the start-to-true-goal
    /// distance, so that slack comparisons are scale free.
    Normalized,
}

/// Assembles `[visited, d(node, goal_1), .., d(node, goal_n), remaining]`.
///
/// `distance_tables` must be in goal-list order, true goal first.
pub fn node_attributes(
    context: &EpisodeContext,
    node: NodeId,
    distance_tables: &[DistanceTable],
    scaling: AttributeScaling,
) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(context.goals.len() + 2);
    write_node_attributes(context, node, distance_tables, scaling, &mut out)?;
    Ok(out)
}

pub(crate) fn write_node_attributes(
    context: &EpisodeContext,
    node: NodeId,
    distance_tables: &[DistanceTable],
    scaling: AttributeScaling,
    out: &mut Vec<f64>,
) -> Result<()> {
    if distance_tables.len() != context.goals.len() {
        return Err(Error::Internal(format!(
            "{} distance tables for {} goals",
            distance_tables.len(),
            context.goals.len()
        )));
    }
    for (table, &goal) in distance_tables.iter().zip(&context.goals) {
        if table.source != goal {
            return Err(Error::Internal(format!(
                "distance table for node {} supplied where goal {goal} was expected",
                table.source
            )));
        }
    }
    let scale = match scaling {
        AttributeScaling::Raw => 1.0,
        AttributeScaling::Normalized => {
            let d0 = distance_tables[context.true_goal_index].get(context.start);
            if d0 > 0.0 {
                d0
            } else {
                1.0
            }
        }
    };
    out.push(if context.is_visited(node) { 1.0 } else { 0.0 });
    for table in distance_tables {
        out.push(table.get(node) / scale);
    }
    out.push(context.remaining_budget() / scale);
    Ok(())
}
