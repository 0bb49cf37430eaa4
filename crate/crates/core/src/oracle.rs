//! Exhaustive best-path search on small graphs, the shortest-path baseline
//! and policy evaluation reports.

use std::collections::HashMap;
use std::io::Write;
use std::sync::atomic::{AtomicUsize, Ordering};

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::deception::{discounted_return, node_bonuses, RewardConfig};
use crate::graph::{hop_distances, shortest_distances, NodeId, WeightedGraph};
use crate::policy::{ActionMode, Decision, GraphObservation, Policy};
use crate::trainer::{run_episode, EpisodeSpec, WorldCache};
use crate::{Error, Result};

/// Largest node count searched without a step bound.
pub const MAX_SEARCH_NODES: usize = 25;
/// Largest step budget searched on bigger graphs.
pub const MAX_SEARCH_STEPS: usize = 14;
/// Memo entries allowed before the search gives up.
pub const MAX_SEARCH_STATES: usize = 4_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OraclePath {
    pub path: Vec<NodeId>,
    pub discounted_return: f64,
    /// Sum of the bonuses collected along the path.
    pub deceptiveness: f64,
    pub states_explored: usize,
}

/// Best walk from `start` that ends at `goals[true_goal_index]` within the budget.
///
/// Bonuses come from the same tables the episode reward uses.
pub fn brute_force_best_path(
    graph: &WeightedGraph,
    start: NodeId,
    goals: &[NodeId],
    true_goal_index: usize,
    t_max: f64,
    reward: &RewardConfig,
) -> Result<OraclePath> {
    check_search_size(graph, t_max)?;
    let bonuses = node_bonuses(graph, start, goals, true_goal_index, reward)?;
    best_path_with_bonuses(graph, start, goals[true_goal_index], &bonuses, t_max, reward)
}

/// Same search with caller supplied per-node bonuses.
pub fn best_path_with_bonuses(
    graph: &WeightedGraph,
    start: NodeId,
    goal: NodeId,
    bonuses: &[f64],
    t_max: f64,
    reward: &RewardConfig,
) -> Result<OraclePath> {
    check_search_size(graph, t_max)?;
    graph.check_node(start)?;
    graph.check_node(goal)?;
    if bonuses.len() != graph.node_count() {
        return Err(Error::InvalidArgument(format!(
            "{} bonuses for {} nodes",
            bonuses.len(),
            graph.node_count()
        )));
    }
    if start == goal {
        return Ok(OraclePath {
            path: vec![start],
            discounted_return: reward.goal_reward,
            deceptiveness: 0.0,
            states_explored: 0,
        });
    }
    let max_moves = t_max.floor() as usize;
    let hops = hop_distances(graph, goal)?;
    match hops[start] {
        Some(h) if h <= max_moves => {}
        _ => {
            return Err(Error::InvalidArgument(format!(
                "goal {goal} cannot be reached from {start} within {t_max} moves"
            )))
        }
    }
    let words = graph.node_count().div_ceil(64);
    let mut search = Search {
        graph,
        goal,
        bonuses,
        hops: &hops,
        max_moves,
        gamma: reward.gamma,
        goal_reward: reward.goal_reward,
        memo: HashMap::new(),
    };
    let mut visited = vec![0u64; words];
    set_bit(&mut visited, start);
    let best = search.best(start, &mut visited, 0)?;
    let value = best.ok_or_else(|| Error::Internal("no walk reaches the goal".into()))?;

    let mut path = vec![start];
    let mut visited = vec![0u64; words];
    set_bit(&mut visited, start);
    let mut deceptiveness = 0.0;
    let mut node = start;
    while node != goal {
        let key = (node, path.len() - 1, visited.clone());
        let next = search
            .memo
            .get(&key)
            .and_then(|e| e.map(|(_, n)| n))
            .ok_or_else(|| Error::Internal("walk reconstruction lost its way".into()))?;
        if next != goal && !get_bit(&visited, next) {
            deceptiveness += bonuses[next];
        }
        set_bit(&mut visited, next);
        path.push(next);
        node = next;
    }
    Ok(OraclePath {
        path,
        discounted_return: value,
        deceptiveness,
        states_explored: search.memo.len(),
    })
}

fn check_search_size(graph: &WeightedGraph, t_max: f64) -> Result<()> {
    if graph.node_count() > MAX_SEARCH_NODES && t_max > MAX_SEARCH_STEPS as f64 {
        return Err(Error::SearchTooLarge(format!(
            "{} nodes with a budget of {t_max}; exhaustive search needs at most {MAX_SEARCH_NODES} nodes or a budget of at most {MAX_SEARCH_STEPS}",
            graph.node_count()
        )));
    }
    Ok(())
}

type MemoKey = (NodeId, usize, Vec<u64>);

struct Search<'a> {
    graph: &'a WeightedGraph,
    goal: NodeId,
    bonuses: &'a [f64],
    hops: &'a [Option<usize>],
    max_moves: usize,
    gamma: f64,
    goal_reward: f64,
    memo: HashMap<MemoKey, Option<(f64, NodeId)>>,
}

impl Search<'_> {
    /// Best discounted return from here with `moves` already taken, or
    /// `None` when the goal is out of reach.
    fn best(&mut self, node: NodeId, visited: &mut Vec<u64>, moves: usize) -> Result<Option<f64>> {
        let key = (node, moves, visited.clone());
        if let Some(entry) = self.memo.get(&key) {
            return Ok(entry.map(|(v, _)| v));
        }
        if self.memo.len() >= MAX_SEARCH_STATES {
            return Err(Error::SearchTooLarge(format!(
                "more than {MAX_SEARCH_STATES} search states on {} nodes with {} moves",
                self.graph.node_count(),
                self.max_moves
            )));
        }
        let mut neighbors: Vec<NodeId> = self.graph.neighbors(node).iter().map(|&(v, _)| v).collect();
        neighbors.sort_unstable();
        neighbors.dedup();
        let mut best: Option<(f64, NodeId)> = None;
        for v in neighbors {
            let reachable = match self.hops[v] {
                Some(h) => moves + 1 + h <= self.max_moves,
                None => false,
            };
            if !reachable {
                continue;
            }
            let value = if v == self.goal {
                self.goal_reward
            } else {
                let fresh = !get_bit(visited, v);
                let r = if fresh { self.bonuses[v] } else { 0.0 };
                if fresh {
                    set_bit(visited, v);
                }
                let rest = self.best(v, visited, moves + 1);
                if fresh {
                    clear_bit(visited, v);
                }
                match rest? {
                    Some(rest) => r + self.gamma * rest,
                    None => continue,
                }
            };
            if best.map_or(true, |(b, _)| value > b) {
                best = Some((value, v));
            }
        }
        self.memo.insert(key, best);
        Ok(best.map(|(v, _)| v))
    }
}

fn set_bit(bits: &mut [u64], i: usize) {
    bits[i / 64] |= 1 << (i % 64);
}

fn clear_bit(bits: &mut [u64], i: usize) {
    bits[i / 64] &= !(1 << (i % 64));
}

fn get_bit(bits: &[u64], i: usize) -> bool {
    bits[i / 64] & (1 << (i % 64)) != 0
}

/// Dijkstra route from `start` to `goal`; ties go to the lowest node id.
pub fn shortest_path(graph: &WeightedGraph, start: NodeId, goal: NodeId) -> Result<Vec<NodeId>> {
    graph.check_node(start)?;
    let to_goal = shortest_distances(graph, goal)?;
    if !to_goal.is_reachable(start) {
        return Err(Error::InvalidArgument(format!(
            "goal {goal} is unreachable from {start}"
        )));
    }
    let tolerance = 1e-9 * to_goal.get(start).max(1.0);
    let mut path = vec![start];
    let mut node = start;
    while node != goal {
        let here = to_goal.get(node);
        let next = graph
            .neighbors(node)
            .iter()
            .filter(|&&(v, w)| (to_goal.get(v) + w - here).abs() <= tolerance && to_goal.get(v) < here)
            .map(|&(v, _)| v)
            .min()
            .ok_or_else(|| Error::Internal(format!("no descending edge out of {node}")))?;
        path.push(next);
        node = next;
    }
    Ok(path)
}

/// Replays a fixed walk, one node per decision.
#[derive(Debug)]
pub struct PathPolicy {
    path: Vec<NodeId>,
    step: AtomicUsize,
}

impl PathPolicy {
    pub fn new(path: Vec<NodeId>) -> Self {
        Self { path, step: AtomicUsize::new(0) }
    }

    pub fn reset(&self) {
        self.step.store(0, Ordering::SeqCst);
    }
}

impl Policy for PathPolicy {
    fn perception_radius(&self) -> usize {
        1
    }

    fn decide(
        &self,
        observation: &GraphObservation,
        _mode: ActionMode,
        _rng: &mut dyn RngCore,
    ) -> Result<Decision> {
        let step = self.step.fetch_add(1, Ordering::SeqCst);
        if self.path.get(step) != Some(&observation.agent) {
            return Err(Error::InvalidArgument(format!(
                "replayed walk is not at node {} on step {step}",
                observation.agent
            )));
        }
        let next = *self.path.get(step + 1).ok_or(Error::NoAction)?;
        let index = observation
            .action_nodes
            .iter()
            .position(|&v| v == next)
            .ok_or_else(|| Error::InvalidArgument(format!("no edge to {next} on step {step}")))?;
        Ok(Decision { index, log_prob: 0.0, value: 0.0 })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub graph: usize,
    pub start: NodeId,
    pub true_goal: NodeId,
    pub decoy: NodeId,
    pub t_max: f64,
    pub reached_goal: bool,
    pub deceptiveness: f64,
    pub discounted_return: f64,
    pub path_length: f64,
    pub shortest_length: f64,
}

impl EpisodeRecord {
    pub const CSV_HEADER: &'static str =
        "graph,start,true_goal,decoy,t_max,reached_goal,deceptiveness,discounted_return,path_length,shortest_length";

    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.graph,
            self.start,
            self.true_goal,
            self.decoy,
            self.t_max,
            self.reached_goal as u8,
            self.deceptiveness,
            self.discounted_return,
            self.path_length,
            self.shortest_length
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub goal_rate: f64,
    /// Mean over episodes of the summed finalised bonuses.
    pub mean_deceptiveness: f64,
    /// Path length over shortest length, averaged over goal-reaching episodes.
    pub mean_path_ratio: Option<f64>,
    pub mean_return: f64,
    pub episodes: usize,
}

impl EvalReport {
    pub fn from_records(records: &[EpisodeRecord]) -> Self {
        let n = records.len();
        if n == 0 {
            return Self {
                goal_rate: 0.0,
                mean_deceptiveness: 0.0,
                mean_path_ratio: None,
                mean_return: 0.0,
                episodes: 0,
            };
        }
        let mean = |f: &dyn Fn(&EpisodeRecord) -> f64| records.iter().map(f).sum::<f64>() / n as f64;
        let reached: Vec<f64> = records
            .iter()
            .filter(|r| r.reached_goal && r.shortest_length > 0.0)
            .map(|r| r.path_length / r.shortest_length)
            .collect();
        Self {
            goal_rate: mean(&|r| r.reached_goal as u8 as f64),
            mean_deceptiveness: mean(&|r| r.deceptiveness),
            mean_path_ratio: (!reached.is_empty())
                .then(|| reached.iter().sum::<f64>() / reached.len() as f64),
            mean_return: mean(&|r| r.discounted_return),
            episodes: n,
        }
    }
}

/// Runs `episodes_per_spec` rollouts of every spec in order.
pub fn evaluate_policy(
    cache: &WorldCache,
    specs: &[EpisodeSpec],
    policy: &dyn Policy,
    reward: &RewardConfig,
    mode: ActionMode,
    episodes_per_spec: usize,
    rng: &mut dyn RngCore,
) -> Result<(EvalReport, Vec<EpisodeRecord>)> {
    let mut records = Vec::with_capacity(specs.len() * episodes_per_spec);
    for spec in specs {
        let shortest_length = cache.distances(spec.graph, spec.true_goal)?.get(spec.start);
        let graph = cache.graph(spec.graph)?;
        for _ in 0..episodes_per_spec {
            let result = run_episode(cache, spec, policy, reward, mode, rng, false)?;
            records.push(EpisodeRecord {
                graph: spec.graph,
                start: spec.start,
                true_goal: spec.true_goal,
                decoy: spec.decoy,
                t_max: spec.t_max,
                reached_goal: result.reached_goal,
                deceptiveness: result.deceptiveness(),
                discounted_return: result.discounted_return(reward.gamma),
                path_length: result.path_length(graph),
                shortest_length,
            });
        }
    }
    Ok((EvalReport::from_records(&records), records))
}

pub fn write_episode_csv(records: &[EpisodeRecord], out: &mut dyn Write) -> Result<()> {
    writeln!(out, "{}", EpisodeRecord::CSV_HEADER)?;
    for r in records {
        writeln!(out, "{}", r.to_csv())?;
    }
    Ok(())
}

/// Discounted return of a fixed walk replayed through the episode pipeline.
pub fn replay_return(
    cache: &WorldCache,
    spec: &EpisodeSpec,
    path: &[NodeId],
    reward: &RewardConfig,
    rng: &mut dyn RngCore,
) -> Result<f64> {
    let policy = PathPolicy::new(path.to_vec());
    let result = run_episode(cache, spec, &policy, reward, ActionMode::Greedy, rng, false)?;
    let values: Vec<f64> = result.rewards.iter().map(|r| r.value).collect();
    Ok(discounted_return(&values, reward.gamma))
}
