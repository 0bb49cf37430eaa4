//! Episode specs, per-world caches and rollouts on graphs.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::OnceLock;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::deception::{
    ambiguity_bonus, deceptiveness, discounted_return, exaggeration_bonus, finalize_episode,
    step_reward, DeceptionMode, RewardConfig, RewardKind, StepReward,
};
use crate::graph::{
    shortest_distances, write_node_attributes, DistanceTable, EpisodeContext, NodeId,
    WeightedGraph,
};
use crate::observer::{value_table, ObserverSettings, ObserverTables};
use crate::policy::{ActionMode, GraphObservation, Policy};
use crate::{Error, Result};

/// One task: which graph, where to start, the true goal, the decoy and the budget.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSpec {
    pub graph: usize,
    pub start: NodeId,
    pub true_goal: NodeId,
    pub decoy: NodeId,
    pub t_max: f64,
}

impl EpisodeSpec {
    /// Goal list as seen by the policy: true goal first.
    pub fn goals(&self) -> Vec<NodeId> {
        vec![self.true_goal, self.decoy]
    }
}

/// Graphs plus lazily computed distance tables and observer value tables.
///
/// Tables are computed at most once per (graph, node) and shared by all
/// episodes; the counters make that assertable.
#[derive(Debug)]
pub struct WorldCache {
    graphs: Vec<WeightedGraph>,
    distances: Vec<Vec<OnceLock<DistanceTable>>>,
    values: Vec<Vec<OnceLock<Vec<f64>>>>,
    observer: ObserverSettings,
    distance_runs: AtomicUsize,
    value_iteration_runs: AtomicUsize,
}

impl WorldCache {
    pub fn new(graphs: Vec<WeightedGraph>, observer: ObserverSettings) -> Result<Self> {
        if graphs.is_empty() {
            return Err(Error::InvalidArgument("at least one graph is required".into()));
        }
        observer.validate()?;
        Ok(Self {
            distances: graphs.iter().map(|g| empty_cells(g.node_count())).collect(),
            values: graphs.iter().map(|g| empty_cells(g.node_count())).collect(),
            graphs,
            observer,
            distance_runs: AtomicUsize::new(0),
            value_iteration_runs: AtomicUsize::new(0),
        })
    }

    pub fn graphs(&self) -> &[WeightedGraph] {
        &self.graphs
    }

    pub fn graph(&self, index: usize) -> Result<&WeightedGraph> {
        self.graphs
            .get(index)
            .ok_or_else(|| Error::InvalidArgument(format!("graph index {index} out of range")))
    }

    pub fn observer_settings(&self) -> &ObserverSettings {
        &self.observer
    }

    pub fn distances(&self, graph: usize, source: NodeId) -> Result<&DistanceTable> {
        let g = self.graph(graph)?;
        let cell = self.distances[graph]
            .get(source)
            .ok_or_else(|| Error::InvalidArgument(format!("node {source} out of range")))?;
        if let Some(t) = cell.get() {
            return Ok(t);
        }
        let table = shortest_distances(g, source)?;
        self.distance_runs.fetch_add(1, Ordering::Relaxed);
        let _ = cell.set(table);
        Ok(cell.get().expect("cell was just set"))
    }

    pub fn values(&self, graph: usize, goal: NodeId) -> Result<&[f64]> {
        let g = self.graph(graph)?;
        let cell = self.values[graph]
            .get(goal)
            .ok_or_else(|| Error::InvalidArgument(format!("node {goal} out of range")))?;
        if let Some(v) = cell.get() {
            return Ok(v);
        }
        let v = value_table(g, goal, &self.observer)?;
        self.value_iteration_runs.fetch_add(1, Ordering::Relaxed);
        let _ = cell.set(v);
        Ok(cell.get().expect("cell was just set"))
    }

    pub fn observer_tables(&self, graph: usize, goals: &[NodeId]) -> Result<ObserverTables> {
        let values = goals
            .iter()
            .map(|&g| self.values(graph, g).map(<[f64]>::to_vec))
            .collect::<Result<Vec<_>>>()?;
        ObserverTables::from_values(goals.to_vec(), values, None, self.observer)
    }

    pub fn distance_runs(&self) -> usize {
        self.distance_runs.load(Ordering::Relaxed)
    }

    pub fn value_iteration_runs(&self) -> usize {
        self.value_iteration_runs.load(Ordering::Relaxed)
    }
}

fn empty_cells<T>(n: usize) -> Vec<OnceLock<T>> {
    (0..n).map(|_| OnceLock::new()).collect()
}

/// Samples a training task: graph, start, goal pair without replacement and
/// an integer budget uniform between the shortest feasible length and the
/// length of the path through the decoy.
pub fn sample_episode_spec(cache: &WorldCache, rng: &mut dyn RngCore) -> Result<EpisodeSpec> {
    const RETRIES: usize = 1000;
    for _ in 0..RETRIES {
        let graph = rng.gen_range(0..cache.graphs().len());
        let n = cache.graph(graph)?.node_count();
        if n < 3 {
            continue;
        }
        let true_goal = rng.gen_range(0..n);
        let mut decoy = rng.gen_range(0..n - 1);
        if decoy >= true_goal {
            decoy += 1;
        }
        let start = rng.gen_range(0..n);
        if start == true_goal {
            continue;
        }
        let to_goal = cache.distances(graph, true_goal)?;
        let to_decoy = cache.distances(graph, decoy)?;
        if !(to_goal.is_reachable(start) && to_decoy.is_reachable(start) && to_goal.is_reachable(decoy)) {
            continue;
        }
        let lo = to_goal.get(start).ceil() as i64;
        let hi = (to_decoy.get(start) + to_goal.get(decoy)).floor() as i64;
        if hi < lo {
            continue;
        }
        let t_max = rng.gen_range(lo..=hi) as f64;
        return Ok(EpisodeSpec { graph, start, true_goal, decoy, t_max });
    }
    Err(Error::InvalidConfiguration(format!(
        "no reachable start/goal/decoy triple found after {RETRIES} attempts"
    )))
}

/// Evaluation task with budget `factor * d(start, goal)`.
pub fn spec_with_budget_factor(
    cache: &WorldCache,
    graph: usize,
    start: NodeId,
    true_goal: NodeId,
    decoy: NodeId,
    factor: f64,
) -> Result<EpisodeSpec> {
    let d = cache.distances(graph, true_goal)?;
    if !d.is_reachable(start) {
        return Err(Error::InvalidArgument("goal unreachable from start".into()));
    }
    Ok(EpisodeSpec { graph, start, true_goal, decoy, t_max: factor * d.get(start) })
}

/// Random evaluation tasks with budget `factor * d(start, goal)`.
pub fn sample_eval_specs(
    cache: &WorldCache,
    count: usize,
    factor: f64,
    rng: &mut dyn RngCore,
) -> Result<Vec<EpisodeSpec>> {
    (0..count)
        .map(|_| {
            let s = sample_episode_spec(cache, rng)?;
            spec_with_budget_factor(cache, s.graph, s.start, s.true_goal, s.decoy, factor)
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct Transition {
    pub observation: GraphObservation,
    pub action: usize,
    pub log_prob: f64,
    pub value: f64,
    /// Reward after end-of-episode nullification.
    pub reward: f64,
    pub done: bool,
}

#[derive(Debug, Clone)]
pub struct EpisodeResult {
    pub spec: EpisodeSpec,
    /// Only filled when rollouts are recorded for training.
    pub transitions: Vec<Transition>,
    pub trajectory: Vec<NodeId>,
    pub rewards: Vec<StepReward>,
    pub reached_goal: bool,
}

impl EpisodeResult {
    pub fn deceptiveness(&self) -> f64 {
        deceptiveness(&self.rewards)
    }

    pub fn discounted_return(&self, gamma: f64) -> f64 {
        let r: Vec<f64> = self.rewards.iter().map(|r| r.value).collect();
        discounted_return(&r, gamma)
    }

    /// Weighted length of the walk.
    pub fn path_length(&self, graph: &WeightedGraph) -> f64 {
        self.trajectory
            .windows(2)
            .map(|w| graph.edge_weight(w[0], w[1]).unwrap_or(f64::NAN))
            .sum()
    }
}

/// Deception bonus for arriving at `node`.
enum BonusSource {
    Exaggeration(ObserverTables),
    Ambiguity,
}

impl BonusSource {
    fn new(cache: &WorldCache, spec: &EpisodeSpec, reward: &RewardConfig) -> Result<Self> {
        Ok(match reward.mode {
            DeceptionMode::Exaggeration => {
                if reward.observer != *cache.observer_settings() {
                    return Err(Error::InvalidConfiguration(
                        "reward observer settings differ from the world cache's".into(),
                    ));
                }
                Self::Exaggeration(cache.observer_tables(spec.graph, &spec.goals())?)
            }
            DeceptionMode::Ambiguity => Self::Ambiguity,
        })
    }

    fn bonus(&self, tables: &[DistanceTable], start: NodeId, node: NodeId) -> Result<f64> {
        match self {
            Self::Exaggeration(observer) => exaggeration_bonus(&observer.posterior(start, node)?, 0),
            Self::Ambiguity => ambiguity_bonus(tables, 0, node),
        }
    }
}

/// Rolls out one episode on a cached graph.
pub fn run_episode(
    cache: &WorldCache,
    spec: &EpisodeSpec,
    policy: &dyn Policy,
    reward: &RewardConfig,
    mode: ActionMode,
    rng: &mut dyn RngCore,
    record: bool,
) -> Result<EpisodeResult> {
    let graph = cache.graph(spec.graph)?;
    let goals = spec.goals();
    let mut ctx = EpisodeContext::new(graph, spec.start, goals.clone(), 0, spec.t_max)?;
    if spec.start == spec.true_goal {
        return Ok(EpisodeResult {
            spec: *spec,
            transitions: Vec::new(),
            trajectory: vec![spec.start],
            rewards: vec![StepReward { kind: RewardKind::Goal, value: reward.goal_reward }],
            reached_goal: true,
        });
    }
    let tables: Vec<DistanceTable> = goals
        .iter()
        .map(|&g| cache.distances(spec.graph, g).cloned())
        .collect::<Result<_>>()?;
    let bonus = BonusSource::new(cache, spec, reward)?;
    let scaling = policy.attribute_scaling();
    let input_dim = goals.len() + 2;

    let mut pending = Vec::new();
    let mut rewards = Vec::new();
    loop {
        let observation = GraphObservation::build(
            graph,
            ctx.current(),
            policy.perception_radius(),
            policy.neighbor_sample_cap(),
            rng,
            input_dim,
            1,
            |v, out| write_node_attributes(&ctx, v, &tables, scaling, out),
        )?;
        let decision = policy.decide(&observation, mode, rng)?;
        let next = *observation
            .action_nodes
            .get(decision.index)
            .ok_or_else(|| Error::Internal("policy chose a nonexistent edge".into()))?;
        let first_visit = ctx.advance(graph, next)?;
        let b = if first_visit && next != spec.true_goal && !ctx.last_move_timed_out() {
            bonus.bonus(&tables, spec.start, next)?
        } else {
            0.0
        };
        let r = step_reward(&ctx, reward, first_visit, b);
        rewards.push(r);
        let done = matches!(r.kind, RewardKind::Goal | RewardKind::Timeout);
        if record {
            pending.push((observation, decision));
        }
        if done {
            break;
        }
    }
    let reached_goal = ctx.current() == spec.true_goal && !ctx.last_move_timed_out();
    let rewards = finalize_episode(&rewards, reached_goal);
    let last = rewards.len() - 1;
    let transitions = pending
        .into_iter()
        .zip(&rewards)
        .enumerate()
        .map(|(i, ((observation, d), r))| Transition {
            observation,
            action: d.index,
            log_prob: d.log_prob,
            value: d.value,
            reward: r.value,
            done: i == last,
        })
        .collect();
    Ok(EpisodeResult {
        spec: *spec,
        transitions,
        trajectory: ctx.trajectory().to_vec(),
        rewards,
        reached_goal,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::deception::DeceptionMode;
    use crate::envs::grid::GridWorld;
    use crate::policy::{init_parameters, PolicyConfig, RandomPolicy, ShortestPathPolicy};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn open_cache(n: usize) -> WorldCache {
        WorldCache::new(vec![GridWorld::open(n, n).into_graph()], ObserverSettings::default()).unwrap()
    }

    #[test]
    fn spec_budget_bounds() {
        let cache = WorldCache::new(
            vec![GridWorld::parse(crate::envs::corpus::TRAIN_8[0]).unwrap().into_graph()],
            ObserverSettings::default(),
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..500 {
            let s = sample_episode_spec(&cache, &mut rng).unwrap();
            let dg = cache.distances(0, s.true_goal).unwrap();
            let dd = cache.distances(0, s.decoy).unwrap();
            assert_ne!(s.true_goal, s.decoy);
            assert_ne!(s.start, s.true_goal);
            assert!(s.t_max >= dg.get(s.start));
            assert!(s.t_max <= dd.get(s.start) + dg.get(s.decoy));
            assert_eq!(s.t_max.fract(), 0.0);
        }
    }

    #[test]
    fn sampled_budget_is_uniform_for_a_fixed_triple() {
        // path 0 - 1 - 2; the triple (start 0, goal 1, decoy 2) allows budgets 1..=3
        let g = WeightedGraph::from_edges(3, &[(0, 1, 1.0), (1, 2, 1.0)]).unwrap();
        let cache = WorldCache::new(vec![g], ObserverSettings::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut counts = [0usize; 3];
        while counts.iter().sum::<usize>() < 10_000 {
            let s = sample_episode_spec(&cache, &mut rng).unwrap();
            if (s.start, s.true_goal, s.decoy) == (0, 1, 2) {
                counts[s.t_max as usize - 1] += 1;
            }
        }
        let expected = 10_000.0 / 3.0;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        // 99% quantile of chi-square with 2 degrees of freedom
        assert!(chi2 < 9.21, "chi2 = {chi2}, counts {counts:?}");
    }

    #[test]
    fn start_at_goal_terminates_with_goal_reward() {
        let cache = open_cache(3);
        let spec = EpisodeSpec { graph: 0, start: 4, true_goal: 4, decoy: 0, t_max: 3.0 };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cfg = RewardConfig::new(DeceptionMode::Ambiguity);
        let r = run_episode(&cache, &spec, &RandomPolicy, &cfg, ActionMode::Sample, &mut rng, true).unwrap();
        assert!(r.reached_goal);
        assert_eq!(r.rewards.len(), 1);
        assert_eq!(r.rewards[0].value, 1.0);
        assert!(r.transitions.is_empty());
    }

    #[test]
    fn shortest_path_policy_reaches_goal_without_slack() {
        let cache = open_cache(6);
        let spec = EpisodeSpec { graph: 0, start: 0, true_goal: 35, decoy: 5, t_max: 10.0 };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cfg = RewardConfig::new(DeceptionMode::Exaggeration);
        let r = run_episode(&cache, &spec, &ShortestPathPolicy, &cfg, ActionMode::Greedy, &mut rng, false).unwrap();
        assert!(r.reached_goal);
        assert_eq!(r.trajectory.len(), 11);
        assert_eq!(r.rewards.last().unwrap().kind, RewardKind::Goal);
    }

    #[test]
    fn episodes_are_reproducible_and_follow_edges() {
        let cache = open_cache(5);
        let cfg = PolicyConfig { num_layers: 2, hidden_dim: 8, ..Default::default() };
        let params = init_parameters(&cfg, 4).unwrap();
        let reward = RewardConfig::new(DeceptionMode::Exaggeration);
        let spec = EpisodeSpec { graph: 0, start: 0, true_goal: 24, decoy: 4, t_max: 12.0 };
        let run = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            run_episode(&cache, &spec, &params, &reward, ActionMode::Sample, &mut rng, true).unwrap()
        };
        let (a, b) = (run(7), run(7));
        assert_eq!(a.trajectory, b.trajectory);
        assert_eq!(a.rewards, b.rewards);
        let g = cache.graph(0).unwrap();
        assert!(a.trajectory.windows(2).all(|w| g.edge_weight(w[0], w[1]).is_some()));
        assert_eq!(a.transitions.len(), a.rewards.len());
        assert!(a.transitions.last().unwrap().done);
        assert!(a.transitions.iter().all(|t| t.log_prob <= 0.0));
        if !a.reached_goal {
            assert!(a.rewards.iter().all(|r| r.kind != RewardKind::Bonus || r.value == 0.0));
            assert_eq!(a.rewards.last().unwrap().kind, RewardKind::Timeout);
        }
    }

    #[test]
    fn value_iteration_runs_once_per_goal() {
        let cache = open_cache(5);
        let reward = RewardConfig::new(DeceptionMode::Exaggeration);
        let spec = EpisodeSpec { graph: 0, start: 0, true_goal: 24, decoy: 4, t_max: 20.0 };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            run_episode(&cache, &spec, &RandomPolicy, &reward, ActionMode::Sample, &mut rng, false).unwrap();
        }
        assert_eq!(cache.value_iteration_runs(), 2);
    }
}
