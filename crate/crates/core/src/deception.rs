//! Deception bonuses, classical deception metrics and the episode reward.

use serde::{Deserialize, Serialize};

use crate::graph::{shortest_distances, DistanceTable, EpisodeContext, NodeId, WeightedGraph};
use crate::observer::{build_observer, ObserverSettings};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeceptionMode {
    Exaggeration,
    Ambiguity,
}

impl std::str::FromStr for DeceptionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exaggeration" => Ok(Self::Exaggeration),
            "ambiguity" => Ok(Self::Ambiguity),
            other => Err(Error::InvalidArgument(format!(
                "unknown deception mode {other:?} (expected exaggeration or ambiguity)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardConfig {
    pub mode: DeceptionMode,
    /// Agent discount.
    pub gamma: f64,
    pub goal_reward: f64,
    pub timeout_penalty: f64,
    /// Observer used by the exaggeration bonus.
    pub observer: ObserverSettings,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self::new(DeceptionMode::Exaggeration)
    }
}

impl RewardConfig {
    pub fn new(mode: DeceptionMode) -> Self {
        Self {
            mode,
            gamma: 0.99,
            goal_reward: 1.0,
            timeout_penalty: -1.0,
            observer: ObserverSettings::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::InvalidConfiguration(format!(
                "gamma must lie in (0, 1), got {}",
                self.gamma
            )));
        }
        Ok(())
    }
}

/// `max_{G != G*} Pr(G) - Pr(G*)`.
pub fn exaggeration_bonus(posterior: &[f64], true_goal_index: usize) -> Result<f64> {
    let best_decoy = best_decoy_probability(posterior, true_goal_index)?;
    Ok(best_decoy - posterior[true_goal_index])
}

/// `1 + Pr(G*) - max_{G != G*} Pr(G)`; equals `1 - exaggeration_bonus`.
pub fn classical_exaggeration(posterior: &[f64], true_goal_index: usize) -> Result<f64> {
    let best_decoy = best_decoy_probability(posterior, true_goal_index)?;
    Ok(1.0 + posterior[true_goal_index] - best_decoy)
}

fn best_decoy_probability(posterior: &[f64], true_goal_index: usize) -> Result<f64> {
    if posterior.len() < 2 {
        return Err(Error::InvalidConfiguration(
            "deception needs at least one decoy goal".into(),
        ));
    }
    if true_goal_index >= posterior.len() {
        return Err(Error::InvalidArgument(format!(
            "true goal index {true_goal_index} out of range"
        )));
    }
    Ok(posterior
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != true_goal_index)
        .map(|(_, &p)| p)
        .fold(f64::NEG_INFINITY, f64::max))
}

/// `sum_{G != G*} clamp(1 - |d(s,G) - d(s,G*)| / d(G,G*), 0, 1)`.
///
/// `distance_tables` are indexed like the goal list.
pub fn ambiguity_bonus(
    distance_tables: &[DistanceTable],
    true_goal_index: usize,
    node: NodeId,
) -> Result<f64> {
    if distance_tables.len() < 2 {
        return Err(Error::InvalidConfiguration(
            "ambiguity needs at least one decoy goal".into(),
        ));
    }
    let truth = distance_tables.get(true_goal_index).ok_or_else(|| {
        Error::InvalidArgument(format!("true goal index {true_goal_index} out of range"))
    })?;
    let mut total = 0.0;
    for (i, decoy) in distance_tables.iter().enumerate() {
        if i == true_goal_index {
            continue;
        }
        let separation = truth.get(decoy.source);
        if !(separation > 0.0) || !truth.is_reachable(decoy.source) {
            return Err(Error::InvalidConfiguration(format!(
                "decoy {} is co-located with or unreachable from the true goal",
                decoy.source
            )));
        }
        let gap = (decoy.get(node) - truth.get(node)).abs();
        total += (1.0 - gap / separation).clamp(0.0, 1.0);
    }
    Ok(total)
}

/// `sum_G sum_G' |Pr(G) - Pr(G')|` over ordered pairs.
pub fn classical_ambiguity(posterior: &[f64]) -> f64 {
    posterior
        .iter()
        .map(|&p| posterior.iter().map(|&q| (p - q).abs()).sum::<f64>())
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardKind {
    Timeout,
    Goal,
    Bonus,
    Revisit,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepReward {
    pub kind: RewardKind,
    pub value: f64,
}

/// Reward for the move that just brought the agent to `context.current()`.
///
/// Precedence: past the time limit, then reaching the true goal, then the
/// first-visit deception bonus. `first_visit` is what
/// [`EpisodeContext::advance`] returned for this move.
pub fn step_reward(
    context: &EpisodeContext,
    config: &RewardConfig,
    first_visit: bool,
    bonus: f64,
) -> StepReward {
    if context.last_move_timed_out() {
        StepReward {
            kind: RewardKind::Timeout,
            value: config.timeout_penalty,
        }
    } else if context.current() == context.true_goal() {
        StepReward {
            kind: RewardKind::Goal,
            value: config.goal_reward,
        }
    } else if first_visit {
        StepReward {
            kind: RewardKind::Bonus,
            value: bonus,
        }
    } else {
        StepReward {
            kind: RewardKind::Revisit,
            value: 0.0,
        }
    }
}

/// Zeroes every deception bonus of an episode that missed the goal.
pub fn finalize_episode(rewards: &[StepReward], reached_goal: bool) -> Vec<StepReward> {
    rewards
        .iter()
        .map(|r| {
            if !reached_goal && r.kind == RewardKind::Bonus {
                StepReward { value: 0.0, ..*r }
            } else {
                *r
            }
        })
        .collect()
}

/// `sum_t gamma^(t-1) r_t`.
pub fn discounted_return(rewards: &[f64], gamma: f64) -> f64 {
    let mut weight = 1.0;
    let mut total = 0.0;
    for &r in rewards {
        total += weight * r;
        weight *= gamma;
    }
    total
}

/// Sum of the (finalised) deception bonuses of an episode.
pub fn deceptiveness(rewards: &[StepReward]) -> f64 {
    rewards
        .iter()
        .filter(|r| r.kind == RewardKind::Bonus)
        .map(|r| r.value)
        .sum()
}

/// First-visit bonus of every node for a fixed start and goal list.
pub fn node_bonuses(
    graph: &WeightedGraph,
    start: NodeId,
    goals: &[NodeId],
    true_goal_index: usize,
    config: &RewardConfig,
) -> Result<Vec<f64>> {
    let metric = match config.mode {
        DeceptionMode::Exaggeration => HeatmapMetric::Exaggeration,
        DeceptionMode::Ambiguity => HeatmapMetric::ProposedAmbiguity,
    };
    metric_heatmap(graph, start, goals, true_goal_index, metric, &config.observer)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeatmapMetric {
    ClassicalAmbiguity,
    ProposedAmbiguity,
    Exaggeration,
}

impl std::str::FromStr for HeatmapMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "classical_ambiguity" | "classical-ambiguity" => Ok(Self::ClassicalAmbiguity),
            "proposed_ambiguity" | "proposed-ambiguity" | "ambiguity" => {
                Ok(Self::ProposedAmbiguity)
            }
            "exaggeration" => Ok(Self::Exaggeration),
            other => Err(Error::InvalidArgument(format!("unknown metric {other:?}"))),
        }
    }
}

/// Evaluates a deception metric at every node. Posterior-based metrics use
/// the trajectory endpoints `(start, node)`; classical ambiguity is 0 on goals.
pub fn metric_heatmap(
    graph: &WeightedGraph,
    start: NodeId,
    goals: &[NodeId],
    true_goal_index: usize,
    metric: HeatmapMetric,
    observer: &ObserverSettings,
) -> Result<Vec<f64>> {
    let n = graph.node_count();
    match metric {
        HeatmapMetric::ProposedAmbiguity => {
            let tables = goals
                .iter()
                .map(|&g| shortest_distances(graph, g))
                .collect::<Result<Vec<_>>>()?;
            (0..n)
                .map(|v| ambiguity_bonus(&tables, true_goal_index, v))
                .collect()
        }
        HeatmapMetric::ClassicalAmbiguity | HeatmapMetric::Exaggeration => {
            let tables = build_observer(graph, goals, observer, None)?;
            (0..n)
                .map(|v| {
                    let p = tables.posterior(start, v)?;
                    match metric {
                        HeatmapMetric::ClassicalAmbiguity if goals.contains(&v) => Ok(0.0),
                        HeatmapMetric::ClassicalAmbiguity => Ok(classical_ambiguity(&p)),
                        _ => exaggeration_bonus(&p, true_goal_index),
                    }
                })
                .collect()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::grid::GridWorld;
    use proptest::prelude::*;

    #[test]
    fn exaggeration_extremes() {
        assert_eq!(exaggeration_bonus(&[0.0, 1.0], 0).unwrap(), 1.0);
        assert_eq!(exaggeration_bonus(&[1.0, 0.0], 0).unwrap(), -1.0);
        assert_eq!(exaggeration_bonus(&[0.5, 0.5], 0).unwrap(), 0.0);
        assert!(matches!(
            exaggeration_bonus(&[1.0], 0),
            Err(Error::InvalidConfiguration(_))
        ));
    }

    #[test]
    fn classical_exaggeration_examples() {
        assert_eq!(classical_exaggeration(&[0.0, 1.0], 0).unwrap(), 0.0);
        assert_eq!(classical_exaggeration(&[1.0, 0.0], 0).unwrap(), 2.0);
        assert_eq!(classical_exaggeration(&[0.5, 0.5], 0).unwrap(), 1.0);
    }

    #[test]
    fn classical_ambiguity_examples() {
        assert_eq!(classical_ambiguity(&[0.5, 0.5]), 0.0);
        assert_eq!(classical_ambiguity(&[1.0, 0.0]), 2.0);
        assert_eq!(classical_ambiguity(&[0.5, 0.5, 0.0]), 2.0);
        assert_eq!(classical_ambiguity(&[1.0 / 3.0; 3]), 0.0);
    }

    fn line_tables() -> (WeightedGraph, Vec<DistanceTable>) {
        // 0 - 1 - 2 - 3 - 4 ; true goal 0, decoy 4
        let g = WeightedGraph::from_edges(5, &[(0, 1, 1.0), (1, 2, 1.0), (2, 3, 1.0), (3, 4, 1.0)])
            .unwrap();
        let tables = vec![shortest_distances(&g, 0).unwrap(), shortest_distances(&g, 4).unwrap()];
        (g, tables)
    }

    #[test]
    fn ambiguity_examples() {
        let (_, tables) = line_tables();
        assert_eq!(ambiguity_bonus(&tables, 0, 2).unwrap(), 1.0);
        assert_eq!(ambiguity_bonus(&tables, 0, 4).unwrap(), 0.0);
        assert_eq!(ambiguity_bonus(&tables, 0, 0).unwrap(), 0.0);
        assert_eq!(ambiguity_bonus(&tables, 0, 1).unwrap(), 0.5);
    }

    #[test]
    fn ambiguity_direct_arithmetic() {
        // d(s,G*)=3, d(s,G)=5, d(G,G*)=4 on a small weighted graph:
        // s=0, G*=1, G=2 with edges 0-1 (3), 1-2 (4), 0-2 (5)
        let g = WeightedGraph::from_edges(3, &[(0, 1, 3.0), (1, 2, 4.0), (0, 2, 5.0)]).unwrap();
        let tables = vec![shortest_distances(&g, 1).unwrap(), shortest_distances(&g, 2).unwrap()];
        assert_eq!(ambiguity_bonus(&tables, 0, 0).unwrap(), 0.5);
    }

    #[test]
    fn ambiguity_rejects_bad_decoys() {
        let g = WeightedGraph::from_edges(3, &[(0, 1, 1.0)]).unwrap();
        let tables = vec![shortest_distances(&g, 0).unwrap(), shortest_distances(&g, 2).unwrap()];
        assert!(ambiguity_bonus(&tables, 0, 1).is_err());
        let same = vec![shortest_distances(&g, 0).unwrap(), shortest_distances(&g, 0).unwrap()];
        assert!(ambiguity_bonus(&same, 0, 1).is_err());
    }

    #[test]
    fn reward_precedence() {
        let (g, _) = line_tables();
        let cfg = RewardConfig::new(DeceptionMode::Ambiguity);
        // budget 2; true goal 4
        let mut ctx = EpisodeContext::new(&g, 2, vec![4, 0], 0, 2.0).unwrap();
        let first = ctx.advance(&g, 1).unwrap();
        assert_eq!(step_reward(&ctx, &cfg, first, 0.3).kind, RewardKind::Bonus);
        let again = ctx.advance(&g, 2).unwrap();
        let r = step_reward(&ctx, &cfg, again, 0.3);
        assert_eq!((r.kind, r.value), (RewardKind::Revisit, 0.0));
        // third move: t = T_max + 1, not at goal
        let third = ctx.advance(&g, 3).unwrap();
        let r = step_reward(&ctx, &cfg, third, 0.3);
        assert_eq!((r.kind, r.value), (RewardKind::Timeout, -1.0));

        let mut ctx = EpisodeContext::new(&g, 2, vec![4, 0], 0, 2.0).unwrap();
        ctx.advance(&g, 3).unwrap();
        let fv = ctx.advance(&g, 4).unwrap();
        let r = step_reward(&ctx, &cfg, fv, 0.3);
        assert_eq!((r.kind, r.value), (RewardKind::Goal, 1.0));
    }

    fn bonus(v: f64) -> StepReward {
        StepReward { kind: RewardKind::Bonus, value: v }
    }

    #[test]
    fn finalize_examples() {
        let timeout = StepReward { kind: RewardKind::Timeout, value: -1.0 };
        let failed = finalize_episode(&[bonus(0.4), bonus(0.7), timeout], false);
        let values: Vec<_> = failed.iter().map(|r| r.value).collect();
        assert_eq!(values, vec![0.0, 0.0, -1.0]);

        let goal = StepReward { kind: RewardKind::Goal, value: 1.0 };
        let ok = vec![bonus(0.4), goal];
        assert_eq!(finalize_episode(&ok, true), ok);

        let zeros = vec![bonus(0.0), timeout];
        assert_eq!(finalize_episode(&zeros, false), zeros);
    }

    #[test]
    fn discounted_return_examples() {
        assert!((discounted_return(&[0.0, 0.0, 1.0], 0.99) - 0.9801).abs() < 1e-15);
        assert_eq!(discounted_return(&[], 0.99), 0.0);
        let rewards = [0.3, -0.2, 0.9, 1.0, -1.0, 0.5];
        let horner = rewards.iter().rev().fold(0.0, |acc, &r| r + 0.9 * acc);
        assert!((discounted_return(&rewards, 0.9) - horner).abs() < 1e-12);
    }

    #[test]
    fn heatmap_proposed_ambiguity_peaks_between_goals() {
        let grid = GridWorld::open(9, 9);
        let g = grid.graph();
        let a = grid.node_at(0, 0).unwrap();
        let b = grid.node_at(0, 8).unwrap();
        let s = grid.node_at(8, 4).unwrap();
        let h = metric_heatmap(g, s, &[a, b], 0, HeatmapMetric::ProposedAmbiguity, &ObserverSettings::default())
            .unwrap();
        for v in 0..g.node_count() {
            let (_, c) = grid.cell_of(v);
            if c == 4 {
                assert_eq!(h[v], 1.0);
            } else {
                assert!(h[v] < 1.0);
            }
        }
        assert_eq!(h[a], 0.0);
        assert_eq!(h[b], 0.0);
    }

    proptest! {
        #[test]
        fn exaggeration_bounds_and_complement(raw in prop::collection::vec(0.001f64..1.0, 2..5), idx in 0usize..5) {
            let total: f64 = raw.iter().sum();
            let p: Vec<f64> = raw.iter().map(|x| x / total).collect();
            let idx = idx % p.len();
            let r = exaggeration_bonus(&p, idx).unwrap();
            prop_assert!((-1.0..=1.0).contains(&r));
            prop_assert!((r - (1.0 - classical_exaggeration(&p, idx).unwrap())).abs() < 1e-12);
        }

        #[test]
        fn finalize_is_idempotent(values in prop::collection::vec(-1.0f64..1.0, 0..10), reached in any::<bool>()) {
            let rewards: Vec<_> = values.iter().map(|&v| bonus(v)).collect();
            let once = finalize_episode(&rewards, reached);
            prop_assert_eq!(finalize_episode(&once, reached), once);
        }

        #[test]
        fn discounted_return_is_linear(a in prop::collection::vec(-1.0f64..1.0, 6), b in prop::collection::vec(-1.0f64..1.0, 6), k in -3.0f64..3.0) {
            let combo: Vec<f64> = a.iter().zip(&b).map(|(x, y)| k * x + y).collect();
            let lhs = discounted_return(&combo, 0.97);
            let rhs = k * discounted_return(&a, 0.97) + discounted_return(&b, 0.97);
            prop_assert!((lhs - rhs).abs() < 1e-12);
            prop_assert_eq!(discounted_return(&[0.0; 6], 0.97), 0.0);
        }
    }
}
