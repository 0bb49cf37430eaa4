//! Maximum-entropy observer.
//!
//! For each candidate goal `G` the observer holds a soft value table
//!
//! ```text
//! Q_G(s, s') = -c(s, s') + gamma_c * V_G(s')
//! V_G(s)     = alpha * log sum_{s'} exp(Q_G(s, s') / alpha),   V_G(G) = 0
//! ```
//!
//! and scores a partial trajectory by its two endpoints only:
//!
//! ```text
//! Pr(G | start .. current) ∝ exp(V_G(current) - V_G(start)) * Pr(G)
//! ```
//!
//! With unit costs the far-field value on a graph of degree `deg` tends to
//! `(alpha * ln(deg) - 1) / (1 - gamma_c)`. When that is positive the goal
//! becomes the lowest-valued node and the posterior points away from it, so
//! alpha must stay below `1 / ln(max degree)` for the model to make sense
//! (about 0.72 on 4-connected grids).

use serde::{Deserialize, Serialize};

use crate::graph::{NodeId, WeightedGraph};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ObserverSettings {
    pub alpha: f64,
    pub gamma_c: f64,
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for ObserverSettings {
    fn default() -> Self {
        Self {
            alpha: 0.6,
            gamma_c: 0.8,
            tolerance: 1e-6,
            max_iterations: 10_000,
        }
    }
}

impl ObserverSettings {
    pub fn with_alpha(alpha: f64) -> Self {
        Self {
            alpha,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "alpha must be positive, got {}",
                self.alpha
            )));
        }
        if !(self.gamma_c > 0.0 && self.gamma_c <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "gamma_c must lie in (0, 1], got {}",
                self.gamma_c
            )));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::InvalidArgument("tolerance must be positive".into()));
        }
        Ok(())
    }
}

/// Soft value table for one goal with the default iteration cap.
pub fn softmax_value_iteration(
    graph: &WeightedGraph,
    goal: NodeId,
    alpha: f64,
    gamma_c: f64,
    tolerance: f64,
) -> Result<Vec<f64>> {
    let settings = ObserverSettings {
        alpha,
        gamma_c,
        tolerance,
        ..ObserverSettings::default()
    };
    value_table(graph, goal, &settings)
}

/// Jacobi softmax value iteration; stops once the max-norm change drops below
/// the tolerance. Nodes without edges get `-inf` (no action is available).
pub fn value_table(
    graph: &WeightedGraph,
    goal: NodeId,
    settings: &ObserverSettings,
) -> Result<Vec<f64>> {
    settings.validate()?;
    if !graph.contains(goal) {
        return Err(Error::InvalidArgument(format!("goal {goal} is not a node")));
    }
    let n = graph.node_count();
    let inv_alpha = 1.0 / settings.alpha;
    let mut values: Vec<f64> = (0..n)
        .map(|s| if graph.degree(s) == 0 && s != goal { f64::NEG_INFINITY } else { 0.0 })
        .collect();
    let mut next = values.clone();
    let mut scratch = Vec::new();
    let mut residual = f64::INFINITY;
    for _ in 0..settings.max_iterations {
        residual = 0.0;
        for s in 0..n {
            if s == goal || graph.degree(s) == 0 {
                continue;
            }
            scratch.clear();
            scratch.extend(
                graph
                    .neighbors(s)
                    .iter()
                    .map(|&(t, c)| (-c + settings.gamma_c * values[t]) * inv_alpha),
            );
            let v = settings.alpha * log_sum_exp(&scratch);
            residual = residual.max((v - values[s]).abs());
            next[s] = v;
        }
        std::mem::swap(&mut values, &mut next);
        if residual < settings.tolerance {
            return Ok(values);
        }
        if !residual.is_finite() {
            break;
        }
    }
    Err(Error::Convergence {
        iterations: settings.max_iterations,
        residual,
    })
}

pub(crate) fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + xs.iter().map(|&x| (x - max).exp()).sum::<f64>().ln()
}

/// Per-goal value tables and priors for one graph and goal set.
#[derive(Debug, Clone, PartialEq)]
pub struct ObserverTables {
    pub goals: Vec<NodeId>,
    pub values: Vec<Vec<f64>>,
    pub priors: Vec<f64>,
    pub settings: ObserverSettings,
}

/// Runs value iteration once per goal. `priors` defaults to uniform.
pub fn build_observer(
    graph: &WeightedGraph,
    goals: &[NodeId],
    settings: &ObserverSettings,
    priors: Option<Vec<f64>>,
) -> Result<ObserverTables> {
    let values = goals
        .iter()
        .map(|&g| value_table(graph, g, settings))
        .collect::<Result<Vec<_>>>()?;
    ObserverTables::from_values(goals.to_vec(), values, priors, *settings)
}

impl ObserverTables {
    /// Assembles tables from precomputed per-goal values (e.g. from a cache).
    pub fn from_values(
        goals: Vec<NodeId>,
        values: Vec<Vec<f64>>,
        priors: Option<Vec<f64>>,
        settings: ObserverSettings,
    ) -> Result<Self> {
        if goals.is_empty() || values.len() != goals.len() {
            return Err(Error::InvalidConfiguration(format!(
                "{} value tables for {} goals",
                values.len(),
                goals.len()
            )));
        }
        let priors = priors.unwrap_or_else(|| vec![1.0 / goals.len() as f64; goals.len()]);
        if priors.len() != goals.len() {
            return Err(Error::InvalidConfiguration(
                "one prior per goal is required".into(),
            ));
        }
        if priors.iter().any(|&p| !(p > 0.0)) || (priors.iter().sum::<f64>() - 1.0).abs() > 1e-12
        {
            return Err(Error::InvalidConfiguration(format!(
                "priors must be positive and sum to 1, got {priors:?}"
            )));
        }
        Ok(Self {
            goals,
            values,
            priors,
            settings,
        })
    }

    pub fn posterior(&self, start: NodeId, current: NodeId) -> Result<Vec<f64>> {
        observer_posterior(self, start, current)
    }

    /// `{goal-id: [value per node]}`; non-finite values become `null`.
    pub fn to_json(&self) -> serde_json::Value {
        let map = self
            .goals
            .iter()
            .zip(&self.values)
            .map(|(g, vals)| {
                let arr = vals
                    .iter()
                    .map(|&v| {
                        serde_json::Number::from_f64(v)
                            .map(serde_json::Value::Number)
                            .unwrap_or(serde_json::Value::Null)
                    })
                    .collect();
                (g.to_string(), serde_json::Value::Array(arr))
            })
            .collect();
        serde_json::Value::Object(map)
    }
}

/// Goal posterior given only the trajectory endpoints.
pub fn observer_posterior(
    tables: &ObserverTables,
    start: NodeId,
    current: NodeId,
) -> Result<Vec<f64>> {
    let n = tables.values.first().map_or(0, Vec::len);
    if start >= n || current >= n {
        return Err(Error::InvalidArgument(format!(
            "nodes ({start}, {current}) outside tables of size {n}"
        )));
    }
    let diffs: Vec<f64> = tables
        .values
        .iter()
        .map(|v| v[current] - v[start])
        .collect();
    let shift = diffs
        .iter()
        .copied()
        .filter(|d| d.is_finite())
        .fold(f64::NEG_INFINITY, f64::max);
    let masses: Vec<f64> = diffs
        .iter()
        .zip(&tables.priors)
        .map(|(&d, &p)| if d.is_finite() { (d - shift).exp() * p } else { 0.0 })
        .collect();
    let total: f64 = masses.iter().sum();
    if !(total > 0.0 && total.is_finite()) {
        return Err(Error::DegeneratePosterior(format!(
            "unnormalised goal masses {masses:?} at node {current}"
        )));
    }
    Ok(masses.into_iter().map(|m| m / total).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::grid::GridWorld;
    use crate::graph::shortest_distances;
    use proptest::prelude::*;

    fn abg() -> WeightedGraph {
        // a=0, b=1, G=2
        WeightedGraph::from_edges(3, &[(0, 1, 1.0), (1, 2, 1.0)]).unwrap()
    }

    #[test]
    fn goal_value_is_zero() {
        let g = GridWorld::open(5, 5);
        for goal in [0, 7, 24] {
            let v = softmax_value_iteration(g.graph(), goal, 0.5, 0.99, 1e-6).unwrap();
            assert_eq!(v[goal], 0.0);
        }
    }

    #[test]
    fn low_alpha_approaches_discounted_shortest_cost() {
        let v = softmax_value_iteration(&abg(), 2, 0.01, 0.99, 1e-6).unwrap();
        assert!((v[1] + 1.0).abs() < 0.05, "{v:?}");
        assert!((v[0] + 1.99).abs() < 0.05, "{v:?}");
    }

    #[test]
    fn matches_long_fixed_point_oracle() {
        let gamma: f64 = 0.99;
        let (mut va, mut vb) = (0.0f64, 0.0f64);
        for _ in 0..10_000 {
            let na = (-1.0 + gamma * vb).exp().ln();
            let nb = ((-1.0 + gamma * va).exp() + (-1.0f64).exp()).ln();
            va = na;
            vb = nb;
        }
        let v = softmax_value_iteration(&abg(), 2, 1.0, gamma, 1e-6).unwrap();
        assert!((v[0] - va).abs() < 1e-6, "{} vs {va}", v[0]);
        assert!((v[1] - vb).abs() < 1e-6, "{} vs {vb}", v[1]);
    }

    #[test]
    fn undiscounted_divergence_reports_convergence_error() {
        // alpha * ln(4) > 1 with gamma_c = 1 grows without bound
        let g = GridWorld::open(6, 6);
        let settings = ObserverSettings {
            alpha: 2.0,
            gamma_c: 1.0,
            tolerance: 1e-6,
            max_iterations: 500,
        };
        let err = value_table(g.graph(), 0, &settings).unwrap_err();
        assert!(matches!(err, Error::Convergence { iterations: 500, .. }));
    }

    #[test]
    fn invalid_settings_rejected() {
        assert!(softmax_value_iteration(&abg(), 2, 0.0, 0.99, 1e-6).is_err());
        assert!(softmax_value_iteration(&abg(), 2, 1.0, 1.5, 1e-6).is_err());
        assert!(softmax_value_iteration(&abg(), 9, 1.0, 0.99, 1e-6).is_err());
    }

    #[test]
    fn posterior_at_start_is_prior() {
        let g = GridWorld::open(6, 6);
        let t = build_observer(g.graph(), &[5, 30], &ObserverSettings::default(), None).unwrap();
        assert_eq!(t.posterior(14, 14).unwrap(), vec![0.5, 0.5]);
        let skewed = build_observer(
            g.graph(),
            &[5, 30],
            &ObserverSettings::default(),
            Some(vec![0.25, 0.75]),
        )
        .unwrap();
        assert_eq!(skewed.posterior(3, 3).unwrap(), vec![0.25, 0.75]);
    }

    #[test]
    fn symmetric_line_gives_even_posterior() {
        let line = WeightedGraph::from_edges(3, &[(0, 1, 1.0), (1, 2, 1.0)]).unwrap();
        let t = build_observer(&line, &[0, 2], &ObserverSettings::default(), None).unwrap();
        let p = t.posterior(1, 1).unwrap();
        assert_eq!(p, vec![0.5, 0.5]);
    }

    #[test]
    fn rational_observer_identifies_reached_goal() {
        let g = GridWorld::open(8, 8);
        let goal = g.node_at(7, 7).unwrap();
        let other = g.node_at(0, 7).unwrap();
        let start = g.node_at(0, 0).unwrap();
        let t = build_observer(g.graph(), &[goal, other], &ObserverSettings::with_alpha(0.01), None)
            .unwrap();
        let p = t.posterior(start, goal).unwrap();
        assert!(p[0] > 0.99, "{p:?}");
    }

    #[test]
    fn per_goal_tables_match_single_calls() {
        let g = GridWorld::open(5, 5);
        let s = ObserverSettings::default();
        let t = build_observer(g.graph(), &[3, 21], &s, None).unwrap();
        assert_eq!(t.values.len(), 2);
        assert_eq!(t.values[0], value_table(g.graph(), 3, &s).unwrap());
        assert_eq!(t.values[1], value_table(g.graph(), 21, &s).unwrap());
        let again = build_observer(g.graph(), &[3, 21], &s, None).unwrap();
        assert_eq!(t, again);
    }

    #[test]
    fn bad_priors_rejected() {
        let g = GridWorld::open(3, 3);
        let s = ObserverSettings::default();
        assert!(build_observer(g.graph(), &[0, 8], &s, Some(vec![0.6, 0.6])).is_err());
        assert!(build_observer(g.graph(), &[0, 8], &s, Some(vec![1.0, 0.0])).is_err());
    }

    #[test]
    fn stepping_towards_goal_raises_its_probability() {
        let grid = GridWorld::open(10, 10);
        let g = grid.graph();
        let a = grid.node_at(9, 0).unwrap();
        let b = grid.node_at(9, 9).unwrap();
        let t = build_observer(g, &[a, b], &ObserverSettings::with_alpha(0.01), None).unwrap();
        let to_a = shortest_distances(g, a).unwrap();
        for start in [grid.node_at(0, 4).unwrap(), grid.node_at(2, 2).unwrap()] {
            let mut here = start;
            let mut prev = t.posterior(start, here).unwrap()[0];
            while here != a {
                let next = g
                    .neighbors(here)
                    .iter()
                    .map(|&(v, _)| v)
                    .find(|&v| to_a.get(v) < to_a.get(here))
                    .unwrap();
                let p = t.posterior(start, next).unwrap()[0];
                assert!(p > prev, "Pr(a) fell from {prev} to {p}");
                prev = p;
                here = next;
            }
        }
    }

    #[test]
    fn json_dump_has_one_entry_per_goal() {
        let g = GridWorld::open(3, 3);
        let t = build_observer(g.graph(), &[0, 8], &ObserverSettings::default(), None).unwrap();
        let j = t.to_json();
        assert_eq!(j["0"].as_array().unwrap().len(), 9);
        assert_eq!(j["8"][8].as_f64(), Some(0.0));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn posterior_is_normalised(start in 0usize..36, current in 0usize..36) {
            let g = GridWorld::open(6, 6);
            let t = build_observer(g.graph(), &[0, 35, 17], &ObserverSettings::default(), None).unwrap();
            let p = t.posterior(start, current).unwrap();
            prop_assert!(p.iter().all(|&x| x >= 0.0));
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }
}
