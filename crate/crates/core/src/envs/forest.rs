//! Continuous forest: trees, local Voronoi planning graphs and episodes
//! driven by a graph policy with a distance budget.

use std::path::Path;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{distance, voronoi_graph_in, Bounds, ClipRegion, Point, VoronoiGraph};
use crate::graph::{shortest_distances, AttributeScaling, NodeId, WeightedGraph};
use crate::policy::{ActionMode, GraphObservation, Policy};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestWorld {
    pub trees: Vec<Point>,
    pub bounds: Bounds,
    pub start: Point,
    pub goal: Point,
    pub decoy: Point,
    /// Radius of the perception disk, world units.
    pub perception_radius: f64,
    /// Defaults to half the mean nearest-tree separation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub goal_capture_radius: Option<f64>,
}

/// Parameters of a generated forest.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestConfig {
    pub bounds: Bounds,
    pub tree_count: usize,
    pub min_separation: f64,
    pub start: Point,
    pub goal: Point,
    pub decoy: Point,
    /// In multiples of the mean nearest-tree separation.
    pub visibility: f64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            bounds: Bounds { min: [0.0, 0.0], max: [14.0, 20.0] },
            tree_count: 60,
            min_separation: 1.2,
            start: [7.0, 0.5],
            goal: [7.0, 19.5],
            decoy: [1.5, 14.0],
            visibility: 3.0,
        }
    }
}

/// Poisson-disk style rejection sampling of up to `count` trees.
///
/// Stops early when `count * 1000` candidates have been drawn.
pub fn generate_forest(bounds: &Bounds, count: usize, min_separation: f64, seed: u64) -> Vec<Point> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut trees: Vec<Point> = Vec::with_capacity(count);
    let attempts = count.saturating_mul(1000);
    for _ in 0..attempts {
        if trees.len() == count {
            break;
        }
        let p = [
            rng.gen_range(bounds.min[0]..=bounds.max[0]),
            rng.gen_range(bounds.min[1]..=bounds.max[1]),
        ];
        if trees.iter().all(|&q| distance(p, q) >= min_separation) {
            trees.push(p);
        }
    }
    trees
}

/// Mean distance from each tree to its nearest neighbour.
pub fn mean_separation(trees: &[Point]) -> Option<f64> {
    if trees.len() < 2 {
        return None;
    }
    let total: f64 = trees
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            trees
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, &q)| distance(p, q))
                .fold(f64::INFINITY, f64::min)
        })
        .sum();
    Some(total / trees.len() as f64)
}

impl ForestWorld {
    /// Seeded forest with trees kept clear of the start, goal and decoy.
    pub fn generate(config: &ForestConfig, seed: u64) -> Result<Self> {
        let clearance = config.min_separation / 2.0;
        let mut trees = generate_forest(&config.bounds, config.tree_count + 8, config.min_separation, seed);
        trees.retain(|&t| [config.start, config.goal, config.decoy].iter().all(|&p| distance(p, t) >= clearance));
        trees.truncate(config.tree_count);
        let separation = mean_separation(&trees)
            .ok_or_else(|| Error::Geometry("forest needs at least two trees".into()))?;
        let world = Self {
            trees,
            bounds: config.bounds,
            start: config.start,
            goal: config.goal,
            decoy: config.decoy,
            perception_radius: config.visibility * separation,
            goal_capture_radius: None,
        };
        world.validate()?;
        Ok(world)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let world: Self = serde_json::from_str(&text)?;
        world.validate()?;
        Ok(world)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [("start", self.start), ("goal", self.goal), ("decoy", self.decoy)] {
            if !self.bounds.contains(p) {
                return Err(Error::Geometry(format!("{name} {p:?} lies outside the forest bounds")));
            }
        }
        if !(self.perception_radius > 0.0 && self.perception_radius.is_finite()) {
            return Err(Error::InvalidConfiguration(format!(
                "perception radius must be positive, got {}",
                self.perception_radius
            )));
        }
        if self.trees.iter().any(|t| !t[0].is_finite() || !t[1].is_finite()) {
            return Err(Error::Geometry("tree coordinates must be finite".into()));
        }
        Ok(())
    }

    pub fn capture_radius(&self) -> f64 {
        self.goal_capture_radius
            .or_else(|| mean_separation(&self.trees).map(|s| s / 2.0))
            .unwrap_or(self.perception_radius / 4.0)
    }

    /// Trees inside the perception disk around `position`, in input order.
    pub fn visible_trees(&self, position: Point) -> Vec<Point> {
        self.trees
            .iter()
            .copied()
            .filter(|&t| distance(t, position) <= self.perception_radius)
            .collect()
    }
}

/// Local Voronoi graph around the agent.
#[derive(Debug, Clone)]
pub struct LocalPlan {
    pub graph: WeightedGraph,
    pub agent: NodeId,
    /// Node standing for the goal when it is visible.
    pub goal_node: Option<NodeId>,
}

impl LocalPlan {
    pub fn position(&self, node: NodeId) -> Point {
        self.graph.coord(node).expect("local plans carry coordinates")
    }
}

/// Voronoi graph of the visible trees, clipped to the perception disk and
/// the forest bounds. A visible goal joins the graph as a node wired to the
/// corners of the Voronoi cell that contains it.
///
/// Returns `None` when fewer than three trees are visible or the local
/// diagram leaves the agent without an edge.
pub fn local_planning_graph(world: &ForestWorld, position: Point) -> Result<Option<LocalPlan>> {
    let trees = world.visible_trees(position);
    if trees.len() < 3 {
        return Ok(None);
    }
    let region = ClipRegion::Disk { center: position, radius: world.perception_radius };
    let voronoi = match voronoi_graph_in(&trees, Some(region)) {
        Ok(v) => v,
        Err(Error::Geometry(_)) => return Ok(None),
        Err(e) => return Err(e),
    };
    let goal_visible = distance(world.goal, position) <= world.perception_radius;
    let goal_cell = goal_visible.then(|| nearest_index(&trees, world.goal)).flatten();
    let (graph, goal_node) = restrict_to_bounds(&voronoi, &world.bounds, goal_cell.map(|c| (c, world.goal)))?;
    if graph.node_count() == 0 {
        return Ok(None);
    }
    let coords = graph.coords().expect("coordinates were attached");
    let agent = nearest_index(coords, position).expect("graph is not empty");
    if graph.degree(agent) == 0 {
        return Ok(None);
    }
    Ok(Some(LocalPlan { graph, agent, goal_node }))
}

fn nearest_index(points: &[Point], p: Point) -> Option<usize> {
    let mut best: Option<(f64, usize)> = None;
    for (i, &q) in points.iter().enumerate() {
        let d = distance(p, q);
        if best.map_or(true, |(b, _)| d < b) {
            best = Some((d, i));
        }
    }
    best.map(|(_, i)| i)
}

/// Drops nodes outside `bounds` and optionally adds the goal node.
fn restrict_to_bounds(
    voronoi: &VoronoiGraph,
    bounds: &Bounds,
    goal: Option<(usize, Point)>,
) -> Result<(WeightedGraph, Option<NodeId>)> {
    let n = voronoi.graph.node_count();
    let mut index = vec![usize::MAX; n];
    let mut coords = Vec::new();
    for v in 0..n {
        let p = voronoi.position(v);
        if bounds.contains(p) {
            index[v] = coords.len();
            coords.push(p);
        }
    }
    let mut edges: Vec<(NodeId, NodeId, f64)> = voronoi
        .graph
        .edges()
        .filter(|&(u, v, _)| index[u] != usize::MAX && index[v] != usize::MAX)
        .map(|(u, v, w)| (index[u], index[v], w))
        .collect();
    let mut goal_node = None;
    if let Some((cell, point)) = goal {
        let mut corners: Vec<NodeId> = voronoi
            .edges
            .iter()
            .filter(|e| e.generators.0 == cell || e.generators.1 == cell)
            .flat_map(|e| [e.u, e.v])
            .filter(|&v| index[v] != usize::MAX)
            .map(|v| index[v])
            .collect();
        corners.sort_unstable();
        corners.dedup();
        if !corners.is_empty() {
            let g = coords.len();
            coords.push(point);
            for c in corners {
                let w = distance(coords[c], point);
                if w > 0.0 {
                    edges.push((c, g, w));
                }
            }
            goal_node = Some(g);
        }
    }
    let graph = WeightedGraph::from_edges(coords.len(), &edges)?.with_coords(coords)?;
    Ok((graph, goal_node))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestEpisodeConfig {
    /// Added to the straight-line start-to-goal distance to form the budget.
    pub extra_distance: f64,
    /// Step at which the decoy attribute switches to `plan_b_decoy`.
    pub t_switch: Option<usize>,
    pub plan_b_decoy: Option<Point>,
    pub max_steps: usize,
    pub action_mode: ActionMode,
    /// Scale goal and decoy distances by the detour factor of the local graph.
    pub detour_correction: bool,
}

impl Default for ForestEpisodeConfig {
    fn default() -> Self {
        Self {
            extra_distance: 0.0,
            t_switch: None,
            plan_b_decoy: None,
            max_steps: 1000,
            action_mode: ActionMode::Greedy,
            detour_correction: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub t: usize,
    pub x: f64,
    pub y: f64,
    pub budget_remaining: f64,
    /// Local node ids of the edge taken to get here; `None` for the start
    /// and for straight-line fallback steps.
    pub chosen_edge: Option<[NodeId; 2]>,
    /// Decoy whose distances the policy saw when choosing this move.
    pub decoy: Point,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestOutcome {
    pub trajectory: Vec<TrajectoryPoint>,
    pub reached_goal: bool,
    pub budget_exhausted: bool,
    pub path_length: f64,
    /// Steps taken in straight-line fallback mode.
    pub fallback_steps: usize,
}

impl ForestOutcome {
    pub fn points(&self) -> Vec<Point> {
        self.trajectory.iter().map(|p| [p.x, p.y]).collect()
    }

    pub fn trajectory_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.trajectory)?)
    }
}

/// Runs a graph policy through the forest without any retraining.
///
/// Every step rebuilds the local graph, lets the policy pick an edge out of
/// the node nearest to the agent and moves to the far end of that edge. The
/// budget drops by the Euclidean length of each move.
pub fn run_forest_episode(
    world: &ForestWorld,
    policy: &dyn Policy,
    config: &ForestEpisodeConfig,
    rng: &mut dyn RngCore,
) -> Result<ForestOutcome> {
    world.validate()?;
    if config.t_switch.is_some() != config.plan_b_decoy.is_some() {
        return Err(Error::InvalidConfiguration(
            "t_switch and plan_b_decoy must be given together".into(),
        ));
    }
    let straight = distance(world.start, world.goal);
    let scale = match policy.attribute_scaling() {
        AttributeScaling::Raw => 1.0,
        AttributeScaling::Normalized if straight > 0.0 => straight,
        AttributeScaling::Normalized => 1.0,
    };
    let capture = world.capture_radius();
    let fallback_step = world.perception_radius / 2.0;
    let mut budget = straight + config.extra_distance;
    let mut position = world.start;
    let mut visited: Vec<Point> = vec![position];
    let mut trajectory = vec![TrajectoryPoint {
        t: 0,
        x: position[0],
        y: position[1],
        budget_remaining: budget,
        chosen_edge: None,
        decoy: world.decoy,
    }];
    let mut path_length = 0.0;
    let mut fallback_steps = 0;
    let mut reached_goal = distance(position, world.goal) <= capture;
    let mut budget_exhausted = false;
    let mut step = 0;
    while !reached_goal && !budget_exhausted && step < config.max_steps {
        step += 1;
        let decoy = match (config.t_switch, config.plan_b_decoy) {
            (Some(ts), Some(b)) if step >= ts => b,
            _ => world.decoy,
        };
        let (next, edge) = match local_planning_graph(world, position)? {
            Some(plan) => {
                let agent_point = plan.position(plan.agent);
                let incident = plan.graph.neighbors(plan.agent);
                let mean_edge = incident.iter().map(|&(_, w)| w).sum::<f64>() / incident.len() as f64;
                let visit_radius = 0.5 * mean_edge_length(&plan.graph);
                let remaining = budget - distance(position, agent_point) - mean_edge;
                let stretch = if config.detour_correction { detour_factor(&plan)? } else { 1.0 };
                let observation = GraphObservation::build(
                    &plan.graph,
                    plan.agent,
                    policy.perception_radius(),
                    policy.neighbor_sample_cap(),
                    rng,
                    4,
                    1,
                    |v, out| {
                        let p = plan.position(v);
                        let seen = visited.iter().any(|&q| distance(p, q) <= visit_radius);
                        out.push(if seen { 1.0 } else { 0.0 });
                        out.push(stretch * distance(p, world.goal) / scale);
                        out.push(stretch * distance(p, decoy) / scale);
                        out.push(remaining / scale);
                        Ok(())
                    },
                )?;
                let decision = policy.decide(&observation, config.action_mode, rng)?;
                let target = *observation
                    .action_nodes
                    .get(decision.index)
                    .ok_or_else(|| Error::Internal("policy chose a nonexistent edge".into()))?;
                (plan.position(target), Some([plan.agent, target]))
            }
            None => {
                fallback_steps += 1;
                let d = distance(position, world.goal);
                let s = fallback_step.min(d);
                let dir = [(world.goal[0] - position[0]) / d, (world.goal[1] - position[1]) / d];
                ([position[0] + s * dir[0], position[1] + s * dir[1]], None)
            }
        };
        let length = distance(position, next);
        budget -= length;
        path_length += length;
        position = next;
        visited.push(position);
        trajectory.push(TrajectoryPoint {
            t: step,
            x: position[0],
            y: position[1],
            budget_remaining: budget,
            chosen_edge: edge,
            decoy,
        });
        if budget < 0.0 {
            budget_exhausted = true;
        } else if distance(position, world.goal) <= capture {
            reached_goal = true;
        }
    }
    Ok(ForestOutcome { trajectory, reached_goal, budget_exhausted, path_length, fallback_steps })
}

/// Mean ratio of graph distance to straight-line distance from the agent
/// node to every other reachable node of the local graph; at least 1.
pub fn detour_factor(plan: &LocalPlan) -> Result<f64> {
    let d = shortest_distances(&plan.graph, plan.agent)?;
    let origin = plan.position(plan.agent);
    let (mut total, mut count) = (0.0, 0usize);
    for v in 0..plan.graph.node_count() {
        let straight = distance(origin, plan.position(v));
        if v == plan.agent || !d.is_reachable(v) || straight <= 0.0 {
            continue;
        }
        total += d.get(v) / straight;
        count += 1;
    }
    Ok(if count == 0 { 1.0 } else { (total / count as f64).max(1.0) })
}

fn mean_edge_length(graph: &WeightedGraph) -> f64 {
    let count = graph.edge_count();
    if count == 0 {
        0.0
    } else {
        graph.total_weight() / count as f64
    }
}

/// Mean signed distance of the trajectory from the start-goal line,
/// positive on the decoy's side.
pub fn lateral_deviation(points: &[Point], start: Point, goal: Point, decoy: Point) -> f64 {
    let axis = [goal[0] - start[0], goal[1] - start[1]];
    let len = axis[0].hypot(axis[1]);
    if points.is_empty() || len == 0.0 {
        return 0.0;
    }
    let side = |p: Point| (axis[0] * (p[1] - start[1]) - axis[1] * (p[0] - start[0])) / len;
    let sign = if side(decoy) < 0.0 { -1.0 } else { 1.0 };
    points.iter().map(|&p| sign * side(p)).sum::<f64>() / points.len() as f64
}
