//! End-to-end acceptance checks. Each test prints one `PASS`/`FAIL` line to
//! stderr (uncaptured) before asserting, so the summary is visible in plain
//! `cargo test` output.

use std::collections::VecDeque;
use std::io::Write as _;
use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dpp_core::deception::{metric_heatmap, DeceptionMode, HeatmapMetric, RewardConfig};
use dpp_core::envs::forest::{lateral_deviation, run_forest_episode, ForestEpisodeConfig};
use dpp_core::envs::{corpus, ForestConfig, ForestWorld, GridWorld};
use dpp_core::geometry::{distance, voronoi_diagram, voronoi_graph, Bounds, Point};
use dpp_core::graph::{AttributeScaling, NodeId, WeightedGraph};
use dpp_core::observer::{build_observer, softmax_value_iteration, ObserverSettings};
use dpp_core::oracle::{best_path_with_bonuses, brute_force_best_path, shortest_path};
use dpp_core::policy::{
    backward, forward, init_parameters, ActionMode, GraphObservation, Policy, PolicyConfig, PolicyParameters,
    ShortestPathPolicy,
};
use dpp_core::trainer::{
    metrics_csv, run_episode, sample_episode_spec, sample_eval_specs, train, EpisodeResult, EpisodeSpec,
    TrainConfig, WorldCache,
};

const TRAIN_EPISODES: usize = 12288;
const TRAIN_SEED: u64 = 1;

fn report(criterion: usize, name: &str, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr(), "[acceptance {criterion:>2}] {verdict} {name}: {detail}");
}

fn policy_config() -> PolicyConfig {
    PolicyConfig {
        num_layers: 4,
        hidden_dim: 32,
        attribute_scaling: AttributeScaling::Normalized,
        ..Default::default()
    }
}

fn train_config(episodes: usize, seed: u64) -> TrainConfig {
    TrainConfig { total_episodes: episodes, seed, eval_interval: 1024, ..Default::default() }
}

fn cache_of(maps: Vec<GridWorld>) -> WorldCache {
    WorldCache::new(maps.into_iter().map(GridWorld::into_graph).collect(), ObserverSettings::default()).unwrap()
}

fn train_8() -> &'static WorldCache {
    static CACHE: OnceLock<WorldCache> = OnceLock::new();
    CACHE.get_or_init(|| cache_of(corpus::train_8()))
}

fn validation_8() -> &'static WorldCache {
    static CACHE: OnceLock<WorldCache> = OnceLock::new();
    CACHE.get_or_init(|| cache_of(corpus::validation_8()))
}

fn trained(mode: DeceptionMode) -> &'static PolicyParameters {
    static EXAGGERATION: OnceLock<PolicyParameters> = OnceLock::new();
    static AMBIGUITY: OnceLock<PolicyParameters> = OnceLock::new();
    let cell = match mode {
        DeceptionMode::Exaggeration => &EXAGGERATION,
        DeceptionMode::Ambiguity => &AMBIGUITY,
    };
    cell.get_or_init(|| {
        let outcome = train(
            train_8(),
            validation_8(),
            None,
            &train_config(TRAIN_EPISODES, TRAIN_SEED),
            &RewardConfig::new(mode),
            &policy_config(),
            &mut |_| Ok(()),
        )
        .unwrap();
        outcome.state.params
    })
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn standard_error(xs: &[f64]) -> f64 {
    let m = mean(xs);
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
    (var / xs.len() as f64).sqrt()
}

fn hop_distances(graph: &WeightedGraph, source: NodeId) -> Vec<Option<usize>> {
    let mut dist = vec![None; graph.node_count()];
    dist[source] = Some(0);
    let mut queue = VecDeque::from([source]);
    while let Some(u) = queue.pop_front() {
        for &(v, _) in graph.neighbors(u) {
            if dist[v].is_none() {
                dist[v] = Some(dist[u].unwrap() + 1);
                queue.push_back(v);
            }
        }
    }
    dist
}

fn random_unit_graph(rng: &mut ChaCha8Rng) -> WeightedGraph {
    let n: usize = rng.gen_range(3..40);
    let mut edges: Vec<(NodeId, NodeId, f64)> = Vec::new();
    for v in 1..n {
        // attach near the previous node so the diameter stays moderate
        let lo = v.saturating_sub(4);
        edges.push((rng.gen_range(lo..v), v, 1.0));
    }
    for _ in 0..rng.gen_range(0..n) {
        let (a, b) = (rng.gen_range(0..n), rng.gen_range(0..n));
        let (a, b) = (a.min(b), a.max(b));
        if a != b && !edges.iter().any(|&(x, y, _)| (x, y) == (a, b)) {
            edges.push((a, b, 1.0));
        }
    }
    WeightedGraph::from_edges(n, &edges).unwrap()
}

#[test]
fn observer_posterior_and_low_temperature_values() {
    let settings = ObserverSettings::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut worst_norm, mut prior_exact, mut cases) = (0.0f64, true, 0);
    while cases < 1000 {
        let g = random_unit_graph(&mut rng);
        let n = g.node_count();
        let goal_count = rng.gen_range(2..=3.min(n));
        let mut goals: Vec<NodeId> = Vec::new();
        while goals.len() < goal_count {
            let v = rng.gen_range(0..n);
            if !goals.contains(&v) {
                goals.push(v);
            }
        }
        let raw: Vec<f64> = (0..goal_count).map(|_| rng.gen_range(0.1..1.0)).collect();
        let total: f64 = raw.iter().sum();
        let mut priors: Vec<f64> = raw.iter().map(|p| p / total).collect();
        let last = priors.len() - 1;
        priors[last] = 1.0 - priors[..last].iter().sum::<f64>();
        let uniform = rng.gen_bool(0.5);
        let tables = build_observer(&g, &goals, &settings, (!uniform).then(|| priors.clone())).unwrap();
        let (start, node) = (rng.gen_range(0..n), rng.gen_range(0..n));
        let posterior = tables.posterior(start, node).unwrap();
        worst_norm = worst_norm.max((posterior.iter().sum::<f64>() - 1.0).abs());
        let at_start = tables.posterior(start, start).unwrap();
        let expected = if uniform { vec![1.0 / goal_count as f64; goal_count] } else { priors };
        let prior_sum: f64 = expected.iter().sum();
        let exact = at_start.iter().zip(&expected).all(|(p, q)| *p == q / prior_sum);
        prior_exact &= exact;
        cases += 1;
    }

    let mut worst_gap = 0.0f64;
    let mut graphs = 0;
    while graphs < 50 {
        let g = random_unit_graph(&mut rng);
        let goal = rng.gen_range(0..g.node_count());
        let hops = hop_distances(&g, goal);
        if hops.iter().flatten().any(|&d| d > 20) {
            continue;
        }
        graphs += 1;
        let v = softmax_value_iteration(&g, goal, 0.01, settings.gamma_c, 1e-9).unwrap();
        for (node, d) in hops.iter().enumerate() {
            let d = d.unwrap();
            let oracle = -(0..d).map(|i| settings.gamma_c.powi(i as i32)).sum::<f64>();
            worst_gap = worst_gap.max((v[node] - oracle).abs());
        }
    }
    let pass = worst_norm <= 1e-9 && prior_exact && worst_gap <= 0.05;
    report(
        1,
        "observer",
        pass,
        &format!(
            "normalisation error {worst_norm:.2e} (<= 1e-9), prior recovered exactly: {prior_exact}, \
             alpha=0.01 gap to discounted shortest cost {worst_gap:.4} (<= 0.05)"
        ),
    );
    assert!(pass);
}

#[test]
fn ambiguity_heatmaps_on_open_grid() {
    let grid = GridWorld::open(16, 16);
    let graph = grid.graph();
    // mirror images across the main diagonal
    let start = grid.node_at(15, 15).unwrap();
    let goal = grid.node_at(0, 10).unwrap();
    let decoy = grid.node_at(10, 0).unwrap();
    let goals = [goal, decoy];
    // tight enough that mirror-image cells get equal values
    let settings = ObserverSettings { tolerance: 1e-13, ..Default::default() };
    let proposed = metric_heatmap(graph, start, &goals, 0, HeatmapMetric::ProposedAmbiguity, &settings).unwrap();
    let classical = metric_heatmap(graph, start, &goals, 0, HeatmapMetric::ClassicalAmbiguity, &settings).unwrap();

    let to_goal = hop_distances(graph, goal);
    let to_decoy = hop_distances(graph, decoy);
    let max = proposed.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut proposed_ok = max == 1.0 && proposed[goal] == 0.0 && proposed[decoy] == 0.0;
    for v in 0..graph.node_count() {
        let equidistant = to_goal[v] == to_decoy[v];
        proposed_ok &= (proposed[v] == 1.0) == equidistant;
    }

    let tables = build_observer(graph, &goals, &settings, None).unwrap();
    let gaps: Vec<f64> = (0..graph.node_count())
        .map(|v| {
            let p = tables.posterior(start, v).unwrap();
            (p[0] - p[1]).abs()
        })
        .collect();
    let equal_cells: Vec<NodeId> = (0..graph.node_count()).filter(|&v| gaps[v] <= 1e-9).collect();
    let min = classical.iter().copied().fold(f64::INFINITY, f64::min);
    let mut classical_ok = !equal_cells.is_empty() && equal_cells.iter().all(|&v| classical[v] <= min + 1e-9);
    for v in 0..graph.node_count() {
        if classical[v] <= min + 1e-9 && !goals.contains(&v) {
            classical_ok &= gaps[v] <= 1e-9;
        }
    }
    let pass = proposed_ok && classical_ok;
    report(
        2,
        "heatmaps",
        pass,
        &format!(
            "proposed max {max} exactly on equidistant cells and 0 at goals: {proposed_ok}; \
             classical minimum {min:.2e} on {} posterior-equality cells: {classical_ok}",
            equal_cells.len()
        ),
    );
    assert!(pass);
}

fn gradient_gap(k: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 7;
    let mut edges = Vec::new();
    for v in 1..n {
        edges.push((rng.gen_range(0..v), v, 1.0));
    }
    for _ in 0..4 {
        let (a, b) = (rng.gen_range(0..n), rng.gen_range(0..n));
        let (a, b) = (a.min(b), a.max(b));
        if a != b && !edges.iter().any(|&(x, y, _)| (x, y) == (a, b)) {
            edges.push((a, b, 1.0));
        }
    }
    let g = WeightedGraph::from_edges(n, &edges).unwrap();
    let features: Vec<Vec<f64>> = (0..n).map(|_| (0..4).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect();
    let cfg = PolicyConfig { num_layers: k, hidden_dim: 6, ..Default::default() };
    let mut params = init_parameters(&cfg, seed).unwrap();
    for spec in params.layout().specs().to_vec().iter().filter(|s| s.is_bias) {
        for v in &mut params.values[spec.range()] {
            *v = rng.gen_range(-0.3..0.3);
        }
    }
    let obs = GraphObservation::build(&g, 0, k, None, &mut rng, 4, 1, |v, out| {
        out.extend_from_slice(&features[v]);
        Ok(())
    })
    .unwrap();
    let dl: Vec<f64> = obs.actions.iter().map(|_| rng.gen_range(-1.0..1.0)).collect();
    let dv = rng.gen_range(-1.0..1.0);
    let loss = |p: &PolicyParameters| {
        let out = forward(p, &obs).unwrap();
        out.logits.iter().zip(&dl).map(|(a, b)| a * b).sum::<f64>() + dv * out.value
    };
    let grad = backward(&params, &obs, &dl, dv).unwrap();
    let eps = 1e-6;
    let mut worst = 0.0f64;
    for i in 0..grad.len() {
        let orig = params.values[i];
        params.values[i] = orig + eps;
        let up = loss(&params);
        params.values[i] = orig - eps;
        let down = loss(&params);
        params.values[i] = orig;
        let fd = (up - down) / (2.0 * eps);
        let scale = grad[i].abs().max(fd.abs());
        let rel = if scale < 1e-8 { (grad[i] - fd).abs() } else { (grad[i] - fd).abs() / scale };
        worst = worst.max(rel);
    }
    worst
}

#[test]
fn policy_gradients_match_finite_differences() {
    let mut details = Vec::new();
    let mut pass = true;
    for k in [1, 2, 4] {
        let worst = (0..5).map(|s| gradient_gap(k, 100 * k as u64 + s)).fold(0.0f64, f64::max);
        pass &= worst <= 1e-4;
        details.push(format!("K={k}: {worst:.2e}"));
    }
    report(3, "gradients", pass, &format!("worst relative error {} (<= 1e-4)", details.join(", ")));
    assert!(pass);
}

struct HeldOut {
    goal_rate: f64,
    deceptiveness: f64,
    baseline: f64,
    paired_t: f64,
}

fn held_out(mode: DeceptionMode) -> HeldOut {
    let reward = RewardConfig::new(mode);
    let cache = validation_8();
    let mut rng = ChaCha8Rng::seed_from_u64(4242);
    let specs = sample_eval_specs(cache, 64, 1.5, &mut rng).unwrap();
    let policy = trained(mode);
    let (mut reached, mut ours, mut base) = (0usize, Vec::new(), Vec::new());
    for spec in &specs {
        // greedy rollouts are deterministic, so one per spec stands for all 32
        let r = run_episode(cache, spec, policy, &reward, ActionMode::Greedy, &mut rng, false).unwrap();
        let s = run_episode(cache, spec, &ShortestPathPolicy, &reward, ActionMode::Greedy, &mut rng, false).unwrap();
        reached += r.reached_goal as usize;
        ours.push(r.deceptiveness());
        base.push(s.deceptiveness());
    }
    let diffs: Vec<f64> = ours.iter().zip(&base).map(|(a, b)| a - b).collect();
    let se = standard_error(&diffs);
    HeldOut {
        goal_rate: reached as f64 / specs.len() as f64,
        deceptiveness: mean(&ours),
        baseline: mean(&base),
        paired_t: if se > 0.0 { mean(&diffs) / se } else { f64::INFINITY },
    }
}

#[test]
fn desk_scale_training_beats_shortest_path() {
    let mut pass = true;
    let mut details = Vec::new();
    for mode in [DeceptionMode::Exaggeration, DeceptionMode::Ambiguity] {
        let h = held_out(mode);
        // one-sided paired t test at the 5% level
        let ok = h.goal_rate >= 0.8 && h.deceptiveness > h.baseline && h.paired_t > 1.67;
        pass &= ok;
        details.push(format!(
            "{mode:?}: goal rate {:.3} (>= 0.8), deceptiveness {:.3} vs shortest path {:.3}, paired t {:.2}",
            h.goal_rate, h.deceptiveness, h.baseline, h.paired_t
        ));
    }
    report(4, "desk-scale training", pass, &format!("{TRAIN_EPISODES} episodes each; {}", details.join("; ")));
    assert!(pass);
}

fn small_instances() -> (WorldCache, Vec<EpisodeSpec>) {
    let cache = cache_of(corpus::small_5());
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut specs = Vec::new();
    while specs.len() < 10 {
        let s = sample_episode_spec(&cache, &mut rng).unwrap();
        if s.t_max <= 12.0 {
            specs.push(s);
        }
    }
    (cache, specs)
}

#[test]
fn trained_policy_is_near_the_exhaustive_optimum() {
    let reward = RewardConfig::new(DeceptionMode::Exaggeration);
    let policy = trained(DeceptionMode::Exaggeration);
    let (cache, specs) = small_instances();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (mut ours, mut best) = (Vec::new(), Vec::new());
    let mut zero_bonus_exact = true;
    for spec in &specs {
        let graph = cache.graph(spec.graph).unwrap();
        let optimum = brute_force_best_path(graph, spec.start, &spec.goals(), 0, spec.t_max, &reward).unwrap();
        let r = run_episode(&cache, spec, policy, &reward, ActionMode::Greedy, &mut rng, false).unwrap();
        ours.push(r.discounted_return(reward.gamma));
        best.push(optimum.discounted_return);

        let zeros = vec![0.0; graph.node_count()];
        let plain = best_path_with_bonuses(graph, spec.start, spec.true_goal, &zeros, spec.t_max, &reward).unwrap();
        let hops = hop_distances(graph, spec.true_goal)[spec.start].unwrap();
        zero_bonus_exact &= plain.path == shortest_path(graph, spec.start, spec.true_goal).unwrap()
            && plain.path.len() == hops + 1;
    }
    let ratio = mean(&ours) / mean(&best);
    let pass = ratio >= 0.6 && zero_bonus_exact;
    let pairs: Vec<String> = ours.iter().zip(&best).map(|(a, b)| format!("{a:.2}/{b:.2}")).collect();
    report(
        5,
        "oracle",
        pass,
        &format!(
            "mean greedy return / mean optimal return = {ratio:.3} (>= 0.6) over [{}]; zero-bonus optimum is the shortest path: {zero_bonus_exact}",
            pairs.join(" ")
        ),
    );
    assert!(pass);
}

#[test]
fn extra_steps_tune_deceptiveness() {
    let reward = RewardConfig::new(DeceptionMode::Exaggeration);
    let policy = trained(DeceptionMode::Exaggeration);
    let grid = GridWorld::open(16, 16);
    let start = grid.node_at(15, 0).unwrap();
    let goal = grid.node_at(0, 15).unwrap();
    let decoy = grid.node_at(15, 15).unwrap();
    let cache = cache_of(vec![grid]);
    let d = cache.distances(0, goal).unwrap().get(start);
    let mut means = Vec::new();
    let mut errors = Vec::new();
    let mut greedy_length = None;
    for extra in [0.0, 30.0, 60.0, 90.0] {
        let spec = EpisodeSpec { graph: 0, start, true_goal: goal, decoy, t_max: d + extra };
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let values: Vec<f64> = (0..32)
            .map(|_| run_episode(&cache, &spec, policy, &reward, ActionMode::Sample, &mut rng, false).unwrap())
            .map(|r| r.deceptiveness())
            .collect();
        means.push(mean(&values));
        errors.push(standard_error(&values));
        if extra == 0.0 {
            let r = run_episode(&cache, &spec, policy, &reward, ActionMode::Greedy, &mut rng, false).unwrap();
            greedy_length = Some(r.path_length(cache.graph(0).unwrap()));
        }
    }
    let mut violations = 0;
    let mut within_error = true;
    for i in 0..3 {
        if means[i + 1] < means[i] {
            violations += 1;
            let se = (errors[i].powi(2) + errors[i + 1].powi(2)).sqrt();
            within_error &= means[i] - means[i + 1] <= se;
        }
    }
    let monotone = violations == 0 || (violations == 1 && within_error);
    let shortest = greedy_length == Some(d);
    let pass = monotone && shortest;
    let cells: Vec<String> = means.iter().zip(&errors).map(|(m, e)| format!("{m:.3}±{e:.3}")).collect();
    report(
        6,
        "tunability",
        pass,
        &format!(
            "deceptiveness at extra steps 0/30/60/90: {} ({violations} decreases); greedy length at 0 extra {:?} vs shortest {d}",
            cells.join(", "),
            greedy_length
        ),
    );
    assert!(pass);
}

#[test]
fn policies_transfer_to_larger_maps() {
    let maps: Vec<GridWorld> = (0..8).map(|i| corpus::generate_obstacle_grid(32, 32, 0.2, 100 + i)).collect();
    let cache = cache_of(maps);
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    let specs = sample_eval_specs(&cache, 64, 1.5, &mut rng).unwrap();
    let mut pass = true;
    let mut details = Vec::new();
    for mode in [DeceptionMode::Exaggeration, DeceptionMode::Ambiguity] {
        let reward = RewardConfig::new(mode);
        let policy = trained(mode);
        let reached = specs
            .iter()
            .map(|s| run_episode(&cache, s, policy, &reward, ActionMode::Greedy, &mut rng, false).unwrap())
            .filter(|r: &EpisodeResult| r.reached_goal)
            .count();
        let rate = reached as f64 / specs.len() as f64;
        pass &= rate >= 0.7;
        details.push(format!("{mode:?} goal rate {rate:.3}"));
    }
    report(7, "32x32 transfer", pass, &format!("{} (>= 0.7, 64 tasks on 8 unseen maps)", details.join(", ")));
    assert!(pass);
}

#[test]
fn voronoi_ridges_are_equidistant() {
    let bounds = Bounds::new([0.0, 0.0], [14.0, 20.0]).unwrap();
    let mut worst = 0.0f64;
    let mut nearest_ok = true;
    for seed in 0..100 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let trees: Vec<Point> =
            (0..30).map(|_| [rng.gen_range(0.0..14.0), rng.gen_range(0.0..20.0)]).collect();
        let vg = voronoi_graph(&trees, &bounds, true).unwrap();
        for e in &vg.edges {
            let (a, b) = e.generators;
            for node in [e.u, e.v] {
                let p = vg.position(node);
                let (da, db) = (distance(p, trees[a]), distance(p, trees[b]));
                worst = worst.max((da - db).abs());
                let nearest = trees.iter().map(|&t| distance(p, t)).fold(f64::INFINITY, f64::min);
                nearest_ok &= da <= nearest + 1e-9;
            }
        }
    }
    let side = 2.0;
    let triangle = [[0.0, 0.0], [side, 0.0], [side / 2.0, side * 3f64.sqrt() / 2.0]];
    let diagram = voronoi_diagram(&triangle).unwrap();
    let radius = side / 3f64.sqrt();
    let centre = [side / 2.0, side * 3f64.sqrt() / 6.0];
    let triangle_ok = diagram.vertices.len() == 1
        && distance(diagram.vertices[0], centre) <= 1e-9
        && triangle.iter().all(|&t| (distance(diagram.vertices[0], t) - radius).abs() <= 1e-9);
    let pass = worst <= 1e-9 && nearest_ok && triangle_ok;
    report(
        8,
        "voronoi geometry",
        pass,
        &format!(
            "max ridge equidistance error {worst:.2e} over 100 forests (<= 1e-9), endpoints closest to their generators: {nearest_ok}; equilateral circumcentre exact: {triangle_ok}"
        ),
    );
    assert!(pass);
}

#[test]
fn grid_policy_transfers_to_the_forest() {
    let policy = trained(DeceptionMode::Exaggeration);
    let config = ForestConfig::default();
    let worlds: Vec<ForestWorld> = (0..32).map(|s| ForestWorld::generate(&config, s).unwrap()).collect();
    let mut reached = Vec::new();
    let mut deviation = Vec::new();
    for extra in [15.0, 20.0, 25.0, 30.0] {
        let (mut ok, mut lateral) = (0usize, 0.0);
        for (seed, world) in worlds.iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(seed as u64);
            let episode = ForestEpisodeConfig { extra_distance: extra, ..Default::default() };
            let out = run_forest_episode(world, policy as &dyn Policy, &episode, &mut rng).unwrap();
            ok += out.reached_goal as usize;
            lateral += lateral_deviation(&out.points(), world.start, world.goal, world.decoy);
        }
        reached.push(ok);
        deviation.push(lateral / worlds.len() as f64);
    }
    let reach_ok = reached.iter().all(|&r| r >= 24);
    let increasing = deviation.windows(2).all(|w| w[1] > w[0]);
    let pass = reach_ok && increasing;
    let lateral: Vec<String> = deviation.iter().map(|d| format!("{d:.3}")).collect();
    report(
        9,
        "forest transfer",
        pass,
        &format!(
            "goal reached in {reached:?} of 32 seeds at extra distance 15/20/25/30 (>= 24), lateral deviation [{}] strictly increasing: {increasing}",
            lateral.join(", ")
        ),
    );
    assert!(pass);
}

#[test]
fn identical_seeds_reproduce_metrics_and_trajectories() {
    let reward = RewardConfig::new(DeceptionMode::Exaggeration);
    let run = || {
        let mut rows = String::new();
        let outcome = train(
            train_8(),
            validation_8(),
            None,
            &TrainConfig { eval_interval: 256, ..train_config(768, 9) },
            &reward,
            &policy_config(),
            &mut |_| Ok(()),
        )
        .unwrap();
        rows.push_str(&metrics_csv(&outcome.metrics));
        let params = outcome.state.params;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut walks = Vec::new();
        for _ in 0..16 {
            let spec = sample_episode_spec(validation_8(), &mut rng).unwrap();
            let r = run_episode(validation_8(), &spec, &params, &reward, ActionMode::Sample, &mut rng, false).unwrap();
            walks.push(r.trajectory);
        }
        let world = ForestWorld::generate(&ForestConfig::default(), 4).unwrap();
        let forest = run_forest_episode(&world, &params, &ForestEpisodeConfig::default(), &mut rng).unwrap();
        (rows, walks, forest.trajectory_json().unwrap())
    };
    let (a, b) = (run(), run());
    let pass = a == b;
    report(
        10,
        "determinism",
        pass,
        &format!("two single-worker runs with seed 9: metrics, grid walks and forest trajectory identical: {pass}"),
    );
    assert!(pass);
}
