use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use dpp_core::deception::{metric_heatmap, DeceptionMode, HeatmapMetric, RewardConfig};
use dpp_core::envs::corpus;
use dpp_core::envs::forest::{run_forest_episode, ForestEpisodeConfig};
use dpp_core::envs::{ForestConfig, ForestWorld, GridWorld};
use dpp_core::geometry::voronoi_graph;
use dpp_core::graph::NodeId;
use dpp_core::oracle::{brute_force_best_path, evaluate_policy, replay_return, write_episode_csv};
use dpp_core::policy::{load_checkpoint, load_parameters, save_checkpoint, ActionMode, PolicyConfig};
use dpp_core::render::{self, Markers};
use dpp_core::trainer::{
    metrics_csv, run_episode, train, EpisodeSpec, TrainConfig, TrainState, WorldCache,
};

use crate::manifest::{write_atomic, RunManifest};
use crate::{
    Cli, Command, EvalArgs, ForestArgs, GenMapsArgs, HeatmapArgs, OracleArgs, TaskArgs, TrainArgs,
    UsageError,
};

/// Everything a `--config` file may set.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub policy: PolicyConfig,
    pub reward: RewardConfig,
    pub forest: ForestConfig,
}

impl RunConfig {
    fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = std::fs::read_to_string(path)
            .map_err(|e| UsageError(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    let config = RunConfig::load(cli.config.as_deref())?;
    std::fs::create_dir_all(&cli.out).with_context(|| format!("creating {}", cli.out.display()))?;
    match &cli.command {
        Command::Train(a) => cmd_train(cli, config, a),
        Command::Eval(a) => cmd_eval(cli, config, a),
        Command::Heatmap(a) => cmd_heatmap(cli, config, a),
        Command::Forest(a) => cmd_forest(cli, config, a),
        Command::Oracle(a) => cmd_oracle(cli, config, a),
        Command::GenMaps(a) => cmd_gen_maps(cli, a),
    }
}

fn parse_mode(text: &str) -> Result<DeceptionMode> {
    text.parse().map_err(|e: dpp_core::Error| UsageError(e.to_string()).into())
}

fn reward_for(config: &RunConfig, mode: Option<&str>) -> Result<RewardConfig> {
    let mut reward = config.reward;
    if let Some(m) = mode {
        reward.mode = parse_mode(m)?;
    }
    reward.validate()?;
    Ok(reward)
}

fn load_map_dir(dir: &Path) -> Result<Vec<GridWorld>> {
    if !dir.is_dir() {
        return Err(UsageError(format!("map directory {} does not exist", dir.display())).into());
    }
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "txt"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(UsageError(format!("no .txt maps in {}", dir.display())).into());
    }
    files
        .iter()
        .map(|f| GridWorld::load(f).with_context(|| format!("loading {}", f.display())))
        .collect()
}

fn cache_of(maps: Vec<GridWorld>, reward: &RewardConfig) -> Result<WorldCache> {
    Ok(WorldCache::new(maps.into_iter().map(GridWorld::into_graph).collect(), reward.observer)?)
}

fn cmd_train(cli: &Cli, mut config: RunConfig, args: &TrainArgs) -> Result<()> {
    config.train.seed = cli.seed;
    if let Some(n) = args.episodes {
        config.train.total_episodes = n;
    }
    if let Some(w) = args.workers {
        config.train.workers = w;
    }
    let reward = reward_for(&config, args.mode.as_deref())?;
    config.reward = reward;
    let train_maps = match &args.maps {
        Some(dir) => load_map_dir(dir)?,
        None => corpus::train_8(),
    };
    let val_maps = match &args.validation {
        Some(dir) => load_map_dir(dir)?,
        None => corpus::validation_8(),
    };
    let train_set = cache_of(train_maps, &reward)?;
    let val_set = cache_of(val_maps, &reward)?;
    let initial = match &args.resume {
        Some(path) => {
            let state = TrainState::from_checkpoint(load_checkpoint(path)?, &config.train)?;
            config.policy = *state.params.config();
            Some(state)
        }
        None => None,
    };

    let ckpt_path = cli.out.join("policy.ckpt");
    let metrics_path = cli.out.join("metrics.csv");
    let snapshot = serde_json::to_value(&config)?;
    let mut rows = Vec::new();
    let outcome = train(&train_set, &val_set, initial, &config.train, &reward, &config.policy, &mut |p| {
        rows.push(*p.row);
        eprintln!(
            "episode {:>7}  goal rate {:.3}  deception {:+.3}  entropy {:.3}",
            p.row.episode, p.row.goal_rate, p.row.mean_deception, p.row.entropy
        );
        save_checkpoint(&ckpt_path, &p.state.to_checkpoint(json!({ "run": snapshot })))?;
        write_atomic(&metrics_path, metrics_csv(&rows).as_bytes())
            .map_err(|e| dpp_core::Error::Io(std::io::Error::other(e.to_string())))?;
        Ok(())
    })?;
    save_checkpoint(&ckpt_path, &outcome.state.to_checkpoint(json!({ "run": snapshot })))?;
    write_atomic(&metrics_path, metrics_csv(&outcome.metrics).as_bytes())?;

    let mut manifest = RunManifest::new("train", serde_json::to_value(&config)?, cli.seed);
    manifest.inputs = [&args.maps, &args.validation, &args.resume].into_iter().flatten().cloned().collect();
    manifest.outputs = vec![ckpt_path, metrics_path];
    manifest.write(&cli.out)?;
    Ok(())
}

struct Task {
    grid: GridWorld,
    start: NodeId,
    goal: NodeId,
    decoy: NodeId,
}

fn load_task(args: &TaskArgs) -> Result<Task> {
    let grid = GridWorld::load(&args.map).with_context(|| format!("loading {}", args.map.display()))?;
    let pick = |text: &Option<String>, marker: Option<NodeId>, name: &str| -> Result<NodeId> {
        match text {
            Some(t) => Ok(grid.parse_cell(t)?),
            None => marker.ok_or_else(|| UsageError(format!("no --{name} given and the map has no marker for it")).into()),
        }
    };
    let start = pick(&args.start, grid.start, "start")?;
    let goal = pick(&args.goal, grid.goal, "goal")?;
    let decoy = pick(&args.decoy, grid.decoy, "decoy")?;
    if goal == decoy {
        return Err(UsageError("goal and decoy must be different cells".into()).into());
    }
    Ok(Task { grid, start, goal, decoy })
}

fn cells(grid: &GridWorld, walk: &[NodeId]) -> Vec<[usize; 2]> {
    walk.iter().map(|&v| {
        let (r, c) = grid.cell_of(v);
        [r, c]
    }).collect()
}

fn markers(task: &Task) -> Markers<NodeId> {
    Markers { start: Some(task.start), goal: Some(task.goal), decoy: Some(task.decoy) }
}

fn cmd_eval(cli: &Cli, config: RunConfig, args: &EvalArgs) -> Result<()> {
    let task = load_task(&args.task)?;
    let reward = reward_for(&config, args.mode.as_deref())?;
    let params = load_parameters(&args.checkpoint, None)?;
    let cache = WorldCache::new(vec![task.grid.graph().clone()], reward.observer)?;
    let shortest = cache.distances(0, task.goal)?.get(task.start);
    let spec = EpisodeSpec {
        graph: 0,
        start: task.start,
        true_goal: task.goal,
        decoy: task.decoy,
        t_max: shortest + args.extra_steps,
    };
    let mode = if args.greedy { ActionMode::Greedy } else { ActionMode::Sample };
    let mut rng = ChaCha8Rng::seed_from_u64(cli.seed);
    let mut walks = Vec::with_capacity(args.episodes);
    let mut records = Vec::with_capacity(args.episodes);
    for i in 0..args.episodes {
        let result = run_episode(&cache, &spec, &params, &reward, mode, &mut rng, false)?;
        records.push(json!({
            "episode": i,
            "nodes": result.trajectory,
            "cells": cells(&task.grid, &result.trajectory),
            "reached_goal": result.reached_goal,
            "deceptiveness": result.deceptiveness(),
            "discounted_return": result.discounted_return(reward.gamma),
        }));
        walks.push(result.trajectory);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cli.seed);
    let (report, episodes) = evaluate_policy(&cache, &[spec], &params, &reward, mode, args.episodes, &mut rng)?;

    let out = &cli.out;
    let paths = [
        out.join("trajectories.json"),
        out.join("report.json"),
        out.join("episodes.csv"),
        out.join("visits.svg"),
        out.join("visits.csv"),
    ];
    write_atomic(&paths[0], serde_json::to_string_pretty(&records)?.as_bytes())?;
    write_atomic(&paths[1], serde_json::to_string_pretty(&report)?.as_bytes())?;
    let mut csv = Vec::new();
    write_episode_csv(&episodes, &mut csv)?;
    write_atomic(&paths[2], &csv)?;
    let counts = render::visit_counts(task.grid.graph().node_count(), &walks);
    write_atomic(&paths[3], render::grid_trajectories_svg(&task.grid, &walks, &markers(&task)).as_bytes())?;
    write_atomic(&paths[4], render::node_values_csv(task.grid.graph(), &counts).as_bytes())?;

    let mut manifest = RunManifest::new(
        "eval",
        json!({ "reward": reward, "t_max": spec.t_max, "episodes": args.episodes, "greedy": args.greedy }),
        cli.seed,
    );
    manifest.inputs = vec![args.checkpoint.clone(), args.task.map.clone()];
    manifest.outputs = paths.to_vec();
    manifest.write(out)?;
    println!("{}", serde_json::to_string(&report)?);
    Ok(())
}

fn cmd_heatmap(cli: &Cli, config: RunConfig, args: &HeatmapArgs) -> Result<()> {
    let task = load_task(&args.task)?;
    let metric: HeatmapMetric = args.metric.parse().map_err(|e: dpp_core::Error| UsageError(e.to_string()))?;
    let graph = task.grid.graph();
    let values = metric_heatmap(graph, task.start, &[task.goal, task.decoy], 0, metric, &config.reward.observer)?;
    let csv_path = cli.out.join("heatmap.csv");
    let svg_path = cli.out.join("heatmap.svg");
    write_atomic(&csv_path, render::node_values_csv(graph, &values).as_bytes())?;
    write_atomic(&svg_path, render::grid_heatmap_svg(&task.grid, &values, &markers(&task)).as_bytes())?;
    let mut manifest = RunManifest::new(
        "heatmap",
        json!({ "metric": metric, "observer": config.reward.observer }),
        cli.seed,
    );
    manifest.inputs = vec![args.task.map.clone()];
    manifest.outputs = vec![csv_path, svg_path];
    manifest.write(&cli.out)?;
    Ok(())
}

fn parse_point(text: &str) -> Result<[f64; 2]> {
    let parts: Vec<f64> = text
        .split(',')
        .map(|s| s.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| UsageError(format!("point {text:?} is not of the form x,y")))?;
    match parts.as_slice() {
        [x, y] => Ok([*x, *y]),
        _ => bail!(UsageError(format!("point {text:?} is not of the form x,y"))),
    }
}

fn cmd_forest(cli: &Cli, config: RunConfig, args: &ForestArgs) -> Result<()> {
    let mut forest_cfg = config.forest;
    if let Some(v) = args.visibility {
        forest_cfg.visibility = v;
    }
    let world = match (&args.world, args.generate) {
        (Some(path), _) => {
            let mut w = ForestWorld::load(path)?;
            if let (Some(v), Some(sep)) = (args.visibility, dpp_core::envs::forest::mean_separation(&w.trees)) {
                w.perception_radius = v * sep;
            }
            w
        }
        (None, Some(seed)) => ForestWorld::generate(&forest_cfg, seed)?,
        (None, None) => return Err(UsageError("give either --world or --generate".into()).into()),
    };
    let params = load_parameters(&args.checkpoint, None)?;
    let episode = ForestEpisodeConfig {
        extra_distance: args.extra_distance,
        t_switch: args.t_switch,
        plan_b_decoy: args.plan_b.as_deref().map(parse_point).transpose()?,
        action_mode: if args.sample { ActionMode::Sample } else { ActionMode::Greedy },
        ..Default::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cli.seed);
    let outcome = run_forest_episode(&world, &params, &episode, &mut rng)?;
    let edges = if args.show_edges {
        Some(voronoi_graph(&world.trees, &world.bounds, true)?.graph)
    } else {
        None
    };
    let out = &cli.out;
    let paths = [out.join("world.json"), out.join("trajectory.json"), out.join("forest.svg")];
    write_atomic(&paths[0], world.to_json()?.as_bytes())?;
    write_atomic(&paths[1], outcome.trajectory_json()?.as_bytes())?;
    write_atomic(&paths[2], render::forest_svg(&world, &[outcome.points()], edges.as_ref()).as_bytes())?;
    let mut manifest = RunManifest::new("forest", json!({ "forest": forest_cfg, "episode": episode }), cli.seed);
    manifest.inputs = [Some(args.checkpoint.clone()), args.world.clone()].into_iter().flatten().collect();
    manifest.outputs = paths.to_vec();
    manifest.write(out)?;
    println!(
        "{}",
        json!({
            "reached_goal": outcome.reached_goal,
            "budget_exhausted": outcome.budget_exhausted,
            "path_length": outcome.path_length,
            "steps": outcome.trajectory.len() - 1,
        })
    );
    Ok(())
}

fn cmd_oracle(cli: &Cli, config: RunConfig, args: &OracleArgs) -> Result<()> {
    let task = load_task(&args.task)?;
    let reward = reward_for(&config, Some(&args.mode))?;
    let graph = task.grid.graph();
    let best = brute_force_best_path(graph, task.start, &[task.goal, task.decoy], 0, args.t_max, &reward)?;
    let cache = WorldCache::new(vec![graph.clone()], reward.observer)?;
    let spec = EpisodeSpec { graph: 0, start: task.start, true_goal: task.goal, decoy: task.decoy, t_max: args.t_max };
    let mut rng = ChaCha8Rng::seed_from_u64(cli.seed);
    let replayed = replay_return(&cache, &spec, &best.path, &reward, &mut rng)?;
    let result = json!({
        "path": best.path,
        "cells": cells(&task.grid, &best.path),
        "discounted_return": best.discounted_return,
        "replayed_return": replayed,
        "deceptiveness": best.deceptiveness,
        "states_explored": best.states_explored,
    });
    let path = cli.out.join("oracle.json");
    write_atomic(&path, serde_json::to_string_pretty(&result)?.as_bytes())?;
    let mut manifest = RunManifest::new("oracle", json!({ "reward": reward, "t_max": args.t_max }), cli.seed);
    manifest.inputs = vec![args.task.map.clone()];
    manifest.outputs = vec![path];
    manifest.write(&cli.out)?;
    println!("{result}");
    Ok(())
}

fn cmd_gen_maps(cli: &Cli, args: &GenMapsArgs) -> Result<()> {
    let dir = cli.out.join("maps");
    std::fs::create_dir_all(&dir)?;
    let mut outputs = Vec::new();
    for (name, text) in corpus::named_maps() {
        let path = dir.join(format!("{name}.txt"));
        write_atomic(&path, text.as_bytes())?;
        outputs.push(path);
    }
    for i in 0..args.random {
        let grid = corpus::generate_obstacle_grid(args.size, args.size, args.obstacles, cli.seed + i as u64);
        let path = dir.join(format!("random{}_{i}.txt", args.size));
        write_atomic(&path, grid.to_map_string().as_bytes())?;
        outputs.push(path);
    }
    let mut manifest = RunManifest::new(
        "gen-maps",
        json!({ "random": args.random, "size": args.size, "obstacles": args.obstacles }),
        cli.seed,
    );
    manifest.outputs = outputs;
    manifest.write(&cli.out)?;
    Ok(())
}
