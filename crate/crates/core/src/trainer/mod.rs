//! PPO training over sampled gridworld tasks.

mod episode;
mod ppo;

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::deception::RewardConfig;
use crate::policy::{init_parameters, ActionMode, Checkpoint, Policy, PolicyConfig, PolicyParameters};
use crate::{Error, Result};

pub use episode::{
    run_episode, sample_episode_spec, sample_eval_specs, spec_with_budget_factor, EpisodeResult,
    EpisodeSpec, Transition, WorldCache,
};
pub use ppo::{
    clip_grad_norm, compute_advantages, normalize_advantages, ppo_update, surrogate_objective,
    AdamW, UpdateStats,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub total_episodes: usize,
    pub gamma: f64,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub clip_epsilon: f64,
    pub gae_lambda: f64,
    pub epochs_per_batch: usize,
    pub episodes_per_batch: usize,
    /// Transitions per gradient step.
    pub minibatch_size: usize,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub grad_clip_norm: f64,
    pub seed: u64,
    /// Episodes between held-out evaluations.
    pub eval_interval: usize,
    pub eval_specs: usize,
    /// Evaluation budget as a multiple of the shortest distance.
    pub eval_budget_factor: f64,
    /// Rollout threads; results do not depend on this.
    pub workers: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            total_episodes: 98_304,
            gamma: 0.99,
            learning_rate: 4e-4,
            weight_decay: 4e-4,
            clip_epsilon: 0.2,
            gae_lambda: 0.95,
            epochs_per_batch: 4,
            episodes_per_batch: 256,
            minibatch_size: 64,
            value_coef: 0.5,
            entropy_coef: 0.01,
            grad_clip_norm: 0.5,
            seed: 0,
            eval_interval: 4096,
            eval_specs: 32,
            eval_budget_factor: 1.5,
            workers: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("gamma", self.gamma),
            ("learning_rate", self.learning_rate),
            ("clip_epsilon", self.clip_epsilon),
            ("grad_clip_norm", self.grad_clip_norm),
            ("eval_budget_factor", self.eval_budget_factor),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidConfiguration(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [
            ("weight_decay", self.weight_decay),
            ("value_coef", self.value_coef),
            ("entropy_coef", self.entropy_coef),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidConfiguration(format!("{name} must be non-negative, got {v}")));
            }
        }
        if self.gamma >= 1.0 {
            return Err(Error::InvalidConfiguration("gamma must be below 1".into()));
        }
        if self.clip_epsilon >= 1.0 {
            return Err(Error::InvalidConfiguration("clip_epsilon must lie in (0, 1)".into()));
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return Err(Error::InvalidConfiguration("gae_lambda must lie in [0, 1]".into()));
        }
        for (name, v) in [
            ("episodes_per_batch", self.episodes_per_batch),
            ("minibatch_size", self.minibatch_size),
            ("eval_interval", self.eval_interval),
            ("workers", self.workers),
        ] {
            if v == 0 {
                return Err(Error::InvalidConfiguration(format!("{name} must be positive")));
            }
        }
        Ok(())
    }
}

/// One line of the metrics log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub episode: usize,
    pub goal_rate: f64,
    pub mean_deception: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
}

impl MetricsRow {
    pub const HEADER: &'static str = "episode,goal_rate,mean_deception,policy_loss,value_loss,entropy";

    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.episode, self.goal_rate, self.mean_deception, self.policy_loss, self.value_loss, self.entropy
        )
    }
}

pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::from(MetricsRow::HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.to_csv());
        out.push('\n');
    }
    out
}

pub fn write_metrics_csv(path: impl AsRef<Path>, rows: &[MetricsRow]) -> Result<()> {
    std::fs::write(path, metrics_csv(rows))?;
    Ok(())
}

/// Everything needed to continue training.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub params: PolicyParameters,
    pub optimizer: AdamW,
    pub episodes_done: usize,
}

impl TrainState {
    pub fn fresh(policy: &PolicyConfig, train: &TrainConfig) -> Result<Self> {
        let params = init_parameters(policy, train.seed)?;
        let optimizer = AdamW::new(params.values.len(), train.learning_rate, train.weight_decay);
        Ok(Self { params, optimizer, episodes_done: 0 })
    }

    /// Parameters plus optimiser moments, so training can resume exactly.
    pub fn to_checkpoint(&self, mut metadata: serde_json::Value) -> Checkpoint {
        if let serde_json::Value::Object(map) = &mut metadata {
            map.insert("episodes_done".into(), self.episodes_done.into());
            map.insert("optimizer_step".into(), self.optimizer.step.into());
        }
        Checkpoint {
            parameters: self.params.clone(),
            extra: vec![
                ("optimizer.m".into(), self.optimizer.m.clone()),
                ("optimizer.v".into(), self.optimizer.v.clone()),
            ],
            metadata,
        }
    }

    pub fn from_checkpoint(ckpt: Checkpoint, train: &TrainConfig) -> Result<Self> {
        let missing = |what: &str| Error::Checkpoint(format!("checkpoint has no {what}; it cannot resume training"));
        let field = |name: &str| {
            ckpt.metadata
                .get(name)
                .and_then(serde_json::Value::as_u64)
                .ok_or_else(|| missing(name))
        };
        let episodes_done = field("episodes_done")? as usize;
        let step = field("optimizer_step")?;
        let extra = |name: &str| {
            ckpt.extra
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, v)| v.clone())
                .ok_or_else(|| missing(name))
        };
        let (m, v) = (extra("optimizer.m")?, extra("optimizer.v")?);
        let len = ckpt.parameters.values.len();
        if m.len() != len || v.len() != len {
            return Err(Error::Checkpoint("optimizer moments do not match the parameter count".into()));
        }
        let mut optimizer = AdamW::new(len, train.learning_rate, train.weight_decay);
        optimizer.step = step;
        optimizer.m = m;
        optimizer.v = v;
        Ok(Self { params: ckpt.parameters, optimizer, episodes_done })
    }
}

/// Passed to the progress hook after every evaluation.
pub struct Progress<'a> {
    pub row: &'a MetricsRow,
    pub state: &'a TrainState,
    pub last_update: &'a UpdateStats,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub state: TrainState,
    pub metrics: Vec<MetricsRow>,
}

fn episode_rng(seed: u64, episode: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(episode as u64);
    rng
}

fn update_rng(seed: u64, episodes_done: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    rng.set_stream(episodes_done as u64);
    rng
}

/// Runs episodes `first..first + count`, each with its own seeded stream.
pub fn collect_rollouts(
    cache: &WorldCache,
    policy: &dyn Policy,
    reward: &RewardConfig,
    seed: u64,
    first: usize,
    count: usize,
    workers: usize,
) -> Result<Vec<EpisodeResult>> {
    let one = |i: usize| -> Result<EpisodeResult> {
        let mut rng = episode_rng(seed, i);
        let spec = sample_episode_spec(cache, &mut rng)?;
        run_episode(cache, &spec, policy, reward, ActionMode::Sample, &mut rng, true)
    };
    if workers <= 1 {
        return (first..first + count).map(one).collect();
    }
    use rayon::prelude::*;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Internal(format!("thread pool: {e}")))?;
    pool.install(|| (first..first + count).into_par_iter().map(one).collect())
}

/// Greedy goal rate and mean deceptiveness on fixed tasks.
pub fn evaluate_greedy(
    cache: &WorldCache,
    specs: &[EpisodeSpec],
    policy: &dyn Policy,
    reward: &RewardConfig,
) -> Result<(f64, f64)> {
    if specs.is_empty() {
        return Ok((0.0, 0.0));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (mut goals, mut deception) = (0usize, 0.0);
    for spec in specs {
        let r = run_episode(cache, spec, policy, reward, ActionMode::Greedy, &mut rng, false)?;
        goals += r.reached_goal as usize;
        deception += r.deceptiveness();
    }
    Ok((goals as f64 / specs.len() as f64, deception / specs.len() as f64))
}

/// Trains (or resumes) a policy. `hook` sees every metrics row as it is
/// produced, together with the state at that point.
pub fn train(
    train_set: &WorldCache,
    validation_set: &WorldCache,
    initial: Option<TrainState>,
    train_config: &TrainConfig,
    reward: &RewardConfig,
    policy_config: &PolicyConfig,
    hook: &mut dyn FnMut(Progress<'_>) -> Result<()>,
) -> Result<TrainOutcome> {
    train_config.validate()?;
    reward.validate()?;
    policy_config.validate()?;
    if policy_config.input_dim != 4 {
        return Err(Error::InvalidConfiguration(
            "training episodes use two goals, so input_dim must be 4".into(),
        ));
    }
    let mut state = match initial {
        Some(s) => {
            if s.params.config() != policy_config {
                return Err(Error::InvalidConfiguration(
                    "resumed parameters were trained with a different policy configuration".into(),
                ));
            }
            s
        }
        None => TrainState::fresh(policy_config, train_config)?,
    };
    let eval_specs = {
        let mut rng = ChaCha8Rng::seed_from_u64(train_config.seed);
        rng.set_stream(u64::MAX);
        sample_eval_specs(validation_set, train_config.eval_specs, train_config.eval_budget_factor, &mut rng)?
    };
    let mut metrics = Vec::new();
    let mut last = UpdateStats::default();
    while state.episodes_done < train_config.total_episodes {
        let before = state.episodes_done;
        let count = train_config.episodes_per_batch.min(train_config.total_episodes - before);
        let episodes = collect_rollouts(
            train_set,
            &state.params,
            reward,
            train_config.seed,
            before,
            count,
            train_config.workers,
        )?;
        let transitions: Vec<Transition> = episodes.into_iter().flat_map(|e| e.transitions).collect();
        if !transitions.is_empty() {
            let (mut adv, targets) =
                compute_advantages(&transitions, train_config.gamma, train_config.gae_lambda);
            normalize_advantages(&mut adv);
            let mut rng = update_rng(train_config.seed, before);
            last = ppo_update(
                &mut state.params,
                &mut state.optimizer,
                &transitions,
                &adv,
                &targets,
                train_config,
                &mut rng,
            )?;
        }
        state.episodes_done += count;
        let after = state.episodes_done;
        let interval = train_config.eval_interval;
        if after / interval > before / interval || after == train_config.total_episodes {
            let (goal_rate, mean_deception) = evaluate_greedy(validation_set, &eval_specs, &state.params, reward)?;
            let row = MetricsRow {
                episode: after,
                goal_rate,
                mean_deception,
                policy_loss: last.policy_loss,
                value_loss: last.value_loss,
                entropy: last.entropy,
            };
            metrics.push(row);
            hook(Progress { row: &row, state: &state, last_update: &last })?;
        }
    }
    Ok(TrainOutcome { state, metrics })
}
