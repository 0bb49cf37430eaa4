//! Advantage estimation, AdamW and the clipped-surrogate update.

use rand::seq::SliceRandom;
use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::episode::Transition;
use super::TrainConfig;
use crate::policy::{accumulate_gradient, forward_traced, log_softmax, PolicyParameters};
use crate::{Error, Result};

/// Generalised advantage estimates and value targets (`A + v`).
///
/// Episodes are separated by `done` flags; the last transition of the slice
/// is treated as terminal even if unflagged.
pub fn compute_advantages(transitions: &[Transition], gamma: f64, lambda: f64) -> (Vec<f64>, Vec<f64>) {
    let n = transitions.len();
    let mut adv = vec![0.0; n];
    let mut running = 0.0;
    for t in (0..n).rev() {
        let tr = &transitions[t];
        let terminal = tr.done || t + 1 == n;
        let next_value = if terminal { 0.0 } else { transitions[t + 1].value };
        if terminal {
            running = 0.0;
        }
        let delta = tr.reward + gamma * next_value - tr.value;
        running = delta + gamma * lambda * running;
        adv[t] = running;
    }
    let targets = adv.iter().zip(transitions).map(|(a, t)| a + t.value).collect();
    (adv, targets)
}

/// Shifts to mean 0 and scales to unit variance; no-op for fewer than two entries.
pub fn normalize_advantages(adv: &mut [f64]) {
    if adv.len() < 2 {
        return;
    }
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let var = adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt().max(1e-8);
    for a in adv {
        *a = (*a - mean) / std;
    }
}

/// Adam with decoupled weight decay on the masked entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamW {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamW {
    pub fn new(len: usize, learning_rate: f64, weight_decay: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay,
            step: 0,
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }

    pub fn update(&mut self, params: &mut [f64], grad: &[f64], decay_mask: &[bool]) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for i in 0..params.len() {
            if decay_mask[i] {
                params[i] *= 1.0 - self.learning_rate * self.weight_decay;
            }
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
        }
    }
}

/// Rescales `grad` to at most `max_norm`; returns the norm before clipping.
pub fn clip_grad_norm(grad: &mut [f64], max_norm: f64) -> f64 {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        grad.iter_mut().for_each(|g| *g *= s);
    }
    norm
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub mean_ratio: f64,
    pub clip_fraction: f64,
    /// Ratios of the very first minibatch, averaged.
    pub first_minibatch_ratio: f64,
    pub minibatches: usize,
}

/// Per-sample loss pieces and logit/value gradients for a minibatch of size `m`.
struct SampleTerms {
    ratio: f64,
    clipped: bool,
    policy_loss: f64,
    value_loss: f64,
    entropy: f64,
}

fn sample_terms(
    logits: &[f64],
    value: f64,
    transition: &Transition,
    advantage: f64,
    target: f64,
    config: &TrainConfig,
    m: f64,
    dlogits: &mut Vec<f64>,
) -> (SampleTerms, f64) {
    let log_p = log_softmax(logits);
    let p: Vec<f64> = log_p.iter().map(|l| l.exp()).collect();
    let a = transition.action;
    let ratio = (log_p[a] - transition.log_prob).exp();
    let eps = config.clip_epsilon;
    let clipped_ratio = ratio.clamp(1.0 - eps, 1.0 + eps);
    let unclipped_obj = ratio * advantage;
    let clipped_obj = clipped_ratio * advantage;
    let entropy = -p.iter().zip(&log_p).map(|(pi, li)| if *pi > 0.0 { pi * li } else { 0.0 }).sum::<f64>();

    dlogits.clear();
    dlogits.resize(logits.len(), 0.0);
    if unclipped_obj <= clipped_obj {
        let scale = -advantage * ratio / m;
        for (j, d) in dlogits.iter_mut().enumerate() {
            let onehot = if j == a { 1.0 } else { 0.0 };
            *d += scale * (onehot - p[j]);
        }
    }
    if config.entropy_coef != 0.0 {
        let c = config.entropy_coef / m;
        for (j, d) in dlogits.iter_mut().enumerate() {
            *d += c * p[j] * (log_p[j] + entropy);
        }
    }
    let dvalue = 2.0 * config.value_coef * (value - target) / m;
    (
        SampleTerms {
            ratio,
            clipped: (ratio - 1.0).abs() > eps,
            policy_loss: -unclipped_obj.min(clipped_obj),
            value_loss: (value - target).powi(2),
            entropy,
        },
        dvalue,
    )
}

/// Clipped-surrogate PPO epochs over one batch of transitions.
pub fn ppo_update(
    params: &mut PolicyParameters,
    optimizer: &mut AdamW,
    transitions: &[Transition],
    advantages: &[f64],
    targets: &[f64],
    config: &TrainConfig,
    rng: &mut dyn RngCore,
) -> Result<UpdateStats> {
    if transitions.len() != advantages.len() || transitions.len() != targets.len() {
        return Err(Error::Internal("batch arrays have different lengths".into()));
    }
    let mask = params.layout().weight_mask();
    let mut stats = UpdateStats::default();
    let (mut n_samples, mut ratio_sum, mut clipped) = (0usize, 0.0, 0usize);
    let mut order: Vec<usize> = (0..transitions.len()).collect();
    let mut grad = vec![0.0; params.layout().total()];
    let mut dlogits = Vec::new();
    for _epoch in 0..config.epochs_per_batch {
        order.shuffle(rng);
        for chunk in order.chunks(config.minibatch_size.max(1)) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let m = chunk.len() as f64;
            let (mut pl, mut vl, mut ent, mut mb_ratio) = (0.0, 0.0, 0.0, 0.0);
            for &i in chunk {
                let tr = &transitions[i];
                let trace = forward_traced(params, &tr.observation)?;
                let (terms, dvalue) = sample_terms(
                    &trace.output.logits,
                    trace.output.value,
                    tr,
                    advantages[i],
                    targets[i],
                    config,
                    m,
                    &mut dlogits,
                );
                accumulate_gradient(params, &tr.observation, &trace, &dlogits, dvalue, &mut grad)?;
                pl += terms.policy_loss;
                vl += terms.value_loss;
                ent += terms.entropy;
                mb_ratio += terms.ratio;
                ratio_sum += terms.ratio;
                clipped += terms.clipped as usize;
                n_samples += 1;
            }
            let loss = (pl - config.entropy_coef * ent + config.value_coef * vl) / m;
            if !loss.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite loss {loss} (policy {pl}, value {vl}, entropy {ent}) in minibatch {}",
                    stats.minibatches
                )));
            }
            params.layout().check_finite(&grad, "gradient")?;
            clip_grad_norm(&mut grad, config.grad_clip_norm);
            optimizer.update(&mut params.values, &grad, &mask);
            if stats.minibatches == 0 {
                stats.first_minibatch_ratio = mb_ratio / m;
            }
            stats.minibatches += 1;
            stats.policy_loss += pl / m;
            stats.value_loss += vl / m;
            stats.entropy += ent / m;
        }
    }
    if let Some(i) = params.values.iter().position(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!(
            "parameter {} became non-finite",
            params.layout().name_of(i)
        )));
    }
    if stats.minibatches > 0 {
        let k = stats.minibatches as f64;
        stats.policy_loss /= k;
        stats.value_loss /= k;
        stats.entropy /= k;
        stats.mean_ratio = ratio_sum / n_samples as f64;
        stats.clip_fraction = clipped as f64 / n_samples as f64;
    }
    Ok(stats)
}

/// Mean clipped-surrogate objective of a batch under `params`.
pub fn surrogate_objective(
    params: &PolicyParameters,
    transitions: &[Transition],
    advantages: &[f64],
    clip_epsilon: f64,
) -> Result<f64> {
    let mut total = 0.0;
    for (tr, &a) in transitions.iter().zip(advantages) {
        let out = forward_traced(params, &tr.observation)?.output;
        let ratio = (log_softmax(&out.logits)[tr.action] - tr.log_prob).exp();
        total += (ratio * a).min(ratio.clamp(1.0 - clip_epsilon, 1.0 + clip_epsilon) * a);
    }
    Ok(total / transitions.len().max(1) as f64)
}
