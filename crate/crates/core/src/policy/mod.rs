//! GraphSAGE policy/value network over the agent's k-hop neighbourhood.
//!
//! All parameters live in one flat `Vec<f64>`; [`ParamLayout`] names the
//! slices. Matrices are row-major with shape `fan_in x fan_out` and act on row
//! vectors (`h W`).

mod checkpoint;
mod network;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::graph::AttributeScaling;
use crate::{Error, Result};

pub use checkpoint::{load_checkpoint, load_parameters, save_checkpoint, save_parameters, Checkpoint};
pub use network::{
    accumulate_gradient, backward, forward, forward_traced, ForwardTrace, GraphObservation,
    PolicyOutput,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicyConfig {
    /// Message-passing layers; also the perception radius in hops.
    pub num_layers: usize,
    pub hidden_dim: usize,
    /// Attribute length: number of goals + 2.
    pub input_dim: usize,
    /// Keep at most this many randomly chosen neighbours per node.
    pub neighbor_sample_cap: Option<usize>,
    pub attribute_scaling: AttributeScaling,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            num_layers: 4,
            hidden_dim: 64,
            input_dim: 4,
            neighbor_sample_cap: None,
            attribute_scaling: AttributeScaling::Raw,
        }
    }
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_layers < 1 {
            return Err(Error::InvalidConfiguration("num_layers must be at least 1".into()));
        }
        if self.hidden_dim < 1 {
            return Err(Error::InvalidConfiguration("hidden_dim must be at least 1".into()));
        }
        if self.input_dim < 3 {
            return Err(Error::InvalidConfiguration(format!(
                "input_dim must be at least 3, got {}",
                self.input_dim
            )));
        }
        if self.neighbor_sample_cap == Some(0) {
            return Err(Error::InvalidConfiguration(
                "neighbor_sample_cap must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
    pub is_bias: bool,
}

impl ParamSpec {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct LayerOffsets {
    pub pool_w: usize,
    pub pool_b: usize,
    pub self_w: usize,
    pub neigh_w: usize,
    pub bias: usize,
}

#[derive(Debug, Clone)]
pub struct ParamLayout {
    specs: Vec<ParamSpec>,
    total: usize,
    pub(crate) in_w: usize,
    pub(crate) in_b: usize,
    pub(crate) layers: Vec<LayerOffsets>,
    pub(crate) act_w: usize,
    pub(crate) act_b: usize,
    pub(crate) val_w: usize,
    pub(crate) val_b: usize,
}

impl ParamLayout {
    pub fn new(config: &PolicyConfig) -> Self {
        let h = config.hidden_dim;
        let mut specs = Vec::new();
        let mut total = 0;
        let mut push = |name: String, rows: usize, cols: usize, is_bias: bool| {
            let offset = total;
            total += rows * cols;
            specs.push(ParamSpec { name, rows, cols, offset, is_bias });
            offset
        };
        let in_w = push("input.weight".into(), config.input_dim, h, false);
        let in_b = push("input.bias".into(), 1, h, true);
        let layers = (0..config.num_layers)
            .map(|l| LayerOffsets {
                pool_w: push(format!("layer{l}.pool.weight"), h, h, false),
                pool_b: push(format!("layer{l}.pool.bias"), 1, h, true),
                self_w: push(format!("layer{l}.self.weight"), h, h, false),
                neigh_w: push(format!("layer{l}.neighbor.weight"), h, h, false),
                bias: push(format!("layer{l}.bias"), 1, h, true),
            })
            .collect();
        let act_w = push("action_head.weight".into(), h, 1, false);
        let act_b = push("action_head.bias".into(), 1, 1, true);
        let val_w = push("value_head.weight".into(), h, 1, false);
        let val_b = push("value_head.bias".into(), 1, 1, true);
        Self { specs, total, in_w, in_b, layers, act_w, act_b, val_w, val_b }
    }

    pub fn specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    pub fn total(&self) -> usize {
        self.total
    }

    /// Name of the tensor containing flat index `index`.
    pub fn name_of(&self, index: usize) -> &str {
        self.specs
            .iter()
            .find(|s| s.range().contains(&index))
            .map(|s| s.name.as_str())
            .unwrap_or("<out of range>")
    }

    /// Mask with `true` for every entry subject to weight decay.
    pub fn weight_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.total];
        for s in &self.specs {
            if !s.is_bias {
                mask[s.range()].iter_mut().for_each(|m| *m = true);
            }
        }
        mask
    }

    /// Errors with the offending tensor name if any entry is not finite.
    pub fn check_finite(&self, values: &[f64], what: &str) -> Result<()> {
        match values.iter().position(|v| !v.is_finite()) {
            None => Ok(()),
            Some(i) => Err(Error::NonFiniteGradient(format!(
                "{what} entry {i} in {} is {}",
                self.name_of(i),
                values[i]
            ))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PolicyParameters {
    config: PolicyConfig,
    layout: ParamLayout,
    pub values: Vec<f64>,
}

impl PartialEq for PolicyParameters {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.values == other.values
    }
}

impl PolicyParameters {
    pub fn from_values(config: PolicyConfig, values: Vec<f64>) -> Result<Self> {
        config.validate()?;
        let layout = ParamLayout::new(&config);
        if values.len() != layout.total() {
            return Err(Error::InvalidConfiguration(format!(
                "expected {} parameters for this configuration, got {}",
                layout.total(),
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "parameter {} ({}) is not finite",
                i,
                layout.name_of(i)
            )));
        }
        Ok(Self { config, layout, values })
    }

    pub fn config(&self) -> &PolicyConfig {
        &self.config
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn tensor(&self, name: &str) -> Option<&[f64]> {
        self.layout
            .specs
            .iter()
            .find(|s| s.name == name)
            .map(|s| &self.values[s.range()])
    }
}

/// Glorot-uniform weights, zero biases.
pub fn init_parameters(config: &PolicyConfig, seed: u64) -> Result<PolicyParameters> {
    config.validate()?;
    let layout = ParamLayout::new(config);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = vec![0.0; layout.total()];
    for spec in layout.specs() {
        if spec.is_bias {
            continue;
        }
        let bound = (6.0 / (spec.rows + spec.cols) as f64).sqrt();
        for v in &mut values[spec.range()] {
            *v = rng.gen_range(-bound..=bound);
        }
    }
    PolicyParameters::from_values(*config, values)
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|&l| (l - m).exp()).sum::<f64>().ln();
    logits.iter().map(|&l| l - lse).collect()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    log_softmax(logits).into_iter().map(f64::exp).collect()
}

/// Draws an edge index from `softmax(logits)`; returns it with its log-probability.
pub fn sample_action(output: &PolicyOutput, rng: &mut dyn RngCore) -> Result<(usize, f64)> {
    if output.logits.is_empty() {
        return Err(Error::NoAction);
    }
    let log_p = log_softmax(&output.logits);
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, lp) in log_p.iter().enumerate() {
        acc += lp.exp();
        if u < acc {
            return Ok((i, *lp));
        }
    }
    // rounding left the cumulative sum just short of 1
    let last = log_p
        .iter()
        .rposition(|lp| lp.exp() > 0.0)
        .unwrap_or(log_p.len() - 1);
    Ok((last, log_p[last]))
}

/// Arg-max edge (lowest index on ties) and its log-probability.
pub fn greedy_action(output: &PolicyOutput) -> Result<(usize, f64)> {
    if output.logits.is_empty() {
        return Err(Error::NoAction);
    }
    let mut best = 0;
    for (i, &l) in output.logits.iter().enumerate() {
        if l > output.logits[best] {
            best = i;
        }
    }
    Ok((best, log_softmax(&output.logits)[best]))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionMode {
    Greedy,
    Sample,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decision {
    pub index: usize,
    pub log_prob: f64,
    pub value: f64,
}

/// Anything that picks one of the agent's incident edges from an observation.
pub trait Policy: Sync {
    /// Hops of neighbourhood the policy needs to see.
    fn perception_radius(&self) -> usize;

    fn neighbor_sample_cap(&self) -> Option<usize> {
        None
    }

    fn attribute_scaling(&self) -> AttributeScaling {
        AttributeScaling::Raw
    }

    fn decide(
        &self,
        observation: &GraphObservation,
        mode: ActionMode,
        rng: &mut dyn RngCore,
    ) -> Result<Decision>;
}

impl Policy for PolicyParameters {
    fn perception_radius(&self) -> usize {
        self.config.num_layers
    }

    fn neighbor_sample_cap(&self) -> Option<usize> {
        self.config.neighbor_sample_cap
    }

    fn attribute_scaling(&self) -> AttributeScaling {
        self.config.attribute_scaling
    }

    fn decide(
        &self,
        observation: &GraphObservation,
        mode: ActionMode,
        rng: &mut dyn RngCore,
    ) -> Result<Decision> {
        let output = forward(self, observation)?;
        let (index, log_prob) = match mode {
            ActionMode::Greedy => greedy_action(&output)?,
            ActionMode::Sample => sample_action(&output, rng)?,
        };
        Ok(Decision { index, log_prob, value: output.value })
    }
}

/// Steps to the neighbour closest to the true goal (lowest index on ties).
#[derive(Debug, Clone, Copy, Default)]
pub struct ShortestPathPolicy;

impl Policy for ShortestPathPolicy {
    fn perception_radius(&self) -> usize {
        1
    }

    fn decide(
        &self,
        observation: &GraphObservation,
        _mode: ActionMode,
        _rng: &mut dyn RngCore,
    ) -> Result<Decision> {
        if observation.actions.is_empty() {
            return Err(Error::NoAction);
        }
        let distance = |a: usize| observation.feature(observation.actions[a], observation.true_goal_feature);
        let mut best = 0;
        for a in 1..observation.actions.len() {
            if distance(a) < distance(best) {
                best = a;
            }
        }
        Ok(Decision { index: best, log_prob: 0.0, value: 0.0 })
    }
}

/// Uniformly random edge in either mode.
#[derive(Debug, Clone, Copy, Default)]
pub struct RandomPolicy;

impl Policy for RandomPolicy {
    fn perception_radius(&self) -> usize {
        1
    }

    fn decide(
        &self,
        observation: &GraphObservation,
        _mode: ActionMode,
        rng: &mut dyn RngCore,
    ) -> Result<Decision> {
        let n = observation.actions.len();
        if n == 0 {
            return Err(Error::NoAction);
        }
        Ok(Decision {
            index: rng.gen_range(0..n),
            log_prob: -(n as f64).ln(),
            value: 0.0,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn output(logits: &[f64]) -> PolicyOutput {
        PolicyOutput { logits: logits.to_vec(), value: 0.0 }
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let cfg = PolicyConfig { hidden_dim: 8, num_layers: 2, ..Default::default() };
        let a = init_parameters(&cfg, 7).unwrap();
        let b = init_parameters(&cfg, 7).unwrap();
        let c = init_parameters(&cfg, 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.values, c.values);
        for spec in a.layout().specs() {
            let vals = &a.values[spec.range()];
            if spec.is_bias {
                assert!(vals.iter().all(|&v| v == 0.0));
            } else {
                let bound = (6.0 / (spec.rows + spec.cols) as f64).sqrt();
                assert!(vals.iter().all(|v| v.abs() <= bound));
            }
        }
    }

    #[test]
    fn layout_shapes() {
        let cfg = PolicyConfig::default();
        let layout = ParamLayout::new(&cfg);
        let h = 64;
        let expected = 4 * h + h + 4 * (3 * h * h + 2 * h) + 2 * (h + 1);
        assert_eq!(layout.total(), expected);
        assert_eq!(layout.specs().first().unwrap().name, "input.weight");
        assert_eq!(layout.name_of(layout.total() - 1), "value_head.bias");
    }

    #[test]
    fn config_validation() {
        let bad = PolicyConfig { num_layers: 0, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = PolicyConfig { input_dim: 2, ..Default::default() };
        assert!(bad.validate().is_err());
        assert!(PolicyParameters::from_values(PolicyConfig::default(), vec![0.0; 3]).is_err());
    }

    #[test]
    fn single_neighbor_sampling() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(sample_action(&output(&[0.3]), &mut rng).unwrap(), (0, 0.0));
        assert!(sample_action(&output(&[]), &mut rng).is_err());
    }

    #[test]
    fn uniform_sampling_frequencies() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut counts = [0usize; 4];
        for _ in 0..10_000 {
            counts[sample_action(&output(&[0.5; 4]), &mut rng).unwrap().0] += 1;
        }
        for c in counts {
            assert!((c as f64 / 10_000.0 - 0.25).abs() < 0.02, "{counts:?}");
        }
    }

    #[test]
    fn greedy_choice() {
        assert_eq!(greedy_action(&output(&[1.0, 2.0])).unwrap().0, 1);
        assert_eq!(greedy_action(&output(&[2.0, 2.0, 1.0])).unwrap().0, 0);
    }

    #[test]
    fn softmax_normalises() {
        let p = softmax(&[1000.0, -3.0, 2.5, 0.0]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let lp = log_softmax(&[0.0, 0.0]);
        assert!((lp[0] - (0.5f64).ln()).abs() < 1e-15);
    }
}
