//! Tunably deceptive path planning over weighted graphs.
//!
//! An agent walks a graph towards its true goal while an observer, modelled as
//! a boundedly rational goal recogniser, watches the partial trajectory. The
//! agent is rewarded for misleading the observer (exaggeration towards a decoy
//! or ambiguity between goals) and for reaching the true goal within a step or
//! distance budget. Policies are GraphSAGE networks over the agent's k-hop
//! neighbourhood, trained with PPO, and transfer to larger grids and to a
//! continuous forest navigated over Voronoi ridges.
//!
//! Module map:
//!
//! - [`graph`]: immutable weighted graphs, shortest paths, k-hop views, node attributes.
//! - [`observer`]: softmax value iteration and the goal posterior.
//! - [`deception`]: deception bonuses, classical metrics, rewards and returns.
//! - [`policy`]: the GraphSAGE policy/value network, its gradients and checkpoints.
//! - [`trainer`]: episode sampling, rollouts, advantage estimation and PPO with AdamW.
//! - [`envs`]: gridworld maps, the built-in map corpus and the continuous forest.
//! - [`geometry`]: Delaunay triangulation and clipped Voronoi planning graphs.
//! - [`oracle`]: exhaustive search baseline, shortest paths and policy evaluation.
//! - [`render`]: SVG and CSV output for heatmaps, trajectories and forests.

pub mod deception;
pub mod envs;
pub mod error;
pub mod geometry;
pub mod graph;
pub mod observer;
pub mod oracle;
pub mod policy;
pub mod render;
pub mod trainer;

pub use error::{Error, Result};
pub use graph::{NodeId, WeightedGraph};
