//! Concrete worlds: gridworld maps and the continuous Voronoi forest.

pub mod corpus;
pub mod forest;
pub mod grid;

pub use forest::{ForestConfig, ForestWorld, LocalPlan};
pub use grid::GridWorld;
