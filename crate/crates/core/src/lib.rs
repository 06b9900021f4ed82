//! Cost-map learning from demonstrations with maximum-entropy deep inverse
//! reinforcement learning on grid worlds.

pub mod arch;
pub mod baseline;
pub mod config;
pub mod error;
pub mod eval;
pub mod export;
pub mod grid;
pub mod io;
pub mod mdp;
pub mod nn;
pub mod rng;
pub mod synth;
pub mod train;
pub mod verify;

pub use error::{Error, Result};
pub use grid::{Action, Cell, CostMap, FeatureMap, GridShape, GridSpec, Trajectory};
