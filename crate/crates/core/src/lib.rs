//! Mixture-of-experts layers for value-based reinforcement learning, at desk scale.
//!
//! This crate implements Soft MoE and Top-1 MoE modules as drop-in replacements
//! for the penultimate layer of small Q-networks, together with everything
//! needed to compare them against plain width scaling: a tensor library with
//! reverse-mode differentiation, DQN-style online training, an offline CQL
//! mode, deterministic pixel environments, network-health diagnostics
//! (dormant neurons, empirical NTK rank, feature norms) and an experiment
//! harness with reproducible grids, IQM/bootstrap reporting and SVG plots.
//!
//! Everything runs on the CPU in `f64`. Runs are bit-reproducible per seed.

pub mod analysis;
pub mod env;
pub mod graph;
pub mod gradcheck;
pub mod harness;
pub mod moe;
pub mod network;
pub mod rl;
pub mod rng;
pub mod tensor;
pub mod verify;

pub use graph::{Graph, NodeId, SoftmaxAxis};
pub use tensor::{Tensor, TensorError};
