//! Meta-reinforcement-learning PI tuner.
//!
//! A recurrent PPO agent is trained offline across a distribution of
//! first-order-plus-time-delay (FOPTD) processes. Once trained, the actor
//! tunes PI controller gains online from closed-loop data alone: it observes
//! `[k_p, k_i, e, ∫e]` at each coarse step and emits bounded increments to
//! the gains, while its GRU hidden state accumulates an implicit model of the
//! process it is driving.
//!
//! Crate layout:
//! - [`sim`] — FOPTD process simulation (exact zero-order-hold, fractional dead time)
//! - [`tank`] — nonlinear two-tank level process and FOPTD step-response fitting
//! - [`pi`] — PI controller and SIMC reference tunings
//! - [`env`] — the meta-RL task environment (task sampling, cost, episodes)
//! - [`augment`] — data augmentation that maps the tank into the training distribution
//! - [`nn`] — minimal reverse-mode autodiff: dense layers, GRU cells, Adam
//! - [`agent`] — recurrent actor, privileged feedforward critic, checkpoints
//! - [`ppo`] — rollout collection, GAE, PPO-Clip and value updates
//! - [`pca`] — principal component analysis of hidden states
//! - [`eval`] — the experiment suite (heatmaps, convergence, drift, tank, ablations)

pub mod agent;
pub mod augment;
pub mod env;
pub mod eval;
pub mod nn;
pub mod pca;
pub mod pi;
pub mod ppo;
pub mod sim;
pub mod tank;

mod error;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
