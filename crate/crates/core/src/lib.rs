//! Interactive imitation learning gated by stochastic reach-tubes.
//!
//! The crate bundles toy controlled ODEs ([`envs`]), scripted experts and MLP novices
//! ([`policies`]), a GoTube-style reach-tube builder ([`reachtube`]), intervention gates
//! ([`gating`]), the training loops ([`dagger`]), and a tube containment checker
//! ([`safety`]).

pub mod cli;
pub mod dagger;
pub mod envs;
pub mod error;
pub mod gating;
pub mod policies;
pub mod reachtube;
pub mod rng;
pub mod safety;
pub mod sampling;

pub use error::{Error, Result};
