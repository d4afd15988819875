//! Decentralized online mirror descent in dynamic environments.
//!
//! A network of agents tracks the minimizer of a time-varying global convex
//! cost `f_t = (1/n) Σ_i f_{i,t}` whose minimizer follows known linear
//! dynamics `x*_{t+1} = A x*_t + v_t` corrupted by arbitrary mismatch noise.
//! Each round every agent
//!
//! 1. queries a (possibly noisy) gradient of its private loss at its iterate,
//! 2. takes a mirror-descent prox step from its consensus-mixed state,
//! 3. pushes the result through the known dynamics `A`.
//!
//! The crate provides the network and weight machinery ([`network`]), mirror
//! geometries ([`geometry`]), comparator dynamics ([`dynamics`]), loss
//! oracles ([`objectives`]), the simulation loop ([`engine`]), empirical
//! regret and every theoretical bound as a calculator ([`metrics`]), and the
//! configuration / Monte Carlo / CSV layer behind the `domd` CLI
//! ([`harness`]).

pub mod csvio;
pub mod dynamics;
pub mod engine;
pub mod geometry;
pub mod harness;
pub mod metrics;
pub mod network;
pub mod objectives;
pub mod seed;

/// Dense column vector used for agent states, gradients and targets.
pub type Vector = nalgebra::DVector<f64>;
/// Dense matrix used for consensus weights and dynamics.
pub type Matrix = nalgebra::DMatrix<f64>;
