//! Seed-deterministic reinforcement-learning toolkit: evolution strategies
//! with seed-only worker communication, a small DQN trainer, warm-start
//! weight transfer between the two, and a benchmarking harness.
//!
//! Everything downstream of a 64-bit seed is bit-reproducible: network
//! initialization, Gaussian perturbations, environment dynamics, and replay
//! sampling all draw from [`rng::SplitMix64`] streams, so a worker that
//! knows only a seed can regenerate the exact perturbation the coordinator
//! will apply.

pub mod dqn;
pub mod envs;
pub mod es;
pub mod harness;
pub mod nn;
pub mod protocol;
pub mod rng;
pub mod transfer;
