//! Episodic environments with seed-reproducible dynamics.
//!
//! Both environments expose the same contract: `reset(episode_seed)` starts
//! an episode whose entire trajectory is a pure function of (config,
//! episode_seed, action sequence), and `step` after a terminal transition is
//! an error until the next reset. That determinism is what lets distributed
//! rollouts be replayed from seeds alone.

mod flappy;
mod lineworld;

pub use flappy::{FlappyConfig, FlappyEnv};
pub use lineworld::{value_iteration_oracle, LineWorldConfig, LineWorldEnv, ValueIteration};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::{argmax_action, MlpPolicy, NnError};

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("step called before the first reset")]
    NotStarted,
    #[error("step called after the episode finished")]
    EpisodeFinished,
    #[error("action {action} out of range for {num_actions} actions")]
    InvalidAction { action: usize, num_actions: usize },
    #[error("invalid environment config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Policy(#[from] NnError),
}

/// Cumulative diagnostic counters, re-emitted on every step.
pub type InfoMap = BTreeMap<&'static str, f64>;

/// Result of one agent-level step.
#[derive(Debug, Clone)]
pub struct EnvStep {
    pub observation: Vec<f64>,
    pub reward: f64,
    pub done: bool,
    pub info: InfoMap,
}

pub trait Environment: Send {
    fn observation_dim(&self) -> usize;
    fn num_actions(&self) -> usize;
    /// Start a new episode; the returned observation is the initial state.
    fn reset(&mut self, episode_seed: u64) -> Vec<f64>;
    fn step(&mut self, action: usize) -> Result<EnvStep, EnvError>;
}

/// Which environment an experiment runs on, with its parameters. The
/// serialized form is internally tagged so configs read as
/// `{ name = "flappy", ... }`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum EnvConfig {
    Flappy(FlappyConfig),
    #[serde(rename = "lineworld")]
    LineWorld(LineWorldConfig),
}

impl EnvConfig {
    pub fn validate(&self) -> Result<(), EnvError> {
        match self {
            EnvConfig::Flappy(c) => c.validate(),
            EnvConfig::LineWorld(c) => c.validate(),
        }
    }

    pub fn observation_dim(&self) -> usize {
        match self {
            EnvConfig::Flappy(_) => flappy::OBSERVATION_DIM,
            EnvConfig::LineWorld(c) => c.length,
        }
    }

    pub fn num_actions(&self) -> usize {
        2
    }

    pub fn make_env(&self) -> Result<Box<dyn Environment>, EnvError> {
        self.validate()?;
        Ok(match self {
            EnvConfig::Flappy(c) => Box::new(FlappyEnv::new(c.clone())?),
            EnvConfig::LineWorld(c) => Box::new(LineWorldEnv::new(c.clone())?),
        })
    }
}

/// Outcome of one full episode.
#[derive(Debug, Clone)]
pub struct EpisodeOutcome {
    pub total_reward: f64,
    /// Agent-level steps taken (frame-skipped steps count once).
    pub steps: u64,
    /// Info counters from the final step.
    pub final_info: InfoMap,
}

/// Run one episode acting greedily (argmax over the policy's scores).
pub fn greedy_episode(
    env: &mut dyn Environment,
    policy: &MlpPolicy,
    episode_seed: u64,
) -> Result<EpisodeOutcome, EnvError> {
    let mut obs = env.reset(episode_seed);
    let mut total_reward = 0.0;
    let mut steps = 0u64;
    loop {
        let action = argmax_action(&policy.forward(&obs)?)?;
        let step = env.step(action)?;
        total_reward += step.reward;
        steps += 1;
        if step.done {
            return Ok(EpisodeOutcome {
                total_reward,
                steps,
                final_info: step.info,
            });
        }
        obs = step.observation;
    }
}

/// Mean episode return of a greedy policy over the given episode seeds.
/// Returns (mean, sample standard deviation, total agent steps).
pub fn evaluate_policy(
    env: &mut dyn Environment,
    policy: &MlpPolicy,
    episode_seeds: &[u64],
) -> Result<(f64, f64, u64), EnvError> {
    assert!(!episode_seeds.is_empty());
    let mut returns = Vec::with_capacity(episode_seeds.len());
    let mut steps = 0u64;
    for &seed in episode_seeds {
        let outcome = greedy_episode(env, policy, seed)?;
        returns.push(outcome.total_reward);
        steps += outcome.steps;
    }
    let mean = returns.iter().sum::<f64>() / returns.len() as f64;
    let std = if returns.len() > 1 {
        let var = returns.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>()
            / (returns.len() - 1) as f64;
        var.sqrt()
    } else {
        0.0
    };
    Ok((mean, std, steps))
}
