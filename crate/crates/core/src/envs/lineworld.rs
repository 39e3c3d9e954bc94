//! Corridor MDP with an exact dynamic-programming oracle.
//!
//! The agent starts on cell 0 of a line of `length` cells and must reach
//! the rightmost cell. Every non-goal step costs `step_penalty`; entering
//! the goal pays `goal_reward` and ends the episode. Observations are
//! one-hot, dynamics are deterministic, and the optimal Q-table is
//! computable to machine precision — which is the point: anything this
//! crate trains on LineWorld can be checked against ground truth.

use serde::{Deserialize, Serialize};

use super::{EnvError, EnvStep, Environment, InfoMap};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LineWorldConfig {
    /// Number of cells; the goal is cell `length - 1`.
    pub length: usize,
    /// Cost of each step that does not reach the goal (subtracted).
    pub step_penalty: f64,
    /// Reward for entering the goal cell.
    pub goal_reward: f64,
    /// Episode truncation cap in steps.
    pub max_steps: u32,
}

impl Default for LineWorldConfig {
    fn default() -> Self {
        Self {
            length: 10,
            step_penalty: 0.01,
            goal_reward: 1.0,
            max_steps: 200,
        }
    }
}

impl LineWorldConfig {
    pub fn validate(&self) -> Result<(), EnvError> {
        if self.length < 2 {
            return Err(EnvError::InvalidConfig("length must be >= 2".into()));
        }
        if self.max_steps == 0 {
            return Err(EnvError::InvalidConfig("max_steps must be >= 1".into()));
        }
        if !self.step_penalty.is_finite() || !self.goal_reward.is_finite() {
            return Err(EnvError::InvalidConfig("rewards must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug)]
pub struct LineWorldEnv {
    config: LineWorldConfig,
    position: usize,
    steps: u32,
    done: bool,
    started: bool,
}

impl LineWorldEnv {
    pub fn new(config: LineWorldConfig) -> Result<Self, EnvError> {
        config.validate()?;
        Ok(Self {
            config,
            position: 0,
            steps: 0,
            done: false,
            started: false,
        })
    }

    fn observation(&self) -> Vec<f64> {
        let mut obs = vec![0.0; self.config.length];
        obs[self.position] = 1.0;
        obs
    }

    fn info(&self) -> InfoMap {
        let mut info = InfoMap::new();
        info.insert("position", self.position as f64);
        info.insert("steps", self.steps as f64);
        info
    }
}

impl Environment for LineWorldEnv {
    fn observation_dim(&self) -> usize {
        self.config.length
    }

    fn num_actions(&self) -> usize {
        2
    }

    /// LineWorld is fully deterministic; the episode seed is ignored.
    fn reset(&mut self, _episode_seed: u64) -> Vec<f64> {
        self.position = 0;
        self.steps = 0;
        self.done = false;
        self.started = true;
        self.observation()
    }

    fn step(&mut self, action: usize) -> Result<EnvStep, EnvError> {
        if !self.started {
            return Err(EnvError::NotStarted);
        }
        if self.done {
            return Err(EnvError::EpisodeFinished);
        }
        if action > 1 {
            return Err(EnvError::InvalidAction {
                action,
                num_actions: 2,
            });
        }
        self.steps += 1;
        // 0 = left, 1 = right; the left wall clamps.
        self.position = if action == 0 {
            self.position.saturating_sub(1)
        } else {
            self.position + 1
        };
        let reward;
        if self.position == self.config.length - 1 {
            reward = self.config.goal_reward;
            self.done = true;
        } else {
            reward = -self.config.step_penalty;
            if self.steps >= self.config.max_steps {
                self.done = true;
            }
        }
        Ok(EnvStep {
            observation: self.observation(),
            reward,
            done: self.done,
            info: self.info(),
        })
    }
}

/// Exact optimal Q-table for a LineWorld instance.
#[derive(Debug, Clone)]
pub struct ValueIteration {
    /// `q[s] = [Q*(s, left), Q*(s, right)]`; the goal row stays zero.
    pub q_values: Vec<[f64; 2]>,
    /// Greedy action per non-terminal state (ties break toward left).
    pub greedy_policy: Vec<usize>,
    /// Sup-norm Bellman residual after each sweep.
    pub residuals: Vec<f64>,
}

/// Solve the infinite-horizon MDP by synchronous Bellman iteration down to
/// a 1e-12 sup-norm fixed point. `max_steps` is a training-loop truncation
/// device, not part of the MDP, so the oracle ignores it.
pub fn value_iteration_oracle(config: &LineWorldConfig, gamma: f64) -> ValueIteration {
    assert!(
        (0.0..1.0).contains(&gamma),
        "value iteration needs gamma in [0, 1) to contract"
    );
    let n = config.length;
    let goal = n - 1;
    let mut q = vec![[0.0f64; 2]; n];
    let mut residuals = Vec::new();
    loop {
        let mut next = q.clone();
        let mut residual: f64 = 0.0;
        for s in 0..goal {
            for (a, target) in [(0usize, s.saturating_sub(1)), (1usize, s + 1)] {
                let value = if target == goal {
                    config.goal_reward
                } else {
                    -config.step_penalty + gamma * q[target][0].max(q[target][1])
                };
                residual = residual.max((value - q[s][a]).abs());
                next[s][a] = value;
            }
        }
        q = next;
        residuals.push(residual);
        if residual < 1e-12 {
            break;
        }
    }
    let greedy_policy = q[..goal]
        .iter()
        .map(|row| if row[1] > row[0] { 1 } else { 0 })
        .collect();
    ValueIteration {
        q_values: q,
        greedy_policy,
        residuals,
    }
}
