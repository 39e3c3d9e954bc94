//! Deep Q-learning: ε-greedy acting, experience replay, a periodically
//! synced target network, and squared TD-error regression on the online
//! network via Adam.
//!
//! The whole run is a pure function of `(config, env factory, optional
//! initial policy)`: action noise, replay sampling, and episode seeds all
//! come from streams derived from `config.seed`.

mod adam;
mod replay;

pub use adam::Adam;
pub use replay::{ReplayBuffer, Transition};

use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::envs::{EnvError, Environment};
use crate::nn::{argmax_action, MlpPolicy, NnError, TdSample};
use crate::rng::{mix64, SplitMix64};

/// Stream salts: sub-RNGs of one run must never collide ("ACT_RNG_",
/// "SAMPLRNG", "ENVSEEDS", "EVALSEED" in ASCII).
const ACTION_STREAM_SALT: u64 = u64::from_be_bytes(*b"ACT_RNG_");
const SAMPLE_STREAM_SALT: u64 = u64::from_be_bytes(*b"SAMPLRNG");
const ENV_STREAM_SALT: u64 = u64::from_be_bytes(*b"ENVSEEDS");
const EVAL_STREAM_SALT: u64 = u64::from_be_bytes(*b"EVALSEED");

#[derive(Debug, Error)]
pub enum DqnError {
    #[error("invalid DQN config: {0}")]
    InvalidConfig(String),
    #[error("network spec mismatch: {0}")]
    SpecMismatch(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Env(#[from] EnvError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DqnConfig {
    /// Discount γ.
    pub gamma: f64,
    /// Replay capacity N.
    pub buffer_capacity: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Target-network sync period C, in environment steps.
    pub target_sync_every: u64,
    pub eps_start: f64,
    pub eps_end: f64,
    /// Fraction of `total_timesteps` over which ε anneals linearly.
    pub eps_anneal_fraction: f64,
    pub total_timesteps: u64,
    /// Train once per this many environment steps.
    pub train_every: u64,
    /// Steps collected before the first gradient update.
    pub learning_starts: u64,
    pub seed: u64,
    /// Synchronous environment copies acting round-robin into the shared
    /// buffer. 1 = classic single-env loop.
    pub num_envs: usize,
}

impl Default for DqnConfig {
    fn default() -> Self {
        Self {
            gamma: 0.90,
            buffer_capacity: 10_000,
            batch_size: 32,
            learning_rate: 5e-5,
            target_sync_every: 1000,
            eps_start: 0.2,
            eps_end: 0.0001,
            eps_anneal_fraction: 0.1,
            total_timesteps: 1_000_000,
            train_every: 1,
            learning_starts: 320,
            seed: 0,
            num_envs: 1,
        }
    }
}

impl DqnConfig {
    pub fn validate(&self) -> Result<(), DqnError> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(DqnError::InvalidConfig("gamma must be in [0, 1]".into()));
        }
        if self.buffer_capacity == 0 {
            return Err(DqnError::InvalidConfig(
                "buffer_capacity must be >= 1".into(),
            ));
        }
        if self.batch_size == 0 || self.batch_size > self.buffer_capacity {
            return Err(DqnError::InvalidConfig(
                "batch_size must be in [1, buffer_capacity]".into(),
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(DqnError::InvalidConfig("learning_rate must be > 0".into()));
        }
        if self.target_sync_every == 0 {
            return Err(DqnError::InvalidConfig(
                "target_sync_every must be >= 1".into(),
            ));
        }
        for (name, value) in [("eps_start", self.eps_start), ("eps_end", self.eps_end)] {
            if !(0.0..=1.0).contains(&value) {
                return Err(DqnError::InvalidConfig(format!(
                    "{name} must be in [0, 1]"
                )));
            }
        }
        if self.eps_end > self.eps_start {
            return Err(DqnError::InvalidConfig(
                "eps_end must be <= eps_start".into(),
            ));
        }
        if !(self.eps_anneal_fraction > 0.0 && self.eps_anneal_fraction <= 1.0) {
            return Err(DqnError::InvalidConfig(
                "eps_anneal_fraction must be in (0, 1]".into(),
            ));
        }
        if self.train_every == 0 {
            return Err(DqnError::InvalidConfig("train_every must be >= 1".into()));
        }
        if self.num_envs == 0 {
            return Err(DqnError::InvalidConfig("num_envs must be >= 1".into()));
        }
        Ok(())
    }
}

/// Exploration rate at a global step: linear anneal from `eps_start` to
/// `eps_end` over the first `eps_anneal_fraction · total_timesteps` steps,
/// constant afterward.
pub fn epsilon_at(step: u64, config: &DqnConfig) -> f64 {
    let anneal_steps = config.eps_anneal_fraction * config.total_timesteps as f64;
    let progress = step as f64;
    if progress >= anneal_steps {
        config.eps_end
    } else {
        config.eps_start + (config.eps_end - config.eps_start) * (progress / anneal_steps)
    }
}

/// ε-greedy action selection. Always consumes exactly one uniform draw for
/// the explore/exploit decision (plus one index draw when exploring), so
/// the stream stays aligned regardless of the branch taken.
pub fn select_action(
    policy: &MlpPolicy,
    observation: &[f64],
    epsilon: f64,
    rng: &mut SplitMix64,
) -> Result<usize, NnError> {
    debug_assert!((0.0..=1.0).contains(&epsilon));
    if rng.next_uniform() < epsilon {
        Ok(rng.next_index(policy.spec().output_dim))
    } else {
        argmax_action(&policy.forward(observation)?)
    }
}

/// TD targets from the target network: `y = r` on terminal transitions,
/// else `y = r + γ · max_a' Q(s', a'; θ⁻)`.
pub fn td_targets(
    target_policy: &MlpPolicy,
    batch: &[&Transition],
    gamma: f64,
) -> Result<Vec<f64>, DqnError> {
    if batch.is_empty() {
        return Err(DqnError::Nn(NnError::EmptyBatch));
    }
    batch
        .iter()
        .map(|t| {
            if t.done {
                Ok(t.reward)
            } else {
                let q_next = target_policy.forward(&t.next_state)?;
                let best = q_next.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                Ok(t.reward + gamma * best)
            }
        })
        .collect::<Result<Vec<f64>, NnError>>()
        .map_err(DqnError::from)
}

/// Overwrite the target network with a bit-exact copy of the online one.
pub fn sync_target(online: &MlpPolicy, target: &mut MlpPolicy) -> Result<(), DqnError> {
    if online.spec() != target.spec() {
        return Err(DqnError::SpecMismatch(format!(
            "online {:?} vs target {:?}",
            online.spec(),
            target.spec()
        )));
    }
    *target = online.clone();
    Ok(())
}

/// Result of a [`DqnTrainer::train_step`] call.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TrainOutcome {
    /// Buffer not warm yet (fewer than `learning_starts` steps collected or
    /// fewer than `batch_size` stored); nothing was updated.
    NotReady,
    Trained { loss: f64 },
}

/// Owns the mutable training state: both networks, the replay buffer, the
/// optimizer, and the RNG streams.
pub struct DqnTrainer {
    pub config: DqnConfig,
    pub online: MlpPolicy,
    pub target: MlpPolicy,
    pub buffer: ReplayBuffer,
    adam: Adam,
    action_rng: SplitMix64,
    sample_rng: SplitMix64,
    /// Environment steps observed so far (drives ε and the warm-up gate).
    pub global_step: u64,
}

impl DqnTrainer {
    /// Build a trainer around an initial online network; the target starts
    /// as a bit-exact copy.
    pub fn new(config: DqnConfig, online: MlpPolicy) -> Result<Self, DqnError> {
        config.validate()?;
        let target = online.clone();
        let adam = Adam::new(online.param_count());
        let action_rng = SplitMix64::new(mix64(config.seed ^ ACTION_STREAM_SALT));
        let sample_rng = SplitMix64::new(mix64(config.seed ^ SAMPLE_STREAM_SALT));
        Ok(Self {
            buffer: ReplayBuffer::new(config.buffer_capacity),
            config,
            online,
            target,
            adam,
            action_rng,
            sample_rng,
            global_step: 0,
        })
    }

    /// ε-greedy action for the current step count.
    pub fn act(&mut self, observation: &[f64]) -> Result<usize, DqnError> {
        let eps = epsilon_at(self.global_step, &self.config);
        select_action(&self.online, observation, eps, &mut self.action_rng)
            .map_err(DqnError::from)
    }

    /// Record a transition and advance the step counter.
    pub fn observe(&mut self, transition: Transition) {
        self.buffer.push(transition);
        self.global_step += 1;
    }

    /// One gradient update on a uniformly sampled minibatch, if the buffer
    /// is warm; otherwise an explicit not-ready signal.
    pub fn train_step(&mut self) -> Result<TrainOutcome, DqnError> {
        if self.global_step < self.config.learning_starts
            || self.buffer.len() < self.config.batch_size
        {
            return Ok(TrainOutcome::NotReady);
        }
        let batch = self.buffer.sample(&mut self.sample_rng, self.config.batch_size);
        let targets = td_targets(&self.target, &batch, self.config.gamma)?;
        let samples: Vec<TdSample> = batch
            .iter()
            .zip(&targets)
            .map(|(t, &y)| TdSample {
                observation: t.state.clone(),
                action: t.action,
                target: y,
            })
            .collect();
        let (grad, loss) = self.online.backward_td(&samples)?;
        let mut flat = self.online.to_flat().into_vec();
        self.adam
            .step(&mut flat, grad.as_slice(), self.config.learning_rate);
        self.online = MlpPolicy::from_flat(self.online.spec().clone(), &flat.into())?;
        Ok(TrainOutcome::Trained { loss })
    }

    /// Copy online → target.
    pub fn sync_target(&mut self) -> Result<(), DqnError> {
        sync_target(&self.online, &mut self.target)
    }
}

/// Evaluation cadence for [`run_dqn`]: every `every` environment steps,
/// run `episodes` greedy episodes on seeds held out from training.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EvalParams {
    pub every: u64,
    pub episodes: usize,
}

impl Default for EvalParams {
    fn default() -> Self {
        Self {
            every: 10_000,
            episodes: 10,
        }
    }
}

/// One learning-curve row, written at each evaluation point.
#[derive(Debug, Clone)]
pub struct DqnCurveRow {
    pub step: u64,
    pub env_steps_cum: u64,
    /// Cumulative training time; evaluation pauses the clock.
    pub wall_clock_s: f64,
    pub mean_eval_reward: f64,
    pub std_eval_reward: f64,
    pub epsilon: f64,
    /// Mean training loss since the previous row (0 before training starts).
    pub loss: f64,
}

/// Held-out evaluation seeds for a run: disjoint by construction from the
/// training episode-seed streams.
pub fn eval_seeds(run_seed: u64, episodes: usize) -> Vec<u64> {
    let mut rng = SplitMix64::new(mix64(run_seed ^ EVAL_STREAM_SALT));
    (0..episodes).map(|_| rng.next_u64()).collect()
}

/// Full Algorithm-2-style training loop.
///
/// `make_env` is called once per acting environment plus once for the
/// evaluation environment. When `initial_policy` is given it seeds the
/// online network (the target syncs from it immediately); otherwise the
/// online network is initialized from `config.seed`.
pub fn run_dqn(
    make_env: &dyn Fn() -> Result<Box<dyn Environment>, EnvError>,
    spec: &crate::nn::MlpSpec,
    config: &DqnConfig,
    initial_policy: Option<MlpPolicy>,
    eval: &EvalParams,
) -> Result<(MlpPolicy, Vec<DqnCurveRow>), DqnError> {
    config.validate()?;
    let online = match initial_policy {
        Some(policy) => {
            if policy.spec() != spec {
                return Err(DqnError::SpecMismatch(format!(
                    "initial policy {:?} vs requested {:?}",
                    policy.spec(),
                    spec
                )));
            }
            policy
        }
        None => MlpPolicy::init(spec.clone(), config.seed)?,
    };

    let mut envs: Vec<Box<dyn Environment>> = Vec::with_capacity(config.num_envs);
    for _ in 0..config.num_envs {
        envs.push(make_env()?);
    }
    let mut eval_env = make_env()?;
    for env in &envs {
        if env.observation_dim() != spec.input_dim || env.num_actions() != spec.output_dim {
            return Err(DqnError::SpecMismatch(format!(
                "env ({} obs, {} actions) vs net ({} in, {} out)",
                env.observation_dim(),
                env.num_actions(),
                spec.input_dim,
                spec.output_dim
            )));
        }
    }

    let mut trainer = DqnTrainer::new(config.clone(), online)?;
    let held_out = eval_seeds(config.seed, eval.episodes);

    // Per-env episode seed streams, disjoint from action/sample streams.
    let mut episode_streams: Vec<SplitMix64> = (0..config.num_envs)
        .map(|i| SplitMix64::new(mix64(config.seed ^ ENV_STREAM_SALT ^ (i as u64))))
        .collect();
    let mut observations: Vec<Vec<f64>> = envs
        .iter_mut()
        .zip(&mut episode_streams)
        .map(|(env, stream)| env.reset(stream.next_u64()))
        .collect();

    let mut curve = Vec::new();
    let mut losses_since_eval: Vec<f64> = Vec::new();
    let mut train_clock = 0.0f64;
    let mut segment_start = Instant::now();

    // Eval helper; callers pause the training clock around it.
    let evaluate = |trainer: &DqnTrainer,
                        eval_env: &mut Box<dyn Environment>,
                        train_clock: f64,
                        losses: &mut Vec<f64>,
                        curve: &mut Vec<DqnCurveRow>|
     -> Result<(), DqnError> {
        let (mean, std, _) =
            crate::envs::evaluate_policy(eval_env.as_mut(), &trainer.online, &held_out)?;
        let loss = if losses.is_empty() {
            0.0
        } else {
            losses.iter().sum::<f64>() / losses.len() as f64
        };
        losses.clear();
        curve.push(DqnCurveRow {
            step: trainer.global_step,
            env_steps_cum: trainer.global_step,
            wall_clock_s: train_clock,
            mean_eval_reward: mean,
            std_eval_reward: std,
            epsilon: epsilon_at(trainer.global_step, &trainer.config),
            loss,
        });
        Ok(())
    };

    // Step-0 row: the starting (possibly warm-started) policy's level.
    train_clock += segment_start.elapsed().as_secs_f64();
    evaluate(
        &trainer,
        &mut eval_env,
        train_clock,
        &mut losses_since_eval,
        &mut curve,
    )?;
    segment_start = Instant::now();

    while trainer.global_step < config.total_timesteps {
        for i in 0..config.num_envs {
            if trainer.global_step >= config.total_timesteps {
                break;
            }
            let action = trainer.act(&observations[i])?;
            let step = envs[i].step(action)?;
            let next_obs = if step.done {
                envs[i].reset(episode_streams[i].next_u64())
            } else {
                step.observation.clone()
            };
            trainer.observe(Transition {
                state: std::mem::replace(&mut observations[i], next_obs),
                action,
                reward: step.reward,
                next_state: step.observation,
                done: step.done,
            });

            if trainer.global_step % config.train_every == 0 {
                if let TrainOutcome::Trained { loss } = trainer.train_step()? {
                    losses_since_eval.push(loss);
                }
            }
            if trainer.global_step % config.target_sync_every == 0 {
                trainer.sync_target()?;
            }
            if trainer.global_step % eval.every == 0 {
                train_clock += segment_start.elapsed().as_secs_f64();
                evaluate(
                    &trainer,
                    &mut eval_env,
                    train_clock,
                    &mut losses_since_eval,
                    &mut curve,
                )?;
                segment_start = Instant::now();
            }
        }
    }

    // Final row unless the loop ended exactly on an eval boundary.
    if curve.last().map(|row| row.step) != Some(trainer.global_step) {
        train_clock += segment_start.elapsed().as_secs_f64();
        evaluate(
            &trainer,
            &mut eval_env,
            train_clock,
            &mut losses_since_eval,
            &mut curve,
        )?;
    }

    Ok((trainer.online, curve))
}
