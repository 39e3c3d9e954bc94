//! Evolution strategies with seed-only population bookkeeping.
//!
//! One generation: derive a population of Gaussian perturbations from the
//! master seed, evaluate the perturbed parameter vectors, rank-shape the
//! returns, form the Monte Carlo gradient estimate
//! `g = (1/(n·σ)) Σ F_i · ε_i`, and take a plain ascent step
//! `θ ← θ + α·g`. No optimizer state, no momentum.
//!
//! Perturbations are carried as `(seed, sign)` pairs; anyone holding θ and
//! the seed can rebuild the full vector via [`derive_noise`], which is what
//! keeps distributed result messages O(1) in the parameter dimension.

mod noise;

pub use noise::derive_noise;

use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::envs::{Environment, EnvError};
use crate::nn::{MlpPolicy, MlpSpec, ParameterVector};
use crate::rng::{generation_constant, mix64, SplitMix64};

/// Salt mixed into the episode-seed stream so it never collides with the
/// perturbation-seed stream of the same generation ("EP_SEEDS" in ASCII).
const EPISODE_STREAM_SALT: u64 = u64::from_be_bytes(*b"EP_SEEDS");

#[derive(Debug, Error)]
pub enum EsError {
    #[error("invalid ES config: {0}")]
    InvalidConfig(String),
    #[error("fitness shaping needs at least 2 rewards, got {0}")]
    TooFewRewards(usize),
    #[error("{what}: expected length {expected}, got {got}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error(
        "non-finite reward {value} in generation {generation} \
         (perturbation seed {seed}, sign {sign:+})"
    )]
    NonFiniteReward {
        generation: u32,
        seed: u64,
        sign: i8,
        value: f64,
    },
    #[error("evaluation failed in generation {generation}{}: {message}", seed_context(.seed))]
    Eval {
        generation: u32,
        seed: Option<u64>,
        message: String,
    },
    #[error(transparent)]
    Env(#[from] EnvError),
}

fn seed_context(seed: &Option<u64>) -> String {
    match seed {
        Some(s) => format!(" (perturbation seed {s})"),
        None => String::new(),
    }
}

/// How raw episode returns are transformed before entering the gradient
/// estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitnessShaping {
    /// Use returns as-is.
    Raw,
    /// Replace each return by `rank/(n-1) - 0.5` with ascending ranks and
    /// tie groups sharing their average rank: bounded, mean-zero, and
    /// invariant under any strictly increasing transform of the returns.
    CenteredRank,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EsConfig {
    /// Noise standard deviation σ.
    pub sigma: f64,
    /// Ascent step size α.
    pub learning_rate: f64,
    /// Population size n (must be even when antithetic).
    pub population_size: usize,
    /// Mirrored sampling: each seed appears with both signs.
    pub antithetic: bool,
    pub fitness_shaping: FitnessShaping,
    pub master_seed: u64,
    pub max_generations: u32,
    /// Episodes averaged per population member.
    pub episodes_per_eval: u32,
    /// Evaluate every member of a generation on the same episode seeds
    /// (common random numbers). When false each member draws its own.
    pub shared_episode_seeds: bool,
}

impl Default for EsConfig {
    fn default() -> Self {
        Self {
            sigma: 0.05,
            learning_rate: 0.005,
            population_size: 16,
            antithetic: true,
            fitness_shaping: FitnessShaping::CenteredRank,
            master_seed: 0,
            max_generations: 1000,
            episodes_per_eval: 1,
            shared_episode_seeds: true,
        }
    }
}

impl EsConfig {
    pub fn validate(&self) -> Result<(), EsError> {
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(EsError::InvalidConfig("sigma must be > 0".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(EsError::InvalidConfig("learning_rate must be > 0".into()));
        }
        if self.population_size < 2 {
            return Err(EsError::InvalidConfig(
                "population_size must be >= 2".into(),
            ));
        }
        if self.antithetic && self.population_size % 2 != 0 {
            return Err(EsError::InvalidConfig(
                "population_size must be even with antithetic sampling".into(),
            ));
        }
        // max_generations = 0 is legal: drivers treat it as "evaluate the
        // initial policy without taking an optimization step".
        if self.episodes_per_eval == 0 {
            return Err(EsError::InvalidConfig(
                "episodes_per_eval must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// One population member, identified by the seed of its noise vector and
/// the antithetic mirror sign. The materialized perturbation is
/// `sign · derive_noise(seed, d)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Perturbation {
    pub seed: u64,
    /// +1 or -1.
    pub sign: i8,
}

impl Perturbation {
    pub fn signed_noise(&self, d: usize) -> Vec<f64> {
        let mut eps = derive_noise(self.seed, d);
        if self.sign < 0 {
            for v in eps.iter_mut() {
                *v = -*v;
            }
        }
        eps
    }

    /// Materialize `θ + σ · sign · ε(seed)`.
    pub fn apply(&self, theta: &ParameterVector, sigma: f64) -> ParameterVector {
        let eps = derive_noise(self.seed, theta.len());
        let scale = sigma * self.sign as f64;
        let values = theta
            .iter()
            .zip(&eps)
            .map(|(t, e)| t + scale * e)
            .collect();
        ParameterVector::new(values)
    }
}

/// The population of generation `generation`: deterministic in
/// `(config.master_seed, generation)`. Antithetic mode emits each seed
/// twice, back to back, with signs [+, -].
pub fn make_population(config: &EsConfig, generation: u32) -> Vec<Perturbation> {
    let mut stream = SplitMix64::new(config.master_seed ^ generation_constant(generation as u64));
    let n = config.population_size;
    let mut population = Vec::with_capacity(n);
    if config.antithetic {
        for _ in 0..n / 2 {
            let seed = stream.next_u64();
            population.push(Perturbation { seed, sign: 1 });
            population.push(Perturbation { seed, sign: -1 });
        }
    } else {
        for _ in 0..n {
            population.push(Perturbation {
                seed: stream.next_u64(),
                sign: 1,
            });
        }
    }
    population
}

/// Episode seeds for one generation. With `shared_episode_seeds` every
/// member sees the same list; otherwise each member gets its own draws from
/// the same stream.
pub fn episode_seed_schedule(config: &EsConfig, generation: u32) -> Vec<Vec<u64>> {
    let mut stream = SplitMix64::new(mix64(
        config.master_seed ^ generation_constant(generation as u64) ^ EPISODE_STREAM_SALT,
    ));
    let episodes = config.episodes_per_eval as usize;
    if config.shared_episode_seeds {
        let seeds: Vec<u64> = (0..episodes).map(|_| stream.next_u64()).collect();
        vec![seeds; config.population_size]
    } else {
        (0..config.population_size)
            .map(|_| (0..episodes).map(|_| stream.next_u64()).collect())
            .collect()
    }
}

/// Apply the configured fitness transform. `CenteredRank` maps each reward
/// to `rank/(n-1) - 0.5` (ascending ranks, ties averaged), which sums to
/// zero and lies in [-0.5, 0.5].
pub fn shape_fitness(rewards: &[f64], mode: FitnessShaping) -> Result<Vec<f64>, EsError> {
    if rewards.len() < 2 {
        return Err(EsError::TooFewRewards(rewards.len()));
    }
    match mode {
        FitnessShaping::Raw => Ok(rewards.to_vec()),
        FitnessShaping::CenteredRank => {
            let n = rewards.len();
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| {
                rewards[a]
                    .partial_cmp(&rewards[b])
                    .expect("rewards must be comparable (no NaN)")
            });
            let mut shaped = vec![0.0; n];
            let denom = (n - 1) as f64;
            let mut start = 0;
            while start < n {
                // Stretch of equal rewards shares the average of its ranks.
                let mut end = start + 1;
                while end < n && rewards[order[end]] == rewards[order[start]] {
                    end += 1;
                }
                let avg_rank = (start + end - 1) as f64 / 2.0;
                let value = avg_rank / denom - 0.5;
                for &idx in &order[start..end] {
                    shaped[idx] = value;
                }
                start = end;
            }
            Ok(shaped)
        }
    }
}

/// The Monte Carlo gradient estimate and the population statistics that go
/// with it.
#[derive(Debug, Clone)]
pub struct GradientEstimate {
    pub values: ParameterVector,
    /// Mean of the raw (pre-shaping) rewards.
    pub population_mean_reward: f64,
    /// Max of the raw rewards.
    pub population_max_reward: f64,
}

/// `g = (1/(n·σ)) Σ_i F_i · sign_i · ε(seed_i)` over shaped rewards, with
/// population statistics taken from the raw rewards.
pub fn estimate_gradient(
    config: &EsConfig,
    perturbations: &[Perturbation],
    shaped_rewards: &[f64],
    raw_rewards: &[f64],
    d: usize,
) -> Result<GradientEstimate, EsError> {
    let n = perturbations.len();
    if shaped_rewards.len() != n {
        return Err(EsError::LengthMismatch {
            what: "shaped rewards",
            expected: n,
            got: shaped_rewards.len(),
        });
    }
    if raw_rewards.len() != n {
        return Err(EsError::LengthMismatch {
            what: "raw rewards",
            expected: n,
            got: raw_rewards.len(),
        });
    }
    assert!(d >= 1, "gradient dimension must be >= 1");

    let scale = 1.0 / (n as f64 * config.sigma);
    let mut g = vec![0.0; d];
    for (pert, &f) in perturbations.iter().zip(shaped_rewards) {
        let eps = derive_noise(pert.seed, d);
        let coeff = f * pert.sign as f64;
        for (acc, e) in g.iter_mut().zip(&eps) {
            *acc += coeff * e;
        }
    }
    for v in g.iter_mut() {
        *v *= scale;
    }

    let mean = raw_rewards.iter().sum::<f64>() / n as f64;
    let max = raw_rewards.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok(GradientEstimate {
        values: ParameterVector::new(g),
        population_mean_reward: mean,
        population_max_reward: max,
    })
}

/// One population member's evaluation assignment.
#[derive(Debug, Clone)]
pub struct MemberTask {
    /// Position in the population; results are joined on this.
    pub index: usize,
    pub perturbation: Perturbation,
    pub episode_seeds: Vec<u64>,
}

/// What one evaluation produced: the (mean) episode return and how many
/// agent steps it consumed.
#[derive(Debug, Clone, Copy)]
pub struct EvalOutcome {
    pub reward: f64,
    pub env_steps: u64,
}

/// Evaluation failure, optionally tied to the perturbation seed that
/// triggered it.
#[derive(Debug)]
pub struct EvalError {
    pub seed: Option<u64>,
    pub message: String,
}

impl std::fmt::Display for EvalError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.seed {
            Some(s) => write!(f, "{} (perturbation seed {s})", self.message),
            None => write!(f, "{}", self.message),
        }
    }
}

/// Something that can evaluate a whole population. Implementations must
/// return exactly one outcome per task, ordered by `MemberTask::index`;
/// internally they may run tasks in any order or in parallel.
pub trait PopulationEvaluator {
    fn evaluate(
        &mut self,
        theta: &ParameterVector,
        sigma: f64,
        tasks: &[MemberTask],
    ) -> Result<Vec<EvalOutcome>, EvalError>;
}

/// Adapter for a plain black-box objective `F(θ)`; episode seeds are
/// ignored and env-step accounting is zero.
pub struct FnEvaluator<F: FnMut(&ParameterVector) -> f64>(pub F);

impl<F: FnMut(&ParameterVector) -> f64> PopulationEvaluator for FnEvaluator<F> {
    fn evaluate(
        &mut self,
        theta: &ParameterVector,
        sigma: f64,
        tasks: &[MemberTask],
    ) -> Result<Vec<EvalOutcome>, EvalError> {
        Ok(tasks
            .iter()
            .map(|task| EvalOutcome {
                reward: (self.0)(&task.perturbation.apply(theta, sigma)),
                env_steps: 0,
            })
            .collect())
    }
}

/// Sequential in-process evaluator: materializes each perturbed policy and
/// runs greedy episodes on a single environment instance.
pub struct RolloutEvaluator {
    pub env: Box<dyn Environment>,
    pub spec: MlpSpec,
}

impl RolloutEvaluator {
    pub fn new(env: Box<dyn Environment>, spec: MlpSpec) -> Self {
        Self { env, spec }
    }
}

impl PopulationEvaluator for RolloutEvaluator {
    fn evaluate(
        &mut self,
        theta: &ParameterVector,
        sigma: f64,
        tasks: &[MemberTask],
    ) -> Result<Vec<EvalOutcome>, EvalError> {
        tasks
            .iter()
            .map(|task| {
                evaluate_member(
                    self.env.as_mut(),
                    &self.spec,
                    theta,
                    sigma,
                    task.perturbation,
                    &task.episode_seeds,
                )
            })
            .collect()
    }
}

/// Score one population member: apply the signed perturbation, run one greedy
/// episode per listed seed, and report the mean episode reward plus the total
/// environment steps consumed. Every evaluator — in-process or on a remote
/// worker — goes through this function, so a member's score is bit-identical
/// no matter where it was computed.
pub fn evaluate_member(
    env: &mut dyn Environment,
    spec: &MlpSpec,
    theta: &ParameterVector,
    sigma: f64,
    perturbation: Perturbation,
    episode_seeds: &[u64],
) -> Result<EvalOutcome, EvalError> {
    let fail = |message: String| EvalError {
        seed: Some(perturbation.seed),
        message,
    };
    if episode_seeds.is_empty() {
        return Err(fail("no episode seeds listed for this member".into()));
    }
    let params = perturbation.apply(theta, sigma);
    let policy =
        MlpPolicy::from_flat(spec.clone(), &params).map_err(|e| fail(e.to_string()))?;
    let mut total = 0.0;
    let mut steps = 0u64;
    for &episode_seed in episode_seeds {
        let outcome = crate::envs::greedy_episode(env, &policy, episode_seed)
            .map_err(|e| fail(e.to_string()))?;
        total += outcome.total_reward;
        steps += outcome.steps;
    }
    Ok(EvalOutcome {
        reward: total / episode_seeds.len() as f64,
        env_steps: steps,
    })
}

/// Per-generation record: raw population statistics plus the cost of the
/// step. Cumulative axes (env steps, wall clock) are summed by the caller.
#[derive(Debug, Clone)]
pub struct GenerationLog {
    pub generation: u32,
    pub raw_rewards: Vec<f64>,
    pub mean_reward: f64,
    pub max_reward: f64,
    pub std_reward: f64,
    pub grad_norm: f64,
    pub env_steps: u64,
    pub wall_clock_s: f64,
}

/// Build tasks for a generation: the perturbation population zipped with
/// the episode-seed schedule.
pub fn generation_tasks(config: &EsConfig, generation: u32) -> Vec<MemberTask> {
    let population = make_population(config, generation);
    let seeds = episode_seed_schedule(config, generation);
    population
        .into_iter()
        .zip(seeds)
        .enumerate()
        .map(|(index, (perturbation, episode_seeds))| MemberTask {
            index,
            perturbation,
            episode_seeds,
        })
        .collect()
}

/// One full ES generation: evaluate the population, shape fitness, estimate
/// the gradient, and ascend. Pure in `(theta, config, generation)` given a
/// deterministic evaluator. The caller is responsible for validating
/// `config` once up front.
pub fn es_step(
    theta: &ParameterVector,
    config: &EsConfig,
    evaluator: &mut dyn PopulationEvaluator,
    generation: u32,
) -> Result<(ParameterVector, GenerationLog), EsError> {
    let started = Instant::now();
    let tasks = generation_tasks(config, generation);
    let outcomes = evaluator
        .evaluate(theta, config.sigma, &tasks)
        .map_err(|e| EsError::Eval {
            generation,
            seed: e.seed,
            message: e.message,
        })?;
    if outcomes.len() != tasks.len() {
        return Err(EsError::LengthMismatch {
            what: "evaluation outcomes",
            expected: tasks.len(),
            got: outcomes.len(),
        });
    }

    let raw_rewards: Vec<f64> = outcomes.iter().map(|o| o.reward).collect();
    for (task, &reward) in tasks.iter().zip(&raw_rewards) {
        if !reward.is_finite() {
            return Err(EsError::NonFiniteReward {
                generation,
                seed: task.perturbation.seed,
                sign: task.perturbation.sign,
                value: reward,
            });
        }
    }
    let env_steps: u64 = outcomes.iter().map(|o| o.env_steps).sum();

    let shaped = shape_fitness(&raw_rewards, config.fitness_shaping)?;
    let population: Vec<Perturbation> = tasks.iter().map(|t| t.perturbation).collect();
    let estimate = estimate_gradient(config, &population, &shaped, &raw_rewards, theta.len())?;

    let new_values: Vec<f64> = theta
        .iter()
        .zip(estimate.values.iter())
        .map(|(t, g)| t + config.learning_rate * g)
        .collect();

    let mean = estimate.population_mean_reward;
    let std_reward = if raw_rewards.len() > 1 {
        (raw_rewards
            .iter()
            .map(|r| (r - mean) * (r - mean))
            .sum::<f64>()
            / (raw_rewards.len() - 1) as f64)
            .sqrt()
    } else {
        0.0
    };

    let log = GenerationLog {
        generation,
        mean_reward: mean,
        max_reward: estimate.population_max_reward,
        std_reward,
        grad_norm: estimate.values.norm(),
        env_steps,
        wall_clock_s: started.elapsed().as_secs_f64(),
        raw_rewards,
    };
    Ok((ParameterVector::new(new_values), log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn test_config(n: usize, antithetic: bool) -> EsConfig {
        EsConfig {
            population_size: n,
            antithetic,
            master_seed: 12345,
            ..EsConfig::default()
        }
    }

    #[test]
    fn antithetic_population_pairs_seeds_with_mirrored_signs() {
        let pop = make_population(&test_config(4, true), 0);
        assert_eq!(pop.len(), 4);
        assert_eq!(pop[0].seed, pop[1].seed);
        assert_eq!(pop[2].seed, pop[3].seed);
        assert_ne!(pop[0].seed, pop[2].seed);
        assert_eq!(
            pop.iter().map(|p| p.sign).collect::<Vec<_>>(),
            vec![1, -1, 1, -1]
        );
    }

    #[test]
    fn population_is_deterministic_per_generation() {
        let config = test_config(8, true);
        assert_eq!(make_population(&config, 3), make_population(&config, 3));
        assert_ne!(make_population(&config, 3), make_population(&config, 4));
    }

    #[test]
    fn generations_use_disjoint_seed_sets() {
        let config = test_config(16, true);
        let mut seen = HashSet::new();
        for generation in 0..100 {
            let generation_seeds: HashSet<u64> = make_population(&config, generation)
                .iter()
                .map(|p| p.seed)
                .collect();
            for seed in generation_seeds {
                assert!(
                    seen.insert(seed),
                    "seed {seed} reused in generation {generation}"
                );
            }
        }
    }

    #[test]
    fn shaping_hand_examples() {
        let shaped = shape_fitness(&[3.0, 1.0, 2.0], FitnessShaping::CenteredRank).unwrap();
        assert_eq!(shaped, vec![0.5, -0.5, 0.0]);

        let tied = shape_fitness(&[7.0, 7.0], FitnessShaping::CenteredRank).unwrap();
        assert_eq!(tied, vec![0.0, 0.0]);

        let raw = shape_fitness(&[3.0, 1.0, 2.0], FitnessShaping::Raw).unwrap();
        assert_eq!(raw, vec![3.0, 1.0, 2.0]);

        assert!(matches!(
            shape_fitness(&[1.0], FitnessShaping::CenteredRank),
            Err(EsError::TooFewRewards(1))
        ));
    }

    #[test]
    fn shaping_averages_tie_groups() {
        // Sorted: [1, 1, 2, 3]; the two 1s share rank (0+1)/2 = 0.5.
        let shaped = shape_fitness(&[1.0, 2.0, 1.0, 3.0], FitnessShaping::CenteredRank).unwrap();
        let expected = [
            0.5 / 3.0 - 0.5,
            2.0 / 3.0 - 0.5,
            0.5 / 3.0 - 0.5,
            3.0 / 3.0 - 0.5,
        ];
        for (s, e) in shaped.iter().zip(&expected) {
            assert!((s - e).abs() < 1e-15);
        }
    }

    #[test]
    fn shaping_sums_to_zero_and_stays_bounded() {
        let mut rng = SplitMix64::new(99);
        for trial in 0..50 {
            let n = 2 + (trial % 13);
            let rewards: Vec<f64> = (0..n).map(|_| rng.next_range(-5.0, 5.0)).collect();
            let shaped = shape_fitness(&rewards, FitnessShaping::CenteredRank).unwrap();
            assert!(shaped.iter().sum::<f64>().abs() < 1e-12);
            assert!(shaped.iter().all(|&v| (-0.5..=0.5).contains(&v)));
        }
    }

    #[test]
    fn zero_shaped_rewards_give_zero_gradient() {
        let config = test_config(4, true);
        let pop = make_population(&config, 0);
        let g = estimate_gradient(&config, &pop, &[0.0; 4], &[1.0; 4], 6).unwrap();
        assert!(g.values.iter().all(|&v| v == 0.0));
        assert_eq!(g.population_mean_reward, 1.0);
        assert_eq!(g.population_max_reward, 1.0);
    }

    #[test]
    fn antithetic_pair_hand_example() {
        // d=1, σ=1, n=2, mirrored pair with F = [1, -1]:
        // g = (1/2)(1·e + (-1)(-e)) = e.
        let config = EsConfig {
            sigma: 1.0,
            population_size: 2,
            ..EsConfig::default()
        };
        let seed = 777u64;
        let pop = vec![
            Perturbation { seed, sign: 1 },
            Perturbation { seed, sign: -1 },
        ];
        let e = derive_noise(seed, 1)[0];
        let g = estimate_gradient(&config, &pop, &[1.0, -1.0], &[1.0, -1.0], 1).unwrap();
        assert_eq!(g.values[0], e);
    }

    #[test]
    fn equal_rewards_cancel_exactly() {
        // CenteredRank: a full tie shapes to all zeros.
        // Raw + antithetic: mirrored noise cancels pairwise.
        let config = test_config(8, true);
        let pop = make_population(&config, 2);
        let rewards = vec![3.25; 8];

        let shaped = shape_fitness(&rewards, FitnessShaping::CenteredRank).unwrap();
        assert!(shaped.iter().all(|&v| v == 0.0));

        let g_raw = estimate_gradient(&config, &pop, &rewards, &rewards, 12).unwrap();
        assert!(g_raw.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gradient_rejects_length_mismatch() {
        let config = test_config(4, true);
        let pop = make_population(&config, 0);
        assert!(matches!(
            estimate_gradient(&config, &pop, &[0.0; 3], &[0.0; 4], 2),
            Err(EsError::LengthMismatch { .. })
        ));
        assert!(matches!(
            estimate_gradient(&config, &pop, &[0.0; 4], &[0.0; 2], 2),
            Err(EsError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn zero_learning_rate_keeps_theta_bit_exact() {
        let config = EsConfig {
            learning_rate: 0.0,
            population_size: 6,
            antithetic: true,
            ..EsConfig::default()
        };
        let theta = ParameterVector::new(vec![0.25, -1.5, 3.0, 0.125]);
        let mut eval = FnEvaluator(|p: &ParameterVector| -p.norm());
        let (new_theta, _) = es_step(&theta, &config, &mut eval, 0).unwrap();
        let bits_old: Vec<u64> = theta.iter().map(|v| v.to_bits()).collect();
        let bits_new: Vec<u64> = new_theta.iter().map(|v| v.to_bits()).collect();
        assert_eq!(bits_old, bits_new);
    }

    #[test]
    fn es_step_replay_is_bit_identical() {
        let config = test_config(8, true);
        let theta = ParameterVector::new(vec![1.0, -2.0, 0.5]);
        let objective = |p: &ParameterVector| -p.iter().map(|v| v * v).sum::<f64>();
        let (a, log_a) = es_step(&theta, &config, &mut FnEvaluator(objective), 5).unwrap();
        let (b, log_b) = es_step(&theta, &config, &mut FnEvaluator(objective), 5).unwrap();
        assert_eq!(a.as_slice(), b.as_slice());
        assert_eq!(log_a.raw_rewards, log_b.raw_rewards);
    }

    #[test]
    fn rank_shaping_ignores_monotone_reward_transforms() {
        let config = test_config(10, true);
        let theta = ParameterVector::new(vec![0.3, -0.7, 1.1, 0.0]);
        let objective = |p: &ParameterVector| -p.iter().map(|v| v * v).sum::<f64>();
        let transformed = move |p: &ParameterVector| 3.0 * objective(p) + 42.0;
        let (a, _) = es_step(&theta, &config, &mut FnEvaluator(objective), 7).unwrap();
        let (b, _) = es_step(&theta, &config, &mut FnEvaluator(transformed), 7).unwrap();
        assert_eq!(a.as_slice(), b.as_slice());
    }

    #[test]
    fn evaluator_errors_carry_generation_context() {
        struct Failing;
        impl PopulationEvaluator for Failing {
            fn evaluate(
                &mut self,
                _theta: &ParameterVector,
                _sigma: f64,
                tasks: &[MemberTask],
            ) -> Result<Vec<EvalOutcome>, EvalError> {
                Err(EvalError {
                    seed: Some(tasks[0].perturbation.seed),
                    message: "simulated rollout failure".into(),
                })
            }
        }
        let config = test_config(4, true);
        let theta = ParameterVector::new(vec![0.0; 3]);
        let err = es_step(&theta, &config, &mut Failing, 9).unwrap_err();
        match err {
            EsError::Eval {
                generation, seed, ..
            } => {
                assert_eq!(generation, 9);
                assert!(seed.is_some());
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn non_finite_rewards_are_rejected_with_context() {
        let config = test_config(4, true);
        let theta = ParameterVector::new(vec![0.0; 2]);
        let mut eval = FnEvaluator(|_: &ParameterVector| f64::NAN);
        let err = es_step(&theta, &config, &mut eval, 2).unwrap_err();
        assert!(matches!(
            err,
            EsError::NonFiniteReward { generation: 2, .. }
        ));
    }

    #[test]
    fn shared_episode_seeds_are_identical_across_members() {
        let config = EsConfig {
            episodes_per_eval: 3,
            ..test_config(6, true)
        };
        let schedule = episode_seed_schedule(&config, 4);
        assert_eq!(schedule.len(), 6);
        for member in &schedule[1..] {
            assert_eq!(member, &schedule[0]);
        }

        let unshared = episode_seed_schedule(
            &EsConfig {
                shared_episode_seeds: false,
                ..config
            },
            4,
        );
        assert_ne!(unshared[0], unshared[1]);
    }

    #[test]
    fn config_validation_rejects_bad_fields() {
        let ok = EsConfig::default();
        assert!(ok.validate().is_ok());
        for bad in [
            EsConfig {
                sigma: 0.0,
                ..ok.clone()
            },
            EsConfig {
                learning_rate: -1.0,
                ..ok.clone()
            },
            EsConfig {
                population_size: 1,
                ..ok.clone()
            },
            EsConfig {
                population_size: 5,
                antithetic: true,
                ..ok.clone()
            },
            EsConfig {
                episodes_per_eval: 0,
                ..ok.clone()
            },
        ] {
            assert!(bad.validate().is_err());
        }
    }
}
