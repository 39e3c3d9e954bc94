//! Gate-dodging side-scroller in the Flappy Bird mold.
//!
//! Screen coordinates: y grows downward, 0 is the ceiling and
//! `world_height` the floor. Gravity accelerates the bird downward each
//! physics tick; flapping snaps its velocity to `flap_impulse` (negative =
//! upward). A pipe arrives every `pipe_spacing` ticks; when the countdown
//! hits zero the bird must be inside the gap or the episode ends. The agent
//! acts once per `frame_skip` ticks with the action repeated on every tick
//! and rewards summed, so a fully survived agent step is worth +0.1
//! regardless of the skip.

use serde::{Deserialize, Serialize};

use super::{EnvError, EnvStep, Environment, InfoMap};
use crate::rng::SplitMix64;

pub const OBSERVATION_DIM: usize = 5;

const REWARD_SURVIVE_PER_STEP: f64 = 0.1;
const REWARD_PIPE: f64 = 1.0;
const REWARD_CRASH: f64 = -1.0;
/// Velocity magnitude mapped to ±1 in observations; faster falls clamp.
const VELOCITY_SCALE: f64 = 1.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FlappyConfig {
    /// Downward acceleration, cells/tick².
    pub gravity: f64,
    /// Velocity set by a flap, cells/tick (negative = upward).
    pub flap_impulse: f64,
    /// Vertical opening in each pipe, cells.
    pub pipe_gap: f64,
    /// Ticks between consecutive pipes (also their spacing in cells, since
    /// pipes advance one cell per tick).
    pub pipe_spacing: u32,
    /// World height in cells; the bird crashes outside [0, world_height].
    pub world_height: f64,
    /// Physics ticks per agent action.
    pub frame_skip: u32,
    /// Hard episode cap in physics ticks.
    pub max_episode_ticks: u32,
}

impl Default for FlappyConfig {
    fn default() -> Self {
        Self {
            gravity: 0.05,
            flap_impulse: -0.5,
            pipe_gap: 4.0,
            pipe_spacing: 30,
            world_height: 20.0,
            frame_skip: 4,
            max_episode_ticks: 3000,
        }
    }
}

impl FlappyConfig {
    pub fn validate(&self) -> Result<(), EnvError> {
        if !(self.gravity > 0.0) {
            return Err(EnvError::InvalidConfig("gravity must be > 0".into()));
        }
        if !(self.flap_impulse < 0.0) {
            return Err(EnvError::InvalidConfig(
                "flap_impulse must be < 0 (upward)".into(),
            ));
        }
        if !(self.pipe_gap > 0.0 && self.pipe_gap < self.world_height) {
            return Err(EnvError::InvalidConfig(
                "pipe_gap must be in (0, world_height)".into(),
            ));
        }
        // Gap centers keep a one-cell margin from both bounds; the range
        // must be non-empty.
        if self.pipe_gap + 2.0 > self.world_height {
            return Err(EnvError::InvalidConfig(
                "world_height must be at least pipe_gap + 2".into(),
            ));
        }
        if self.pipe_spacing == 0 {
            return Err(EnvError::InvalidConfig("pipe_spacing must be >= 1".into()));
        }
        if self.frame_skip == 0 {
            return Err(EnvError::InvalidConfig("frame_skip must be >= 1".into()));
        }
        if self.max_episode_ticks == 0 {
            return Err(EnvError::InvalidConfig(
                "max_episode_ticks must be >= 1".into(),
            ));
        }
        Ok(())
    }

    fn gap_center_bounds(&self) -> (f64, f64) {
        let half = self.pipe_gap / 2.0;
        (half + 1.0, self.world_height - half - 1.0)
    }
}

#[derive(Debug)]
pub struct FlappyEnv {
    config: FlappyConfig,
    rng: SplitMix64,
    y: f64,
    vy: f64,
    /// Ticks until the next pipe reaches the bird.
    dx: u32,
    gap_top: f64,
    gap_bottom: f64,
    ticks: u64,
    pipes_passed: u64,
    crashed: bool,
    done: bool,
    started: bool,
}

impl FlappyEnv {
    pub fn new(config: FlappyConfig) -> Result<Self, EnvError> {
        config.validate()?;
        Ok(Self {
            config,
            rng: SplitMix64::new(0),
            y: 0.0,
            vy: 0.0,
            dx: 0,
            gap_top: 0.0,
            gap_bottom: 0.0,
            ticks: 0,
            pipes_passed: 0,
            crashed: false,
            done: false,
            started: false,
        })
    }

    fn draw_gap(&mut self) {
        let (lo, hi) = self.config.gap_center_bounds();
        let center = self.rng.next_range(lo, hi);
        let half = self.config.pipe_gap / 2.0;
        self.gap_top = center - half;
        self.gap_bottom = center + half;
    }

    fn normalize(&self, value: f64, lo: f64, hi: f64) -> f64 {
        let scaled = 2.0 * (value - lo) / (hi - lo) - 1.0;
        scaled.clamp(-1.0, 1.0)
    }

    fn observation(&self) -> Vec<f64> {
        let h = self.config.world_height;
        vec![
            self.normalize(self.y, 0.0, h),
            (self.vy / VELOCITY_SCALE).clamp(-1.0, 1.0),
            self.normalize(self.dx as f64, 0.0, self.config.pipe_spacing as f64),
            self.normalize(self.gap_top, 0.0, h),
            self.normalize(self.gap_bottom, 0.0, h),
        ]
    }

    fn info(&self) -> InfoMap {
        let mut info = InfoMap::new();
        info.insert("pipes_passed", self.pipes_passed as f64);
        info.insert("ticks", self.ticks as f64);
        info.insert("crashed", if self.crashed { 1.0 } else { 0.0 });
        info
    }

    /// One physics tick; returns the reward it contributes.
    fn tick(&mut self, flap: bool) -> f64 {
        self.ticks += 1;
        if flap {
            self.vy = self.config.flap_impulse;
        } else {
            self.vy += self.config.gravity;
        }
        self.y += self.vy;
        self.dx -= 1;

        if self.y < 0.0 || self.y > self.config.world_height {
            self.crashed = true;
            self.done = true;
            return REWARD_CRASH;
        }

        let mut reward = 0.0;
        if self.dx == 0 {
            if self.y >= self.gap_top && self.y <= self.gap_bottom {
                self.pipes_passed += 1;
                reward += REWARD_PIPE;
                self.dx = self.config.pipe_spacing;
                self.draw_gap();
            } else {
                self.crashed = true;
                self.done = true;
                return REWARD_CRASH;
            }
        }

        reward += REWARD_SURVIVE_PER_STEP / self.config.frame_skip as f64;
        if self.ticks >= self.config.max_episode_ticks as u64 {
            self.done = true;
        }
        reward
    }
}

impl Environment for FlappyEnv {
    fn observation_dim(&self) -> usize {
        OBSERVATION_DIM
    }

    fn num_actions(&self) -> usize {
        2
    }

    fn reset(&mut self, episode_seed: u64) -> Vec<f64> {
        self.rng = SplitMix64::new(episode_seed);
        self.y = self.config.world_height / 2.0;
        self.vy = 0.0;
        self.dx = self.config.pipe_spacing;
        self.ticks = 0;
        self.pipes_passed = 0;
        self.crashed = false;
        self.done = false;
        self.started = true;
        self.draw_gap();
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
        let flap = action == 1;
        let mut reward = 0.0;
        for _ in 0..self.config.frame_skip {
            reward += self.tick(flap);
            if self.done {
                break;
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
