//! Environments whose rewards are only revealed on request.
//!
//! Stepping an environment is cheap and always returns the next observation,
//! but the scalar reward is hidden behind a [`RewardToken`]. A token can be
//! redeemed exactly once; every redemption counts as one reward request.

mod bitflip;
mod keylock;
mod parking;

pub use bitflip::{BitFlip, BitFlipState};
pub use keylock::{Cell, KeyLock, KeyLockLayout, KeyLockState, KEYLOCK_FEATURES, KEYLOCK_MAX_STEPS};
pub use parking::{Parking, ParkingParams, ParkingState, PARKING_SPOTS};

use std::collections::HashMap;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("invalid action: {0}")]
    InvalidAction(String),
    #[error("episode already ended; call reset first")]
    EpisodeOver,
    #[error("reward token {0} was already redeemed")]
    AlreadyRedeemed(u64),
    #[error("reward token {0} belongs to a finished episode")]
    ExpiredToken(u64),
    #[error("unknown reward token {0}")]
    UnknownToken(u64),
    #[error("invalid layout: {0}")]
    Layout(String),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Action {
    Discrete(usize),
    Continuous(Vec<f64>),
}

impl std::fmt::Display for Action {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Action::Discrete(a) => write!(f, "{a}"),
            Action::Continuous(v) => {
                for (i, x) in v.iter().enumerate() {
                    if i > 0 {
                        f.write_str(";")?;
                    }
                    write!(f, "{x}")?;
                }
                Ok(())
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActionSpace {
    Discrete(usize),
    /// Each dimension bounded to `[-1, 1]`.
    Continuous(usize),
}

impl ActionSpace {
    /// Width of the action when fed to a network (one-hot for discrete).
    pub fn encoded_width(&self) -> usize {
        match *self {
            ActionSpace::Discrete(n) | ActionSpace::Continuous(n) => n,
        }
    }

    pub fn encode(&self, action: &Action) -> Vec<f64> {
        match (self, action) {
            (ActionSpace::Discrete(n), Action::Discrete(a)) => {
                let mut v = vec![0.0; *n];
                v[*a] = 1.0;
                v
            }
            (_, Action::Continuous(v)) => v.clone(),
            (ActionSpace::Continuous(n), Action::Discrete(_)) => vec![0.0; *n],
        }
    }
}

/// What the agent sees. Goal-conditioned environments split the goal out so
/// it can be relabeled.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub state: Vec<f64>,
    pub goal: Option<Vec<f64>>,
}

impl Observation {
    /// Network input: state followed by the goal, if any.
    pub fn features(&self) -> Vec<f64> {
        let mut f = self.state.clone();
        if let Some(g) = &self.goal {
            f.extend_from_slice(g);
        }
        f
    }
}

/// Opaque claim on the reward produced by one step.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RewardToken {
    id: u64,
}

impl RewardToken {
    pub fn id(&self) -> u64 {
        self.id
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvStep {
    pub observation: Observation,
    pub terminal: bool,
    pub truncated: bool,
    pub token: RewardToken,
}

impl EnvStep {
    pub fn done(&self) -> bool {
        self.terminal || self.truncated
    }
}

/// Reference points used by the convergence detector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreBounds {
    /// Best achievable episode return (or a tight upper bound on it).
    pub highest: f64,
    /// Return of a do-nothing or random policy, used for negative-scale tasks.
    pub baseline: f64,
}

/// Bookkeeping shared by every environment: issued tokens, the request
/// counter and the true episode return (kept for evaluation only).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RewardLedger {
    pending: HashMap<u64, f64>,
    next_id: u64,
    episode_first_id: u64,
    requests: u64,
    episode_return: f64,
}

impl RewardLedger {
    pub fn new_episode(&mut self) {
        self.pending.clear();
        self.episode_first_id = self.next_id;
        self.episode_return = 0.0;
    }

    pub fn issue(&mut self, reward: f64) -> RewardToken {
        let id = self.next_id;
        self.next_id += 1;
        self.pending.insert(id, reward);
        self.episode_return += reward;
        RewardToken { id }
    }

    pub fn redeem(&mut self, token: &RewardToken) -> Result<f64, EnvError> {
        match self.pending.remove(&token.id) {
            Some(r) => {
                self.requests += 1;
                Ok(r)
            }
            None if token.id >= self.next_id => Err(EnvError::UnknownToken(token.id)),
            None if token.id < self.episode_first_id => Err(EnvError::ExpiredToken(token.id)),
            None => Err(EnvError::AlreadyRedeemed(token.id)),
        }
    }

    pub fn requests(&self) -> u64 {
        self.requests
    }

    pub fn episode_return(&self) -> f64 {
        self.episode_return
    }
}

/// Goal-aware environments expose their reward predicate so past
/// transitions can be relabeled with new goals.
pub trait GoalConditioned {
    /// The goal actually achieved in `state` (state part of an observation).
    fn achieved_goal(&self, state: &[f64]) -> Vec<f64>;
    /// Reward and terminal flag for having reached `achieved` while aiming at `goal`.
    fn goal_reward(&self, achieved: &[f64], goal: &[f64]) -> (f64, bool);
}

pub trait Environment: Send {
    /// Starts a new episode. `seed` drives any per-episode randomness.
    fn reset(&mut self, seed: u64) -> Observation;
    fn step(&mut self, action: &Action) -> Result<EnvStep, EnvError>;
    fn redeem(&mut self, token: &RewardToken) -> Result<f64, EnvError>;
    fn reward_requests(&self) -> u64;
    fn action_space(&self) -> ActionSpace;
    fn state_width(&self) -> usize;
    fn goal_width(&self) -> usize {
        0
    }
    /// Sum of every reward produced this episode, requested or not. Only
    /// for scoring; agents must not read it.
    fn episode_return(&self) -> f64;
    fn score_bounds(&self) -> ScoreBounds;
    fn goal_conditioned(&self) -> Option<&dyn GoalConditioned> {
        None
    }
}
