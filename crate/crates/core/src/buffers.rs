//! Transition storage: the replay buffer (every transition, reward possibly
//! withheld), the feedback buffer (only transitions with an environment
//! reward) and hindsight relabeling.

use rand::Rng;
use thiserror::Error;

use crate::envs::{Action, GoalConditioned};

/// Capacity used for both buffers unless configured otherwise.
pub const DEFAULT_CAPACITY: usize = 40_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BufferError {
    #[error("feedback buffer only accepts transitions with a reward")]
    MissingReward,
    #[error("cannot sample from an empty buffer")]
    Empty,
    #[error("buffer capacity must be positive")]
    ZeroCapacity,
    #[error("hindsight relabeling needs a goal on every transition")]
    MissingGoal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: Action,
    /// `None` when the gate skipped the environment reward.
    pub reward: Option<f64>,
    pub terminal: bool,
    pub next_state: Vec<f64>,
    pub goal: Option<Vec<f64>>,
}

impl Transition {
    /// Network input for `state` (state followed by goal).
    pub fn input(&self) -> Vec<f64> {
        with_goal(&self.state, self.goal.as_deref())
    }

    pub fn next_input(&self) -> Vec<f64> {
        with_goal(&self.next_state, self.goal.as_deref())
    }
}

fn with_goal(state: &[f64], goal: Option<&[f64]>) -> Vec<f64> {
    let mut v = Vec::with_capacity(state.len() + goal.map_or(0, <[f64]>::len));
    v.extend_from_slice(state);
    if let Some(g) = goal {
        v.extend_from_slice(g);
    }
    v
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BufferKind {
    Replay,
    Feedback,
}

/// Fixed-capacity FIFO ring of transitions.
#[derive(Debug, Clone)]
pub struct RingBuffer {
    kind: BufferKind,
    capacity: usize,
    items: Vec<Transition>,
    /// Slot that the next push overwrites once the ring is full.
    cursor: usize,
}

impl RingBuffer {
    pub fn new(kind: BufferKind, capacity: usize) -> Result<Self, BufferError> {
        if capacity == 0 {
            return Err(BufferError::ZeroCapacity);
        }
        Ok(RingBuffer {
            kind,
            capacity,
            items: Vec::with_capacity(capacity.min(4096)),
            cursor: 0,
        })
    }

    pub fn replay(capacity: usize) -> Result<Self, BufferError> {
        Self::new(BufferKind::Replay, capacity)
    }

    pub fn feedback(capacity: usize) -> Result<Self, BufferError> {
        Self::new(BufferKind::Feedback, capacity)
    }

    pub fn kind(&self) -> BufferKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn push(&mut self, transition: Transition) -> Result<(), BufferError> {
        if self.kind == BufferKind::Feedback && transition.reward.is_none() {
            return Err(BufferError::MissingReward);
        }
        if self.items.len() < self.capacity {
            self.items.push(transition);
        } else {
            self.items[self.cursor] = transition;
            self.cursor = (self.cursor + 1) % self.capacity;
        }
        Ok(())
    }

    /// Oldest to newest.
    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        let (newer, older) = self.items.split_at(self.cursor);
        older.iter().chain(newer.iter())
    }

    /// Uniform sampling with replacement.
    pub fn sample_minibatch<R: Rng + ?Sized>(
        &self,
        batch_size: usize,
        rng: &mut R,
    ) -> Result<Vec<Transition>, BufferError> {
        if self.items.is_empty() {
            return Err(BufferError::Empty);
        }
        Ok((0..batch_size)
            .map(|_| self.items[rng.random_range(0..self.items.len())].clone())
            .collect())
    }
}

/// Hindsight relabeling with the "future" strategy.
///
/// For each step `t` with at least one later step, emits `k` copies whose
/// goal is the goal achieved at a uniformly drawn later step `t' > t`
/// (the state the agent was in when step `t'` began) and whose reward and
/// terminal flag are recomputed under that goal. The originals are not
/// included in the output.
pub fn her_relabel<R: Rng + ?Sized>(
    episode: &[Transition],
    k: usize,
    goals: &dyn GoalConditioned,
    rng: &mut R,
) -> Result<Vec<Transition>, BufferError> {
    if episode.iter().any(|t| t.goal.is_none()) {
        return Err(BufferError::MissingGoal);
    }
    let len = episode.len();
    let mut out = Vec::with_capacity(k * len.saturating_sub(1));
    for t in 0..len.saturating_sub(1) {
        let achieved = goals.achieved_goal(&episode[t].next_state);
        for _ in 0..k {
            let future = rng.random_range(t + 1..len);
            let goal = goals.achieved_goal(&episode[future].state);
            let (reward, terminal) = goals.goal_reward(&achieved, &goal);
            out.push(Transition {
                reward: Some(reward),
                terminal,
                goal: Some(goal),
                ..episode[t].clone()
            });
        }
    }
    Ok(out)
}
