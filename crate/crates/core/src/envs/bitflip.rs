//! Bit-flipping goal task: flip one bit per step until the bit vector
//! matches the goal. Pays 0 on a match and -1 otherwise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    Action, ActionSpace, EnvError, EnvStep, Environment, GoalConditioned, Observation,
    RewardLedger, RewardToken, ScoreBounds,
};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitFlipState {
    pub bits: Vec<bool>,
    pub goal: Vec<bool>,
}

#[derive(Debug, Clone)]
pub struct BitFlip {
    n: usize,
    state: BitFlipState,
    steps: usize,
    done: bool,
    initial_distance: usize,
    ledger: RewardLedger,
}

fn as_reals(bits: &[bool]) -> Vec<f64> {
    bits.iter().map(|&b| b as u8 as f64).collect()
}

impl BitFlip {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "need at least one bit");
        let mut env = BitFlip {
            n,
            state: BitFlipState {
                bits: vec![false; n],
                goal: vec![false; n],
            },
            steps: 0,
            done: false,
            initial_distance: 0,
            ledger: RewardLedger::default(),
        };
        env.reset(0);
        env
    }

    pub fn bits(&self) -> usize {
        self.n
    }

    pub fn max_steps(&self) -> usize {
        self.n + 5
    }

    pub fn state(&self) -> &BitFlipState {
        &self.state
    }

    /// Starts an episode from an explicit state.
    pub fn reset_to(&mut self, state: BitFlipState) -> Result<Observation, EnvError> {
        if state.bits.len() != self.n || state.goal.len() != self.n {
            return Err(EnvError::Layout(format!("expected {} bits", self.n)));
        }
        self.initial_distance = hamming(&state.bits, &state.goal);
        self.state = state;
        self.steps = 0;
        self.done = false;
        self.ledger.new_episode();
        Ok(self.observation())
    }

    fn observation(&self) -> Observation {
        Observation {
            state: as_reals(&self.state.bits),
            goal: Some(as_reals(&self.state.goal)),
        }
    }
}

fn hamming(a: &[bool], b: &[bool]) -> usize {
    a.iter().zip(b).filter(|(x, y)| x != y).count()
}

impl Environment for BitFlip {
    /// Random start and goal, never equal.
    fn reset(&mut self, seed: u64) -> Observation {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bits: Vec<bool> = (0..self.n).map(|_| rng.random()).collect();
        let mut goal: Vec<bool> = (0..self.n).map(|_| rng.random()).collect();
        if goal == bits {
            let i = rng.random_range(0..self.n);
            goal[i] = !goal[i];
        }
        self.reset_to(BitFlipState { bits, goal }).expect("widths match")
    }

    fn step(&mut self, action: &Action) -> Result<EnvStep, EnvError> {
        if self.done {
            return Err(EnvError::EpisodeOver);
        }
        let i = match action {
            Action::Discrete(i) if *i < self.n => *i,
            other => return Err(EnvError::InvalidAction(format!("{other:?}"))),
        };
        self.state.bits[i] = !self.state.bits[i];
        let terminal = self.state.bits == self.state.goal;
        let reward = if terminal { 0.0 } else { -1.0 };
        self.steps += 1;
        let truncated = !terminal && self.steps >= self.max_steps();
        self.done = terminal || truncated;
        let token = self.ledger.issue(reward);
        Ok(EnvStep {
            observation: self.observation(),
            terminal,
            truncated,
            token,
        })
    }

    fn redeem(&mut self, token: &RewardToken) -> Result<f64, EnvError> {
        self.ledger.redeem(token)
    }

    fn reward_requests(&self) -> u64 {
        self.ledger.requests()
    }

    fn action_space(&self) -> ActionSpace {
        ActionSpace::Discrete(self.n)
    }

    fn state_width(&self) -> usize {
        self.n
    }

    fn goal_width(&self) -> usize {
        self.n
    }

    fn episode_return(&self) -> f64 {
        self.ledger.episode_return()
    }

    /// Optimal return flips each differing bit once.
    fn score_bounds(&self) -> ScoreBounds {
        ScoreBounds {
            highest: -(self.initial_distance.saturating_sub(1) as f64),
            baseline: -(self.max_steps() as f64),
        }
    }

    fn goal_conditioned(&self) -> Option<&dyn GoalConditioned> {
        Some(self)
    }
}

impl GoalConditioned for BitFlip {
    fn achieved_goal(&self, state: &[f64]) -> Vec<f64> {
        state.to_vec()
    }

    fn goal_reward(&self, achieved: &[f64], goal: &[f64]) -> (f64, bool) {
        let hit = achieved == goal;
        (if hit { 0.0 } else { -1.0 }, hit)
    }
}
