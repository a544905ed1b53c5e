//! Goal-conditioned parking with unicycle kinematics.
//!
//! The lot holds two facing rows of 15 spots. The car always starts at the
//! lot centre with a random heading; the goal is a random spot together with
//! the orientation needed to park in it. Each step pays
//! `-(|p - p_goal| / D + lambda * |heading error| / pi)`.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    Action, ActionSpace, EnvError, EnvStep, Environment, GoalConditioned, Observation,
    RewardLedger, RewardToken, ScoreBounds,
};

pub const PARKING_SPOTS: usize = 30;
const SPOTS_PER_ROW: usize = 15;
const SPOT_WIDTH: f64 = 4.0;
const ROW_OFFSET: f64 = 8.0;
const LOT_HALF_WIDTH: f64 = SPOTS_PER_ROW as f64 * SPOT_WIDTH / 2.0;
const LOT_HALF_DEPTH: f64 = 12.0;

const STATE_WIDTH: usize = 6;
const GOAL_WIDTH: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParkingParams {
    pub dt: f64,
    pub max_speed: f64,
    pub max_turn_rate: f64,
    /// Distance normalizer, the lot diagonal.
    pub distance_scale: f64,
    pub heading_weight: f64,
    pub position_tolerance: f64,
    pub heading_tolerance: f64,
    pub max_steps: usize,
}

impl Default for ParkingParams {
    fn default() -> Self {
        ParkingParams {
            dt: 0.1,
            max_speed: 5.0,
            max_turn_rate: 1.0,
            distance_scale: (4.0 * LOT_HALF_WIDTH * LOT_HALF_WIDTH
                + 4.0 * LOT_HALF_DEPTH * LOT_HALF_DEPTH)
                .sqrt(),
            heading_weight: 0.3,
            position_tolerance: 0.5,
            heading_tolerance: 0.15,
            max_steps: 100,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParkingState {
    pub x: f64,
    pub y: f64,
    /// Radians in `(-pi, pi]`.
    pub heading: f64,
    pub velocity: f64,
    pub turn_rate: f64,
    pub goal_x: f64,
    pub goal_y: f64,
    pub goal_heading: f64,
    pub goal_spot: usize,
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w -= 2.0 * PI;
    }
    if w <= -PI {
        w += 2.0 * PI;
    }
    w
}

/// Centre and parking orientation of spot `i`.
pub fn spot_pose(i: usize) -> (f64, f64, f64) {
    let col = i % SPOTS_PER_ROW;
    let x = -LOT_HALF_WIDTH + SPOT_WIDTH * (col as f64 + 0.5);
    if i < SPOTS_PER_ROW {
        (x, ROW_OFFSET, PI / 2.0)
    } else {
        (x, -ROW_OFFSET, -PI / 2.0)
    }
}

#[derive(Debug, Clone)]
pub struct Parking {
    params: ParkingParams,
    state: ParkingState,
    steps: usize,
    done: bool,
    initial_reward: f64,
    initial_distance: f64,
    ledger: RewardLedger,
}

impl Parking {
    pub fn new(params: ParkingParams) -> Self {
        let mut env = Parking {
            params,
            state: ParkingState {
                x: 0.0,
                y: 0.0,
                heading: 0.0,
                velocity: 0.0,
                turn_rate: 0.0,
                goal_x: 0.0,
                goal_y: 0.0,
                goal_heading: 0.0,
                goal_spot: 0,
            },
            steps: 0,
            done: false,
            initial_reward: 0.0,
            initial_distance: 0.0,
            ledger: RewardLedger::default(),
        };
        env.reset(0);
        env
    }

    pub fn params(&self) -> &ParkingParams {
        &self.params
    }

    pub fn state(&self) -> &ParkingState {
        &self.state
    }

    /// Overrides the pose mid-episode, keeping the goal. For fixtures and tests.
    pub fn set_pose(&mut self, x: f64, y: f64, heading: f64) {
        self.state.x = x;
        self.state.y = y;
        self.state.heading = wrap_angle(heading);
    }

    /// `-(distance / D + lambda * |heading error| / pi)`.
    pub fn reward_for(&self, x: f64, y: f64, heading: f64, gx: f64, gy: f64, gh: f64) -> f64 {
        let dist = ((x - gx).powi(2) + (y - gy).powi(2)).sqrt();
        let dh = wrap_angle(heading - gh).abs();
        -(dist / self.params.distance_scale + self.params.heading_weight * dh / PI)
    }

    fn reached(&self, x: f64, y: f64, heading: f64, gx: f64, gy: f64, gh: f64) -> bool {
        let dist = ((x - gx).powi(2) + (y - gy).powi(2)).sqrt();
        dist < self.params.position_tolerance
            && wrap_angle(heading - gh).abs() < self.params.heading_tolerance
    }

    fn observation(&self) -> Observation {
        let s = &self.state;
        Observation {
            state: vec![s.x, s.y, s.velocity, s.heading.cos(), s.heading.sin(), s.turn_rate],
            goal: Some(vec![s.goal_x, s.goal_y, s.goal_heading.cos(), s.goal_heading.sin()]),
        }
    }
}

impl Environment for Parking {
    fn reset(&mut self, seed: u64) -> Observation {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spot = rng.random_range(0..PARKING_SPOTS);
        let heading = wrap_angle(rng.random_range(-PI..PI));
        let (gx, gy, gh) = spot_pose(spot);
        self.state = ParkingState {
            x: 0.0,
            y: 0.0,
            heading,
            velocity: 0.0,
            turn_rate: 0.0,
            goal_x: gx,
            goal_y: gy,
            goal_heading: gh,
            goal_spot: spot,
        };
        self.steps = 0;
        self.done = false;
        self.initial_reward = self.reward_for(0.0, 0.0, heading, gx, gy, gh);
        self.initial_distance = (gx * gx + gy * gy).sqrt();
        self.ledger.new_episode();
        self.observation()
    }

    fn step(&mut self, action: &Action) -> Result<EnvStep, EnvError> {
        if self.done {
            return Err(EnvError::EpisodeOver);
        }
        let (speed_cmd, steer_cmd) = match action {
            Action::Continuous(v) if v.len() == 2 && v.iter().all(|x| x.is_finite()) => {
                (v[0].clamp(-1.0, 1.0), v[1].clamp(-1.0, 1.0))
            }
            other => return Err(EnvError::InvalidAction(format!("{other:?}"))),
        };
        let p = self.params;
        let s = &mut self.state;
        s.velocity = speed_cmd * p.max_speed;
        s.turn_rate = steer_cmd * p.max_turn_rate;
        s.x += s.velocity * s.heading.cos() * p.dt;
        s.y += s.velocity * s.heading.sin() * p.dt;
        s.heading = wrap_angle(s.heading + s.turn_rate * p.dt);
        let s = self.state;
        let reward = self.reward_for(s.x, s.y, s.heading, s.goal_x, s.goal_y, s.goal_heading);
        let terminal = self.reached(s.x, s.y, s.heading, s.goal_x, s.goal_y, s.goal_heading);
        self.steps += 1;
        let truncated = !terminal && self.steps >= p.max_steps;
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
        ActionSpace::Continuous(2)
    }

    fn state_width(&self) -> usize {
        STATE_WIDTH
    }

    fn goal_width(&self) -> usize {
        GOAL_WIDTH
    }

    fn episode_return(&self) -> f64 {
        self.ledger.episode_return()
    }

    /// `highest` drives straight at full speed ignoring the heading term, an
    /// upper bound on any achievable return; `baseline` stands still for the
    /// whole episode.
    fn score_bounds(&self) -> ScoreBounds {
        let stride = self.params.max_speed * self.params.dt;
        let mut d = self.initial_distance;
        let mut highest = 0.0;
        for _ in 0..self.params.max_steps {
            d = (d - stride).max(0.0);
            if d < self.params.position_tolerance {
                break;
            }
            highest -= d / self.params.distance_scale;
        }
        ScoreBounds {
            highest,
            baseline: self.initial_reward * self.params.max_steps as f64,
        }
    }

    fn goal_conditioned(&self) -> Option<&dyn GoalConditioned> {
        Some(self)
    }
}

impl GoalConditioned for Parking {
    fn achieved_goal(&self, state: &[f64]) -> Vec<f64> {
        vec![state[0], state[1], state[3], state[4]]
    }

    fn goal_reward(&self, achieved: &[f64], goal: &[f64]) -> (f64, bool) {
        let h = achieved[3].atan2(achieved[2]);
        let gh = goal[3].atan2(goal[2]);
        (
            self.reward_for(achieved[0], achieved[1], h, goal[0], goal[1], gh),
            self.reached(achieved[0], achieved[1], h, goal[0], goal[1], gh),
        )
    }
}
