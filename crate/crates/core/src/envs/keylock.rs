//! Grid world with keys, locks, pits and obstacles.
//!
//! Picking up a key pays 500, opening a lock (with a spare key in hand) pays
//! 1000, falling into a pit pays -400 and ends the episode, every other move
//! costs 10. Moving into an obstacle or off the grid leaves the agent in
//! place. Episodes end when every key and lock has been collected, on a pit,
//! or after 100 steps.

use std::collections::{HashSet, VecDeque};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    Action, ActionSpace, EnvError, EnvStep, Environment, Observation, RewardLedger, RewardToken,
    ScoreBounds,
};

pub const KEYLOCK_MAX_STEPS: usize = 100;
pub const KEYLOCK_FEATURES: usize = 26;

const KEY_REWARD: f64 = 500.0;
const LOCK_REWARD: f64 = 1000.0;
const PIT_REWARD: f64 = -400.0;
const STEP_REWARD: f64 = -10.0;

/// North, south, east, west as (row, col) offsets.
const DIRECTIONS: [(i32, i32); 4] = [(-1, 0), (1, 0), (0, 1), (0, -1)];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Cell {
    Empty,
    Obstacle,
    Pit,
    Key,
    Lock,
}

/// Static description of a grid: cells plus the agent's start.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeyLockLayout {
    pub rows: usize,
    pub cols: usize,
    pub cells: Vec<Cell>,
    pub start: (usize, usize),
}

impl KeyLockLayout {
    pub fn cell(&self, r: usize, c: usize) -> Cell {
        self.cells[r * self.cols + c]
    }

    pub fn count(&self, kind: Cell) -> usize {
        self.cells.iter().filter(|c| **c == kind).count()
    }

    /// Parses the `.#PKLA` text format, one row per line.
    pub fn parse(text: &str) -> Result<Self, EnvError> {
        let lines: Vec<&str> = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .collect();
        let rows = lines.len();
        if rows == 0 {
            return Err(EnvError::Layout("empty grid".into()));
        }
        let cols = lines[0].chars().count();
        let mut cells = Vec::with_capacity(rows * cols);
        let mut start = None;
        for (r, line) in lines.iter().enumerate() {
            if line.chars().count() != cols {
                return Err(EnvError::Layout(format!("row {r} has a different width")));
            }
            for (c, ch) in line.chars().enumerate() {
                cells.push(match ch {
                    '.' => Cell::Empty,
                    '#' => Cell::Obstacle,
                    'P' => Cell::Pit,
                    'K' => Cell::Key,
                    'L' => Cell::Lock,
                    'A' => {
                        if start.replace((r, c)).is_some() {
                            return Err(EnvError::Layout("more than one agent".into()));
                        }
                        Cell::Empty
                    }
                    other => {
                        return Err(EnvError::Layout(format!("unknown cell character {other:?}")))
                    }
                });
            }
        }
        let start = start.ok_or_else(|| EnvError::Layout("no agent".into()))?;
        Ok(KeyLockLayout {
            rows,
            cols,
            cells,
            start,
        })
    }

    pub fn render(&self) -> String {
        let mut out = String::with_capacity(self.rows * (self.cols + 1));
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.push(if (r, c) == self.start {
                    'A'
                } else {
                    match self.cell(r, c) {
                        Cell::Empty => '.',
                        Cell::Obstacle => '#',
                        Cell::Pit => 'P',
                        Cell::Key => 'K',
                        Cell::Lock => 'L',
                    }
                });
            }
            out.push('\n');
        }
        out
    }

    /// The 8x8, one key, one lock fixture used for desk-scale experiments.
    pub fn small_fixture() -> Self {
        Self::parse(
            "........\n\
             .#...P..\n\
             .#......\n\
             .#..K...\n\
             A...##..\n\
             ....#...\n\
             .P......\n\
             ......L.\n",
        )
        .expect("fixture is well formed")
    }

    /// Random `rows x cols` layout, resampled until every key and lock can be
    /// collected within the step limit.
    pub fn generate(
        rows: usize,
        cols: usize,
        keys: usize,
        locks: usize,
        pits: usize,
        obstacles: usize,
        seed: u64,
    ) -> Result<Self, EnvError> {
        let total = rows * cols;
        if keys + locks + pits + obstacles + 1 > total {
            return Err(EnvError::Layout("too many objects for the grid".into()));
        }
        if locks > keys {
            return Err(EnvError::Layout("more locks than keys".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..10_000 {
            let mut idx: Vec<usize> = (0..total).collect();
            idx.shuffle(&mut rng);
            let mut cells = vec![Cell::Empty; total];
            let mut it = idx.into_iter();
            for (kind, n) in [
                (Cell::Key, keys),
                (Cell::Lock, locks),
                (Cell::Pit, pits),
                (Cell::Obstacle, obstacles),
            ] {
                for i in it.by_ref().take(n) {
                    cells[i] = kind;
                }
            }
            let s = it.next().unwrap();
            let layout = KeyLockLayout {
                rows,
                cols,
                cells,
                start: (s / cols, s % cols),
            };
            if layout.shortest_solution().is_some_and(|n| n <= KEYLOCK_MAX_STEPS) {
                return Ok(layout);
            }
            let _ = rng.random::<u32>();
        }
        Err(EnvError::Layout("no solvable layout found".into()))
    }

    /// Fewest steps that collect every key and open every lock while
    /// avoiding pits, found by breadth-first search over
    /// (position, collected keys, opened locks).
    pub fn shortest_solution(&self) -> Option<usize> {
        let keys: Vec<usize> = (0..self.cells.len()).filter(|&i| self.cells[i] == Cell::Key).collect();
        let locks: Vec<usize> = (0..self.cells.len()).filter(|&i| self.cells[i] == Cell::Lock).collect();
        if keys.len() + locks.len() > 20 {
            return None;
        }
        let full_keys = (1u32 << keys.len()) - 1;
        let full_locks = (1u32 << locks.len()) - 1;
        let start = (self.start.0 * self.cols + self.start.1, 0u32, 0u32);
        let mut seen = HashSet::new();
        let mut queue = VecDeque::new();
        seen.insert(start);
        queue.push_back((start, 0usize));
        while let Some(((pos, km, lm), d)) = queue.pop_front() {
            if km == full_keys && lm == full_locks {
                return Some(d);
            }
            let (r, c) = ((pos / self.cols) as i32, (pos % self.cols) as i32);
            for (dr, dc) in DIRECTIONS {
                let (nr, nc) = (r + dr, c + dc);
                if nr < 0 || nc < 0 || nr >= self.rows as i32 || nc >= self.cols as i32 {
                    continue;
                }
                let np = nr as usize * self.cols + nc as usize;
                let (mut nk, mut nl) = (km, lm);
                match self.cells[np] {
                    Cell::Obstacle | Cell::Pit => continue,
                    Cell::Key => {
                        let bit = keys.iter().position(|&k| k == np).unwrap();
                        nk |= 1 << bit;
                    }
                    Cell::Lock => {
                        let bit = locks.iter().position(|&k| k == np).unwrap();
                        if nl & (1 << bit) == 0 && nk.count_ones() > nl.count_ones() {
                            nl |= 1 << bit;
                        }
                    }
                    Cell::Empty => {}
                }
                let next = (np, nk, nl);
                if seen.insert(next) {
                    queue.push_back((next, d + 1));
                }
            }
        }
        None
    }

    /// Return of the shortest complete solution: every pickup pays its
    /// reward, every remaining step costs 10.
    pub fn optimal_return(&self) -> Option<f64> {
        let steps = self.shortest_solution()?;
        let keys = self.count(Cell::Key);
        let locks = self.count(Cell::Lock);
        Some(
            keys as f64 * KEY_REWARD + locks as f64 * LOCK_REWARD
                + (steps - keys - locks) as f64 * STEP_REWARD,
        )
    }
}

/// Mutable episode state on top of a layout.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeyLockState {
    pub cells: Vec<Cell>,
    pub agent: (usize, usize),
    pub keys_obtained: usize,
    pub locks_opened: usize,
    pub steps: usize,
    pub done: bool,
}

#[derive(Debug, Clone)]
pub struct KeyLock {
    layout: KeyLockLayout,
    state: KeyLockState,
    total_keys: usize,
    total_locks: usize,
    optimum: f64,
    ledger: RewardLedger,
}

impl KeyLock {
    pub fn new(layout: KeyLockLayout) -> Result<Self, EnvError> {
        let optimum = layout
            .optimal_return()
            .ok_or_else(|| EnvError::Layout("layout cannot be solved".into()))?;
        if layout.cell(layout.start.0, layout.start.1) != Cell::Empty {
            return Err(EnvError::Layout("agent must start on an empty cell".into()));
        }
        let state = Self::initial_state(&layout);
        let mut ledger = RewardLedger::default();
        ledger.new_episode();
        Ok(KeyLock {
            total_keys: layout.count(Cell::Key),
            total_locks: layout.count(Cell::Lock),
            layout,
            state,
            optimum,
            ledger,
        })
    }

    /// Full-size 20x20 grid with 2 keys, 2 locks, 8 pits and 20 obstacles.
    pub fn full(seed: u64) -> Result<Self, EnvError> {
        Self::new(KeyLockLayout::generate(20, 20, 2, 2, 8, 20, seed)?)
    }

    pub fn small() -> Self {
        Self::new(KeyLockLayout::small_fixture()).expect("fixture is solvable")
    }

    fn initial_state(layout: &KeyLockLayout) -> KeyLockState {
        KeyLockState {
            cells: layout.cells.clone(),
            agent: layout.start,
            keys_obtained: 0,
            locks_opened: 0,
            steps: 0,
            done: false,
        }
    }

    pub fn layout(&self) -> &KeyLockLayout {
        &self.layout
    }

    pub fn state(&self) -> &KeyLockState {
        &self.state
    }

    /// Places the agent somewhere else, for fixtures and tests.
    pub fn set_agent(&mut self, row: usize, col: usize) -> Result<(), EnvError> {
        if row >= self.layout.rows || col >= self.layout.cols {
            return Err(EnvError::Layout("position outside grid".into()));
        }
        if self.state.cells[row * self.layout.cols + col] == Cell::Obstacle {
            return Err(EnvError::Layout("agent cannot stand on an obstacle".into()));
        }
        self.state.agent = (row, col);
        Ok(())
    }

    fn cell_at(&self, r: i32, c: i32) -> Option<Cell> {
        if r < 0 || c < 0 || r >= self.layout.rows as i32 || c >= self.layout.cols as i32 {
            None
        } else {
            Some(self.state.cells[r as usize * self.layout.cols + c as usize])
        }
    }

    fn lock_openable(&self) -> bool {
        self.state.keys_obtained > self.state.locks_opened
    }

    fn nearest(&self, kind: Cell, from: (i32, i32)) -> f64 {
        let mut best = f64::INFINITY;
        for (i, cell) in self.state.cells.iter().enumerate() {
            if *cell == kind {
                let dr = (i / self.layout.cols) as f64 - from.0 as f64;
                let dc = (i % self.layout.cols) as f64 - from.1 as f64;
                best = best.min((dr * dr + dc * dc).sqrt());
            }
        }
        if best.is_finite() {
            best
        } else {
            0.0
        }
    }

    /// Feature vector of the current state:
    /// - 4 distances from each neighbouring cell (N, S, E, W) to the nearest remaining key,
    /// - 4 such distances to the nearest unopened lock,
    /// - 4 obstacle bits (off-grid counts as an obstacle),
    /// - 4 bits for a key or unopened lock in the neighbouring cell,
    /// - 8 pit bits, one and two cells away in each direction,
    /// - keys obtained and locks opened.
    pub fn features(&self) -> Vec<f64> {
        let (r, c) = (self.state.agent.0 as i32, self.state.agent.1 as i32);
        let mut f = Vec::with_capacity(KEYLOCK_FEATURES);
        for kind in [Cell::Key, Cell::Lock] {
            for (dr, dc) in DIRECTIONS {
                f.push(self.nearest(kind, (r + dr, c + dc)));
            }
        }
        for (dr, dc) in DIRECTIONS {
            let blocked = matches!(self.cell_at(r + dr, c + dc), None | Some(Cell::Obstacle));
            f.push(blocked as u8 as f64);
        }
        for (dr, dc) in DIRECTIONS {
            let item = matches!(self.cell_at(r + dr, c + dc), Some(Cell::Key | Cell::Lock));
            f.push(item as u8 as f64);
        }
        for (dr, dc) in DIRECTIONS {
            for dist in 1..=2 {
                let pit = self.cell_at(r + dr * dist, c + dc * dist) == Some(Cell::Pit);
                f.push(pit as u8 as f64);
            }
        }
        f.push(self.state.keys_obtained as f64);
        f.push(self.state.locks_opened as f64);
        f
    }

    fn observation(&self) -> Observation {
        Observation {
            state: self.features(),
            goal: None,
        }
    }
}

impl Environment for KeyLock {
    /// The layout is fixed for the lifetime of the environment; `seed` is unused.
    fn reset(&mut self, _seed: u64) -> Observation {
        self.state = Self::initial_state(&self.layout);
        self.ledger.new_episode();
        self.observation()
    }

    fn step(&mut self, action: &Action) -> Result<EnvStep, EnvError> {
        if self.state.done {
            return Err(EnvError::EpisodeOver);
        }
        let dir = match action {
            Action::Discrete(a) if *a < 4 => DIRECTIONS[*a],
            other => return Err(EnvError::InvalidAction(format!("{other:?}"))),
        };
        let (r, c) = (self.state.agent.0 as i32 + dir.0, self.state.agent.1 as i32 + dir.1);
        let mut reward = STEP_REWARD;
        let mut terminal = false;
        match self.cell_at(r, c) {
            None | Some(Cell::Obstacle) => {}
            Some(cell) => {
                self.state.agent = (r as usize, c as usize);
                let idx = r as usize * self.layout.cols + c as usize;
                match cell {
                    Cell::Pit => {
                        reward = PIT_REWARD;
                        terminal = true;
                    }
                    Cell::Key => {
                        reward = KEY_REWARD;
                        self.state.keys_obtained += 1;
                        self.state.cells[idx] = Cell::Empty;
                    }
                    Cell::Lock if self.lock_openable() => {
                        reward = LOCK_REWARD;
                        self.state.locks_opened += 1;
                        self.state.cells[idx] = Cell::Empty;
                    }
                    _ => {}
                }
            }
        }
        if self.state.keys_obtained == self.total_keys && self.state.locks_opened == self.total_locks {
            terminal = true;
        }
        self.state.steps += 1;
        let truncated = !terminal && self.state.steps >= KEYLOCK_MAX_STEPS;
        self.state.done = terminal || truncated;
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
        ActionSpace::Discrete(4)
    }

    fn state_width(&self) -> usize {
        KEYLOCK_FEATURES
    }

    fn episode_return(&self) -> f64 {
        self.ledger.episode_return()
    }

    fn score_bounds(&self) -> ScoreBounds {
        ScoreBounds {
            highest: self.optimum,
            baseline: PIT_REWARD,
        }
    }
}
