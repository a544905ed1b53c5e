//! The training loop with confidence-gated reward requests.
//!
//! Every step the agent picks an action, the confidence of that choice is
//! measured, the environment advances, and the gate decides whether the
//! step's reward token is redeemed. Redeemed rewards feed the reward model;
//! everything goes into the replay buffer, and rewards that were never
//! requested are imputed by the target reward model when sampled.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::agents::{ActorCriticAgent, Agent, AgentError, DqnAgent, TargetUpdate, DEFAULT_HIDDEN};
use crate::buffers::{her_relabel, BufferError, RingBuffer, Transition, DEFAULT_CAPACITY};
use crate::confidence::{
    apply_gate, measure, ActionDistribution, ConfidenceError, ConfidenceReport, ConstantReading,
    EntropyMode, Gate, Regularizer, DEFAULT_THRESHOLD,
};
use crate::envs::{Action, ActionSpace, EnvError, Environment, Observation, ScoreBounds};
use crate::nn::NnError;
use crate::reward_model::{Imputation, RewardModelPair, DEFAULT_REWARD_HIDDEN};

/// Qualifying episodes needed before a run counts as converged.
pub const CONVERGENCE_EPISODES: usize = 5;
/// Qualifying scores lie within this fraction of the best score.
pub const CONVERGENCE_FRACTION: f64 = 0.05;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid trainer config: {0}")]
    Config(String),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Buffer(#[from] BufferError),
    #[error(transparent)]
    Confidence(#[from] ConfidenceError),
    #[error(transparent)]
    Network(#[from] NnError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AgentKind {
    Dqn,
    ActorCritic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainerConfig {
    pub agent: AgentKind,
    pub entropy: EntropyMode,
    pub constant_reading: ConstantReading,
    pub regularizer: Regularizer,
    pub threshold: f64,
    pub epsilon_start: f64,
    pub epsilon_decay: f64,
    pub epsilon_min: f64,
    pub learning_rate: f64,
    pub discount: f64,
    pub target_update: TargetUpdate,
    pub buffer_size: usize,
    pub batch_size: usize,
    pub hidden: Vec<usize>,
    pub reward_hidden: Vec<usize>,
    pub her: bool,
    pub her_k: usize,
    /// Also train the reward model on relabeled transitions.
    pub her_to_feedback: bool,
    pub imputation: Imputation,
    /// Rewards are multiplied by this before they reach the learners.
    /// Episode returns and logs stay in environment units.
    pub reward_scale: f64,
    pub max_episodes: usize,
    pub stop_at_convergence: bool,
    /// Keep one [`StepRecord`] per step.
    pub log_steps: bool,
    /// Keep the operation trace (tests and debugging only).
    pub trace: bool,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            agent: AgentKind::Dqn,
            entropy: EntropyMode::Off,
            constant_reading: ConstantReading::UnitConfidence,
            regularizer: Regularizer::None,
            threshold: DEFAULT_THRESHOLD,
            epsilon_start: crate::agents::EPSILON_START,
            epsilon_decay: crate::agents::EPSILON_DECAY,
            epsilon_min: crate::agents::EPSILON_MIN,
            learning_rate: 0.005,
            discount: 0.99,
            target_update: TargetUpdate::Soft { tau: 0.99 },
            buffer_size: DEFAULT_CAPACITY,
            batch_size: 16,
            hidden: DEFAULT_HIDDEN.to_vec(),
            reward_hidden: DEFAULT_REWARD_HIDDEN.to_vec(),
            her: false,
            her_k: 4,
            her_to_feedback: true,
            imputation: Imputation::Mean,
            reward_scale: 1.0,
            max_episodes: 5000,
            stop_at_convergence: true,
            log_steps: false,
            trace: false,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if self.buffer_size == 0 {
            return bad("buffer_size must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate must be positive");
        }
        if !(0.0..=1.0).contains(&self.discount) {
            return bad("discount must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.target_update.tau()) {
            return bad("tau must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.epsilon_start)
            || !(0.0..=1.0).contains(&self.epsilon_min)
            || !(0.0..=1.0).contains(&self.epsilon_decay)
        {
            return bad("exploration settings must lie in [0, 1]");
        }
        if !self.threshold.is_finite() {
            return bad("threshold must be finite");
        }
        if !(self.reward_scale > 0.0 && self.reward_scale.is_finite()) {
            return bad("reward_scale must be positive");
        }
        if self.her && self.her_k == 0 {
            return bad("her_k must be positive");
        }
        if self.hidden.iter().chain(&self.reward_hidden).any(|&w| w == 0) {
            return bad("hidden layers need at least one unit");
        }
        Ok(())
    }
}

/// One operation of the training loop, recorded when tracing is on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceEvent {
    SelectAction,
    ComputeConfidence,
    EnvStep,
    Gate { request: bool },
    RedeemReward,
    StoreFeedback,
    StoreReplay,
    RewardModelUpdate,
    RewardModelSkipped,
    SampleReplay,
    Impute { filled: usize },
    AgentUpdate,
    AgentUpdateSkipped,
    Relabel { added: usize },
    SyncRewardTarget,
    SyncAgentTarget,
    DecayEpsilon,
}

/// Where the reward attached to a step came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RewardSource {
    Env,
    Model,
}

impl RewardSource {
    pub fn as_str(&self) -> &'static str {
        match self {
            RewardSource::Env => "env",
            RewardSource::Model => "model",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub episode: usize,
    pub step: usize,
    pub action: Action,
    pub requested: bool,
    pub fused_conf: f64,
    pub reg_mult: f64,
    /// Steps since the last reward when the gate was evaluated.
    pub n: u64,
    /// The redeemed reward, or the target model's mean for skipped steps.
    pub reward_or_imputed: f64,
    pub source: RewardSource,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeMetrics {
    pub episode: usize,
    pub episode_return: f64,
    pub steps: usize,
    pub requests: u64,
    pub cum_requests: u64,
    /// Ended in a terminal state rather than by the step limit.
    pub terminal: bool,
    pub bounds: ScoreBounds,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Convergence {
    /// Episode index of the fifth qualifying episode.
    pub episode: usize,
    /// Mean score of the qualifying episodes.
    pub score: f64,
    /// Reward requests made up to and including that episode.
    pub requests: u64,
}

/// Fires after [`CONVERGENCE_EPISODES`] qualifying episodes, which need
/// not be consecutive.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceDetector {
    qualifying: Vec<f64>,
    converged: Option<Convergence>,
}

impl Default for ConvergenceDetector {
    fn default() -> Self {
        Self::new()
    }
}

impl ConvergenceDetector {
    pub fn new() -> Self {
        ConvergenceDetector {
            qualifying: Vec::with_capacity(CONVERGENCE_EPISODES),
            converged: None,
        }
    }

    /// Lowest qualifying score. Positive optima use a relative band; for
    /// non-positive optima the band is a fraction of the range down to the
    /// baseline.
    pub fn threshold(bounds: ScoreBounds) -> f64 {
        if bounds.highest > 0.0 {
            bounds.highest * (1.0 - CONVERGENCE_FRACTION)
        } else {
            bounds.highest - CONVERGENCE_FRACTION * (bounds.highest - bounds.baseline).abs()
        }
    }

    pub fn qualifies(score: f64, bounds: ScoreBounds) -> bool {
        score >= Self::threshold(bounds)
    }

    /// Feeds one episode score. Returns true once converged.
    pub fn observe(&mut self, score: f64, bounds: ScoreBounds, episode: usize, requests: u64) -> bool {
        if self.converged.is_some() {
            return true;
        }
        if Self::qualifies(score, bounds) {
            self.qualifying.push(score);
            if self.qualifying.len() == CONVERGENCE_EPISODES {
                self.converged = Some(Convergence {
                    episode,
                    score: self.qualifying.iter().sum::<f64>() / CONVERGENCE_EPISODES as f64,
                    requests,
                });
            }
        }
        self.converged.is_some()
    }

    pub fn qualifying(&self) -> usize {
        self.qualifying.len()
    }

    pub fn convergence(&self) -> Option<Convergence> {
        self.converged
    }
}

/// Everything a run produced.
#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub episodes: Vec<EpisodeMetrics>,
    pub steps: Vec<StepRecord>,
    pub convergence: Option<Convergence>,
    pub total_requests: u64,
    pub total_steps: u64,
    pub agent_updates: u64,
    pub reward_model_updates: u64,
}

impl RunResult {
    pub fn converged(&self) -> bool {
        self.convergence.is_some()
    }

    /// Converged score, or the best mean over any window of five
    /// consecutive episodes when the run never converged.
    pub fn score(&self) -> f64 {
        if let Some(c) = self.convergence {
            return c.score;
        }
        let returns: Vec<f64> = self.episodes.iter().map(|e| e.episode_return).collect();
        let w = CONVERGENCE_EPISODES.min(returns.len());
        if w == 0 {
            return f64::NAN;
        }
        returns
            .windows(w)
            .map(|win| win.iter().sum::<f64>() / w as f64)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Requests spent until convergence, or in total for runs that hit the
    /// episode cap.
    pub fn rewards_to_converge(&self) -> u64 {
        self.convergence.map_or(self.total_requests, |c| c.requests)
    }

    /// Best fraction of terminal episodes over any `window` consecutive
    /// episodes.
    pub fn best_success_rate(&self, window: usize) -> f64 {
        let hits: Vec<f64> = self
            .episodes
            .iter()
            .map(|e| if e.terminal { 1.0 } else { 0.0 })
            .collect();
        if hits.len() < window || window == 0 {
            return 0.0;
        }
        hits.windows(window)
            .map(|w| w.iter().sum::<f64>() / window as f64)
            .fold(0.0, f64::max)
    }
}

/// Mutable state of one training run.
pub struct RunState {
    config: TrainerConfig,
    agent: Agent,
    rewards: RewardModelPair,
    replay: RingBuffer,
    feedback: RingBuffer,
    env: Box<dyn Environment>,
    gate: Gate,
    rng: ChaCha8Rng,
    env_rng: ChaCha8Rng,
    episode: usize,
    requests: u64,
    total_steps: u64,
    agent_updates: u64,
    reward_model_updates: u64,
    detector: ConvergenceDetector,
    episodes: Vec<EpisodeMetrics>,
    steps: Vec<StepRecord>,
    trace: Vec<TraceEvent>,
    script: Option<std::collections::VecDeque<Action>>,
}

impl RunState {
    pub fn new(config: TrainerConfig, env: Box<dyn Environment>, seed: u64) -> Result<Self, TrainError> {
        config.validate()?;
        if config.her && env.goal_conditioned().is_none() {
            return Err(TrainError::Config(
                "hindsight relabeling needs a goal-conditioned environment".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut env_rng = ChaCha8Rng::seed_from_u64(seed);
        env_rng.set_stream(1);
        let input = env.state_width() + env.goal_width();
        let space = env.action_space();
        let agent = match (config.agent, space) {
            (AgentKind::Dqn, ActionSpace::Discrete(n)) => Agent::Dqn(
                DqnAgent::new(input, n, &config.hidden, &mut rng).with_exploration(
                    config.epsilon_start,
                    config.epsilon_decay,
                    config.epsilon_min,
                ),
            ),
            (AgentKind::ActorCritic, ActionSpace::Continuous(d)) => {
                Agent::ActorCritic(ActorCriticAgent::new(input, d, &config.hidden, &mut rng))
            }
            (kind, space) => {
                return Err(TrainError::Config(format!(
                    "agent {kind:?} cannot act in {space:?}"
                )))
            }
        };
        let rewards = RewardModelPair::new(input, space, &config.reward_hidden, &mut rng);
        Ok(RunState {
            gate: Gate::new(config.threshold, config.regularizer),
            replay: RingBuffer::replay(config.buffer_size)?,
            feedback: RingBuffer::feedback(config.buffer_size)?,
            config,
            agent,
            rewards,
            env,
            rng,
            env_rng,
            episode: 0,
            requests: 0,
            total_steps: 0,
            agent_updates: 0,
            reward_model_updates: 0,
            detector: ConvergenceDetector::new(),
            episodes: Vec::new(),
            steps: Vec::new(),
            trace: Vec::new(),
            script: None,
        })
    }

    /// Replaces the agent's choices with `actions` (in order) until they
    /// run out. Everything else about the step is unchanged.
    pub fn script_actions(&mut self, actions: Vec<Action>) {
        self.script = Some(actions.into());
    }

    pub fn config(&self) -> &TrainerConfig {
        &self.config
    }

    pub fn agent(&self) -> &Agent {
        &self.agent
    }

    pub fn reward_models(&self) -> &RewardModelPair {
        &self.rewards
    }

    pub fn replay(&self) -> &RingBuffer {
        &self.replay
    }

    pub fn feedback(&self) -> &RingBuffer {
        &self.feedback
    }

    pub fn env(&self) -> &dyn Environment {
        self.env.as_ref()
    }

    pub fn requests(&self) -> u64 {
        self.requests
    }

    pub fn agent_updates(&self) -> u64 {
        self.agent_updates
    }

    pub fn reward_model_updates(&self) -> u64 {
        self.reward_model_updates
    }

    pub fn episodes(&self) -> &[EpisodeMetrics] {
        &self.episodes
    }

    pub fn step_log(&self) -> &[StepRecord] {
        &self.steps
    }

    pub fn trace(&self) -> &[TraceEvent] {
        &self.trace
    }

    pub fn detector(&self) -> &ConvergenceDetector {
        &self.detector
    }

    fn note(&mut self, event: TraceEvent) {
        if self.config.trace {
            self.trace.push(event);
        }
    }

    fn gated(&self) -> bool {
        self.config.entropy != EntropyMode::Off
    }

    /// Plays one episode, learning as it goes.
    pub fn run_episode(&mut self) -> Result<EpisodeMetrics, TrainError> {
        let mut obs = self.env.reset(self.env_rng.random());
        let bounds = self.env.score_bounds();
        let requests_before = self.requests;
        let mut history = Vec::new();
        let mut steps = 0;
        let terminal = loop {
            let (transition, done, terminal, next) = self.step(&obs, steps)?;
            steps += 1;
            if self.config.her {
                history.push(transition);
            }
            if done {
                break terminal;
            }
            obs = next;
        };
        self.end_episode(&history)?;
        let metrics = EpisodeMetrics {
            episode: self.episode,
            episode_return: self.env.episode_return(),
            steps,
            requests: self.requests - requests_before,
            cum_requests: self.requests,
            terminal,
            bounds,
        };
        self.detector
            .observe(metrics.episode_return, bounds, self.episode, self.requests);
        self.episodes.push(metrics.clone());
        self.episode += 1;
        Ok(metrics)
    }

    fn step(
        &mut self,
        obs: &Observation,
        index: usize,
    ) -> Result<(Transition, bool, bool, Observation), TrainError> {
        let input = obs.features();
        let mut selection = self.agent.select(&input, &mut self.rng)?;
        if let Some(action) = self.script.as_mut().and_then(|s| s.pop_front()) {
            selection.action = action;
        }
        self.note(TraceEvent::SelectAction);

        let action = selection.action.clone();
        let dist = match (&selection.q_values, &selection.policy) {
            (Some(q), _) => ActionDistribution::QValues(q),
            (None, Some(head)) => ActionDistribution::Gaussian(head),
            (None, None) => unreachable!("agents always report a distribution"),
        };
        let rewards = &self.rewards;
        let mut report: ConfidenceReport = measure(
            self.config.entropy,
            self.config.constant_reading,
            dist,
            || rewards.predict(&input, &action),
            &mut self.rng,
        )?;
        self.note(TraceEvent::ComputeConfidence);

        let outcome = self.env.step(&action)?;
        self.note(TraceEvent::EnvStep);

        apply_gate(self.config.entropy, &mut report, &mut self.gate);
        self.note(TraceEvent::Gate {
            request: report.request,
        });
        let mut transition = Transition {
            state: obs.state.clone(),
            action,
            reward: None,
            terminal: outcome.terminal,
            next_state: outcome.observation.state.clone(),
            goal: obs.goal.clone(),
        };
        let mut logged_reward = None;
        if report.request {
            let reward = self.env.redeem(&outcome.token)?;
            self.requests += 1;
            self.note(TraceEvent::RedeemReward);
            logged_reward = Some(reward);
            transition.reward = Some(reward * self.config.reward_scale);
            if self.gated() {
                self.feedback.push(transition.clone())?;
                self.note(TraceEvent::StoreFeedback);
            }
        }
        debug_assert_eq!(self.requests, self.env.reward_requests());
        self.replay.push(transition.clone())?;
        self.note(TraceEvent::StoreReplay);

        if self.config.log_steps {
            let (value, source) = match logged_reward {
                Some(r) => (r, RewardSource::Env),
                None => (
                    self.rewards.predict(&transition.input(), &transition.action)?.mean[0]
                        / self.config.reward_scale,
                    RewardSource::Model,
                ),
            };
            self.steps.push(StepRecord {
                episode: self.episode,
                step: index,
                action: transition.action.clone(),
                requested: report.request,
                fused_conf: report.fused,
                reg_mult: report.regularizer,
                n: report.steps_since_reward,
                reward_or_imputed: value,
                source,
            });
        }

        if self.gated() {
            if self.feedback.len() >= self.config.batch_size {
                let batch = self
                    .feedback
                    .sample_minibatch(self.config.batch_size, &mut self.rng)?;
                self.rewards.train(&batch, self.config.learning_rate)?;
                self.reward_model_updates += 1;
                self.note(TraceEvent::RewardModelUpdate);
            } else {
                self.note(TraceEvent::RewardModelSkipped);
            }
        }

        if self.replay.len() >= self.config.batch_size {
            let mut batch = self
                .replay
                .sample_minibatch(self.config.batch_size, &mut self.rng)?;
            self.note(TraceEvent::SampleReplay);
            let filled = self
                .rewards
                .impute_batch(&mut batch, self.config.imputation, &mut self.rng)?;
            self.note(TraceEvent::Impute { filled });
            self.agent
                .train_step(&batch, self.config.discount, self.config.learning_rate)?;
            self.agent_updates += 1;
            self.note(TraceEvent::AgentUpdate);
        } else {
            self.note(TraceEvent::AgentUpdateSkipped);
        }
        self.total_steps += 1;

        let done = outcome.done();
        Ok((transition, done, outcome.terminal, outcome.observation))
    }

    fn end_episode(&mut self, history: &[Transition]) -> Result<(), TrainError> {
        if self.config.her {
            let goals = self
                .env
                .goal_conditioned()
                .expect("checked when the run was created");
            let mut relabeled = her_relabel(history, self.config.her_k, goals, &mut self.rng)?;
            for t in &mut relabeled {
                t.reward = t.reward.map(|r| r * self.config.reward_scale);
            }
            let added = relabeled.len();
            for t in relabeled {
                if self.config.her_to_feedback && self.gated() {
                    self.feedback.push(t.clone())?;
                }
                self.replay.push(t)?;
            }
            self.note(TraceEvent::Relabel { added });
        }
        if self.gated() {
            self.rewards.sync_target();
            self.note(TraceEvent::SyncRewardTarget);
        }
        self.agent.sync_target(self.config.target_update)?;
        self.note(TraceEvent::SyncAgentTarget);
        self.agent.decay_epsilon();
        self.note(TraceEvent::DecayEpsilon);
        Ok(())
    }

    /// Runs episodes until convergence (if configured to stop there) or
    /// the episode cap.
    pub fn train(mut self) -> Result<RunResult, TrainError> {
        while self.episode < self.config.max_episodes {
            self.run_episode()?;
            if self.config.stop_at_convergence && self.detector.convergence().is_some() {
                break;
            }
        }
        Ok(self.into_result())
    }

    pub fn into_result(self) -> RunResult {
        RunResult {
            convergence: self.detector.convergence(),
            total_requests: self.requests,
            total_steps: self.total_steps,
            agent_updates: self.agent_updates,
            reward_model_updates: self.reward_model_updates,
            episodes: self.episodes,
            steps: self.steps,
        }
    }
}

/// Builds a run and trains it to completion.
pub fn train(config: TrainerConfig, env: Box<dyn Environment>, seed: u64) -> Result<RunResult, TrainError> {
    RunState::new(config, env, seed)?.train()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{BitFlip, KeyLock, KeyLockLayout};
    use TraceEvent::*;

    fn corridor() -> Box<dyn Environment> {
        Box::new(KeyLock::new(KeyLockLayout::parse("A.KL").unwrap()).unwrap())
    }

    fn east() -> Vec<Action> {
        vec![Action::Discrete(2); 3]
    }

    fn traced(entropy: EntropyMode, regularizer: Regularizer, threshold: f64) -> TrainerConfig {
        TrainerConfig {
            entropy,
            regularizer,
            threshold,
            batch_size: 2,
            trace: true,
            log_steps: true,
            max_episodes: 1,
            ..TrainerConfig::default()
        }
    }

    #[test]
    fn scripted_episode_trace() {
        // Threshold 1: every gate evaluation requests.
        let mut run = RunState::new(
            traced(EntropyMode::ActionReward, Regularizer::hyperbolic(1.0).unwrap(), 1.0),
            corridor(),
            7,
        )
        .unwrap();
        run.script_actions(east());
        let m = run.run_episode().unwrap();
        assert_eq!(m.steps, 3);
        assert!(m.terminal);
        assert_eq!(m.episode_return, -10.0 + 500.0 + 1000.0);
        let step = |store_fb: bool, rm: TraceEvent, agent: &[TraceEvent]| {
            let mut v = vec![SelectAction, ComputeConfidence, EnvStep, TraceEvent::Gate { request: true }, RedeemReward];
            if store_fb {
                v.push(StoreFeedback);
            }
            v.push(StoreReplay);
            v.push(rm);
            v.extend_from_slice(agent);
            v
        };
        let update = [SampleReplay, Impute { filled: 0 }, AgentUpdate];
        let mut expected = step(true, RewardModelSkipped, &[AgentUpdateSkipped]);
        expected.extend(step(true, RewardModelUpdate, &update));
        expected.extend(step(true, RewardModelUpdate, &update));
        expected.extend([SyncRewardTarget, SyncAgentTarget, DecayEpsilon]);
        assert_eq!(run.trace(), &expected[..]);
        assert_eq!(run.agent_updates(), 2);
        assert_eq!(run.reward_model_updates(), 2);
    }

    #[test]
    fn skipped_steps_are_imputed() {
        // Threshold below zero: the gate never requests.
        let mut run =
            RunState::new(traced(EntropyMode::Constant, Regularizer::None, -1.0), corridor(), 3).unwrap();
        run.script_actions(east());
        run.run_episode().unwrap();
        let t = run.trace();
        assert!(!t.contains(&RedeemReward));
        assert!(!t.contains(&StoreFeedback));
        assert!(!t.contains(&RewardModelUpdate));
        assert_eq!(t.iter().filter(|e| **e == RewardModelSkipped).count(), 3);
        assert!(t.contains(&Impute { filled: 2 }));
        assert!(run.feedback().is_empty());
        assert!(run.replay().iter().all(|tr| tr.reward.is_none()));
        assert_eq!(run.requests(), 0);
        assert_eq!(run.env().reward_requests(), 0);
        assert!(run.step_log().iter().all(|s| s.source == RewardSource::Model));
        // The true return is still tracked for evaluation.
        assert_eq!(run.episodes()[0].episode_return, 1490.0);
    }

    #[test]
    fn baseline_requests_everything_and_skips_reward_model() {
        let mut run = RunState::new(traced(EntropyMode::Off, Regularizer::None, 0.25), corridor(), 3).unwrap();
        run.script_actions(east());
        run.run_episode().unwrap();
        assert!(run.replay().iter().all(|tr| tr.reward.is_some()));
        assert!(run.feedback().is_empty());
        let t = run.trace();
        assert!(!t.iter().any(|e| matches!(e, RewardModelUpdate | RewardModelSkipped | SyncRewardTarget | StoreFeedback)));
        assert_eq!(run.requests(), 3);
        assert_eq!(run.env().reward_requests(), 3);
        assert!(run
            .step_log()
            .iter()
            .all(|s| s.requested && s.source == RewardSource::Env));
    }

    #[test]
    fn her_appends_relabeled_transitions() {
        let config = TrainerConfig {
            her: true,
            trace: true,
            max_episodes: 1,
            ..TrainerConfig::default()
        };
        let mut run = RunState::new(config, Box::new(BitFlip::new(4)), 0).unwrap();
        let m = run.run_episode().unwrap();
        let added = 4 * (m.steps - 1);
        assert!(run.trace().contains(&Relabel { added }));
        assert_eq!(run.replay().len(), m.steps + added);
        assert!(RunState::new(
            TrainerConfig {
                her: true,
                ..TrainerConfig::default()
            },
            corridor(),
            0
        )
        .is_err());
    }

    #[test]
    fn agent_must_match_action_space() {
        let config = TrainerConfig {
            agent: AgentKind::ActorCritic,
            ..TrainerConfig::default()
        };
        assert!(matches!(RunState::new(config, corridor(), 0), Err(TrainError::Config(_))));
    }

    #[test]
    fn detector_needs_five_qualifying_episodes() {
        let b = ScoreBounds {
            highest: 100.0,
            baseline: -50.0,
        };
        let mut d = ConvergenceDetector::new();
        for (i, s) in [96.0, 95.0, 99.0, 100.0].into_iter().enumerate() {
            assert!(!d.observe(s, b, i, i as u64));
        }
        assert!(!d.observe(94.9, b, 4, 4));
        assert_eq!(d.qualifying(), 4);
        assert!(d.observe(97.0, b, 5, 50));
        let c = d.convergence().unwrap();
        assert_eq!(c.episode, 5);
        assert_eq!(c.requests, 50);
        assert!((c.score - 97.4).abs() < 1e-12);
        // Later scores do not move the result.
        assert!(d.observe(0.0, b, 6, 60));
        assert_eq!(d.convergence(), Some(c));
    }

    #[test]
    fn negative_scale_threshold_uses_range() {
        let b = ScoreBounds {
            highest: -3.0,
            baseline: -13.0,
        };
        assert!((ConvergenceDetector::threshold(b) - -3.5).abs() < 1e-12);
        assert!(ConvergenceDetector::qualifies(-3.0, b));
        assert!(!ConvergenceDetector::qualifies(-4.0, b));
    }

    #[test]
    fn fixture_threshold_matches_hand_value() {
        let env = KeyLock::small();
        // 9 plain moves plus the key and lock rewards.
        assert_eq!(env.score_bounds().highest, 1410.0);
        assert_eq!(ConvergenceDetector::threshold(env.score_bounds()), 1339.5);
    }

    #[test]
    fn episode_cap_without_convergence() {
        let config = TrainerConfig {
            max_episodes: 3,
            ..TrainerConfig::default()
        };
        let r = train(config, Box::new(KeyLock::small()), 1).unwrap();
        assert_eq!(r.episodes.len(), 3);
        assert!(!r.converged());
        assert_eq!(r.rewards_to_converge(), r.total_requests);
        assert_eq!(r.total_requests, r.total_steps);
        let best = r
            .episodes
            .iter()
            .map(|e| e.episode_return)
            .sum::<f64>()
            / 3.0;
        assert_eq!(r.score(), best);
    }

    #[test]
    fn runs_are_deterministic() {
        let config = TrainerConfig {
            entropy: EntropyMode::ActionReward,
            regularizer: Regularizer::hyperbolic(1.0).unwrap(),
            max_episodes: 4,
            log_steps: true,
            ..TrainerConfig::default()
        };
        let a = train(config.clone(), Box::new(KeyLock::small()), 11).unwrap();
        let b = train(config.clone(), Box::new(KeyLock::small()), 11).unwrap();
        assert_eq!(a, b);
        let c = train(config, Box::new(KeyLock::small()), 12).unwrap();
        assert_ne!(a.steps, c.steps);
    }

    #[test]
    fn same_update_count_in_every_mode() {
        let modes = [
            (EntropyMode::Off, Regularizer::None),
            (EntropyMode::Action, Regularizer::None),
            (EntropyMode::ActionReward, Regularizer::exponential(0.5).unwrap()),
            (EntropyMode::Random, Regularizer::None),
            (EntropyMode::Constant, Regularizer::hyperbolic(1.0).unwrap()),
        ];
        for (entropy, regularizer) in modes {
            let config = TrainerConfig {
                entropy,
                regularizer,
                max_episodes: 2,
                ..TrainerConfig::default()
            };
            let r = train(config.clone(), Box::new(KeyLock::small()), 5).unwrap();
            let warmup = config.batch_size as u64 - 1;
            assert_eq!(r.agent_updates, r.total_steps - warmup, "{entropy:?}");
        }
    }

    #[test]
    fn regularized_runs_never_skip_more_than_three() {
        for reg in [Regularizer::exponential(0.5).unwrap(), Regularizer::hyperbolic(1.0).unwrap()] {
            let config = TrainerConfig {
                entropy: EntropyMode::Constant,
                regularizer: reg,
                max_episodes: 3,
                log_steps: true,
                ..TrainerConfig::default()
            };
            let r = train(config, Box::new(KeyLock::small()), 2).unwrap();
            let mut run = 0;
            for s in &r.steps {
                run = if s.requested { 0 } else { run + 1 };
                assert!(run <= 3);
                assert_eq!(s.requested, s.fused_conf * s.reg_mult <= 0.25);
            }
            assert!(r.total_requests < r.total_steps);
        }
    }
}
