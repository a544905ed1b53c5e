use rand::Rng;

use super::{rewards, AgentError};
use crate::buffers::Transition;
use crate::envs::Action;
use crate::nn::{Activation, Gradients, Mlp, Result as NnResult};

pub const EPSILON_START: f64 = 1.0;
pub const EPSILON_DECAY: f64 = 0.995;
pub const EPSILON_MIN: f64 = 0.01;

#[derive(Debug, Clone)]
pub struct DqnAgent {
    online: Mlp,
    target: Mlp,
    actions: usize,
    epsilon: f64,
    epsilon_decay: f64,
    epsilon_min: f64,
}

impl DqnAgent {
    pub fn new<R: Rng + ?Sized>(
        input_width: usize,
        actions: usize,
        hidden: &[usize],
        rng: &mut R,
    ) -> Self {
        let mut sizes = vec![input_width];
        sizes.extend_from_slice(hidden);
        sizes.push(actions);
        let online = Mlp::new(&sizes, Activation::Relu, Activation::Identity, rng);
        DqnAgent {
            target: online.clone(),
            online,
            actions,
            epsilon: EPSILON_START,
            epsilon_decay: EPSILON_DECAY,
            epsilon_min: EPSILON_MIN,
        }
    }

    pub fn with_exploration(mut self, start: f64, decay: f64, min: f64) -> Self {
        self.epsilon_min = min.clamp(0.0, 1.0);
        self.epsilon = start.clamp(self.epsilon_min, 1.0);
        self.epsilon_decay = decay;
        self
    }

    pub fn online(&self) -> &Mlp {
        &self.online
    }

    pub fn online_mut(&mut self) -> &mut Mlp {
        &mut self.online
    }

    pub fn target(&self) -> &Mlp {
        &self.target
    }

    pub fn target_mut(&mut self) -> &mut Mlp {
        &mut self.target
    }

    pub fn actions(&self) -> usize {
        self.actions
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// Sets epsilon, clamped to `[epsilon_min, 1]`.
    pub fn set_epsilon(&mut self, epsilon: f64) {
        self.epsilon = epsilon.clamp(self.epsilon_min, 1.0);
    }

    pub fn q_values(&self, input: &[f64]) -> NnResult<Vec<f64>> {
        self.online.forward(input)
    }

    /// Epsilon-greedy over precomputed Q-values; ties go to the lowest index.
    pub fn select_from_q<R: Rng + ?Sized>(&self, q: &[f64], rng: &mut R) -> usize {
        if self.epsilon > 0.0 && rng.random::<f64>() < self.epsilon {
            rng.random_range(0..self.actions)
        } else {
            argmax(q)
        }
    }

    pub fn select_action<R: Rng + ?Sized>(&self, input: &[f64], rng: &mut R) -> NnResult<usize> {
        let q = self.q_values(input)?;
        Ok(self.select_from_q(&q, rng))
    }

    /// Mean squared TD error over the batch and its gradient with respect to
    /// the learned network. Targets bootstrap from the target network and
    /// stop at terminal transitions.
    pub fn td_loss_and_gradients(
        &self,
        batch: &[Transition],
        discount: f64,
    ) -> Result<(f64, Gradients), AgentError> {
        let rewards = rewards(batch)?;
        let n = batch.len() as f64;
        let mut grads = Gradients::zeros_like(&self.online);
        let mut loss = 0.0;
        for (t, r) in batch.iter().zip(rewards) {
            let a = match t.action {
                Action::Discrete(a) if a < self.actions => a,
                ref other => return Err(AgentError::BadAction(format!("{other:?}"))),
            };
            let target = if t.terminal {
                r
            } else {
                let next_q = self.target.forward(&t.next_input())?;
                r + discount * next_q.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
            };
            let trace = self.online.forward_trace(&t.input())?;
            let err = trace.output()[a] - target;
            loss += err * err;
            let mut upstream = vec![0.0; self.actions];
            upstream[a] = 2.0 * err / n;
            self.online.backward_into(&trace, &upstream, &mut grads)?;
        }
        Ok((loss / n, grads))
    }

    /// One Adamax step on the TD loss; returns the loss before the step.
    pub fn train_step(
        &mut self,
        batch: &[Transition],
        discount: f64,
        learning_rate: f64,
    ) -> Result<f64, AgentError> {
        let (loss, grads) = self.td_loss_and_gradients(batch, discount)?;
        self.online.adamax_step(&grads, learning_rate)?;
        Ok(loss)
    }

    pub fn sync_target(&mut self, tau: f64) -> Result<(), AgentError> {
        Ok(self.target.blend_from(&self.online, tau)?)
    }

    pub fn decay_epsilon(&mut self) {
        self.epsilon = (self.epsilon * self.epsilon_decay).max(self.epsilon_min);
    }
}

pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn agent(seed: u64) -> DqnAgent {
        DqnAgent::new(3, 3, &[8, 8], &mut ChaCha8Rng::seed_from_u64(seed))
    }

    fn transition(s: [f64; 3], a: usize, r: f64, terminal: bool, s2: [f64; 3]) -> Transition {
        Transition {
            state: s.to_vec(),
            action: Action::Discrete(a),
            reward: Some(r),
            terminal,
            next_state: s2.to_vec(),
            goal: None,
        }
    }

    #[test]
    fn greedy_and_ties() {
        let mut a = agent(0);
        a.set_epsilon(0.0);
        assert_eq!(a.epsilon(), EPSILON_MIN);
        let mut a = a.with_exploration(0.0, 0.995, 0.0);
        a.set_epsilon(0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(a.select_from_q(&[1.0, 5.0, 2.0], &mut rng), 1);
        assert_eq!(a.select_from_q(&[5.0, 5.0], &mut rng), 0);
    }

    #[test]
    fn full_exploration_is_uniform() {
        let a = agent(0);
        assert_eq!(a.epsilon(), 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut counts = [0usize; 3];
        let draws = 100_000;
        for _ in 0..draws {
            counts[a.select_from_q(&[0.0, 9.0, 1.0], &mut rng)] += 1;
        }
        let p = 1.0 / 3.0;
        let sd = (draws as f64 * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!((c as f64 - draws as f64 * p).abs() < 3.0 * sd, "{counts:?}");
        }
    }

    #[test]
    fn epsilon_schedule() {
        let mut a = agent(0);
        a.decay_epsilon();
        assert!((a.epsilon() - 0.995).abs() < 1e-15);
        for _ in 0..2000 {
            let before = a.epsilon();
            a.decay_epsilon();
            assert!(a.epsilon() <= before && a.epsilon() >= EPSILON_MIN);
        }
        assert_eq!(a.epsilon(), EPSILON_MIN);
        a.decay_epsilon();
        assert_eq!(a.epsilon(), EPSILON_MIN);
    }

    #[test]
    fn terminal_target_is_reward() {
        let a = agent(3);
        let t = transition([0.1, 0.2, 0.3], 2, 7.0, true, [9.0, 9.0, 9.0]);
        let (loss, _) = a.td_loss_and_gradients(&[t.clone()], 0.99).unwrap();
        let q = a.q_values(&t.state).unwrap()[2];
        assert!((loss - (q - 7.0).powi(2)).abs() < 1e-12);
    }

    #[test]
    fn hand_computed_two_state_target() {
        // Two states, one-hot encoded; target network set so that
        // max_a' Q(s1, a') is known exactly.
        let mut a = DqnAgent::new(3, 3, &[4], &mut ChaCha8Rng::seed_from_u64(0));
        let s0 = [1.0, 0.0, 0.0];
        let s1 = [0.0, 1.0, 0.0];
        let q_next = a.target().forward(&s1).unwrap();
        let max_next = q_next.iter().cloned().fold(f64::MIN, f64::max);
        let q0 = a.q_values(&s0).unwrap();
        let batch = [
            transition(s0, 1, -1.0, false, s1),
            transition(s1, 0, 10.0, true, s0),
        ];
        let q1 = a.q_values(&s1).unwrap();
        let e0 = -1.0 + 0.99 * max_next - q0[1];
        let e1 = 10.0 - q1[0];
        let expected = (e0 * e0 + e1 * e1) / 2.0;
        let loss = a.train_step(&batch, 0.99, 0.005).unwrap();
        assert!((loss - expected).abs() < 1e-10);
        let _ = a.online_mut();
    }

    #[test]
    fn train_step_leaves_target_alone() {
        let mut a = agent(4);
        let before = a.target().params().to_vec();
        let batch = vec![transition([0.5, -0.5, 1.0], 0, 1.0, false, [0.0, 0.3, 0.2]); 4];
        a.train_step(&batch, 0.99, 0.005).unwrap();
        assert_eq!(a.target().params(), &before[..]);
        assert_ne!(a.online().params(), &before[..]);
    }

    #[test]
    fn missing_reward_rejected() {
        let mut a = agent(5);
        let mut t = transition([0.0; 3], 0, 0.0, false, [0.0; 3]);
        t.reward = None;
        assert_eq!(a.train_step(&[t], 0.99, 0.005), Err(AgentError::MissingReward(0)));
        assert_eq!(a.train_step(&[], 0.99, 0.005), Err(AgentError::EmptyBatch));
    }

    #[test]
    fn sync_target_blends() {
        let mut a = agent(6);
        let batch = vec![transition([0.5, -0.5, 1.0], 0, 1.0, false, [0.0, 0.3, 0.2]); 4];
        for _ in 0..3 {
            a.train_step(&batch, 0.99, 0.05).unwrap();
        }
        let t0 = a.target().params().to_vec();
        let o = a.online().params().to_vec();
        a.sync_target(1.0).unwrap();
        assert_eq!(a.target().params(), &t0[..]);
        a.sync_target(0.99).unwrap();
        a.sync_target(0.99).unwrap();
        for i in 0..t0.len() {
            // two blends: 0.99^2 t0 + (1 - 0.99^2) o
            let want = 0.9801 * t0[i] + 0.0199 * o[i];
            assert!((a.target().params()[i] - want).abs() < 1e-12);
        }
        a.sync_target(0.0).unwrap();
        assert_eq!(a.target().params(), a.online().params());
    }
}
