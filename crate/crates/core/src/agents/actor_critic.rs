use rand::Rng;
use rand_distr::StandardNormal;

use super::{rewards, AgentError};
use crate::buffers::Transition;
use crate::envs::Action;
use crate::nn::{gaussian_nll_loss, Activation, GaussianHead, Gradients, Mlp, Result as NnResult};

/// Gaussian policy plus a state-value critic and its target copy.
///
/// The actor emits `[mean..., pre_std...]`; see [`GaussianHead::from_raw`].
#[derive(Debug, Clone)]
pub struct ActorCriticAgent {
    actor: Mlp,
    critic: Mlp,
    target_critic: Mlp,
    action_dims: usize,
}

impl ActorCriticAgent {
    pub fn new<R: Rng + ?Sized>(
        input_width: usize,
        action_dims: usize,
        hidden: &[usize],
        rng: &mut R,
    ) -> Self {
        let mut actor_sizes = vec![input_width];
        actor_sizes.extend_from_slice(hidden);
        let mut critic_sizes = actor_sizes.clone();
        actor_sizes.push(2 * action_dims);
        critic_sizes.push(1);
        let actor = Mlp::new(&actor_sizes, Activation::Relu, Activation::Identity, rng);
        let critic = Mlp::new(&critic_sizes, Activation::Relu, Activation::Identity, rng);
        ActorCriticAgent {
            target_critic: critic.clone(),
            actor,
            critic,
            action_dims,
        }
    }

    pub fn actor(&self) -> &Mlp {
        &self.actor
    }

    pub fn actor_mut(&mut self) -> &mut Mlp {
        &mut self.actor
    }

    pub fn critic(&self) -> &Mlp {
        &self.critic
    }

    pub fn critic_mut(&mut self) -> &mut Mlp {
        &mut self.critic
    }

    pub fn target_critic(&self) -> &Mlp {
        &self.target_critic
    }

    pub fn action_dims(&self) -> usize {
        self.action_dims
    }

    pub fn policy(&self, input: &[f64]) -> NnResult<GaussianHead> {
        GaussianHead::from_raw(&self.actor.forward(input)?)
    }

    pub fn value(&self, input: &[f64]) -> NnResult<f64> {
        Ok(self.critic.forward(input)?[0])
    }

    /// Draws from `head`, clips to `[-1, 1]` and returns the natural-log
    /// density of the unclipped sample.
    pub fn sample_from<R: Rng + ?Sized>(&self, head: &GaussianHead, rng: &mut R) -> (Vec<f64>, f64) {
        let raw: Vec<f64> = head
            .mean
            .iter()
            .zip(&head.stddev)
            .map(|(m, s)| m + s * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let log_density = head.log_prob(&raw);
        (raw.iter().map(|x| x.clamp(-1.0, 1.0)).collect(), log_density)
    }

    pub fn select_action<R: Rng + ?Sized>(
        &self,
        input: &[f64],
        rng: &mut R,
    ) -> NnResult<(Vec<f64>, f64)> {
        let head = self.policy(input)?;
        Ok(self.sample_from(&head, rng))
    }

    fn continuous<'a>(&self, action: &'a Action) -> Result<&'a [f64], AgentError> {
        match action {
            Action::Continuous(v) if v.len() == self.action_dims => Ok(v),
            other => Err(AgentError::BadAction(format!("{other:?}"))),
        }
    }

    /// Advantages `r + discount * V_target(s') * (1 - terminal) - V(s)` and
    /// the matching critic targets.
    pub fn advantages(
        &self,
        batch: &[Transition],
        discount: f64,
    ) -> Result<(Vec<f64>, Vec<f64>), AgentError> {
        let rewards = rewards(batch)?;
        let mut adv = Vec::with_capacity(batch.len());
        let mut targets = Vec::with_capacity(batch.len());
        for (t, r) in batch.iter().zip(rewards) {
            let bootstrap = if t.terminal {
                0.0
            } else {
                self.target_critic.forward(&t.next_input())?[0]
            };
            let y = r + discount * bootstrap;
            targets.push(y);
            adv.push(y - self.value(&t.input())?);
        }
        Ok((adv, targets))
    }

    /// Mean of `-log pi(a|s) * advantage`, advantages held constant.
    pub fn actor_loss_and_gradients(
        &self,
        batch: &[Transition],
        advantages: &[f64],
    ) -> Result<(f64, Gradients), AgentError> {
        let n = batch.len() as f64;
        let mut grads = Gradients::zeros_like(&self.actor);
        let mut loss = 0.0;
        for (t, &adv) in batch.iter().zip(advantages) {
            let action = self.continuous(&t.action)?;
            let trace = self.actor.forward_trace(&t.input())?;
            let head = GaussianHead::from_raw(trace.output())?;
            // -log pi(a|s) is the Gaussian negative log-likelihood of a.
            let nll = gaussian_nll_loss(&head, action)?;
            loss += adv * nll.loss;
            if adv != 0.0 {
                let scale = adv / n;
                let d_mean: Vec<f64> = nll.d_mean.iter().map(|g| g * scale).collect();
                let d_std: Vec<f64> = nll.d_stddev.iter().map(|g| g * scale).collect();
                let upstream = GaussianHead::raw_gradient(trace.output(), &d_mean, &d_std);
                self.actor.backward_into(&trace, &upstream, &mut grads)?;
            }
        }
        Ok((loss / n, grads))
    }

    /// Mean squared error between `V(s)` and the given targets.
    pub fn critic_loss_and_gradients(
        &self,
        batch: &[Transition],
        targets: &[f64],
    ) -> Result<(f64, Gradients), AgentError> {
        let n = batch.len() as f64;
        let mut grads = Gradients::zeros_like(&self.critic);
        let mut loss = 0.0;
        for (t, &y) in batch.iter().zip(targets) {
            let trace = self.critic.forward_trace(&t.input())?;
            let err = trace.output()[0] - y;
            loss += err * err;
            self.critic.backward_into(&trace, &[2.0 * err / n], &mut grads)?;
        }
        Ok((loss / n, grads))
    }

    /// One Adamax step each for critic and actor. Returns the pre-step
    /// `(actor loss, critic loss)`.
    pub fn train_step(
        &mut self,
        batch: &[Transition],
        discount: f64,
        learning_rate: f64,
    ) -> Result<(f64, f64), AgentError> {
        let (adv, targets) = self.advantages(batch, discount)?;
        let (critic_loss, critic_grads) = self.critic_loss_and_gradients(batch, &targets)?;
        let (actor_loss, actor_grads) = self.actor_loss_and_gradients(batch, &adv)?;
        self.critic.adamax_step(&critic_grads, learning_rate)?;
        self.actor.adamax_step(&actor_grads, learning_rate)?;
        Ok((actor_loss, critic_loss))
    }

    pub fn sync_target(&mut self, tau: f64) -> Result<(), AgentError> {
        Ok(self.target_critic.blend_from(&self.critic, tau)?)
    }
}
