//! Twin Gaussian reward models.
//!
//! The learning model is fit every step to rewarded transitions by Gaussian
//! negative log-likelihood. The target model is a hard copy refreshed at
//! episode end; it supplies the reward entropy used for gating and the
//! rewards imputed for transitions whose reward was never requested.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::agents::AgentError;
use crate::buffers::Transition;
use crate::envs::{Action, ActionSpace};
use crate::nn::{gaussian_nll_loss, Activation, GaussianHead, Gradients, Mlp, NnError};

/// Reward models are half as wide as the agent networks.
pub const DEFAULT_REWARD_HIDDEN: [usize; 2] = [32, 32];

/// How a missing reward is filled in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Imputation {
    /// Predicted mean.
    Mean,
    /// A draw from the predicted Gaussian.
    Sample,
}

#[derive(Debug, Clone)]
pub struct RewardModelPair {
    learning: Mlp,
    target: Mlp,
    action_space: ActionSpace,
    input_width: usize,
}

impl RewardModelPair {
    /// `input_width` is the width of the agent input (state plus goal).
    pub fn new<R: Rng + ?Sized>(
        input_width: usize,
        action_space: ActionSpace,
        hidden: &[usize],
        rng: &mut R,
    ) -> Self {
        let mut sizes = vec![input_width + action_space.encoded_width()];
        sizes.extend_from_slice(hidden);
        sizes.push(2);
        let learning = Mlp::new(&sizes, Activation::Relu, Activation::Identity, rng);
        RewardModelPair {
            target: learning.clone(),
            learning,
            action_space,
            input_width,
        }
    }

    pub fn learning(&self) -> &Mlp {
        &self.learning
    }

    pub fn learning_mut(&mut self) -> &mut Mlp {
        &mut self.learning
    }

    pub fn target(&self) -> &Mlp {
        &self.target
    }

    fn encode(&self, input: &[f64], action: &Action) -> Result<Vec<f64>, NnError> {
        if input.len() != self.input_width {
            return Err(NnError::DimensionMismatch {
                expected: self.input_width,
                got: input.len(),
            });
        }
        let mut x = Vec::with_capacity(self.learning.input_width());
        x.extend_from_slice(input);
        match (self.action_space, action) {
            (ActionSpace::Discrete(n), Action::Discrete(a)) if *a < n => {
                x.extend(self.action_space.encode(action))
            }
            (ActionSpace::Continuous(n), Action::Continuous(v)) if v.len() == n => {
                x.extend_from_slice(v)
            }
            _ => {
                return Err(NnError::DimensionMismatch {
                    expected: self.action_space.encoded_width(),
                    got: match action {
                        Action::Discrete(a) => *a,
                        Action::Continuous(v) => v.len(),
                    },
                })
            }
        }
        Ok(x)
    }

    /// Target model's prediction for `(input, action)`.
    pub fn predict(&self, input: &[f64], action: &Action) -> Result<GaussianHead, NnError> {
        GaussianHead::from_raw(&self.target.forward(&self.encode(input, action)?)?)
    }

    pub fn predict_learning(&self, input: &[f64], action: &Action) -> Result<GaussianHead, NnError> {
        GaussianHead::from_raw(&self.learning.forward(&self.encode(input, action)?)?)
    }

    /// Mean Gaussian NLL of the batch rewards under the learning model.
    pub fn nll_loss_and_gradients(
        &self,
        batch: &[Transition],
    ) -> Result<(f64, Gradients), AgentError> {
        if batch.is_empty() {
            return Err(AgentError::EmptyBatch);
        }
        let n = batch.len() as f64;
        let mut grads = Gradients::zeros_like(&self.learning);
        let mut loss = 0.0;
        for (i, t) in batch.iter().enumerate() {
            let reward = t.reward.ok_or(AgentError::MissingReward(i))?;
            let trace = self.learning.forward_trace(&self.encode(&t.input(), &t.action)?)?;
            let head = GaussianHead::from_raw(trace.output())?;
            let nll = gaussian_nll_loss(&head, &[reward])?;
            loss += nll.loss;
            let upstream = GaussianHead::raw_gradient(
                trace.output(),
                &[nll.d_mean[0] / n],
                &[nll.d_stddev[0] / n],
            );
            self.learning.backward_into(&trace, &upstream, &mut grads)?;
        }
        Ok((loss / n, grads))
    }

    /// One Adamax step on the learning model; returns the pre-step loss.
    pub fn train(&mut self, batch: &[Transition], learning_rate: f64) -> Result<f64, AgentError> {
        let (loss, grads) = self.nll_loss_and_gradients(batch)?;
        self.learning.adamax_step(&grads, learning_rate)?;
        Ok(loss)
    }

    /// Copies the learning model's parameters into the target.
    pub fn sync_target(&mut self) {
        self.target
            .copy_params_from(&self.learning)
            .expect("twin models share a shape");
    }

    /// Fills every missing reward from the target model. Returns how many
    /// rewards were filled in.
    pub fn impute_batch<R: Rng + ?Sized>(
        &self,
        batch: &mut [Transition],
        mode: Imputation,
        rng: &mut R,
    ) -> Result<usize, NnError> {
        let mut filled = 0;
        for t in batch.iter_mut().filter(|t| t.reward.is_none()) {
            let head = self.predict(&t.input(), &t.action)?;
            t.reward = Some(match mode {
                Imputation::Mean => head.mean[0],
                Imputation::Sample => {
                    head.mean[0] + head.stddev[0] * rng.sample::<f64, _>(StandardNormal)
                }
            });
            filled += 1;
        }
        Ok(filled)
    }
}
