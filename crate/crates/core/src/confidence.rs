//! Entropy-based confidence and the reward-request gate.
//!
//! Action confidence comes from the entropy of the policy (softmax over
//! Q-values, or a Gaussian actor), reward confidence from the differential
//! entropy of the reward model's Gaussian. Entropies are measured in bits and
//! normalized to `[0, 1]`; confidence is one minus the normalized entropy.
//! The two confidences are fused with a harmonic mean, scaled by a
//! regularizer that decays with the number of steps since the last
//! environment reward, and compared against a threshold.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::{softmax, GaussianHead, NnError};

/// Differential entropies are clipped to `[0, ENTROPY_CLIP]` bits before
/// being divided by `ENTROPY_CLIP`.
pub const ENTROPY_CLIP: f64 = 10.0;
pub const DEFAULT_THRESHOLD: f64 = 0.25;
pub const DEFAULT_NU_EXPONENTIAL: f64 = 0.5;
pub const DEFAULT_NU_HYPERBOLIC: f64 = 1.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfidenceError {
    #[error("entropy needs at least two actions, got {0}")]
    TooFewActions(usize),
    #[error("normalized entropy {0} outside [0, 1]")]
    EntropyOutOfRange(f64),
    #[error("temperature must be positive, got {0}")]
    InvalidTemperature(f64),
    #[error(transparent)]
    Network(#[from] NnError),
}

/// Shannon entropy (bits) of the softmax over `q_values`, divided by
/// `log2 |A|` so that the uniform policy scores 1.
pub fn discrete_action_entropy(q_values: &[f64]) -> Result<f64, ConfidenceError> {
    Ok(discrete_entropy_bits(q_values)? / (q_values.len() as f64).log2())
}

pub fn discrete_entropy_bits(q_values: &[f64]) -> Result<f64, ConfidenceError> {
    if q_values.len() < 2 {
        return Err(ConfidenceError::TooFewActions(q_values.len()));
    }
    let p = softmax(q_values)?;
    Ok(-p
        .iter()
        .filter(|&&x| x > 0.0)
        .map(|&x| x * x.log2())
        .sum::<f64>())
}

/// Differential entropy in bits of a diagonal Gaussian, summed over dimensions.
pub fn differential_entropy_bits(head: &GaussianHead) -> Result<f64, ConfidenceError> {
    head.check_floor()?;
    let two_pi_e = 2.0 * std::f64::consts::PI * std::f64::consts::E;
    Ok(head
        .stddev
        .iter()
        .map(|s| 0.5 * (two_pi_e * s * s).log2())
        .sum())
}

/// Differential entropy clipped to `[0, 10]` bits and scaled into `[0, 1]`.
pub fn gaussian_differential_entropy(head: &GaussianHead) -> Result<f64, ConfidenceError> {
    Ok(differential_entropy_bits(head)?.clamp(0.0, ENTROPY_CLIP) / ENTROPY_CLIP)
}

pub fn to_confidence(normalized_entropy: f64) -> Result<f64, ConfidenceError> {
    if !(0.0..=1.0).contains(&normalized_entropy) {
        return Err(ConfidenceError::EntropyOutOfRange(normalized_entropy));
    }
    Ok(1.0 - normalized_entropy)
}

/// Harmonic mean, taken as 0 when both inputs are 0.
pub fn fuse(action_confidence: f64, reward_confidence: f64) -> f64 {
    let (a, b) = (action_confidence, reward_confidence);
    if a + b > 0.0 {
        (2.0 * a * b / (a + b)).clamp(0.0, 1.0)
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Regularizer {
    None,
    /// `exp(-nu * n)`
    Exponential { nu: f64 },
    /// `1 / (1 + nu * n)`
    Hyperbolic { nu: f64 },
}

impl Regularizer {
    pub fn exponential(nu: f64) -> Result<Self, ConfidenceError> {
        check_nu(nu)?;
        Ok(Regularizer::Exponential { nu })
    }

    pub fn hyperbolic(nu: f64) -> Result<Self, ConfidenceError> {
        check_nu(nu)?;
        Ok(Regularizer::Hyperbolic { nu })
    }

    /// Multiplier in `(0, 1]` after `steps_since_reward` steps without an
    /// environment reward.
    pub fn multiplier(&self, steps_since_reward: u64) -> f64 {
        let n = steps_since_reward as f64;
        match *self {
            Regularizer::None => 1.0,
            Regularizer::Exponential { nu } => (-nu * n).exp(),
            Regularizer::Hyperbolic { nu } => 1.0 / (1.0 + nu * n),
        }
    }

    pub fn is_enabled(&self) -> bool {
        !matches!(self, Regularizer::None)
    }
}

fn check_nu(nu: f64) -> Result<(), ConfidenceError> {
    if nu > 0.0 && nu.is_finite() {
        Ok(())
    } else {
        Err(ConfidenceError::InvalidTemperature(nu))
    }
}

/// Outcome of one gate evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GateDecision {
    pub request: bool,
    pub multiplier: f64,
    pub effective: f64,
    /// Steps since the last reward when the decision was taken.
    pub steps_since_reward: u64,
}

/// Threshold gate with its steps-since-reward counter.
#[derive(Debug, Clone, PartialEq)]
pub struct Gate {
    threshold: f64,
    regularizer: Regularizer,
    steps_since_reward: u64,
}

impl Gate {
    pub fn new(threshold: f64, regularizer: Regularizer) -> Self {
        Gate {
            threshold,
            regularizer,
            steps_since_reward: 0,
        }
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn regularizer(&self) -> Regularizer {
        self.regularizer
    }

    pub fn steps_since_reward(&self) -> u64 {
        self.steps_since_reward
    }

    /// Requests a reward iff `fused * multiplier <= threshold`; the counter
    /// resets on a request and grows otherwise.
    pub fn decide(&mut self, fused: f64) -> GateDecision {
        let n = self.steps_since_reward;
        let multiplier = self.regularizer.multiplier(n);
        let effective = fused * multiplier;
        let request = effective <= self.threshold;
        self.record(request);
        GateDecision {
            request,
            multiplier,
            effective,
            steps_since_reward: n,
        }
    }

    /// Unconditional request, used when gating is disabled.
    pub fn force_request(&mut self) -> GateDecision {
        let n = self.steps_since_reward;
        self.record(true);
        GateDecision {
            request: true,
            multiplier: 1.0,
            effective: 0.0,
            steps_since_reward: n,
        }
    }

    fn record(&mut self, request: bool) {
        if request {
            self.steps_since_reward = 0;
        } else {
            self.steps_since_reward += 1;
        }
    }
}

/// Which confidence signal drives the gate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EntropyMode {
    /// Gating disabled: every reward is requested.
    Off,
    /// Action entropy only.
    Action,
    /// Harmonic mean of action and reward confidence.
    ActionReward,
    /// Confidence drawn as `1 - U(0, 1)`.
    Random,
    /// Fixed confidence; only the regularizer varies.
    Constant,
}

/// How the constant baseline turns its fixed entropy of 1 into a confidence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConstantReading {
    /// Confidence 1, so requests come from the regularizer decay alone.
    UnitConfidence,
    /// Entropy 1, confidence 0: every reward is requested.
    UnitEntropy,
}

/// The agent's action distribution for the current state.
#[derive(Debug, Clone, Copy)]
pub enum ActionDistribution<'a> {
    QValues(&'a [f64]),
    Gaussian(&'a GaussianHead),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceReport {
    pub action_entropy_bits: Option<f64>,
    pub reward_entropy_bits: Option<f64>,
    pub action_confidence: Option<f64>,
    pub reward_confidence: Option<f64>,
    pub fused: f64,
    pub regularizer: f64,
    pub request: bool,
    /// Steps since the last environment reward when the gate was evaluated.
    pub steps_since_reward: u64,
}

fn action_terms(dist: ActionDistribution<'_>) -> Result<(f64, f64), ConfidenceError> {
    match dist {
        ActionDistribution::QValues(q) => {
            let bits = discrete_entropy_bits(q)?;
            let norm = (bits / (q.len() as f64).log2()).clamp(0.0, 1.0);
            Ok((bits, to_confidence(norm)?))
        }
        ActionDistribution::Gaussian(head) => {
            let bits = differential_entropy_bits(head)?;
            Ok((bits, to_confidence(bits.clamp(0.0, ENTROPY_CLIP) / ENTROPY_CLIP)?))
        }
    }
}

/// Computes the fused confidence for `mode` without touching the gate.
///
/// `reward_head` is only invoked in [`EntropyMode::ActionReward`]; the other
/// modes never consult the reward model. The returned report still carries
/// the default gate fields; see [`apply_gate`].
pub fn measure<R, F>(
    mode: EntropyMode,
    constant_reading: ConstantReading,
    action: ActionDistribution<'_>,
    reward_head: F,
    rng: &mut R,
) -> Result<ConfidenceReport, ConfidenceError>
where
    R: Rng + ?Sized,
    F: FnOnce() -> Result<GaussianHead, NnError>,
{
    let mut report = ConfidenceReport {
        action_entropy_bits: None,
        reward_entropy_bits: None,
        action_confidence: None,
        reward_confidence: None,
        fused: 0.0,
        regularizer: 1.0,
        request: true,
        steps_since_reward: 0,
    };
    report.fused = match mode {
        EntropyMode::Off => 0.0,
        EntropyMode::Action => {
            let (bits, conf) = action_terms(action)?;
            report.action_entropy_bits = Some(bits);
            report.action_confidence = Some(conf);
            conf
        }
        EntropyMode::ActionReward => {
            let (bits, conf) = action_terms(action)?;
            report.action_entropy_bits = Some(bits);
            report.action_confidence = Some(conf);
            let head = reward_head()?;
            let rbits = differential_entropy_bits(&head)?;
            let rconf = to_confidence(rbits.clamp(0.0, ENTROPY_CLIP) / ENTROPY_CLIP)?;
            report.reward_entropy_bits = Some(rbits);
            report.reward_confidence = Some(rconf);
            fuse(conf, rconf)
        }
        EntropyMode::Random => 1.0 - rng.random::<f64>(),
        EntropyMode::Constant => match constant_reading {
            ConstantReading::UnitConfidence => 1.0,
            ConstantReading::UnitEntropy => 0.0,
        },
    };
    Ok(report)
}

/// Runs a measured report through `gate`, filling in the decision fields.
/// With gating off every reward is requested.
pub fn apply_gate(mode: EntropyMode, report: &mut ConfidenceReport, gate: &mut Gate) {
    let d = match mode {
        EntropyMode::Off => gate.force_request(),
        _ => gate.decide(report.fused),
    };
    report.regularizer = d.multiplier;
    report.request = d.request;
    report.steps_since_reward = d.steps_since_reward;
}

/// [`measure`] followed by [`apply_gate`].
pub fn assess<R, F>(
    mode: EntropyMode,
    constant_reading: ConstantReading,
    action: ActionDistribution<'_>,
    reward_head: F,
    gate: &mut Gate,
    rng: &mut R,
) -> Result<ConfidenceReport, ConfidenceError>
where
    R: Rng + ?Sized,
    F: FnOnce() -> Result<GaussianHead, NnError>,
{
    let mut report = measure(mode, constant_reading, action, reward_head, rng)?;
    apply_gate(mode, &mut report, gate);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::SIGMA_FLOOR;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn discrete_entropy_cases() {
        assert!((discrete_action_entropy(&[0.0; 4]).unwrap() - 1.0).abs() < 1e-12);
        assert!(discrete_action_entropy(&[1000.0, 0.0, 0.0, 0.0]).unwrap() < 1e-6);
        // softmax(1, 0) = (e/(e+1), 1/(e+1)); summed directly
        let p0 = 1f64.exp() / (1f64.exp() + 1.0);
        let p1 = 1.0 - p0;
        let oracle = -(p0 * p0.log2() + p1 * p1.log2());
        let h = discrete_action_entropy(&[1.0, 0.0]).unwrap();
        assert!((h - oracle).abs() < 1e-12);
        assert!((h - 0.839_94).abs() < 1e-5);
        assert_eq!(discrete_action_entropy(&[3.0]), Err(ConfidenceError::TooFewActions(1)));
    }

    /// `-∫ p log2 p` by composite Simpson's rule over ±12 sigma.
    fn integrated_entropy_bits(sigma: f64) -> f64 {
        let n = 20_000;
        let (a, b) = (-12.0 * sigma, 12.0 * sigma);
        let h = (b - a) / n as f64;
        let f = |x: f64| {
            let p = (-(x * x) / (2.0 * sigma * sigma)).exp()
                / (sigma * (2.0 * std::f64::consts::PI).sqrt());
            if p > 0.0 {
                -p * p.log2()
            } else {
                0.0
            }
        };
        let mut s = f(a) + f(b);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            s += w * f(a + i as f64 * h);
        }
        s * h / 3.0
    }

    #[test]
    fn gaussian_entropy_cases() {
        let unit = GaussianHead::new(vec![0.0], vec![1.0]).unwrap();
        let e = gaussian_differential_entropy(&unit).unwrap();
        assert!((e * 10.0 - integrated_entropy_bits(1.0)).abs() < 1e-6);
        assert!((e - 0.20471).abs() < 1e-4);
        let wide = GaussianHead::new(vec![2.0], vec![10.0]).unwrap();
        let e10 = gaussian_differential_entropy(&wide).unwrap();
        assert!((e10 * 10.0 - integrated_entropy_bits(10.0)).abs() < 1e-5);
        assert!((e10 - 0.53690).abs() < 1e-4);
        let narrow = GaussianHead::new(vec![0.0], vec![0.01]).unwrap();
        assert_eq!(gaussian_differential_entropy(&narrow).unwrap(), 0.0);
        let huge = GaussianHead::new(vec![0.0], vec![1e6]).unwrap();
        assert_eq!(gaussian_differential_entropy(&huge).unwrap(), 1.0);
        let bad = GaussianHead {
            mean: vec![0.0],
            stddev: vec![SIGMA_FLOOR / 2.0],
        };
        assert!(gaussian_differential_entropy(&bad).is_err());
    }

    #[test]
    fn multi_dim_entropies_add() {
        let head = GaussianHead::new(vec![0.0, 0.0], vec![1.0, 10.0]).unwrap();
        let bits = differential_entropy_bits(&head).unwrap();
        assert!((bits - (2.0471 + 5.3690)).abs() < 1e-3);
    }

    #[test]
    fn confidence_conversion() {
        assert_eq!(to_confidence(0.0).unwrap(), 1.0);
        assert_eq!(to_confidence(1.0).unwrap(), 0.0);
        assert!((to_confidence(0.2047).unwrap() - 0.7953).abs() < 1e-12);
        assert!(to_confidence(1.5).is_err());
        assert!(to_confidence(-0.1).is_err());
    }

    #[test]
    fn fuse_cases() {
        assert_eq!(fuse(1.0, 1.0), 1.0);
        assert!((fuse(0.5, 1.0) - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(fuse(0.0, 0.9), 0.0);
        assert_eq!(fuse(0.0, 0.0), 0.0);
    }

    #[test]
    fn regularizer_cases() {
        let exp = Regularizer::exponential(0.5).unwrap();
        let hyp = Regularizer::hyperbolic(1.0).unwrap();
        assert_eq!(exp.multiplier(0), 1.0);
        assert_eq!(hyp.multiplier(3), 0.25);
        assert!((exp.multiplier(2) - 0.367_879_441_171_442_3).abs() < 1e-12);
        assert_eq!(Regularizer::None.multiplier(50), 1.0);
        assert!(Regularizer::hyperbolic(0.0).is_err());
        assert!(Regularizer::exponential(-1.0).is_err());
    }

    #[test]
    fn gate_cases() {
        let mut g = Gate::new(0.25, Regularizer::None);
        let d = g.decide(1.0);
        assert!(!d.request);
        assert_eq!(g.steps_since_reward(), 1);
        let d = g.decide(0.2);
        assert!(d.request);
        assert_eq!(g.steps_since_reward(), 0);
    }

    #[test]
    fn hyperbolic_forces_request_by_third_skip() {
        // 0.9 / (1 + n) <= 0.25 first holds at n = 3 (n >= 2.6)
        let mut g = Gate::new(0.25, Regularizer::hyperbolic(1.0).unwrap());
        let requests: Vec<bool> = (0..8).map(|_| g.decide(0.9).request).collect();
        assert_eq!(requests, vec![false, false, false, true, false, false, false, true]);
    }

    #[test]
    fn constant_mode_with_exponential_requests_every_fourth_step() {
        let mut g = Gate::new(0.25, Regularizer::exponential(0.5).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let q = [0.0, 0.0];
        let mut seq = Vec::new();
        for _ in 0..12 {
            let r = assess(
                EntropyMode::Constant,
                ConstantReading::UnitConfidence,
                ActionDistribution::QValues(&q),
                || panic!("constant mode must not query the reward model"),
                &mut g,
                &mut rng,
            )
            .unwrap();
            if r.request {
                assert_eq!(r.steps_since_reward, 3);
            }
            seq.push(r.request);
        }
        assert_eq!(seq.iter().filter(|r| **r).count(), 3);
        assert!(seq[3] && seq[7] && seq[11]);
    }

    #[test]
    fn unit_entropy_reading_requests_everything() {
        let mut g = Gate::new(0.25, Regularizer::exponential(0.5).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..5 {
            let r = assess(
                EntropyMode::Constant,
                ConstantReading::UnitEntropy,
                ActionDistribution::QValues(&[0.0, 1.0]),
                || unreachable!(),
                &mut g,
                &mut rng,
            )
            .unwrap();
            assert!(r.request);
        }
    }

    #[test]
    fn action_mode_never_queries_reward_model() {
        let mut g = Gate::new(0.25, Regularizer::None);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let r = assess(
            EntropyMode::Action,
            ConstantReading::UnitConfidence,
            ActionDistribution::QValues(&[5.0, 0.0, 0.0, 0.0]),
            || panic!("queried"),
            &mut g,
            &mut rng,
        )
        .unwrap();
        assert!(r.reward_confidence.is_none());
        assert_eq!(r.fused, r.action_confidence.unwrap());
    }

    #[test]
    fn action_reward_mode_fuses() {
        let mut g = Gate::new(0.25, Regularizer::None);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let r = assess(
            EntropyMode::ActionReward,
            ConstantReading::UnitConfidence,
            ActionDistribution::QValues(&[0.0, 0.0, 0.0, 0.0]),
            || GaussianHead::new(vec![0.0], vec![1.0]),
            &mut g,
            &mut rng,
        )
        .unwrap();
        assert_eq!(r.action_confidence, Some(0.0));
        assert_eq!(r.fused, 0.0);
        assert!(r.request);
        let r = assess(
            EntropyMode::ActionReward,
            ConstantReading::UnitConfidence,
            ActionDistribution::QValues(&[100.0, 0.0, 0.0, 0.0]),
            || GaussianHead::new(vec![0.0], vec![1.0]),
            &mut g,
            &mut rng,
        )
        .unwrap();
        let rc = 1.0 - 0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E).log2() / 10.0;
        assert!((r.reward_confidence.unwrap() - rc).abs() < 1e-12);
        assert!((r.fused - fuse(r.action_confidence.unwrap(), rc)).abs() < 1e-15);
        assert!(!r.request);
    }

    #[test]
    fn random_mode_is_reproducible() {
        let run = |seed| {
            let mut g = Gate::new(0.25, Regularizer::None);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..200)
                .map(|_| {
                    assess(
                        EntropyMode::Random,
                        ConstantReading::UnitConfidence,
                        ActionDistribution::QValues(&[0.0, 0.0]),
                        || unreachable!(),
                        &mut g,
                        &mut rng,
                    )
                    .unwrap()
                    .request
                })
                .collect::<Vec<_>>()
        };
        assert_eq!(run(4), run(4));
        assert_ne!(run(4), run(5));
    }

    proptest! {
        #[test]
        fn harmonic_mean_bounds(a in 1e-6f64..=1.0, b in 1e-6f64..=1.0) {
            let h = fuse(a, b);
            prop_assert!(a.min(b) <= h + 1e-12);
            prop_assert!(h <= (a + b) / 2.0 + 1e-12);
            prop_assert!(h <= (a * b).sqrt() + 1e-12);
        }

        #[test]
        fn discrete_entropy_shift_invariant(
            q in proptest::collection::vec(-30.0f64..30.0, 2..8),
            k in -500.0f64..500.0,
        ) {
            let shifted: Vec<f64> = q.iter().map(|x| x + k).collect();
            let a = discrete_action_entropy(&q).unwrap();
            let b = discrete_action_entropy(&shifted).unwrap();
            prop_assert!((a - b).abs() < 1e-9);
            prop_assert!((0.0..=1.0 + 1e-12).contains(&a));
        }

        #[test]
        fn regularizers_decrease(n in 0u64..1000) {
            for reg in [Regularizer::exponential(0.5).unwrap(), Regularizer::hyperbolic(1.0).unwrap()] {
                prop_assert!(reg.multiplier(n + 1) < reg.multiplier(n));
                prop_assert!(reg.multiplier(n) <= 1.0 && reg.multiplier(n) > 0.0);
            }
        }

        #[test]
        fn differential_entropy_monotone(s in 0.001f64..100.0, ds in 0.0f64..10.0) {
            let a = gaussian_differential_entropy(&GaussianHead::new(vec![0.0], vec![s]).unwrap()).unwrap();
            let b = gaussian_differential_entropy(&GaussianHead::new(vec![0.0], vec![s + ds]).unwrap()).unwrap();
            prop_assert!(b >= a);
        }

        #[test]
        fn regularized_gate_never_skips_more_than_three(
            fused in proptest::collection::vec(0.0f64..=1.0, 1..400),
            hyper in any::<bool>(),
        ) {
            let reg = if hyper { Regularizer::hyperbolic(1.0).unwrap() } else { Regularizer::exponential(0.5).unwrap() };
            let mut g = Gate::new(0.25, reg);
            let mut run = 0;
            for f in fused {
                let d = g.decide(f);
                if d.request {
                    run = 0;
                    prop_assert_eq!(g.steps_since_reward(), 0);
                } else {
                    run += 1;
                }
                prop_assert!(run <= 3);
            }
        }
    }
}
