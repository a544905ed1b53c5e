use super::{sigmoid, softplus, NnError, Result};

/// Lower bound added to every predicted standard deviation.
pub const SIGMA_FLOOR: f64 = 1e-3;

/// Mean squared error and its gradient `2 (prediction - target) / len`.
pub fn mse_loss(prediction: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>)> {
    if prediction.len() != target.len() {
        return Err(NnError::DimensionMismatch {
            expected: prediction.len(),
            got: target.len(),
        });
    }
    let n = prediction.len() as f64;
    let mut loss = 0.0;
    let grad = prediction
        .iter()
        .zip(target)
        .map(|(p, t)| {
            let d = p - t;
            loss += d * d;
            2.0 * d / n
        })
        .collect();
    Ok((loss / n, grad))
}

/// Diagonal Gaussian described by per-dimension mean and standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianHead {
    pub mean: Vec<f64>,
    pub stddev: Vec<f64>,
}

impl GaussianHead {
    pub fn new(mean: Vec<f64>, stddev: Vec<f64>) -> Result<Self> {
        if mean.len() != stddev.len() {
            return Err(NnError::DimensionMismatch {
                expected: mean.len(),
                got: stddev.len(),
            });
        }
        let head = GaussianHead { mean, stddev };
        head.check_floor()?;
        Ok(head)
    }

    /// Maps a raw network output `[mean..., pre_std...]` to a head with
    /// `stddev = softplus(pre_std) + SIGMA_FLOOR`.
    pub fn from_raw(raw: &[f64]) -> Result<Self> {
        if raw.len() % 2 != 0 || raw.is_empty() {
            return Err(NnError::DimensionMismatch {
                expected: raw.len() + raw.len() % 2,
                got: raw.len(),
            });
        }
        let dims = raw.len() / 2;
        Ok(GaussianHead {
            mean: raw[..dims].to_vec(),
            stddev: raw[dims..].iter().map(|&z| softplus(z) + SIGMA_FLOOR).collect(),
        })
    }

    /// Chains gradients w.r.t. mean and stddev back to the raw network output.
    pub fn raw_gradient(raw: &[f64], d_mean: &[f64], d_stddev: &[f64]) -> Vec<f64> {
        let dims = raw.len() / 2;
        let mut out = Vec::with_capacity(raw.len());
        out.extend_from_slice(d_mean);
        out.extend(
            raw[dims..]
                .iter()
                .zip(d_stddev)
                .map(|(&z, &g)| g * sigmoid(z)),
        );
        out
    }

    pub fn dims(&self) -> usize {
        self.mean.len()
    }

    pub fn check_floor(&self) -> Result<()> {
        match self.stddev.iter().find(|s| !(**s >= SIGMA_FLOOR)) {
            Some(&value) => Err(NnError::StddevBelowFloor {
                value,
                floor: SIGMA_FLOOR,
            }),
            None => Ok(()),
        }
    }

    /// Natural-log density of `x` under the head.
    pub fn log_prob(&self, x: &[f64]) -> f64 {
        let ln_2pi = (2.0 * std::f64::consts::PI).ln();
        self.mean
            .iter()
            .zip(&self.stddev)
            .zip(x)
            .map(|((m, s), v)| {
                let z = (v - m) / s;
                -0.5 * z * z - s.ln() - 0.5 * ln_2pi
            })
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NllGradient {
    pub loss: f64,
    pub d_mean: Vec<f64>,
    pub d_stddev: Vec<f64>,
}

/// Gaussian negative log-likelihood summed over dimensions:
/// `0.5 ln(2 pi s^2) + (t - m)^2 / (2 s^2)`.
pub fn gaussian_nll_loss(head: &GaussianHead, target: &[f64]) -> Result<NllGradient> {
    if target.len() != head.dims() {
        return Err(NnError::DimensionMismatch {
            expected: head.dims(),
            got: target.len(),
        });
    }
    head.check_floor()?;
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut loss = 0.0;
    let mut d_mean = Vec::with_capacity(target.len());
    let mut d_stddev = Vec::with_capacity(target.len());
    for ((&m, &s), &t) in head.mean.iter().zip(&head.stddev).zip(target) {
        let var = s * s;
        let r = t - m;
        loss += 0.5 * (two_pi * var).ln() + r * r / (2.0 * var);
        d_mean.push(-r / var);
        d_stddev.push(1.0 / s - r * r / (var * s));
    }
    Ok(NllGradient {
        loss,
        d_mean,
        d_stddev,
    })
}

pub fn softmax(values: &[f64]) -> Result<Vec<f64>> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(NnError::NonFinite("softmax input"));
    }
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = values.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}
