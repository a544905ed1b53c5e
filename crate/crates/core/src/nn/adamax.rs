use super::{NnError, Result};

pub const ADAMAX_BETA1: f64 = 0.9;
pub const ADAMAX_BETA2: f64 = 0.999;
pub const ADAMAX_EPS: f64 = 1e-8;

/// Adamax state: exponential moving first moment and an infinity-norm
/// second moment, one slot per parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct Adamax {
    first_moment: Vec<f64>,
    inf_norm: Vec<f64>,
    step: u64,
}

impl Adamax {
    pub fn new(params: usize) -> Self {
        Adamax {
            first_moment: vec![0.0; params],
            inf_norm: vec![0.0; params],
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self) -> &[f64] {
        &self.first_moment
    }

    pub fn inf_norm(&self) -> &[f64] {
        &self.inf_norm
    }

    /// An all-zero gradient only advances the step counter.
    pub(super) fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) -> Result<()> {
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(NnError::NonFinite("gradient"));
        }
        let t = self.step + 1;
        if grads.iter().all(|g| *g == 0.0) {
            self.step = t;
            return Ok(());
        }
        let rate = lr / (1.0 - ADAMAX_BETA1.powi(t.min(i32::MAX as u64) as i32));
        let mut updated = Vec::with_capacity(params.len());
        let mut m_new = Vec::with_capacity(params.len());
        let mut u_new = Vec::with_capacity(params.len());
        for i in 0..params.len() {
            let g = grads[i];
            let m = ADAMAX_BETA1 * self.first_moment[i] + (1.0 - ADAMAX_BETA1) * g;
            let u = (ADAMAX_BETA2 * self.inf_norm[i]).max(g.abs());
            let p = params[i] - rate * m / (u + ADAMAX_EPS);
            if !p.is_finite() {
                return Err(NnError::NonFinite("parameter update"));
            }
            m_new.push(m);
            u_new.push(u);
            updated.push(p);
        }
        params.copy_from_slice(&updated);
        self.first_moment = m_new;
        self.inf_norm = u_new;
        self.step = t;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::super::{Activation, Gradients, Mlp};
    use super::*;

    fn scalar_net(w: f64) -> Mlp {
        let mut net = Mlp::zeros(&[1, 1], &[Activation::Identity]);
        net.weights_mut(0)[0] = w;
        net
    }

    #[test]
    fn zero_gradient_only_advances_counter() {
        let mut net = scalar_net(1.5);
        net.adamax_step(&Gradients(vec![0.4, -0.2]), 0.005).unwrap();
        let before = net.params().to_vec();
        net.adamax_step(&Gradients(vec![0.0, 0.0]), 0.005).unwrap();
        assert_eq!(net.params(), &before[..]);
        assert_eq!(net.optimizer().step_count(), 2);
    }

    #[test]
    fn first_step_closed_form() {
        // m1 = (1-b1) g, u1 = |g|, step = lr / (1 - b1) * m1 / (u1 + eps)
        for &g in &[2.5f64, -0.003, 40.0] {
            let mut net = scalar_net(0.0);
            net.adamax_step(&Gradients(vec![g, 0.0]), 0.005).unwrap();
            let expected = -0.005 / (1.0 - 0.9) * (0.1 * g) / (g.abs() + 1e-8);
            assert!((net.params()[0] - expected).abs() < 1e-15);
            assert!((net.params()[0].abs() - 0.005).abs() < 1e-5 * 0.005);
            assert_eq!(net.params()[0].signum(), -g.signum());
        }
    }

    #[test]
    fn quadratic_descent() {
        let mut net = scalar_net(0.0);
        for _ in 0..200 {
            let w = net.params()[0];
            net.adamax_step(&Gradients(vec![2.0 * (w - 3.0), 0.0]), 0.005).unwrap();
        }
        assert!((net.params()[0] - 3.0).abs() < 3.0);
    }

    #[test]
    fn non_finite_gradient_rejected_without_mutation() {
        let mut net = scalar_net(1.0);
        let err = net.adamax_step(&Gradients(vec![f64::NAN, 0.0]), 0.005);
        assert!(err.is_err());
        assert_eq!(net.params()[0], 1.0);
        assert_eq!(net.optimizer().step_count(), 0);
    }

    #[test]
    fn non_finite_update_rejected() {
        let mut net = scalar_net(1.0);
        assert_eq!(
            net.adamax_step(&Gradients(vec![1.0, 0.0]), f64::INFINITY),
            Err(NnError::NonFinite("parameter update"))
        );
        assert_eq!(net.params()[0], 1.0);
    }
}
