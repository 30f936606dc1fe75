//! AdaDelta with a constant learning rate.

/// Hyperparameters. Defaults are `lr = 0.85, rho = 0.95, decay = 0`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdaDeltaParams {
    pub lr: f64,
    pub rho: f64,
    pub epsilon: f64,
    /// Keras-style time decay `lr / (1 + decay · t)`; 0 keeps lr constant.
    pub decay: f64,
}

impl Default for AdaDeltaParams {
    fn default() -> Self {
        AdaDeltaParams {
            lr: 0.85,
            rho: 0.95,
            epsilon: 1e-6,
            decay: 0.0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct AdaDeltaState {
    pub params: AdaDeltaParams,
    /// Running E[g²].
    pub avg_sq_grad: Vec<f64>,
    /// Running E[Δx²].
    pub avg_sq_delta: Vec<f64>,
    pub steps: u64,
}

impl AdaDeltaState {
    pub fn new(n: usize, params: AdaDeltaParams) -> Self {
        AdaDeltaState {
            params,
            avg_sq_grad: vec![0.0; n],
            avg_sq_delta: vec![0.0; n],
            steps: 0,
        }
    }

    pub fn learning_rate(&self) -> f64 {
        self.params.lr / (1.0 + self.params.decay * self.steps as f64)
    }

    /// Applies one update in place and returns the deltas taken.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Vec<f64> {
        assert_eq!(params.len(), grads.len(), "params/grads misaligned");
        assert_eq!(params.len(), self.avg_sq_grad.len(), "state sized for a different model");
        let AdaDeltaParams { rho, epsilon, .. } = self.params;
        let lr = self.learning_rate();
        let mut deltas = Vec::with_capacity(params.len());
        for i in 0..params.len() {
            let g = grads[i];
            let eg = rho * self.avg_sq_grad[i] + (1.0 - rho) * g * g;
            let delta = -lr * ((self.avg_sq_delta[i] + epsilon).sqrt() / (eg + epsilon).sqrt()) * g;
            self.avg_sq_grad[i] = eg;
            self.avg_sq_delta[i] = rho * self.avg_sq_delta[i] + (1.0 - rho) * delta * delta;
            params[i] += delta;
            deltas.push(delta);
        }
        self.steps += 1;
        deltas
    }
}
