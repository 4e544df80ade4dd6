use serde::{Deserialize, Serialize};

/// Adaptive-moment gradient descent over a flat parameter buffer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub steps: u64,
}

impl Adam {
    pub fn new(len: usize, lr: f64) -> Self {
        Self::with_betas(len, lr, 0.9, 0.999)
    }

    pub fn with_betas(len: usize, lr: f64, beta1: f64, beta2: f64) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps: 1e-8,
            m: vec![0.0; len],
            v: vec![0.0; len],
            steps: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        assert_eq!(params.len(), grads.len());
        assert_eq!(params.len(), self.m.len());
        self.steps += 1;
        let t = self.steps as f64;
        let c1 = 1.0 - self.beta1.powf(t);
        let c2 = 1.0 - self.beta2.powf(t);
        for ((p, &g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let mhat = *m / c1;
            let vhat = *v / c2;
            *p -= self.lr * mhat / (vhat.sqrt() + self.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_fresh_params_unchanged() {
        let mut p = vec![1.0, -2.0];
        let before = p.clone();
        let mut opt = Adam::new(2, 0.1);
        opt.step(&mut p, &[0.0, 0.0]);
        assert_eq!(p, before);
    }

    #[test]
    fn minimizes_quadratic() {
        let mut p = vec![3.0];
        let mut opt = Adam::new(1, 0.05);
        for _ in 0..2000 {
            let g = 2.0 * (p[0] - 1.0);
            opt.step(&mut p, &[g]);
        }
        assert!((p[0] - 1.0).abs() < 1e-3);
    }
}
