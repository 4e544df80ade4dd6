use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;

/// Discrete variance-preserving noise schedule with levels `1..=steps`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffusionSchedule {
    pub steps: usize,
    /// `alpha_bar[t]` for `t` in `0..=steps`; `alpha_bar[0] = 1`.
    pub alpha_bar: Vec<f64>,
    /// `weights[t]` is `w(t)`; index 0 unused.
    pub weights: Vec<f64>,
}

impl DiffusionSchedule {
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if steps < 2 || !(0.0 < beta_start && beta_start < beta_end && beta_end < 1.0) {
            return Err(Error::param("schedule needs >= 2 steps and 0 < beta_start < beta_end < 1"));
        }
        let mut alpha_bar = vec![1.0; steps + 1];
        for t in 1..=steps {
            let beta = beta_start + (beta_end - beta_start) * (t - 1) as f64 / (steps - 1) as f64;
            alpha_bar[t] = alpha_bar[t - 1] * (1.0 - beta);
        }
        Ok(Self { steps, alpha_bar, weights: vec![1.0; steps + 1] })
    }

    pub fn validate(&self) -> Result<()> {
        if self.alpha_bar.len() != self.steps + 1 || self.weights.len() != self.steps + 1 {
            return Err(Error::param("schedule table length mismatch"));
        }
        for t in 1..=self.steps {
            if !(self.alpha_bar[t] < self.alpha_bar[t - 1] && self.alpha_bar[t] > 0.0) {
                return Err(Error::param("noise scale must increase strictly with t"));
            }
            if !(self.weights[t] > 0.0 && self.weights[t].is_finite()) {
                return Err(Error::param("w(t) must be positive"));
            }
        }
        Ok(())
    }

    pub fn check_level(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps {
            return Err(Error::param(format!("noise level {t} outside 1..={}", self.steps)));
        }
        Ok(())
    }

    /// Standard deviation of the noise component at level `t`.
    pub fn sigma(&self, t: usize) -> f64 {
        (1.0 - self.alpha_bar[t]).sqrt()
    }

    pub fn weight(&self, t: usize) -> f64 {
        self.weights[t]
    }

    /// `sqrt(ab) x0 + sqrt(1 - ab) eps`.
    pub fn add_noise(&self, x0: &Image, t: usize, eps: &[f64]) -> Image {
        let a = self.alpha_bar[t].sqrt();
        let s = self.sigma(t);
        let mut out = x0.clone();
        for (o, e) in out.data.iter_mut().zip(eps) {
            *o = a * *o + s * e;
        }
        out
    }

    /// Level range used for score distillation.
    pub fn sds_range(&self) -> (usize, usize) {
        let lo = ((0.02 * self.steps as f64).ceil() as usize).max(1);
        let hi = ((0.98 * self.steps as f64).floor() as usize).max(lo);
        (lo, hi)
    }

    pub fn sample_sds_level<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let (lo, hi) = self.sds_range();
        rng.random_range(lo..=hi)
    }
}

impl Default for DiffusionSchedule {
    fn default() -> Self {
        Self::linear(200, 5e-4, 0.1).expect("default schedule is valid")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_schedule_is_valid_and_reaches_noise() {
        let s = DiffusionSchedule::default();
        s.validate().unwrap();
        assert!(s.alpha_bar[s.steps] < 1e-3);
        assert!(s.sigma(1) < 0.03);
        assert_eq!(s.sds_range(), (4, 196));
        assert!(s.check_level(0).is_err() && s.check_level(201).is_err());
    }

    #[test]
    fn noising_preserves_unit_variance() {
        let s = DiffusionSchedule::default();
        let mut rng = crate::rng::stream_rng(0, 0, 0);
        let x0 = Image::from_vec(1, 100, 100, crate::rng::normal_vec(&mut rng, 10_000)).unwrap();
        let eps = crate::rng::normal_vec(&mut rng, 10_000);
        let xt = s.add_noise(&x0, 100, &eps);
        let var = xt.data.iter().map(|v| v * v).sum::<f64>() / 1e4;
        assert!((var - 1.0).abs() < 0.05);
    }
}
