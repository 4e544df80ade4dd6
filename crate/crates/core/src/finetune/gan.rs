//! Pooled-MLP discriminator with non-saturating logistic losses and an
//! analytic R1 penalty.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::nn::{sigmoid, softplus};
use crate::rng::{normal_vec, stream, stream_rng};

/// Pixels averaged into one discriminator input.
const POOL_AREA: f64 = 4.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Discriminator {
    pub height: usize,
    pub width: usize,
    pub hidden: usize,
    pub params: Vec<f64>,
}

struct DiscLayout {
    w1: Range<usize>,
    b1: Range<usize>,
    w2: Range<usize>,
    b2: usize,
}

/// Forward activations of one discriminator evaluation.
pub struct DiscPass {
    pub x: Vec<f64>,
    pub h: Vec<f64>,
    pub logit: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GanLosses {
    pub generator: f64,
    pub discriminator: f64,
    pub r1: f64,
    pub fake_logit: f64,
    pub real_logit: f64,
}

impl Discriminator {
    pub fn new(height: usize, width: usize, hidden: usize, seed: u64) -> Result<Self> {
        if height % 2 != 0 || width % 2 != 0 || height == 0 || width == 0 || hidden == 0 {
            return Err(Error::param("discriminator needs even input sizes and a hidden layer"));
        }
        let mut d = Self { height, width, hidden, params: Vec::new() };
        let k = d.input_len();
        let l = d.layout();
        let mut rng = stream_rng(seed, stream::INIT, 2);
        let mut p = vec![0.0; l.b2 + 1];
        for (v, n) in p[l.w1.clone()].iter_mut().zip(normal_vec(&mut rng, l.w1.len())) {
            *v = n / (k as f64).sqrt();
        }
        for (v, n) in p[l.w2.clone()].iter_mut().zip(normal_vec(&mut rng, hidden)) {
            *v = n / (hidden as f64).sqrt();
        }
        d.params = p;
        Ok(d)
    }

    pub fn input_len(&self) -> usize {
        3 * (self.height / 2) * (self.width / 2)
    }

    fn layout(&self) -> DiscLayout {
        let k = self.input_len();
        let h = self.hidden;
        DiscLayout { w1: 0..h * k, b1: h * k..h * k + h, w2: h * k + h..h * k + 2 * h, b2: h * k + 2 * h }
    }

    fn check(&self, img: &Image) -> Result<()> {
        if img.channels != 3 || img.height != self.height || img.width != self.width {
            return Err(Error::param(format!(
                "discriminator expects 3x{}x{}, got {}x{}x{}",
                self.height, self.width, img.channels, img.height, img.width
            )));
        }
        Ok(())
    }

    pub fn forward(&self, img: &Image) -> Result<DiscPass> {
        self.check(img)?;
        let x = img.downsample2().data;
        let l = self.layout();
        let k = x.len();
        let p = &self.params;
        let mut h = vec![0.0; self.hidden];
        crate::nn::dense_forward(&p[l.w1.clone()], &p[l.b1.clone()], &x, &mut h);
        let logit = p[l.b2] + h.iter().zip(&p[l.w2.clone()]).map(|(a, w)| softplus(*a) * w).sum::<f64>();
        debug_assert_eq!(k, self.input_len());
        Ok(DiscPass { x, h, logit })
    }

    pub fn logit(&self, img: &Image) -> Result<f64> {
        Ok(self.forward(img)?.logit)
    }

    /// `dD/dx` on the pooled input.
    fn pooled_input_grad(&self, pass: &DiscPass) -> Vec<f64> {
        let l = self.layout();
        let k = pass.x.len();
        let p = &self.params;
        let mut u = vec![0.0; k];
        for j in 0..self.hidden {
            let v = sigmoid(pass.h[j]) * p[l.w2.start + j];
            for (ui, wi) in u.iter_mut().zip(&p[l.w1.start + j * k..l.w1.start + (j + 1) * k]) {
                *ui += v * wi;
            }
        }
        u
    }

    /// `dD/dimage`.
    pub fn input_grad(&self, img: &Image) -> Result<Image> {
        let pass = self.forward(img)?;
        let u = self.pooled_input_grad(&pass);
        let pooled = Image::from_vec(3, self.height / 2, self.width / 2, u)?;
        Ok(Image::downsample2_backward(&pooled, self.height, self.width))
    }

    /// `gamma / 2 * ||dD/dimage||^2`.
    pub fn r1_penalty(&self, img: &Image, gamma: f64) -> Result<f64> {
        let pass = self.forward(img)?;
        let u = self.pooled_input_grad(&pass);
        Ok(0.5 * gamma * u.iter().map(|v| v * v).sum::<f64>() / POOL_AREA)
    }

    /// Adds `scale * dD/dparams` at `pass`.
    fn accumulate_logit_grad(&self, pass: &DiscPass, scale: f64, grad: &mut [f64]) {
        let l = self.layout();
        let k = pass.x.len();
        let p = &self.params;
        grad[l.b2] += scale;
        for j in 0..self.hidden {
            grad[l.w2.start + j] += scale * softplus(pass.h[j]);
            let gh = scale * p[l.w2.start + j] * sigmoid(pass.h[j]);
            grad[l.b1.start + j] += gh;
            for (g, x) in grad[l.w1.start + j * k..l.w1.start + (j + 1) * k].iter_mut().zip(&pass.x) {
                *g += gh * x;
            }
        }
    }

    /// Adds `dR1/dparams` at `pass`.
    fn accumulate_r1_grad(&self, pass: &DiscPass, gamma: f64, grad: &mut [f64]) {
        let l = self.layout();
        let k = pass.x.len();
        let p = &self.params;
        let u = self.pooled_input_grad(pass);
        let r: Vec<f64> = u.iter().map(|v| gamma * v / POOL_AREA).collect();
        for j in 0..self.hidden {
            let row = &p[l.w1.start + j * k..l.w1.start + (j + 1) * k];
            let w1r: f64 = row.iter().zip(&r).map(|(a, b)| a * b).sum();
            let s = sigmoid(pass.h[j]);
            let w2 = p[l.w2.start + j];
            grad[l.w2.start + j] += s * w1r;
            let gh = s * (1.0 - s) * w2 * w1r;
            grad[l.b1.start + j] += gh;
            let v = s * w2;
            for i in 0..k {
                grad[l.w1.start + j * k + i] += gh * pass.x[i] + v * r[i];
            }
        }
    }

    /// Loss values plus the discriminator-loss parameter gradient.
    pub fn losses_and_grad(&self, fake: &Image, real: &Image, gamma: f64) -> Result<(GanLosses, Vec<f64>)> {
        let pf = self.forward(fake)?;
        let pr = self.forward(real)?;
        let u = self.pooled_input_grad(&pr);
        let r1 = 0.5 * gamma * u.iter().map(|v| v * v).sum::<f64>() / POOL_AREA;
        let losses = GanLosses {
            generator: softplus(-pf.logit),
            discriminator: softplus(pf.logit) + softplus(-pr.logit) + r1,
            r1,
            fake_logit: pf.logit,
            real_logit: pr.logit,
        };
        let mut grad = vec![0.0; self.params.len()];
        self.accumulate_logit_grad(&pf, sigmoid(pf.logit), &mut grad);
        self.accumulate_logit_grad(&pr, -sigmoid(-pr.logit), &mut grad);
        if gamma != 0.0 {
            self.accumulate_r1_grad(&pr, gamma, &mut grad);
        }
        Ok((losses, grad))
    }

    /// Gradient of the generator loss `softplus(-D(fake))` on the fake image.
    pub fn generator_image_grad(&self, fake: &Image) -> Result<(f64, Image)> {
        let logit = self.logit(fake)?;
        let mut g = self.input_grad(fake)?;
        let scale = -sigmoid(-logit);
        g.data.iter_mut().for_each(|v| *v *= scale);
        Ok((softplus(-logit), g))
    }
}

/// Generator and discriminator losses for one fake/real pair.
pub fn gan_losses(disc: &Discriminator, fake: &Image, real: &Image, gamma: f64) -> Result<GanLosses> {
    if !fake.same_shape(real) {
        return Err(Error::param("fake and real images must share a resolution"));
    }
    Ok(disc.losses_and_grad(fake, real, gamma)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn images(seed: u64) -> (Discriminator, Image, Image) {
        let d = Discriminator::new(8, 4, 6, seed).unwrap();
        let mut rng = stream_rng(seed, 0, 0);
        let f = Image::from_vec(3, 8, 4, crate::rng::uniform_vec(&mut rng, 96, 0.0, 1.0)).unwrap();
        let r = Image::from_vec(3, 8, 4, crate::rng::uniform_vec(&mut rng, 96, 0.0, 1.0)).unwrap();
        (d, f, r)
    }

    #[test]
    fn parameter_gradient_matches_finite_differences() {
        let (d, f, r) = images(1);
        let (_, g) = d.losses_and_grad(&f, &r, 1.0).unwrap();
        for i in [0, 13, 95, d.params.len() - 1, d.params.len() - 3, 6 * 24 + 2] {
            let mut dp = d.clone();
            dp.params[i] += 1e-6;
            let mut dm = d.clone();
            dm.params[i] -= 1e-6;
            let lp = gan_losses(&dp, &f, &r, 1.0).unwrap().discriminator;
            let lm = gan_losses(&dm, &f, &r, 1.0).unwrap().discriminator;
            let fd = (lp - lm) / 2e-6;
            assert!((fd - g[i]).abs() < 1e-6 * (1.0 + fd.abs()), "{i}: {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn generator_image_grad_matches_finite_differences() {
        let (d, f, _) = images(2);
        let (_, g) = d.generator_image_grad(&f).unwrap();
        for i in [0, 31, 77] {
            let mut p = f.clone();
            p.data[i] += 1e-6;
            let mut m = f.clone();
            m.data[i] -= 1e-6;
            let fd = (softplus(-d.logit(&p).unwrap()) - softplus(-d.logit(&m).unwrap())) / 2e-6;
            assert!((fd - g.data[i]).abs() < 1e-7);
        }
    }
}
