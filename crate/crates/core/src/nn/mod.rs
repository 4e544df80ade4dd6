//! Minimal dense/convolutional layers with hand-written backward passes.
//!
//! All models in the crate keep their parameters in one flat `Vec<f64>`;
//! layers here operate on slices of it so optimizers, checkpoints and
//! finite-difference checks all see the same buffer.

mod adam;
mod conv;

pub use adam::Adam;
pub use conv::Conv2d;

use std::ops::Range;

/// Allocates consecutive ranges inside a flat parameter vector.
#[derive(Debug, Default, Clone)]
pub struct LayoutBuilder {
    len: usize,
}

impl LayoutBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn take(&mut self, n: usize) -> Range<usize> {
        let r = self.len..self.len + n;
        self.len += n;
        r
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

/// `out = W·x + b` with `W` stored row-major as `[out][in]`.
pub fn dense_forward(w: &[f64], b: &[f64], x: &[f64], out: &mut [f64]) {
    let n_in = x.len();
    for (o, (row, bias)) in out.iter_mut().zip(w.chunks_exact(n_in).zip(b)) {
        *o = bias + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

/// Accumulates parameter gradients of [`dense_forward`] and, when requested,
/// writes the input gradient.
pub fn dense_backward(
    w: &[f64],
    x: &[f64],
    gout: &[f64],
    gw: &mut [f64],
    gb: &mut [f64],
    gx: Option<&mut [f64]>,
) {
    let n_in = x.len();
    for (o, &g) in gout.iter().enumerate() {
        if g == 0.0 {
            continue;
        }
        gb[o] += g;
        let row = &mut gw[o * n_in..(o + 1) * n_in];
        for (r, &xi) in row.iter_mut().zip(x) {
            *r += g * xi;
        }
    }
    if let Some(gx) = gx {
        gx.fill(0.0);
        for (o, &g) in gout.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            let row = &w[o * n_in..(o + 1) * n_in];
            for (gi, &wi) in gx.iter_mut().zip(row) {
                *gi += g * wi;
            }
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
pub fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

#[inline]
pub fn silu_grad(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn all_finite(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dense_backward_matches_finite_differences() {
        let w = vec![0.3, -0.2, 0.5, 0.1, 0.7, -0.4];
        let b = vec![0.05, -0.1];
        let x = vec![1.0, -2.0, 0.5];
        let gout = vec![0.7, -1.3];
        let loss = |w: &[f64], x: &[f64]| {
            let mut o = vec![0.0; 2];
            dense_forward(w, &b, x, &mut o);
            o[0] * gout[0] + o[1] * gout[1]
        };
        let mut gw = vec![0.0; 6];
        let mut gb = vec![0.0; 2];
        let mut gx = vec![0.0; 3];
        dense_backward(&w, &x, &gout, &mut gw, &mut gb, Some(&mut gx));
        let h = 1e-6;
        for i in 0..6 {
            let mut wp = w.clone();
            wp[i] += h;
            let mut wm = w.clone();
            wm[i] -= h;
            let fd = (loss(&wp, &x) - loss(&wm, &x)) / (2.0 * h);
            assert!((fd - gw[i]).abs() < 1e-8);
        }
        for i in 0..3 {
            let mut xp = x.clone();
            xp[i] += h;
            let mut xm = x.clone();
            xm[i] -= h;
            let fd = (loss(&w, &xp) - loss(&w, &xm)) / (2.0 * h);
            assert!((fd - gx[i]).abs() < 1e-8);
        }
        assert_eq!(gb, gout);
    }

    #[test]
    fn softplus_is_stable() {
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
        assert_eq!(softplus(1000.0), 1000.0);
        assert!(softplus(-1000.0) >= 0.0);
    }
}
