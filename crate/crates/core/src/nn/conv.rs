use crate::image::Image;

/// Square-kernel 2-D convolution with zero padding.
///
/// Weights are laid out `[out][in][ky][kx]`, followed by nothing else; the
/// bias lives in a separate slice.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2d {
    pub cin: usize,
    pub cout: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    pub fn new(cin: usize, cout: usize, kernel: usize, stride: usize) -> Self {
        Self {
            cin,
            cout,
            kernel,
            stride,
            pad: kernel / 2,
        }
    }

    pub fn weight_len(&self) -> usize {
        self.cout * self.cin * self.kernel * self.kernel
    }

    pub fn out_size(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.pad - self.kernel) / self.stride + 1,
            (w + 2 * self.pad - self.kernel) / self.stride + 1,
        )
    }

    pub fn forward(&self, weight: &[f64], bias: &[f64], x: &Image) -> Image {
        debug_assert_eq!(x.channels, self.cin);
        let (oh, ow) = self.out_size(x.height, x.width);
        let mut out = Image::zeros(self.cout, oh, ow);
        let k = self.kernel;
        for co in 0..self.cout {
            out.plane_mut(co).fill(bias[co]);
            for ci in 0..self.cin {
                let src = x.plane(ci);
                for ky in 0..k {
                    for kx in 0..k {
                        let wv = weight[((co * self.cin + ci) * k + ky) * k + kx];
                        if wv == 0.0 {
                            continue;
                        }
                        let dst = out.plane_mut(co);
                        for oy in 0..oh {
                            let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                            if iy < 0 || iy >= x.height as isize {
                                continue;
                            }
                            let row = &src[iy as usize * x.width..(iy as usize + 1) * x.width];
                            let drow = &mut dst[oy * ow..(oy + 1) * ow];
                            for (ox, d) in drow.iter_mut().enumerate() {
                                let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                                if ix >= 0 && (ix as usize) < x.width {
                                    *d += wv * row[ix as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }

    /// Accumulates weight/bias gradients into `gw`/`gb` and returns the input
    /// gradient when `want_input` is set.
    pub fn backward(
        &self,
        weight: &[f64],
        x: &Image,
        gout: &Image,
        gw: Option<(&mut [f64], &mut [f64])>,
        want_input: bool,
    ) -> Option<Image> {
        let (oh, ow) = (gout.height, gout.width);
        let k = self.kernel;
        if let Some((gw, gb)) = gw {
            for co in 0..self.cout {
                gb[co] += gout.plane(co).iter().sum::<f64>();
                let g = gout.plane(co);
                for ci in 0..self.cin {
                    let src = x.plane(ci);
                    for ky in 0..k {
                        for kx in 0..k {
                            let mut acc = 0.0;
                            for oy in 0..oh {
                                let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                                if iy < 0 || iy >= x.height as isize {
                                    continue;
                                }
                                let row = &src[iy as usize * x.width..(iy as usize + 1) * x.width];
                                let grow = &g[oy * ow..(oy + 1) * ow];
                                for (ox, gv) in grow.iter().enumerate() {
                                    let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                                    if ix >= 0 && (ix as usize) < x.width {
                                        acc += gv * row[ix as usize];
                                    }
                                }
                            }
                            gw[((co * self.cin + ci) * k + ky) * k + kx] += acc;
                        }
                    }
                }
            }
        }
        if !want_input {
            return None;
        }
        let mut gx = Image::zeros(self.cin, x.height, x.width);
        for co in 0..self.cout {
            let g = gout.plane(co);
            for ci in 0..self.cin {
                for ky in 0..k {
                    for kx in 0..k {
                        let wv = weight[((co * self.cin + ci) * k + ky) * k + kx];
                        if wv == 0.0 {
                            continue;
                        }
                        let dst = gx.plane_mut(ci);
                        for oy in 0..oh {
                            let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                            if iy < 0 || iy >= x.height as isize {
                                continue;
                            }
                            let base = iy as usize * x.width;
                            let grow = &g[oy * ow..(oy + 1) * ow];
                            for (ox, gv) in grow.iter().enumerate() {
                                let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                                if ix >= 0 && (ix as usize) < x.width {
                                    dst[base + ix as usize] += wv * gv;
                                }
                            }
                        }
                    }
                }
            }
        }
        Some(gx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{normal_vec, stream_rng};

    fn dot(a: &Image, b: &Image) -> f64 {
        a.data.iter().zip(&b.data).map(|(x, y)| x * y).sum()
    }

    #[test]
    fn conv_gradients_match_finite_differences() {
        let mut rng = stream_rng(3, 0, 0);
        for stride in [1, 2] {
            let conv = Conv2d::new(2, 3, 3, stride);
            let w = normal_vec(&mut rng, conv.weight_len());
            let b = normal_vec(&mut rng, 3);
            let x = Image::from_vec(2, 5, 6, normal_vec(&mut rng, 60)).unwrap();
            let y = conv.forward(&w, &b, &x);
            let probe = Image::from_vec(3, y.height, y.width, normal_vec(&mut rng, y.data.len())).unwrap();
            let mut gw = vec![0.0; w.len()];
            let mut gb = vec![0.0; 3];
            let gx = conv.backward(&w, &x, &probe, Some((&mut gw, &mut gb)), true).unwrap();
            let h = 1e-6;
            for i in [0, 7, 19, w.len() - 1] {
                let mut wp = w.clone();
                wp[i] += h;
                let mut wm = w.clone();
                wm[i] -= h;
                let fd = (dot(&conv.forward(&wp, &b, &x), &probe) - dot(&conv.forward(&wm, &b, &x), &probe)) / (2.0 * h);
                assert!((fd - gw[i]).abs() < 1e-6, "w[{i}] {fd} vs {}", gw[i]);
            }
            for i in [0, 13, 29, 59] {
                let mut xp = x.clone();
                xp.data[i] += h;
                let mut xm = x.clone();
                xm.data[i] -= h;
                let fd = (dot(&conv.forward(&w, &b, &xp), &probe) - dot(&conv.forward(&w, &b, &xm), &probe)) / (2.0 * h);
                assert!((fd - gx.data[i]).abs() < 1e-6);
            }
            let sum: f64 = probe.plane(1).iter().sum();
            assert!((gb[1] - sum).abs() < 1e-12);
        }
    }

    #[test]
    fn stride_two_halves_resolution() {
        let conv = Conv2d::new(1, 1, 3, 2);
        assert_eq!(conv.out_size(32, 16), (16, 8));
    }
}
