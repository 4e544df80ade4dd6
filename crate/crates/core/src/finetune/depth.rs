use crate::error::{Error, Result};
use crate::features::FeatureExtractor;
use crate::generator::RenderedView;
use crate::image::Image;

pub const PSEUDO_GT_SIGMA: f64 = 1.5;

fn binarize(mask: &Image) -> Vec<bool> {
    mask.data.iter().map(|&m| m > 0.5).collect()
}

/// Normalized Gaussian smoothing of `depth` restricted to covered pixels.
/// Uncovered pixels are returned unchanged and never feed covered ones.
pub fn masked_smooth(depth: &Image, mask: &Image, sigma: f64) -> Image {
    let (h, w) = (depth.height, depth.width);
    let m = binarize(mask);
    let r = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-r..=r).map(|d| (-(d * d) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let mut out = depth.clone();
    for y in 0..h {
        for x in 0..w {
            if !m[y * w + x] {
                continue;
            }
            let (mut num, mut den) = (0.0, 0.0);
            for dy in -r..=r {
                let yy = y as isize + dy;
                if yy < 0 || yy >= h as isize {
                    continue;
                }
                for dx in -r..=r {
                    let xx = x as isize + dx;
                    if xx < 0 || xx >= w as isize {
                        continue;
                    }
                    let q = yy as usize * w + xx as usize;
                    if m[q] {
                        let k = kernel[(dy + r) as usize] * kernel[(dx + r) as usize];
                        num += k * depth.data[q];
                        den += k;
                    }
                }
            }
            out.data[y * w + x] = num / den;
        }
    }
    out
}

/// Smoothed depth proposal used as the depth target.
pub fn pseudo_gt_depth(view: &RenderedView) -> Image {
    masked_smooth(&view.depth, &view.mask, PSEUDO_GT_SIGMA)
}

fn check_shapes(pred: &Image, gt: &Image, mask: &Image) -> Result<()> {
    if pred.channels != 1 || !pred.same_shape(gt) || !pred.same_shape(mask) {
        return Err(Error::param("depth loss inputs must be equally sized single-channel maps"));
    }
    Ok(())
}

/// Mean absolute feature difference over the feature elements whose
/// receptive field touches the mask, with its gradient on `pred`.
pub fn feature_depth_loss_grad(pred: &Image, gt: &Image, mask: &Image, fx: &FeatureExtractor) -> Result<(f64, Image)> {
    check_shapes(pred, gt, mask)?;
    let (h, w) = (pred.height, pred.width);
    let m = binarize(mask);
    let zero_grad = Image::zeros(1, h, w);
    if !m.iter().any(|&b| b) {
        return Ok((0.0, zero_grad));
    }
    let apply = |img: &Image| {
        let mut o = img.clone();
        for (v, &keep) in o.data.iter_mut().zip(&m) {
            if !keep {
                *v = 0.0;
            }
        }
        o
    };
    let (mp, mg) = (apply(pred), apply(gt));
    let (fp, fg) = (fx.forward(&mp), fx.forward(&mg));
    let (m1, m2) = FeatureExtractor::receptive_masks(&m, h, w);
    let c = fp.level1.channels;
    let count = c * (m1.iter().filter(|&&b| b).count() + m2.iter().filter(|&&b| b).count());
    let mut sum = 0.0;
    let mut g1 = Image::zeros(c, fp.level1.height, fp.level1.width);
    let mut g2 = Image::zeros(c, fp.level2.height, fp.level2.width);
    for (a, b, g, rf) in [
        (&fp.level1, &fg.level1, &mut g1, &m1),
        (&fp.level2, &fg.level2, &mut g2, &m2),
    ] {
        let plane = a.height * a.width;
        for ch in 0..c {
            for (i, &on) in rf.iter().enumerate() {
                if !on {
                    continue;
                }
                let d = a.data[ch * plane + i] - b.data[ch * plane + i];
                sum += d.abs();
                let sign = if d == 0.0 { 0.0 } else { d.signum() };
                g.data[ch * plane + i] = sign / count as f64;
            }
        }
    }
    let gx = fx.backward(&mp, &fp, &g1, &g2);
    Ok((sum / count as f64, apply(&gx)))
}

pub fn feature_depth_loss(pred: &Image, gt: &Image, mask: &Image, fx: &FeatureExtractor) -> Result<f64> {
    Ok(feature_depth_loss_grad(pred, gt, mask, fx)?.0)
}
