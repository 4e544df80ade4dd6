//! Frozen random-weight conv pyramid used as a perceptual feature space.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::nn::Conv2d;
use crate::rng::{normal_vec, stream, stream_rng};

pub const FEATURE_CHANNELS: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureExtractor {
    pub cin: usize,
    pub seed: u64,
    w1: Vec<f64>,
    b1: Vec<f64>,
    w2: Vec<f64>,
    b2: Vec<f64>,
}

/// Both pyramid levels plus their pre-activations.
pub struct Features {
    pub level1: Image,
    pub level2: Image,
    pre1: Image,
    pre2: Image,
}

impl Features {
    pub fn flatten(&self) -> Vec<f64> {
        let mut v = self.level1.data.clone();
        v.extend_from_slice(&self.level2.data);
        v
    }
}

impl FeatureExtractor {
    /// Layer scales are chosen so inputs of magnitude ~3 stay well inside
    /// the tanh's linear-ish range.
    pub fn new(cin: usize, seed: u64) -> Self {
        let mut rng = stream_rng(seed, stream::EXTRACTOR, cin as u64);
        let l1 = Self::layer1_conv(cin);
        let l2 = Self::layer2_conv();
        let s1 = 0.15 / (9.0 * cin as f64).sqrt();
        let s2 = 1.0 / (9.0 * FEATURE_CHANNELS as f64).sqrt();
        Self {
            cin,
            seed,
            w1: normal_vec(&mut rng, l1.weight_len()).into_iter().map(|v| v * s1).collect(),
            b1: normal_vec(&mut rng, FEATURE_CHANNELS).into_iter().map(|v| v * 0.05).collect(),
            w2: normal_vec(&mut rng, l2.weight_len()).into_iter().map(|v| v * s2).collect(),
            b2: normal_vec(&mut rng, FEATURE_CHANNELS).into_iter().map(|v| v * 0.05).collect(),
        }
    }

    fn layer1_conv(cin: usize) -> Conv2d {
        Conv2d::new(cin, FEATURE_CHANNELS, 3, 1)
    }

    fn layer2_conv() -> Conv2d {
        Conv2d::new(FEATURE_CHANNELS, FEATURE_CHANNELS, 3, 2)
    }

    pub fn forward(&self, x: &Image) -> Features {
        assert_eq!(x.channels, self.cin, "extractor channel mismatch");
        let pre1 = Self::layer1_conv(self.cin).forward(&self.w1, &self.b1, x);
        let level1 = pre1.map(f64::tanh);
        let pre2 = Self::layer2_conv().forward(&self.w2, &self.b2, &level1);
        let level2 = pre2.map(f64::tanh);
        Features { level1, level2, pre1, pre2 }
    }

    /// Input gradient for upstream gradients on both levels.
    pub fn backward(&self, x: &Image, f: &Features, g1: &Image, g2: &Image) -> Image {
        let tanh_back = |g: &Image, pre: &Image| {
            let mut out = g.clone();
            for (o, p) in out.data.iter_mut().zip(&pre.data) {
                let t = p.tanh();
                *o *= 1.0 - t * t;
            }
            out
        };
        let ga2 = tanh_back(g2, &f.pre2);
        let mut gl1 = Self::layer2_conv()
            .backward(&self.w2, &f.level1, &ga2, None, true)
            .expect("input gradient requested");
        for (a, b) in gl1.data.iter_mut().zip(&g1.data) {
            *a += b;
        }
        let ga1 = tanh_back(&gl1, &f.pre1);
        Self::layer1_conv(self.cin)
            .backward(&self.w1, x, &ga1, None, true)
            .expect("input gradient requested")
    }

    /// Which feature positions of each level see at least one `true` input
    /// pixel through their receptive field.
    pub fn receptive_masks(mask: &[bool], height: usize, width: usize) -> (Vec<bool>, Vec<bool>) {
        let dilate = |src: &[bool], h: usize, w: usize, stride: usize| {
            let (oh, ow) = ((h - 1) / stride + 1, (w - 1) / stride + 1);
            let mut out = vec![false; oh * ow];
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut hit = false;
                    for dy in 0..3 {
                        for dx in 0..3 {
                            let iy = (oy * stride + dy) as isize - 1;
                            let ix = (ox * stride + dx) as isize - 1;
                            if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                                hit |= src[iy as usize * w + ix as usize];
                            }
                        }
                    }
                    out[oy * ow + ox] = hit;
                }
            }
            out
        };
        let m1 = dilate(mask, height, width, 1);
        let m2 = dilate(&m1, height, width, 2);
        (m1, m2)
    }
}

/// Mean pairwise Euclidean distance between feature vectors of `images`.
pub fn pairwise_diversity(images: &[Image], extractor: &FeatureExtractor) -> Result<f64> {
    if images.len() < 2 {
        return Err(Error::param("diversity needs at least two images"));
    }
    let feats: Vec<Vec<f64>> = images.iter().map(|im| extractor.forward(im).flatten()).collect();
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..feats.len() {
        for j in i + 1..feats.len() {
            if feats[i].len() != feats[j].len() {
                return Err(Error::param("diversity images must share a resolution"));
            }
            total += feats[i].iter().zip(&feats[j]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            pairs += 1;
        }
    }
    Ok(total / pairs as f64)
}
