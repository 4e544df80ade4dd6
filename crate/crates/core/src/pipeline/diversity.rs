use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureExtractor;
use crate::generator::RenderedView;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiversityReport {
    /// Distances in `(i, j)` order with `i < j`.
    pub distances: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    pub samples: usize,
    pub extractor_seed: u64,
    pub prompt: String,
    pub p: f64,
}

/// Mean and population standard deviation of all pairwise Euclidean
/// distances between frozen-extractor embeddings of the views' rgb.
pub fn diversity_score(views: &[RenderedView], extractor_seed: u64, prompt: &str, p: f64) -> Result<DiversityReport> {
    if views.len() < 2 {
        return Err(Error::param(format!("diversity needs at least 2 views, got {}", views.len())));
    }
    let res = views[0].resolution();
    if views.iter().any(|v| v.resolution() != res) {
        return Err(Error::param("diversity views must share one resolution"));
    }
    let fx = FeatureExtractor::new(3, extractor_seed);
    let feats: Vec<Vec<f64>> = views.iter().map(|v| fx.forward(&v.rgb).flatten()).collect();
    let mut distances = Vec::with_capacity(views.len() * (views.len() - 1) / 2);
    for i in 0..feats.len() {
        for j in i + 1..feats.len() {
            distances.push(feats[i].iter().zip(&feats[j]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt());
        }
    }
    let n = distances.len() as f64;
    let mean = distances.iter().sum::<f64>() / n;
    let std = (distances.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / n).sqrt();
    Ok(DiversityReport { distances, mean, std, samples: views.len(), extractor_seed, prompt: prompt.into(), p })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::body::Camera;
    use crate::image::Image;

    fn view(v: f64) -> RenderedView {
        RenderedView {
            rgb: Image::filled(3, 16, 8, v),
            depth: Image::zeros(1, 16, 8),
            mask: Image::zeros(1, 16, 8),
            cam: Camera::new(0.0, 0.0, 3.0, 0.6, [0.0; 3]).unwrap(),
            near: 0.1,
            far: 5.0,
        }
    }

    #[test]
    fn identical_views_have_zero_spread() {
        let r = diversity_score(&vec![view(0.3); 4], 0, "x", 0.1).unwrap();
        assert_eq!((r.mean, r.std, r.distances.len()), (0.0, 0.0, 6));
    }

    #[test]
    fn black_white_matches_direct_recomputation() {
        let r = diversity_score(&[view(0.0), view(1.0)], 5, "x", 1.0).unwrap();
        let fx = FeatureExtractor::new(3, 5);
        let (a, b) = (fx.forward(&view(0.0).rgb).flatten(), fx.forward(&view(1.0).rgb).flatten());
        let d = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        assert_eq!(r.distances.len(), 1);
        assert!((r.mean - d).abs() < 1e-6 && d > 0.0);
    }

    #[test]
    fn needs_two_views() {
        assert!(diversity_score(&[view(0.0)], 0, "x", 0.1).is_err());
    }
}
