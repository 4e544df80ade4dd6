//! Compositional neural-field generator.
//!
//! Each body part owns a small sinusoidal MLP over box-normalized local
//! coordinates. The latent vector is mapped by one affine layer to per-part,
//! per-layer frequency (`gamma`) and phase (`beta`) modulation of the sine
//! activations. Density is a soft body template plus a learned residual, so
//! a freshly initialized model already renders a plausible silhouette while
//! its appearance follows the latent.

mod field;
mod grid;
mod render;

pub use field::{blend_weight, template_logit, ConstantField, PartEval, PosedGenerator, RadianceField};
pub use grid::{extract_density_grid, DensityGrid};
pub use render::{
    composite, composite_backward, render_field, render_view, render_with_tape, trace_ray, RayTrace,
    RenderConfig, RenderTape, RenderedView, ViewGrad,
};

use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::body::Skeleton;
use crate::error::{Error, Result};
use crate::nn::LayoutBuilder;
use crate::rng::{normal_vec, stream_rng, stream};

/// Generator input: a standard-normal latent vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentNoise {
    pub z: Vec<f64>,
}

impl LatentNoise {
    pub fn sample<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> Self {
        Self { z: normal_vec(rng, dim) }
    }

    pub fn zeros(dim: usize) -> Self {
        Self { z: vec![0.0; dim] }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.z.len() != dim {
            return Err(Error::param(format!("latent has length {} but the generator expects {dim}", self.z.len())));
        }
        if self.z.iter().any(|v| !v.is_finite()) {
            return Err(Error::param("latent contains non-finite entries"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub latent_dim: usize,
    pub hidden: usize,
    pub layers: usize,
    /// Frequency multiplier of the first sine layer.
    pub first_omega: f64,
    pub hidden_omega: f64,
    /// Standard deviation of the latent-driven phase shift at init.
    pub phase_std: f64,
    /// Standard deviation of the latent-driven frequency scale at init.
    pub freq_std: f64,
    pub density_max: f64,
    /// Sigmoid softness of the template surface, in body units.
    pub softness: f64,
    /// Template superellipsoid radius in box-normalized units.
    pub template_radius: f64,
    /// Scale applied to the network's density residual (body units).
    pub residual_scale: f64,
    /// Falloff width of the blend window as a fraction of each half extent.
    pub blend_margin: f64,
    pub skeleton: Skeleton,
    pub render: RenderConfig,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            latent_dim: 64,
            hidden: 32,
            layers: 2,
            first_omega: 6.0,
            hidden_omega: 1.0,
            phase_std: 1.0,
            freq_std: 0.1,
            density_max: 40.0,
            softness: 0.025,
            template_radius: 0.9,
            residual_scale: 0.05,
            blend_margin: 0.25,
            skeleton: Skeleton::default(),
            render: RenderConfig::default(),
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        self.skeleton.validate()?;
        if self.latent_dim == 0 || self.hidden == 0 || self.layers == 0 {
            return Err(Error::param("generator dimensions must be positive"));
        }
        if !(self.density_max >= 0.0 && self.softness > 0.0 && self.template_radius > 0.0) {
            return Err(Error::param("density parameters out of range"));
        }
        if !(self.blend_margin > 0.0 && self.blend_margin <= 1.0) {
            return Err(Error::param("blend margin must lie in (0, 1]"));
        }
        self.render.validate()
    }
}

/// Offsets of one part network inside the flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct PartLayout {
    /// `(weight, bias)` of each sine layer; the first maps 3 → hidden.
    pub layers: Vec<(Range<usize>, Range<usize>)>,
    pub out_w: Range<usize>,
    pub out_b: Range<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorLayout {
    pub parts: Vec<PartLayout>,
    /// `[mod_outputs × latent_dim]` affine map and its offset.
    pub mod_w: Range<usize>,
    pub mod_b: Range<usize>,
    pub len: usize,
}

/// Output channels of each part network: density residual then rgb logits.
pub const PART_OUTPUTS: usize = 4;

impl GeneratorLayout {
    pub fn new(cfg: &GeneratorConfig) -> Self {
        let mut b = LayoutBuilder::new();
        let h = cfg.hidden;
        let parts = (0..cfg.skeleton.joint_count())
            .map(|_| {
                let layers = (0..cfg.layers)
                    .map(|l| {
                        let fan_in = if l == 0 { 3 } else { h };
                        (b.take(h * fan_in), b.take(h))
                    })
                    .collect();
                PartLayout {
                    layers,
                    out_w: b.take(PART_OUTPUTS * h),
                    out_b: b.take(PART_OUTPUTS),
                }
            })
            .collect::<Vec<_>>();
        let mod_out = Self::mod_outputs(cfg);
        let mod_w = b.take(mod_out * cfg.latent_dim);
        let mod_b = b.take(mod_out);
        Self {
            parts,
            mod_w,
            mod_b,
            len: b.len(),
        }
    }

    /// gamma and beta for every (part, layer, unit).
    pub fn mod_outputs(cfg: &GeneratorConfig) -> usize {
        cfg.skeleton.joint_count() * cfg.layers * cfg.hidden * 2
    }

    /// Index of the gamma (or beta) entry for `(part, layer, unit)` in the
    /// modulation vector.
    #[inline]
    pub fn mod_index(cfg: &GeneratorConfig, part: usize, layer: usize, unit: usize, is_beta: bool) -> usize {
        (((part * cfg.layers + layer) * 2 + usize::from(is_beta)) * cfg.hidden) + unit
    }
}

/// Per-latent modulation: `gamma` (frequency scale) and `beta` (phase) for
/// every sine unit, stored interleaved per `(part, layer)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Modulation {
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorModel {
    pub config: GeneratorConfig,
    pub params: Vec<f64>,
}

impl GeneratorModel {
    /// Seeded initialization that plays the role of the pretrained generator:
    /// body-shaped density and latent-dependent appearance.
    pub fn init(config: GeneratorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let layout = GeneratorLayout::new(&config);
        let mut rng = stream_rng(seed, stream::INIT, 0);
        let mut params = vec![0.0; layout.len];
        let h = config.hidden;
        for part in &layout.parts {
            for (l, (w, b)) in part.layers.iter().enumerate() {
                let bound = if l == 0 { 1.0 / 3.0 } else { (6.0 / h as f64).sqrt() };
                for v in &mut params[w.clone()] {
                    *v = rng.random_range(-bound..bound);
                }
                let bb = 1.0 / ((if l == 0 { 3 } else { h }) as f64).sqrt();
                for v in &mut params[b.clone()] {
                    *v = rng.random_range(-bb..bb);
                }
            }
            let bound = (6.0 / h as f64).sqrt() * 0.5;
            for (i, v) in params[part.out_w.clone()].iter_mut().enumerate() {
                let scale = if i < h { 0.1 } else { 1.0 };
                *v = scale * rng.random_range(-bound..bound);
            }
        }
        let zd = config.latent_dim;
        let mod_w = layout.mod_w.start;
        for part in 0..config.skeleton.joint_count() {
            for layer in 0..config.layers {
                for unit in 0..h {
                    for (is_beta, std) in [(false, config.freq_std), (true, config.phase_std)] {
                        let row = GeneratorLayout::mod_index(&config, part, layer, unit, is_beta);
                        let s = std / (zd as f64).sqrt();
                        for j in 0..zd {
                            params[mod_w + row * zd + j] = s * crate::rng::normal(&mut rng);
                        }
                    }
                }
            }
        }
        Ok(Self { config, params })
    }

    pub fn layout(&self) -> GeneratorLayout {
        GeneratorLayout::new(&self.config)
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn modulation(&self, z: &LatentNoise) -> Modulation {
        let layout = self.layout();
        let zd = self.config.latent_dim;
        let w = &self.params[layout.mod_w.clone()];
        let b = &self.params[layout.mod_b.clone()];
        let values = b
            .iter()
            .enumerate()
            .map(|(row, &bias)| bias + w[row * zd..(row + 1) * zd].iter().zip(&z.z).map(|(a, b)| a * b).sum::<f64>())
            .collect();
        Modulation { values }
    }

    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        if self.params.len() != self.layout().len {
            return Err(Error::param("parameter vector does not match the generator layout"));
        }
        if !crate::nn::all_finite(&self.params) {
            return Err(Error::param("generator parameters contain non-finite values"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_covers_every_parameter() {
        let cfg = GeneratorConfig::default();
        let layout = GeneratorLayout::new(&cfg);
        assert_eq!(layout.parts.len(), 9);
        assert_eq!(layout.mod_b.end, layout.len);
        let m = GeneratorModel::init(cfg, 1).unwrap();
        m.validate().unwrap();
    }

    #[test]
    fn init_is_seeded() {
        let a = GeneratorModel::init(GeneratorConfig::default(), 5).unwrap();
        let b = GeneratorModel::init(GeneratorConfig::default(), 5).unwrap();
        let c = GeneratorModel::init(GeneratorConfig::default(), 6).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.params, c.params);
    }

    #[test]
    fn latent_length_is_checked() {
        assert!(LatentNoise::zeros(3).validate(64).is_err());
        assert!(LatentNoise::zeros(64).validate(64).is_ok());
    }
}
