//! Generator fine-tuning: strategic latent schedule, adversarial and
//! distillation losses, and the feature-space depth regularizer.

mod depth;
mod gan;

pub use depth::{feature_depth_loss, feature_depth_loss_grad, masked_smooth, pseudo_gt_depth, PSEUDO_GT_SIGMA};
pub use gan::{gan_losses, DiscPass, Discriminator, GanLosses};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::body::{sample_region, ParamDistributions, RegionName, RegionSet};
use crate::error::{Error, Result};
use crate::features::FeatureExtractor;
use crate::generator::{render_with_tape, GeneratorModel, LatentNoise, RenderedView, ViewGrad};
use crate::image::Image;
use crate::nn::{all_finite, Adam};
use crate::prior::{sds_grad, NoisePredictor, PromptEmbedding};
use crate::rng::{stream, stream_rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LatentKind {
    Fresh,
    Fixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedulePolicy {
    pub p: f64,
    pub fixed_z: LatentNoise,
}

impl NoiseSchedulePolicy {
    pub fn new(p: f64, fixed_z: LatentNoise) -> Result<Self> {
        let policy = Self { p, fixed_z };
        policy.validate()?;
        Ok(policy)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p) {
            return Err(Error::param(format!("fresh-latent probability {} outside [0, 1]", self.p)));
        }
        Ok(())
    }
}

/// One uniform draw decides fresh versus fixed; a fresh latent then takes
/// `dim` normal draws from the same stream.
pub fn next_latent<R: Rng + ?Sized>(policy: &NoiseSchedulePolicy, rng: &mut R) -> (LatentNoise, LatentKind) {
    let u: f64 = rng.random();
    if u < policy.p {
        (LatentNoise::sample(rng, policy.fixed_z.z.len()), LatentKind::Fresh)
    } else {
        (policy.fixed_z.clone(), LatentKind::Fixed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_sds: f64,
    pub lambda_depth: f64,
    pub lambda_adv: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { lambda_sds: 1.0, lambda_depth: 1.0, lambda_adv: 1.0 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("lambda_sds", self.lambda_sds), ("lambda_depth", self.lambda_depth), ("lambda_adv", self.lambda_adv)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::param(format!("{name} must be finite and non-negative")));
            }
        }
        Ok(())
    }
}

/// `lambda_adv adv + lambda_sds sds + lambda_depth depth`.
pub fn total_loss(adv: f64, sds_proxy: f64, depth: f64, weights: &LossWeights, iteration: u64) -> Result<f64> {
    for (what, v) in [("adversarial loss", adv), ("sds loss", sds_proxy), ("depth loss", depth)] {
        if !v.is_finite() {
            return Err(Error::NonFinite { what: what.into(), iteration });
        }
    }
    Ok(weights.lambda_adv * adv + weights.lambda_sds * sds_proxy + weights.lambda_depth * depth)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinetuneConfig {
    pub p: f64,
    pub weights: LossWeights,
    pub cfg_scale: f64,
    pub iterations: u64,
    /// Render `(height, width)`.
    pub resolution: [usize; 2],
    pub lr_generator: f64,
    pub lr_discriminator: f64,
    pub r1_gamma: f64,
    pub disc_hidden: usize,
    pub prompt: String,
    pub freeze_discriminator: bool,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            p: 0.1,
            weights: LossWeights::default(),
            cfg_scale: 100.0,
            iterations: 5000,
            resolution: [64, 32],
            lr_generator: 1e-4,
            lr_discriminator: 2e-4,
            r1_gamma: 1.0,
            disc_hidden: 64,
            prompt: "red upper, blue lower".into(),
            freeze_discriminator: false,
        }
    }
}

impl FinetuneConfig {
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        if !(0.0..=1.0).contains(&self.p) {
            return Err(Error::param("p must lie in [0, 1]"));
        }
        if !self.cfg_scale.is_finite() || !(self.lr_generator > 0.0) || !(self.lr_discriminator > 0.0) {
            return Err(Error::param("guidance scale and learning rates must be finite and positive"));
        }
        if self.resolution.iter().any(|&r| r == 0) || self.disc_hidden == 0 || self.r1_gamma < 0.0 {
            return Err(Error::param("invalid resolution, discriminator width or penalty"));
        }
        if self.prompt.trim().is_empty() {
            return Err(Error::param("prompt must not be empty"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub iteration: u64,
    pub fresh: bool,
    pub region: RegionName,
    pub t: usize,
    pub adv_generator: f64,
    pub discriminator: f64,
    pub r1: f64,
    pub sds: f64,
    pub depth: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub config: FinetuneConfig,
    pub seed: u64,
    pub iteration: u64,
    pub generator: GeneratorModel,
    pub discriminator: Discriminator,
    pub opt_generator: Adam,
    pub opt_discriminator: Adam,
    pub policy: NoiseSchedulePolicy,
    pub history: Vec<StepRecord>,
}

impl TrainState {
    /// `disc_res` is the resolution of the real images.
    pub fn new(config: FinetuneConfig, generator: GeneratorModel, disc_res: (usize, usize), seed: u64) -> Result<Self> {
        config.validate()?;
        generator.validate()?;
        let fixed = LatentNoise::sample(&mut stream_rng(seed, stream::FIXED_LATENT, 0), generator.config.latent_dim);
        let policy = NoiseSchedulePolicy::new(config.p, fixed)?;
        let discriminator = Discriminator::new(disc_res.0, disc_res.1, config.disc_hidden, seed)?;
        Ok(Self {
            opt_generator: Adam::new(generator.param_count(), config.lr_generator),
            opt_discriminator: Adam::new(discriminator.params.len(), config.lr_discriminator),
            config,
            seed,
            iteration: 0,
            generator,
            discriminator,
            policy,
            history: Vec::new(),
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        self.generator.validate()?;
        self.policy.validate()?;
        if self.history.len() as u64 != self.iteration {
            return Err(Error::param("loss history length must equal the iteration count"));
        }
        Ok(())
    }
}

/// Frozen inputs of a fine-tuning run.
pub struct FinetuneContext<'a> {
    pub prior: &'a dyn NoisePredictor,
    /// Prompt embedding for each region, indexed by `RegionName::index`.
    pub embeddings: Vec<PromptEmbedding>,
    pub regions: &'a RegionSet,
    pub distributions: &'a ParamDistributions,
    /// Full-body real images at the prior's resolution.
    pub real: Vec<&'a Image>,
    pub prior_res: (usize, usize),
    pub extractor: &'a FeatureExtractor,
}

fn pool_to(img: &Image, res: (usize, usize)) -> Result<Image> {
    img.downsample_to(res.0, res.1)
}

/// Adjoint of [`pool_to`].
fn unpool_from(grad: &Image, res: (usize, usize)) -> Image {
    let mut g = grad.clone();
    while g.height < res.0 {
        g = Image::downsample2_backward(&g, g.height * 2, g.width * 2);
    }
    g
}

/// Generator-side gradients of one iteration before the optimizer step.
pub struct StepGradients {
    pub record: StepRecord,
    pub generator: Vec<f64>,
    pub discriminator: Vec<f64>,
    pub full: RenderedView,
}

/// Computes the losses and gradients of iteration `state.iteration`
/// without touching any parameters.
pub fn compute_step(state: &TrainState, ctx: &FinetuneContext) -> Result<StepGradients> {
    let it = state.iteration;
    let cfg = &state.config;
    let w = cfg.weights;
    let res = (cfg.resolution[0], cfg.resolution[1]);
    let (z, kind) = next_latent(&state.policy, &mut stream_rng(state.seed, stream::SCHEDULE, it));
    let params = ctx.distributions.sample_body_params(&mut stream_rng(state.seed, stream::BODY, it));
    let region = sample_region(&mut stream_rng(state.seed, stream::REGION, it), ctx.regions);
    let model = &state.generator;

    let (full, full_tape) = render_with_tape(model, &z, &params, &params.cam, res)?;
    let mut full_grad = ViewGrad::zeros(res.0, res.1);
    let zoomed = if region == RegionName::FullBody {
        None
    } else {
        let cam = ctx.regions.get(region).camera_for(&params.cam);
        Some(render_with_tape(model, &z, &params, &cam, res)?)
    };

    // score distillation on the (possibly zoomed) view
    let sds_view = zoomed.as_ref().map_or(&full, |(v, _)| v);
    let sds_img = pool_to(&sds_view.rgb.clamp01(), ctx.prior_res)?;
    let mut sds_rng = stream_rng(state.seed, stream::SDS, it);
    let t = ctx.prior.schedule().sample_sds_level(&mut sds_rng);
    let sds = sds_grad(ctx.prior, &sds_img, &ctx.embeddings[region.index()], t, &mut sds_rng, cfg.cfg_scale)?;
    let sds_up = unpool_from(&sds.grad, res).map(|g| g * w.lambda_sds);
    let mut zoom_grad = ViewGrad::zeros(res.0, res.1);
    if zoomed.is_some() {
        zoom_grad.rgb = sds_up;
    } else {
        full_grad.rgb = sds_up;
    }

    // depth regularizer on the full view
    let gt = pseudo_gt_depth(&full);
    let (depth_loss, depth_grad) = feature_depth_loss_grad(&full.depth, &gt, &full.mask, ctx.extractor)?;
    for (a, b) in full_grad.depth.data.iter_mut().zip(&depth_grad.data) {
        *a += w.lambda_depth * b;
    }

    // adversarial terms against a real full-body card
    let fake = pool_to(&full.rgb, ctx.prior_res)?;
    let mut real_rng = stream_rng(state.seed, stream::REAL, it);
    let real = ctx.real[real_rng.random_range(0..ctx.real.len())];
    let (adv_g, g_fake) = state.discriminator.generator_image_grad(&fake)?;
    let (gan, d_grad) = state.discriminator.losses_and_grad(&fake, real, cfg.r1_gamma)?;
    if w.lambda_adv != 0.0 {
        let g = unpool_from(&g_fake, res);
        for (a, b) in full_grad.rgb.data.iter_mut().zip(&g.data) {
            *a += w.lambda_adv * b;
        }
    }

    let mut g_grad = vec![0.0; model.param_count()];
    full_tape.backward(model, &full_grad, &mut g_grad);
    if let Some((_, tape)) = &zoomed {
        tape.backward(model, &zoom_grad, &mut g_grad);
    }
    if !all_finite(&g_grad) {
        return Err(Error::NonFinite { what: "generator gradient".into(), iteration: it });
    }
    if !all_finite(&d_grad) {
        return Err(Error::NonFinite { what: "discriminator gradient".into(), iteration: it });
    }
    let total = total_loss(adv_g, sds.proxy_loss(), depth_loss, &w, it)?;
    let record = StepRecord {
        iteration: it,
        fresh: kind == LatentKind::Fresh,
        region,
        t,
        adv_generator: adv_g,
        discriminator: gan.discriminator,
        r1: gan.r1,
        sds: sds.proxy_loss(),
        depth: depth_loss,
        total,
    };
    let d_scaled = d_grad.iter().map(|g| g * w.lambda_adv).collect();
    Ok(StepGradients { record, generator: g_grad, discriminator: d_scaled, full })
}

/// One fine-tuning iteration; returns its loss record.
pub fn finetune_step(state: &mut TrainState, ctx: &FinetuneContext) -> Result<StepRecord> {
    let step = compute_step(state, ctx)?;
    state.opt_generator.step(&mut state.generator.params, &step.generator);
    let frozen = state.config.freeze_discriminator || state.config.weights.lambda_adv == 0.0;
    if !frozen {
        state.opt_discriminator.step(&mut state.discriminator.params, &step.discriminator);
    }
    state.iteration += 1;
    state.history.push(step.record.clone());
    Ok(step.record)
}
