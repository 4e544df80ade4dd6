//! Toy diffusion prior: training, classifier-free guidance, score
//! distillation gradients and img2img refinement.

mod corpus;
pub mod denoiser;
mod schedule;
mod vocab;

pub use corpus::{
    body_beta_offset, generate_corpus, Card, CardField, CardLabel, Corpus, CorpusConfig, SHOE_RGB, SKIN_RGB,
};
pub use denoiser::DenoiserConfig;
pub use schedule::DiffusionSchedule;
pub use vocab::{PromptEmbedding, PromptSlots, Vocabulary, BODY_NAMES, COLOR_NAMES, COLOR_RGB, NULL_TOKEN};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::body::RegionSet;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::nn::Adam;
use crate::rng::{normal_vec, stream, stream_rng};

/// Anything that predicts the noise in a noised image.
pub trait NoisePredictor {
    fn schedule(&self) -> &DiffusionSchedule;
    fn predict_noise(&self, noisy: &Image, t: usize, y: &PromptEmbedding) -> Image;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyPrior {
    pub denoiser: DenoiserConfig,
    pub params: Vec<f64>,
    pub schedule: DiffusionSchedule,
    pub vocab: Vocabulary,
}

impl ToyPrior {
    pub fn init(vocab: Vocabulary, schedule: DiffusionSchedule, channels: usize, seed: u64) -> Self {
        let denoiser = DenoiserConfig { channels, embed_dim: vocab.dim() };
        let params = denoiser::init_params(&denoiser, seed);
        Self { denoiser, params, schedule, vocab }
    }

    pub fn embed(&self, prompt: &str) -> Result<PromptEmbedding> {
        self.vocab.embed(prompt)
    }

    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        if self.params.len() != denoiser::DenoiserLayout::new(&self.denoiser).len {
            return Err(Error::param("prior parameter count does not match its layout"));
        }
        if self.denoiser.embed_dim != self.vocab.dim() {
            return Err(Error::param("prior embedding width does not match its vocabulary"));
        }
        Ok(())
    }

    /// Mean squared noise-prediction error of `x0` (in `[0, 1]`) at level `t`.
    pub fn denoise_loss(&self, x0: &Image, t: usize, eps: &[f64], y: &PromptEmbedding) -> f64 {
        let xt = self.schedule.add_noise(&to_signed(x0), t, eps);
        let pred = self.predict_noise(&xt, t, y);
        pred.data.iter().zip(eps).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / eps.len() as f64
    }
}

impl NoisePredictor for ToyPrior {
    fn schedule(&self) -> &DiffusionSchedule {
        &self.schedule
    }

    fn predict_noise(&self, noisy: &Image, t: usize, y: &PromptEmbedding) -> Image {
        denoiser::forward(&self.denoiser, &self.params, noisy, t, self.schedule.steps, &y.values).0
    }
}

fn to_signed(img: &Image) -> Image {
    img.map(|v| 2.0 * v - 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorTrainConfig {
    pub channels: usize,
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    /// Probability of replacing the whole conditioning with the null vector.
    pub cond_dropout: f64,
    /// Independent drop probability for each prompt slot.
    pub slot_dropout: f64,
    pub holdout_fraction: f64,
    pub seed: u64,
}

impl Default for PriorTrainConfig {
    fn default() -> Self {
        Self {
            channels: 16,
            steps: 1500,
            batch: 8,
            lr: 2e-3,
            cond_dropout: 0.1,
            slot_dropout: 0.15,
            holdout_fraction: 0.1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorTrainReport {
    pub initial_holdout_loss: f64,
    pub final_holdout_loss: f64,
    pub train_loss: Vec<f64>,
    pub null_conditioned_steps: usize,
}

/// Training embedding for one card with slot and full dropout applied.
fn dropped_embedding<R: Rng + ?Sized>(rng: &mut R, vocab: &Vocabulary, label: &CardLabel, cfg: &PriorTrainConfig) -> PromptEmbedding {
    let u: f64 = rng.random();
    if u < cfg.cond_dropout {
        return PromptEmbedding::null(vocab.dim());
    }
    let mut slots = label.slots();
    if rng.random::<f64>() < cfg.slot_dropout {
        slots.upper = None;
    }
    if rng.random::<f64>() < cfg.slot_dropout {
        slots.lower = None;
    }
    if rng.random::<f64>() < cfg.slot_dropout {
        slots.body = None;
    }
    vocab.embed_slots(&slots)
}

fn holdout_loss(prior: &ToyPrior, cards: &[&Card], seed: u64) -> f64 {
    let mut total = 0.0;
    for (i, c) in cards.iter().enumerate() {
        let mut rng = stream_rng(seed, stream::PRIOR_TRAIN, 1_000_000 + i as u64);
        let t = rng.random_range(1..=prior.schedule.steps);
        let eps = normal_vec(&mut rng, c.image.data.len());
        total += prior.denoise_loss(&c.image, t, &eps, &c.label.embedding(&prior.vocab));
    }
    total / cards.len() as f64
}

/// Trains a fresh denoiser on `corpus` with epsilon-prediction loss.
pub fn train_toy_prior(
    corpus: &Corpus,
    regions: &RegionSet,
    schedule: DiffusionSchedule,
    cfg: &PriorTrainConfig,
) -> Result<(ToyPrior, PriorTrainReport)> {
    corpus.validate()?;
    schedule.validate()?;
    if corpus.height % 2 != 0 || corpus.width % 2 != 0 {
        return Err(Error::param("corpus resolution must be even"));
    }
    if cfg.steps == 0 || cfg.batch == 0 || !(cfg.lr > 0.0) || !(0.0..1.0).contains(&cfg.cond_dropout) {
        return Err(Error::param("invalid prior training config"));
    }
    let vocab = Vocabulary::new(regions);
    let mut prior = ToyPrior::init(vocab, schedule, cfg.channels, cfg.seed);
    let n = corpus.cards.len();
    let n_hold = if n >= 10 { ((n as f64) * cfg.holdout_fraction).round() as usize } else { 0 };
    let (train, hold): (Vec<&Card>, Vec<&Card>) = if n_hold == 0 {
        (corpus.cards.iter().collect(), corpus.cards.iter().collect())
    } else {
        (corpus.cards[n_hold..].iter().collect(), corpus.cards[..n_hold].iter().collect())
    };
    let initial = holdout_loss(&prior, &hold, cfg.seed);
    let mut adam = Adam::new(prior.params.len(), cfg.lr);
    let mut grad = vec![0.0; prior.params.len()];
    let mut rng = stream_rng(cfg.seed, stream::PRIOR_TRAIN, 0);
    let mut history = Vec::with_capacity(cfg.steps);
    let mut nulls = 0;
    let steps = prior.schedule.steps;
    for step in 0..cfg.steps {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut loss = 0.0;
        for _ in 0..cfg.batch {
            let card = train[rng.random_range(0..train.len())];
            let t = rng.random_range(1..=steps);
            let eps = normal_vec(&mut rng, card.image.data.len());
            let y = dropped_embedding(&mut rng, &prior.vocab, &card.label, cfg);
            if y.is_null() {
                nulls += 1;
            }
            let xt = prior.schedule.add_noise(&to_signed(&card.image), t, &eps);
            let (pred, cache) = denoiser::forward(&prior.denoiser, &prior.params, &xt, t, steps, &y.values);
            let m = eps.len() as f64;
            let mut g = pred.clone();
            for (gv, (p, e)) in g.data.iter_mut().zip(pred.data.iter().zip(&eps)) {
                loss += (p - e) * (p - e) / m;
                *gv = 2.0 * (p - e) / (m * cfg.batch as f64);
            }
            denoiser::backward(&prior.denoiser, &prior.params, &cache, &g, &mut grad);
        }
        if !crate::nn::all_finite(&grad) {
            return Err(Error::NonFinite { what: "prior gradient".into(), iteration: step as u64 });
        }
        // cosine decay keeps late steps from bouncing around
        adam.lr = cfg.lr * 0.5 * (1.0 + (std::f64::consts::PI * step as f64 / cfg.steps as f64).cos());
        adam.step(&mut prior.params, &grad);
        history.push(loss / cfg.batch as f64);
    }
    let report = PriorTrainReport {
        initial_holdout_loss: initial,
        final_holdout_loss: holdout_loss(&prior, &hold, cfg.seed),
        train_loss: history,
        null_conditioned_steps: nulls,
    };
    Ok((prior, report))
}

/// `eps_u + s (eps_c - eps_u)`.
pub fn cfg_noise<P: NoisePredictor + ?Sized>(prior: &P, noisy: &Image, t: usize, y: &PromptEmbedding, s: f64) -> Result<Image> {
    prior.schedule().check_level(t)?;
    let eps_u = prior.predict_noise(noisy, t, &PromptEmbedding::null(y.dim()));
    let eps_c = prior.predict_noise(noisy, t, y);
    let mut out = eps_u.clone();
    for (o, c) in out.data.iter_mut().zip(&eps_c.data) {
        *o += s * (c - *o);
    }
    Ok(out)
}

/// Score-distillation gradient with respect to an rgb image in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SdsGrad {
    pub grad: Image,
    pub noise: Vec<f64>,
    pub predicted: Image,
    pub t: usize,
}

impl SdsGrad {
    /// `||w (eps_hat - eps)||^2 / 2`, logged as the SDS loss value.
    pub fn proxy_loss(&self) -> f64 {
        0.5 * self.grad.data.iter().map(|g| g * g).sum::<f64>()
    }
}

pub fn sds_grad<P: NoisePredictor + ?Sized, R: Rng + ?Sized>(
    prior: &P,
    image: &Image,
    y: &PromptEmbedding,
    t: usize,
    rng: &mut R,
    s: f64,
) -> Result<SdsGrad> {
    let eps = normal_vec(rng, image.data.len());
    sds_grad_with_noise(prior, image, y, t, eps, s)
}

pub fn sds_grad_with_noise<P: NoisePredictor + ?Sized>(
    prior: &P,
    image: &Image,
    y: &PromptEmbedding,
    t: usize,
    eps: Vec<f64>,
    s: f64,
) -> Result<SdsGrad> {
    prior.schedule().check_level(t)?;
    if eps.len() != image.data.len() {
        return Err(Error::param("noise length must match the image"));
    }
    let noisy = prior.schedule().add_noise(&to_signed(image), t, &eps);
    let predicted = cfg_noise(prior, &noisy, t, y, s)?;
    let w = prior.schedule().weight(t);
    let mut grad = predicted.clone();
    for (g, e) in grad.data.iter_mut().zip(&eps) {
        *g = w * (*g - e);
    }
    Ok(SdsGrad { grad, noise: eps, predicted, t })
}

/// Noises `image` to level `ceil(strength T)` and denoises it back with
/// deterministic DDIM steps under guidance `s`.
pub fn img2img_refine<P: NoisePredictor + ?Sized, R: Rng + ?Sized>(
    prior: &P,
    image: &Image,
    y: &PromptEmbedding,
    strength: f64,
    s: f64,
    rng: &mut R,
) -> Result<Image> {
    if !(strength > 0.0 && strength <= 1.0) {
        return Err(Error::param("img2img strength must lie in (0, 1]"));
    }
    let sched = prior.schedule();
    let t0 = ((strength * sched.steps as f64).ceil() as usize).clamp(1, sched.steps);
    let eps = normal_vec(rng, image.data.len());
    let mut x = sched.add_noise(&to_signed(image), t0, &eps);
    for t in (1..=t0).rev() {
        let e = cfg_noise(prior, &x, t, y, s)?;
        let ab = sched.alpha_bar[t];
        let ab_prev = sched.alpha_bar[t - 1];
        for (xv, ev) in x.data.iter_mut().zip(&e.data) {
            let x0 = (*xv - (1.0 - ab).sqrt() * ev) / ab.sqrt();
            *xv = ab_prev.sqrt() * x0 + (1.0 - ab_prev).sqrt() * ev;
        }
    }
    Ok(x.map(|v| ((v + 1.0) / 2.0).clamp(0.0, 1.0)))
}

fn pad_one(img: &Image, target: usize, background: &[f64; 3]) -> Image {
    let mut out = Image::zeros(img.channels, target, target);
    for c in 0..img.channels {
        out.plane_mut(c).fill(background[c.min(2)]);
    }
    let (oy, ox) = ((target - img.height) / 2, (target - img.width) / 2);
    for c in 0..img.channels {
        for y in 0..img.height {
            for x in 0..img.width {
                out.set(c, oy + y, ox + x, img.get(c, y, x));
            }
        }
    }
    out
}

/// Centers front and back views on square background canvases.
pub fn pad_views(front: &Image, back: &Image, target: usize, background: [f64; 3]) -> Result<(Image, Image)> {
    if !front.same_shape(back) {
        return Err(Error::param("front and back views must share a resolution"));
    }
    if target < front.height || target < front.width {
        return Err(Error::param(format!(
            "pad target {target} is smaller than the {}x{} input",
            front.height, front.width
        )));
    }
    Ok((pad_one(front, target, &background), pad_one(back, target, &background)))
}

/// Inverse of [`pad_views`] for one image.
pub fn crop_center(img: &Image, height: usize, width: usize) -> Result<Image> {
    if height > img.height || width > img.width {
        return Err(Error::param("crop larger than image"));
    }
    let (oy, ox) = ((img.height - height) / 2, (img.width - width) / 2);
    let mut out = Image::zeros(img.channels, height, width);
    for c in 0..img.channels {
        for y in 0..height {
            for x in 0..width {
                out.set(c, y, x, img.get(c, oy + y, ox + x));
            }
        }
    }
    Ok(out)
}
