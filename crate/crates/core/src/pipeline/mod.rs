//! Run orchestration behind the command-line verbs: configuration, cached
//! artifacts, manifests, sampling, diversity evaluation, the `p` ablation
//! and the mesh stage.

mod config;
mod container;
mod diversity;
mod plot;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use config::{content_hash, MeshOptions, PriorOptions, RunConfig};
pub use container::{write_atomic, Container, Header, SectionInfo, MAGIC, VERSION};
pub use diversity::{diversity_score, DiversityReport};
pub use plot::{line_plot, smooth};

use crate::body::{BodyParams, Camera, ParamDistributions, RegionName, RegionSet};
use crate::error::{Error, Result};
use crate::features::FeatureExtractor;
use crate::finetune::{compute_step, finetune_step, Discriminator, FinetuneContext, StepRecord, TrainState};
use crate::generator::{
    extract_density_grid, render_field, render_view, GeneratorConfig, GeneratorModel, LatentNoise, PosedGenerator,
    RadianceField, RenderConfig, RenderedView,
};
use crate::image::Image;
use crate::mesh::{
    export_mesh, marching_tets, mesh_finetune_step, rasterize, ColorMlp, ConditionView, MeshFormat, MeshOptState,
    MeshStepRecord, TetGrid, TexturedMesh,
};
use crate::prior::{
    generate_corpus, img2img_refine, pad_views, train_toy_prior, Corpus, DenoiserConfig,
    DiffusionSchedule, NoisePredictor, PromptEmbedding, ToyPrior, Vocabulary,
};
use crate::rng::{stream, stream_rng};

/// Content hash of the library sources this binary was built from.
pub const CODE_HASH: &str = env!("PARTFIELD_CODE_HASH");

/// Fixed body model, semantic regions and sampling priors shared by all
/// commands.
#[derive(Debug, Clone)]
pub struct World {
    pub generator: GeneratorConfig,
    pub regions: RegionSet,
    pub distributions: ParamDistributions,
}

impl Default for World {
    fn default() -> Self {
        let generator = GeneratorConfig::default();
        let regions = RegionSet::for_skeleton(&generator.skeleton, generator.skeleton.rest_bounds().center);
        let distributions = ParamDistributions::for_skeleton(&generator.skeleton);
        Self { generator, regions, distributions }
    }
}

impl World {
    pub fn rest_params(&self, cam: Camera) -> BodyParams {
        BodyParams::rest(self.generator.skeleton.joint_count(), cam)
    }

    pub fn corpus(&self, cfg: &RunConfig) -> Result<Corpus> {
        generate_corpus(&cfg.prior.corpus(), &self.generator, &self.regions)
    }
}

pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Record of one command invocation: resolved config, seeds and the hashes
/// of everything read and written.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub config: RunConfig,
    pub seeds: BTreeMap<String, u64>,
    pub code_hash: String,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

impl Manifest {
    pub fn new(command: &str, config: &RunConfig) -> Self {
        let mut seeds = BTreeMap::new();
        seeds.insert("run".into(), config.seed);
        seeds.insert("prior".into(), config.prior.seed);
        seeds.insert("extractor".into(), config.extractor_seed);
        Self {
            command: command.into(),
            config: config.clone(),
            seeds,
            code_hash: CODE_HASH.into(),
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
        }
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        self.inputs.insert(path.display().to_string(), file_sha256(path)?);
        Ok(())
    }

    /// Writes `bytes` to `dir/name` and records its hash.
    pub fn emit(&mut self, dir: &Path, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = dir.join(name);
        write_atomic(&path, bytes)?;
        self.outputs.insert(name.into(), hex::encode(Sha256::digest(bytes)));
        Ok(path)
    }

    pub fn emit_png(&mut self, dir: &Path, name: &str, img: &Image) -> Result<PathBuf> {
        self.emit(dir, name, &img.to_png_bytes()?)
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join("manifest.json");
        write_atomic(&path, &serde_json::to_vec_pretty(self)?)?;
        Ok(path)
    }
}

fn csv_bytes<T: Serialize>(rows: &[T]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner().map_err(|e| Error::Config(format!("csv buffer: {e}")))
}

fn command_dir(cfg: &RunConfig, command: &str) -> PathBuf {
    cfg.out_dir.join(command)
}

// ---------------------------------------------------------------- prior

pub fn prior_path(cfg: &RunConfig) -> PathBuf {
    cfg.cache_dir().join(format!("prior-{}.pfck", &cfg.prior.hash()[..16]))
}

pub fn save_prior(prior: &ToyPrior, options: &PriorOptions, path: &Path) -> Result<()> {
    let meta = serde_json::json!({
        "denoiser": prior.denoiser,
        "schedule": prior.schedule,
        "vocab": prior.vocab,
        "options": options,
    });
    let mut c = Container::new("prior", meta);
    c.push("params", prior.params.clone());
    c.save(path)
}

pub fn load_prior(path: &Path) -> Result<ToyPrior> {
    let c = Container::load(path, "prior")?;
    let bad = |what: &str| Error::Checkpoint { path: path.into(), reason: format!("prior header lacks {what}") };
    let denoiser: DenoiserConfig = serde_json::from_value(c.meta.get("denoiser").cloned().ok_or_else(|| bad("denoiser"))?)?;
    let schedule: DiffusionSchedule = serde_json::from_value(c.meta.get("schedule").cloned().ok_or_else(|| bad("schedule"))?)?;
    let vocab: Vocabulary = serde_json::from_value(c.meta.get("vocab").cloned().ok_or_else(|| bad("vocab"))?)?;
    let params = c.section("params").ok_or_else(|| bad("params"))?.to_vec();
    let prior = ToyPrior { denoiser, params, schedule, vocab };
    prior.validate()?;
    Ok(prior)
}

/// Loads the cached prior for `cfg` or explains how to create it.
pub fn require_prior(cfg: &RunConfig) -> Result<ToyPrior> {
    let path = prior_path(cfg);
    if !path.exists() {
        return Err(Error::Config(format!(
            "toy prior {} not found; run `partfield train-prior` with the same config (and --out) first",
            path.display()
        )));
    }
    load_prior(&path)
}

#[derive(Debug, Serialize)]
struct PriorLossRow {
    step: usize,
    loss: f64,
}

/// Trains the toy prior unless a cached copy for the same options exists.
/// Returns the cache path and whether it was already present.
pub fn cmd_train_prior(cfg: &RunConfig) -> Result<(PathBuf, bool)> {
    cfg.validate()?;
    let path = prior_path(cfg);
    let dir = command_dir(cfg, "train-prior");
    let mut manifest = Manifest::new("train-prior", cfg);
    if path.exists() {
        load_prior(&path)?;
        manifest.input(&path)?;
        manifest.write(&dir)?;
        return Ok((path, true));
    }
    let world = World::default();
    let corpus = world.corpus(cfg)?;
    let (prior, report) = train_toy_prior(&corpus, &world.regions, DiffusionSchedule::default(), &cfg.prior.training())?;
    save_prior(&prior, &cfg.prior, &path)?;
    manifest.outputs.insert(path.display().to_string(), file_sha256(&path)?);
    let rows: Vec<_> = report.train_loss.iter().enumerate().map(|(step, &loss)| PriorLossRow { step, loss }).collect();
    manifest.emit(&dir, "prior_loss.csv", &csv_bytes(&rows)?)?;
    manifest.emit_png(&dir, "prior_loss.png", &line_plot(&[smooth(&report.train_loss, 50)], 120, 240))?;
    let preview: Vec<Image> = corpus.cards.iter().take(8).map(|c| c.image.clone()).collect();
    manifest.emit_png(&dir, "corpus_preview.png", &Image::hconcat(&preview)?)?;
    let summary = serde_json::json!({
        "initial_holdout_loss": report.initial_holdout_loss,
        "final_holdout_loss": report.final_holdout_loss,
        "null_conditioned_steps": report.null_conditioned_steps,
    });
    manifest.emit(&dir, "report.json", &serde_json::to_vec_pretty(&summary)?)?;
    manifest.write(&dir)?;
    Ok((path, false))
}

// ---------------------------------------------------------------- finetune

/// Region prompts for `prompt`, indexed by [`RegionName::index`].
pub fn region_embeddings(prior: &ToyPrior, regions: &RegionSet, prompt: &str) -> Result<Vec<PromptEmbedding>> {
    RegionName::ALL.iter().map(|r| prior.embed(&regions.get(*r).rewrite(prompt)?)).collect()
}

/// Builds the frozen fine-tuning inputs for `cfg` and hands them to `f`
/// with the real-image resolution.
fn with_context<T>(cfg: &RunConfig, prior: &ToyPrior, f: impl FnOnce(&FinetuneContext, (usize, usize)) -> Result<T>) -> Result<T> {
    cfg.validate()?;
    let world = World::default();
    let corpus = world.corpus(cfg)?;
    let real = corpus.full_body_indices().into_iter().map(|i| &corpus.cards[i].image).collect();
    let extractor = FeatureExtractor::new(1, cfg.extractor_seed);
    let ctx = FinetuneContext {
        prior,
        embeddings: region_embeddings(prior, &world.regions, &cfg.prompt)?,
        regions: &world.regions,
        distributions: &world.distributions,
        real,
        prior_res: (corpus.height, corpus.width),
        extractor: &extractor,
    };
    f(&ctx, (corpus.height, corpus.width))
}

/// Fine-tunes a freshly initialized generator for `cfg.iterations` steps.
pub fn run_finetune(cfg: &RunConfig, prior: &ToyPrior, mut progress: impl FnMut(&StepRecord)) -> Result<TrainState> {
    with_context(cfg, prior, |ctx, disc_res| {
        let model = GeneratorModel::init(World::default().generator, cfg.seed)?;
        let mut state = TrainState::new(cfg.finetune(), model, disc_res, cfg.seed)?;
        for _ in 0..cfg.iterations {
            let rec = finetune_step(&mut state, ctx)?;
            progress(&rec);
        }
        Ok(state)
    })
}

/// Mean composite loss of `generator` judged by `discriminator` over
/// `draws` held-out iterations (those after `cfg.iterations`). Every
/// generator evaluated this way sees the same latents, poses, regions,
/// noise levels and real images.
pub fn evaluate_composite(
    cfg: &RunConfig,
    prior: &ToyPrior,
    generator: &GeneratorModel,
    discriminator: &Discriminator,
    draws: u64,
) -> Result<f64> {
    with_context(cfg, prior, |ctx, disc_res| {
        let mut state = TrainState::new(cfg.finetune(), generator.clone(), disc_res, cfg.seed)?;
        state.discriminator = discriminator.clone();
        let mut sum = 0.0;
        for k in 0..draws {
            state.iteration = cfg.iterations + k;
            sum += compute_step(&state, ctx)?.record.total;
        }
        Ok(sum / draws.max(1) as f64)
    })
}

/// A loaded fine-tuning checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub generator: GeneratorModel,
    pub discriminator: Discriminator,
    pub fixed_latent: LatentNoise,
    pub iteration: u64,
    pub history: Vec<StepRecord>,
}

impl Checkpoint {
    pub fn from_state(config: &RunConfig, state: &TrainState) -> Self {
        Self {
            config: config.portable(),
            generator: state.generator.clone(),
            discriminator: state.discriminator.clone(),
            fixed_latent: state.policy.fixed_z.clone(),
            iteration: state.iteration,
            history: state.history.clone(),
        }
    }

    pub fn to_container(&self) -> Container {
        let mut disc = self.discriminator.clone();
        disc.params.clear();
        let meta = serde_json::json!({
            "config": self.config,
            "seed": self.config.seed,
            "iteration": self.iteration,
            "finetune_hash": self.config.finetune_hash(),
            "prior_hash": self.config.prior.hash(),
            "generator": self.generator.config,
            "discriminator": disc,
            "history": self.history,
        });
        let mut c = Container::new("generator", meta);
        c.push("generator", self.generator.params.clone());
        c.push("discriminator", self.discriminator.params.clone());
        c.push("fixed_latent", self.fixed_latent.z.clone());
        c
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let c = Container::load(path, "generator")?;
        let field = |name: &str| {
            c.meta.get(name).cloned().ok_or_else(|| Error::Checkpoint {
                path: path.into(),
                reason: format!("header lacks `{name}`"),
            })
        };
        let section = |name: &str| {
            c.section(name).map(<[f64]>::to_vec).ok_or_else(|| Error::Checkpoint {
                path: path.into(),
                reason: format!("missing section `{name}`"),
            })
        };
        let generator = GeneratorModel { config: serde_json::from_value(field("generator")?)?, params: section("generator")? };
        let mut discriminator: Discriminator = serde_json::from_value(field("discriminator")?)?;
        discriminator.params = section("discriminator")?;
        generator.validate().map_err(|e| Error::Checkpoint { path: path.into(), reason: e.to_string() })?;
        Ok(Self {
            config: serde_json::from_value(field("config")?)?,
            generator,
            discriminator,
            fixed_latent: LatentNoise { z: section("fixed_latent")? },
            iteration: serde_json::from_value(field("iteration")?)?,
            history: serde_json::from_value(field("history")?)?,
        })
    }
}

pub fn checkpoint_cache_path(cfg: &RunConfig) -> PathBuf {
    cfg.cache_dir().join(format!("ckpt-{}.pfck", &cfg.finetune_hash()[..16]))
}

/// Fine-tuned checkpoint for `cfg`, trained on a cache miss.
pub fn finetune_cached(cfg: &RunConfig, prior: &ToyPrior, progress: impl FnMut(&StepRecord)) -> Result<(Checkpoint, bool)> {
    let path = checkpoint_cache_path(cfg);
    if path.exists() {
        return Ok((Checkpoint::load(&path)?, true));
    }
    let state = run_finetune(cfg, prior, progress)?;
    let ckpt = Checkpoint::from_state(cfg, &state);
    ckpt.save(&path)?;
    Ok((ckpt, false))
}

pub fn cmd_finetune(cfg: &RunConfig, progress: impl FnMut(&StepRecord)) -> Result<PathBuf> {
    cfg.validate()?;
    let prior = require_prior(cfg)?;
    let dir = command_dir(cfg, "finetune");
    let mut manifest = Manifest::new("finetune", cfg);
    manifest.input(&prior_path(cfg))?;
    let (ckpt, _) = finetune_cached(cfg, &prior, progress)?;
    let path = manifest.emit(&dir, "checkpoint.pfck", &ckpt.to_container().to_bytes())?;
    manifest.emit(&dir, "losses.csv", &csv_bytes(&ckpt.history)?)?;
    let series = [
        smooth(&ckpt.history.iter().map(|r| r.sds).collect::<Vec<_>>(), 50),
        smooth(&ckpt.history.iter().map(|r| r.adv_generator).collect::<Vec<_>>(), 50),
    ];
    manifest.emit_png(&dir, "losses.png", &line_plot(&series, 120, 240))?;
    manifest.write(&dir)?;
    Ok(path)
}

// ---------------------------------------------------------------- sampling

pub fn sample_latents(seed: u64, n: usize, dim: usize) -> Vec<LatentNoise> {
    (0..n as u64).map(|i| LatentNoise::sample(&mut stream_rng(seed, stream::SAMPLE, i), dim)).collect()
}

/// Rest-pose front-camera renders of `latents`.
pub fn render_samples(model: &GeneratorModel, latents: &[LatentNoise], res: [usize; 2]) -> Result<Vec<RenderedView>> {
    let world = World::default();
    let params = world.rest_params(world.distributions.front_camera());
    latents.iter().map(|z| render_view(model, z, &params, &params.cam, (res[0], res[1]))).collect()
}

/// Writes `n` renders and their latents. Returns the latent file paths.
pub fn cmd_sample(cfg: &RunConfig, checkpoint: &Path, n: usize, seed: u64) -> Result<Vec<PathBuf>> {
    if n == 0 {
        return Err(Error::Config("--n must be at least 1".into()));
    }
    let ckpt = Checkpoint::load(checkpoint)?;
    let dir = command_dir(cfg, "sample");
    let mut manifest = Manifest::new("sample", cfg);
    manifest.seeds.insert("sample".into(), seed);
    manifest.input(checkpoint)?;
    let latents = sample_latents(seed, n, ckpt.generator.config.latent_dim);
    let views = render_samples(&ckpt.generator, &latents, cfg.resolution)?;
    let mut paths = Vec::with_capacity(n);
    for (i, (z, v)) in latents.iter().zip(&views).enumerate() {
        manifest.emit_png(&dir, &format!("sample_{i:03}.png"), &v.rgb)?;
        paths.push(manifest.emit(&dir, &format!("latent_{i:03}.json"), &serde_json::to_vec(z)?)?);
    }
    let strip: Vec<Image> = views.iter().map(|v| v.rgb.clone()).collect();
    manifest.emit_png(&dir, "strip.png", &Image::hconcat(&strip)?)?;
    manifest.write(&dir)?;
    Ok(paths)
}

pub fn load_latent(path: &Path) -> Result<LatentNoise> {
    let text = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_slice(&text)?)
}

// ---------------------------------------------------------------- diversity

/// Diversity of `cfg.samples` renders drawn with `sample_seed`.
pub fn checkpoint_diversity(cfg: &RunConfig, model: &GeneratorModel, sample_seed: u64) -> Result<DiversityReport> {
    let latents = sample_latents(sample_seed, cfg.samples, model.config.latent_dim);
    let views = render_samples(model, &latents, cfg.resolution)?;
    diversity_score(&views, cfg.extractor_seed, &cfg.prompt, cfg.p)
}

pub fn cmd_eval_diversity(cfg: &RunConfig, checkpoint: &Path) -> Result<DiversityReport> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let dir = command_dir(cfg, "eval-diversity");
    let mut manifest = Manifest::new("eval-diversity", cfg);
    manifest.input(checkpoint)?;
    let mut report = checkpoint_diversity(cfg, &ckpt.generator, cfg.seed)?;
    report.p = ckpt.config.p;
    report.prompt = ckpt.config.prompt.clone();
    manifest.emit(&dir, "report.json", &serde_json::to_vec_pretty(&report)?)?;
    manifest.write(&dir)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub p: f64,
    pub seed: u64,
    pub mean: f64,
    pub std: f64,
    pub samples: usize,
    pub checkpoint: String,
}

/// Fine-tunes (or reuses cached runs) for every `(p, seed)` and tabulates
/// sample diversity.
pub fn cmd_ablate_p(
    cfg: &RunConfig,
    ps: &[f64],
    seeds: &[u64],
    mut progress: impl FnMut(f64, u64, &StepRecord),
) -> Result<Vec<AblationRow>> {
    if ps.len() < 2 || seeds.is_empty() {
        return Err(Error::Config("ablate-p needs at least two p values and one seed".into()));
    }
    let prior = require_prior(cfg)?;
    let dir = command_dir(cfg, "ablate-p");
    let mut manifest = Manifest::new("ablate-p", cfg);
    manifest.input(&prior_path(cfg))?;
    let mut rows = Vec::new();
    for &p in ps {
        for &seed in seeds {
            let run = RunConfig { p, seed, ..cfg.clone() };
            run.validate()?;
            manifest.seeds.insert(format!("p{p}_seed{seed}"), seed);
            let (ckpt, _) = finetune_cached(&run, &prior, |r| progress(p, seed, r))?;
            let report = checkpoint_diversity(&run, &ckpt.generator, seed)?;
            rows.push(AblationRow {
                p,
                seed,
                mean: report.mean,
                std: report.std,
                samples: report.samples,
                checkpoint: file_sha256(&checkpoint_cache_path(&run))?,
            });
        }
    }
    manifest.emit(&dir, "ablation.csv", &csv_bytes(&rows)?)?;
    let series: Vec<Vec<(f64, f64)>> = seeds
        .iter()
        .map(|&s| rows.iter().filter(|r| r.seed == s).map(|r| (r.p, r.mean)).collect())
        .collect();
    manifest.emit_png(&dir, "diversity_vs_p.png", &line_plot(&series, 120, 200))?;
    manifest.write(&dir)?;
    Ok(rows)
}

// ---------------------------------------------------------------- mesh

/// Outcome of the mesh stage.
pub struct MeshRun {
    pub state: MeshOptState,
    pub initial: TexturedMesh,
    pub history: Vec<MeshStepRecord>,
}

impl MeshRun {
    pub fn mesh(&self) -> TexturedMesh {
        self.state.mesh()
    }

    pub fn turntable(&self, views: usize) -> Result<Image> {
        let mesh = self.mesh();
        let res = self.state.config.resolution;
        let base = self.state.conditions[0].cam;
        let frames: Vec<Image> = (0..views.max(1))
            .map(|k| {
                let cam = Camera { azimuth: base.azimuth + std::f64::consts::TAU * k as f64 / views.max(1) as f64, ..base };
                rasterize(&mesh, &cam, (res, res), self.state.config.background).0.rgb
            })
            .collect();
        Image::hconcat(&frames)
    }
}

fn upsample_residual(hi: &Image, lo: &Image, refined: &Image) -> Image {
    let mut delta = refined.clone();
    for (d, l) in delta.data.iter_mut().zip(&lo.data) {
        *d -= l;
    }
    let up = delta.resize_bilinear(hi.height, hi.width);
    let mut out = hi.clone();
    for (o, u) in out.data.iter_mut().zip(&up.data) {
        *o = (*o + u).clamp(0.0, 1.0);
    }
    out
}

/// Front and back views of `field`, refined at the prior's resolution and
/// padded to squares.
pub fn condition_views(
    cfg: &RunConfig,
    field: &dyn RadianceField,
    render: &RenderConfig,
    prior: &dyn NoisePredictor,
    y: &PromptEmbedding,
    front: Camera,
) -> Result<Vec<ConditionView>> {
    let [h, w] = cfg.resolution;
    let mut imgs = Vec::new();
    let mut masks = Vec::new();
    let cams = [front, Camera { azimuth: front.azimuth + std::f64::consts::PI, ..front }];
    for (k, cam) in cams.iter().enumerate() {
        let view = render_field(field, cam, (h, w), render)?;
        let lo = view.rgb.downsample_to(cfg.prior.height, cfg.prior.width)?;
        let mut rng = stream_rng(cfg.seed, stream::REFINE, k as u64);
        let refined = img2img_refine(prior, &lo, y, cfg.mesh.img2img_strength, cfg.mesh.img2img_scale, &mut rng)?;
        imgs.push(upsample_residual(&view.rgb, &lo, &refined));
        masks.push(view.mask);
    }
    let (fi, bi) = pad_views(&imgs[0], &imgs[1], h, render.background)?;
    let (fm, bm) = pad_views(&masks[0], &masks[1], h, [0.0; 3])?;
    Ok(vec![
        ConditionView { image: fi, mask: fm, cam: cams[0] },
        ConditionView { image: bi, mask: bm, cam: cams[1] },
    ])
}

/// Density grid, sdf initialization, color fit, condition views and the
/// alternating mesh optimization for any radiance field.
#[allow(clippy::too_many_arguments)]
pub fn mesh_field(
    cfg: &RunConfig,
    field: &dyn RadianceField,
    density_max: f64,
    render: &RenderConfig,
    prior: &dyn NoisePredictor,
    y: &PromptEmbedding,
    distributions: &ParamDistributions,
    mut progress: impl FnMut(&MeshStepRecord),
) -> Result<MeshRun> {
    cfg.validate()?;
    let level = cfg.mesh.level_fraction * density_max;
    let density = extract_density_grid(field, cfg.mesh.grid)?;
    let grid = TetGrid::from_density(&density, level)?;
    let initial = marching_tets(&grid).mesh;
    if initial.is_empty() {
        return Err(Error::EmptyMesh { level });
    }
    let mut color = ColorMlp::new(field.bounds(), cfg.mesh.color_hidden, cfg.seed);
    let samples: Vec<_> = initial
        .vertices
        .iter()
        .map(|v| {
            let p = nalgebra::Vector3::from(*v);
            (p, field.query(&p).1)
        })
        .collect();
    color.fit(&samples, cfg.mesh.color_fit_steps, 1e-2);
    let conditions = condition_views(cfg, field, render, prior, y, distributions.front_camera())?;
    let mut state = MeshOptState::new(cfg.mesh_opt(), grid, color, conditions, cfg.seed)?;
    for _ in 0..cfg.mesh.iterations {
        let rec = mesh_finetune_step(&mut state, prior, y, distributions, (cfg.prior.height, cfg.prior.width))?;
        progress(&rec);
    }
    let history = state.history.clone();
    Ok(MeshRun { state, initial, history })
}

pub fn cmd_mesh(
    cfg: &RunConfig,
    checkpoint: &Path,
    latent: &Path,
    progress: impl FnMut(&MeshStepRecord),
) -> Result<PathBuf> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let z = load_latent(latent)?;
    let prior = require_prior(cfg)?;
    let world = World::default();
    let dir = command_dir(cfg, "mesh");
    let mut manifest = Manifest::new("mesh", cfg);
    manifest.input(checkpoint)?;
    manifest.input(latent)?;
    manifest.input(&prior_path(cfg))?;
    let params = world.rest_params(world.distributions.front_camera());
    let field = PosedGenerator::new(&ckpt.generator, &z, &params)?;
    let y = prior.embed(&cfg.prompt)?;
    let gcfg = &ckpt.generator.config;
    let run = mesh_field(cfg, &field, gcfg.density_max, &gcfg.render, &prior, &y, &world.distributions, progress)?;
    let format = if cfg.mesh.format == "ply" { MeshFormat::Ply } else { MeshFormat::Obj };
    let name = format!("mesh.{}", cfg.mesh.format);
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let tmp = tempfile_path(&dir, &name);
    export_mesh(&run.mesh(), &tmp, format)?;
    let bytes = std::fs::read(&tmp).map_err(|e| Error::io(&tmp, e))?;
    std::fs::remove_file(&tmp).map_err(|e| Error::io(&tmp, e))?;
    let path = manifest.emit(&dir, &name, &bytes)?;
    manifest.emit_png(&dir, "turntable.png", &run.turntable(cfg.mesh.turntable_views)?)?;
    let conds: Vec<Image> = run.state.conditions.iter().map(|c| c.image.clone()).collect();
    manifest.emit_png(&dir, "conditions.png", &Image::hconcat(&conds)?)?;
    manifest.emit(&dir, "mesh_losses.csv", &csv_bytes(&run.history)?)?;
    manifest.write(&dir)?;
    Ok(path)
}

fn tempfile_path(dir: &Path, name: &str) -> PathBuf {
    dir.join(format!(".{name}.export{}", std::process::id()))
}

