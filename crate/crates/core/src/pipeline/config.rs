use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::finetune::{FinetuneConfig, LossWeights};
use crate::mesh::MeshOptConfig;
use crate::prior::{CorpusConfig, PriorTrainConfig};

/// Toy corpus and denoiser training options.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorOptions {
    pub corpus_count: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for PriorOptions {
    fn default() -> Self {
        let c = CorpusConfig::default();
        let t = PriorTrainConfig::default();
        Self {
            corpus_count: c.count,
            height: c.height,
            width: c.width,
            channels: t.channels,
            steps: t.steps,
            batch: t.batch,
            lr: t.lr,
            seed: t.seed,
        }
    }
}

impl PriorOptions {
    pub fn corpus(&self) -> CorpusConfig {
        CorpusConfig { count: self.corpus_count, height: self.height, width: self.width, seed: self.seed }
    }

    pub fn training(&self) -> PriorTrainConfig {
        PriorTrainConfig {
            channels: self.channels,
            steps: self.steps,
            batch: self.batch,
            lr: self.lr,
            seed: self.seed,
            ..PriorTrainConfig::default()
        }
    }

    /// Cache key of the trained prior.
    pub fn hash(&self) -> String {
        content_hash(self)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeshOptions {
    /// Lattice vertices per axis (`grid - 1` cubes).
    pub grid: usize,
    pub iterations: u64,
    pub mse_weight: f64,
    pub sds_weight: f64,
    /// Iso-level as a fraction of the generator's maximum density.
    pub level_fraction: f64,
    pub img2img_strength: f64,
    pub img2img_scale: f64,
    pub color_hidden: usize,
    pub color_fit_steps: usize,
    pub lr_sdf: f64,
    pub lr_deform: f64,
    pub lr_color: f64,
    pub format: String,
    pub turntable_views: usize,
}

impl Default for MeshOptions {
    fn default() -> Self {
        let m = MeshOptConfig::default();
        Self {
            grid: 33,
            iterations: 500,
            mse_weight: m.mse_weight,
            sds_weight: m.sds_weight,
            level_fraction: 0.5,
            img2img_strength: 0.3,
            img2img_scale: 3.0,
            color_hidden: 32,
            color_fit_steps: 300,
            lr_sdf: m.lr_sdf,
            lr_deform: m.lr_deform,
            lr_color: m.lr_color,
            format: "obj".into(),
            turntable_views: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub prompt: String,
    pub p: f64,
    pub lambda_sds: f64,
    pub lambda_depth: f64,
    pub lambda_adv: f64,
    pub cfg_scale: f64,
    pub iterations: u64,
    /// `[height, width]` of fine-tuning renders and samples.
    pub resolution: [usize; 2],
    pub lr_generator: f64,
    pub lr_discriminator: f64,
    pub r1_gamma: f64,
    /// Samples per diversity report.
    pub samples: usize,
    pub extractor_seed: u64,
    pub out_dir: PathBuf,
    /// Defaults to `<out_dir>/cache`.
    pub cache_dir: Option<PathBuf>,
    pub prior: PriorOptions,
    pub mesh: MeshOptions,
}

impl Default for RunConfig {
    fn default() -> Self {
        let f = FinetuneConfig::default();
        Self {
            seed: 0,
            prompt: f.prompt,
            p: f.p,
            lambda_sds: f.weights.lambda_sds,
            lambda_depth: f.weights.lambda_depth,
            lambda_adv: f.weights.lambda_adv,
            cfg_scale: f.cfg_scale,
            iterations: f.iterations,
            resolution: f.resolution,
            lr_generator: f.lr_generator,
            lr_discriminator: f.lr_discriminator,
            r1_gamma: f.r1_gamma,
            samples: 8,
            extractor_seed: 0,
            out_dir: PathBuf::from("runs"),
            cache_dir: None,
            prior: PriorOptions::default(),
            mesh: MeshOptions::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Config("iterations must be positive".into()));
        }
        if self.resolution.iter().any(|&r| r == 0 || r % 2 != 0) {
            return Err(Error::Config("resolution must be positive and even".into()));
        }
        if self.resolution[0] % self.prior.height != 0 || self.resolution[1] % self.prior.width != 0 {
            return Err(Error::Config(format!(
                "resolution {:?} must be a multiple of the prior resolution [{}, {}]",
                self.resolution, self.prior.height, self.prior.width
            )));
        }
        if !(0.0..=1.0).contains(&self.p) {
            return Err(Error::Config(format!("p = {} is outside [0, 1]", self.p)));
        }
        if self.samples < 2 {
            return Err(Error::Config("diversity needs at least 2 samples".into()));
        }
        if self.mesh.grid < 3 || !(self.mesh.level_fraction > 0.0 && self.mesh.level_fraction < 1.0) {
            return Err(Error::Config("mesh grid must be >= 3 and level_fraction in (0, 1)".into()));
        }
        if !["obj", "ply"].contains(&self.mesh.format.as_str()) {
            return Err(Error::Config(format!("mesh format `{}` is not obj or ply", self.mesh.format)));
        }
        self.finetune().validate().map_err(|e| Error::Config(e.to_string()))?;
        self.mesh_opt().validate().map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads a TOML config, or the `config` entry of a JSON manifest.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        if path.extension().is_some_and(|e| e == "json") {
            let v: serde_json::Value = serde_json::from_str(&text)?;
            let cfg: Self = serde_json::from_value(v.get("config").cloned().unwrap_or(v))?;
            cfg.validate()?;
            return Ok(cfg);
        }
        Self::from_toml(&text)
    }

    pub fn cache_dir(&self) -> PathBuf {
        self.cache_dir.clone().unwrap_or_else(|| self.out_dir.join("cache"))
    }

    pub fn finetune(&self) -> FinetuneConfig {
        FinetuneConfig {
            p: self.p,
            weights: LossWeights { lambda_sds: self.lambda_sds, lambda_depth: self.lambda_depth, lambda_adv: self.lambda_adv },
            cfg_scale: self.cfg_scale,
            iterations: self.iterations,
            resolution: self.resolution,
            lr_generator: self.lr_generator,
            lr_discriminator: self.lr_discriminator,
            r1_gamma: self.r1_gamma,
            prompt: self.prompt.clone(),
            ..FinetuneConfig::default()
        }
    }

    pub fn mesh_opt(&self) -> MeshOptConfig {
        MeshOptConfig {
            mse_weight: self.mesh.mse_weight,
            sds_weight: self.mesh.sds_weight,
            resolution: self.resolution[0],
            cfg_scale: self.cfg_scale,
            lr_sdf: self.mesh.lr_sdf,
            lr_deform: self.mesh.lr_deform,
            lr_color: self.mesh.lr_color,
            ..MeshOptConfig::default()
        }
    }

    /// Copy with output locations reset, for embedding in artifacts that
    /// must not depend on where they are written.
    pub fn portable(&self) -> Self {
        Self { out_dir: RunConfig::default().out_dir, cache_dir: None, ..self.clone() }
    }

    /// Cache key of a fine-tuned checkpoint: everything that affects it.
    pub fn finetune_hash(&self) -> String {
        content_hash(&(self.seed, self.finetune(), self.prior.hash()))
    }
}

/// Hex SHA-256 of the canonical JSON encoding of `value`.
pub fn content_hash<T: Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("config types serialize");
    hex::encode(Sha256::digest(&bytes))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shipped_defaults() {
        let c = RunConfig::default();
        assert_eq!((c.p, c.lambda_sds, c.lambda_depth, c.cfg_scale, c.iterations), (0.1, 1.0, 1.0, 100.0, 5000));
        assert_eq!((c.mesh.mse_weight, c.mesh.sds_weight), (1000.0, 1.0));
        assert_eq!(c.resolution[0], 2 * c.resolution[1]);
        c.validate().unwrap();
    }

    #[test]
    fn toml_round_trip() {
        let mut c = RunConfig::default();
        c.cache_dir = Some("/tmp/x".into());
        c.p = 0.37;
        assert_eq!(RunConfig::from_toml(&c.to_toml().unwrap()).unwrap(), c);
        assert_eq!(RunConfig::from_toml("").unwrap(), RunConfig::default());
    }

    #[test]
    fn rejects_bad_values() {
        assert!(RunConfig::from_toml("p = 1.5").is_err());
        assert!(RunConfig::from_toml("iterations = 0").is_err());
        assert!(RunConfig::from_toml("resolution = [0, 32]").is_err());
        assert!(RunConfig::from_toml("bogus = 1").is_err());
    }

    #[test]
    fn hashes_track_relevant_fields() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.out_dir = "elsewhere".into();
        assert_eq!(a.finetune_hash(), b.finetune_hash());
        b.p = 0.5;
        assert_ne!(a.finetune_hash(), b.finetune_hash());
    }
}
