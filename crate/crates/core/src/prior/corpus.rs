//! Procedural labeled "avatar cards" rendered from an analytic body.

use std::path::Path;

use nalgebra::Vector3;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::vocab::{PromptEmbedding, PromptSlots, Vocabulary, BODY_NAMES, COLOR_NAMES, COLOR_RGB};
use crate::body::{
    pose_part_volumes, sample_region, Aabb, ParamDistributions, PartId, PartVolume, RegionName, RegionSet,
};
use crate::error::{Error, Result};
use crate::generator::{blend_weight, render_field, template_logit, GeneratorConfig, RadianceField};
use crate::image::Image;
use crate::nn::sigmoid;
use crate::rng::{stream, stream_rng};

pub const SKIN_RGB: [f64; 3] = [0.85, 0.65, 0.5];
pub const SHOE_RGB: [f64; 3] = [0.2, 0.14, 0.1];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CardLabel {
    pub upper: usize,
    pub lower: usize,
    pub body: usize,
    pub region: RegionName,
}

impl CardLabel {
    pub fn slots(&self) -> PromptSlots {
        PromptSlots {
            upper: Some(self.upper),
            lower: Some(self.lower),
            body: Some(self.body),
            region: Some(self.region),
        }
    }

    pub fn embedding(&self, vocab: &Vocabulary) -> PromptEmbedding {
        vocab.embed_slots(&self.slots())
    }

    pub fn prompt(&self, regions: &RegionSet) -> Result<String> {
        let base = format!(
            "{} upper, {} lower, {}",
            COLOR_NAMES[self.upper], COLOR_NAMES[self.lower], BODY_NAMES[self.body]
        );
        regions.get(self.region).rewrite(&base)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Card {
    pub image: Image,
    pub label: CardLabel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusConfig {
    pub count: usize,
    pub height: usize,
    pub width: usize,
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self { count: 768, height: 32, width: 16, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub height: usize,
    pub width: usize,
    pub cards: Vec<Card>,
}

/// Template-shaped body with one flat color per part.
pub struct CardField<'a> {
    pub parts: Vec<PartVolume>,
    pub colors: [[f64; 3]; 9],
    pub config: &'a GeneratorConfig,
    bounds: Aabb,
}

impl<'a> CardField<'a> {
    pub fn new(parts: Vec<PartVolume>, upper: [f64; 3], lower: [f64; 3], config: &'a GeneratorConfig) -> Self {
        let mut colors = [[0.0; 3]; 9];
        for part in PartId::ALL {
            colors[part.index()] = match part {
                PartId::Head => SKIN_RGB,
                PartId::LeftFoot | PartId::RightFoot => SHOE_RGB,
                p if p.is_upper() => upper,
                _ => lower,
            };
        }
        let bounds = parts[1..].iter().fold(parts[0].world_bounds(), |a, p| a.union(&p.world_bounds()));
        Self { parts, colors, config, bounds }
    }
}

impl RadianceField for CardField<'_> {
    fn query(&self, p: &Vector3<f64>) -> (f64, [f64; 3]) {
        let mut total = 0.0;
        let mut sigma = 0.0;
        let mut rgb = [0.0; 3];
        for (k, part) in self.parts.iter().enumerate() {
            let u = part.canonical_box.normalize(&part.world_transform.inverse_apply(p));
            let w = blend_weight(&u, self.config.blend_margin);
            if w == 0.0 {
                continue;
            }
            let occ = sigmoid(template_logit(self.config, &part.canonical_box, &[u.x, u.y, u.z], 0.0));
            total += w;
            sigma += w * self.config.density_max * occ;
            for c in 0..3 {
                rgb[c] += w * self.colors[k][c];
            }
        }
        if total == 0.0 {
            return (0.0, [0.0; 3]);
        }
        (sigma / total, rgb.map(|v| v / total))
    }

    fn bounds(&self) -> Aabb {
        self.bounds
    }
}

/// Shape offsets associated with each body token.
pub fn body_beta_offset(body: usize) -> [f64; 4] {
    if body == 0 {
        [0.4, 1.0, 0.6, 0.0]
    } else {
        [-0.6, -1.0, -0.6, -0.3]
    }
}

/// Renders `count` randomly labeled cards.
pub fn generate_corpus(config: &CorpusConfig, generator: &GeneratorConfig, regions: &RegionSet) -> Result<Corpus> {
    if config.count == 0 || config.height == 0 || config.width == 0 {
        return Err(Error::param("corpus needs a positive count and resolution"));
    }
    let skeleton = &generator.skeleton;
    let dists = ParamDistributions::for_skeleton(skeleton);
    let mut cards = Vec::with_capacity(config.count);
    for i in 0..config.count {
        let mut rng = stream_rng(config.seed, stream::CORPUS, i as u64);
        let upper = rng.random_range(0..COLOR_NAMES.len());
        let lower = rng.random_range(0..COLOR_NAMES.len());
        let body = rng.random_range(0..BODY_NAMES.len());
        let region = sample_region(&mut rng, regions);
        let mut params = dists.sample_body_params(&mut rng);
        for (b, o) in params.beta.iter_mut().zip(body_beta_offset(body)) {
            *b += o;
        }
        let cam = regions.get(region).camera_for(&params.cam);
        let parts = pose_part_volumes(&params, skeleton)?;
        let field = CardField::new(parts, COLOR_RGB[upper], COLOR_RGB[lower], generator);
        let view = render_field(&field, &cam, (config.height, config.width), &generator.render)?;
        cards.push(Card { image: view.rgb, label: CardLabel { upper, lower, body, region } });
    }
    Ok(Corpus { height: config.height, width: config.width, cards })
}

#[derive(Serialize, Deserialize)]
struct ManifestEntry {
    file: String,
    label: CardLabel,
}

impl Corpus {
    pub fn validate(&self) -> Result<()> {
        if self.cards.is_empty() {
            return Err(Error::param("corpus is empty"));
        }
        for c in &self.cards {
            if c.image.channels != 3 || c.image.height != self.height || c.image.width != self.width {
                return Err(Error::param("corpus images must share one rgb resolution"));
            }
            if c.label.upper >= COLOR_NAMES.len() || c.label.lower >= COLOR_NAMES.len() || c.label.body >= BODY_NAMES.len() {
                return Err(Error::param("corpus label outside vocabulary"));
            }
        }
        Ok(())
    }

    /// PNG per card plus `labels.json`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut entries = Vec::with_capacity(self.cards.len());
        for (i, c) in self.cards.iter().enumerate() {
            let file = format!("card_{i:05}.png");
            c.image.save_png(&dir.join(&file))?;
            entries.push(ManifestEntry { file, label: c.label });
        }
        let path = dir.join("labels.json");
        std::fs::write(&path, serde_json::to_vec_pretty(&entries)?).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("labels.json");
        let text = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let entries: Vec<ManifestEntry> = serde_json::from_slice(&text)?;
        let mut cards = Vec::with_capacity(entries.len());
        for e in entries {
            cards.push(Card { image: Image::load_png(&dir.join(&e.file))?, label: e.label });
        }
        let first = cards.first().ok_or_else(|| Error::param("corpus is empty"))?;
        let corpus = Corpus { height: first.image.height, width: first.image.width, cards };
        corpus.validate()?;
        Ok(corpus)
    }

    pub fn full_body_indices(&self) -> Vec<usize> {
        (0..self.cards.len()).filter(|&i| self.cards[i].label.region == RegionName::FullBody).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> (Corpus, RegionSet) {
        let g = GeneratorConfig::default();
        let b = g.skeleton.rest_bounds();
        let regions = RegionSet::for_skeleton(&g.skeleton, b.center);
        let c = generate_corpus(&CorpusConfig { count: 12, height: 32, width: 16, seed: 3 }, &g, &regions).unwrap();
        (c, regions)
    }

    #[test]
    fn corpus_is_reproducible_and_labeled() {
        let (a, regions) = small();
        let (b, _) = small();
        assert_eq!(a, b);
        a.validate().unwrap();
        let s = Vocabulary::new(&regions);
        for c in &a.cards {
            let prompt = c.label.prompt(&regions).unwrap();
            assert_eq!(s.parse(&prompt).unwrap().region.unwrap_or(RegionName::FullBody), c.label.region);
        }
    }

    #[test]
    fn full_body_card_shows_colors() {
        let g = GeneratorConfig::default();
        let d = ParamDistributions::for_skeleton(&g.skeleton);
        let params = crate::body::BodyParams::rest(g.skeleton.joint_count(), d.front_camera());
        let parts = pose_part_volumes(&params, &g.skeleton).unwrap();
        let f = CardField::new(parts, COLOR_RGB[0], COLOR_RGB[2], &g);
        let v = render_field(&f, &params.cam, (32, 16), &g.render).unwrap();
        // torso pixel is red, thigh pixel blue, corner white
        let torso = [v.rgb.get(0, 11, 8), v.rgb.get(2, 11, 8)];
        let leg = [v.rgb.get(0, 22, 6), v.rgb.get(2, 22, 6)];
        assert!(torso[0] > 0.7 && torso[1] < 0.3, "{torso:?}");
        assert!(leg[1] > 0.7 && leg[0] < 0.3, "{leg:?}");
        assert_eq!(v.rgb.get(0, 0, 0), 1.0);
    }

    #[test]
    fn save_load_round_trip() {
        let (a, _) = small();
        let dir = tempfile::tempdir().unwrap();
        a.save(dir.path()).unwrap();
        let b = Corpus::load(dir.path()).unwrap();
        assert_eq!(a.cards.len(), b.cards.len());
        for (x, y) in a.cards.iter().zip(&b.cards) {
            assert_eq!(x.label, y.label);
            for (p, q) in x.image.data.iter().zip(&y.image.data) {
                assert!((p - q).abs() <= 0.5 / 255.0 + 1e-12);
            }
        }
    }
}
