use nalgebra::Vector3;

use super::{GeneratorConfig, GeneratorLayout, GeneratorModel, LatentNoise, Modulation, PART_OUTPUTS};
use crate::body::{pose_part_volumes, Aabb, BodyParams, PartVolume};
use crate::error::Result;
use crate::nn::sigmoid;

/// Anything the volume renderer can march through.
pub trait RadianceField {
    /// Density (≥ 0) and rgb in `[0, 1]` at a posed-space point.
    fn query(&self, p: &Vector3<f64>) -> (f64, [f64; 3]);

    /// Posed-space bounds outside which density is zero.
    fn bounds(&self) -> Aabb;
}

/// Constant density and color inside an axis-aligned box.
#[derive(Debug, Clone, Copy)]
pub struct ConstantField {
    pub region: Aabb,
    pub density: f64,
    pub color: [f64; 3],
}

impl RadianceField for ConstantField {
    fn query(&self, p: &Vector3<f64>) -> (f64, [f64; 3]) {
        let u = self.region.normalize(p);
        if u.iter().all(|c| c.abs() < 1.0) {
            (self.density, self.color)
        } else {
            (0.0, [0.0; 3])
        }
    }

    fn bounds(&self) -> Aabb {
        self.region
    }
}

/// Raised-cosine window on box-normalized coordinates: 1 in the core,
/// falling to 0 at the faces over `margin` of each half extent.
pub fn blend_weight(u: &Vector3<f64>, margin: f64) -> f64 {
    let mut w = 1.0;
    for &c in u.iter() {
        let a = c.abs();
        if a >= 1.0 {
            return 0.0;
        }
        let start = 1.0 - margin;
        if a > start {
            w *= 0.5 * (1.0 + (std::f64::consts::PI * (a - start) / margin).cos());
        }
    }
    w
}

/// Logit of the soft rounded-box occupancy of a part, shifted by a learned
/// residual. Positive inside the template surface.
pub fn template_logit(cfg: &GeneratorConfig, bx: &Aabb, u: &[f64; 3], residual: f64) -> f64 {
    let norm4 = u.iter().map(|c| c.powi(4)).sum::<f64>().powf(0.25);
    let min_half = bx.half.iter().copied().fold(f64::INFINITY, f64::min);
    let dist = (norm4 - cfg.template_radius) * min_half;
    -(dist + cfg.residual_scale * residual) / cfg.softness
}

/// Cached forward pass of one part network at one point.
#[derive(Debug, Clone)]
pub struct PartEval {
    pub part: usize,
    /// Normalized blend weight of this part at the point.
    pub weight: f64,
    pub u: [f64; 3],
    /// Pre-modulation activations `a_l = omega_l (W h + b)` per layer.
    pub pre: Vec<f64>,
    /// Sine arguments `s_l = gamma ⊙ a_l + beta` per layer.
    pub arg: Vec<f64>,
    pub out: [f64; PART_OUTPUTS],
    /// Sigmoid of the template logit; density is `density_max * occupancy`.
    pub occupancy: f64,
    pub density: f64,
    pub rgb: [f64; 3],
}

/// Generator bound to one latent and one body pose.
pub struct PosedGenerator<'a> {
    pub model: &'a GeneratorModel,
    pub layout: GeneratorLayout,
    pub modulation: Modulation,
    pub parts: Vec<PartVolume>,
    bounds: Aabb,
}

impl<'a> PosedGenerator<'a> {
    pub fn new(model: &'a GeneratorModel, z: &LatentNoise, params: &BodyParams) -> Result<Self> {
        z.validate(model.config.latent_dim)?;
        params.validate()?;
        let parts = pose_part_volumes(params, &model.config.skeleton)?;
        Ok(Self::with_parts(model, z, parts))
    }

    pub fn with_parts(model: &'a GeneratorModel, z: &LatentNoise, parts: Vec<PartVolume>) -> Self {
        let bounds = parts[1..].iter().fold(parts[0].world_bounds(), |a, p| a.union(&p.world_bounds()));
        Self {
            layout: model.layout(),
            modulation: model.modulation(z),
            model,
            parts,
            bounds,
        }
    }

    /// Raw output of part `k` at box-normalized coordinates `u`.
    pub fn eval_part(&self, k: usize, u: [f64; 3]) -> PartEval {
        let cfg = &self.model.config;
        let h = cfg.hidden;
        let p = &self.model.params;
        let pl = &self.layout.parts[k];
        let mut pre = vec![0.0; cfg.layers * h];
        let mut arg = vec![0.0; cfg.layers * h];
        let mut input: Vec<f64> = u.to_vec();
        let mut act = vec![0.0; h];
        for (l, (wr, br)) in pl.layers.iter().enumerate() {
            let omega = if l == 0 { cfg.first_omega } else { cfg.hidden_omega };
            let w = &p[wr.clone()];
            let b = &p[br.clone()];
            let fan_in = input.len();
            for j in 0..h {
                let a = omega * (b[j] + w[j * fan_in..(j + 1) * fan_in].iter().zip(&input).map(|(x, y)| x * y).sum::<f64>());
                let gamma = 1.0 + self.modulation.values[GeneratorLayout::mod_index(cfg, k, l, j, false)];
                let beta = self.modulation.values[GeneratorLayout::mod_index(cfg, k, l, j, true)];
                let s = gamma * a + beta;
                pre[l * h + j] = a;
                arg[l * h + j] = s;
                act[j] = s.sin();
            }
            input.clone_from(&act);
        }
        let w = &p[pl.out_w.clone()];
        let b = &p[pl.out_b.clone()];
        let mut out = [0.0; PART_OUTPUTS];
        for (o, v) in out.iter_mut().enumerate() {
            *v = b[o] + w[o * h..(o + 1) * h].iter().zip(&input).map(|(x, y)| x * y).sum::<f64>();
        }
        let bx = &self.parts[k].canonical_box;
        let occupancy = sigmoid(template_logit(cfg, bx, &u, out[0]));
        PartEval {
            part: k,
            weight: 0.0,
            u,
            pre,
            arg,
            out,
            occupancy,
            density: cfg.density_max * occupancy,
            rgb: [sigmoid(out[1]), sigmoid(out[2]), sigmoid(out[3])],
        }
    }

    /// Part evaluations (with normalized weights) contributing at `p`.
    pub fn query_cached(&self, p: &Vector3<f64>) -> Vec<PartEval> {
        let margin = self.model.config.blend_margin;
        let mut hits: Vec<(usize, [f64; 3], f64)> = Vec::new();
        for (k, part) in self.parts.iter().enumerate() {
            let local = part.world_transform.inverse_apply(p);
            let u = part.canonical_box.normalize(&local);
            let w = blend_weight(&u, margin);
            if w > 0.0 {
                hits.push((k, [u.x, u.y, u.z], w));
            }
        }
        let total: f64 = hits.iter().map(|h| h.2).sum();
        hits.into_iter()
            .map(|(k, u, w)| {
                let mut e = self.eval_part(k, u);
                e.weight = w / total;
                e
            })
            .collect()
    }

    pub fn combine(evals: &[PartEval]) -> (f64, [f64; 3]) {
        let mut sigma = 0.0;
        let mut rgb = [0.0; 3];
        for e in evals {
            sigma += e.weight * e.density;
            for c in 0..3 {
                rgb[c] += e.weight * e.rgb[c];
            }
        }
        (sigma, rgb)
    }
}

impl RadianceField for PosedGenerator<'_> {
    fn query(&self, p: &Vector3<f64>) -> (f64, [f64; 3]) {
        Self::combine(&self.query_cached(p))
    }

    fn bounds(&self) -> Aabb {
        self.bounds
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::body::{ParamDistributions, PartId};
    use crate::generator::GeneratorConfig;
    use crate::rng::stream_rng;

    fn posed(model: &GeneratorModel) -> PosedGenerator<'_> {
        let d = ParamDistributions::for_skeleton(&model.config.skeleton);
        let params = BodyParams::rest(model.config.skeleton.joint_count(), d.front_camera());
        let z = LatentNoise::sample(&mut stream_rng(1, 0, 0), model.config.latent_dim);
        PosedGenerator::new(model, &z, &params).unwrap()
    }

    #[test]
    fn empty_space_has_zero_density() {
        let m = GeneratorModel::init(GeneratorConfig::default(), 2).unwrap();
        let g = posed(&m);
        let (s, rgb) = g.query(&Vector3::new(2.0, 0.0, 0.0));
        assert_eq!(s, 0.0);
        assert_eq!(rgb, [0.0; 3]);
    }

    #[test]
    fn single_part_point_returns_that_part() {
        let m = GeneratorModel::init(GeneratorConfig::default(), 2).unwrap();
        let g = posed(&m);
        let torso = g.parts[PartId::Torso.index()];
        let p = torso.center() + Vector3::new(0.0, 0.05, 0.0);
        let evals = g.query_cached(&p);
        assert_eq!(evals.len(), 1);
        let solo = g.eval_part(PartId::Torso.index(), {
            let u = torso.canonical_box.normalize(&torso.world_transform.inverse_apply(&p));
            [u.x, u.y, u.z]
        });
        let (s, rgb) = g.query(&p);
        assert_eq!(s, solo.density);
        assert_eq!(rgb, solo.rgb);
    }

    #[test]
    fn overlap_blends_with_unit_weights() {
        let m = GeneratorModel::init(GeneratorConfig::default(), 2).unwrap();
        let g = posed(&m);
        let (ti, pi) = (PartId::Torso.index(), PartId::Pelvis.index());
        // torso spans y in [0.07, 0.65], pelvis [-0.13, 0.13]; search the
        // overlap for the point where the normalized windows are (0.25, 0.75)
        let margin = m.config.blend_margin;
        let window = |y: f64| {
            let p = Vector3::new(0.0, y, 0.0);
            let wt = blend_weight(&g.parts[ti].canonical_box.normalize(&p), margin);
            let wp = blend_weight(&g.parts[pi].canonical_box.normalize(&p), margin);
            wt / (wt + wp)
        };
        let (mut lo, mut hi) = (0.071, 0.129);
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            if window(mid) < 0.25 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let p = Vector3::new(0.0, 0.5 * (lo + hi), 0.0);
        let evals = g.query_cached(&p);
        assert_eq!(evals.len(), 2);
        let wsum: f64 = evals.iter().map(|e| e.weight).sum();
        assert!((wsum - 1.0).abs() < 1e-12);
        let torso = evals.iter().find(|e| e.part == ti).unwrap();
        let pelvis = evals.iter().find(|e| e.part == pi).unwrap();
        assert!((torso.weight - 0.25).abs() < 1e-9);
        let expected = 0.25 * torso.density + 0.75 * pelvis.density;
        let (s, _) = g.query(&p);
        assert!((s - expected).abs() < 1e-6 * expected.max(1.0));
    }

    #[test]
    fn outputs_stay_in_range() {
        let m = GeneratorModel::init(GeneratorConfig::default(), 3).unwrap();
        let g = posed(&m);
        let mut rng = stream_rng(4, 0, 0);
        let b = g.bounds();
        for _ in 0..500 {
            let p = Vector3::from(b.center) + Vector3::from(b.half).component_mul(&Vector3::new(
                rand::Rng::random_range(&mut rng, -1.0..1.0),
                rand::Rng::random_range(&mut rng, -1.0..1.0),
                rand::Rng::random_range(&mut rng, -1.0..1.0),
            ));
            let (s, rgb) = g.query(&p);
            assert!(s >= 0.0);
            assert!(rgb.iter().all(|c| (0.0..=1.0).contains(c)));
        }
    }
}
