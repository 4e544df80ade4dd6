//! Emission-absorption volume rendering with an exact backward pass.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::field::{PartEval, PosedGenerator, RadianceField};
use super::{GeneratorLayout, GeneratorModel, LatentNoise};
use crate::body::{Aabb, BodyParams, Camera};
use crate::error::{Error, Result};
use crate::image::Image;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderConfig {
    pub samples: usize,
    /// Rays span `[distance - radius, distance + radius]` around the target.
    pub radius: f64,
    pub background: [f64; 3],
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            samples: 32,
            radius: 1.15,
            background: [1.0; 3],
        }
    }
}

impl RenderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.samples == 0 || !(self.radius > 0.0) {
            return Err(Error::param("render needs at least one sample and a positive radius"));
        }
        Ok(())
    }

    pub fn near_far(&self, cam: &Camera) -> (f64, f64) {
        ((cam.distance - self.radius).max(1e-3), cam.distance + self.radius)
    }
}

/// RGB, expected depth and coverage of one rendered view.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderedView {
    pub rgb: Image,
    pub depth: Image,
    pub mask: Image,
    pub cam: Camera,
    pub near: f64,
    pub far: f64,
}

impl RenderedView {
    pub fn resolution(&self) -> (usize, usize) {
        (self.rgb.height, self.rgb.width)
    }
}

/// Upstream gradients with respect to a [`RenderedView`]'s images.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewGrad {
    pub rgb: Image,
    pub depth: Image,
    pub mask: Image,
}

impl ViewGrad {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            rgb: Image::zeros(3, height, width),
            depth: Image::zeros(1, height, width),
            mask: Image::zeros(1, height, width),
        }
    }
}

/// Per-sample quantities along one ray.
#[derive(Debug, Clone, Default)]
pub struct RayTrace {
    pub t: Vec<f64>,
    pub delta: Vec<f64>,
    pub sigma: Vec<f64>,
    pub color: Vec<[f64; 3]>,
    pub weights: Vec<f64>,
    pub transmittance: f64,
    pub rgb: [f64; 3],
    pub depth: f64,
    pub mask: f64,
}

/// Front-to-back compositing. Returns `(weights, final transmittance)`.
pub fn composite(sigma: &[f64], delta: &[f64]) -> (Vec<f64>, f64) {
    let mut trans = 1.0;
    let mut acc_tau = 0.0;
    let mut weights = Vec::with_capacity(sigma.len());
    for (s, d) in sigma.iter().zip(delta) {
        acc_tau += s * d;
        let next = (-acc_tau).exp();
        weights.push(trans - next);
        trans = next;
    }
    (weights, trans)
}

/// Gradient of `L = Σ w_i g_i + T_N g_bg` with respect to each sample's
/// density, where `g_i` is the upstream gradient projected on sample `i`'s
/// value and `g_bg` the projection on the background value.
pub fn composite_backward(sigma: &[f64], delta: &[f64], g: &[f64], g_bg: f64) -> Vec<f64> {
    let n = sigma.len();
    let mut trans_after = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let mut acc = 0.0;
    let mut prev = 1.0;
    for i in 0..n {
        acc += sigma[i] * delta[i];
        let next = (-acc).exp();
        weights[i] = prev - next;
        trans_after[i] = next;
        prev = next;
    }
    let t_final = prev;
    let mut suffix = 0.0;
    let mut out = vec![0.0; n];
    for k in (0..n).rev() {
        let dtau = trans_after[k] * g[k] - suffix - t_final * g_bg;
        out[k] = delta[k] * dtau;
        suffix += weights[k] * g[k];
    }
    out
}

fn ray_box(origin: &Vector3<f64>, dir: &Vector3<f64>, b: &Aabb) -> Option<(f64, f64)> {
    let (lo, hi) = (b.min(), b.max());
    let mut t0 = f64::NEG_INFINITY;
    let mut t1 = f64::INFINITY;
    for a in 0..3 {
        if dir[a].abs() < 1e-15 {
            if origin[a] < lo[a] || origin[a] > hi[a] {
                return None;
            }
            continue;
        }
        let inv = 1.0 / dir[a];
        let (mut ta, mut tb) = ((lo[a] - origin[a]) * inv, (hi[a] - origin[a]) * inv);
        if ta > tb {
            std::mem::swap(&mut ta, &mut tb);
        }
        t0 = t0.max(ta);
        t1 = t1.min(tb);
    }
    (t0 <= t1).then_some((t0, t1))
}

fn sample_ts(near: f64, far: f64, n: usize) -> (Vec<f64>, f64) {
    let delta = (far - near) / n as f64;
    ((0..n).map(|i| near + (i as f64 + 0.5) * delta).collect(), delta)
}

/// Midpoint-quadrature march along one ray.
pub fn trace_ray<F: RadianceField + ?Sized>(
    field: &F,
    origin: &Vector3<f64>,
    dir: &Vector3<f64>,
    near: f64,
    far: f64,
    cfg: &RenderConfig,
) -> RayTrace {
    let (ts, delta) = sample_ts(near, far, cfg.samples);
    let span = ray_box(origin, dir, &field.bounds());
    let mut sigma = vec![0.0; ts.len()];
    let mut color = vec![[0.0; 3]; ts.len()];
    if let Some((a, b)) = span {
        for (i, &t) in ts.iter().enumerate() {
            if t < a || t > b {
                continue;
            }
            let (s, c) = field.query(&(origin + t * dir));
            sigma[i] = s;
            color[i] = c;
        }
    }
    let deltas = vec![delta; ts.len()];
    let (weights, trans) = composite(&sigma, &deltas);
    let mut rgb = [0.0; 3];
    let mut depth = trans * far;
    for i in 0..ts.len() {
        for c in 0..3 {
            rgb[c] += weights[i] * color[i][c];
        }
        depth += weights[i] * ts[i];
    }
    for c in 0..3 {
        rgb[c] += trans * cfg.background[c];
    }
    RayTrace {
        t: ts,
        delta: deltas,
        sigma,
        color,
        weights,
        transmittance: trans,
        rgb,
        depth: depth.clamp(near, far),
        mask: 1.0 - trans,
    }
}

/// Renders any radiance field from `cam` at `(height, width)`.
pub fn render_field<F: RadianceField + ?Sized>(
    field: &F,
    cam: &Camera,
    res: (usize, usize),
    cfg: &RenderConfig,
) -> Result<RenderedView> {
    let (h, w) = res;
    if h == 0 || w == 0 {
        return Err(Error::param("render resolution must be positive"));
    }
    cam.validate()?;
    let (near, far) = cfg.near_far(cam);
    let origin = cam.position();
    let (fwd, right, up) = cam.basis();
    let mut rgb = Image::zeros(3, h, w);
    let mut depth = Image::zeros(1, h, w);
    let mut mask = Image::zeros(1, h, w);
    for row in 0..h {
        for col in 0..w {
            let dir = cam.ray_dir_with(&fwd, &right, &up, row, col, h, w);
            let tr = trace_ray(field, &origin, &dir, near, far, cfg);
            for c in 0..3 {
                rgb.set(c, row, col, tr.rgb[c].clamp(0.0, 1.0));
            }
            depth.set(0, row, col, tr.depth);
            mask.set(0, row, col, tr.mask);
        }
    }
    Ok(RenderedView {
        rgb,
        depth,
        mask,
        cam: *cam,
        near,
        far,
    })
}

/// Forward render of the generator for latent `z` and body `params` seen
/// from `cam`.
pub fn render_view(
    model: &GeneratorModel,
    z: &LatentNoise,
    params: &BodyParams,
    cam: &Camera,
    res: (usize, usize),
) -> Result<RenderedView> {
    let posed = PosedGenerator::new(model, z, params)?;
    render_field(&posed, cam, res, &model.config.render)
}

struct SampleTape {
    t: f64,
    evals: Vec<PartEval>,
    sigma: f64,
    rgb: [f64; 3],
}

/// Everything the backward pass needs from one generator render.
pub struct RenderTape {
    z: LatentNoise,
    pixels: Vec<Vec<SampleTape>>,
    delta: f64,
    far: f64,
    background: [f64; 3],
    width: usize,
    height: usize,
    modulation: Vec<f64>,
}

/// Forward render that records a tape for [`RenderTape::backward`].
pub fn render_with_tape(
    model: &GeneratorModel,
    z: &LatentNoise,
    params: &BodyParams,
    cam: &Camera,
    res: (usize, usize),
) -> Result<(RenderedView, RenderTape)> {
    let (h, w) = res;
    if h == 0 || w == 0 {
        return Err(Error::param("render resolution must be positive"));
    }
    cam.validate()?;
    let posed = PosedGenerator::new(model, z, params)?;
    let cfg = &model.config.render;
    let (near, far) = cfg.near_far(cam);
    let (ts, delta) = sample_ts(near, far, cfg.samples);
    let origin = cam.position();
    let (fwd, right, up) = cam.basis();
    let bounds = posed.bounds();
    let mut rgb = Image::zeros(3, h, w);
    let mut depth = Image::zeros(1, h, w);
    let mut mask = Image::zeros(1, h, w);
    let mut pixels = Vec::with_capacity(h * w);
    for row in 0..h {
        for col in 0..w {
            let dir = cam.ray_dir_with(&fwd, &right, &up, row, col, h, w);
            let mut samples = Vec::new();
            if let Some((a, b)) = ray_box(&origin, &dir, &bounds) {
                for &t in &ts {
                    if t < a || t > b {
                        continue;
                    }
                    let evals = posed.query_cached(&(origin + t * dir));
                    if evals.is_empty() {
                        continue;
                    }
                    let (sigma, c) = PosedGenerator::combine(&evals);
                    samples.push(SampleTape { t, evals, sigma, rgb: c });
                }
            }
            let sig: Vec<f64> = samples.iter().map(|s| s.sigma).collect();
            let (weights, trans) = composite(&sig, &vec![delta; sig.len()]);
            let mut px = [0.0; 3];
            let mut d = trans * far;
            for (s, wgt) in samples.iter().zip(&weights) {
                for c in 0..3 {
                    px[c] += wgt * s.rgb[c];
                }
                d += wgt * s.t;
            }
            for c in 0..3 {
                rgb.set(c, row, col, px[c] + trans * cfg.background[c]);
            }
            depth.set(0, row, col, d);
            mask.set(0, row, col, 1.0 - trans);
            pixels.push(samples);
        }
    }
    let view = RenderedView {
        rgb,
        depth,
        mask,
        cam: *cam,
        near,
        far,
    };
    let tape = RenderTape {
        z: z.clone(),
        pixels,
        delta,
        far,
        background: cfg.background,
        width: w,
        height: h,
        modulation: posed.modulation.values.clone(),
    };
    Ok((view, tape))
}

impl RenderTape {
    /// Accumulates `∂L/∂params` into `grad` given upstream image gradients.
    pub fn backward(&self, model: &GeneratorModel, upstream: &ViewGrad, grad: &mut [f64]) {
        let cfg = &model.config;
        let layout = model.layout();
        assert_eq!(grad.len(), layout.len);
        let h = cfg.hidden;
        let p = &model.params;
        let mut g_mod = vec![0.0; GeneratorLayout::mod_outputs(cfg)];
        let mut g_h = vec![0.0; h];
        let mut g_prev = vec![0.0; h];
        for row in 0..self.height {
            for col in 0..self.width {
                let samples = &self.pixels[row * self.width + col];
                if samples.is_empty() {
                    continue;
                }
                let gr = [
                    upstream.rgb.get(0, row, col),
                    upstream.rgb.get(1, row, col),
                    upstream.rgb.get(2, row, col),
                ];
                let gd = upstream.depth.get(0, row, col);
                let gm = upstream.mask.get(0, row, col);
                if gr == [0.0; 3] && gd == 0.0 && gm == 0.0 {
                    continue;
                }
                let sig: Vec<f64> = samples.iter().map(|s| s.sigma).collect();
                let deltas = vec![self.delta; sig.len()];
                let gproj: Vec<f64> = samples
                    .iter()
                    .map(|s| gr[0] * s.rgb[0] + gr[1] * s.rgb[1] + gr[2] * s.rgb[2] + gd * s.t + gm)
                    .collect();
                let g_bg = gr[0] * self.background[0] + gr[1] * self.background[1] + gr[2] * self.background[2] + gd * self.far;
                let d_sigma = composite_backward(&sig, &deltas, &gproj, g_bg);
                let (weights, _) = composite(&sig, &deltas);
                for ((s, &ds), &wgt) in samples.iter().zip(&d_sigma).zip(&weights) {
                    for e in &s.evals {
                        let dens_g = e.weight * ds;
                        let col_g = [e.weight * wgt * gr[0], e.weight * wgt * gr[1], e.weight * wgt * gr[2]];
                        let mut g_out = [0.0; 4];
                        g_out[0] = dens_g * cfg.density_max * e.occupancy * (1.0 - e.occupancy) * (-cfg.residual_scale / cfg.softness);
                        for c in 0..3 {
                            g_out[c + 1] = col_g[c] * e.rgb[c] * (1.0 - e.rgb[c]);
                        }
                        part_backward(cfg, &layout, p, &self.modulation, e, &g_out, grad, &mut g_mod, &mut g_h, &mut g_prev);
                    }
                }
            }
        }
        let zd = cfg.latent_dim;
        let wstart = layout.mod_w.start;
        let bstart = layout.mod_b.start;
        for (row, &g) in g_mod.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            grad[bstart + row] += g;
            for j in 0..zd {
                grad[wstart + row * zd + j] += g * self.z.z[j];
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn part_backward(
    cfg: &super::GeneratorConfig,
    layout: &GeneratorLayout,
    p: &[f64],
    modulation: &[f64],
    e: &PartEval,
    g_out: &[f64; 4],
    grad: &mut [f64],
    g_mod: &mut [f64],
    g_h: &mut Vec<f64>,
    g_prev: &mut Vec<f64>,
) {
    let h = cfg.hidden;
    let pl = &layout.parts[e.part];
    let last = cfg.layers - 1;
    // output layer
    g_h.iter_mut().for_each(|v| *v = 0.0);
    let w_out = &p[pl.out_w.clone()];
    for (o, &g) in g_out.iter().enumerate() {
        if g == 0.0 {
            continue;
        }
        grad[pl.out_b.start + o] += g;
        for j in 0..h {
            let hj = e.arg[last * h + j].sin();
            grad[pl.out_w.start + o * h + j] += g * hj;
            g_h[j] += g * w_out[o * h + j];
        }
    }
    for l in (0..cfg.layers).rev() {
        let omega = if l == 0 { cfg.first_omega } else { cfg.hidden_omega };
        let (wr, br) = &pl.layers[l];
        let fan_in = if l == 0 { 3 } else { h };
        g_prev.iter_mut().for_each(|v| *v = 0.0);
        for j in 0..h {
            let s = e.arg[l * h + j];
            let gs = g_h[j] * s.cos();
            if gs == 0.0 {
                continue;
            }
            let gi = GeneratorLayout::mod_index(cfg, e.part, l, j, false);
            let bi = GeneratorLayout::mod_index(cfg, e.part, l, j, true);
            g_mod[gi] += gs * e.pre[l * h + j];
            g_mod[bi] += gs;
            let ga = gs * (1.0 + modulation[gi]) * omega;
            grad[br.start + j] += ga;
            for i in 0..fan_in {
                let input = if l == 0 { e.u[i] } else { e.arg[(l - 1) * h + i].sin() };
                grad[wr.start + j * fan_in + i] += ga * input;
                if l > 0 {
                    g_prev[i] += ga * p[wr.start + j * fan_in + i];
                }
            }
        }
        if l > 0 {
            std::mem::swap(g_h, g_prev);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::body::ParamDistributions;
    use crate::generator::{ConstantField, GeneratorConfig};
    use crate::rng::stream_rng;

    fn setup(seed: u64) -> (GeneratorModel, BodyParams, LatentNoise) {
        let m = GeneratorModel::init(GeneratorConfig::default(), seed).unwrap();
        let d = ParamDistributions::for_skeleton(&m.config.skeleton);
        let params = BodyParams::rest(m.config.skeleton.joint_count(), d.front_camera());
        let z = LatentNoise::sample(&mut stream_rng(seed, 99, 0), m.config.latent_dim);
        (m, params, z)
    }

    #[test]
    fn vacuum_renders_background() {
        let (mut m, params, z) = setup(1);
        m.config.density_max = 0.0;
        let v = render_view(&m, &z, &params, &params.cam, (16, 8)).unwrap();
        assert!(v.mask.data.iter().all(|&x| x == 0.0));
        assert!(v.rgb.data.iter().all(|&x| x == 1.0));
        assert!(v.depth.data.iter().all(|&x| x == v.far));
    }

    #[test]
    fn opaque_slab_depth_within_one_step() {
        let cfg = RenderConfig::default();
        let cam = Camera::new(0.0, 0.0, 3.0, 0.6, [0.0; 3]).unwrap();
        // slab facing the camera whose front face sits at camera distance d
        let d = 2.83;
        let front_z = cam.position().z - d;
        let slab = ConstantField {
            region: Aabb { center: [0.0, 0.0, front_z - 0.1], half: [2.0, 2.0, 0.1] },
            density: 1e6,
            color: [0.2, 0.4, 0.6],
        };
        let v = render_field(&slab, &cam, (9, 9), &cfg).unwrap();
        let (near, far) = cfg.near_far(&cam);
        let step = (far - near) / cfg.samples as f64;
        assert!((v.depth.get(0, 4, 4) - d).abs() <= step, "depth {}", v.depth.get(0, 4, 4));
        assert!(v.mask.get(0, 4, 4) >= 0.99);
    }

    #[test]
    fn weights_sum_to_opacity() {
        let (m, params, z) = setup(2);
        let posed = PosedGenerator::new(&m, &z, &params).unwrap();
        let cfg = &m.config.render;
        let (near, far) = cfg.near_far(&params.cam);
        let origin = params.cam.position();
        for (row, col) in [(16, 8), (10, 7), (20, 9)] {
            let dir = params.cam.ray_dir(row, col, 32, 16);
            let tr = trace_ray(&posed, &origin, &dir, near, far, cfg);
            let wsum: f64 = tr.weights.iter().sum();
            let tau: f64 = tr.sigma.iter().zip(&tr.delta).map(|(s, d)| s * d).sum();
            assert!((wsum - (1.0 - (-tau).exp())).abs() < 1e-6);
            assert!((tr.mask + tr.transmittance - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn composite_backward_matches_finite_differences() {
        let sigma = vec![0.5, 3.0, 0.0, 7.0, 1.2];
        let delta = vec![0.1; 5];
        let g = vec![0.3, -1.0, 2.0, 0.7, -0.4];
        let g_bg = 0.9;
        let loss = |s: &[f64]| {
            let (w, t) = composite(s, &delta);
            w.iter().zip(&g).map(|(a, b)| a * b).sum::<f64>() + t * g_bg
        };
        let an = composite_backward(&sigma, &delta, &g, g_bg);
        for k in 0..5 {
            let mut sp = sigma.clone();
            sp[k] += 1e-6;
            let mut sm = sigma.clone();
            sm[k] -= 1e-6;
            let fd = (loss(&sp) - loss(&sm)) / 2e-6;
            assert!((fd - an[k]).abs() < 1e-7, "{k}: {fd} vs {}", an[k]);
        }
    }

    #[test]
    fn tape_render_matches_plain_render() {
        let (m, params, z) = setup(3);
        let a = render_view(&m, &z, &params, &params.cam, (16, 8)).unwrap();
        let (b, _) = render_with_tape(&m, &z, &params, &params.cam, (16, 8)).unwrap();
        for (x, y) in a.rgb.data.iter().zip(&b.rgb.data) {
            assert!((x - y).abs() < 1e-12);
        }
        for (x, y) in a.mask.data.iter().zip(&b.mask.data) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn parameter_gradient_matches_finite_differences() {
        let (mut m, params, z) = setup(5);
        m.config.render.samples = 16;
        let res = (8, 4);
        let mut rng = stream_rng(6, 0, 0);
        let up = ViewGrad {
            rgb: Image::from_vec(3, 8, 4, crate::rng::normal_vec(&mut rng, 96)).unwrap(),
            depth: Image::from_vec(1, 8, 4, crate::rng::normal_vec(&mut rng, 32)).unwrap(),
            mask: Image::from_vec(1, 8, 4, crate::rng::normal_vec(&mut rng, 32)).unwrap(),
        };
        let loss = |m: &GeneratorModel| {
            let (v, _) = render_with_tape(m, &z, &params, &params.cam, res).unwrap();
            let dot = |a: &Image, b: &Image| a.data.iter().zip(&b.data).map(|(x, y)| x * y).sum::<f64>();
            dot(&v.rgb, &up.rgb) + dot(&v.depth, &up.depth) + dot(&v.mask, &up.mask)
        };
        let (_, tape) = render_with_tape(&m, &z, &params, &params.cam, res).unwrap();
        let mut grad = vec![0.0; m.param_count()];
        tape.backward(&m, &up, &mut grad);
        let layout = m.layout();
        let torso = &layout.parts[crate::body::PartId::Torso.index()];
        let mut probes = vec![
            torso.layers[0].0.start,
            torso.layers[0].1.start + 3,
            torso.layers[1].0.start + 17,
            torso.out_w.start,
            torso.out_w.start + 40,
            torso.out_b.start,
            torso.out_b.start + 2,
            layout.mod_b.start + GeneratorLayout::mod_index(&m.config, 1, 0, 5, true),
            layout.mod_b.start + GeneratorLayout::mod_index(&m.config, 1, 1, 2, false),
            layout.mod_w.start + GeneratorLayout::mod_index(&m.config, 1, 0, 5, false) * m.config.latent_dim + 7,
        ];
        probes.sort();
        let mut checked = 0;
        for &i in &probes {
            let h = 1e-5;
            let mut mp = m.clone();
            mp.params[i] += h;
            let mut mm = m.clone();
            mm.params[i] -= h;
            let fd = (loss(&mp) - loss(&mm)) / (2.0 * h);
            let tol = 1e-4 * (1.0 + fd.abs());
            assert!((fd - grad[i]).abs() < tol, "param {i}: fd {fd} vs analytic {}", grad[i]);
            if fd.abs() > 1e-6 {
                checked += 1;
            }
        }
        assert!(checked >= 5, "too few probes carried signal");
    }
}
