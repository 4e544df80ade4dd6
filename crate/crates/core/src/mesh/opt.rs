use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::{marching_tets, rasterize, ExtractedMesh, TetGrid, TexturedMesh};
use crate::body::{Aabb, Camera, ParamDistributions};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::nn::{all_finite, sigmoid, Adam};
use crate::prior::{crop_center, sds_grad, NoisePredictor, PromptEmbedding};
use crate::rng::{stream, stream_rng, uniform_vec};

/// Coordinate network `sigmoid(W2 sin(omega (W1 u + b1)) + b2)` on
/// box-normalized coordinates `u`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColorMlp {
    pub hidden: usize,
    pub omega: f64,
    pub bounds: Aabb,
    pub params: Vec<f64>,
}

impl ColorMlp {
    pub fn new(bounds: Aabb, hidden: usize, seed: u64) -> Self {
        let mut rng = stream_rng(seed, stream::INIT, 3);
        let mut params = vec![0.0; 7 * hidden + 3];
        let first = uniform_vec(&mut rng, 4 * hidden, -1.0, 1.0);
        params[..4 * hidden].copy_from_slice(&first);
        let s = (6.0 / hidden as f64).sqrt() * 0.5;
        let second = uniform_vec(&mut rng, 3 * hidden, -s, s);
        params[4 * hidden..7 * hidden].copy_from_slice(&second);
        Self { hidden, omega: 3.0, bounds, params }
    }

    fn hidden_acts(&self, p: &Vector3<f64>) -> (Vector3<f64>, Vec<f64>) {
        let u = self.bounds.normalize(p);
        let h = self.hidden;
        let args = (0..h)
            .map(|j| self.omega * (self.params[3 * h + j] + (0..3).map(|i| self.params[3 * j + i] * u[i]).sum::<f64>()))
            .collect();
        (u, args)
    }

    pub fn eval(&self, p: &Vector3<f64>) -> [f64; 3] {
        let h = self.hidden;
        let (_, args) = self.hidden_acts(p);
        [0, 1, 2].map(|c| {
            let row = &self.params[4 * h + c * h..4 * h + (c + 1) * h];
            sigmoid(self.params[7 * h + c] + row.iter().zip(&args).map(|(w, a)| w * a.sin()).sum::<f64>())
        })
    }

    /// Accumulates `d(g . rgb(p))/dparams`.
    pub fn backward(&self, p: &Vector3<f64>, g: &[f64; 3], grad: &mut [f64]) {
        let h = self.hidden;
        let (u, args) = self.hidden_acts(p);
        let rgb = self.eval(p);
        let mut g_hidden = vec![0.0; h];
        for c in 0..3 {
            let go = g[c] * rgb[c] * (1.0 - rgb[c]);
            if go == 0.0 {
                continue;
            }
            grad[7 * h + c] += go;
            for j in 0..h {
                grad[4 * h + c * h + j] += go * args[j].sin();
                g_hidden[j] += go * self.params[4 * h + c * h + j];
            }
        }
        for j in 0..h {
            let ga = g_hidden[j] * args[j].cos() * self.omega;
            grad[3 * h + j] += ga;
            for i in 0..3 {
                grad[3 * j + i] += ga * u[i];
            }
        }
    }

    /// Least-squares fit of the network to `(point, rgb)` samples.
    pub fn fit(&mut self, samples: &[(Vector3<f64>, [f64; 3])], steps: usize, lr: f64) -> f64 {
        let mut adam = Adam::new(self.params.len(), lr);
        let mut loss = 0.0;
        for _ in 0..steps {
            let mut grad = vec![0.0; self.params.len()];
            loss = 0.0;
            for (p, target) in samples {
                let rgb = self.eval(p);
                let g = [0, 1, 2].map(|c| 2.0 * (rgb[c] - target[c]) / samples.len() as f64);
                loss += (0..3).map(|c| (rgb[c] - target[c]).powi(2)).sum::<f64>() / samples.len() as f64;
                self.backward(p, &g, &mut grad);
            }
            adam.step(&mut self.params, &grad);
        }
        loss
    }
}

/// A target image with the camera it was rendered from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionView {
    pub image: Image,
    pub mask: Image,
    pub cam: Camera,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeshOptConfig {
    pub mse_weight: f64,
    pub sds_weight: f64,
    /// Square rasterization size.
    pub resolution: usize,
    pub cfg_scale: f64,
    pub lr_sdf: f64,
    pub lr_deform: f64,
    pub lr_color: f64,
    pub background: [f64; 3],
}

impl Default for MeshOptConfig {
    fn default() -> Self {
        Self {
            mse_weight: 1000.0,
            sds_weight: 1.0,
            resolution: 128,
            cfg_scale: 100.0,
            lr_sdf: 0.02,
            lr_deform: 1e-3,
            lr_color: 5e-3,
            background: [1.0; 3],
        }
    }
}

impl MeshOptConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.mse_weight >= 0.0 && self.sds_weight >= 0.0) {
            return Err(Error::param("mesh loss weights must be non-negative"));
        }
        if self.resolution < 2 || ![self.lr_sdf, self.lr_deform, self.lr_color].iter().all(|&l| l > 0.0) {
            return Err(Error::param("mesh resolution and learning rates must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MeshStepKind {
    Sds,
    Mse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeshStepRecord {
    pub iteration: u64,
    pub kind: MeshStepKind,
    pub loss: f64,
    /// Mean squared error over the target's covered pixels (MSE steps).
    pub masked_mse: Option<f64>,
    pub faces: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeshOptState {
    pub config: MeshOptConfig,
    pub grid: TetGrid,
    pub color: ColorMlp,
    pub conditions: Vec<ConditionView>,
    pub iteration: u64,
    pub seed: u64,
    opt_sdf: Adam,
    opt_deform: Adam,
    opt_color: Adam,
    pub history: Vec<MeshStepRecord>,
}

impl MeshOptState {
    pub fn new(config: MeshOptConfig, grid: TetGrid, color: ColorMlp, conditions: Vec<ConditionView>, seed: u64) -> Result<Self> {
        config.validate()?;
        grid.validate()?;
        let nv = grid.rest.len();
        Ok(Self {
            opt_sdf: Adam::new(nv, config.lr_sdf),
            opt_deform: Adam::new(3 * nv, config.lr_deform),
            opt_color: Adam::new(color.params.len(), config.lr_color),
            config,
            grid,
            color,
            conditions,
            iteration: 0,
            seed,
            history: Vec::new(),
        })
    }

    /// Current mesh with colors from the color network.
    pub fn extract(&self) -> ExtractedMesh {
        let mut m = marching_tets(&self.grid);
        m.mesh.colors = m.mesh.vertices.iter().map(|v| self.color.eval(&Vector3::from(*v))).collect();
        m
    }

    pub fn mesh(&self) -> TexturedMesh {
        self.extract().mesh
    }

    pub fn next_kind(&self) -> MeshStepKind {
        if self.iteration % 2 == 0 {
            MeshStepKind::Sds
        } else {
            MeshStepKind::Mse
        }
    }

    /// Condition used by the MSE step at `iteration` (front, back, front...).
    pub fn condition_for(&self, iteration: u64) -> Option<&ConditionView> {
        if self.conditions.is_empty() {
            return None;
        }
        Some(&self.conditions[((iteration / 2) as usize) % self.conditions.len()])
    }
}

fn pool_to_height(img: &Image, height: usize) -> Image {
    let mut out = img.clone();
    while out.height > height && out.height % 2 == 0 && out.width % 2 == 0 {
        out = out.downsample2();
    }
    out
}

fn uncrop(grad: &Image, height: usize, width: usize) -> Image {
    let mut out = Image::zeros(grad.channels, height, width);
    let (oy, ox) = ((height - grad.height) / 2, (width - grad.width) / 2);
    for c in 0..grad.channels {
        for y in 0..grad.height {
            for x in 0..grad.width {
                out.set(c, oy + y, ox + x, grad.get(c, y, x));
            }
        }
    }
    out
}

fn unpool_to(grad: &Image, height: usize) -> Image {
    let mut g = grad.clone();
    while g.height < height {
        g = Image::downsample2_backward(&g, g.height * 2, g.width * 2);
    }
    g
}

/// Masked mean squared rgb error of `rgb` against `cond`.
pub fn masked_mse(rgb: &Image, cond: &ConditionView) -> f64 {
    let plane = rgb.height * rgb.width;
    let (mut sum, mut count) = (0.0, 0usize);
    for i in 0..plane {
        if cond.mask.data[i] > 0.5 {
            count += 1;
            for c in 0..3 {
                sum += (rgb.data[c * plane + i] - cond.image.data[c * plane + i]).powi(2);
            }
        }
    }
    if count == 0 { 0.0 } else { sum / (3 * count) as f64 }
}

/// One mesh-stage iteration: SDS on even iterations from a sampled camera,
/// MSE against a condition view on odd ones. SDS sees the render pooled to
/// `prior_res.0` rows and center-cropped to `prior_res.1` columns.
pub fn mesh_finetune_step(
    state: &mut MeshOptState,
    prior: &dyn NoisePredictor,
    prompt: &PromptEmbedding,
    cameras: &ParamDistributions,
    prior_res: (usize, usize),
) -> Result<MeshStepRecord> {
    if state.conditions.is_empty() {
        return Err(Error::param("mesh optimization needs condition views before stepping"));
    }
    let it = state.iteration;
    let kind = state.next_kind();
    let cfg = state.config.clone();
    let res = (cfg.resolution, cfg.resolution);
    let extracted = state.extract();
    let mesh = &extracted.mesh;
    let (weight, cam) = match kind {
        MeshStepKind::Sds => {
            let cam = cameras.sample_camera(&mut stream_rng(state.seed, stream::MESH, it));
            (cfg.sds_weight, cam)
        }
        MeshStepKind::Mse => (cfg.mse_weight, state.condition_for(it).expect("conditions present").cam),
    };
    let (view, tape) = rasterize(mesh, &cam, res, cfg.background);
    let mut loss = 0.0;
    let mut masked = None;
    let mut g_rgb = Image::zeros(3, res.0, res.1);
    match kind {
        MeshStepKind::Sds => {
            if weight != 0.0 && !mesh.is_empty() {
                let pooled = pool_to_height(&view.rgb.clamp01(), prior_res.0);
                let small = crop_center(&pooled, prior_res.0, prior_res.1)?;
                let mut rng = stream_rng(state.seed, stream::MESH, it | (1 << 40));
                let t = prior.schedule().sample_sds_level(&mut rng);
                let sds = sds_grad(prior, &small, prompt, t, &mut rng, cfg.cfg_scale)?;
                loss = weight * sds.proxy_loss();
                let g = uncrop(&sds.grad, pooled.height, pooled.width);
                g_rgb = unpool_to(&g, res.0).map(|g| g * weight);
            }
        }
        MeshStepKind::Mse => {
            let cond = state.condition_for(it).expect("conditions present");
            if !cond.image.same_shape(&view.rgb) {
                return Err(Error::param("condition image must match the mesh render resolution"));
            }
            let n = view.rgb.data.len() as f64;
            let mut sq = 0.0;
            for (g, (r, t)) in g_rgb.data.iter_mut().zip(view.rgb.data.iter().zip(&cond.image.data)) {
                sq += (r - t) * (r - t);
                *g = weight * 2.0 * (r - t) / n;
            }
            loss = weight * sq / n;
            masked = Some(masked_mse(&view.rgb, cond));
        }
    }
    if weight != 0.0 && !mesh.is_empty() {
        let mg = tape.backward(mesh, &g_rgb, None);
        let nv = state.grid.rest.len();
        let mut g_sdf = vec![0.0; nv];
        let mut g_def = vec![0.0; 3 * nv];
        for (e, gv) in extracted.provenance.iter().zip(&mg.vertices) {
            let (a, b) = (e.a as usize, e.b as usize);
            let (pa, pb) = (state.grid.position(a), state.grid.position(b));
            for k in 0..3 {
                g_def[3 * a + k] += (1.0 - e.t) * gv[k];
                g_def[3 * b + k] += e.t * gv[k];
            }
            let gt = gv.dot(&(pb - pa));
            let (sa, sb) = (state.grid.sdf[a], state.grid.sdf[b]);
            let den = (sa - sb) * (sa - sb);
            g_sdf[a] += gt * (-sb / den);
            g_sdf[b] += gt * (sa / den);
        }
        let mut g_col = vec![0.0; state.color.params.len()];
        for (v, gc) in mesh.vertices.iter().zip(&mg.colors) {
            state.color.backward(&Vector3::from(*v), gc, &mut g_col);
        }
        if !(all_finite(&g_sdf) && all_finite(&g_def) && all_finite(&g_col)) {
            return Err(Error::NonFinite { what: "mesh gradient".into(), iteration: it });
        }
        state.opt_sdf.step(&mut state.grid.sdf, &g_sdf);
        let mut flat: Vec<f64> = state.grid.deform.iter().flat_map(|d| [d.x, d.y, d.z]).collect();
        state.opt_deform.step(&mut flat, &g_def);
        for (d, c) in state.grid.deform.iter_mut().zip(flat.chunks_exact(3)) {
            *d = Vector3::new(c[0], c[1], c[2]);
        }
        state.grid.clamp_deform();
        state.opt_color.step(&mut state.color.params, &g_col);
    }
    let record = MeshStepRecord { iteration: it, kind, loss, masked_mse: masked, faces: mesh.faces.len() };
    state.iteration += 1;
    state.history.push(record.clone());
    Ok(record)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prior::DiffusionSchedule;

    struct ZeroPrior(DiffusionSchedule);

    impl NoisePredictor for ZeroPrior {
        fn schedule(&self) -> &DiffusionSchedule {
            &self.0
        }
        fn predict_noise(&self, noisy: &Image, _t: usize, _y: &PromptEmbedding) -> Image {
            Image::zeros(noisy.channels, noisy.height, noisy.width)
        }
    }

    fn bounds() -> Aabb {
        Aabb { center: [0.0; 3], half: [1.0; 3] }
    }

    fn sphere(n: usize, r: f64) -> TetGrid {
        let h = 2.0 / (n - 1) as f64;
        let mut g = TetGrid::new(n, [-1.0; 3], [h; 3]).unwrap();
        for v in 0..g.rest.len() {
            g.sdf[v] = (g.rest[v].norm() - r) / h;
        }
        g
    }

    fn dists() -> ParamDistributions {
        ParamDistributions::new(vec![], vec![], vec![], vec![], (0.0, 6.28), (0.0, 0.0), (3.0, 3.0), 0.6, [0.0; 3]).unwrap()
    }

    fn conditions(grid: &TetGrid, color: &ColorMlp, res: usize) -> Vec<ConditionView> {
        let mut m = marching_tets(grid).mesh;
        m.colors = m.vertices.iter().map(|v| color.eval(&Vector3::from(*v))).collect();
        [0.0, std::f64::consts::PI]
            .iter()
            .map(|&az| {
                let cam = Camera::new(az, 0.0, 3.0, 0.6, [0.0; 3]).unwrap();
                let (view, _) = rasterize(&m, &cam, (res, res), [1.0; 3]);
                ConditionView { image: view.rgb, mask: view.mask, cam }
            })
            .collect()
    }

    #[test]
    fn color_mlp_gradient_matches_finite_differences() {
        let mlp = ColorMlp::new(bounds(), 6, 3);
        let p = Vector3::new(0.2, -0.4, 0.7);
        let g = [0.3, -1.1, 0.6];
        let mut grad = vec![0.0; mlp.params.len()];
        mlp.backward(&p, &g, &mut grad);
        let f = |m: &ColorMlp| m.eval(&p).iter().zip(&g).map(|(a, b)| a * b).sum::<f64>();
        for i in 0..mlp.params.len() {
            let (mut a, mut b) = (mlp.clone(), mlp.clone());
            a.params[i] += 1e-6;
            b.params[i] -= 1e-6;
            assert!(((f(&a) - f(&b)) / 2e-6 - grad[i]).abs() < 1e-7);
        }
    }

    #[test]
    fn steps_alternate_and_zero_weight_steps_are_inert() {
        let grid = sphere(9, 0.5);
        let color = ColorMlp::new(bounds(), 8, 1);
        let conds = conditions(&grid, &color, 16);
        let cfg = MeshOptConfig { resolution: 16, sds_weight: 0.0, ..MeshOptConfig::default() };
        let mut st = MeshOptState::new(cfg, grid, color, conds, 0).unwrap();
        let prior = ZeroPrior(DiffusionSchedule::default());
        let y = PromptEmbedding::null(24);
        let before = (st.grid.sdf.clone(), st.color.params.clone());
        let rec = mesh_finetune_step(&mut st, &prior, &y, &dists(), (16, 8)).unwrap();
        assert_eq!(rec.kind, MeshStepKind::Sds);
        assert_eq!((st.grid.sdf.clone(), st.color.params.clone()), before);
        for i in 1..8 {
            let rec = mesh_finetune_step(&mut st, &prior, &y, &dists(), (16, 8)).unwrap();
            let want = if i % 2 == 0 { MeshStepKind::Sds } else { MeshStepKind::Mse };
            assert_eq!(rec.kind, want);
        }
    }

    #[test]
    fn sds_steps_move_parameters_through_the_crop() {
        let grid = sphere(9, 0.5);
        let color = ColorMlp::new(bounds(), 8, 1);
        let conds = conditions(&grid, &color, 32);
        let cfg = MeshOptConfig { resolution: 32, ..MeshOptConfig::default() };
        let mut st = MeshOptState::new(cfg, grid, color, conds, 0).unwrap();
        let before = st.color.params.clone();
        let prior = ZeroPrior(DiffusionSchedule::default());
        let rec = mesh_finetune_step(&mut st, &prior, &PromptEmbedding::null(24), &dists(), (16, 8)).unwrap();
        assert_eq!(rec.kind, MeshStepKind::Sds);
        assert!(rec.loss.is_finite());
        assert_ne!(st.color.params, before);
    }

    #[test]
    fn stepping_without_conditions_fails() {
        let mut st = MeshOptState::new(MeshOptConfig::default(), sphere(5, 0.5), ColorMlp::new(bounds(), 4, 0), vec![], 0).unwrap();
        let prior = ZeroPrior(DiffusionSchedule::default());
        assert!(mesh_finetune_step(&mut st, &prior, &PromptEmbedding::null(24), &dists(), (16, 8)).is_err());
    }

    #[test]
    fn mse_steps_fit_a_reference_mesh() {
        let conds = conditions(&sphere(12, 0.55), &ColorMlp::new(bounds(), 16, 7), 32);
        let cfg = MeshOptConfig { resolution: 32, sds_weight: 0.0, ..MeshOptConfig::default() };
        let mut st = MeshOptState::new(cfg, sphere(12, 0.4), ColorMlp::new(bounds(), 16, 8), conds, 0).unwrap();
        let prior = ZeroPrior(DiffusionSchedule::default());
        let y = PromptEmbedding::null(24);
        let mut first = None;
        let mut last = 0.0;
        for _ in 0..200 {
            let r = mesh_finetune_step(&mut st, &prior, &y, &dists(), (16, 8)).unwrap();
            if let Some(m) = r.masked_mse {
                first.get_or_insert(m);
                last = m;
            }
        }
        assert!(last < 0.5 * first.unwrap());
    }
}
