//! Z-buffered triangle rasterizer with a one-pixel anti-aliased silhouette
//! band, and its backward pass to vertex positions and colors.

use nalgebra::{Vector2, Vector3};

use super::TexturedMesh;
use crate::body::Camera;
use crate::generator::RenderedView;
use crate::image::Image;

#[derive(Debug, Clone, Copy, PartialEq)]
enum Hit {
    Empty,
    Face { face: usize, bary: [f64; 3] },
    /// Closest point on edge `(i, j)` (local corner ids) at parameter `u`.
    Edge { face: usize, i: usize, j: usize, u: f64, dist: f64, clamp: u8 },
}

pub struct RasterTape {
    hits: Vec<Hit>,
    screen: Vec<Option<(Vector2<f64>, f64, [Vector3<f64>; 2])>>,
    width: usize,
    background: [f64; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeshGrad {
    pub vertices: Vec<Vector3<f64>>,
    pub colors: Vec<[f64; 3]>,
}

fn edge_fn(a: &Vector2<f64>, b: &Vector2<f64>, c: &Vector2<f64>) -> f64 {
    (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x)
}

/// Gradients of [`edge_fn`] with respect to `a`, `b`, `c`.
fn edge_fn_grad(a: &Vector2<f64>, b: &Vector2<f64>, c: &Vector2<f64>) -> [Vector2<f64>; 3] {
    [
        Vector2::new(b.y - c.y, c.x - b.x),
        Vector2::new(c.y - a.y, a.x - c.x),
        Vector2::new(a.y - b.y, b.x - a.x),
    ]
}

fn closest_on_segment(q: &Vector2<f64>, a: &Vector2<f64>, b: &Vector2<f64>) -> (f64, f64, u8) {
    let e = b - a;
    let len2 = e.norm_squared();
    if len2 < 1e-18 {
        return (0.0, (q - a).norm(), 1);
    }
    let raw = (q - a).dot(&e) / len2;
    let (u, clamp) = if raw <= 0.0 {
        (0.0, 1)
    } else if raw >= 1.0 {
        (1.0, 2)
    } else {
        (raw, 0)
    };
    (u, (q - (a + u * e)).norm(), clamp)
}

fn mix(a: &[f64; 3], b: &[f64; 3], u: f64) -> [f64; 3] {
    [0, 1, 2].map(|c| (1.0 - u) * a[c] + u * b[c])
}

/// Renders `mesh` from `cam`. Back faces are culled; uncovered pixels within
/// one pixel of a front face's edge get coverage `1 - distance`.
pub fn rasterize(mesh: &TexturedMesh, cam: &Camera, res: (usize, usize), background: [f64; 3]) -> (RenderedView, RasterTape) {
    let (h, w) = res;
    let far = 2.0 * cam.distance;
    let eye = cam.position();
    let screen: Vec<_> = mesh
        .vertices
        .iter()
        .map(|v| cam.project_with_jacobian(&Vector3::from(*v), h, w).map(|((x, y, z), j)| (Vector2::new(x, y), z, j)))
        .collect();
    let front: Vec<bool> = mesh
        .faces
        .iter()
        .map(|f| {
            if f.iter().any(|&v| screen[v as usize].is_none()) {
                return false;
            }
            let p = f.map(|v| Vector3::from(mesh.vertices[v as usize]));
            let n = (p[1] - p[0]).cross(&(p[2] - p[0]));
            n.dot(&(p[0] - eye)) < 0.0
        })
        .collect();
    let mut hits = vec![Hit::Empty; h * w];
    let mut zbuf = vec![f64::INFINITY; h * w];
    let bbox = |pts: &[Vector2<f64>], pad: f64| {
        let (mut x0, mut y0, mut x1, mut y1) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in pts {
            x0 = x0.min(p.x);
            y0 = y0.min(p.y);
            x1 = x1.max(p.x);
            y1 = y1.max(p.y);
        }
        let cx0 = ((x0 - pad - 0.5).ceil().max(0.0)) as usize;
        let cy0 = ((y0 - pad - 0.5).ceil().max(0.0)) as usize;
        let cx1 = ((x1 + pad - 0.5).floor().min(w as f64 - 1.0)).max(-1.0) as i64;
        let cy1 = ((y1 + pad - 0.5).floor().min(h as f64 - 1.0)).max(-1.0) as i64;
        (cx0, cy0, cx1, cy1)
    };
    for (fi, f) in mesh.faces.iter().enumerate() {
        if !front[fi] {
            continue;
        }
        let s = f.map(|v| screen[v as usize].expect("front faces project"));
        let pts = [s[0].0, s[1].0, s[2].0];
        let area = edge_fn(&pts[0], &pts[1], &pts[2]);
        if area.abs() < 1e-12 {
            continue;
        }
        let (x0, y0, x1, y1) = bbox(&pts, 0.0);
        for row in y0 as i64..=y1 {
            for col in x0 as i64..=x1 {
                let q = Vector2::new(col as f64 + 0.5, row as f64 + 0.5);
                let bary = [
                    edge_fn(&q, &pts[1], &pts[2]) / area,
                    edge_fn(&pts[0], &q, &pts[2]) / area,
                    edge_fn(&pts[0], &pts[1], &q) / area,
                ];
                if bary.iter().any(|&b| b < 0.0) {
                    continue;
                }
                let z = bary[0] * s[0].1 + bary[1] * s[1].1 + bary[2] * s[2].1;
                let idx = row as usize * w + col as usize;
                if z < zbuf[idx] {
                    zbuf[idx] = z;
                    hits[idx] = Hit::Face { face: fi, bary };
                }
            }
        }
    }
    let covered: Vec<bool> = hits.iter().map(|h| matches!(h, Hit::Face { .. })).collect();
    let mut best = vec![1.0f64; h * w];
    for (fi, f) in mesh.faces.iter().enumerate() {
        if !front[fi] {
            continue;
        }
        let s = f.map(|v| screen[v as usize].expect("front faces project").0);
        for (i, j) in [(0, 1), (1, 2), (2, 0)] {
            let (x0, y0, x1, y1) = bbox(&[s[i], s[j]], 1.0);
            for row in y0 as i64..=y1 {
                for col in x0 as i64..=x1 {
                    let idx = row as usize * w + col as usize;
                    if covered[idx] {
                        continue;
                    }
                    let q = Vector2::new(col as f64 + 0.5, row as f64 + 0.5);
                    let (u, dist, clamp) = closest_on_segment(&q, &s[i], &s[j]);
                    if dist < best[idx] {
                        best[idx] = dist;
                        hits[idx] = Hit::Edge { face: fi, i, j, u, dist, clamp };
                    }
                }
            }
        }
    }
    let mut rgb = Image::zeros(3, h, w);
    let mut depth = Image::filled(1, h, w, far);
    let mut mask = Image::zeros(1, h, w);
    for (idx, hit) in hits.iter().enumerate() {
        let (row, col) = (idx / w, idx % w);
        let (color, alpha, z) = match *hit {
            Hit::Empty => (background, 0.0, far),
            Hit::Face { face, bary } => {
                let f = mesh.faces[face];
                let mut c = [0.0; 3];
                let mut z = 0.0;
                for k in 0..3 {
                    let v = f[k] as usize;
                    for ch in 0..3 {
                        c[ch] += bary[k] * mesh.colors[v][ch];
                    }
                    z += bary[k] * screen[v].expect("covered").1;
                }
                (c, 1.0, z)
            }
            Hit::Edge { face, i, j, u, dist, .. } => {
                let f = mesh.faces[face];
                let (vi, vj) = (f[i] as usize, f[j] as usize);
                let z = (1.0 - u) * screen[vi].expect("edge").1 + u * screen[vj].expect("edge").1;
                (mix(&mesh.colors[vi], &mesh.colors[vj], u), 1.0 - dist, z)
            }
        };
        for ch in 0..3 {
            rgb.set(ch, row, col, alpha * color[ch] + (1.0 - alpha) * background[ch]);
        }
        depth.set(0, row, col, alpha * z + (1.0 - alpha) * far);
        mask.set(0, row, col, alpha);
    }
    let view = RenderedView { rgb, depth, mask, cam: *cam, near: 1e-3, far };
    (view, RasterTape { hits, screen, width: w, background })
}

impl RasterTape {
    /// Gradients of `sum(g_rgb * rgb) + sum(g_mask * mask)`.
    pub fn backward(&self, mesh: &TexturedMesh, g_rgb: &Image, g_mask: Option<&Image>) -> MeshGrad {
        let mut gv = vec![Vector3::zeros(); mesh.vertices.len()];
        let mut gc = vec![[0.0; 3]; mesh.vertices.len()];
        let w = self.width;
        let sv = |v: usize| self.screen[v].expect("hit vertices project");
        for (idx, hit) in self.hits.iter().enumerate() {
            let (row, col) = (idx / w, idx % w);
            let g = [0, 1, 2].map(|c| g_rgb.get(c, row, col));
            let gm = g_mask.map_or(0.0, |m| m.get(0, row, col));
            let q = Vector2::new(col as f64 + 0.5, row as f64 + 0.5);
            match *hit {
                Hit::Empty => {}
                Hit::Face { face, bary } => {
                    let f = mesh.faces[face].map(|v| v as usize);
                    let s = f.map(|v| sv(v).0);
                    let gamma = f.map(|v| (0..3).map(|c| g[c] * mesh.colors[v][c]).sum::<f64>());
                    for k in 0..3 {
                        for c in 0..3 {
                            gc[f[k]][c] += bary[k] * g[c];
                        }
                    }
                    let area = edge_fn(&s[0], &s[1], &s[2]);
                    let value: f64 = (0..3).map(|k| bary[k] * gamma[k]).sum();
                    let ga = edge_fn_grad(&s[0], &s[1], &s[2]);
                    let g0 = edge_fn_grad(&q, &s[1], &s[2]);
                    let g1 = edge_fn_grad(&s[0], &q, &s[2]);
                    let g2 = edge_fn_grad(&s[0], &s[1], &q);
                    let dn = [
                        gamma[1] * g1[0] + gamma[2] * g2[0],
                        gamma[0] * g0[1] + gamma[2] * g2[1],
                        gamma[0] * g0[2] + gamma[1] * g1[2],
                    ];
                    for k in 0..3 {
                        let ds = (dn[k] - value * ga[k]) / area;
                        let j = sv(f[k]).2;
                        gv[f[k]] += j[0] * ds.x + j[1] * ds.y;
                    }
                }
                Hit::Edge { face, i, j, u, dist, clamp } => {
                    let f = mesh.faces[face];
                    let (vi, vj) = (f[i] as usize, f[j] as usize);
                    let (si, sj) = (sv(vi).0, sv(vj).0);
                    let alpha = 1.0 - dist;
                    let e = mix(&mesh.colors[vi], &mesh.colors[vj], u);
                    for c in 0..3 {
                        gc[vi][c] += alpha * (1.0 - u) * g[c];
                        gc[vj][c] += alpha * u * g[c];
                    }
                    let d_alpha: f64 = (0..3).map(|c| g[c] * (e[c] - self.background[c])).sum::<f64>() + gm;
                    let closest = si + u * (sj - si);
                    let normal = if dist > 1e-12 { (q - closest) / dist } else { Vector2::zeros() };
                    // d(dist)/ds via the envelope theorem
                    let (mut dsi, mut dsj) = match clamp {
                        1 => (-normal, Vector2::zeros()),
                        2 => (Vector2::zeros(), -normal),
                        _ => (-(1.0 - u) * normal, -u * normal),
                    };
                    dsi *= -d_alpha;
                    dsj *= -d_alpha;
                    if clamp == 0 {
                        let d_u: f64 = (0..3).map(|c| alpha * g[c] * (mesh.colors[vj][c] - mesh.colors[vi][c])).sum();
                        let ev = sj - si;
                        let wv = q - si;
                        let len2 = ev.norm_squared();
                        dsj += d_u * (wv - 2.0 * u * ev) / len2;
                        dsi += d_u * (-ev - wv + 2.0 * u * ev) / len2;
                    }
                    let (ji, jj) = (sv(vi).2, sv(vj).2);
                    gv[vi] += ji[0] * dsi.x + ji[1] * dsi.y;
                    gv[vj] += jj[0] * dsj.x + jj[1] * dsj.y;
                }
            }
        }
        MeshGrad { vertices: gv, colors: gc }
    }
}
