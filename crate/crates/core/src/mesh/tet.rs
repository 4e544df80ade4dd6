use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::TexturedMesh;
use crate::error::{Error, Result};
use crate::generator::DensityGrid;

/// Regular vertex lattice split into six tetrahedra per cube, carrying a
/// signed distance value and a bounded displacement per vertex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TetGrid {
    pub n: usize,
    pub origin: [f64; 3],
    pub spacing: [f64; 3],
    pub rest: Vec<Vector3<f64>>,
    pub tets: Vec<[u32; 4]>,
    /// Negative inside.
    pub sdf: Vec<f64>,
    pub deform: Vec<Vector3<f64>>,
}

fn lattice_index(n: usize, i: usize, j: usize, k: usize) -> usize {
    (i * n + j) * n + k
}

fn signed_volume(p: &[Vector3<f64>; 4]) -> f64 {
    (p[1] - p[0]).cross(&(p[2] - p[0])).dot(&(p[3] - p[0]))
}

impl TetGrid {
    pub fn new(n: usize, origin: [f64; 3], spacing: [f64; 3]) -> Result<Self> {
        if n < 2 || spacing.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::param("tet grid needs n >= 2 and positive spacing"));
        }
        let mut rest = Vec::with_capacity(n * n * n);
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    rest.push(Vector3::new(
                        origin[0] + i as f64 * spacing[0],
                        origin[1] + j as f64 * spacing[1],
                        origin[2] + k as f64 * spacing[2],
                    ));
                }
            }
        }
        const PERMS: [[usize; 3]; 6] = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
        let mut tets = Vec::with_capacity(6 * (n - 1).pow(3));
        for i in 0..n - 1 {
            for j in 0..n - 1 {
                for k in 0..n - 1 {
                    let corner = |bits: usize| {
                        lattice_index(n, i + (bits & 1), j + ((bits >> 1) & 1), k + ((bits >> 2) & 1)) as u32
                    };
                    for perm in PERMS {
                        let b1 = 1 << perm[0];
                        let b2 = b1 | (1 << perm[1]);
                        let mut t = [corner(0), corner(b1), corner(b2), corner(7)];
                        let p = t.map(|v| rest[v as usize]);
                        if signed_volume(&p) < 0.0 {
                            t.swap(2, 3);
                        }
                        tets.push(t);
                    }
                }
            }
        }
        let len = rest.len();
        Ok(Self { n, origin, spacing, rest, tets, sdf: vec![1.0; len], deform: vec![Vector3::zeros(); len] })
    }

    /// Grid on the lattice of `density` with sdf from [`density_to_sdf`].
    pub fn from_density(density: &DensityGrid, level: f64) -> Result<Self> {
        let mut g = Self::new(density.n, density.origin, density.spacing)?;
        g.sdf = density_to_sdf(density, level)?;
        Ok(g)
    }

    pub fn min_edge(&self) -> f64 {
        self.spacing.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_deform(&self) -> f64 {
        0.5 * self.min_edge()
    }

    pub fn clamp_deform(&mut self) {
        let m = self.max_deform();
        for d in &mut self.deform {
            for a in 0..3 {
                d[a] = d[a].clamp(-m, m);
            }
        }
    }

    pub fn position(&self, v: usize) -> Vector3<f64> {
        self.rest[v] + self.deform[v]
    }

    pub fn validate(&self) -> Result<()> {
        let nv = self.rest.len();
        if self.sdf.len() != nv || self.deform.len() != nv {
            return Err(Error::param("tet grid arrays disagree in length"));
        }
        if self.tets.iter().flatten().any(|&v| v as usize >= nv) {
            return Err(Error::param("tet index out of range"));
        }
        let m = self.max_deform() * (1.0 + 1e-12);
        if self.deform.iter().any(|d| d.amax() > m) {
            return Err(Error::param("deformation exceeds half the minimum edge"));
        }
        if !self.sdf.iter().all(|s| s.is_finite()) {
            return Err(Error::param("sdf must be finite"));
        }
        Ok(())
    }
}

/// Signed distance in units of the smallest lattice spacing, negative where
/// `density > level`. Crossings are placed by linear interpolation along
/// lattice edges and propagated with shortest paths over the 26-neighbour
/// lattice.
pub fn density_to_sdf(grid: &DensityGrid, level: f64) -> Result<Vec<f64>> {
    if !(level > 0.0) {
        return Err(Error::param("density level must be positive"));
    }
    let n = grid.n;
    let h = grid.spacing.iter().copied().fold(f64::INFINITY, f64::min);
    let inside: Vec<bool> = grid.values.iter().map(|&d| d > level).collect();
    let mut dist = vec![f64::INFINITY; grid.values.len()];
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                let a = grid.index(i, j, k);
                for (axis, di) in [(0, [1i64, 0, 0]), (1, [0, 1, 0]), (2, [0, 0, 1])] {
                    for s in [-1i64, 1] {
                        let (ii, jj, kk) = (i as i64 + s * di[0], j as i64 + s * di[1], k as i64 + s * di[2]);
                        if [ii, jj, kk].iter().any(|&c| c < 0 || c >= n as i64) {
                            continue;
                        }
                        let b = grid.index(ii as usize, jj as usize, kk as usize);
                        if inside[a] == inside[b] {
                            continue;
                        }
                        let (da, db) = (grid.values[a], grid.values[b]);
                        let f = ((level - da) / (db - da)).clamp(0.0, 1.0);
                        dist[a] = dist[a].min(f * grid.spacing[axis] / h);
                    }
                }
            }
        }
    }
    let mut heap: BinaryHeap<Reverse<(u64, usize)>> = BinaryHeap::new();
    for (v, &d) in dist.iter().enumerate() {
        if d.is_finite() {
            heap.push(Reverse((d.to_bits(), v)));
        }
    }
    let mut offsets = Vec::new();
    for di in -1i64..=1 {
        for dj in -1i64..=1 {
            for dk in -1i64..=1 {
                if (di, dj, dk) != (0, 0, 0) {
                    let len = ((di as f64 * grid.spacing[0]).powi(2)
                        + (dj as f64 * grid.spacing[1]).powi(2)
                        + (dk as f64 * grid.spacing[2]).powi(2))
                    .sqrt()
                        / h;
                    offsets.push((di, dj, dk, len));
                }
            }
        }
    }
    // non-negative f64 bit patterns order like the values
    while let Some(Reverse((bits, v))) = heap.pop() {
        let d = f64::from_bits(bits);
        if d > dist[v] {
            continue;
        }
        let (i, j, k) = ((v / (n * n)) as i64, ((v / n) % n) as i64, (v % n) as i64);
        for &(di, dj, dk, len) in &offsets {
            let (ii, jj, kk) = (i + di, j + dj, k + dk);
            if [ii, jj, kk].iter().any(|&c| c < 0 || c >= n as i64) {
                continue;
            }
            let u = grid.index(ii as usize, jj as usize, kk as usize);
            if d + len < dist[u] {
                dist[u] = d + len;
                heap.push(Reverse((dist[u].to_bits(), u)));
            }
        }
    }
    Ok(dist
        .iter()
        .zip(&inside)
        .map(|(&d, &ins)| {
            let mag = if d.is_finite() { d } else { n as f64 };
            if ins { -mag } else { mag }
        })
        .collect())
}

/// Where an extracted vertex sits: `position(a) + t (position(b) - position(a))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgeVertex {
    pub a: u32,
    pub b: u32,
    pub t: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExtractedMesh {
    pub mesh: TexturedMesh,
    pub provenance: Vec<EdgeVertex>,
}

pub const MIN_TRIANGLE_AREA: f64 = 1e-10;

/// Marching tetrahedra on the zero level set of `grid.sdf` over deformed
/// vertex positions. Triangle normals point toward positive sdf.
pub fn marching_tets(grid: &TetGrid) -> ExtractedMesh {
    let mut vertices: Vec<[f64; 3]> = Vec::new();
    let mut provenance = Vec::new();
    let mut faces = Vec::new();
    let mut edge_ids: HashMap<(u32, u32), u32> = HashMap::new();
    let mut vertex_on = |a: u32, b: u32, vertices: &mut Vec<[f64; 3]>, provenance: &mut Vec<EdgeVertex>| -> u32 {
        let key = (a.min(b), a.max(b));
        *edge_ids.entry(key).or_insert_with(|| {
            let (lo, hi) = key;
            let (sa, sb) = (grid.sdf[lo as usize], grid.sdf[hi as usize]);
            let t = sa / (sa - sb);
            let p = grid.position(lo as usize) + t * (grid.position(hi as usize) - grid.position(lo as usize));
            vertices.push([p.x, p.y, p.z]);
            provenance.push(EdgeVertex { a: lo, b: hi, t });
            (vertices.len() - 1) as u32
        })
    };
    for tet in &grid.tets {
        let (ins, outs): (Vec<u32>, Vec<u32>) = tet.iter().partition(|&&v| grid.sdf[v as usize] < 0.0);
        if ins.is_empty() || outs.is_empty() {
            continue;
        }
        let centroid = |vs: &[u32]| vs.iter().map(|&v| grid.position(v as usize)).sum::<Vector3<f64>>() / vs.len() as f64;
        let outward = centroid(&outs) - centroid(&ins);
        let mut tris: Vec<[u32; 3]> = Vec::new();
        match ins.len() {
            1 => {
                let a = ins[0];
                tris.push([0, 1, 2].map(|i| vertex_on(a, outs[i], &mut vertices, &mut provenance)));
            }
            3 => {
                let b = outs[0];
                tris.push([0, 1, 2].map(|i| vertex_on(ins[i], b, &mut vertices, &mut provenance)));
            }
            _ => {
                let (a, b, c, d) = (ins[0], ins[1], outs[0], outs[1]);
                let ac = vertex_on(a, c, &mut vertices, &mut provenance);
                let ad = vertex_on(a, d, &mut vertices, &mut provenance);
                let bd = vertex_on(b, d, &mut vertices, &mut provenance);
                let bc = vertex_on(b, c, &mut vertices, &mut provenance);
                // split along the diagonal with the smaller end id
                if ac.min(bd) <= ad.min(bc) {
                    tris.push([ac, ad, bd]);
                    tris.push([ac, bd, bc]);
                } else {
                    tris.push([ac, ad, bc]);
                    tris.push([ad, bd, bc]);
                }
            }
        }
        for mut tri in tris {
            let p = tri.map(|v| Vector3::from(vertices[v as usize]));
            let normal = (p[1] - p[0]).cross(&(p[2] - p[0]));
            if 0.5 * normal.norm() < MIN_TRIANGLE_AREA {
                continue;
            }
            if normal.dot(&outward) < 0.0 {
                tri.swap(1, 2);
            }
            faces.push(tri);
        }
    }
    let colors = vec![[0.5; 3]; vertices.len()];
    ExtractedMesh { mesh: TexturedMesh { vertices, faces, colors }, provenance }
}
