//! Tetrahedral mesh extraction, rasterization and mesh-stage optimization.

mod io;
mod opt;
mod raster;
mod tet;

pub use io::{export_mesh, import_mesh, MeshFormat};
pub use opt::{
    masked_mse, mesh_finetune_step, ColorMlp, ConditionView, MeshOptConfig, MeshOptState, MeshStepKind, MeshStepRecord,
};
pub use raster::{rasterize, MeshGrad, RasterTape};
pub use tet::{density_to_sdf, marching_tets, EdgeVertex, ExtractedMesh, TetGrid, MIN_TRIANGLE_AREA};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TexturedMesh {
    pub vertices: Vec<[f64; 3]>,
    pub faces: Vec<[u32; 3]>,
    pub colors: Vec<[f64; 3]>,
}

impl TexturedMesh {
    pub fn is_empty(&self) -> bool {
        self.faces.is_empty()
    }

    pub fn triangle_area(&self, f: usize) -> f64 {
        let p = self.faces[f].map(|v| Vector3::from(self.vertices[v as usize]));
        0.5 * (p[1] - p[0]).cross(&(p[2] - p[0])).norm()
    }

    pub fn validate(&self) -> Result<()> {
        if self.colors.len() != self.vertices.len() {
            return Err(Error::param("one color per vertex required"));
        }
        let n = self.vertices.len() as u32;
        if self.faces.iter().flatten().any(|&v| v >= n) {
            return Err(Error::param("face index out of range"));
        }
        if (0..self.faces.len()).any(|f| self.triangle_area(f) < MIN_TRIANGLE_AREA) {
            return Err(Error::param("degenerate triangle"));
        }
        if self.colors.iter().flatten().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(Error::param("vertex colors must lie in [0, 1]"));
        }
        Ok(())
    }

    /// Undirected edges with the number of faces using each.
    pub fn edge_valence(&self) -> std::collections::BTreeMap<(u32, u32), usize> {
        let mut m = std::collections::BTreeMap::new();
        for f in &self.faces {
            for (a, b) in [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])] {
                *m.entry((a.min(b), a.max(b))).or_insert(0) += 1;
            }
        }
        m
    }
}
