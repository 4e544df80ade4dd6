use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::field::RadianceField;
use crate::error::{Error, Result};

/// Densities sampled on an `n × n × n` vertex lattice, x-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityGrid {
    pub n: usize,
    pub origin: [f64; 3],
    pub spacing: [f64; 3],
    pub values: Vec<f64>,
}

impl DensityGrid {
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.n + j) * self.n + k
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.values[self.index(i, j, k)]
    }

    pub fn position(&self, i: usize, j: usize, k: usize) -> Vector3<f64> {
        Vector3::new(
            self.origin[0] + i as f64 * self.spacing[0],
            self.origin[1] + j as f64 * self.spacing[1],
            self.origin[2] + k as f64 * self.spacing[2],
        )
    }
}

/// Samples `field` on a lattice covering its bounds padded by one cell.
pub fn extract_density_grid<F: RadianceField + ?Sized>(field: &F, n: usize) -> Result<DensityGrid> {
    if n < 2 {
        return Err(Error::param("density grid resolution must be at least 2"));
    }
    let b = field.bounds();
    let cells = (n - 1) as f64;
    let mut origin = [0.0; 3];
    let mut spacing = [0.0; 3];
    for a in 0..3 {
        let extent = 2.0 * b.half[a];
        let pad = extent / cells;
        origin[a] = b.center[a] - b.half[a] - pad;
        spacing[a] = (extent + 2.0 * pad) / cells;
    }
    let mut grid = DensityGrid { n, origin, spacing, values: vec![0.0; n * n * n] };
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                let idx = grid.index(i, j, k);
                grid.values[idx] = field.query(&grid.position(i, j, k)).0;
            }
        }
    }
    Ok(grid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::body::Aabb;
    use crate::generator::ConstantField;

    #[test]
    fn two_point_grid_is_padded_corners() {
        let f = ConstantField { region: Aabb { center: [0.0; 3], half: [1.0, 0.5, 0.25] }, density: 3.0, color: [0.0; 3] };
        let g = extract_density_grid(&f, 2).unwrap();
        assert_eq!(g.values.len(), 8);
        assert_eq!(g.origin, [-3.0, -1.5, -0.75]);
        assert!(g.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn interior_vertices_see_density() {
        let f = ConstantField { region: Aabb { center: [0.0; 3], half: [1.0; 3] }, density: 3.0, color: [0.0; 3] };
        let g = extract_density_grid(&f, 9).unwrap();
        assert_eq!(g.get(4, 4, 4), 3.0);
        assert_eq!(g.get(0, 4, 4), 0.0);
        assert!(extract_density_grid(&f, 1).is_err());
    }
}
