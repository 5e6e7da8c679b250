//! Marching-cubes isosurface extraction from a sampled scalar grid.
//!
//! Cube corners follow the classic ordering (bottom face counterclockwise,
//! then the top face), the case index sets bit i when corner i is below the
//! iso level, and crossing vertices are linearly interpolated along cell
//! edges. Vertices are welded across cells by keying them on their global
//! grid-edge, so closed level sets come out watertight.

use std::collections::HashMap;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::mc_tables::{EDGE_TABLE, TRIANGLE_TABLE};
use crate::mesh::TriangleMesh;

/// Scalar samples on a regular grid. `values[ix + nx*(iy + ny*iz)]` holds
/// the sample at `origin + (ix, iy, iz) ∘ spacing`.
#[derive(Debug, Clone)]
pub struct ScalarGrid {
    pub origin: Vector3<f64>,
    pub spacing: Vector3<f64>,
    pub dims: [usize; 3],
    pub values: Vec<f64>,
}

impl ScalarGrid {
    /// Samples `f` over a regular grid spanning `[lo, hi]` inclusively.
    pub fn sample(
        lo: Vector3<f64>,
        hi: Vector3<f64>,
        dims: [usize; 3],
        mut f: impl FnMut(&Vector3<f64>) -> f64,
    ) -> Result<Self> {
        if dims.iter().any(|&d| d < 2) {
            return Err(Error::InvalidParameter(
                "scalar grid needs at least 2 samples per axis".into(),
            ));
        }
        let spacing = Vector3::new(
            (hi.x - lo.x) / (dims[0] - 1) as f64,
            (hi.y - lo.y) / (dims[1] - 1) as f64,
            (hi.z - lo.z) / (dims[2] - 1) as f64,
        );
        let mut values = Vec::with_capacity(dims[0] * dims[1] * dims[2]);
        for iz in 0..dims[2] {
            for iy in 0..dims[1] {
                for ix in 0..dims[0] {
                    let p = lo
                        + Vector3::new(
                            ix as f64 * spacing.x,
                            iy as f64 * spacing.y,
                            iz as f64 * spacing.z,
                        );
                    values.push(f(&p));
                }
            }
        }
        Ok(Self {
            origin: lo,
            spacing,
            dims,
            values,
        })
    }

    fn index(&self, ix: usize, iy: usize, iz: usize) -> usize {
        ix + self.dims[0] * (iy + self.dims[1] * iz)
    }

    fn value(&self, ix: usize, iy: usize, iz: usize) -> f64 {
        self.values[self.index(ix, iy, iz)]
    }

    fn position(&self, ix: usize, iy: usize, iz: usize) -> Vector3<f64> {
        self.origin
            + Vector3::new(
                ix as f64 * self.spacing.x,
                iy as f64 * self.spacing.y,
                iz as f64 * self.spacing.z,
            )
    }

    pub fn cell_diagonal(&self) -> f64 {
        self.spacing.norm()
    }
}

// corner offsets in table order
const CORNERS: [[usize; 3]; 8] = [
    [0, 0, 0],
    [1, 0, 0],
    [1, 1, 0],
    [0, 1, 0],
    [0, 0, 1],
    [1, 0, 1],
    [1, 1, 1],
    [0, 1, 1],
];

// cell edges as corner index pairs, in table order
const EDGES: [[usize; 2]; 12] = [
    [0, 1],
    [1, 2],
    [2, 3],
    [3, 0],
    [4, 5],
    [5, 6],
    [6, 7],
    [7, 4],
    [0, 4],
    [1, 5],
    [2, 6],
    [3, 7],
];

/// Extracts the `iso` level set of a sampled field. A field with no sign
/// change yields an empty mesh (documented, not an error). Non-finite
/// samples are rejected.
pub fn marching_cubes(grid: &ScalarGrid, iso: f64) -> Result<TriangleMesh> {
    if grid.values.len() != grid.dims[0] * grid.dims[1] * grid.dims[2] {
        return Err(Error::InvalidParameter("grid value count mismatch".into()));
    }
    if grid.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("non-finite field sample".into()));
    }
    if grid.dims.iter().any(|&d| d < 8) {
        return Err(Error::InvalidParameter(
            "grid resolution below 8 per axis".into(),
        ));
    }

    let mut vertices: Vec<Vector3<f64>> = Vec::new();
    let mut triangles: Vec<[u32; 3]> = Vec::new();
    // weld vertices shared between cells by their global grid edge
    let mut edge_vertex: HashMap<(usize, usize), u32> = HashMap::new();

    for iz in 0..grid.dims[2] - 1 {
        for iy in 0..grid.dims[1] - 1 {
            for ix in 0..grid.dims[0] - 1 {
                let mut corner_values = [0.0; 8];
                let mut corner_ids = [0usize; 8];
                for (i, off) in CORNERS.iter().enumerate() {
                    let (cx, cy, cz) = (ix + off[0], iy + off[1], iz + off[2]);
                    corner_values[i] = grid.value(cx, cy, cz);
                    corner_ids[i] = grid.index(cx, cy, cz);
                }
                let mut cube_index = 0usize;
                for (i, v) in corner_values.iter().enumerate() {
                    if *v < iso {
                        cube_index |= 1 << i;
                    }
                }
                let edge_mask = EDGE_TABLE[cube_index];
                if edge_mask == 0 {
                    continue;
                }

                let mut cell_edge_vertices = [u32::MAX; 12];
                for (e, pair) in EDGES.iter().enumerate() {
                    if edge_mask & (1 << e) == 0 {
                        continue;
                    }
                    let (a, b) = (pair[0], pair[1]);
                    let key = (
                        corner_ids[a].min(corner_ids[b]),
                        corner_ids[a].max(corner_ids[b]),
                    );
                    let idx = *edge_vertex.entry(key).or_insert_with(|| {
                        // interpolate in a fixed corner order so shared
                        // edges produce bit-identical vertices
                        let (lo_c, hi_c) = if corner_ids[a] < corner_ids[b] {
                            (a, b)
                        } else {
                            (b, a)
                        };
                        let (v1, v2) = (corner_values[lo_c], corner_values[hi_c]);
                        let p1 = {
                            let off = CORNERS[lo_c];
                            grid.position(ix + off[0], iy + off[1], iz + off[2])
                        };
                        let p2 = {
                            let off = CORNERS[hi_c];
                            grid.position(ix + off[0], iy + off[1], iz + off[2])
                        };
                        let t = if (v2 - v1).abs() < 1e-300 {
                            0.5
                        } else {
                            ((iso - v1) / (v2 - v1)).clamp(0.0, 1.0)
                        };
                        let p = p1 + (p2 - p1) * t;
                        vertices.push(p);
                        (vertices.len() - 1) as u32
                    });
                    cell_edge_vertices[e] = idx;
                }

                let row = &TRIANGLE_TABLE[cube_index];
                let mut k = 0;
                while k < 16 && row[k] != -1 {
                    // table order is flipped so distance-style fields
                    // (negative inside) come out wound outward
                    let tri = [
                        cell_edge_vertices[row[k] as usize],
                        cell_edge_vertices[row[k + 2] as usize],
                        cell_edge_vertices[row[k + 1] as usize],
                    ];
                    // degenerate (zero-area) triangles can appear when a
                    // corner value equals the iso level exactly
                    if tri[0] != tri[1] && tri[1] != tri[2] && tri[0] != tri[2] {
                        triangles.push(tri);
                    }
                    k += 3;
                }
            }
        }
    }

    TriangleMesh::new(vertices, triangles)
}
