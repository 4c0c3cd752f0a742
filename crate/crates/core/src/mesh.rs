//! Structured simplicial meshes of the unit square and the unit cube.
//!
//! Cells are stored as `dim + 1` vertex indices. Local facet `i` of a cell is the
//! facet opposite local vertex `i`, so every per-(cell, local facet) array in this
//! module is indexed by `cell * (dim + 1) + i`.

use std::collections::HashMap;
use std::io::Write;

use thiserror::Error;

/// A point or vector in at most three dimensions. Unused trailing components are zero.
pub type Point = [f64; 3];

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("unsupported mesh resolution {0}")]
    InvalidResolution(usize),
    #[error("cell {cell} is degenerate (volume {volume:e})")]
    DegenerateCell { cell: usize, volume: f64 },
    #[error("facet {facet} is shared by {count} cells")]
    NonConforming { facet: usize, count: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Adjacent cell of a facet together with the facet's local index inside that cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FacetSide {
    pub cell: usize,
    pub local: usize,
}

#[derive(Debug, Clone)]
pub struct SimplicialMesh {
    dim: usize,
    vertices: Vec<Point>,
    cells: Vec<usize>,
    facets: Vec<usize>,
    cell_facets: Vec<usize>,
    facet_sides: Vec<[Option<FacetSide>; 2]>,
    facet_boundary: Vec<bool>,
    cell_volume: Vec<f64>,
    cell_diameter: Vec<f64>,
    facet_measure: Vec<f64>,
    facet_centroid: Vec<Point>,
    outward_normals: Vec<Point>,
    bary_gradients: Vec<Point>,
}

/// Uniform triangulation of (0,1)² with `n` squares per side, each square split by its
/// lower-left to upper-right diagonal.
pub fn build_uniform_triangle_mesh(n: usize) -> Result<SimplicialMesh, MeshError> {
    if n == 0 {
        return Err(MeshError::InvalidResolution(n));
    }
    let h = 1.0 / n as f64;
    let vid = |i: usize, j: usize| j * (n + 1) + i;
    let mut vertices = Vec::with_capacity((n + 1) * (n + 1));
    for j in 0..=n {
        for i in 0..=n {
            vertices.push([i as f64 * h, j as f64 * h, 0.0]);
        }
    }
    let mut cells = Vec::with_capacity(6 * n * n);
    for j in 0..n {
        for i in 0..n {
            let (v00, v10, v01, v11) = (vid(i, j), vid(i + 1, j), vid(i, j + 1), vid(i + 1, j + 1));
            cells.extend_from_slice(&[v00, v10, v11]);
            cells.extend_from_slice(&[v00, v11, v01]);
        }
    }
    SimplicialMesh::from_cells(2, vertices, cells)
}

/// Kuhn (Freudenthal) tetrahedralization of (0,1)³ with `2^(level-1)` cubes per side.
/// Every cube is split into six tetrahedra sharing its main diagonal.
pub fn build_uniform_tet_mesh(level: usize) -> Result<SimplicialMesh, MeshError> {
    if level == 0 || level > 10 {
        return Err(MeshError::InvalidResolution(level));
    }
    let n = 1usize << (level - 1);
    let h = 1.0 / n as f64;
    let vid = |i: usize, j: usize, k: usize| (k * (n + 1) + j) * (n + 1) + i;
    let mut vertices = Vec::with_capacity((n + 1).pow(3));
    for k in 0..=n {
        for j in 0..=n {
            for i in 0..=n {
                vertices.push([i as f64 * h, j as f64 * h, k as f64 * h]);
            }
        }
    }
    const PERMS: [[usize; 3]; 6] = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
    let mut cells = Vec::with_capacity(24 * n * n * n);
    for k in 0..n {
        for j in 0..n {
            for i in 0..n {
                for perm in PERMS {
                    let mut idx = [i, j, k];
                    cells.push(vid(idx[0], idx[1], idx[2]));
                    for axis in perm {
                        idx[axis] += 1;
                        cells.push(vid(idx[0], idx[1], idx[2]));
                    }
                }
            }
        }
    }
    SimplicialMesh::from_cells(3, vertices, cells)
}

/// Largest cell diameter.
pub fn mesh_size(mesh: &SimplicialMesh) -> f64 {
    mesh.cell_diameter.iter().copied().fold(0.0, f64::max)
}

fn sub(a: &Point, b: &Point) -> Point {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross(a: &Point, b: &Point) -> Point {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

pub(crate) fn dot(a: &Point, b: &Point) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn norm(a: &Point) -> f64 {
    dot(a, a).sqrt()
}

impl SimplicialMesh {
    /// Builds connectivity and geometry from a flat cell list (`dim + 1` vertices per cell).
    pub fn from_cells(dim: usize, vertices: Vec<Point>, cells: Vec<usize>) -> Result<Self, MeshError> {
        assert!(dim == 2 || dim == 3, "only 2D and 3D meshes are supported");
        let nv = dim + 1;
        let n_cells = cells.len() / nv;

        let mut facet_index: HashMap<[usize; 3], usize> = HashMap::with_capacity(n_cells * nv / 2 + 16);
        let mut facets = Vec::new();
        let mut facet_sides: Vec<[Option<FacetSide>; 2]> = Vec::new();
        let mut cell_facets = Vec::with_capacity(n_cells * nv);
        for c in 0..n_cells {
            let cv = &cells[c * nv..(c + 1) * nv];
            for i in 0..nv {
                let mut key = [usize::MAX; 3];
                let mut m = 0;
                for (k, &v) in cv.iter().enumerate() {
                    if k != i {
                        key[m] = v;
                        m += 1;
                    }
                }
                key[..dim].sort_unstable();
                let f = *facet_index.entry(key).or_insert_with(|| {
                    facets.extend_from_slice(&key[..dim]);
                    facet_sides.push([None, None]);
                    facet_sides.len() - 1
                });
                let side = FacetSide { cell: c, local: i };
                match facet_sides[f] {
                    [None, _] => facet_sides[f][0] = Some(side),
                    [Some(_), None] => facet_sides[f][1] = Some(side),
                    [Some(_), Some(_)] => return Err(MeshError::NonConforming { facet: f, count: 3 }),
                }
                cell_facets.push(f);
            }
        }
        let n_facets = facet_sides.len();
        let facet_boundary: Vec<bool> = facet_sides.iter().map(|s| s[1].is_none()).collect();

        let mut facet_measure = Vec::with_capacity(n_facets);
        let mut facet_centroid = Vec::with_capacity(n_facets);
        for f in 0..n_facets {
            let fv = &facets[f * dim..(f + 1) * dim];
            let p: Vec<&Point> = fv.iter().map(|&v| &vertices[v]).collect();
            let measure = if dim == 2 {
                norm(&sub(p[1], p[0]))
            } else {
                0.5 * norm(&cross(&sub(p[1], p[0]), &sub(p[2], p[0])))
            };
            let mut centroid = [0.0; 3];
            for q in &p {
                for k in 0..3 {
                    centroid[k] += q[k] / dim as f64;
                }
            }
            facet_measure.push(measure);
            facet_centroid.push(centroid);
        }

        let mut cell_volume = Vec::with_capacity(n_cells);
        let mut cell_diameter = Vec::with_capacity(n_cells);
        let mut bary_gradients = Vec::with_capacity(n_cells * nv);
        let mut outward_normals = Vec::with_capacity(n_cells * nv);
        for c in 0..n_cells {
            let cv = &cells[c * nv..(c + 1) * nv];
            let p0 = vertices[cv[0]];
            let edges: Vec<Point> = (1..nv).map(|k| sub(&vertices[cv[k]], &p0)).collect();
            // Rows of the inverse Jacobian are the gradients of barycentrics 1..=dim.
            let (det, grads) = if dim == 2 {
                let det = edges[0][0] * edges[1][1] - edges[0][1] * edges[1][0];
                let g1 = [edges[1][1] / det, -edges[1][0] / det, 0.0];
                let g2 = [-edges[0][1] / det, edges[0][0] / det, 0.0];
                (det, vec![g1, g2])
            } else {
                let c12 = cross(&edges[1], &edges[2]);
                let c20 = cross(&edges[2], &edges[0]);
                let c01 = cross(&edges[0], &edges[1]);
                let det = dot(&edges[0], &c12);
                let scale = |v: Point| [v[0] / det, v[1] / det, v[2] / det];
                (det, vec![scale(c12), scale(c20), scale(c01)])
            };
            let factorial = if dim == 2 { 2.0 } else { 6.0 };
            let volume = det.abs() / factorial;
            if !(volume > 0.0) {
                return Err(MeshError::DegenerateCell { cell: c, volume });
            }
            let mut g0 = [0.0; 3];
            for g in &grads {
                for k in 0..3 {
                    g0[k] -= g[k];
                }
            }
            bary_gradients.push(g0);
            bary_gradients.extend(grads);
            for i in 0..nv {
                let g = bary_gradients[c * nv + i];
                let len = norm(&g);
                outward_normals.push([-g[0] / len, -g[1] / len, -g[2] / len]);
            }
            let mut diameter: f64 = 0.0;
            for a in 0..nv {
                for b in a + 1..nv {
                    diameter = diameter.max(norm(&sub(&vertices[cv[a]], &vertices[cv[b]])));
                }
            }
            cell_volume.push(volume);
            cell_diameter.push(diameter);
        }

        Ok(SimplicialMesh {
            dim,
            vertices,
            cells,
            facets,
            cell_facets,
            facet_sides,
            facet_boundary,
            cell_volume,
            cell_diameter,
            facet_measure,
            facet_centroid,
            outward_normals,
            bary_gradients,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_cells(&self) -> usize {
        self.cell_volume.len()
    }

    pub fn n_facets(&self) -> usize {
        self.facet_measure.len()
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn vertex(&self, v: usize) -> &Point {
        &self.vertices[v]
    }

    /// Vertex indices of a cell, `dim + 1` of them.
    pub fn cell(&self, c: usize) -> &[usize] {
        let nv = self.dim + 1;
        &self.cells[c * nv..(c + 1) * nv]
    }

    /// Sorted vertex indices of a facet.
    pub fn facet(&self, f: usize) -> &[usize] {
        &self.facets[f * self.dim..(f + 1) * self.dim]
    }

    /// Facet indices of a cell; entry `i` is the facet opposite local vertex `i`.
    pub fn cell_facets(&self, c: usize) -> &[usize] {
        let nv = self.dim + 1;
        &self.cell_facets[c * nv..(c + 1) * nv]
    }

    pub fn facet_sides(&self, f: usize) -> impl Iterator<Item = FacetSide> + '_ {
        self.facet_sides[f].iter().flatten().copied()
    }

    pub fn is_boundary_facet(&self, f: usize) -> bool {
        self.facet_boundary[f]
    }

    pub fn cell_volume(&self, c: usize) -> f64 {
        self.cell_volume[c]
    }

    /// Longest edge of the cell.
    pub fn cell_diameter(&self, c: usize) -> f64 {
        self.cell_diameter[c]
    }

    pub fn facet_measure(&self, f: usize) -> f64 {
        self.facet_measure[f]
    }

    pub fn facet_centroid(&self, f: usize) -> &Point {
        &self.facet_centroid[f]
    }

    /// Unit outward normal of local facet `i` of cell `c`.
    pub fn outward_normal(&self, c: usize, i: usize) -> &Point {
        &self.outward_normals[c * (self.dim + 1) + i]
    }

    /// Gradient of the barycentric coordinate of local vertex `i` on cell `c`.
    pub fn bary_gradient(&self, c: usize, i: usize) -> &Point {
        &self.bary_gradients[c * (self.dim + 1) + i]
    }

    /// Measure of local facet `i` of cell `c`.
    pub fn local_facet_measure(&self, c: usize, i: usize) -> f64 {
        self.facet_measure[self.cell_facets(c)[i]]
    }

    pub fn cell_centroid(&self, c: usize) -> Point {
        let mut x = [0.0; 3];
        let w = 1.0 / (self.dim + 1) as f64;
        for &v in self.cell(c) {
            for k in 0..3 {
                x[k] += w * self.vertices[v][k];
            }
        }
        x
    }

    /// Plain-text dump: a header line, then one vertex per line and one cell per line.
    pub fn write_plain_text<W: Write>(&self, mut out: W) -> Result<(), MeshError> {
        writeln!(out, "{} {} {}", self.dim, self.n_vertices(), self.n_cells())?;
        for v in &self.vertices {
            let coords: Vec<String> = v[..self.dim].iter().map(|x| format!("{x:.17e}")).collect();
            writeln!(out, "{}", coords.join(" "))?;
        }
        for c in 0..self.n_cells() {
            let ids: Vec<String> = self.cell(c).iter().map(|v| v.to_string()).collect();
            writeln!(out, "{}", ids.join(" "))?;
        }
        Ok(())
    }

    /// Checks the structural and geometric invariants, returning a description of the first breach.
    pub fn check_invariants(&self) -> Result<(), String> {
        let nv = self.dim + 1;
        for f in 0..self.n_facets() {
            let count = self.facet_sides(f).count();
            let expected = if self.facet_boundary[f] { 1 } else { 2 };
            if count != expected {
                return Err(format!("facet {f} shared by {count} cells"));
            }
            if self.facet_measure[f] <= 0.0 {
                return Err(format!("facet {f} has zero measure"));
            }
        }
        let mut total = 0.0;
        for c in 0..self.n_cells() {
            total += self.cell_volume[c];
            let mut closure = [0.0; 3];
            for i in 0..nv {
                let n = self.outward_normal(c, i);
                let m = self.local_facet_measure(c, i);
                for k in 0..3 {
                    closure[k] += m * n[k];
                }
                let opposite = self.vertices[self.cell(c)[i]];
                for &v in self.facet(self.cell_facets(c)[i]) {
                    if v == self.cell(c)[i] || !self.cell(c).contains(&v) {
                        return Err(format!("cell {c} local facet {i} has wrong vertices"));
                    }
                    if dot(&sub(&opposite, &self.vertices[v]), n) >= 0.0 {
                        return Err(format!("cell {c} local facet {i} normal points inward"));
                    }
                }
            }
            if norm(&closure) > 1e-12 {
                return Err(format!("cell {c} violates the closed-surface identity by {:e}", norm(&closure)));
            }
        }
        if (total - 1.0).abs() > 1e-12 {
            return Err(format!("total volume {total} differs from 1"));
        }
        Ok(())
    }
}
