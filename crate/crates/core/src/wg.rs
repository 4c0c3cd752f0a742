//! Weak function space, weak differential operators, L² projections and the RT0
//! displacement reconstruction.
//!
//! A weak function `v = {v_0, v_b}` stores a vector-valued linear polynomial per cell
//! (vertex-nodal basis) and a constant vector per facet. All weak operators act on
//! the facet part only because the test functions are cellwise constants.

use crate::mesh::{dot, Point, SimplicialMesh};
use crate::quadrature::{cell_rule, facet_rule, integrate_on_facet, QuadratureError};

pub type Tensor = [[f64; 3]; 3];

/// Global numbering of the weak degrees of freedom.
///
/// Interior coefficients come first, `d(d+1)` per cell ordered node-major
/// (`offset + node * d + component`), followed by `d` coefficients per facet.
/// Facets on the boundary are constrained (Dirichlet); the remaining DOFs get a
/// compact free numbering in increasing global order.
#[derive(Debug, Clone)]
pub struct DofMap {
    dim: usize,
    n_cells: usize,
    n_facets: usize,
    free_index: Vec<usize>,
    free_dofs: Vec<usize>,
}

const CONSTRAINED: usize = usize::MAX;

impl DofMap {
    pub fn new(mesh: &SimplicialMesh) -> Self {
        let dim = mesh.dim();
        let n_cells = mesh.n_cells();
        let n_facets = mesh.n_facets();
        let n_interior = n_cells * dim * (dim + 1);
        let total = n_interior + n_facets * dim;
        let mut free_index = vec![CONSTRAINED; total];
        let mut free_dofs = Vec::with_capacity(total);
        for (dof, slot) in free_index.iter_mut().enumerate() {
            let constrained = dof >= n_interior && mesh.is_boundary_facet((dof - n_interior) / dim);
            if !constrained {
                *slot = free_dofs.len();
                free_dofs.push(dof);
            }
        }
        DofMap { dim, n_cells, n_facets, free_index, free_dofs }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn interior_dofs_per_cell(&self) -> usize {
        self.dim * (self.dim + 1)
    }

    pub fn n_interior(&self) -> usize {
        self.n_cells * self.interior_dofs_per_cell()
    }

    pub fn n_total(&self) -> usize {
        self.n_interior() + self.n_facets * self.dim
    }

    pub fn n_free(&self) -> usize {
        self.free_dofs.len()
    }

    pub fn interior_offset(&self, cell: usize) -> usize {
        cell * self.interior_dofs_per_cell()
    }

    pub fn interior_dof(&self, cell: usize, node: usize, comp: usize) -> usize {
        self.interior_offset(cell) + node * self.dim + comp
    }

    pub fn facet_offset(&self, facet: usize) -> usize {
        self.n_interior() + facet * self.dim
    }

    pub fn facet_dof(&self, facet: usize, comp: usize) -> usize {
        self.facet_offset(facet) + comp
    }

    pub fn is_constrained(&self, dof: usize) -> bool {
        self.free_index[dof] == CONSTRAINED
    }

    pub fn free_index(&self, dof: usize) -> Option<usize> {
        match self.free_index[dof] {
            CONSTRAINED => None,
            i => Some(i),
        }
    }

    /// Global DOF of each free index.
    pub fn free_dofs(&self) -> &[usize] {
        &self.free_dofs
    }

    pub fn gather_free(&self, field: &WGField) -> Vec<f64> {
        self.free_dofs.iter().map(|&d| field.coeffs[d]).collect()
    }

    /// Writes `free` into the free positions of `field`, leaving constrained entries untouched.
    pub fn scatter_free(&self, free: &[f64], field: &mut WGField) {
        for (&d, &x) in self.free_dofs.iter().zip(free) {
            field.coeffs[d] = x;
        }
    }

    pub fn zero_field(&self) -> WGField {
        WGField { dim: self.dim, n_cells: self.n_cells, coeffs: vec![0.0; self.n_total()] }
    }

    /// Field in `V_h^0` with the given free values and zeros on the boundary.
    pub fn field_from_free(&self, free: &[f64]) -> WGField {
        let mut f = self.zero_field();
        self.scatter_free(free, &mut f);
        f
    }
}

/// Coefficient vector of a weak function laid out as described on [`DofMap`].
#[derive(Debug, Clone, PartialEq)]
pub struct WGField {
    dim: usize,
    n_cells: usize,
    pub coeffs: Vec<f64>,
}

impl WGField {
    pub fn dim(&self) -> usize {
        self.dim
    }

    fn n_interior(&self) -> usize {
        self.n_cells * self.dim * (self.dim + 1)
    }

    /// Value of `v_0` at local vertex `node` of `cell`.
    pub fn interior_node(&self, cell: usize, node: usize) -> Point {
        let base = cell * self.dim * (self.dim + 1) + node * self.dim;
        let mut v = [0.0; 3];
        v[..self.dim].copy_from_slice(&self.coeffs[base..base + self.dim]);
        v
    }

    pub fn set_interior_node(&mut self, cell: usize, node: usize, value: &Point) {
        let base = cell * self.dim * (self.dim + 1) + node * self.dim;
        self.coeffs[base..base + self.dim].copy_from_slice(&value[..self.dim]);
    }

    pub fn facet_value(&self, facet: usize) -> Point {
        let base = self.n_interior() + facet * self.dim;
        let mut v = [0.0; 3];
        v[..self.dim].copy_from_slice(&self.coeffs[base..base + self.dim]);
        v
    }

    pub fn set_facet_value(&mut self, facet: usize, value: &Point) {
        let base = self.n_interior() + facet * self.dim;
        self.coeffs[base..base + self.dim].copy_from_slice(&value[..self.dim]);
    }

    /// Facet values of the `d + 1` facets of a cell, in local facet order.
    pub fn cell_facet_values(&self, mesh: &SimplicialMesh, cell: usize) -> [Point; 4] {
        let mut out = [[0.0; 3]; 4];
        for (i, &f) in mesh.cell_facets(cell).iter().enumerate() {
            out[i] = self.facet_value(f);
        }
        out
    }

    /// `v_0` evaluated at barycentric coordinates `bary` of `cell`.
    pub fn interior_at(&self, cell: usize, bary: &[f64]) -> Point {
        let mut v = [0.0; 3];
        for (node, &b) in bary.iter().enumerate().take(self.dim + 1) {
            let nv = self.interior_node(cell, node);
            for k in 0..3 {
                v[k] += b * nv[k];
            }
        }
        v
    }
}

/// Cellwise constant weak gradient, `G[a][b]` approximating `∂u_a/∂x_b`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeakGradient(pub Vec<Tensor>);

/// Cellwise constant weak divergence.
#[derive(Debug, Clone, PartialEq)]
pub struct WeakDivergence(pub Vec<f64>);

/// `(1/|T|) Σ_i |e_i| v_b,i · n_i` on one cell.
pub fn cell_weak_divergence(mesh: &SimplicialMesh, cell: usize, facet_values: &[Point]) -> f64 {
    let mut s = 0.0;
    for i in 0..=mesh.dim() {
        s += mesh.local_facet_measure(cell, i) * dot(&facet_values[i], mesh.outward_normal(cell, i));
    }
    s / mesh.cell_volume(cell)
}

/// `(1/|T|) Σ_i |e_i| v_b,i ⊗ n_i` on one cell.
pub fn cell_weak_gradient(mesh: &SimplicialMesh, cell: usize, facet_values: &[Point]) -> Tensor {
    let d = mesh.dim();
    let inv_vol = 1.0 / mesh.cell_volume(cell);
    let mut g = [[0.0; 3]; 3];
    for i in 0..=d {
        let m = mesh.local_facet_measure(cell, i) * inv_vol;
        let n = mesh.outward_normal(cell, i);
        for a in 0..d {
            for b in 0..d {
                g[a][b] += m * facet_values[i][a] * n[b];
            }
        }
    }
    g
}

pub fn weak_divergence(mesh: &SimplicialMesh, field: &WGField) -> WeakDivergence {
    WeakDivergence(
        (0..mesh.n_cells())
            .map(|c| cell_weak_divergence(mesh, c, &field.cell_facet_values(mesh, c)))
            .collect(),
    )
}

pub fn weak_gradient(mesh: &SimplicialMesh, field: &WGField) -> WeakGradient {
    WeakGradient(
        (0..mesh.n_cells())
            .map(|c| cell_weak_gradient(mesh, c, &field.cell_facet_values(mesh, c)))
            .collect(),
    )
}

/// L² projection onto cellwise vector P1, as nodal values: entry `cell * (d+1) + node`.
pub fn project_q0(
    mesh: &SimplicialMesh,
    u: impl Fn(&Point) -> Point,
    degree: usize,
) -> Result<Vec<Point>, QuadratureError> {
    let d = mesh.dim();
    let nv = d + 1;
    let rule = cell_rule(d, degree)?;
    let mut out = Vec::with_capacity(mesh.n_cells() * nv);
    for c in 0..mesh.n_cells() {
        let corners: Vec<Point> = mesh.cell(c).iter().map(|&v| *mesh.vertex(v)).collect();
        let vol = mesh.cell_volume(c);
        // load vector b_j = ∫ u λ_j per component
        let mut b = [[0.0; 3]; 4];
        for (x, bary, w) in rule.mapped(&corners, vol) {
            let ux = u(&x);
            for j in 0..nv {
                for k in 0..d {
                    b[j][k] += w * bary[j] * ux[k];
                }
            }
        }
        // P1 mass matrix is |T|/((d+1)(d+2)) (I + 11ᵀ); its inverse is closed form.
        let scale = ((d + 1) * (d + 2)) as f64 / vol;
        for j in 0..nv {
            let mut cj = [0.0; 3];
            for k in 0..d {
                let sum: f64 = (0..nv).map(|l| b[l][k]).sum();
                cj[k] = scale * (b[j][k] - sum / (d + 2) as f64);
            }
            out.push(cj);
        }
    }
    Ok(out)
}

/// L² projection onto facetwise constant vectors (facet averages).
pub fn project_qb(
    mesh: &SimplicialMesh,
    u: impl Fn(&Point) -> Point,
    degree: usize,
) -> Result<Vec<Point>, QuadratureError> {
    let rule = facet_rule(mesh.dim(), degree)?;
    Ok((0..mesh.n_facets())
        .map(|f| {
            let integral = integrate_on_facet(mesh, f, &rule, &u);
            let m = mesh.facet_measure(f);
            [integral[0] / m, integral[1] / m, integral[2] / m]
        })
        .collect())
}

/// `Q_h u = {Q_0 u, Q_b u}`, boundary facets included.
pub fn project_qh(
    mesh: &SimplicialMesh,
    dofs: &DofMap,
    u: impl Fn(&Point) -> Point,
    degree: usize,
) -> Result<WGField, QuadratureError> {
    let nv = mesh.dim() + 1;
    let interior = project_q0(mesh, &u, degree)?;
    let facets = project_qb(mesh, &u, degree)?;
    let mut field = dofs.zero_field();
    for c in 0..mesh.n_cells() {
        for node in 0..nv {
            field.set_interior_node(c, node, &interior[c * nv + node]);
        }
    }
    for (f, value) in facets.iter().enumerate() {
        field.set_facet_value(f, value);
    }
    Ok(field)
}

/// Cell averages of a scalar function.
pub fn project_scalar_avg(
    mesh: &SimplicialMesh,
    rho: impl Fn(&Point) -> f64,
    degree: usize,
) -> Result<Vec<f64>, QuadratureError> {
    let rule = cell_rule(mesh.dim(), degree)?;
    Ok((0..mesh.n_cells())
        .map(|c| crate::quadrature::integrate_on_cell(mesh, c, &rule, &rho) / mesh.cell_volume(c))
        .collect())
}

/// Cell averages of a tensor function, componentwise.
pub fn project_tensor_avg(
    mesh: &SimplicialMesh,
    g: impl Fn(&Point) -> Tensor,
    degree: usize,
) -> Result<Vec<Tensor>, QuadratureError> {
    let rule = cell_rule(mesh.dim(), degree)?;
    Ok((0..mesh.n_cells())
        .map(|c| {
            let mut t = crate::quadrature::integrate_on_cell(mesh, c, &rule, &g);
            let vol = mesh.cell_volume(c);
            t.iter_mut().flatten().for_each(|x| *x /= vol);
            t
        })
        .collect())
}

/// Lowest-order Raviart-Thomas field on one cell, `Σ_i c_i ψ_i` with
/// `ψ_i(x) = |e_i| / (d|T|) (x - p_i)`, `p_i` the vertex opposite facet `i`.
/// `ψ_i` has unit normal flux on facet `i` and zero flux on the others.
#[derive(Debug, Clone, PartialEq)]
pub struct Rt0Field {
    pub cell: usize,
    pub coeffs: [f64; 4],
}

/// Reconstruction `R_T(v)` from the facet values of `v` on `cell`: `c_i = v_b,i · n_i`.
pub fn rt0_reconstruct(mesh: &SimplicialMesh, cell: usize, facet_values: &[Point]) -> Rt0Field {
    let mut coeffs = [0.0; 4];
    for i in 0..=mesh.dim() {
        coeffs[i] = dot(&facet_values[i], mesh.outward_normal(cell, i));
    }
    Rt0Field { cell, coeffs }
}

/// Scale `|e_i| / (d|T|)` of the basis function `ψ_i`.
pub fn rt0_basis_scale(mesh: &SimplicialMesh, cell: usize, i: usize) -> f64 {
    mesh.local_facet_measure(cell, i) / (mesh.dim() as f64 * mesh.cell_volume(cell))
}

impl Rt0Field {
    pub fn eval(&self, mesh: &SimplicialMesh, x: &Point) -> Point {
        let mut v = [0.0; 3];
        for i in 0..=mesh.dim() {
            let p = mesh.vertex(mesh.cell(self.cell)[i]);
            let s = self.coeffs[i] * rt0_basis_scale(mesh, self.cell, i);
            for k in 0..mesh.dim() {
                v[k] += s * (x[k] - p[k]);
            }
        }
        v
    }

    /// Constant divergence `(1/|T|) Σ_i c_i |e_i|`.
    pub fn divergence(&self, mesh: &SimplicialMesh) -> f64 {
        let s: f64 = (0..=mesh.dim()).map(|i| self.coeffs[i] * mesh.local_facet_measure(self.cell, i)).sum();
        s / mesh.cell_volume(self.cell)
    }
}

/// `Q_b v_0 - v_b` on local facet `local` of `cell`. For linear `v_0` the facet average
/// equals the value at the facet centroid, i.e. the mean of the other `d` nodal values.
pub fn stabilizer_jump(mesh: &SimplicialMesh, field: &WGField, cell: usize, local: usize) -> Point {
    let d = mesh.dim();
    let mut avg = [0.0; 3];
    for node in (0..=d).filter(|&n| n != local) {
        let v = field.interior_node(cell, node);
        for k in 0..d {
            avg[k] += v[k] / d as f64;
        }
    }
    let vb = field.facet_value(mesh.cell_facets(cell)[local]);
    [avg[0] - vb[0], avg[1] - vb[1], avg[2] - vb[2]]
}

/// Discrete energy norm `(Σ_T ‖∇_w v‖²_T + h_T^{-1} ‖Q_b v_0 - v_b‖²_{∂T})^{1/2}`.
pub fn triple_bar_norm(mesh: &SimplicialMesh, field: &WGField) -> f64 {
    let d = mesh.dim();
    let mut total = 0.0;
    for c in 0..mesh.n_cells() {
        let g = cell_weak_gradient(mesh, c, &field.cell_facet_values(mesh, c));
        let frob: f64 = g.iter().flatten().map(|x| x * x).sum();
        total += mesh.cell_volume(c) * frob;
        let mut jumps = 0.0;
        for i in 0..=d {
            let j = stabilizer_jump(mesh, field, c, i);
            jumps += mesh.local_facet_measure(c, i) * dot(&j, &j);
        }
        total += jumps / mesh.cell_diameter(c);
    }
    total.sqrt()
}

/// `‖v_0‖_{L²(Ω)}`, exact for the P1 interior part via the nodal mass matrix.
pub fn interior_l2_norm(mesh: &SimplicialMesh, field: &WGField) -> f64 {
    let d = mesh.dim();
    let nv = d + 1;
    let mut total = 0.0;
    for c in 0..mesh.n_cells() {
        let m = mesh.cell_volume(c) / ((d + 1) * (d + 2)) as f64;
        for k in 0..d {
            let vals: Vec<f64> = (0..nv).map(|n| field.interior_node(c, n)[k]).collect();
            let sum: f64 = vals.iter().sum();
            let sq: f64 = vals.iter().map(|x| x * x).sum();
            total += m * (sq + sum * sum);
        }
    }
    total.sqrt()
}
