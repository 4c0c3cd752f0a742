//! Global assembly of `a_s(·,·)` and of the two load functionals.
//!
//! Boundary facet DOFs are eliminated: the matrix and load vector live on the free DOFs
//! of [`DofMap`]. Nonzero boundary data enters through [`SparseSystem::apply_dirichlet`].

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mesh::{dot, Point, SimplicialMesh};
use crate::quadrature::{cell_rule, QuadratureError};
use crate::solver::{PenaltyTerm, SystemStructure};
use crate::sparse::CsrMatrix;
use crate::wg::{rt0_basis_scale, DofMap, WGField};

#[derive(Debug, Error)]
pub enum AssemblyError {
    #[error("Lamé parameters must be positive (mu = {mu}, lambda = {lambda})")]
    InvalidLame { mu: f64, lambda: f64 },
    #[error(transparent)]
    Quadrature(#[from] QuadratureError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lame {
    pub mu: f64,
    pub lambda: f64,
}

impl Lame {
    pub fn new(mu: f64, lambda: f64) -> Result<Self, AssemblyError> {
        if !(mu > 0.0 && lambda > 0.0 && mu.is_finite() && lambda.is_finite()) {
            return Err(AssemblyError::InvalidLame { mu, lambda });
        }
        Ok(Lame { mu, lambda })
    }
}

/// Which load functional tests the body force.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    /// `(f, R_h v)`: load tested against the RT0 reconstruction (locking-free).
    New,
    /// `(f, v_0)`: load tested against the interior part.
    Standard,
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Algorithm::New => write!(f, "new"),
            Algorithm::Standard => write!(f, "standard"),
        }
    }
}

impl std::str::FromStr for Algorithm {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "new" => Ok(Algorithm::New),
            "standard" => Ok(Algorithm::Standard),
            other => Err(format!("unknown algorithm '{other}' (expected new|standard)")),
        }
    }
}

/// Dense element matrix over the cell's local DOFs.
///
/// Local ordering: interior `(node, comp)` at `node * d + comp`, then facet `(i, comp)`
/// at `d(d+1) + i * d + comp`.
#[derive(Debug, Clone)]
pub struct LocalBlock {
    pub cell: usize,
    pub dofs: Vec<usize>,
    pub matrix: Vec<f64>,
}

impl LocalBlock {
    pub fn size(&self) -> usize {
        self.dofs.len()
    }

    pub fn entry(&self, p: usize, q: usize) -> f64 {
        self.matrix[p * self.dofs.len() + q]
    }

    pub fn quadratic_form(&self, x: &[f64]) -> f64 {
        let n = self.size();
        let mut s = 0.0;
        for p in 0..n {
            for q in 0..n {
                s += x[p] * self.matrix[p * n + q] * x[q];
            }
        }
        s
    }
}

/// Element matrix of `a_s` on one cell. Only the upper triangle is computed; the lower
/// triangle is a copy, so the block is exactly symmetric.
pub fn local_block(mesh: &SimplicialMesh, dofs: &DofMap, cell: usize, lame: Lame) -> LocalBlock {
    element_matrix(mesh, dofs, cell, lame.mu, lame.lambda + lame.mu)
}

/// Element matrix with an explicit grad-div coefficient (`λ+μ` in `a_s`, 0 for the base part).
fn element_matrix(mesh: &SimplicialMesh, dofs: &DofMap, cell: usize, mu: f64, grad_div: f64) -> LocalBlock {
    let d = mesh.dim();
    let nv = d + 1;
    let n_int = d * nv;
    let n = 2 * n_int;
    let mut global = Vec::with_capacity(n);
    for node in 0..nv {
        for comp in 0..d {
            global.push(dofs.interior_dof(cell, node, comp));
        }
    }
    for &f in mesh.cell_facets(cell) {
        for comp in 0..d {
            global.push(dofs.facet_dof(f, comp));
        }
    }

    let vol = mesh.cell_volume(cell);
    let inv_h = 1.0 / mesh.cell_diameter(cell);
    let measure: Vec<f64> = (0..nv).map(|i| mesh.local_facet_measure(cell, i)).collect();
    let normal: Vec<&Point> = (0..nv).map(|i| mesh.outward_normal(cell, i)).collect();
    let avg = 1.0 / d as f64;

    // Stabilizer weight vectors per local facet i (same for each component):
    // jump_i = Σ_{k≠i} v0_k / d - vb_i.
    let stab_coeff = |i: usize, slot: usize| -> f64 {
        if slot < nv {
            if slot == i {
                0.0
            } else {
                avg
            }
        } else if slot - nv == i {
            -1.0
        } else {
            0.0
        }
    };

    let mut m = vec![0.0; n * n];
    // `slot` indexes interior nodes 0..nv and facets nv..2nv for one component.
    let local_index = |slot: usize, comp: usize| -> usize {
        if slot < nv {
            slot * d + comp
        } else {
            n_int + (slot - nv) * d + comp
        }
    };
    for p_slot in 0..2 * nv {
        for p_comp in 0..d {
            let p = local_index(p_slot, p_comp);
            for q_slot in 0..2 * nv {
                for q_comp in 0..d {
                    let q = local_index(q_slot, q_comp);
                    if q < p {
                        continue;
                    }
                    let mut v = 0.0;
                    if p_comp == q_comp {
                        for i in 0..nv {
                            let (a, b) = (stab_coeff(i, p_slot), stab_coeff(i, q_slot));
                            if a != 0.0 && b != 0.0 {
                                v += inv_h * measure[i] * a * b;
                            }
                        }
                    }
                    if p_slot >= nv && q_slot >= nv {
                        let (i, j) = (p_slot - nv, q_slot - nv);
                        let s = measure[i] * measure[j] / vol;
                        if p_comp == q_comp {
                            v += mu * s * dot(normal[i], normal[j]);
                        }
                        v += grad_div * s * normal[i][p_comp] * normal[j][q_comp];
                    }
                    m[p * n + q] = v;
                    m[q * n + p] = v;
                }
            }
        }
    }
    LocalBlock { cell, dofs: global, matrix: m }
}

/// Symmetric positive definite system over the free DOFs.
#[derive(Debug, Clone)]
pub struct SparseSystem {
    pub matrix: CsrMatrix,
    pub rhs: Vec<f64>,
    pub dof_map: DofMap,
    pub lame: Lame,
}

/// Sparsity pattern over free DOFs implied by the coupling structure: facet DOFs couple to
/// every DOF of their adjacent cells, interior DOFs only within their own cell and component.
fn free_pattern(mesh: &SimplicialMesh, dofs: &DofMap) -> Vec<Vec<usize>> {
    let d = mesh.dim();
    let nv = d + 1;
    let mut rows: Vec<Vec<usize>> = Vec::with_capacity(dofs.n_free());
    let free = |g: usize| dofs.free_index(g);
    for &g in dofs.free_dofs() {
        let mut cols = Vec::new();
        if g < dofs.n_interior() {
            let cell = g / (d * nv);
            let comp = (g % (d * nv)) % d;
            for node in 0..nv {
                cols.extend(free(dofs.interior_dof(cell, node, comp)));
            }
            for &f in mesh.cell_facets(cell) {
                cols.extend(free(dofs.facet_dof(f, comp)));
            }
        } else {
            let facet = (g - dofs.n_interior()) / d;
            let comp = (g - dofs.n_interior()) % d;
            for side in mesh.facet_sides(facet) {
                for node in 0..nv {
                    cols.extend(free(dofs.interior_dof(side.cell, node, comp)));
                }
                for &f in mesh.cell_facets(side.cell) {
                    for k in 0..d {
                        cols.extend(free(dofs.facet_dof(f, k)));
                    }
                }
            }
        }
        rows.push(cols);
    }
    rows
}

/// Assembles the matrix of `a_s(w, v) = μ(∇_w w, ∇_w v) + (λ+μ)(∇_w·w, ∇_w·v) + s(w, v)`
/// on the free DOFs. The right-hand side starts at zero.
///
/// Contributions are accumulated cell by cell into a precomputed pattern, so the result
/// is bitwise reproducible for a fixed mesh.
pub fn assemble_bilinear(mesh: &SimplicialMesh, dofs: &DofMap, lame: Lame) -> Result<SparseSystem, AssemblyError> {
    let lame = Lame::new(lame.mu, lame.lambda)?;
    let matrix = assemble_matrix(mesh, dofs, lame.mu, lame.lambda + lame.mu);
    Ok(SparseSystem { rhs: vec![0.0; dofs.n_free()], matrix, dof_map: dofs.clone(), lame })
}

fn assemble_matrix(mesh: &SimplicialMesh, dofs: &DofMap, mu: f64, grad_div: f64) -> CsrMatrix {
    let mut matrix = CsrMatrix::from_pattern(dofs.n_free(), free_pattern(mesh, dofs));
    for c in 0..mesh.n_cells() {
        let block = element_matrix(mesh, dofs, c, mu, grad_div);
        let n = block.size();
        let free: Vec<Option<usize>> = block.dofs.iter().map(|&g| dofs.free_index(g)).collect();
        for p in 0..n {
            let Some(i) = free[p] else { continue };
            for q in 0..n {
                let Some(j) = free[q] else { continue };
                let v = block.matrix[p * n + q];
                if v != 0.0 || matrix.has_entry(i, j) {
                    matrix.add(i, j, v);
                }
            }
        }
    }
    matrix
}

impl SparseSystem {
    /// The matrix without its `(λ+μ)` term: `μ(∇_w·, ∇_w·) + s(·, ·)`, same pattern.
    pub fn base_matrix(&self, mesh: &SimplicialMesh) -> CsrMatrix {
        assemble_matrix(mesh, &self.dof_map, self.lame.mu, 0.0)
    }

    /// Block and penalty structure of the matrix: interior DOFs of one cell and component
    /// couple only to facet DOFs, and the `(λ+μ)` term is `Bᵀ diag((λ+μ)|T|) B` with `B`
    /// the weak divergence on free facet DOFs.
    pub fn structure(&self, mesh: &SimplicialMesh) -> SystemStructure {
        let dofs = &self.dof_map;
        let d = mesh.dim();
        let mut structure = SystemStructure::new();
        let mut trip = Vec::with_capacity(mesh.n_cells() * (d + 1) * d);
        let mut weights = Vec::with_capacity(mesh.n_cells());
        for c in 0..mesh.n_cells() {
            for comp in 0..d {
                structure.push_block(
                    (0..=d).map(|node| dofs.free_index(dofs.interior_dof(c, node, comp)).expect("interior DOFs are free")),
                );
            }
            let vol = mesh.cell_volume(c);
            for (i, &f) in mesh.cell_facets(c).iter().enumerate() {
                let scale = mesh.local_facet_measure(c, i) / vol;
                let normal = mesh.outward_normal(c, i);
                for k in 0..d {
                    if let Some(j) = dofs.free_index(dofs.facet_dof(f, k)) {
                        trip.push((c, j, scale * normal[k]));
                    }
                }
            }
            weights.push((self.lame.lambda + self.lame.mu) * vol);
        }
        let rows = CsrMatrix::from_triplets(mesh.n_cells(), dofs.n_free(), &trip);
        structure.with_penalty(PenaltyTerm { rows, weights })
    }

    /// Adds the free entries of a load vector laid out over all DOFs.
    pub fn add_load(&mut self, full: &[f64]) {
        for (i, &g) in self.dof_map.free_dofs().iter().enumerate() {
            self.rhs[i] += full[g];
        }
    }

    /// Moves known values on the constrained (boundary facet) DOFs to the right-hand side:
    /// `rhs -= A_free,constrained · g`. Only the constrained entries of `boundary` are read.
    pub fn apply_dirichlet(&mut self, mesh: &SimplicialMesh, boundary: &WGField) {
        let dofs = &self.dof_map;
        for c in 0..mesh.n_cells() {
            if !mesh.cell_facets(c).iter().any(|&f| mesh.is_boundary_facet(f)) {
                continue;
            }
            let block = local_block(mesh, dofs, c, self.lame);
            let n = block.size();
            for p in 0..n {
                let Some(i) = dofs.free_index(block.dofs[p]) else { continue };
                for q in 0..n {
                    let g = block.dofs[q];
                    if dofs.is_constrained(g) {
                        self.rhs[i] -= block.matrix[p * n + q] * boundary.coeffs[g];
                    }
                }
            }
        }
    }

    /// Full field with the free values from `x` and the constrained values from `boundary`.
    pub fn expand(&self, x: &[f64], boundary: Option<&WGField>) -> WGField {
        let mut field = match boundary {
            Some(b) => {
                let mut f = b.clone();
                for (g, v) in f.coeffs.iter_mut().enumerate() {
                    if !self.dof_map.is_constrained(g) {
                        *v = 0.0;
                    }
                }
                f
            }
            None => self.dof_map.zero_field(),
        };
        self.dof_map.scatter_free(x, &mut field);
        field
    }
}

/// Load `(f, R_h v)` over all DOFs: facet `i` of cell `T` receives `(∫_T f·ψ_i) n_i`.
/// Interior DOFs receive zero.
pub fn assemble_rhs_reconstructed(
    mesh: &SimplicialMesh,
    dofs: &DofMap,
    f: impl Fn(&Point) -> Point,
    degree: usize,
) -> Result<Vec<f64>, AssemblyError> {
    let d = mesh.dim();
    let nv = d + 1;
    let rule = cell_rule(d, degree)?;
    let mut out = vec![0.0; dofs.n_total()];
    for c in 0..mesh.n_cells() {
        let corners: Vec<Point> = mesh.cell(c).iter().map(|&v| *mesh.vertex(v)).collect();
        // ∫ f and ∫ f ⊗ x, from which ∫ f·(x - p_i) follows for every i
        let mut int_f = [0.0; 3];
        let mut int_fx = 0.0;
        let mut moments = [0.0; 3];
        for (x, _, w) in rule.mapped(&corners, mesh.cell_volume(c)) {
            let fx = f(&x);
            for k in 0..d {
                int_f[k] += w * fx[k];
                moments[k] += w * fx[k] * x[k];
            }
        }
        for k in 0..d {
            int_fx += moments[k];
        }
        for i in 0..nv {
            let p = &corners[i];
            let integral = int_fx - (0..d).map(|k| int_f[k] * p[k]).sum::<f64>();
            let value = rt0_basis_scale(mesh, c, i) * integral;
            let n = mesh.outward_normal(c, i);
            let facet = mesh.cell_facets(c)[i];
            for k in 0..d {
                out[dofs.facet_dof(facet, k)] += value * n[k];
            }
        }
    }
    Ok(out)
}

/// Load `(f, v_0)` over all DOFs: interior `(node j, comp a)` receives `∫_T f_a λ_j`.
/// Facet DOFs receive zero.
pub fn assemble_rhs_standard(
    mesh: &SimplicialMesh,
    dofs: &DofMap,
    f: impl Fn(&Point) -> Point,
    degree: usize,
) -> Result<Vec<f64>, AssemblyError> {
    let d = mesh.dim();
    let nv = d + 1;
    let rule = cell_rule(d, degree)?;
    let mut out = vec![0.0; dofs.n_total()];
    for c in 0..mesh.n_cells() {
        let corners: Vec<Point> = mesh.cell(c).iter().map(|&v| *mesh.vertex(v)).collect();
        for (x, bary, w) in rule.mapped(&corners, mesh.cell_volume(c)) {
            let fx = f(&x);
            for j in 0..nv {
                for k in 0..d {
                    out[dofs.interior_dof(c, j, k)] += w * bary[j] * fx[k];
                }
            }
        }
    }
    Ok(out)
}

/// Load vector for the chosen algorithm.
pub fn assemble_rhs(
    mesh: &SimplicialMesh,
    dofs: &DofMap,
    algorithm: Algorithm,
    f: impl Fn(&Point) -> Point,
    degree: usize,
) -> Result<Vec<f64>, AssemblyError> {
    match algorithm {
        Algorithm::New => assemble_rhs_reconstructed(mesh, dofs, f, degree),
        Algorithm::Standard => assemble_rhs_standard(mesh, dofs, f, degree),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_uniform_tet_mesh, build_uniform_triangle_mesh};
    use crate::wg::{project_qh, rt0_reconstruct, triple_bar_norm};
    use rand::{rngs::StdRng, Rng, SeedableRng};

    fn reference_triangle() -> SimplicialMesh {
        SimplicialMesh::from_cells(2, vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]], vec![0, 1, 2]).unwrap()
    }

    fn lame(mu: f64, lambda: f64) -> Lame {
        Lame::new(mu, lambda).unwrap()
    }

    #[test]
    fn rejects_nonpositive_lame() {
        let mesh = build_uniform_triangle_mesh(2).unwrap();
        let dofs = DofMap::new(&mesh);
        assert!(Lame::new(0.0, 1.0).is_err());
        assert!(Lame::new(1.0, -1.0).is_err());
        assert!(assemble_bilinear(&mesh, &dofs, Lame { mu: 1.0, lambda: 0.0 }).is_err());
    }

    #[test]
    fn matrix_is_exactly_symmetric() {
        for mesh in [build_uniform_triangle_mesh(6).unwrap(), build_uniform_tet_mesh(2).unwrap()] {
            let dofs = DofMap::new(&mesh);
            let sys = assemble_bilinear(&mesh, &dofs, lame(1.0, 1e4)).unwrap();
            assert_eq!(sys.matrix.max_asymmetry(), 0.0);
        }
    }

    #[test]
    fn local_block_matches_bilinear_form() {
        // a_s(v, v) on one cell equals μ|T||G|² + (λ+μ)|T|div² + h⁻¹Σ|e||jump|²
        let mut rng = StdRng::seed_from_u64(1);
        let mesh = build_uniform_tet_mesh(1).unwrap();
        let dofs = DofMap::new(&mesh);
        let lm = lame(0.7, 3.0);
        let mut field = dofs.zero_field();
        field.coeffs.iter_mut().for_each(|x| *x = rng.gen_range(-1.0..1.0));
        for c in 0..mesh.n_cells() {
            let block = local_block(&mesh, &dofs, c, lm);
            let x: Vec<f64> = block.dofs.iter().map(|&g| field.coeffs[g]).collect();
            let vals = field.cell_facet_values(&mesh, c);
            let g = crate::wg::cell_weak_gradient(&mesh, c, &vals);
            let div = crate::wg::cell_weak_divergence(&mesh, c, &vals);
            let vol = mesh.cell_volume(c);
            let mut expected = lm.mu * vol * g.iter().flatten().map(|x| x * x).sum::<f64>()
                + (lm.lambda + lm.mu) * vol * div * div;
            for i in 0..4 {
                let j = crate::wg::stabilizer_jump(&mesh, &field, c, i);
                expected += mesh.local_facet_measure(c, i) * dot(&j, &j) / mesh.cell_diameter(c);
            }
            let got = block.quadratic_form(&x);
            assert!((got - expected).abs() < 1e-12 * expected.abs());
            assert!(got >= 0.0);
        }
    }

    #[test]
    fn coercivity_against_energy_norm() {
        let mut rng = StdRng::seed_from_u64(2);
        let mesh = build_uniform_triangle_mesh(4).unwrap();
        let dofs = DofMap::new(&mesh);
        for (mu, lambda) in [(1.0, 1.0), (0.3, 1e8), (2.0, 5.0)] {
            let sys = assemble_bilinear(&mesh, &dofs, lame(mu, lambda)).unwrap();
            for _ in 0..20 {
                let x: Vec<f64> = (0..dofs.n_free()).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let norm = triple_bar_norm(&mesh, &dofs.field_from_free(&x));
                let alpha = f64::min(mu, 1.0);
                assert!(sys.matrix.quadratic_form(&x) >= alpha * norm * norm * (1.0 - 1e-12));
            }
        }
    }

    #[test]
    fn linear_fields_have_no_stabilizer_energy() {
        let mesh = build_uniform_triangle_mesh(3).unwrap();
        let dofs = DofMap::new(&mesh);
        let u = |x: &Point| [2.0 * x[0] - x[1], x[0] + 0.5 * x[1], 0.0];
        let field = project_qh(&mesh, &dofs, u, 6).unwrap();
        // what remains of a_s after removing the weak-operator part is the stabilizer
        let lm = lame(1.0, 2.0);
        for c in 0..mesh.n_cells() {
            let block = local_block(&mesh, &dofs, c, lm);
            let x: Vec<f64> = block.dofs.iter().map(|&g| field.coeffs[g]).collect();
            let vals = field.cell_facet_values(&mesh, c);
            let g = crate::wg::cell_weak_gradient(&mesh, c, &vals);
            let div = crate::wg::cell_weak_divergence(&mesh, c, &vals);
            let vol = mesh.cell_volume(c);
            let a = lm.mu * vol * g.iter().flatten().map(|x| x * x).sum::<f64>() + (lm.lambda + lm.mu) * vol * div * div;
            assert!((block.quadratic_form(&x) - a).abs() < 1e-13);
            for i in 0..3 {
                assert!(crate::wg::stabilizer_jump(&mesh, &field, c, i).iter().all(|j| j.abs() < 1e-14));
            }
        }
    }

    #[test]
    fn coupling_structure() {
        let mesh = build_uniform_triangle_mesh(3).unwrap();
        let dofs = DofMap::new(&mesh);
        let sys = assemble_bilinear(&mesh, &dofs, lame(1.0, 1.0)).unwrap();
        let free = dofs.free_dofs();
        for i in 0..dofs.n_free() {
            let (cols, _) = sys.matrix.row(i);
            let gi = free[i];
            for &j in cols {
                let gj = free[j];
                if gi < dofs.n_interior() && gj < dofs.n_interior() {
                    assert_eq!(gi / 6, gj / 6, "interior DOFs of different cells coupled");
                    assert_eq!(gi % 2, gj % 2, "interior components coupled");
                }
            }
            let limit = if gi < dofs.n_interior() { 6 } else { 2 * 3 * 2 - 2 + 2 * 3 };
            assert!(cols.len() <= limit.max(16));
        }
    }

    #[test]
    fn reconstructed_rhs_on_reference_triangle() {
        let mesh = reference_triangle();
        let dofs = DofMap::new(&mesh);
        let zero = assemble_rhs_reconstructed(&mesh, &dofs, |_| [0.0; 3], 4).unwrap();
        assert!(zero.iter().all(|&v| v == 0.0));
        let c = [1.5, -0.5, 0.0];
        let rhs = assemble_rhs_reconstructed(&mesh, &dofs, |_| c, 4).unwrap();
        assert!(rhs[..dofs.n_interior()].iter().all(|&v| v == 0.0));
        let centroid = mesh.cell_centroid(0);
        for i in 0..3 {
            let p = mesh.vertex(mesh.cell(0)[i]);
            let scalar = mesh.local_facet_measure(0, i) / 2.0
                * (c[0] * (centroid[0] - p[0]) + c[1] * (centroid[1] - p[1]));
            let n = mesh.outward_normal(0, i);
            let f = mesh.cell_facets(0)[i];
            for k in 0..2 {
                assert!((rhs[dofs.facet_dof(f, k)] - scalar * n[k]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn reconstructed_rhs_equals_load_on_rt0_field() {
        // (f, R_T(v)) computed by direct quadrature equals rhs · v
        let mut rng = StdRng::seed_from_u64(9);
        let mesh = build_uniform_tet_mesh(2).unwrap();
        let dofs = DofMap::new(&mesh);
        let f = |x: &Point| [x[0].sin(), x[1] * x[2], (x[0] + x[2]).exp()];
        let rhs = assemble_rhs_reconstructed(&mesh, &dofs, f, 6).unwrap();
        let mut field = dofs.zero_field();
        field.coeffs.iter_mut().for_each(|x| *x = rng.gen_range(-1.0..1.0));
        let rule = cell_rule(3, 6).unwrap();
        let mut direct = 0.0;
        for c in 0..mesh.n_cells() {
            let r = rt0_reconstruct(&mesh, c, &field.cell_facet_values(&mesh, c));
            direct += crate::quadrature::integrate_on_cell(&mesh, c, &rule, |x| dot(&f(x), &r.eval(&mesh, x)));
        }
        let via_rhs: f64 = rhs.iter().zip(&field.coeffs).map(|(a, b)| a * b).sum();
        assert!((direct - via_rhs).abs() < 1e-12 * direct.abs().max(1.0));
    }

    #[test]
    fn standard_rhs_on_reference_triangle() {
        let mesh = reference_triangle();
        let dofs = DofMap::new(&mesh);
        let rhs = assemble_rhs_standard(&mesh, &dofs, |_| [1.0, 0.0, 0.0], 4).unwrap();
        for node in 0..3 {
            assert!((rhs[dofs.interior_dof(0, node, 0)] - 1.0 / 6.0).abs() < 1e-15);
            assert_eq!(rhs[dofs.interior_dof(0, node, 1)], 0.0);
        }
        assert!(rhs[dofs.n_interior()..].iter().all(|&v| v == 0.0));
        assert!(assemble_rhs_standard(&mesh, &dofs, |_| [0.0; 3], 4).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dirichlet_lifting_matches_full_operator() {
        // With all DOFs known, A_ff x_f + A_fc g = rhs_f must equal the free rows of a_s(u, ·).
        let mut rng = StdRng::seed_from_u64(4);
        let mesh = build_uniform_triangle_mesh(3).unwrap();
        let dofs = DofMap::new(&mesh);
        let lm = lame(1.0, 10.0);
        let mut field = dofs.zero_field();
        field.coeffs.iter_mut().for_each(|x| *x = rng.gen_range(-1.0..1.0));
        let mut sys = assemble_bilinear(&mesh, &dofs, lm).unwrap();
        sys.apply_dirichlet(&mesh, &field);
        let x = dofs.gather_free(&field);
        let ax = sys.matrix.mul_vec(&x);
        // full operator applied to the field, restricted to free rows
        let mut full = vec![0.0; dofs.n_total()];
        for c in 0..mesh.n_cells() {
            let block = local_block(&mesh, &dofs, c, lm);
            for p in 0..block.size() {
                for q in 0..block.size() {
                    full[block.dofs[p]] += block.entry(p, q) * field.coeffs[block.dofs[q]];
                }
            }
        }
        for (i, &g) in dofs.free_dofs().iter().enumerate() {
            // A_ff x - (−A_fc g) = full
            assert!((ax[i] - sys.rhs[i] - full[g]).abs() < 1e-10);
        }
        let expanded = sys.expand(&x, Some(&field));
        assert_eq!(expanded, field);
    }

    #[test]
    fn penalty_structure_reproduces_lambda_dependence() {
        let mesh = build_uniform_tet_mesh(2).unwrap();
        let dofs = DofMap::new(&mesh);
        let a1 = assemble_bilinear(&mesh, &dofs, lame(1.0, 1.0)).unwrap();
        let a5 = assemble_bilinear(&mesh, &dofs, lame(1.0, 5.0)).unwrap();
        let penalty = a1.structure(&mesh).penalty.unwrap();
        let b = &penalty.rows;
        let mut rng = StdRng::seed_from_u64(9);
        let x: Vec<f64> = (0..dofs.n_free()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        // (A5 − A1) x = Bᵀ diag(4|T|) B x, with weights stored for λ+μ = 2
        let bx = b.mul_vec(&x);
        let wbx: Vec<f64> = bx.iter().zip(&penalty.weights).map(|(v, w)| 2.0 * w * v).collect();
        let mut expected = vec![0.0; x.len()];
        b.matvec_transpose(&wbx, &mut expected);
        let (y1, y5) = (a1.matrix.mul_vec(&x), a5.matrix.mul_vec(&x));
        for i in 0..x.len() {
            assert!((y5[i] - y1[i] - expected[i]).abs() < 1e-10 * (1.0 + expected[i].abs()));
        }
    }

    #[test]
    fn condensed_cg_agrees_with_cholesky() {
        use crate::solver::{solve_spd, solve_spd_structured, SolverMethod, SolverOptions};
        for (mesh, lambda) in [
            (build_uniform_triangle_mesh(8).unwrap(), 1e6),
            (build_uniform_tet_mesh(2).unwrap(), 1.0),
            (build_uniform_tet_mesh(3).unwrap(), 1e8),
        ] {
            let dofs = DofMap::new(&mesh);
            let mut system = assemble_bilinear(&mesh, &dofs, lame(1.0, lambda)).unwrap();
            let d = mesh.dim();
            let f = move |x: &Point| {
                let mut v = [0.0; 3];
                v[..d].copy_from_slice(&[x[0].sin() + 1.0, x[1] * x[0], x[2] - 0.5][..d]);
                v
            };
            system.add_load(&assemble_rhs(&mesh, &dofs, Algorithm::New, f, 4).unwrap());
            let options = SolverOptions::default();
            let (direct, _) = solve_spd(&system.matrix, &system.rhs, &options.with_method(SolverMethod::Cholesky)).unwrap();
            let structure = system.structure(&mesh);
            let (iterative, report) =
                solve_spd_structured(&system.matrix, &system.rhs, &options.with_method(SolverMethod::Cg), Some(&structure))
                    .unwrap();
            assert!(report.backward_error <= 1e-12);
            // both solutions carry rounding errors of order κ·eps at λ = 1e8, so compare in the
            // energy norm with room for that
            let diff: Vec<f64> = direct.iter().zip(&iterative).map(|(a, b)| a - b).collect();
            let rel = (system.matrix.quadratic_form(&diff) / system.matrix.quadratic_form(&direct)).sqrt();
            assert!(rel <= 1e-6, "dim {d}, lambda {lambda}: {rel:e}");
        }
    }
}
