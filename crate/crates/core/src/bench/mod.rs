//! Convergence and locking studies on manufactured solutions.

pub mod cases;
pub mod selftest;
pub mod table;

use std::time::Instant;

use serde::Serialize;
use thiserror::Error;

use crate::assembly::{assemble_bilinear, assemble_rhs, Algorithm, AssemblyError, Lame};
use crate::mesh::{build_uniform_tet_mesh, build_uniform_triangle_mesh, mesh_size, MeshError, SimplicialMesh};
use crate::quadrature::QuadratureError;
use crate::solver::{solve_spd_structured, SolveReport, SolverError, SolverMethod, SolverOptions};
use crate::wg::{interior_l2_norm, project_qh, triple_bar_norm, DofMap, WGField};

pub use cases::{case_library, find_case, ManufacturedCase};
pub use table::{emit_table, render_table, TableFormat};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("unknown case '{0}'")]
    UnknownCase(String),
    #[error("level list must be nonempty and strictly ascending")]
    InvalidLevels,
    #[error("lambda list must be nonempty")]
    NoLambdas,
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Assembly(#[from] AssemblyError),
    #[error(transparent)]
    Quadrature(#[from] QuadratureError),
    #[error("solve failed at level {level}: {source}")]
    Solver { level: usize, source: SolverError },
    #[error("cannot write table: {0}")]
    Io(#[from] std::io::Error),
}

/// Largest assembled matrix (stored entries) for which the direct path also gets the
/// λ-free base matrix for refinement.
const SPLIT_REFINEMENT_NNZ: usize = 20_000_000;

/// Knobs shared by every run.
#[derive(Debug, Clone, Copy)]
pub struct RunConfig {
    /// Quadrature degree for the load vector.
    pub quad_rhs: usize,
    /// Quadrature degree for the projections `Q_h u` used in errors and boundary data.
    pub quad_err: usize,
    pub solver: SolverOptions,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig { quad_rhs: 4, quad_err: 6, solver: SolverOptions::default() }
    }
}

/// Square mesh with `level` cells per side in 2D, Kuhn cube mesh of the given level in 3D.
pub fn case_mesh(dim: usize, level: usize) -> Result<SimplicialMesh, MeshError> {
    if dim == 2 {
        build_uniform_triangle_mesh(level)
    } else {
        build_uniform_tet_mesh(level)
    }
}

/// A solved discrete problem together with `Q_h u`.
pub struct Solution {
    pub dofs: DofMap,
    pub field: WGField,
    pub projected_exact: WGField,
    pub report: SolveReport,
}

/// Assembles and solves one case on one mesh. Boundary facet values are fixed to `Q_b u`.
pub fn solve_case(
    case: &ManufacturedCase,
    algorithm: Algorithm,
    lame: Lame,
    mesh: &SimplicialMesh,
    config: &RunConfig,
) -> Result<Solution, BenchError> {
    let dofs = DofMap::new(mesh);
    let u = |x: &crate::mesh::Point| case.u_at(x, &lame);
    let f = |x: &crate::mesh::Point| case.f_at(x, &lame);
    let projected_exact = project_qh(mesh, &dofs, u, config.quad_err)?;
    let mut system = assemble_bilinear(mesh, &dofs, lame)?;
    system.add_load(&assemble_rhs(mesh, &dofs, algorithm, f, config.quad_rhs)?);
    system.apply_dirichlet(mesh, &projected_exact);
    // the split operator costs a second matrix, so it is only kept where a direct solve is
    // plausible; large 3D systems go to CG anyway
    let mut structure = system.structure(mesh);
    if config.solver.method != SolverMethod::Cg && system.matrix.nnz() <= SPLIT_REFINEMENT_NNZ {
        structure = structure.with_base(system.base_matrix(mesh));
    }
    let structure = Some(structure);
    let (x, report) = solve_spd_structured(&system.matrix, &system.rhs, &config.solver, structure.as_ref())
        .map_err(|source| BenchError::Solver { level: 0, source })?;
    let field = system.expand(&x, Some(&projected_exact));
    Ok(Solution { dofs, field, projected_exact, report })
}

fn difference(a: &WGField, b: &WGField) -> WGField {
    let mut e = a.clone();
    for (x, y) in e.coeffs.iter_mut().zip(&b.coeffs) {
        *x -= y;
    }
    e
}

/// `|||Q_h u − u_h|||`.
pub fn energy_error(mesh: &SimplicialMesh, projected_exact: &WGField, solution: &WGField) -> f64 {
    triple_bar_norm(mesh, &difference(projected_exact, solution))
}

/// `‖Q_0 u − u_0‖`, exact for the piecewise linear difference.
pub fn l2_error(mesh: &SimplicialMesh, projected_exact: &WGField, solution: &WGField) -> f64 {
    interior_l2_norm(mesh, &difference(projected_exact, solution))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceRow {
    /// `1/h` (cells per side) in 2D, refinement level in 3D.
    pub level: usize,
    pub h: f64,
    pub n_free: usize,
    pub energy_error: f64,
    pub energy_order: Option<f64>,
    pub l2_error: f64,
    pub l2_order: Option<f64>,
    pub solver: String,
    pub iterations: usize,
    pub relative_residual: f64,
    pub backward_error: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceReport {
    pub case: String,
    pub dim: usize,
    pub algorithm: Algorithm,
    pub mu: f64,
    pub lambda: f64,
    pub rows: Vec<ConvergenceRow>,
}

impl ConvergenceReport {
    pub fn energy_errors(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.energy_error).collect()
    }

    pub fn l2_errors(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.l2_error).collect()
    }

    pub fn row(&self, level: usize) -> Option<&ConvergenceRow> {
        self.rows.iter().find(|r| r.level == level)
    }
}

/// `log₂(coarse / fine)`.
pub fn order(coarse: f64, fine: f64) -> f64 {
    (coarse / fine).log2()
}

/// Least-squares slope of `log e` against `log h`.
pub fn fitted_slope(h: &[f64], e: &[f64]) -> f64 {
    let n = h.len() as f64;
    let xs: Vec<f64> = h.iter().map(|v| v.ln()).collect();
    let ys: Vec<f64> = e.iter().map(|v| v.ln()).collect();
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let cov: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let var: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    cov / var
}

pub fn run_convergence(
    case: &ManufacturedCase,
    algorithm: Algorithm,
    lame: Lame,
    levels: &[usize],
    config: &RunConfig,
) -> Result<ConvergenceReport, BenchError> {
    if levels.is_empty() || levels.windows(2).any(|w| w[0] >= w[1]) {
        return Err(BenchError::InvalidLevels);
    }
    let lame = Lame::new(lame.mu, lame.lambda)?;
    let mut rows: Vec<ConvergenceRow> = Vec::with_capacity(levels.len());
    for &level in levels {
        let start = Instant::now();
        let mesh = case_mesh(case.dim, level)?;
        let sol = solve_case(case, algorithm, lame, &mesh, config).map_err(|e| match e {
            BenchError::Solver { source, .. } => BenchError::Solver { level, source },
            other => other,
        })?;
        let energy = energy_error(&mesh, &sol.projected_exact, &sol.field);
        let l2 = l2_error(&mesh, &sol.projected_exact, &sol.field);
        let (energy_order, l2_order) = match rows.last() {
            Some(prev) => {
                // orders per halving of h, so scale by the actual refinement ratio
                let steps = (prev.h / mesh_size(&mesh)).log2();
                (Some(order(prev.energy_error, energy) / steps), Some(order(prev.l2_error, l2) / steps))
            }
            None => (None, None),
        };
        rows.push(ConvergenceRow {
            level,
            h: mesh_size(&mesh),
            n_free: sol.dofs.n_free(),
            energy_error: energy,
            energy_order,
            l2_error: l2,
            l2_order,
            solver: sol.report.method.to_string(),
            iterations: sol.report.iterations,
            relative_residual: sol.report.relative_residual,
            backward_error: sol.report.backward_error,
            seconds: start.elapsed().as_secs_f64(),
        });
    }
    Ok(ConvergenceReport {
        case: case.name.to_string(),
        dim: case.dim,
        algorithm,
        mu: lame.mu,
        lambda: lame.lambda,
        rows,
    })
}

/// One report per `(algorithm, λ)`, algorithms outermost, in the order given.
pub fn run_locking_sweep(
    case: &ManufacturedCase,
    algorithms: &[Algorithm],
    mu: f64,
    lambdas: &[f64],
    levels: &[usize],
    config: &RunConfig,
) -> Result<Vec<ConvergenceReport>, BenchError> {
    if lambdas.is_empty() {
        return Err(BenchError::NoLambdas);
    }
    let mut out = Vec::new();
    for &algorithm in algorithms {
        for &lambda in lambdas {
            out.push(run_convergence(case, algorithm, Lame::new(mu, lambda)?, levels, config)?);
        }
    }
    Ok(out)
}
