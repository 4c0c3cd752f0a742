//! Lowest-order weak Galerkin discretization of linear elasticity in grad-div form.
//!
//! The interior of each simplex carries a vector-valued linear polynomial, each facet a
//! constant vector. Weak gradients and divergences are cellwise constants computed from
//! facet values only. The locking-free variant tests the load against an RT0
//! reconstruction of the test function, which removes the dependence of the error on
//! the Lamé parameter λ.

pub mod assembly;
pub mod bench;
pub mod mesh;
pub mod quadrature;
pub mod solver;
pub mod sparse;
pub mod wg;

pub use assembly::{Algorithm, Lame, SparseSystem};
pub use mesh::{build_uniform_tet_mesh, build_uniform_triangle_mesh, mesh_size, Point, SimplicialMesh};
pub use solver::{solve_spd, solve_spd_structured, SolveReport, SolverError, SolverMethod, SolverOptions, SystemStructure};
pub use wg::{DofMap, WGField};
