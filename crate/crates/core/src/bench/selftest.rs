//! Invariant checks that need no reference tables. Used by the `selftest` command.

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde::Serialize;

use crate::assembly::{assemble_bilinear, Lame};
use crate::mesh::{build_uniform_tet_mesh, build_uniform_triangle_mesh, Point, SimplicialMesh};
use crate::quadrature::{cell_rule, facet_rule, QuadratureRule};
use crate::solver::{solve_spd_structured, SolverMethod, SolverOptions};
use crate::wg::{
    cell_weak_divergence, cell_weak_gradient, project_qh, project_scalar_avg, project_tensor_avg, rt0_reconstruct,
    triple_bar_norm, weak_divergence, weak_gradient, DofMap, Tensor, WGField,
};

use super::cases::case_library;

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    /// Largest observed violation, in the units of `tolerance`.
    pub worst: f64,
    pub tolerance: f64,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct SelftestReport {
    pub passed: bool,
    pub checks: Vec<Check>,
}

impl SelftestReport {
    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

fn check(name: &str, worst: f64, tolerance: f64, detail: impl Into<String>) -> Check {
    Check { name: name.to_string(), passed: worst <= tolerance, worst, tolerance, detail: detail.into() }
}

fn random_field(dofs: &DofMap, rng: &mut StdRng) -> WGField {
    let mut field = dofs.zero_field();
    field.coeffs.iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
    field
}

fn test_meshes() -> Vec<SimplicialMesh> {
    vec![build_uniform_triangle_mesh(4).expect("valid"), build_uniform_tet_mesh(2).expect("valid")]
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

/// Worst relative error of `rule` over all barycentric monomials up to its degree, against
/// `∫ Π λ_i^{a_i} = d! Π a_i! / (Σa_i + d)!` times the reference measure.
fn monomial_defect(rule: &QuadratureRule) -> f64 {
    let d = rule.simplex_dim();
    let mut worst: f64 = 0.0;
    let mut exps = vec![0usize; d + 1];
    loop {
        let total: usize = exps.iter().sum();
        if total <= rule.exact_degree() {
            let exact = rule.reference_measure() * factorial(d) * exps.iter().map(|&a| factorial(a)).product::<f64>()
                / factorial(total + d);
            let approx: f64 = rule
                .points()
                .iter()
                .zip(rule.weights())
                .map(|(p, w)| w * exps.iter().enumerate().map(|(i, &a)| p[i].powi(a as i32)).product::<f64>())
                .sum();
            worst = worst.max((approx - exact).abs() / exact);
        }
        // next exponent tuple in [0, degree]^(d+1)
        let mut k = 0;
        loop {
            if k == exps.len() {
                return worst;
            }
            exps[k] += 1;
            if exps[k] <= rule.exact_degree() {
                break;
            }
            exps[k] = 0;
            k += 1;
        }
    }
}

fn quadrature_exactness() -> Check {
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for dim in [2, 3] {
        for degree in 1..=7 {
            for rule in [cell_rule(dim, degree), facet_rule(dim, degree)].into_iter().flatten() {
                worst = worst.max(monomial_defect(&rule));
                count += 1;
            }
        }
    }
    check("quadrature monomial exactness", worst, 1e-13, format!("{count} rules"))
}

fn rhs_consistency() -> Check {
    let mut rng = StdRng::seed_from_u64(11);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for case in case_library() {
        for lambda in [1.0, 1e2] {
            let lame = Lame { mu: 1.0, lambda };
            let u = |x: &Point| case.u_at(x, &lame);
            for _ in 0..20 {
                let mut x = [0.0; 3];
                for k in 0..case.dim {
                    x[k] = rng.gen_range(0.05..0.95);
                }
                let at = |da: [f64; 3]| u(&[x[0] + da[0], x[1] + da[1], x[2] + da[2]]);
                let unit = |k: usize, s: f64| {
                    let mut e = [0.0; 3];
                    e[k] = s;
                    e
                };
                let second = |a: usize, b: usize, c: usize| -> f64 {
                    let sum = |p: [f64; 3], q: [f64; 3]| [p[0] + q[0], p[1] + q[1], p[2] + q[2]];
                    if a == b {
                        (at(unit(a, h))[c] - 2.0 * at([0.0; 3])[c] + at(unit(a, -h))[c]) / (h * h)
                    } else {
                        (at(sum(unit(a, h), unit(b, h)))[c] - at(sum(unit(a, h), unit(b, -h)))[c]
                            - at(sum(unit(a, -h), unit(b, h)))[c]
                            + at(sum(unit(a, -h), unit(b, -h)))[c])
                            / (4.0 * h * h)
                    }
                };
                let f = case.f_at(&x, &lame);
                let scale = f.iter().fold(1.0f64, |m, v| m.max(v.abs()));
                for a in 0..case.dim {
                    let lap: f64 = (0..case.dim).map(|k| second(k, k, a)).sum();
                    let grad_div: f64 = (0..case.dim).map(|b| second(a, b, b)).sum();
                    let fd = -lame.mu * lap - (lame.lambda + lame.mu) * grad_div;
                    worst = worst.max((fd - f[a]).abs() / scale);
                }
            }
        }
    }
    check("manufactured f matches finite differences of u", worst, 1e-4, "20 points per case and lambda")
}

fn divergence_preservation(rng: &mut StdRng) -> Check {
    let mut worst: f64 = 0.0;
    for mesh in test_meshes() {
        let dofs = DofMap::new(&mesh);
        for _ in 0..500 {
            let field = random_field(&dofs, rng);
            for c in 0..mesh.n_cells() {
                let vals = field.cell_facet_values(&mesh, c);
                let wdiv = cell_weak_divergence(&mesh, c, &vals);
                let rdiv = rt0_reconstruct(&mesh, c, &vals).divergence(&mesh);
                worst = worst.max((wdiv - rdiv).abs());
            }
        }
    }
    check("div of RT0 reconstruction equals weak divergence", worst, 1e-12, "1000 random fields")
}

fn trace_identity(rng: &mut StdRng) -> Check {
    let mut worst: f64 = 0.0;
    for mesh in test_meshes() {
        let dofs = DofMap::new(&mesh);
        for _ in 0..50 {
            let field = random_field(&dofs, rng);
            for c in 0..mesh.n_cells() {
                let vals = field.cell_facet_values(&mesh, c);
                let g = cell_weak_gradient(&mesh, c, &vals);
                let tr: f64 = (0..mesh.dim()).map(|k| g[k][k]).sum();
                worst = worst.max((tr - cell_weak_divergence(&mesh, c, &vals)).abs());
            }
        }
    }
    check("trace of weak gradient equals weak divergence", worst, 1e-13, "100 random fields")
}

/// Worst deviation in `∇_w Q_h u = Q̄_h ∇u` and `∇_w·Q_h u = 𝒬_h ∇·u`.
fn commutativity_defect(
    mesh: &SimplicialMesh,
    u: impl Fn(&Point) -> Point,
    grad: impl Fn(&Point) -> Tensor,
    div: impl Fn(&Point) -> f64,
) -> f64 {
    let dofs = DofMap::new(mesh);
    let field = project_qh(mesh, &dofs, u, 6).expect("supported degree");
    let wg = weak_gradient(mesh, &field);
    let wd = weak_divergence(mesh, &field);
    let gavg = project_tensor_avg(mesh, grad, 6).expect("supported degree");
    let davg = project_scalar_avg(mesh, div, 6).expect("supported degree");
    let mut worst: f64 = 0.0;
    for c in 0..mesh.n_cells() {
        for a in 0..3 {
            for b in 0..3 {
                worst = worst.max((wg.0[c][a][b] - gavg[c][a][b]).abs());
            }
        }
        worst = worst.max((wd.0[c] - davg[c]).abs());
    }
    worst
}

fn commutativity() -> Vec<Check> {
    let lin = |x: &Point| [1.0 + 2.0 * x[0] - x[1] + 0.5 * x[2], -x[0] + 3.0 * x[1], 0.25 * x[0] + x[2]];
    let lin_grad = |_: &Point| [[2.0, -1.0, 0.5], [-1.0, 3.0, 0.0], [0.25, 0.0, 1.0]];
    let mut worst_linear: f64 = 0.0;
    for mesh in test_meshes() {
        let d = mesh.dim();
        let mask = move |x: &Point| {
            let v = lin(x);
            [v[0], v[1], if d == 3 { v[2] } else { 0.0 }]
        };
        let grad_mask = move |x: &Point| {
            let mut g = lin_grad(x);
            for a in 0..3 {
                for b in 0..3 {
                    if a >= d || b >= d {
                        g[a][b] = 0.0;
                    }
                }
            }
            g
        };
        let div = move |x: &Point| (0..d).map(|k| grad_mask(x)[k][k]).sum::<f64>();
        worst_linear = worst_linear.max(commutativity_defect(&mesh, mask, grad_mask, div));
    }
    let mesh = build_uniform_triangle_mesh(16).expect("valid");
    let lame = Lame { mu: 1.0, lambda: 1.0 };
    let mut worst_trig: f64 = 0.0;
    for case in case_library().into_iter().filter(|c| c.dim == 2) {
        worst_trig = worst_trig.max(commutativity_defect(
            &mesh,
            |x| case.u_at(x, &lame),
            |x| (case.grad_u)(x, &lame),
            |x| (case.div_u)(x, &lame),
        ));
    }
    vec![
        check("projection commutes with weak gradient/divergence (linear u)", worst_linear, 1e-12, "n=4 triangles, level 2 tets"),
        check("projection commutes with weak gradient/divergence (smooth u)", worst_trig, 1e-9, "2D cases at n=16"),
    ]
}

fn coercivity_and_symmetry(rng: &mut StdRng) -> Vec<Check> {
    let mut worst_ratio: f64 = 0.0;
    let mut asym: f64 = 0.0;
    for mesh in test_meshes() {
        let dofs = DofMap::new(&mesh);
        for (mu, lambda) in [(1.0, 1.0), (1.0, 1e8)] {
            let sys = assemble_bilinear(&mesh, &dofs, Lame { mu, lambda }).expect("valid parameters");
            asym = asym.max(sys.matrix.max_asymmetry());
            for _ in 0..100 {
                let x: Vec<f64> = (0..dofs.n_free()).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let norm = triple_bar_norm(&mesh, &dofs.field_from_free(&x));
                let bound = f64::min(mu, 1.0) * norm * norm;
                // violation relative to the bound; negative means satisfied
                worst_ratio = worst_ratio.max((bound - sys.matrix.quadratic_form(&x)) / bound);
            }
        }
    }
    vec![
        check("coercivity x'Ax >= min(mu,1)|||x|||^2", worst_ratio.max(0.0), 1e-12, "100 random vectors per mesh and (mu, lambda)"),
        check("assembled matrix exactly symmetric", asym, 0.0, "max |A - A'|"),
    ]
}

fn positive_definiteness() -> Check {
    let mut failures = Vec::new();
    let mut count = 0;
    let meshes = [8, 16, 32]
        .map(|n| build_uniform_triangle_mesh(n).expect("valid"))
        .into_iter()
        .chain([1, 2, 3].map(|level| build_uniform_tet_mesh(level).expect("valid")));
    for mesh in meshes {
        let dofs = DofMap::new(&mesh);
        for lambda in [1.0, 1e4, 1e8] {
            let sys = assemble_bilinear(&mesh, &dofs, Lame { mu: 1.0, lambda }).expect("valid parameters");
            let structure = sys.structure(&mesh);
            let b = vec![1.0; dofs.n_free()];
            for method in [SolverMethod::Cholesky, SolverMethod::Cg] {
                let opts = SolverOptions::default().with_method(method).with_tol(1e-10);
                count += 1;
                if let Err(e) = solve_spd_structured(&sys.matrix, &b, &opts, Some(&structure)) {
                    failures.push(format!("{}D, {} cells, lambda={lambda}, {method}: {e}", mesh.dim(), mesh.n_cells()));
                }
            }
        }
    }
    let detail = if failures.is_empty() { format!("{count} solves") } else { failures.join("; ") };
    check("Cholesky and CG succeed (SPD)", failures.len() as f64, 0.0, detail)
}

pub fn run_selftest() -> SelftestReport {
    let mut rng = StdRng::seed_from_u64(2024);
    let mut checks = vec![quadrature_exactness(), rhs_consistency()];
    checks.push(divergence_preservation(&mut rng));
    checks.push(trace_identity(&mut rng));
    checks.extend(commutativity());
    checks.extend(coercivity_and_symmetry(&mut rng));
    checks.push(positive_definiteness());
    SelftestReport { passed: checks.iter().all(|c| c.passed), checks }
}
