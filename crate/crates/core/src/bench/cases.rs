//! Manufactured solutions on the unit square and cube.
//!
//! Each right-hand side satisfies `f = −μΔu − (λ+μ)∇(∇·u)` for the stated `u`; the
//! finite-difference test below checks that independently.

use std::f64::consts::PI;

use crate::assembly::Lame;
use crate::mesh::Point;
use crate::wg::Tensor;

#[derive(Clone, Copy)]
pub struct ManufacturedCase {
    pub name: &'static str,
    pub dim: usize,
    pub description: &'static str,
    pub u: fn(&Point, &Lame) -> Point,
    pub grad_u: fn(&Point, &Lame) -> Tensor,
    pub div_u: fn(&Point, &Lame) -> f64,
    pub f: fn(&Point, &Lame) -> Point,
    /// Whether `u` vanishes on the whole boundary for every λ.
    pub zero_on_boundary: bool,
}

impl std::fmt::Debug for ManufacturedCase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ManufacturedCase").field("name", &self.name).field("dim", &self.dim).finish()
    }
}

impl ManufacturedCase {
    pub fn u_at(&self, x: &Point, lame: &Lame) -> Point {
        (self.u)(x, lame)
    }

    pub fn f_at(&self, x: &Point, lame: &Lame) -> Point {
        (self.f)(x, lame)
    }
}

pub fn case_library() -> Vec<ManufacturedCase> {
    vec![EX2D1, EX3D1, EX2D2, EX3D2, EX2D6]
}

/// Looks a case up by name. `ex2d3` is accepted as another name for `ex2d6`.
pub fn find_case(name: &str) -> Option<ManufacturedCase> {
    let name = if name == "ex2d3" { "ex2d6" } else { name };
    case_library().into_iter().find(|c| c.name == name)
}

fn sc(t: f64) -> (f64, f64) {
    t.sin_cos()
}

// ---- ex2d1: u = (s, s), s = sin πx sin πy

pub const EX2D1: ManufacturedCase = ManufacturedCase {
    name: "ex2d1",
    dim: 2,
    description: "u = (sin πx sin πy, sin πx sin πy)",
    u: ex2d1_u,
    grad_u: ex2d1_grad,
    div_u: ex2d1_div,
    f: ex2d1_f,
    zero_on_boundary: true,
};

fn ex2d1_u(x: &Point, _: &Lame) -> Point {
    let s = (PI * x[0]).sin() * (PI * x[1]).sin();
    [s, s, 0.0]
}

fn ex2d1_grad(x: &Point, _: &Lame) -> Tensor {
    let (sx, cx) = sc(PI * x[0]);
    let (sy, cy) = sc(PI * x[1]);
    let row = [PI * cx * sy, PI * sx * cy, 0.0];
    [row, row, [0.0; 3]]
}

fn ex2d1_div(x: &Point, _: &Lame) -> f64 {
    PI * (PI * (x[0] + x[1])).sin()
}

fn ex2d1_f(x: &Point, l: &Lame) -> Point {
    let s = (PI * x[0]).sin() * (PI * x[1]).sin();
    let g = (l.lambda + l.mu) * PI * PI * (PI * (x[0] + x[1])).cos();
    let v = 2.0 * PI * PI * l.mu * s - g;
    [v, v, 0.0]
}

// ---- ex3d1: u = (sx sy sz, cx cy cz, cx sy sz)

pub const EX3D1: ManufacturedCase = ManufacturedCase {
    name: "ex3d1",
    dim: 3,
    description: "u = (sin x sin y sin z, cos x cos y cos z, cos x sin y sin z)",
    u: ex3d1_u,
    grad_u: ex3d1_grad,
    div_u: ex3d1_div,
    f: ex3d1_f,
    zero_on_boundary: false,
};

fn ex3d1_u(x: &Point, _: &Lame) -> Point {
    let ((sx, cx), (sy, cy), (sz, cz)) = (sc(x[0]), sc(x[1]), sc(x[2]));
    [sx * sy * sz, cx * cy * cz, cx * sy * sz]
}

fn ex3d1_grad(x: &Point, _: &Lame) -> Tensor {
    let ((sx, cx), (sy, cy), (sz, cz)) = (sc(x[0]), sc(x[1]), sc(x[2]));
    [
        [cx * sy * sz, sx * cy * sz, sx * sy * cz],
        [-sx * cy * cz, -cx * sy * cz, -cx * cy * sz],
        [-sx * sy * sz, cx * cy * sz, cx * sy * cz],
    ]
}

fn ex3d1_div(x: &Point, _: &Lame) -> f64 {
    x[0].cos() * x[1].sin() * x[2].sin()
}

fn ex3d1_f(x: &Point, l: &Lame) -> Point {
    let ((sx, cx), (sy, cy), (sz, cz)) = (sc(x[0]), sc(x[1]), sc(x[2]));
    let u = [sx * sy * sz, cx * cy * cz, cx * sy * sz];
    let grad_div = [-sx * sy * sz, cx * cy * sz, cx * sy * cz];
    let k = l.lambda + l.mu;
    [
        3.0 * l.mu * u[0] - k * grad_div[0],
        3.0 * l.mu * u[1] - k * grad_div[1],
        3.0 * l.mu * u[2] - k * grad_div[2],
    ]
}

// ---- ex2d2: divergence-free polynomial plus a 1/λ perturbation.
// With P = x⁴−2x³+x², Q = y⁵−2y⁴+y³ the polynomial part is (P Q', −P' Q).

fn poly_p(x: f64) -> [f64; 4] {
    // P, P', P'', P'''
    [
        x.powi(4) - 2.0 * x.powi(3) + x * x,
        4.0 * x.powi(3) - 6.0 * x * x + 2.0 * x,
        12.0 * x * x - 12.0 * x + 2.0,
        24.0 * x - 12.0,
    ]
}

fn poly_q(y: f64) -> [f64; 4] {
    [
        y.powi(5) - 2.0 * y.powi(4) + y.powi(3),
        5.0 * y.powi(4) - 8.0 * y.powi(3) + 3.0 * y * y,
        20.0 * y.powi(3) - 24.0 * y * y + 6.0 * y,
        60.0 * y * y - 48.0 * y + 6.0,
    ]
}

pub const EX2D2: ManufacturedCase = ManufacturedCase {
    name: "ex2d2",
    dim: 2,
    description: "u = (P(x)Q'(y), -P'(x)Q(y)) + (1/λ)(sin πx sin πy, sin πx sin πy)",
    u: ex2d2_u,
    grad_u: ex2d2_grad,
    div_u: ex2d2_div,
    f: ex2d2_f,
    zero_on_boundary: true,
};

fn ex2d2_u(x: &Point, l: &Lame) -> Point {
    let (p, q) = (poly_p(x[0]), poly_q(x[1]));
    let s = (PI * x[0]).sin() * (PI * x[1]).sin() / l.lambda;
    [p[0] * q[1] + s, -p[1] * q[0] + s, 0.0]
}

fn ex2d2_grad(x: &Point, l: &Lame) -> Tensor {
    let (p, q) = (poly_p(x[0]), poly_q(x[1]));
    let (sx, cx) = sc(PI * x[0]);
    let (sy, cy) = sc(PI * x[1]);
    let gs = [PI * cx * sy / l.lambda, PI * sx * cy / l.lambda];
    [
        [p[1] * q[1] + gs[0], p[0] * q[2] + gs[1], 0.0],
        [-p[2] * q[0] + gs[0], -p[1] * q[1] + gs[1], 0.0],
        [0.0; 3],
    ]
}

fn ex2d2_div(x: &Point, l: &Lame) -> f64 {
    PI * (PI * (x[0] + x[1])).sin() / l.lambda
}

fn ex2d2_f(x: &Point, l: &Lame) -> Point {
    let (p, q) = (poly_p(x[0]), poly_q(x[1]));
    let s = (PI * x[0]).sin() * (PI * x[1]).sin();
    let lap_s = -2.0 * PI * PI * s / l.lambda;
    let lap = [p[2] * q[1] + p[0] * q[3] + lap_s, -(p[3] * q[0] + p[1] * q[2]) + lap_s];
    let g = (l.lambda + l.mu) * PI * PI * (PI * (x[0] + x[1])).cos() / l.lambda;
    [-l.mu * lap[0] - g, -l.mu * lap[1] - g, 0.0]
}

// ---- ex3d2: divergence-free trigonometric-polynomial field plus (1/λ)(sin x, sin y, sin z)

pub const EX3D2: ManufacturedCase = ManufacturedCase {
    name: "ex3d2",
    dim: 3,
    description: "u = (z³ sin x sin y, 5z³ cos x cos y, z⁴ cos x sin y) + (1/λ)(sin x, sin y, sin z)",
    u: ex3d2_u,
    grad_u: ex3d2_grad,
    div_u: ex3d2_div,
    f: ex3d2_f,
    zero_on_boundary: false,
};

fn ex3d2_u(x: &Point, l: &Lame) -> Point {
    let ((sx, cx), (sy, cy)) = (sc(x[0]), sc(x[1]));
    let z = x[2];
    let z3 = z * z * z;
    [
        z3 * sx * sy + sx / l.lambda,
        5.0 * z3 * cx * cy + sy / l.lambda,
        z3 * z * cx * sy + z.sin() / l.lambda,
    ]
}

fn ex3d2_grad(x: &Point, l: &Lame) -> Tensor {
    let ((sx, cx), (sy, cy)) = (sc(x[0]), sc(x[1]));
    let z = x[2];
    let (z2, z3) = (z * z, z * z * z);
    [
        [z3 * cx * sy + cx / l.lambda, z3 * sx * cy, 3.0 * z2 * sx * sy],
        [-5.0 * z3 * sx * cy, -5.0 * z3 * cx * sy + cy / l.lambda, 15.0 * z2 * cx * cy],
        [-z3 * z * sx * sy, z3 * z * cx * cy, 4.0 * z3 * cx * sy + z.cos() / l.lambda],
    ]
}

fn ex3d2_div(x: &Point, l: &Lame) -> f64 {
    (x[0].cos() + x[1].cos() + x[2].cos()) / l.lambda
}

fn ex3d2_f(x: &Point, l: &Lame) -> Point {
    let ((sx, cx), (sy, cy)) = (sc(x[0]), sc(x[1]));
    let z = x[2];
    let (z2, z3) = (z * z, z * z * z);
    let lap = [
        -2.0 * z3 * sx * sy + 6.0 * z * sx * sy - sx / l.lambda,
        -10.0 * z3 * cx * cy + 30.0 * z * cx * cy - sy / l.lambda,
        -2.0 * z3 * z * cx * sy + 12.0 * z2 * cx * sy - z.sin() / l.lambda,
    ];
    // ∇(∇·u) = −(sin x, sin y, sin z)/λ
    let k = (l.lambda + l.mu) / l.lambda;
    [-l.mu * lap[0] + k * sx, -l.mu * lap[1] + k * sy, -l.mu * lap[2] + k * z.sin()]
}

// ---- ex2d6: u = (sin πx cos πy, cos πx sin πy), whose divergence does not vanish.

pub const EX2D6: ManufacturedCase = ManufacturedCase {
    name: "ex2d6",
    dim: 2,
    description: "u = (sin πx cos πy, cos πx sin πy)",
    u: ex2d6_u,
    grad_u: ex2d6_grad,
    div_u: ex2d6_div,
    f: ex2d6_f,
    zero_on_boundary: false,
};

fn ex2d6_u(x: &Point, _: &Lame) -> Point {
    let (sx, cx) = sc(PI * x[0]);
    let (sy, cy) = sc(PI * x[1]);
    [sx * cy, cx * sy, 0.0]
}

fn ex2d6_grad(x: &Point, _: &Lame) -> Tensor {
    let (sx, cx) = sc(PI * x[0]);
    let (sy, cy) = sc(PI * x[1]);
    [[PI * cx * cy, -PI * sx * sy, 0.0], [-PI * sx * sy, PI * cx * cy, 0.0], [0.0; 3]]
}

fn ex2d6_div(x: &Point, _: &Lame) -> f64 {
    2.0 * PI * (PI * x[0]).cos() * (PI * x[1]).cos()
}

/// As printed: `f = −μ(−2π²u) − (λ+μ)(−2π²u)`.
fn ex2d6_f(x: &Point, l: &Lame) -> Point {
    let u = ex2d6_u(x, l);
    let k = 2.0 * PI * PI * (l.lambda + 2.0 * l.mu);
    [k * u[0], k * u[1], 0.0]
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{rngs::StdRng, Rng, SeedableRng};

    const STEP: f64 = 1e-5;

    fn shifted(x: &Point, k: usize, t: f64) -> Point {
        let mut y = *x;
        y[k] += t;
        y
    }

    /// Central-difference `−μΔu − (λ+μ)∇(∇·u)` computed from `u` alone.
    fn fd_operator(case: &ManufacturedCase, x: &Point, l: &Lame) -> Point {
        let d = case.dim;
        let h = STEP;
        let u = |y: &Point| case.u_at(y, l);
        let second = |a: usize, b: usize, comp: usize| -> f64 {
            if a == b {
                (u(&shifted(x, a, h))[comp] - 2.0 * u(x)[comp] + u(&shifted(x, a, -h))[comp]) / (h * h)
            } else {
                let pp = u(&shifted(&shifted(x, a, h), b, h))[comp];
                let pm = u(&shifted(&shifted(x, a, h), b, -h))[comp];
                let mp = u(&shifted(&shifted(x, a, -h), b, h))[comp];
                let mm = u(&shifted(&shifted(x, a, -h), b, -h))[comp];
                (pp - pm - mp + mm) / (4.0 * h * h)
            }
        };
        let mut out = [0.0; 3];
        for a in 0..d {
            let lap: f64 = (0..d).map(|k| second(k, k, a)).sum();
            let grad_div: f64 = (0..d).map(|b| second(a, b, b)).sum();
            out[a] = -l.mu * lap - (l.lambda + l.mu) * grad_div;
        }
        out
    }

    fn random_interior_point(rng: &mut StdRng, d: usize) -> Point {
        let mut x = [0.0; 3];
        for k in 0..d {
            x[k] = rng.gen_range(0.05..0.95);
        }
        x
    }

    #[test]
    fn right_hand_sides_match_finite_differences() {
        let mut rng = StdRng::seed_from_u64(20);
        for case in case_library() {
            for lame in [Lame { mu: 1.0, lambda: 1.0 }, Lame { mu: 1.0, lambda: 1e2 }, Lame { mu: 0.5, lambda: 3.0 }] {
                for _ in 0..20 {
                    let x = random_interior_point(&mut rng, case.dim);
                    let fd = fd_operator(&case, &x, &lame);
                    let exact = case.f_at(&x, &lame);
                    let scale = exact.iter().fold(1.0f64, |m, v| m.max(v.abs()));
                    for k in 0..case.dim {
                        assert!(
                            (fd[k] - exact[k]).abs() <= 1e-4 * scale,
                            "{} at {x:?}: fd {} vs {}",
                            case.name,
                            fd[k],
                            exact[k]
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn gradients_and_divergences_match_finite_differences() {
        let mut rng = StdRng::seed_from_u64(21);
        let lame = Lame { mu: 1.0, lambda: 7.0 };
        for case in case_library() {
            for _ in 0..20 {
                let x = random_interior_point(&mut rng, case.dim);
                let g = (case.grad_u)(&x, &lame);
                for b in 0..case.dim {
                    let up = case.u_at(&shifted(&x, b, STEP), &lame);
                    let um = case.u_at(&shifted(&x, b, -STEP), &lame);
                    for a in 0..case.dim {
                        let fd = (up[a] - um[a]) / (2.0 * STEP);
                        assert!((fd - g[a][b]).abs() < 1e-6 * g[a][b].abs().max(1.0), "{} d{a}/dx{b}", case.name);
                    }
                }
                let trace: f64 = (0..case.dim).map(|k| g[k][k]).sum();
                assert!((trace - (case.div_u)(&x, &lame)).abs() < 1e-12, "{}", case.name);
            }
        }
    }

    #[test]
    fn boundary_values() {
        let mut rng = StdRng::seed_from_u64(22);
        for case in case_library() {
            for lambda in [1.0, 1e4] {
                let lame = Lame { mu: 1.0, lambda };
                let mut worst: f64 = 0.0;
                for _ in 0..200 {
                    let mut x = [0.0; 3];
                    for k in 0..case.dim {
                        x[k] = rng.gen_range(0.0..1.0);
                    }
                    x[rng.gen_range(0..case.dim)] = if rng.gen_bool(0.5) { 0.0 } else { 1.0 };
                    worst = case.u_at(&x, &lame).iter().fold(worst, |m, v| m.max(v.abs()));
                }
                if case.zero_on_boundary {
                    assert!(worst < 1e-12, "{}: {worst}", case.name);
                } else {
                    assert!(worst > 1e-3, "{}: {worst}", case.name);
                }
            }
        }
    }

    #[test]
    fn ex2d6_divergence_is_unbounded_in_lambda_scale() {
        // λ‖∇·u‖ grows linearly: the divergence itself does not depend on λ
        let x = [0.1, 0.2, 0.0];
        let a = (EX2D6.div_u)(&x, &Lame { mu: 1.0, lambda: 1.0 });
        let b = (EX2D6.div_u)(&x, &Lame { mu: 1.0, lambda: 1e8 });
        assert_eq!(a, b);
        assert!((a - 2.0 * PI * (0.1 * PI).cos() * (0.2 * PI).cos()).abs() < 1e-15);
    }

    #[test]
    fn ex3d2_divergence_as_printed() {
        let l = Lame { mu: 1.0, lambda: 1e3 };
        let x = [0.3, 0.6, 0.9];
        let expected = (0.3f64.cos() + 0.6f64.cos() + 0.9f64.cos()) / 1e3;
        assert!(((EX3D2.div_u)(&x, &l) - expected).abs() < 1e-18);
    }

    #[test]
    fn lookup() {
        assert_eq!(case_library().len(), 5);
        assert_eq!(find_case("ex2d3").unwrap().name, "ex2d6");
        assert!(find_case("ex4d1").is_none());
        for c in case_library() {
            assert_eq!(find_case(c.name).unwrap().name, c.name);
        }
    }
}
