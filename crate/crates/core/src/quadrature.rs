//! Symmetric quadrature rules on reference simplices.
//!
//! Points are stored in barycentric coordinates, weights sum to the measure of the
//! reference simplex (1 for the unit segment, 1/2 for the unit triangle, 1/6 for the
//! unit tetrahedron).

use thiserror::Error;

use crate::mesh::{Point, SimplicialMesh};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum QuadratureError {
    #[error("no rule of degree {degree} on the {simplex_dim}-simplex (supported 1..={max})")]
    UnsupportedDegree { simplex_dim: usize, degree: usize, max: usize },
    #[error("unsupported dimension {0}")]
    UnsupportedDimension(usize),
}

#[derive(Debug, Clone)]
pub struct QuadratureRule {
    simplex_dim: usize,
    points: Vec<[f64; 4]>,
    weights: Vec<f64>,
    exact_degree: usize,
}

impl QuadratureRule {
    pub fn simplex_dim(&self) -> usize {
        self.simplex_dim
    }

    /// Barycentric coordinates; only the first `simplex_dim + 1` entries are meaningful.
    pub fn points(&self) -> &[[f64; 4]] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn exact_degree(&self) -> usize {
        self.exact_degree
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Measure of the reference simplex.
    pub fn reference_measure(&self) -> f64 {
        match self.simplex_dim {
            1 => 1.0,
            2 => 0.5,
            _ => 1.0 / 6.0,
        }
    }

    /// Maps the rule onto the simplex spanned by `corners`, whose measure is `measure`.
    /// Yields (physical point, barycentric coordinates, physical weight).
    pub fn mapped<'a>(
        &'a self,
        corners: &'a [Point],
        measure: f64,
    ) -> impl Iterator<Item = (Point, &'a [f64; 4], f64)> + 'a {
        let scale = measure / self.reference_measure();
        self.points.iter().zip(&self.weights).map(move |(bary, &w)| {
            let mut x = [0.0; 3];
            for (b, c) in bary.iter().zip(corners) {
                for k in 0..3 {
                    x[k] += b * c[k];
                }
            }
            (x, bary, w * scale)
        })
    }
}

/// Values that quadrature can accumulate.
pub trait Integrand: Copy {
    fn zero() -> Self;
    fn add_scaled(&mut self, w: f64, v: &Self);
}

impl Integrand for f64 {
    fn zero() -> Self {
        0.0
    }
    fn add_scaled(&mut self, w: f64, v: &Self) {
        *self += w * v;
    }
}

impl Integrand for [f64; 3] {
    fn zero() -> Self {
        [0.0; 3]
    }
    fn add_scaled(&mut self, w: f64, v: &Self) {
        for k in 0..3 {
            self[k] += w * v[k];
        }
    }
}

impl Integrand for [[f64; 3]; 3] {
    fn zero() -> Self {
        [[0.0; 3]; 3]
    }
    fn add_scaled(&mut self, w: f64, v: &Self) {
        for a in 0..3 {
            for b in 0..3 {
                self[a][b] += w * v[a][b];
            }
        }
    }
}

/// Rule on the reference cell: triangle for `dim == 2`, tetrahedron for `dim == 3`.
pub fn cell_rule(dim: usize, degree: usize) -> Result<QuadratureRule, QuadratureError> {
    match dim {
        2 => triangle_rule(degree),
        3 => tetrahedron_rule(degree),
        _ => Err(QuadratureError::UnsupportedDimension(dim)),
    }
}

/// Rule on the reference facet: segment for `dim == 2`, triangle for `dim == 3`.
pub fn facet_rule(dim: usize, degree: usize) -> Result<QuadratureRule, QuadratureError> {
    match dim {
        2 => segment_rule(degree),
        3 => triangle_rule(degree),
        _ => Err(QuadratureError::UnsupportedDimension(dim)),
    }
}

pub fn integrate_on_cell<T: Integrand>(
    mesh: &SimplicialMesh,
    cell: usize,
    rule: &QuadratureRule,
    f: impl Fn(&Point) -> T,
) -> T {
    let corners: Vec<Point> = mesh.cell(cell).iter().map(|&v| *mesh.vertex(v)).collect();
    let mut acc = T::zero();
    for (x, _, w) in rule.mapped(&corners, mesh.cell_volume(cell)) {
        acc.add_scaled(w, &f(&x));
    }
    acc
}

pub fn integrate_on_facet<T: Integrand>(
    mesh: &SimplicialMesh,
    facet: usize,
    rule: &QuadratureRule,
    f: impl Fn(&Point) -> T,
) -> T {
    let corners: Vec<Point> = mesh.facet(facet).iter().map(|&v| *mesh.vertex(v)).collect();
    let mut acc = T::zero();
    for (x, _, w) in rule.mapped(&corners, mesh.facet_measure(facet)) {
        acc.add_scaled(w, &f(&x));
    }
    acc
}

fn unsupported(simplex_dim: usize, degree: usize, max: usize) -> QuadratureError {
    QuadratureError::UnsupportedDegree { simplex_dim, degree, max }
}

fn segment_rule(degree: usize) -> Result<QuadratureRule, QuadratureError> {
    // Gauss-Legendre nodes on [-1,1] with weights already halved for the unit segment.
    let (nodes, weights, exact): (Vec<f64>, Vec<f64>, usize) = match degree {
        1 => (vec![0.0], vec![1.0], 1),
        2 | 3 => {
            let a = 1.0 / 3f64.sqrt();
            (vec![-a, a], vec![0.5, 0.5], 3)
        }
        4 | 5 => {
            let a = 0.6f64.sqrt();
            (vec![-a, 0.0, a], vec![5.0 / 18.0, 8.0 / 18.0, 5.0 / 18.0], 5)
        }
        6 | 7 => {
            let s = (6.0f64 / 5.0).sqrt();
            let x1 = ((3.0 - 2.0 * s) / 7.0).sqrt();
            let x2 = ((3.0 + 2.0 * s) / 7.0).sqrt();
            let w1 = (18.0 + 30f64.sqrt()) / 72.0;
            let w2 = (18.0 - 30f64.sqrt()) / 72.0;
            (vec![-x2, -x1, x1, x2], vec![w2, w1, w1, w2], 7)
        }
        _ => return Err(unsupported(1, degree, 7)),
    };
    let points = nodes
        .iter()
        .map(|x| {
            let t = 0.5 * (1.0 + x);
            [1.0 - t, t, 0.0, 0.0]
        })
        .collect();
    Ok(QuadratureRule { simplex_dim: 1, points, weights, exact_degree: exact })
}

/// Builds the symmetric orbit of a barycentric tuple, dropping duplicate permutations.
fn orbit(base: &[f64]) -> Vec<[f64; 4]> {
    let n = base.len();
    let mut out: Vec<[f64; 4]> = Vec::new();
    let mut idx: Vec<usize> = (0..n).collect();
    loop {
        let mut p = [0.0; 4];
        for (k, &i) in idx.iter().enumerate() {
            p[k] = base[i];
        }
        if !out.iter().any(|q| q.iter().zip(&p).all(|(a, b)| a == b)) {
            out.push(p);
        }
        // next lexicographic permutation of the index list
        let Some(i) = (0..n - 1).rev().find(|&i| idx[i] < idx[i + 1]) else { break };
        let j = (i + 1..n).rev().find(|&j| idx[i] < idx[j]).unwrap();
        idx.swap(i, j);
        idx[i + 1..].reverse();
    }
    out
}

fn from_orbits(simplex_dim: usize, exact_degree: usize, orbits: &[(&[f64], f64)]) -> QuadratureRule {
    let mut points = Vec::new();
    let mut weights = Vec::new();
    for (base, w) in orbits {
        for p in orbit(base) {
            points.push(p);
            weights.push(*w);
        }
    }
    QuadratureRule { simplex_dim, points, weights, exact_degree }
}

fn triangle_rule(degree: usize) -> Result<QuadratureRule, QuadratureError> {
    let third = 1.0 / 3.0;
    let rule = match degree {
        1 => from_orbits(2, 1, &[(&[third, third, third], 0.5)]),
        2 => from_orbits(2, 2, &[(&[2.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0], 1.0 / 6.0)]),
        3 | 4 => {
            let a = 0.445_948_490_915_964_8;
            let b = 0.091_576_213_509_770_78;
            from_orbits(
                2,
                4,
                &[(&[a, a, 1.0 - 2.0 * a], 0.111_690_794_839_005_67), (&[b, b, 1.0 - 2.0 * b], 0.054_975_871_827_661)],
            )
        }
        5 => {
            // Radon's 7-point rule
            let r = 15f64.sqrt();
            let a = (6.0 - r) / 21.0;
            let b = (6.0 + r) / 21.0;
            from_orbits(
                2,
                5,
                &[
                    (&[third, third, third], 9.0 / 80.0),
                    (&[a, a, 1.0 - 2.0 * a], (155.0 - r) / 2400.0),
                    (&[b, b, 1.0 - 2.0 * b], (155.0 + r) / 2400.0),
                ],
            )
        }
        6 => {
            let a = 0.249_286_745_170_899_05;
            let b = 0.063_089_014_491_504_53;
            let (c1, c2) = (0.053_145_049_844_809_03, 0.310_352_451_033_792_83);
            from_orbits(
                2,
                6,
                &[
                    (&[a, a, 1.0 - 2.0 * a], 0.058_393_137_863_199_28),
                    (&[b, b, 1.0 - 2.0 * b], 0.025_422_453_185_105_037),
                    (&[c1, c2, 1.0 - c1 - c2], 0.041_425_537_809_181_17),
                ],
            )
        }
        _ => return Err(unsupported(2, degree, 6)),
    };
    Ok(rule)
}

fn tetrahedron_rule(degree: usize) -> Result<QuadratureRule, QuadratureError> {
    let quarter = 0.25;
    let rule = match degree {
        1 => from_orbits(3, 1, &[(&[quarter; 4], 1.0 / 6.0)]),
        2 => {
            let a = (5.0 - 5f64.sqrt()) / 20.0;
            from_orbits(3, 2, &[(&[a, a, a, 1.0 - 3.0 * a], 1.0 / 24.0)])
        }
        3..=5 => {
            let a1 = 0.092_735_250_310_891_2;
            let a2 = 0.310_885_919_263_300_6;
            let b = 0.454_496_295_874_350_4;
            from_orbits(
                3,
                5,
                &[
                    (&[a1, a1, a1, 1.0 - 3.0 * a1], 0.012_248_840_519_393_66),
                    (&[a2, a2, a2, 1.0 - 3.0 * a2], 0.018_781_320_953_002_64),
                    (&[b, b, 0.5 - b, 0.5 - b], 0.007_091_003_462_846_911),
                ],
            )
        }
        6 => {
            let a1 = 0.214_602_871_259_151_67;
            let a2 = 0.040_673_958_534_611_34;
            let a3 = 0.322_337_890_142_275_65;
            let (b, c) = (0.063_661_001_875_017_53, 0.269_672_331_458_315_9);
            from_orbits(
                3,
                6,
                &[
                    (&[a1, a1, a1, 1.0 - 3.0 * a1], 0.006_653_791_709_694_645),
                    (&[a2, a2, a2, 1.0 - 3.0 * a2], 0.001_679_535_175_886_776_3),
                    (&[a3, a3, a3, 1.0 - 3.0 * a3], 0.009_226_196_923_942_399),
                    (&[b, b, c, 1.0 - 2.0 * b - c], 0.008_035_714_285_714_283),
                ],
            )
        }
        _ => return Err(unsupported(3, degree, 6)),
    };
    Ok(rule)
}
