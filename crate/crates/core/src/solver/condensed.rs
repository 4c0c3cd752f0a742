//! Exact elimination of local blocks, and a preconditioner for the reduced operator that
//! stays effective when a large penalty `Bᵀ diag(w) B` dominates the matrix.

use super::{CholeskyFactor, SolverError};
use crate::sparse::CsrMatrix;

const SKELETON: usize = usize::MAX;

/// The penalty part `Bᵀ diag(w) B` of a system matrix.
#[derive(Debug, Clone)]
pub struct PenaltyTerm {
    pub rows: CsrMatrix,
    pub weights: Vec<f64>,
}

/// Extra knowledge about a system matrix used by the iterative path.
///
/// Each block is a set of DOFs coupled only to itself and to DOFs outside every block
/// (the skeleton). Penalty rows may only touch skeleton DOFs. When `base` is set together
/// with the penalty, `A = base + Bᵀ diag(w) B` and the direct path refines against that
/// sum instead of the assembled matrix, whose rounding would otherwise leak `eps·λ`
/// perturbations into the small eigenvalues.
#[derive(Debug, Clone)]
pub struct SystemStructure {
    block_ptr: Vec<usize>,
    block_dofs: Vec<usize>,
    pub penalty: Option<PenaltyTerm>,
    pub base: Option<CsrMatrix>,
}

impl Default for SystemStructure {
    fn default() -> Self {
        SystemStructure { block_ptr: vec![0], block_dofs: Vec::new(), penalty: None, base: None }
    }
}

impl SystemStructure {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push_block(&mut self, dofs: impl IntoIterator<Item = usize>) {
        self.block_dofs.extend(dofs);
        self.block_ptr.push(self.block_dofs.len());
    }

    pub fn with_penalty(mut self, penalty: PenaltyTerm) -> Self {
        self.penalty = Some(penalty);
        self
    }

    pub fn with_base(mut self, base: CsrMatrix) -> Self {
        self.base = Some(base);
        self
    }

    pub fn n_blocks(&self) -> usize {
        self.block_ptr.len() - 1
    }

    pub fn block(&self, k: usize) -> &[usize] {
        &self.block_dofs[self.block_ptr[k]..self.block_ptr[k + 1]]
    }
}

/// In-place lower Cholesky of a row-major `k × k` matrix. False if not positive definite.
fn dense_cholesky(m: &mut [f64], k: usize) -> bool {
    for j in 0..k {
        let mut d = m[j * k + j];
        for p in 0..j {
            d -= m[j * k + p] * m[j * k + p];
        }
        if !(d > 0.0) {
            return false;
        }
        let d = d.sqrt();
        m[j * k + j] = d;
        for i in j + 1..k {
            let mut s = m[i * k + j];
            for p in 0..j {
                s -= m[i * k + p] * m[j * k + p];
            }
            m[i * k + j] = s / d;
        }
        for i in 0..j {
            m[i * k + j] = 0.0;
        }
    }
    true
}

/// Solves `L Lᵀ y = x` in place for the entries `x[off + t*stride]`, `t < k`.
fn dense_solve(l: &[f64], k: usize, x: &mut [f64], off: usize, stride: usize) {
    for i in 0..k {
        let mut s = x[off + i * stride];
        for p in 0..i {
            s -= l[i * k + p] * x[off + p * stride];
        }
        x[off + i * stride] = s / l[i * k + i];
    }
    for i in (0..k).rev() {
        let mut s = x[off + i * stride];
        for p in i + 1..k {
            s -= l[p * k + i] * x[off + p * stride];
        }
        x[off + i * stride] = s / l[i * k + i];
    }
}

struct LocalElimination {
    dofs: Vec<usize>,
    /// Skeleton indices coupled to the block.
    nbr: Vec<usize>,
    chol: Vec<f64>,
    /// `A_{K,s}` restricted to `nbr`, row-major `k × m`.
    coupling: Vec<f64>,
}

/// `A` with every block eliminated: `S = A_ss − Σ_K A_sK A_KK⁻¹ A_Ks`.
pub(super) struct Condensed {
    n: usize,
    skeleton: Vec<usize>,
    skel_of: Vec<usize>,
    pub schur: CsrMatrix,
    blocks: Vec<LocalElimination>,
}

impl Condensed {
    pub fn new(a: &CsrMatrix, structure: &SystemStructure) -> Result<Self, SolverError> {
        let n = a.nrows();
        let mut owner = vec![SKELETON; n];
        for k in 0..structure.n_blocks() {
            for &i in structure.block(k) {
                if i >= n || owner[i] != SKELETON {
                    return Err(SolverError::InvalidInput(format!("block {k} has an invalid or repeated DOF {i}")));
                }
                owner[i] = k;
            }
        }
        let mut skel_of = vec![SKELETON; n];
        let mut skeleton = Vec::new();
        for i in 0..n {
            if owner[i] == SKELETON {
                skel_of[i] = skeleton.len();
                skeleton.push(i);
            }
        }

        let mut rows: Vec<Vec<usize>> = skeleton
            .iter()
            .map(|&i| a.row(i).0.iter().filter(|&&j| owner[j] == SKELETON).map(|&j| skel_of[j]).collect())
            .collect();
        let mut blocks = Vec::with_capacity(structure.n_blocks());
        for k in 0..structure.n_blocks() {
            let dofs = structure.block(k).to_vec();
            let kk = dofs.len();
            let mut nbr = Vec::new();
            for &i in &dofs {
                for &j in a.row(i).0 {
                    match owner[j] {
                        SKELETON => nbr.push(skel_of[j]),
                        o if o != k => {
                            return Err(SolverError::InvalidInput(format!("blocks {k} and {o} are coupled")));
                        }
                        _ => {}
                    }
                }
            }
            nbr.sort_unstable();
            nbr.dedup();
            let m = nbr.len();
            let mut chol = vec![0.0; kk * kk];
            let mut coupling = vec![0.0; kk * m];
            for (p, &i) in dofs.iter().enumerate() {
                let (cols, vals) = a.row(i);
                for (&j, &v) in cols.iter().zip(vals) {
                    if owner[j] == SKELETON {
                        let q = nbr.binary_search(&skel_of[j]).expect("collected above");
                        coupling[p * m + q] = v;
                    } else {
                        let q = dofs.iter().position(|&d| d == j).expect("same block");
                        chol[p * kk + q] = v;
                    }
                }
            }
            if !dense_cholesky(&mut chol, kk) {
                return Err(SolverError::Factorization(format!("local block {k} is not positive definite")));
            }
            for &s in &nbr {
                rows[s].extend_from_slice(&nbr);
            }
            blocks.push(LocalElimination { dofs, nbr, chol, coupling });
        }

        let mut schur = CsrMatrix::from_pattern(skeleton.len(), rows);
        for (si, &i) in skeleton.iter().enumerate() {
            let (cols, vals) = a.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                if owner[j] == SKELETON {
                    schur.add(si, skel_of[j], v);
                }
            }
        }
        for b in &blocks {
            let (kk, m) = (b.dofs.len(), b.nbr.len());
            let mut x = b.coupling.clone();
            for col in 0..m {
                dense_solve(&b.chol, kk, &mut x, col, m);
            }
            for r in 0..m {
                for c in 0..m {
                    let u: f64 = (0..kk).map(|p| b.coupling[p * m + r] * x[p * m + c]).sum();
                    schur.add(b.nbr[r], b.nbr[c], -u);
                }
            }
        }
        Ok(Condensed { n, skeleton, skel_of, schur, blocks })
    }

    /// `g = b_s − Σ_K A_sK A_KK⁻¹ b_K`.
    pub fn reduce_rhs(&self, b: &[f64]) -> Vec<f64> {
        let mut g: Vec<f64> = self.skeleton.iter().map(|&i| b[i]).collect();
        for blk in &self.blocks {
            let (kk, m) = (blk.dofs.len(), blk.nbr.len());
            let mut t: Vec<f64> = blk.dofs.iter().map(|&i| b[i]).collect();
            dense_solve(&blk.chol, kk, &mut t, 0, 1);
            for q in 0..m {
                g[blk.nbr[q]] -= (0..kk).map(|p| blk.coupling[p * m + q] * t[p]).sum::<f64>();
            }
        }
        g
    }

    /// Full solution from the skeleton part: `x_K = A_KK⁻¹ (b_K − A_Ks y)`.
    pub fn expand(&self, b: &[f64], y: &[f64]) -> Vec<f64> {
        let mut x = vec![0.0; self.n];
        for (si, &i) in self.skeleton.iter().enumerate() {
            x[i] = y[si];
        }
        for blk in &self.blocks {
            let (kk, m) = (blk.dofs.len(), blk.nbr.len());
            let mut t: Vec<f64> = (0..kk)
                .map(|p| b[blk.dofs[p]] - (0..m).map(|q| blk.coupling[p * m + q] * y[blk.nbr[q]]).sum::<f64>())
                .collect();
            dense_solve(&blk.chol, kk, &mut t, 0, 1);
            for (p, &i) in blk.dofs.iter().enumerate() {
                x[i] = t[p];
            }
        }
        x
    }

    /// Penalty rows with columns renumbered to the skeleton.
    pub fn skeleton_penalty(&self, penalty: &PenaltyTerm) -> Result<PenaltyTerm, SolverError> {
        let rows = &penalty.rows;
        if rows.ncols() != self.n || penalty.weights.len() != rows.nrows() {
            return Err(SolverError::InvalidInput("penalty dimensions do not match the matrix".into()));
        }
        if let Some(w) = penalty.weights.iter().find(|w| !(**w > 0.0)) {
            return Err(SolverError::InvalidInput(format!("penalty weight {w} is not positive")));
        }
        let mut trip = Vec::with_capacity(rows.nnz());
        for r in 0..rows.nrows() {
            let (cols, vals) = rows.row(r);
            for (&j, &v) in cols.iter().zip(vals) {
                let s = self.skel_of[j];
                if s == SKELETON {
                    return Err(SolverError::InvalidInput(format!("penalty row {r} touches block DOF {j}")));
                }
                trip.push((r, s, v));
            }
        }
        Ok(PenaltyTerm {
            rows: CsrMatrix::from_triplets(rows.nrows(), self.skeleton.len(), &trip),
            weights: penalty.weights.clone(),
        })
    }
}

/// Preconditioners for CG.
pub(super) enum Preconditioner {
    Jacobi(Vec<f64>),
    /// `P = D + Bᵀ diag(w) B` with `D` the diagonal of the matrix minus its penalty, applied
    /// through the Woodbury identity with a sparse Cholesky factor of `diag(w)⁻¹ + B D⁻¹ Bᵀ`.
    Penalty { inv_d: Vec<f64>, rows: CsrMatrix, inner: CholeskyFactor },
}

impl Preconditioner {
    pub fn jacobi(a: &CsrMatrix) -> Result<Self, SolverError> {
        let diag = a.diagonal();
        if let Some(&d) = diag.iter().find(|d| !(**d > 0.0)) {
            return Err(SolverError::Breakdown { iteration: 0, curvature: d });
        }
        Ok(Preconditioner::Jacobi(diag.iter().map(|d| 1.0 / d).collect()))
    }

    /// The penalty preconditioner, or Jacobi when the penalty never exceeds ten times the
    /// rest of the diagonal (Jacobi is then about as good and much cheaper).
    pub fn penalty(a: &CsrMatrix, penalty: &PenaltyTerm) -> Result<Self, SolverError> {
        let b = &penalty.rows;
        let w = &penalty.weights;
        let n = a.nrows();
        let diag = a.diagonal();
        if let Some(&d) = diag.iter().find(|d| !(**d > 0.0)) {
            return Err(SolverError::Breakdown { iteration: 0, curvature: d });
        }
        let mut penalty_diag = vec![0.0; n];
        // columns of B: (row, value) pairs
        let mut col_entries: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for r in 0..b.nrows() {
            let (cols, vals) = b.row(r);
            for (&j, &v) in cols.iter().zip(vals) {
                penalty_diag[j] += w[r] * v * v;
                col_entries[j].push((r, v));
            }
        }
        let mut dominant = false;
        let inv_d: Vec<f64> = diag
            .iter()
            .zip(&penalty_diag)
            .map(|(&d, &p)| {
                // the difference loses digits when the penalty dominates; keep it positive
                let d0 = d - p;
                let d0 = if d0 > 1e-12 * d { d0 } else { d };
                dominant |= p > 10.0 * d0;
                1.0 / d0
            })
            .collect();
        if !dominant {
            return Self::jacobi(a);
        }
        let mut trip: Vec<(usize, usize, f64)> = (0..b.nrows()).map(|r| (r, r, 1.0 / w[r])).collect();
        for (j, entries) in col_entries.iter().enumerate() {
            for &(r, u) in entries {
                for &(s, v) in entries {
                    trip.push((r, s, u * v * inv_d[j]));
                }
            }
        }
        let inner_matrix = CsrMatrix::from_triplets(b.nrows(), b.nrows(), &trip);
        let inner = CholeskyFactor::new(&inner_matrix, usize::MAX)?.expect("unbounded budget");
        Ok(Preconditioner::Penalty { inv_d, rows: b.clone(), inner })
    }

    pub fn apply(&self, r: &[f64], z: &mut [f64]) {
        match self {
            Preconditioner::Jacobi(inv) => {
                for ((z, r), d) in z.iter_mut().zip(r).zip(inv) {
                    *z = r * d;
                }
            }
            Preconditioner::Penalty { inv_d, rows, inner } => {
                for ((z, r), d) in z.iter_mut().zip(r).zip(inv_d) {
                    *z = r * d;
                }
                let mut s = rows.mul_vec(z);
                inner.solve_in_place(&mut s);
                let mut t = vec![0.0; z.len()];
                rows.matvec_transpose(&s, &mut t);
                for ((z, t), d) in z.iter_mut().zip(&t).zip(inv_d) {
                    *z -= t * d;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use rand::{rngs::StdRng, Rng, SeedableRng};

    fn dense(m: &CsrMatrix) -> DMatrix<f64> {
        let rows = m.to_dense();
        DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| rows[i][j])
    }

    /// Block DOFs {0,1} and {2}, skeleton {3,4,5}; penalty on the skeleton.
    fn sample() -> (CsrMatrix, SystemStructure) {
        let mut rng = StdRng::seed_from_u64(3);
        let mut m = DMatrix::<f64>::zeros(6, 6);
        let couple = |i: usize, j: usize| !((i < 2 && j == 2) || (i == 2 && j < 2));
        for i in 0..6 {
            for j in 0..6 {
                if couple(i, j) {
                    m[(i, j)] = rng.gen_range(-1.0..1.0);
                }
            }
        }
        let mut a = m.transpose() * &m;
        for i in 0..6 {
            for j in 0..6 {
                if !couple(i, j) {
                    a[(i, j)] = 0.0;
                }
            }
            a[(i, i)] += 6.0;
        }
        let rows: Vec<Vec<f64>> = (0..6).map(|i| (0..6).map(|j| a[(i, j)]).collect()).collect();
        let mut s = SystemStructure::new();
        s.push_block([0, 1]);
        s.push_block([2]);
        (CsrMatrix::from_dense(&rows), s)
    }

    #[test]
    fn dense_cholesky_solves() {
        let mut l = vec![4.0, 2.0, 2.0, 3.0];
        assert!(dense_cholesky(&mut l, 2));
        let mut x = vec![6.0, 5.0];
        dense_solve(&l, 2, &mut x, 0, 1);
        assert!((x[0] - 1.0).abs() < 1e-14 && (x[1] - 1.0).abs() < 1e-14);
        let mut bad = vec![1.0, 2.0, 2.0, 1.0];
        assert!(!dense_cholesky(&mut bad, 2));
    }

    #[test]
    fn schur_complement_matches_dense() {
        let (a, s) = sample();
        let c = Condensed::new(&a, &s).unwrap();
        let ad = dense(&a);
        let (ib, is) = ([0usize, 1, 2], [3usize, 4, 5]);
        let abb = DMatrix::from_fn(3, 3, |i, j| ad[(ib[i], ib[j])]);
        let abs_ = DMatrix::from_fn(3, 3, |i, j| ad[(ib[i], is[j])]);
        let ass = DMatrix::from_fn(3, 3, |i, j| ad[(is[i], is[j])]);
        let expected = ass - abs_.transpose() * abb.try_inverse().unwrap() * abs_;
        let got = dense(&c.schur);
        assert!((got - expected).abs().max() < 1e-12);

        let b = [1.0, -2.0, 0.5, 3.0, 0.0, -1.0];
        let y = {
            let g = c.reduce_rhs(&b);
            let sd = dense(&c.schur);
            sd.lu().solve(&nalgebra::DVector::from_vec(g)).unwrap()
        };
        let x = c.expand(&b, y.as_slice());
        let r = &ad * nalgebra::DVector::from_vec(x) - nalgebra::DVector::from_row_slice(&b);
        assert!(r.amax() < 1e-12);
    }

    #[test]
    fn coupled_blocks_are_rejected() {
        let (a, _) = sample();
        let mut s = SystemStructure::new();
        s.push_block([0]);
        s.push_block([1]);
        assert!(matches!(Condensed::new(&a, &s), Err(SolverError::InvalidInput(_))));
        let mut s = SystemStructure::new();
        s.push_block([0, 0]);
        assert!(matches!(Condensed::new(&a, &s), Err(SolverError::InvalidInput(_))));
    }

    #[test]
    fn penalty_preconditioner_inverts_its_model() {
        // P = D + Bᵀ diag(w) B exactly when A is diagonal plus the penalty
        let b = CsrMatrix::from_dense(&[vec![1.0, -1.0, 0.0], vec![0.0, 2.0, 1.0]]);
        let w = vec![1e6, 3e7];
        let d = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 2.0, 0.5]));
        let bd = dense(&b);
        let wd = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(w.clone()));
        let p = d + bd.transpose() * wd * &bd;
        let rows: Vec<Vec<f64>> = (0..3).map(|i| (0..3).map(|j| p[(i, j)]).collect()).collect();
        let a = CsrMatrix::from_dense(&rows);
        let pre = Preconditioner::penalty(&a, &PenaltyTerm { rows: b, weights: w }).unwrap();
        let r = [1.0, 2.0, 3.0];
        let mut z = [0.0; 3];
        pre.apply(&r, &mut z);
        let back = &p * nalgebra::DVector::from_row_slice(&z);
        for i in 0..3 {
            assert!((back[i] - r[i]).abs() < 1e-6 * r[i].abs().max(1.0), "{back}");
        }
    }
}
