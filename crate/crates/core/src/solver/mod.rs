//! Solvers for the assembled symmetric positive definite systems.
//!
//! Two paths sit behind [`solve_spd`]: preconditioned conjugate gradients and a sparse
//! Cholesky factorization (faer) followed by iterative refinement.
//!
//! Convergence is judged by the normwise backward error `‖b − Ax‖ / (‖A‖‖x‖ + ‖b‖)`.
//! For large λ the plain relative residual `‖b − Ax‖ / ‖b‖` of even the correctly rounded
//! solution sits far above 1e-12, because `‖A‖‖x‖ ≫ ‖b‖`; both quantities are reported.

use std::fmt;
use std::time::{Duration, Instant};

use faer::dyn_stack::{MemBuffer, MemStack};
use faer::sparse::linalg::cholesky::{factorize_symbolic_cholesky, LltRef, SymbolicCholesky};
use faer::sparse::{SparseColMatRef, SymbolicSparseColMatRef};
use faer::{Conj, MatMut, Par, Side};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sparse::CsrMatrix;

mod condensed;

use condensed::{Condensed, Preconditioner};
pub use condensed::{PenaltyTerm, SystemStructure};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverMethod {
    /// Preconditioned conjugate gradients.
    Cg,
    /// Sparse Cholesky with iterative refinement.
    Cholesky,
    /// Cholesky when the factor fits in the memory budget, CG otherwise.
    Auto,
}

impl fmt::Display for SolverMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SolverMethod::Cg => "cg",
            SolverMethod::Cholesky => "cholesky",
            SolverMethod::Auto => "auto",
        })
    }
}

impl std::str::FromStr for SolverMethod {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "cg" => Ok(SolverMethod::Cg),
            "cholesky" => Ok(SolverMethod::Cholesky),
            "auto" => Ok(SolverMethod::Auto),
            other => Err(format!("unknown solver '{other}' (expected cg|cholesky|auto)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub method: SolverMethod,
    /// Target backward error. CG also reduces the preconditioned residual by this factor.
    pub tol: f64,
    /// Iteration cap for CG; `None` means `20 * n`.
    pub max_iter: Option<usize>,
    /// Largest Cholesky factor (bytes) that `Auto` will attempt.
    pub factor_memory_limit: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions { method: SolverMethod::Auto, tol: 1e-12, max_iter: None, factor_memory_limit: 2 << 30 }
    }
}

impl SolverOptions {
    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn with_method(mut self, method: SolverMethod) -> Self {
        self.method = method;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveReport {
    /// The path actually taken (never `Auto`).
    pub method: SolverMethod,
    /// CG iterations, or refinement steps after the factorization.
    pub iterations: usize,
    /// `‖b − Ax‖₂ / ‖b‖₂`.
    pub relative_residual: f64,
    /// `‖b − Ax‖₂ / (‖A‖∞ ‖x‖₂ + ‖b‖₂)`, never larger than the relative residual.
    pub backward_error: f64,
    pub wall_time: Duration,
}

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("no convergence after {iterations} iterations (backward error {residual:.3e}, target {tol:.1e})")]
    NotConverged { iterations: usize, residual: f64, tol: f64 },
    #[error("breakdown at iteration {iteration}: the matrix is not positive definite (pᵀAp = {curvature:.3e})")]
    Breakdown { iteration: usize, curvature: f64 },
    #[error("Cholesky factorization failed: {0}")]
    Factorization(String),
    #[error("invalid solver input: {0}")]
    InvalidInput(String),
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Largest absolute row sum, an upper bound for `‖A‖₂` of a symmetric matrix.
pub fn norm_inf(a: &CsrMatrix) -> f64 {
    (0..a.nrows()).map(|i| a.row(i).1.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max)
}

/// Stopping threshold on `‖r‖` for a backward error of `tol`.
fn threshold(tol: f64, anorm: f64, x: &[f64], bnorm: f64) -> f64 {
    tol * (anorm * norm(x) + bnorm)
}

fn residual(a: &CsrMatrix, x: &[f64], b: &[f64], r: &mut [f64]) {
    a.matvec(x, r);
    for (ri, bi) in r.iter_mut().zip(b) {
        *ri = bi - *ri;
    }
}

/// Solves `A x = b` for symmetric positive definite `A`.
///
/// On success `‖Ax − b‖ ≤ tol (‖A‖∞‖x‖ + ‖b‖)`. A zero right-hand side returns the zero
/// vector without iterating.
pub fn solve_spd(a: &CsrMatrix, b: &[f64], options: &SolverOptions) -> Result<(Vec<f64>, SolveReport), SolverError> {
    solve_spd_structured(a, b, options, None)
}

/// [`solve_spd`] with optional knowledge of the matrix structure. When given, the CG path
/// eliminates the local blocks exactly and iterates on the reduced matrix only.
pub fn solve_spd_structured(
    a: &CsrMatrix,
    b: &[f64],
    options: &SolverOptions,
    structure: Option<&SystemStructure>,
) -> Result<(Vec<f64>, SolveReport), SolverError> {
    if a.nrows() != a.ncols() || a.nrows() != b.len() {
        return Err(SolverError::InvalidInput(format!(
            "matrix is {}x{}, right-hand side has length {}",
            a.nrows(),
            a.ncols(),
            b.len()
        )));
    }
    if !(options.tol > 0.0 && options.tol < 1.0) {
        return Err(SolverError::InvalidInput(format!("tolerance {} outside (0, 1)", options.tol)));
    }
    let start = Instant::now();
    let n = b.len();
    let bnorm = norm(b);
    if bnorm == 0.0 {
        let method = if options.method == SolverMethod::Auto { SolverMethod::Cg } else { options.method };
        return Ok((
            vec![0.0; n],
            SolveReport { method, iterations: 0, relative_residual: 0.0, backward_error: 0.0, wall_time: start.elapsed() },
        ));
    }
    let anorm = norm_inf(a);
    let refine_op = refinement_operator(a, structure)?;
    let cg = |options: &SolverOptions| match structure {
        Some(structure) => condensed_cg(a, b, anorm, structure, options),
        None => jacobi_cg(a, b, anorm, options),
    };
    let (x, method, iterations) = match options.method {
        SolverMethod::Cg => {
            let (x, it) = cg(options)?;
            (x, SolverMethod::Cg, it)
        }
        SolverMethod::Cholesky => {
            let factor = CholeskyFactor::new(a, usize::MAX)?.expect("unbounded budget");
            let (x, it) = factor.solve_refined(&refine_op, b);
            (x, SolverMethod::Cholesky, it)
        }
        SolverMethod::Auto => match CholeskyFactor::new(a, options.factor_memory_limit)? {
            Some(factor) => {
                let (x, it) = factor.solve_refined(&refine_op, b);
                (x, SolverMethod::Cholesky, it)
            }
            None => {
                let (x, it) = cg(options)?;
                (x, SolverMethod::Cg, it)
            }
        },
    };
    let mut r = vec![0.0; n];
    residual(a, &x, b, &mut r);
    let rnorm = norm(&r);
    let relative_residual = rnorm / bnorm;
    let backward_error = rnorm / (anorm * norm(&x) + bnorm);
    if !(backward_error <= options.tol) {
        return Err(SolverError::NotConverged { iterations, residual: backward_error, tol: options.tol });
    }
    Ok((x, SolveReport { method, iterations, relative_residual, backward_error, wall_time: start.elapsed() }))
}

/// Preconditioned CG from a zero initial guess. Stops once `‖r‖ ≤ threshold(x)` and the
/// preconditioned residual has dropped by `tol`, `rᵀP⁻¹r ≤ tol² bᵀP⁻¹b`. The second test
/// approximates a relative energy-norm error and guards against stopping early when a
/// large penalty dominates `‖A‖`. Both are confirmed on the true residual.
///
/// With a penalty of order 1e8 rounding keeps the preconditioned residual near `eps·√λ`,
/// which can sit above `tol`. Once the backward error is met, 50 iterations without the
/// preconditioned residual halving also end the iteration.
fn pcg(
    a: &CsrMatrix,
    b: &[f64],
    pre: &Preconditioner,
    tol: f64,
    threshold: impl Fn(&[f64]) -> f64,
    max_iter: usize,
) -> Result<(Vec<f64>, usize), PcgFailure> {
    const PATIENCE: usize = 50;
    let n = b.len();
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let mut z = vec![0.0; n];
    pre.apply(&r, &mut z);
    let mut p = z.clone();
    let mut ap = vec![0.0; n];
    let mut rz = dot(&r, &z);
    let target_rz = tol * tol * rz;
    let mut true_r = vec![0.0; n];
    let mut res = norm(b);
    let mut best_rz = f64::INFINITY;
    let mut since_best = 0;
    for it in 1..=max_iter {
        a.matvec(&p, &mut ap);
        let curvature = dot(&p, &ap);
        if !(curvature > 0.0) {
            return Err(PcgFailure::Breakdown(SolverError::Breakdown { iteration: it, curvature }));
        }
        let alpha = rz / curvature;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        pre.apply(&r, &mut z);
        let mut rz_new = dot(&r, &z);
        let small = norm(&r) <= threshold(&x);
        if small && rz_new < 0.25 * best_rz {
            best_rz = rz_new;
            since_best = 0;
        } else if small {
            since_best += 1;
        }
        if small && (rz_new <= target_rz || since_best >= PATIENCE) {
            // the recursive residual drifts; confirm against the true one and restart from it
            residual(a, &x, b, &mut true_r);
            res = norm(&true_r);
            pre.apply(&true_r, &mut z);
            rz_new = dot(&true_r, &z);
            if res <= threshold(&x) && (rz_new <= target_rz || since_best >= PATIENCE) {
                return Ok((x, it));
            }
            r.copy_from_slice(&true_r);
            since_best = 0;
        }
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    residual(a, &x, b, &mut true_r);
    Err(PcgFailure::Stalled { x, residual: res.min(norm(&true_r)), iterations: max_iter })
}

enum PcgFailure {
    Breakdown(SolverError),
    Stalled { x: Vec<f64>, residual: f64, iterations: usize },
}

/// CG on the full matrix with a Jacobi preconditioner.
fn jacobi_cg(a: &CsrMatrix, b: &[f64], anorm: f64, options: &SolverOptions) -> Result<(Vec<f64>, usize), SolverError> {
    let pre = Preconditioner::jacobi(a)?;
    let bnorm = norm(b);
    let max_iter = options.max_iter.unwrap_or(20 * b.len().max(1));
    pcg(a, b, &pre, options.tol, |x| threshold(options.tol, anorm, x, bnorm), max_iter).map_err(|e| match e {
        PcgFailure::Breakdown(e) => e,
        PcgFailure::Stalled { x, residual, iterations } => SolverError::NotConverged {
            iterations,
            residual: residual / (anorm * norm(&x) + bnorm),
            tol: options.tol,
        },
    })
}

/// Eliminates the local blocks, then runs CG on the reduced matrix. With a penalty term the
/// preconditioner is λ-robust; otherwise Jacobi.
fn condensed_cg(
    a: &CsrMatrix,
    b: &[f64],
    anorm: f64,
    structure: &SystemStructure,
    options: &SolverOptions,
) -> Result<(Vec<f64>, usize), SolverError> {
    let reduced = Condensed::new(a, structure)?;
    let s = &reduced.schur;
    let pre = match &structure.penalty {
        Some(penalty) => Preconditioner::penalty(s, &reduced.skeleton_penalty(penalty)?)?,
        None => Preconditioner::jacobi(s)?,
    };
    let g = reduced.reduce_rhs(b);
    let bnorm = norm(b);
    let max_iter = options.max_iter.unwrap_or(20 * g.len().max(1));
    // ‖y‖ ≤ ‖x‖ and the skeleton residual is the full residual, so this meets the full
    // criterion with room for the rounding of the back substitution
    let target = |y: &[f64]| 0.5 * threshold(options.tol, anorm, y, bnorm);
    match pcg(s, &g, &pre, options.tol, target, max_iter) {
        Ok((y, it)) => Ok((reduced.expand(b, &y), it)),
        Err(PcgFailure::Breakdown(e)) => Err(e),
        Err(PcgFailure::Stalled { x, residual, iterations }) => Err(SolverError::NotConverged {
            iterations,
            residual: residual / (anorm * norm(&x) + bnorm),
            tol: options.tol,
        }),
    }
}

/// Sparse LLᵀ factor of a symmetric CSR matrix.
pub struct CholeskyFactor {
    symbolic: SymbolicCholesky<usize>,
    values: Vec<f64>,
}

impl CholeskyFactor {
    /// Factorizes `a`. Returns `Ok(None)` when the factor would exceed `memory_limit` bytes.
    ///
    /// A symmetric CSR matrix is its own CSC transpose, so its arrays are handed to faer
    /// unchanged; only the lower triangle is read.
    pub fn new(a: &CsrMatrix, memory_limit: usize) -> Result<Option<Self>, SolverError> {
        let n = a.nrows();
        let pattern = SymbolicSparseColMatRef::new_checked(n, n, a.row_ptr(), None, a.col_idx());
        let symbolic = factorize_symbolic_cholesky(pattern, Side::Lower, Default::default(), Default::default())
            .map_err(|e| SolverError::Factorization(format!("{e:?}")))?;
        if symbolic.len_val().saturating_mul(std::mem::size_of::<f64>()) > memory_limit {
            return Ok(None);
        }
        let mut values = vec![0.0; symbolic.len_val()];
        let par = Par::Seq;
        let mat = SparseColMatRef::new(pattern, a.values());
        let mut buf = MemBuffer::new(symbolic.factorize_numeric_llt_scratch::<f64>(par, Default::default()));
        symbolic
            .factorize_numeric_llt(
                &mut values,
                mat,
                Side::Lower,
                Default::default(),
                par,
                MemStack::new(&mut buf),
                Default::default(),
            )
            .map_err(|e| SolverError::Factorization(format!("{e:?}")))?;
        Ok(Some(CholeskyFactor { symbolic, values }))
    }

    /// Number of stored factor entries.
    pub fn factor_len(&self) -> usize {
        self.values.len()
    }

    pub fn solve_in_place(&self, rhs: &mut [f64]) {
        let par = Par::Seq;
        let mut buf = MemBuffer::new(self.symbolic.solve_in_place_scratch::<f64>(1, par));
        let n = rhs.len();
        let mat = MatMut::from_column_major_slice_mut(rhs, n, 1);
        LltRef::new(&self.symbolic, &self.values).solve_in_place_with_conj(Conj::No, mat, par, MemStack::new(&mut buf));
    }

    /// Direct solve followed by iterative refinement with residuals accumulated in double-
    /// double arithmetic. This improves the forward error, not just the backward error:
    /// with `κ(A)·eps < 1` the corrections shrink until they no longer change `x`. Stops
    /// once a correction is below `eps‖x‖` or stops shrinking. Returns the step count.
    pub fn solve_refined(&self, op: &RefinementOperator<'_>, b: &[f64]) -> (Vec<f64>, usize) {
        const MAX_STEPS: usize = 10;
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        let mut d = vec![0.0; b.len()];
        let mut last = f64::INFINITY;
        let mut steps = 0;
        while steps < MAX_STEPS {
            op.residual(&x, b, &mut d);
            self.solve_in_place(&mut d);
            let size = norm(&d);
            if !(size < 0.5 * last) {
                break;
            }
            for (x, d) in x.iter_mut().zip(&d) {
                *x += d;
            }
            steps += 1;
            last = size;
            if size <= f64::EPSILON * norm(&x) {
                break;
            }
        }
        (x, steps)
    }
}

/// The operator whose residual drives iterative refinement.
pub enum RefinementOperator<'a> {
    Assembled(&'a CsrMatrix),
    /// `base + Bᵀ diag(w) B`, evaluated term by term.
    Split { base: &'a CsrMatrix, penalty: &'a PenaltyTerm },
}

fn refinement_operator<'a>(
    a: &'a CsrMatrix,
    structure: Option<&'a SystemStructure>,
) -> Result<RefinementOperator<'a>, SolverError> {
    match structure {
        Some(SystemStructure { base: Some(base), penalty: Some(penalty), .. }) => {
            let n = a.nrows();
            if base.nrows() != n || base.ncols() != n || penalty.rows.ncols() != n || penalty.weights.len() != penalty.rows.nrows() {
                return Err(SolverError::InvalidInput("base or penalty dimensions do not match the matrix".into()));
            }
            Ok(RefinementOperator::Split { base, penalty })
        }
        _ => Ok(RefinementOperator::Assembled(a)),
    }
}

/// `(hi, lo) + p·q` in double-double, using an error-free product and Knuth's two-sum.
fn accumulate(hi: &mut f64, lo: &mut f64, p: f64, q: f64) {
    let prod = p * q;
    let prod_err = p.mul_add(q, -prod);
    let s = *hi + prod;
    let bb = s - *hi;
    let err = (*hi - (s - bb)) + (prod - bb);
    *hi = s;
    *lo += err + prod_err;
}

impl RefinementOperator<'_> {
    /// `r = b − Ax`, each row accumulated in double-double and rounded once.
    pub fn residual(&self, x: &[f64], b: &[f64], r: &mut [f64]) {
        let (matrix, correction) = match self {
            RefinementOperator::Assembled(a) => (*a, None),
            RefinementOperator::Split { base, penalty } => {
                // Bx is small where the penalty is large, so its rounding stays harmless
                let mut t = vec![0.0; penalty.rows.nrows()];
                for (k, tk) in t.iter_mut().enumerate() {
                    let (cols, vals) = penalty.rows.row(k);
                    let (mut hi, mut lo) = (0.0, 0.0);
                    for (&j, &v) in cols.iter().zip(vals) {
                        accumulate(&mut hi, &mut lo, v, x[j]);
                    }
                    *tk = penalty.weights[k] * (hi + lo);
                }
                let mut u = vec![0.0; x.len()];
                penalty.rows.matvec_transpose(&t, &mut u);
                (*base, Some(u))
            }
        };
        for (i, ri) in r.iter_mut().enumerate() {
            let (cols, vals) = matrix.row(i);
            let (mut hi, mut lo) = (b[i], 0.0);
            if let Some(u) = &correction {
                accumulate(&mut hi, &mut lo, -1.0, u[i]);
            }
            for (&j, &v) in cols.iter().zip(vals) {
                accumulate(&mut hi, &mut lo, -v, x[j]);
            }
            *ri = hi + lo;
        }
    }
}
