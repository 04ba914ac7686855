//! Sinkhorn scaling of matrices and Operator Sinkhorn normalization of
//! linear maps.
//!
//! A map is *normalized* when `Σ L_i L_iᵀ = Σ L_iᵀ L_i = q I`. Every generic
//! map has a unique normalized representative obtained by composing it with a
//! positive-definite rank-preserver `X ↦ P₂ X P₁`; the Operator Sinkhorn
//! iteration finds it by alternately rescaling rows and columns.

use nalgebra::SymmetricEigen;

use crate::error::{Error, Result};
use crate::linalg::{ensure_finite, LinearMap, Matrix, Vector};

pub const DEFAULT_TOL: f64 = 1e-9;
pub const DEFAULT_MAX_ITER: usize = 2000;

/// Condition number of R or C above which the map counts as degenerate.
const MAX_CONDITION: f64 = 1e12;

#[derive(Debug, Clone)]
pub struct ScalingResult {
    pub row_scale: Vector,
    pub col_scale: Vector,
    pub iterations: usize,
    /// Largest deviation of a row or column sum of `D₂ M D₁` from 1.
    pub residual: f64,
    pub converged: bool,
}

impl ScalingResult {
    /// `D₂ M D₁`.
    pub fn apply(&self, m: &Matrix) -> Matrix {
        Matrix::from_fn(m.nrows(), m.ncols(), |i, j| {
            self.row_scale[i] * m[(i, j)] * self.col_scale[j]
        })
    }
}

fn sum_deviation(m: &Matrix, rows: &Vector, cols: &Vector) -> f64 {
    let q = m.nrows();
    let mut worst = 0.0_f64;
    for i in 0..q {
        let s: f64 = (0..q).map(|j| rows[i] * m[(i, j)] * cols[j]).sum();
        worst = worst.max((s - 1.0).abs());
    }
    for j in 0..q {
        let s: f64 = (0..q).map(|i| rows[i] * m[(i, j)] * cols[j]).sum();
        worst = worst.max((s - 1.0).abs());
    }
    worst
}

/// Classical Sinkhorn scaling: finds positive diagonals with `D₂ M D₁`
/// doubly stochastic. Each iteration rescales rows first, then columns.
pub fn matrix_sinkhorn(m: &Matrix, tol: f64, max_iter: usize) -> Result<ScalingResult> {
    if !m.is_square() {
        return Err(Error::shape("matrix_sinkhorn", "square", format!("{}x{}", m.nrows(), m.ncols())));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tolerance must be positive, got {tol}")));
    }
    ensure_finite(m, "matrix_sinkhorn input")?;
    if let Some(((i, j), v)) = m.iter().enumerate().map(|(k, v)| ((k % m.nrows(), k / m.nrows()), v)).find(|(_, v)| **v <= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "entry ({i}, {j}) = {v} is not strictly positive; a scaling may not exist"
        )));
    }
    let q = m.nrows();
    let mut rows = Vector::from_element(q, 1.0);
    let mut cols = Vector::from_element(q, 1.0);
    let mut residual = sum_deviation(m, &rows, &cols);
    let mut iterations = 0;
    while residual > tol && iterations < max_iter {
        for i in 0..q {
            let s: f64 = (0..q).map(|j| m[(i, j)] * cols[j]).sum();
            rows[i] = 1.0 / s;
        }
        for j in 0..q {
            let s: f64 = (0..q).map(|i| rows[i] * m[(i, j)]).sum();
            cols[j] = 1.0 / s;
        }
        iterations += 1;
        residual = sum_deviation(m, &rows, &cols);
    }
    Ok(ScalingResult {
        row_scale: rows,
        col_scale: cols,
        iterations,
        residual,
        converged: residual <= tol,
    })
}

fn check_square_input(l: &LinearMap, z: &Matrix, op: &'static str) -> Result<()> {
    let q = l.q();
    if z.shape() != (q, q) {
        return Err(Error::shape(op, format!("{q}x{q}"), format!("{}x{}", z.nrows(), z.ncols())));
    }
    Ok(())
}

/// `T_L(Z) = (1/q) Σ L_i Z L_iᵀ`.
pub fn t_operator_apply(l: &LinearMap, z: &Matrix) -> Result<Matrix> {
    check_square_input(l, z, "t_operator_apply")?;
    Ok(l.sandwich_sum(z, false) / l.q() as f64)
}

/// `T_L'(Z) = (1/q) Σ L_iᵀ Z L_i`.
pub fn t_operator_adjoint_apply(l: &LinearMap, z: &Matrix) -> Result<Matrix> {
    check_square_input(l, z, "t_operator_adjoint_apply")?;
    Ok(l.sandwich_sum(z, true) / l.q() as f64)
}

fn symmetric_deviation_norm(a: &Matrix) -> f64 {
    // a is symmetric up to rounding; its spectral norm is the largest |eigenvalue|
    let sym = (a + a.transpose()) * 0.5;
    sym.symmetric_eigenvalues()
        .iter()
        .fold(0.0_f64, |m, v| m.max(v.abs()))
}

/// The nearly-normalized parameter
/// `ε(L) = max(‖T_L(I) − I‖₂, ‖T_L'(I) − I‖₂)`.
pub fn normalization_residual(l: &LinearMap) -> f64 {
    let q = l.q();
    let eye = Matrix::identity(q, q);
    let row = l.gram_sum(false) / q as f64 - &eye;
    let col = l.gram_sum(true) / q as f64 - &eye;
    symmetric_deviation_norm(&row).max(symmetric_deviation_norm(&col))
}

#[derive(Debug, Clone)]
pub struct NormalizationReport {
    pub iterations: usize,
    /// `normalization_residual` of the returned map.
    pub residual: f64,
    pub converged: bool,
    /// Accumulated left factor A: output components are `A L_i B`.
    pub left: Matrix,
    /// Accumulated right factor B.
    pub right: Matrix,
}

/// `√q · S^{-1/2}` for the symmetric positive-definite S.
fn scaled_inverse_sqrt(s: &Matrix, which: &'static str) -> Result<Matrix> {
    let q = s.nrows();
    let sym = (s + s.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let max = eig.eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    if !(max > 0.0) || !max.is_finite() || min <= max / MAX_CONDITION {
        let condition = if min > 0.0 { max / min } else { f64::INFINITY };
        return Err(Error::Singular { which, condition });
    }
    let scale = (q as f64).sqrt();
    let d = eig.eigenvalues.map(|v| scale / v.sqrt());
    let v = &eig.eigenvectors;
    Ok(v * Matrix::from_diagonal(&d) * v.transpose())
}

/// Steps 1–2: `L_i ← √q R^{-1/2} L_i` with `R = Σ L_i L_iᵀ`.
fn row_step(l: &LinearMap) -> Result<(LinearMap, Matrix)> {
    let factor = scaled_inverse_sqrt(&l.gram_sum(false), "R = sum L_i L_i'")?;
    let eye = Matrix::identity(l.q(), l.q());
    Ok((l.conjugated(&factor, &eye), factor))
}

/// Steps 3–4: `L_i ← √q L_i C^{-1/2}` with `C = Σ L_iᵀ L_i`.
fn col_step(l: &LinearMap) -> Result<(LinearMap, Matrix)> {
    let factor = scaled_inverse_sqrt(&l.gram_sum(true), "C = sum L_i' L_i")?;
    let eye = Matrix::identity(l.q(), l.q());
    Ok((l.conjugated(&eye, &factor), factor))
}

/// Operator Sinkhorn iteration. Runs at least one full iteration, then
/// repeats until `normalization_residual ≤ tol` or `max_iter` iterations.
pub fn operator_sinkhorn_normalize(
    l: &LinearMap,
    tol: f64,
    max_iter: usize,
) -> Result<(LinearMap, NormalizationReport)> {
    if l.d() < 2 {
        return Err(Error::InvalidArgument(format!(
            "normalization needs d >= 2, got d = {}",
            l.d()
        )));
    }
    if !(tol > 0.0) || max_iter == 0 {
        return Err(Error::InvalidArgument("tolerance and iteration cap must be positive".into()));
    }
    let q = l.q();
    let mut current = l.clone();
    let mut left = Matrix::identity(q, q);
    let mut right = Matrix::identity(q, q);
    let mut iterations = 0;
    let mut residual;
    loop {
        let (after_row, a) = row_step(&current)?;
        let (after_col, b) = col_step(&after_row)?;
        current = after_col;
        left = a * left;
        right *= b;
        iterations += 1;
        residual = normalization_residual(&current);
        if residual <= tol || iterations >= max_iter {
            break;
        }
    }
    log::debug!("operator sinkhorn: {iterations} iterations, residual {residual:e}");
    Ok((
        current,
        NormalizationReport {
            iterations,
            residual,
            converged: residual <= tol,
            left,
            right,
        },
    ))
}

/// [`operator_sinkhorn_normalize`] with the default tolerance and cap.
pub fn normalize(l: &LinearMap) -> Result<(LinearMap, NormalizationReport)> {
    operator_sinkhorn_normalize(l, DEFAULT_TOL, DEFAULT_MAX_ITER)
}

/// Outcome of a local-stability check of a scaling problem.
#[derive(Debug, Clone, Copy)]
pub struct StabilityCheck {
    pub epsilon: f64,
    /// `96 √q ε`.
    pub bound: f64,
    /// Measured deviation of the scaling from the identity.
    pub lhs: f64,
}

impl StabilityCheck {
    pub fn holds(&self) -> bool {
        self.lhs <= self.bound
    }
}

/// Local stability of matrix scaling for nearly doubly stochastic `M`.
///
/// Requires `|M_ij − 1/q| ≤ 1/(2q)` and
/// `ε = max(‖Me − e‖_∞, ‖Mᵀe − e‖_∞) ≤ 1/(48√q)`. Returns ε, the bound
/// `96√q ε` and `lhs = ‖D₂ ⊗ D₁ − I‖₂ = max_ij |d₂ᵢ d₁ⱼ − 1|`.
pub fn stability_check(m: &Matrix) -> Result<StabilityCheck> {
    if !m.is_square() {
        return Err(Error::shape("stability_check", "square", format!("{}x{}", m.nrows(), m.ncols())));
    }
    ensure_finite(m, "stability_check input")?;
    let q = m.nrows();
    let qf = q as f64;
    for j in 0..q {
        for i in 0..q {
            let dev = (m[(i, j)] - 1.0 / qf).abs();
            if dev > 1.0 / (2.0 * qf) {
                return Err(Error::Hypothesis(format!(
                    "entrywise bound |M_ij - 1/q| <= 1/(2q) fails at ({i}, {j}): deviation {dev:e}"
                )));
            }
        }
    }
    let row_dev = m.row_iter().map(|r| (r.sum() - 1.0).abs()).fold(0.0, f64::max);
    let col_dev = m.column_iter().map(|c| (c.sum() - 1.0).abs()).fold(0.0, f64::max);
    let epsilon = row_dev.max(col_dev);
    let limit = 1.0 / (48.0 * qf.sqrt());
    if epsilon > limit {
        return Err(Error::Hypothesis(format!(
            "near-stochasticity epsilon = {epsilon:e} exceeds 1/(48 sqrt q) = {limit:e}"
        )));
    }
    let scaling = matrix_sinkhorn(m, 1e-14, 100_000)?;
    let mut lhs = 0.0_f64;
    for &r in scaling.row_scale.iter() {
        for &c in scaling.col_scale.iter() {
            lhs = lhs.max((r * c - 1.0).abs());
        }
    }
    Ok(StabilityCheck {
        epsilon,
        bound: 96.0 * qf.sqrt() * epsilon,
        lhs,
    })
}

/// Operator analog of [`stability_check`] on a nearly normalized map.
///
/// Normalizes `l` and measures `‖N₂ ⊗ N₁ − I‖₂` for the positive-definite
/// parts of the accumulated factors, i.e. `max_ij |σᵢ(A) σⱼ(B) − 1|`
/// (orthogonal parts of A and B do not affect normalization). Only the
/// `ε(L) ≤ 1/(48√q)` hypothesis is checked; the entrywise one is a restricted
/// isometry condition that cannot be certified cheaply.
pub fn operator_stability_check(l: &LinearMap) -> Result<StabilityCheck> {
    let q = l.q() as f64;
    let epsilon = normalization_residual(l);
    let limit = 1.0 / (48.0 * q.sqrt());
    if epsilon > limit {
        return Err(Error::Hypothesis(format!(
            "nearly-normalized parameter {epsilon:e} exceeds 1/(48 sqrt q) = {limit:e}"
        )));
    }
    let (_, report) = operator_sinkhorn_normalize(l, 1e-13, 10_000)?;
    let sa = report.left.clone().singular_values();
    let sb = report.right.clone().singular_values();
    let mut lhs = 0.0_f64;
    for &a in sa.iter() {
        for &b in sb.iter() {
            lhs = lhs.max((a * b - 1.0).abs());
        }
    }
    Ok(StabilityCheck {
        epsilon,
        bound: 96.0 * q.sqrt() * epsilon,
        lhs,
    })
}
