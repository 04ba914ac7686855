//! Dense linear-algebra substrate.
//!
//! Matrices are `nalgebra` dense matrices. Whenever a q×q matrix has to be
//! viewed as a vector in ℝ^{q²} (covariances, operator matrices, the stacked
//! storage of a [`LinearMap`]) the vectorization is column stacking, which is
//! also nalgebra's storage order: `vec(X)[i + j*q] = X[(i, j)]`. With this
//! convention `vec(A Z B) = (Bᵀ ⊗ A) vec(Z)`.

use nalgebra::{DMatrix, DVector, DVectorView};

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Relative level below which `tangent_space_of` treats σ_r as zero.
const TANGENT_RANK_CUTOFF: f64 = 1e-10;

pub(crate) fn ensure_finite(a: &Matrix, what: &'static str) -> Result<()> {
    if a.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

pub(crate) fn ensure_finite_vec(v: &Vector, what: &'static str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

/// Column-stacking vectorization.
pub fn vectorize(x: &Matrix) -> Vector {
    Vector::from_column_slice(x.as_slice())
}

/// Inverse of [`vectorize`] for square matrices.
pub fn unvectorize(v: &[f64], q: usize) -> Matrix {
    Matrix::from_column_slice(q, q, v)
}

/// Frobenius inner product ⟨A, B⟩ = trace(AᵀB).
pub fn frobenius_inner(a: &Matrix, b: &Matrix) -> f64 {
    a.dot(b)
}

/// Largest singular value.
pub fn spectral_norm(a: &Matrix) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.clone()
        .svd_unordered(false, false)
        .singular_values
        .iter()
        .fold(0.0_f64, |m, &s| m.max(s))
}

/// Thin singular value decomposition `A = left · diag(singulars) · rightᵀ`.
#[derive(Debug, Clone)]
pub struct SvdResult {
    /// m×k, orthonormal columns.
    pub left: Matrix,
    /// Nonincreasing, nonnegative.
    pub singulars: Vector,
    /// n×k, orthonormal columns.
    pub right: Matrix,
}

impl SvdResult {
    pub fn rank_count(&self) -> usize {
        self.singulars.len()
    }

    /// `U_r Σ_r V_rᵀ` for the leading `r` triplets.
    pub fn reconstruct(&self, r: usize) -> Matrix {
        let r = r.min(self.singulars.len());
        let u = self.left.columns(0, r);
        let v = self.right.columns(0, r);
        let mut us = u.into_owned();
        for (k, mut col) in us.column_iter_mut().enumerate() {
            col *= self.singulars[k];
        }
        us * v.transpose()
    }
}

pub fn svd(a: &Matrix) -> Result<SvdResult> {
    ensure_finite(a, "svd input")?;
    let dec = a.clone().svd(true, true);
    let left = dec.u.expect("left singular vectors requested");
    let right = dec.v_t.expect("right singular vectors requested").transpose();
    Ok(SvdResult {
        left,
        singulars: dec.singular_values,
        right,
    })
}

/// Best rank-`r` approximation in Frobenius norm (Eckart–Young).
pub fn truncate_rank(a: &Matrix, r: usize) -> Result<Matrix> {
    let max_rank = a.nrows().min(a.ncols());
    if r == 0 || r > max_rank {
        return Err(Error::InvalidArgument(format!(
            "rank {r} outside 1..={max_rank}"
        )));
    }
    Ok(svd(a)?.reconstruct(r))
}

/// Tangent space T(X) = {XA + BX} of the rank-r variety at X, stored through
/// orthonormal bases of the column and row spaces of X.
#[derive(Debug, Clone)]
pub struct TangentSpace {
    pub base_left: Matrix,
    pub base_right: Matrix,
    pub rank: usize,
}

impl TangentSpace {
    pub fn dim(&self) -> usize {
        self.base_left.nrows()
    }

    /// Matrix of the projector in the column-stacking basis (q²×q²).
    pub fn projector_matrix(&self) -> Matrix {
        let q = self.dim();
        let eye = Matrix::identity(q, q);
        let pu_perp = &eye - &self.base_left * self.base_left.transpose();
        let pv_perp = &eye - &self.base_right * self.base_right.transpose();
        // vec(P_U⊥ Z P_V⊥) = (P_V⊥ ⊗ P_U⊥) vec(Z); both projectors are symmetric.
        Matrix::identity(q * q, q * q) - pv_perp.kronecker(&pu_perp)
    }
}

pub fn tangent_space_of(x: &Matrix, r: usize) -> Result<TangentSpace> {
    if !x.is_square() {
        return Err(Error::shape("tangent_space_of", "square", format!("{}x{}", x.nrows(), x.ncols())));
    }
    let q = x.nrows();
    if r == 0 || r > q {
        return Err(Error::InvalidArgument(format!("rank {r} outside 1..={q}")));
    }
    let dec = svd(x)?;
    let top = dec.singulars[0];
    let sigma = dec.singulars[r - 1];
    if !(top > 0.0) || sigma <= TANGENT_RANK_CUTOFF * top {
        return Err(Error::DegenerateTangent { rank: r, sigma, top });
    }
    Ok(TangentSpace {
        base_left: dec.left.columns(0, r).into_owned(),
        base_right: dec.right.columns(0, r).into_owned(),
        rank: r,
    })
}

/// `Z − P_{U⊥} Z P_{V⊥}`.
pub fn tangent_project(t: &TangentSpace, z: &Matrix) -> Result<Matrix> {
    let q = t.dim();
    if z.shape() != (q, q) {
        return Err(Error::shape("tangent_project", format!("{q}x{q}"), format!("{}x{}", z.nrows(), z.ncols())));
    }
    let u = &t.base_left;
    let v = &t.base_right;
    let left_perp = z - u * (u.transpose() * z);
    let both_perp = &left_perp - (&left_perp * v) * v.transpose();
    Ok(z - both_perp)
}

/// A linear map ℝ^{q×q} → ℝ^d, `X ↦ (⟨L_1, X⟩, …, ⟨L_d, X⟩)`.
///
/// The components are kept stacked in a q²×d matrix whose i-th column is
/// `vec(L_i)`, so applying the map is one matrix–vector product.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearMap {
    q: usize,
    stacked: Matrix,
}

impl LinearMap {
    pub fn from_components(components: &[Matrix]) -> Result<Self> {
        let first = components.first().ok_or_else(|| {
            Error::InvalidArgument("a linear map needs at least one component".into())
        })?;
        let q = first.nrows();
        if q == 0 {
            return Err(Error::InvalidArgument("q must be at least 1".into()));
        }
        let mut stacked = Matrix::zeros(q * q, components.len());
        for (i, c) in components.iter().enumerate() {
            if c.shape() != (q, q) {
                return Err(Error::shape(
                    "LinearMap::from_components",
                    format!("{q}x{q}"),
                    format!("{}x{} at component {i}", c.nrows(), c.ncols()),
                ));
            }
            ensure_finite(c, "map component")?;
            stacked.column_mut(i).copy_from_slice(c.as_slice());
        }
        Ok(Self { q, stacked })
    }

    /// Builds a map from its q²×d stacked representation.
    pub fn from_stacked(q: usize, stacked: Matrix) -> Result<Self> {
        if q == 0 || stacked.ncols() == 0 {
            return Err(Error::InvalidArgument("q and d must be at least 1".into()));
        }
        if stacked.nrows() != q * q {
            return Err(Error::shape("LinearMap::from_stacked", q * q, stacked.nrows()));
        }
        ensure_finite(&stacked, "map components")?;
        Ok(Self { q, stacked })
    }

    pub fn zeros(q: usize, d: usize) -> Self {
        assert!(q >= 1 && d >= 1, "q and d must be at least 1");
        Self {
            q,
            stacked: Matrix::zeros(q * q, d),
        }
    }

    /// The map `X ↦ vec(X)`, whose components are the canonical basis
    /// matrices in column-stacking order (d = q²).
    pub fn vectorization(q: usize) -> Self {
        assert!(q >= 1, "q must be at least 1");
        Self {
            q,
            stacked: Matrix::identity(q * q, q * q),
        }
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn d(&self) -> usize {
        self.stacked.ncols()
    }

    pub fn stacked(&self) -> &Matrix {
        &self.stacked
    }

    pub fn into_stacked(self) -> Matrix {
        self.stacked
    }

    pub fn component(&self, i: usize) -> Matrix {
        unvectorize(self.stacked.column(i).as_slice(), self.q)
    }

    pub fn components(&self) -> Vec<Matrix> {
        (0..self.d()).map(|i| self.component(i)).collect()
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            q: self.q,
            stacked: &self.stacked * c,
        }
    }

    /// Componentwise sum `L + c·E`.
    pub fn add_scaled(&self, other: &LinearMap, c: f64) -> Result<Self> {
        self.same_shape(other, "LinearMap::add_scaled")?;
        Ok(Self {
            q: self.q,
            stacked: &self.stacked + &other.stacked * c,
        })
    }

    /// The components side by side, `[L_1 | L_2 | … | L_d]` (q×qd). Because
    /// of column stacking this is a reinterpretation of the stored buffer.
    pub fn horizontal_blocks(&self) -> Matrix {
        Matrix::from_column_slice(self.q, self.q * self.d(), self.stacked.as_slice())
    }

    fn from_horizontal_blocks(q: usize, blocks: Matrix) -> Self {
        let d = blocks.ncols() / q;
        Self {
            q,
            stacked: Matrix::from_column_slice(q * q, d, blocks.as_slice()),
        }
    }

    /// Map with components `left · L_i · right`.
    pub fn conjugated(&self, left: &Matrix, right: &Matrix) -> Self {
        let q = self.q;
        let mut blocks = left * self.horizontal_blocks();
        for i in 0..self.d() {
            let prod = blocks.columns(i * q, q) * right;
            blocks.columns_mut(i * q, q).copy_from(&prod);
        }
        Self::from_horizontal_blocks(q, blocks)
    }

    /// The composition `X ↦ L(a X b)`; its components are `aᵀ L_i bᵀ`.
    /// For a = P₂, b = P₁ᵀ this is L∘(P₁⊗P₂) in Kronecker notation.
    pub fn precompose(&self, a: &Matrix, b: &Matrix) -> Self {
        self.conjugated(&a.transpose(), &b.transpose())
    }

    /// Largest componentwise Frobenius distance `max_i ‖L_i − M_i‖_F`.
    pub fn max_component_distance(&self, other: &LinearMap) -> Result<f64> {
        self.same_shape(other, "LinearMap::max_component_distance")?;
        let diff = &self.stacked - &other.stacked;
        Ok(diff
            .column_iter()
            .map(|c| c.norm())
            .fold(0.0_f64, f64::max))
    }

    /// Frobenius norm of the difference over all components.
    pub fn frobenius_distance(&self, other: &LinearMap) -> Result<f64> {
        self.same_shape(other, "LinearMap::frobenius_distance")?;
        Ok((&self.stacked - &other.stacked).norm())
    }

    /// Operator norm ‖L‖₂ of the map ℝ^{q×q} → ℝ^d.
    pub fn spectral_norm(&self) -> f64 {
        spectral_norm(&self.stacked)
    }

    /// `(1/q) Σ L_i Z L_iᵀ` when `transpose` is false, `(1/q) Σ L_iᵀ Z L_i`
    /// otherwise.
    pub(crate) fn sandwich_sum(&self, z: &Matrix, transpose: bool) -> Matrix {
        let q = self.q;
        let mut acc = Matrix::zeros(q, q);
        for i in 0..self.d() {
            let li = self.component(i);
            if transpose {
                acc += li.transpose() * z * &li;
            } else {
                acc += &li * z * li.transpose();
            }
        }
        acc
    }

    /// `Σ L_i L_iᵀ` (transpose false) or `Σ L_iᵀ L_i` (transpose true).
    pub(crate) fn gram_sum(&self, transpose: bool) -> Matrix {
        let q = self.q;
        let blocks = self.horizontal_blocks();
        if !transpose {
            return &blocks * blocks.transpose();
        }
        let mut acc = Matrix::zeros(q, q);
        for i in 0..self.d() {
            let li = blocks.columns(i * q, q);
            acc.gemm_tr(1.0, &li, &li, 1.0);
        }
        acc
    }

    fn same_shape(&self, other: &LinearMap, op: &'static str) -> Result<()> {
        if self.q != other.q || self.d() != other.d() {
            return Err(Error::shape(
                op,
                format!("q={}, d={}", self.q, self.d()),
                format!("q={}, d={}", other.q, other.d()),
            ));
        }
        Ok(())
    }
}

/// Component i equals ⟨L_i, X⟩.
pub fn apply_map(l: &LinearMap, x: &Matrix) -> Result<Vector> {
    let q = l.q();
    if x.shape() != (q, q) {
        return Err(Error::shape("apply_map", format!("{q}x{q}"), format!("{}x{}", x.nrows(), x.ncols())));
    }
    Ok(apply_vec(l, x.as_slice()))
}

pub(crate) fn apply_vec(l: &LinearMap, x: &[f64]) -> Vector {
    l.stacked().tr_mul(&DVectorView::from_slice(x, x.len()))
}

/// `Σ_i v_i L_i`.
pub fn adjoint_map(l: &LinearMap, v: &Vector) -> Result<Matrix> {
    if v.len() != l.d() {
        return Err(Error::shape("adjoint_map", l.d(), v.len()));
    }
    let flat = l.stacked() * v;
    Ok(unvectorize(flat.as_slice(), l.q()))
}

/// The n columns `vec(X^{(j)})` side by side (q²×n).
pub fn factor_matrix(xs: &[Matrix]) -> Result<Matrix> {
    let first = xs.first().ok_or(Error::EmptySet)?;
    let (rows, cols) = first.shape();
    let mut out = Matrix::zeros(rows * cols, xs.len());
    for (j, x) in xs.iter().enumerate() {
        if x.shape() != (rows, cols) {
            return Err(Error::shape(
                "factor set",
                format!("{rows}x{cols}"),
                format!("{}x{} at index {j}", x.nrows(), x.ncols()),
            ));
        }
        out.column_mut(j).copy_from_slice(x.as_slice());
    }
    Ok(out)
}

/// Matrix of `(1/n) Σ X^{(j)} ⊠ X^{(j)}` in the column-stacking basis,
/// i.e. `(1/n) Σ vec(X^{(j)}) vec(X^{(j)})ᵀ`.
pub fn covariance(xs: &[Matrix]) -> Result<Matrix> {
    let f = factor_matrix(xs)?;
    let n = xs.len() as f64;
    let mut cov = &f * f.transpose();
    cov /= n;
    // exact symmetry regardless of the product kernel's summation order
    let sym = (&cov + cov.transpose()) * 0.5;
    Ok(sym)
}

/// Eigenvalues of a symmetric matrix, ascending.
pub fn symmetric_eigenvalues(a: &Matrix) -> Vector {
    let mut vals: Vec<f64> = a.clone().symmetric_eigenvalues().iter().copied().collect();
    vals.sort_by(|x, y| x.total_cmp(y));
    Vector::from_vec(vals)
}
