//! Random instances and the isotropy diagnostics Λ, Δ, Ω and δ̂_k.

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal, Uniform};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{
    apply_map, covariance, svd, symmetric_eigenvalues, tangent_space_of, vectorize, LinearMap, Matrix, Vector,
};
use crate::rng::{substream, Rng};

/// Largest q for which [`omega`] materializes its q⁴×q⁴ operator.
pub const OMEGA_Q_LIMIT: usize = 6;

/// Relative singular-value cutoff used to read off the rank of a sample.
const RANK_CUTOFF: f64 = 1e-10;

/// Matrix with i.i.d. N(0, 1) entries, filled column by column.
pub fn gen_gaussian_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut rng = substream(seed, "generation", 0);
    Matrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

/// Map with i.i.d. N(0, 1/d) component entries.
pub fn gen_gaussian_map(q: usize, d: usize, seed: u64) -> LinearMap {
    let stacked = gen_gaussian_matrix(q * q, d, seed) * (1.0 / (d as f64).sqrt());
    LinearMap::from_stacked(q, stacked).expect("stacked shape is q^2 x d by construction")
}

/// Low-rank samples `U diag(s) Vᵀ` with Haar-distributed orthonormal U, V
/// and singular values uniform on `[s_min, s_max]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HaarLowRankSpec {
    pub q: usize,
    pub r: usize,
    pub s_min: f64,
    pub s_max: f64,
    pub n: usize,
    pub seed: u64,
}

impl HaarLowRankSpec {
    pub fn validate(&self) -> Result<()> {
        if self.q == 0 || self.r == 0 || self.n == 0 {
            return Err(Error::InvalidArgument("q, r and n must be positive".into()));
        }
        if self.r >= self.q {
            return Err(Error::InvalidArgument(format!("rank {} must be below q = {}", self.r, self.q)));
        }
        if !(self.s_min > 0.0 && self.s_min <= self.s_max && self.s_max.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "need 0 < s_min <= s_max, got [{}, {}]",
                self.s_min, self.s_max
            )));
        }
        Ok(())
    }
}

/// q×r matrix with Haar-distributed orthonormal columns: Q from the QR
/// decomposition of a Gaussian matrix, with columns flipped so that R has a
/// nonnegative diagonal.
pub fn haar_orthonormal(q: usize, r: usize, rng: &mut Rng) -> Matrix {
    let g = Matrix::from_fn(q, r, |_, _| rng.sample(StandardNormal));
    let qr = g.qr();
    let mut basis = qr.q();
    let rdiag = qr.r().diagonal();
    for (j, mut col) in basis.column_iter_mut().enumerate() {
        if rdiag[j] < 0.0 {
            col.neg_mut();
        }
    }
    basis
}

pub fn gen_haar_lowrank(spec: &HaarLowRankSpec) -> Result<Vec<Matrix>> {
    spec.validate()?;
    let HaarLowRankSpec { q, r, s_min, s_max, seed, .. } = *spec;
    let xs = (0..spec.n)
        .into_par_iter()
        .map(|j| {
            let mut rng = substream(seed, "haar-sample", j as u64);
            let u = haar_orthonormal(q, r, &mut rng);
            let v = haar_orthonormal(q, r, &mut rng);
            let s = if s_min == s_max {
                Vector::from_element(r, s_min)
            } else {
                let dist = Uniform::new_inclusive(s_min, s_max).expect("validated bounds");
                Vector::from_fn(r, |_, _| dist.sample(&mut rng))
            };
            u * Matrix::from_diagonal(&s) * v.transpose()
        })
        .collect();
    Ok(xs)
}

/// Data matrix whose j-th column is `L(X_j)`.
pub fn gen_dataset(l: &LinearMap, xs: &[Matrix]) -> Result<Matrix> {
    let mut y = Matrix::zeros(l.d(), xs.len());
    for (j, x) in xs.iter().enumerate() {
        let col = apply_map(l, x).map_err(|e| e.at_column(j))?;
        y.set_column(j, &col);
    }
    Ok(y)
}

/// `(Λ, Δ)`: the midpoint and half-width of the spectrum of the covariance
/// `(1/n) Σ vec(X_j) vec(X_j)ᵀ`.
///
/// Also checks that `s_min/q² − Δ ≤ Λ ≤ s_max/q² + Δ`, where `s_min`, `s_max`
/// are the extreme squared Frobenius norms; this holds for every set since
/// `tr Σ / q²` lies between the extreme eigenvalues.
pub fn covariance_stats(xs: &[Matrix]) -> Result<(f64, f64)> {
    let cov = covariance(xs)?;
    let eig = symmetric_eigenvalues(&cov);
    let lo = eig[0];
    let hi = eig[eig.len() - 1];
    let lambda = 0.5 * (hi + lo);
    let delta = 0.5 * (hi - lo);

    let q2 = cov.nrows() as f64;
    let (s_min, s_max) = xs.iter().map(|x| x.norm_squared()).fold((f64::INFINITY, 0.0_f64), |(a, b), s| (a.min(s), b.max(s)));
    let slack = 1e-10 * (s_max / q2).max(f64::MIN_POSITIVE);
    if s_min / q2 - delta > lambda + slack || lambda > s_max / q2 + delta + slack {
        return Err(Error::Hypothesis(format!(
            "covariance bracket failed: lambda {lambda:e}, delta {delta:e}, s in [{s_min:e}, {s_max:e}]"
        )));
    }
    Ok((lambda, delta))
}

/// Orthonormal basis (columns, q⁴ rows) of the subspace of q²×q² matrices
/// spanned by `I⊗W₁ + W₂⊗I`; its dimension is `2q² − 1`.
pub fn rank_preserver_tangent_basis(q: usize) -> Result<Matrix> {
    let q2 = q * q;
    let eye = Matrix::identity(q, q);
    let mut gens = Matrix::zeros(q2 * q2, 2 * q2);
    for k in 0..q2 {
        let mut e = Matrix::zeros(q, q);
        e[k] = 1.0;
        gens.set_column(k, &vectorize(&eye.kronecker(&e)));
        gens.set_column(q2 + k, &vectorize(&e.kronecker(&eye)));
    }
    let dec = svd(&gens)?;
    let top = dec.singulars[0];
    let rank = dec.singulars.iter().filter(|&&s| s > RANK_CUTOFF * top).count();
    Ok(dec.left.columns(0, rank).into_owned())
}

fn numerical_rank(x: &Matrix) -> Result<usize> {
    let sv = svd(x)?.singulars;
    let top = sv[0];
    if !(top > 0.0) {
        return Ok(0);
    }
    Ok(sv.iter().filter(|&&s| s > RANK_CUTOFF * top).count())
}

/// Matrix (q⁴×q⁴, column-stacking basis of q²×q² matrices E) of the operator
/// `E ↦ (1/n) Σ_j P_{T(X_j)} E vec(X_j) vec(X_j)ᵀ`, i.e.
/// `(1/n) Σ_j (X_j ⊠ X_j) ⊗ P_{T(X_j)}`.
pub fn averaged_tangent_operator(xs: &[Matrix]) -> Result<Matrix> {
    let q = xs.first().ok_or(Error::EmptySet)?.nrows();
    let q2 = q * q;
    let mut big = Matrix::zeros(q2 * q2, q2 * q2);
    for (j, x) in xs.iter().enumerate() {
        if x.shape() != (q, q) {
            return Err(Error::shape("factor", format!("{q}x{q}"), format!("{}x{}", x.nrows(), x.ncols())).at_column(j));
        }
        let rank = numerical_rank(x).map_err(|e| e.at_column(j))?;
        if rank == 0 {
            continue;
        }
        let p = tangent_space_of(x, rank).map_err(|e| e.at_column(j))?.projector_matrix();
        let v = vectorize(x);
        // kron(v vᵀ, P): block (a, b) is v_a v_b P
        for b in 0..q2 {
            for a in 0..q2 {
                let w = v[a] * v[b];
                if w == 0.0 {
                    continue;
                }
                let mut block = big.view_mut((a * q2, b * q2), (q2, q2));
                block.zip_apply(&p, |b, pv| *b += w * pv);
            }
        }
    }
    big /= xs.len() as f64;
    Ok(big)
}

/// Ω: spectral norm of the averaged tangent operator followed by the
/// projection onto the orthogonal complement of `span{I⊗W₁ + W₂⊗I}`.
///
/// Dense in q⁴; refuses `q > limit`.
pub fn omega(xs: &[Matrix], limit: usize) -> Result<f64> {
    let q = xs.first().ok_or(Error::EmptySet)?.nrows();
    if q > limit {
        return Err(Error::TooLarge { q, limit });
    }
    let big = averaged_tangent_operator(xs)?;
    let basis = rank_preserver_tangent_basis(q)?;
    let projected = &big - &basis * (basis.transpose() * &big);
    Ok(projected.singular_values().max())
}

/// Sampled lower bound on the restricted isometry constant δ_k(L): the
/// largest `|‖L(X)‖² − 1|` over `trials` random rank-k matrices with unit
/// Frobenius norm. Not a certificate.
pub fn rip_estimate(l: &LinearMap, k: usize, trials: usize, seed: u64) -> Result<f64> {
    let q = l.q();
    if k == 0 || k > q {
        return Err(Error::InvalidArgument(format!("rank {k} outside 1..={q}")));
    }
    let worst = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = substream(seed, "rip", t as u64);
            let a = Matrix::from_fn(q, k, |_, _| rng.sample(StandardNormal));
            let b = Matrix::from_fn(k, q, |_, _| rng.sample(StandardNormal));
            let x = a * b;
            let x = &x / x.norm();
            let y = apply_map(l, &x).expect("x is q x q");
            (y.norm_squared() - 1.0).abs()
        })
        .reduce(|| 0.0, f64::max);
    Ok(worst)
}

/// Diagnostics for the hypotheses of the recovery guarantee.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnsembleStats {
    pub lambda: f64,
    pub delta: f64,
    /// Present when q is within the dense limit.
    pub omega: Option<f64>,
    pub delta_ratio: f64,
    pub omega_ratio: Option<f64>,
}

pub fn ensemble_stats(xs: &[Matrix], omega_limit: usize) -> Result<EnsembleStats> {
    let (lambda, delta) = covariance_stats(xs)?;
    let q = xs[0].nrows();
    let omega = if q <= omega_limit { Some(omega(xs, omega_limit)?) } else { None };
    Ok(EnsembleStats {
        lambda,
        delta,
        omega,
        delta_ratio: delta / lambda,
        omega_ratio: omega.map(|w| w / lambda),
    })
}
