//! Alternating-update learners.
//!
//! The semidefinite learner repeats three steps until the map stops moving:
//! solve for a rank-r preimage of every data column under the current map,
//! refit the map by least squares, and renormalize it with Operator
//! Sinkhorn. The polyhedral learner is the dictionary-learning analog with
//! sparse codes and unit-norm columns.

use rand::Rng as _;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{apply_vec, ensure_finite, factor_matrix, svd, unvectorize, LinearMap, Matrix, Vector};
use crate::rng::substream;
use crate::scaling::{self, operator_sinkhorn_normalize};
use crate::solvers::{iht_sparse, nuclear_prox_solve, svp_from, SolverOptions};

/// Relative singular-value cutoff of the least-squares pseudoinverse.
pub const PINV_CUTOFF: f64 = 1e-12;

/// Per-column solver of the factor update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InnerSolver {
    Svp,
    NuclearProx { lambda: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LearnOptions {
    pub max_outer_iter: usize,
    /// Stop once the largest componentwise Frobenius change of the map
    /// between outer iterations is at most this.
    pub cauchy_tol: f64,
    pub inner_solver: InnerSolver,
    pub solver_opts: SolverOptions,
    pub normalize_tol: f64,
    pub normalize_max_iter: usize,
    /// Start each factor solve from the previous outer iteration's factor
    /// instead of zero.
    pub warm_start: bool,
    /// Seed of the stream that re-randomizes dead dictionary atoms.
    pub seed: u64,
}

impl Default for LearnOptions {
    fn default() -> Self {
        Self {
            max_outer_iter: 500,
            cauchy_tol: 1e-7,
            inner_solver: InnerSolver::Svp,
            solver_opts: SolverOptions::default(),
            normalize_tol: scaling::DEFAULT_TOL,
            normalize_max_iter: scaling::DEFAULT_MAX_ITER,
            warm_start: false,
            seed: 0,
        }
    }
}

impl LearnOptions {
    pub fn validate(&self) -> Result<()> {
        self.solver_opts.validate()?;
        if self.max_outer_iter == 0 || self.normalize_max_iter == 0 {
            return Err(Error::InvalidArgument("iteration caps must be positive".into()));
        }
        if !(self.cauchy_tol > 0.0) || !(self.normalize_tol > 0.0) {
            return Err(Error::InvalidArgument("tolerances must be positive".into()));
        }
        if let InnerSolver::NuclearProx { lambda } = self.inner_solver {
            if !(lambda >= 0.0) {
                return Err(Error::InvalidArgument(format!("lambda must be nonnegative, got {lambda}")));
            }
        }
        Ok(())
    }
}

/// One outer iteration of a learner.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    pub iter: usize,
    /// `‖Y − L̄(X)‖_F / ‖Y‖_F` right after the least-squares map update.
    pub fit_residual: f64,
    /// Largest componentwise (or columnwise) change of the map.
    pub map_change: f64,
    /// Filled in by the monitor, typically the distance to a known truth.
    pub dist_to_truth: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LearnTrace {
    pub records: Vec<IterationRecord>,
    /// The Cauchy criterion was met.
    pub converged: bool,
    /// The monitor asked to stop.
    pub stopped_early: bool,
    /// Outer iterations whose map update fell back to the minimum-norm
    /// solution of a rank-deficient system.
    pub min_norm_updates: usize,
    /// Dictionary atoms re-randomized after vanishing.
    pub dead_atoms: usize,
}

impl LearnTrace {
    pub fn iterations(&self) -> usize {
        self.records.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Regularizer {
    /// Image of the nuclear-norm ball under a normalized map.
    Semidefinite { map: LinearMap, rank: usize },
    /// Image of the ℓ₁ ball under a dictionary with unit-norm columns.
    Polyhedral { dictionary: Matrix, sparsity: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelKind {
    Semidefinite,
    Polyhedral,
}

impl Regularizer {
    pub fn kind(&self) -> ModelKind {
        match self {
            Regularizer::Semidefinite { .. } => ModelKind::Semidefinite,
            Regularizer::Polyhedral { .. } => ModelKind::Polyhedral,
        }
    }

    /// Ambient dimension d.
    pub fn dim(&self) -> usize {
        match self {
            Regularizer::Semidefinite { map, .. } => map.d(),
            Regularizer::Polyhedral { dictionary, .. } => dictionary.nrows(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegularizerModel {
    pub regularizer: Regularizer,
    pub trace: LearnTrace,
}

/// What a monitor reports back after each outer iteration.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Observation {
    pub dist: Option<f64>,
    pub stop: bool,
}

fn check_data(y: &Matrix, d: usize) -> Result<()> {
    if y.nrows() != d {
        return Err(Error::shape("data rows", d, y.nrows()));
    }
    if y.ncols() == 0 {
        return Err(Error::EmptySet);
    }
    ensure_finite(y, "data")
}

/// Solve every column of `Y` for a rank-≤r preimage under `L`, in parallel.
/// `warm` supplies per-column starting points for SVP.
pub fn update_factors(
    l: &LinearMap,
    y: &Matrix,
    r: usize,
    inner: InnerSolver,
    opts: &SolverOptions,
    warm: Option<&[Matrix]>,
) -> Result<Vec<Matrix>> {
    check_data(y, l.d())?;
    if let Some(w) = warm {
        if w.len() != y.ncols() {
            return Err(Error::shape("warm-start factors", y.ncols(), w.len()));
        }
    }
    let results: Vec<Result<Matrix>> = (0..y.ncols())
        .into_par_iter()
        .map(|j| {
            let col: Vector = y.column(j).into_owned();
            let solved = match inner {
                InnerSolver::Svp => svp_from(l, &col, r, opts, warm.map(|w| &w[j])),
                InnerSolver::NuclearProx { lambda } => nuclear_prox_solve(l, &col, lambda, opts),
            };
            solved.map(|(x, _)| x).map_err(|e| e.at_column(j))
        })
        .collect();
    results.into_iter().collect()
}

/// Least-squares map update: the minimizer of `Σ_j ‖y_j − L̄(X_j)‖²`, i.e.
/// stacked components `S = (Fᵀ)⁺ Yᵀ` with `F` the q²×n factor matrix. The
/// pseudoinverse drops singular values below `1e-12·σ_max`; the flag is set
/// when that made the solution minimum-norm rather than unique.
pub fn update_map(xs: &[Matrix], y: &Matrix) -> Result<(LinearMap, bool)> {
    let f = factor_matrix(xs)?;
    if y.ncols() != xs.len() {
        return Err(Error::shape("data columns", xs.len(), y.ncols()));
    }
    ensure_finite(y, "data")?;
    let q = xs[0].nrows();
    let (coef, deficient) = pinv_solve(&f, y)?;
    Ok((LinearMap::from_stacked(q, coef)?, deficient))
}

/// `(Fᵀ)⁺ Yᵀ` for a k×n matrix F and d×n matrix Y, via the SVD of F.
fn pinv_solve(f: &Matrix, y: &Matrix) -> Result<(Matrix, bool)> {
    let k = f.nrows();
    let dec = svd(f)?;
    let top = dec.singulars[0];
    let rank = if top > 0.0 {
        dec.singulars.iter().filter(|&&s| s > PINV_CUTOFF * top).count()
    } else {
        0
    };
    if rank == 0 {
        return Ok((Matrix::zeros(k, y.nrows()), true));
    }
    // F = U Σ Vᵀ, so (Fᵀ)⁺ = U Σ⁻¹ Vᵀ
    let v = dec.right.columns(0, rank);
    let mut proj = v.transpose() * y.transpose();
    for (i, mut row) in proj.row_iter_mut().enumerate() {
        row /= dec.singulars[i];
    }
    Ok((dec.left.columns(0, rank) * proj, rank < k))
}

/// `‖Y − L(X)‖_F / ‖Y‖_F` (0 for zero data).
pub fn fit_residual(l: &LinearMap, xs: &[Matrix], y: &Matrix) -> f64 {
    let mut err = 0.0;
    for (j, x) in xs.iter().enumerate() {
        err += (y.column(j) - apply_vec(l, x.as_slice())).norm_squared();
    }
    let total = y.norm_squared();
    if total == 0.0 {
        0.0
    } else {
        (err / total).sqrt()
    }
}

fn normalize_or_fail(l: &LinearMap, opts: &LearnOptions) -> Result<LinearMap> {
    let (out, report) = operator_sinkhorn_normalize(l, opts.normalize_tol, opts.normalize_max_iter)?;
    if !report.converged {
        return Err(Error::NormalizationStalled {
            iterations: report.iterations,
            residual: report.residual,
        });
    }
    Ok(out)
}

/// Learn a semidefinite regularizer from the columns of `Y`, starting from
/// (the normalization of) `l0`.
pub fn learn_semidefinite(y: &Matrix, r: usize, l0: &LinearMap, opts: &LearnOptions) -> Result<RegularizerModel> {
    learn_semidefinite_with(y, r, l0, opts, |_, _| Ok(Observation::default()))
}

/// [`learn_semidefinite`] with a monitor called after every outer iteration
/// with the iteration number and the new normalized map.
pub fn learn_semidefinite_with<F>(
    y: &Matrix,
    r: usize,
    l0: &LinearMap,
    opts: &LearnOptions,
    mut monitor: F,
) -> Result<RegularizerModel>
where
    F: FnMut(usize, &LinearMap) -> Result<Observation>,
{
    opts.validate()?;
    check_data(y, l0.d())?;
    let q = l0.q();
    if r == 0 || r > q {
        return Err(Error::InvalidArgument(format!("rank {r} outside 1..={q}")));
    }
    let mut l = normalize_or_fail(l0, opts)?;
    let mut trace = LearnTrace::default();
    let mut xs: Option<Vec<Matrix>> = None;
    for iter in 1..=opts.max_outer_iter {
        let tag = |e: Error| Error::Iteration {
            iteration: iter,
            source: Box::new(e),
        };
        let warm = if opts.warm_start { xs.as_deref() } else { None };
        let factors = update_factors(&l, y, r, opts.inner_solver, &opts.solver_opts, warm).map_err(tag)?;
        let (fitted, deficient) = update_map(&factors, y).map_err(tag)?;
        if deficient {
            trace.min_norm_updates += 1;
        }
        let fit = fit_residual(&fitted, &factors, y);
        let next = normalize_or_fail(&fitted, opts).map_err(tag)?;
        let change = next.max_component_distance(&l)?;
        l = next;
        xs = Some(factors);
        let seen = monitor(iter, &l)?;
        trace.records.push(IterationRecord {
            iter,
            fit_residual: fit,
            map_change: change,
            dist_to_truth: seen.dist,
        });
        log::debug!("outer iteration {iter}: fit {fit:.3e}, change {change:.3e}");
        if change <= opts.cauchy_tol {
            trace.converged = true;
            break;
        }
        if seen.stop {
            trace.stopped_early = true;
            break;
        }
    }
    Ok(RegularizerModel {
        regularizer: Regularizer::Semidefinite { map: l, rank: r },
        trace,
    })
}

/// Divide every column by its Euclidean norm.
pub fn column_normalize(d: &Matrix) -> Result<Matrix> {
    let mut out = d.clone();
    for (j, mut col) in out.column_iter_mut().enumerate() {
        let n = col.norm();
        if !(n > 0.0) {
            return Err(Error::ZeroColumn(j));
        }
        col /= n;
    }
    Ok(out)
}

fn max_column_distance(a: &Matrix, b: &Matrix) -> f64 {
    a.column_iter().zip(b.column_iter()).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

/// Learn a dictionary with `p` unit-norm atoms whose columns of `Y` are
/// `s`-sparse combinations, starting from `d0`.
pub fn learn_polyhedral(y: &Matrix, s: usize, d0: &Matrix, opts: &LearnOptions) -> Result<RegularizerModel> {
    learn_polyhedral_with(y, s, d0, opts, |_, _| Ok(Observation::default()))
}

pub fn learn_polyhedral_with<F>(
    y: &Matrix,
    s: usize,
    d0: &Matrix,
    opts: &LearnOptions,
    mut monitor: F,
) -> Result<RegularizerModel>
where
    F: FnMut(usize, &Matrix) -> Result<Observation>,
{
    opts.validate()?;
    check_data(y, d0.nrows())?;
    ensure_finite(d0, "initial dictionary")?;
    let (dim, p) = d0.shape();
    if s == 0 || s > p {
        return Err(Error::InvalidArgument(format!("sparsity {s} outside 1..={p}")));
    }
    let mut dict = column_normalize(d0)?;
    let mut trace = LearnTrace::default();
    for iter in 1..=opts.max_outer_iter {
        let tag = |e: Error| Error::Iteration {
            iteration: iter,
            source: Box::new(e),
        };
        let codes: Vec<Result<Vector>> = (0..y.ncols())
            .into_par_iter()
            .map(|j| {
                iht_sparse(&dict, &y.column(j).into_owned(), s, &opts.solver_opts)
                    .map(|(x, _)| x)
                    .map_err(|e| e.at_column(j))
            })
            .collect();
        let codes: Vec<Vector> = codes.into_iter().collect::<Result<_>>().map_err(tag)?;
        let code_matrix = Matrix::from_columns(&codes);
        let (coef, deficient) = pinv_solve(&code_matrix, y).map_err(tag)?;
        if deficient {
            trace.min_norm_updates += 1;
        }
        let mut fitted = coef.transpose();
        let fit = {
            let total = y.norm_squared();
            if total == 0.0 {
                0.0
            } else {
                ((y - &fitted * &code_matrix).norm_squared() / total).sqrt()
            }
        };
        for j in 0..p {
            if fitted.column(j).norm() <= 1e-12 {
                let mut rng = substream(opts.seed, "dead-atom", (iter * p + j) as u64);
                let fresh = Vector::from_fn(dim, |_, _| rng.sample(StandardNormal));
                fitted.set_column(j, &fresh);
                trace.dead_atoms += 1;
                log::info!("atom {j} vanished at outer iteration {iter}; re-randomized");
            }
        }
        let next = column_normalize(&fitted).map_err(tag)?;
        let change = max_column_distance(&next, &dict);
        dict = next;
        let seen = monitor(iter, &dict)?;
        trace.records.push(IterationRecord {
            iter,
            fit_residual: fit,
            map_change: change,
            dist_to_truth: seen.dist,
        });
        if change <= opts.cauchy_tol {
            trace.converged = true;
            break;
        }
        if seen.stop {
            trace.stopped_early = true;
            break;
        }
    }
    Ok(RegularizerModel {
        regularizer: Regularizer::Polyhedral { dictionary: dict, sparsity: s },
        trace,
    })
}

/// Optional preprocessing: subtract the mean column, then scale each column
/// to unit norm (zero columns are left alone). Never applied implicitly.
pub fn preprocess(y: &Matrix, center: bool, unit_norm: bool) -> Matrix {
    let mut out = y.clone();
    if center && y.ncols() > 0 {
        let mean = y.column_mean();
        for mut col in out.column_iter_mut() {
            col -= &mean;
        }
    }
    if unit_norm {
        for mut col in out.column_iter_mut() {
            let n = col.norm();
            if n > 0.0 {
                col /= n;
            }
        }
    }
    out
}

/// Reshape a column of factors back to matrices; convenience for callers
/// that store factors as q²×n data.
pub fn factors_from_matrix(f: &Matrix, q: usize) -> Result<Vec<Matrix>> {
    if f.nrows() != q * q {
        return Err(Error::shape("factor rows", q * q, f.nrows()));
    }
    Ok(f.column_iter().map(|c| unvectorize(c.as_slice(), q)).collect())
}
