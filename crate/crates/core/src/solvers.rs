//! Low-rank and sparse inverse-problem solvers.
//!
//! - [`svp`]: singular value projection for `min ‖y − L(X)‖² s.t. rank X ≤ r`.
//! - [`nuclear_prox_solve`]: proximal gradient for
//!   `min ½‖y − L(X)‖² + λ‖X‖_⋆`, with [`svt`] as the proximal step.
//! - [`iht_sparse`] and [`lasso_solve`]: the vector analogs used by the
//!   dictionary-learning baseline.

use crate::error::{Error, Result};
use crate::linalg::{adjoint_map, apply_vec, ensure_finite, ensure_finite_vec, svd, unvectorize, vectorize, LinearMap, Matrix, Vector};

/// Smallest damping the automatic halving will try.
pub const MIN_DAMPING: f64 = 1.0 / 64.0;

/// Residual growth over the best residual seen that counts as divergence.
const DIVERGENCE_FACTOR: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub max_iter: usize,
    /// Threshold on both the relative iterate change and the objective change
    /// (relative to the objective at zero).
    pub tol: f64,
    /// Damping ν ∈ (0, 1] of the projected-gradient methods.
    pub damping: f64,
    /// Step η of the proximal-gradient methods.
    pub step_size: f64,
    /// Halve ν on divergence (down to [`MIN_DAMPING`]) instead of failing.
    pub adaptive_damping: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_iter: 1000,
            tol: 1e-9,
            damping: 1.0,
            step_size: 1.0,
            adaptive_damping: true,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        if self.max_iter == 0 {
            return Err(Error::InvalidArgument("max_iter must be positive".into()));
        }
        if !(self.tol > 0.0) {
            return Err(Error::InvalidArgument(format!("tol must be positive, got {}", self.tol)));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "damping must lie in (0, 1], got {}",
                self.damping
            )));
        }
        if !(self.step_size > 0.0) || !self.step_size.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "step size must be positive, got {}",
                self.step_size
            )));
        }
        Ok(())
    }

    /// Same options with step `1/‖op‖₂²`, the largest step for which
    /// proximal gradient is guaranteed to descend.
    pub fn with_step_for(mut self, operator_norm: f64) -> Self {
        if operator_norm > 0.0 {
            self.step_size = 1.0 / (operator_norm * operator_norm);
        }
        self
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SolveTrace {
    pub iterations: usize,
    /// ‖y − L(X)‖ at the returned iterate.
    pub final_residual: f64,
    pub objective_history: Vec<f64>,
    /// Damping actually used (after any automatic halving).
    pub damping: f64,
}

/// `½‖y − L(X)‖²`.
pub fn least_squares_objective(l: &LinearMap, y: &Vector, x: &Matrix) -> Result<f64> {
    check_data(l, y)?;
    let r = y - apply_vec(l, x.as_slice());
    Ok(0.5 * r.norm_squared())
}

/// Gradient `L'(L(X) − y)` of [`least_squares_objective`].
pub fn least_squares_gradient(l: &LinearMap, y: &Vector, x: &Matrix) -> Result<Matrix> {
    check_data(l, y)?;
    let r = apply_vec(l, x.as_slice()) - y;
    adjoint_map(l, &r)
}

fn check_data(l: &LinearMap, y: &Vector) -> Result<()> {
    if y.len() != l.d() {
        return Err(Error::shape("observation", l.d(), y.len()));
    }
    ensure_finite_vec(y, "observation")
}

fn relative_change(new: &[f64], old: &[f64]) -> f64 {
    let mut diff = 0.0;
    let mut norm = 0.0;
    for (a, b) in new.iter().zip(old) {
        diff += (a - b) * (a - b);
        norm += a * a;
    }
    if norm == 0.0 {
        if diff == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        (diff / norm).sqrt()
    }
}

/// Singular value projection started from zero.
pub fn svp(l: &LinearMap, y: &Vector, r: usize, opts: &SolverOptions) -> Result<(Matrix, SolveTrace)> {
    svp_from(l, y, r, opts, None)
}

/// Singular value projection from an optional initial guess:
/// `X ← P_r(X + ν L'(y − L(X)))` where `P_r` truncates to rank r.
///
/// Returns the iterate with the smallest residual seen, so the result is
/// never worse than the starting point.
pub fn svp_from(
    l: &LinearMap,
    y: &Vector,
    r: usize,
    opts: &SolverOptions,
    initial: Option<&Matrix>,
) -> Result<(Matrix, SolveTrace)> {
    opts.validate()?;
    check_data(l, y)?;
    let q = l.q();
    if r == 0 || r > q {
        return Err(Error::InvalidArgument(format!("rank {r} outside 1..={q}")));
    }
    let start = match initial {
        Some(x0) => {
            if x0.shape() != (q, q) {
                return Err(Error::shape("svp initial guess", format!("{q}x{q}"), format!("{}x{}", x0.nrows(), x0.ncols())));
            }
            ensure_finite(x0, "svp initial guess")?;
            vectorize(x0)
        }
        None => Vector::zeros(q * q),
    };
    let stacked = l.stacked();
    let (x, trace) = projected_descent(
        y,
        start,
        opts,
        |x| stacked.tr_mul(x),
        |r| stacked * r,
        |v| Ok(vectorize(&svd(&unvectorize(v.as_slice(), q))?.reconstruct(r))),
    )?;
    Ok((unvectorize(x.as_slice(), q), trace))
}

/// Iterations a run may spend above its best objective (by more than
/// [`STALL_EXCESS`]) before it counts as oscillating.
const STALL_LIMIT: usize = 20;
const STALL_EXCESS: f64 = 1e-3;

enum RunEnd {
    Finished(Vector, SolveTrace),
    /// Oscillating well above the best objective seen; carries the best.
    Stalled(Vector, SolveTrace),
}

/// Projected gradient `x ← Π(x + ν A'(y − A x))` with automatic halving of
/// ν when a run diverges (residual above 10x its best) or oscillates.
fn projected_descent<F, G, P>(
    y: &Vector,
    start: Vector,
    opts: &SolverOptions,
    forward: F,
    adjoint: G,
    project: P,
) -> Result<(Vector, SolveTrace)>
where
    F: Fn(&Vector) -> Vector,
    G: Fn(&Vector) -> Vector,
    P: Fn(Vector) -> Result<Vector>,
{
    let mut damping = opts.damping;
    loop {
        let can_halve = opts.adaptive_damping && damping / 2.0 >= MIN_DAMPING;
        match projected_run(y, &start, opts, damping, &forward, &adjoint, &project) {
            Ok(RunEnd::Finished(x, t)) => return Ok((x, t)),
            Ok(RunEnd::Stalled(x, t)) if !can_halve => return Ok((x, t)),
            Err(e @ Error::Divergence { .. }) if !can_halve => return Err(e),
            Ok(RunEnd::Stalled(..)) | Err(Error::Divergence { .. }) => {
                damping /= 2.0;
                log::debug!("projected gradient unstable; retrying with damping {damping}");
            }
            Err(e) => return Err(e),
        }
    }
}

fn projected_run<F, G, P>(
    y: &Vector,
    start: &Vector,
    opts: &SolverOptions,
    damping: f64,
    forward: &F,
    adjoint: &G,
    project: &P,
) -> Result<RunEnd>
where
    F: Fn(&Vector) -> Vector,
    G: Fn(&Vector) -> Vector,
    P: Fn(Vector) -> Result<Vector>,
{
    let scale = 0.5 * y.norm_squared();
    let mut x = start.clone();
    let mut resid = y - forward(&x);
    let mut best = (x.clone(), resid.norm());
    let mut history = vec![0.5 * resid.norm_squared()];
    let mut above_best = 0;
    let mut iterations = 0;
    let mut stalled = false;
    let mut two_back: Option<Vector> = None;
    while iterations < opts.max_iter {
        iterations += 1;
        let next = project(&x + adjoint(&resid) * damping)?;
        // a period-two cycle: back where we were two steps ago, yet moving
        let cycling = two_back
            .as_ref()
            .is_some_and(|old| relative_change(next.as_slice(), old.as_slice()) <= opts.tol);
        let next_resid = y - forward(&next);
        let norm = next_resid.norm();
        let obj = 0.5 * norm * norm;
        let change = relative_change(next.as_slice(), x.as_slice());
        let obj_change = (obj - history[history.len() - 1]).abs() / scale.max(f64::MIN_POSITIVE);
        history.push(obj);
        two_back = Some(std::mem::replace(&mut x, next));
        resid = next_resid;
        if !norm.is_finite() || norm > DIVERGENCE_FACTOR * best.1.max(f64::MIN_POSITIVE) {
            return Err(Error::Divergence {
                iteration: iterations,
                residual: norm,
                best: best.1,
            });
        }
        if norm < best.1 {
            best = (x.clone(), norm);
        }
        if change <= opts.tol && obj_change <= opts.tol {
            break;
        }
        if cycling && change > opts.tol {
            stalled = true;
            break;
        }
        if obj > (1.0 + STALL_EXCESS) * 0.5 * best.1 * best.1 {
            above_best += 1;
            if above_best >= STALL_LIMIT {
                stalled = true;
                break;
            }
        } else {
            above_best = 0;
        }
    }
    let trace = SolveTrace {
        iterations,
        final_residual: best.1,
        objective_history: history,
        damping,
    };
    Ok(if stalled {
        RunEnd::Stalled(best.0, trace)
    } else {
        RunEnd::Finished(best.0, trace)
    })
}

/// Singular value thresholding `U diag(max(σ − τ, 0)) Vᵀ`, the proximal
/// operator of `τ‖·‖_⋆`.
pub fn svt(a: &Matrix, tau: f64) -> Result<Matrix> {
    if !(tau >= 0.0) {
        return Err(Error::InvalidArgument(format!("threshold must be nonnegative, got {tau}")));
    }
    let mut dec = svd(a)?;
    let mut keep = 0;
    for s in dec.singulars.iter_mut() {
        // values within rounding of the threshold count as cut
        let shrunk = *s - tau;
        *s = if shrunk > 8.0 * f64::EPSILON * tau { shrunk } else { 0.0 };
        if *s > 0.0 {
            keep += 1;
        }
    }
    if keep == 0 {
        return Ok(Matrix::zeros(a.nrows(), a.ncols()));
    }
    Ok(dec.reconstruct(keep))
}

pub fn nuclear_norm(x: &Matrix) -> f64 {
    x.singular_values().sum()
}

/// Proximal gradient for `min ½‖y − L(X)‖² + λ‖X‖_⋆` with fixed step
/// `opts.step_size`, started from zero. `λ = 0` is allowed and gives plain
/// gradient descent on the least-squares term.
pub fn nuclear_prox_solve(
    l: &LinearMap,
    y: &Vector,
    lambda: f64,
    opts: &SolverOptions,
) -> Result<(Matrix, SolveTrace)> {
    opts.validate()?;
    check_data(l, y)?;
    if !(lambda >= 0.0) {
        return Err(Error::InvalidArgument(format!("lambda must be nonnegative, got {lambda}")));
    }
    let q = l.q();
    let eta = opts.step_size;
    let scale = 0.5 * y.norm_squared();
    let objective = |x: &Matrix, resid: &Vector| 0.5 * resid.norm_squared() + lambda * nuclear_norm(x);
    let mut x = Matrix::zeros(q, q);
    let mut resid = y.clone();
    let mut history = vec![objective(&x, &resid)];
    let mut iterations = 0;
    while iterations < opts.max_iter {
        iterations += 1;
        let grad = adjoint_map(l, &(-&resid))?;
        let next = svt(&(&x - grad * eta), eta * lambda)?;
        let next_resid = y - apply_vec(l, next.as_slice());
        let obj = objective(&next, &next_resid);
        let prev = history[history.len() - 1];
        if iterations > 1 && obj > prev + 1e-12 * prev.abs().max(1.0) {
            return Err(Error::StepSize {
                iteration: iterations,
                previous: prev,
                current: obj,
            });
        }
        let change = relative_change(next.as_slice(), x.as_slice());
        let obj_change = (obj - prev).abs() / scale.max(f64::MIN_POSITIVE);
        history.push(obj);
        x = next;
        resid = next_resid;
        if change <= opts.tol && obj_change <= opts.tol {
            break;
        }
    }
    Ok((
        x,
        SolveTrace {
            iterations,
            final_residual: resid.norm(),
            objective_history: history,
            damping: eta,
        },
    ))
}

/// First-order optimality residuals of `X` for the nuclear-norm problem.
///
/// With `G = L'(L(X) − y)` and `X = U Σ Vᵀ` (singular values above
/// `1e-9·σ₁`), returns `(‖P_T(G + λUVᵀ)‖_F, ‖P_{T⊥}(G)‖₂)`; X is optimal iff
/// the first is 0 and the second is at most λ.
pub fn nuclear_optimality(l: &LinearMap, y: &Vector, lambda: f64, x: &Matrix) -> Result<(f64, f64)> {
    let g = least_squares_gradient(l, y, x)?;
    let dec = svd(x)?;
    let top = dec.singulars[0];
    let rank = dec.singulars.iter().take_while(|&&s| top > 0.0 && s > 1e-9 * top).count();
    if rank == 0 {
        return Ok((0.0, g.singular_values().max()));
    }
    let u = dec.left.columns(0, rank).into_owned();
    let v = dec.right.columns(0, rank).into_owned();
    let q = x.nrows();
    let eye = Matrix::identity(q, q);
    let pu_perp = &eye - &u * u.transpose();
    let pv_perp = &eye - &v * v.transpose();
    let perp = &pu_perp * &g * &pv_perp;
    let tangent = &g - &perp + &u * v.transpose() * lambda;
    let perp_norm = if perp.norm() == 0.0 { 0.0 } else { perp.singular_values().max() };
    Ok((tangent.norm(), perp_norm))
}

/// Indices of the `s` largest-magnitude entries; ties go to the lower index.
fn top_support(v: &Vector, s: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[b].abs().total_cmp(&v[a].abs()).then(a.cmp(&b)));
    idx.truncate(s);
    idx.sort_unstable();
    idx
}

/// `H_s`: keep the s largest-magnitude entries, zero the rest.
pub fn hard_threshold(v: &Vector, s: usize) -> Vector {
    let mut out = Vector::zeros(v.len());
    for i in top_support(v, s) {
        out[i] = v[i];
    }
    out
}

fn check_dictionary(dict: &Matrix, y: &Vector) -> Result<()> {
    if dict.nrows() != y.len() {
        return Err(Error::shape("dictionary rows", y.len(), dict.nrows()));
    }
    ensure_finite(dict, "dictionary")?;
    ensure_finite_vec(y, "observation")
}

/// Iterative hard thresholding `x ← H_s(x + μ Dᵀ(y − Dx))` with the
/// normalized step: `μ = ν‖g_S‖² / ‖D g_S‖²` where `g_S` is the gradient
/// restricted to the current support, halved while a support change would
/// overshoot (`μ > 0.99‖Δx‖²/‖DΔx‖²`). The objective never increases.
///
/// Two runs are made, one from zero and one from the greedy (orthogonal
/// matching pursuit) s-sparse fit; the one with the smaller residual wins.
pub fn iht_sparse(dict: &Matrix, y: &Vector, s: usize, opts: &SolverOptions) -> Result<(Vector, SolveTrace)> {
    opts.validate()?;
    check_dictionary(dict, y)?;
    let p = dict.ncols();
    if s == 0 || s > p {
        return Err(Error::InvalidArgument(format!("sparsity {s} outside 1..={p}")));
    }
    let from_zero = iht_run(dict, y, s, opts, Vector::zeros(p), top_support(&dict.tr_mul(y), s));
    if from_zero.1.final_residual <= opts.tol * y.norm() {
        return Ok(from_zero);
    }
    let greedy = greedy_sparse_fit(dict, y, s);
    let support = top_support(&greedy, s);
    let from_greedy = iht_run(dict, y, s, opts, greedy, support);
    Ok(if from_greedy.1.final_residual < from_zero.1.final_residual {
        from_greedy
    } else {
        from_zero
    })
}

/// Least squares restricted to the columns in `support`.
fn restricted_least_squares(dict: &Matrix, y: &Vector, support: &[usize]) -> Vector {
    let sub = dict.select_columns(support);
    let coef = sub
        .svd(true, true)
        .solve(y, 1e-12)
        .unwrap_or_else(|_| Vector::zeros(support.len()));
    let mut x = Vector::zeros(dict.ncols());
    for (k, &i) in support.iter().enumerate() {
        x[i] = coef[k];
    }
    x
}

/// Orthogonal matching pursuit: add the atom most correlated with the
/// residual, refit on the support, s times.
fn greedy_sparse_fit(dict: &Matrix, y: &Vector, s: usize) -> Vector {
    let p = dict.ncols();
    let mut support: Vec<usize> = Vec::with_capacity(s);
    let mut x = Vector::zeros(p);
    for _ in 0..s {
        let corr = dict.tr_mul(&(y - dict * &x));
        let pick = (0..p)
            .filter(|k| !support.contains(k))
            .max_by(|&a, &b| corr[a].abs().total_cmp(&corr[b].abs()).then(b.cmp(&a)))
            .expect("s <= p leaves a candidate");
        support.push(pick);
        support.sort_unstable();
        x = restricted_least_squares(dict, y, &support);
    }
    x
}

fn iht_run(dict: &Matrix, y: &Vector, s: usize, opts: &SolverOptions, start: Vector, start_support: Vec<usize>) -> (Vector, SolveTrace) {
    let p = dict.ncols();
    let scale = 0.5 * y.norm_squared();
    let mut x = start;
    let mut resid = y - dict * &x;
    let mut support = start_support;
    let mut history = vec![0.5 * resid.norm_squared()];
    let mut iterations = 0;
    while iterations < opts.max_iter {
        iterations += 1;
        let grad = dict.tr_mul(&resid);
        let mut restricted = Vector::zeros(p);
        for &i in &support {
            restricted[i] = grad[i];
        }
        let denom = (dict * &restricted).norm_squared();
        let mut mu = if denom > 0.0 {
            opts.damping * restricted.norm_squared() / denom
        } else {
            opts.damping
        };
        let mut next = hard_threshold(&(&x + &grad * mu), s);
        let mut next_support = top_support(&next, s);
        let mut shrinks = 0;
        while next_support != support && shrinks < 60 {
            let dx = &next - &x;
            let ddx = (dict * &dx).norm_squared();
            if ddx == 0.0 || mu <= 0.99 * dx.norm_squared() / ddx {
                break;
            }
            mu /= 2.0;
            shrinks += 1;
            next = hard_threshold(&(&x + &grad * mu), s);
            next_support = top_support(&next, s);
        }
        let next_resid = y - dict * &next;
        let obj = 0.5 * next_resid.norm_squared();
        let change = relative_change(next.as_slice(), x.as_slice());
        let obj_change = (obj - history[history.len() - 1]).abs() / scale.max(f64::MIN_POSITIVE);
        history.push(obj);
        x = next;
        resid = next_resid;
        support = next_support;
        if change <= opts.tol && obj_change <= opts.tol {
            break;
        }
    }
    (
        x,
        SolveTrace {
            iterations,
            final_residual: resid.norm(),
            objective_history: history,
            damping: opts.damping,
        },
    )
}

pub fn soft_threshold(v: &Vector, tau: f64) -> Vector {
    v.map(|x| x.signum() * (x.abs() - tau).max(0.0))
}

/// Proximal gradient (ISTA) for `min ½‖y − Dx‖² + λ‖x‖₁` from zero.
pub fn lasso_solve(dict: &Matrix, y: &Vector, lambda: f64, opts: &SolverOptions) -> Result<(Vector, SolveTrace)> {
    opts.validate()?;
    check_dictionary(dict, y)?;
    if !(lambda >= 0.0) {
        return Err(Error::InvalidArgument(format!("lambda must be nonnegative, got {lambda}")));
    }
    let eta = opts.step_size;
    let scale = 0.5 * y.norm_squared();
    let objective = |x: &Vector, r: &Vector| 0.5 * r.norm_squared() + lambda * x.lp_norm(1);
    let mut x = Vector::zeros(dict.ncols());
    let mut resid = y.clone();
    let mut history = vec![objective(&x, &resid)];
    let mut iterations = 0;
    while iterations < opts.max_iter {
        iterations += 1;
        let next = soft_threshold(&(&x + dict.tr_mul(&resid) * eta), eta * lambda);
        let next_resid = y - dict * &next;
        let obj = objective(&next, &next_resid);
        let prev = history[history.len() - 1];
        if iterations > 1 && obj > prev + 1e-12 * prev.abs().max(1.0) {
            return Err(Error::StepSize {
                iteration: iterations,
                previous: prev,
                current: obj,
            });
        }
        let change = relative_change(next.as_slice(), x.as_slice());
        let obj_change = (obj - prev).abs() / scale.max(f64::MIN_POSITIVE);
        history.push(obj);
        x = next;
        resid = next_resid;
        if change <= opts.tol && obj_change <= opts.tol {
            break;
        }
    }
    Ok((
        x,
        SolveTrace {
            iterations,
            final_residual: resid.norm(),
            objective_history: history,
            damping: eta,
        },
    ))
}
