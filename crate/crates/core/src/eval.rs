//! Evaluation: the probe-based distance between regularizers, recovery
//! success, proximal denoising with a learned regularizer, and
//! representation cost.

use rand::Rng as _;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::learning::{learn_polyhedral, learn_semidefinite, LearnOptions, ModelKind, Regularizer};
use crate::linalg::{adjoint_map, apply_map, apply_vec, truncate_rank, LinearMap, Matrix, Vector};
use crate::rng::{substream, Rng};
use crate::scaling::normalize;
use crate::solvers::{lasso_solve, nuclear_norm, nuclear_prox_solve, svp, svp_from, SolverOptions};

/// A regularizer counts as recovered when its distance to the truth is
/// strictly below this.
pub const SUCCESS_THRESHOLD: f64 = 1e-3;

/// Probe count used for q = 7.
pub const DEFAULT_PROBES: usize = 100;

/// Relative residual reduction over the first iterations below which a
/// probe solve counts as stalled and is restarted from the adjoint.
const STALL_REDUCTION: f64 = 1e-12;
const STALL_WINDOW: usize = 10;

fn unit_vector(q: usize, rng: &mut Rng) -> Vector {
    loop {
        let v = Vector::from_fn(q, |_, _| rng.sample(StandardNormal));
        let n = v.norm();
        if n > 0.0 {
            return v / n;
        }
    }
}

/// Unit-Frobenius rank-one probes `s tᵀ` with s, t uniform on the sphere.
#[derive(Debug, Clone, PartialEq)]
pub struct DistProbeSet {
    pub probes: Vec<Matrix>,
    pub seed: u64,
}

impl DistProbeSet {
    pub fn generate(q: usize, count: usize, seed: u64) -> Self {
        let probes = (0..count)
            .map(|k| {
                let mut rng = substream(seed, "probes", k as u64);
                let s = unit_vector(q, &mut rng);
                let t = unit_vector(q, &mut rng);
                s * t.transpose()
            })
            .collect();
        Self { probes, seed }
    }
}

/// SVP settings used inside [`dist`].
pub fn dist_solver_options() -> SolverOptions {
    SolverOptions {
        tol: 1e-10,
        ..SolverOptions::default()
    }
}

/// Best rank-one fit of `target` under `l`: `min ‖target − L(X)‖²`.
fn rank_one_fit(l: &LinearMap, target: &Vector, opts: &SolverOptions) -> Result<f64> {
    let (_, trace) = svp(l, target, 1, opts)?;
    let mut best = trace.final_residual;
    let hist = &trace.objective_history;
    let window = STALL_WINDOW.min(hist.len() - 1);
    let start = hist[0];
    if start > 0.0 && (start - hist[window]) <= STALL_REDUCTION * start {
        let init = truncate_rank(&adjoint_map(l, target)?, 1)?;
        let (_, retry) = svp_from(l, target, 1, opts, Some(&init))?;
        best = best.min(retry.final_residual);
    }
    Ok(best * best)
}

/// `(1/ℓ) Σ_k min_{rank X ≤ 1} ‖L⋆(P_k) − L(X)‖²` over the probes P_k.
///
/// Asymmetric: it measures how well `l` reproduces the atoms of `lstar`.
pub fn dist(lstar: &LinearMap, l: &LinearMap, probes: &DistProbeSet, opts: &SolverOptions) -> Result<f64> {
    if lstar.q() != l.q() || lstar.d() != l.d() {
        return Err(Error::shape(
            "dist maps",
            format!("q={}, d={}", lstar.q(), lstar.d()),
            format!("q={}, d={}", l.q(), l.d()),
        ));
    }
    if probes.probes.is_empty() {
        return Err(Error::EmptySet);
    }
    let fits: Vec<Result<f64>> = probes
        .probes
        .par_iter()
        .enumerate()
        .map(|(k, p)| {
            let target = apply_map(lstar, p)?;
            rank_one_fit(l, &target, opts).map_err(|e| Error::Probe {
                index: k,
                source: Box::new(e),
            })
        })
        .collect();
    let mut total = 0.0;
    for f in fits {
        total += f?;
    }
    Ok(total / probes.probes.len() as f64)
}

pub fn recovery_success(dist_value: f64) -> bool {
    dist_value < SUCCESS_THRESHOLD
}

/// Solution variable of a lifted denoising problem.
#[derive(Debug, Clone, PartialEq)]
pub enum Lifted {
    Matrix(Matrix),
    Vector(Vector),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenoiseResult {
    pub estimate: Vector,
    pub lifted: Lifted,
    /// `½‖y_obs − estimate‖² + λ·(norm of the lifted variable)`.
    pub objective: f64,
    pub lambda: f64,
}

fn safe_step(requested: f64, operator_norm: f64) -> f64 {
    if operator_norm > 0.0 {
        requested.min(1.0 / (operator_norm * operator_norm))
    } else {
        requested
    }
}

/// Proximal denoising `argmin_y ½‖y_obs − y‖² + λ‖y‖` with the learned
/// semidefinite norm, solved in lifted form
/// `min_X ½‖y_obs − L(X)‖² + λ‖X‖_⋆`; the estimate is `L(X̂)`.
///
/// The two problems agree because `‖y‖ = min{‖X‖_⋆ : L(X) = y}`, so
/// minimizing jointly over y and its preimage X removes y. The step is
/// capped at `1/‖L‖₂²`.
pub fn prox_denoise_semidefinite(
    model: &Regularizer,
    y_obs: &Vector,
    lambda: f64,
    opts: &SolverOptions,
) -> Result<DenoiseResult> {
    let Regularizer::Semidefinite { map, .. } = model else {
        return Err(Error::InvalidArgument("expected a semidefinite model".into()));
    };
    let opts = SolverOptions {
        step_size: safe_step(opts.step_size, map.spectral_norm()),
        ..*opts
    };
    let (x, _) = nuclear_prox_solve(map, y_obs, lambda, &opts)?;
    let estimate = apply_vec(map, x.as_slice());
    let objective = 0.5 * (y_obs - &estimate).norm_squared() + lambda * nuclear_norm(&x);
    Ok(DenoiseResult {
        estimate,
        lifted: Lifted::Matrix(x),
        objective,
        lambda,
    })
}

/// Polyhedral analog of [`prox_denoise_semidefinite`]:
/// `min_x ½‖y_obs − Dx‖² + λ‖x‖₁`.
pub fn prox_denoise_polyhedral(
    model: &Regularizer,
    y_obs: &Vector,
    lambda: f64,
    opts: &SolverOptions,
) -> Result<DenoiseResult> {
    let Regularizer::Polyhedral { dictionary, .. } = model else {
        return Err(Error::InvalidArgument("expected a polyhedral model".into()));
    };
    let norm = dictionary.clone().singular_values().max();
    let opts = SolverOptions {
        step_size: safe_step(opts.step_size, norm),
        ..*opts
    };
    let (x, _) = lasso_solve(dictionary, y_obs, lambda, &opts)?;
    let estimate = dictionary * &x;
    let objective = 0.5 * (y_obs - &estimate).norm_squared() + lambda * x.lp_norm(1);
    Ok(DenoiseResult {
        estimate,
        lifted: Lifted::Vector(x),
        objective,
        lambda,
    })
}

pub fn prox_denoise(model: &Regularizer, y_obs: &Vector, lambda: f64, opts: &SolverOptions) -> Result<DenoiseResult> {
    match model.kind() {
        ModelKind::Semidefinite => prox_denoise_semidefinite(model, y_obs, lambda, opts),
        ModelKind::Polyhedral => prox_denoise_polyhedral(model, y_obs, lambda, opts),
    }
}

/// Prox of `λ‖·‖₂`: shrink toward zero by λ, the Euclidean-ball baseline.
pub fn euclidean_shrink(y: &Vector, lambda: f64) -> Vector {
    let n = y.norm();
    if n <= lambda {
        Vector::zeros(y.len())
    } else {
        y * (1.0 - lambda / n)
    }
}

/// Average parameter count per data point: `2qr − r² + dq²/n` for a
/// semidefinite model (q, r), `2s + dp/n` for a polyhedral one (p, s).
pub fn representation_complexity(kind: ModelKind, size: usize, level: usize, d: usize, n: usize) -> f64 {
    let (size, level, d, n) = (size as f64, level as f64, d as f64, n as f64);
    match kind {
        ModelKind::Semidefinite => 2.0 * size * level - level * level + d * size * size / n,
        ModelKind::Polyhedral => 2.0 * level + d * size / n,
    }
}

/// Noise level giving mean SNR `(1/n) Σ ‖y_j‖² / (d σ²)` equal to `snr`.
pub fn noise_sigma_for_snr(y: &Matrix, snr: f64) -> f64 {
    let mean_energy = y.norm_squared() / y.ncols() as f64;
    (mean_energy / (y.nrows() as f64 * snr)).sqrt()
}

/// A model to learn in [`denoise_experiment`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DenoiseModelConfig {
    Semidefinite { q: usize, r: usize },
    Polyhedral { p: usize, s: usize },
}

impl DenoiseModelConfig {
    pub fn label(&self) -> String {
        match self {
            DenoiseModelConfig::Semidefinite { q, r } => format!("semidefinite(q={q},r={r})"),
            DenoiseModelConfig::Polyhedral { p, s } => format!("polyhedral(p={p},s={s})"),
        }
    }
}

/// Label of the Euclidean-shrinkage baseline rows.
pub const SHRINKAGE_LABEL: &str = "euclidean-shrinkage";

#[derive(Debug, Clone, PartialEq)]
pub struct DenoiseRow {
    pub model: String,
    pub lambda: f64,
    /// `(1/n) Σ ‖ŷ_j − y_j‖² / (d σ²)`; with σ = 0 the `σ²` factor is dropped.
    pub normalized_mse: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenoiseReport {
    pub rows: Vec<DenoiseRow>,
    /// Best λ per model, in model order.
    pub best: Vec<DenoiseRow>,
    pub mean_snr: f64,
}

/// Test columns corrupted by i.i.d. N(0, σ²) noise, one substream per column.
pub fn corrupt(test_y: &Matrix, sigma: f64, seed: u64) -> Matrix {
    let mut out = test_y.clone();
    for (j, mut col) in out.column_iter_mut().enumerate() {
        let mut rng = substream(seed, "denoise-noise", j as u64);
        for v in col.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *v += sigma * z;
        }
    }
    out
}

/// Denoise noisy copies of `test_y` with each given model (and the
/// Euclidean baseline) over the λ grid.
pub fn denoise_sweep(
    models: &[(String, Regularizer)],
    test_y: &Matrix,
    sigma: f64,
    lambda_grid: &[f64],
    seed: u64,
    opts: &SolverOptions,
) -> Result<DenoiseReport> {
    if lambda_grid.is_empty() {
        return Err(Error::InvalidArgument("empty lambda grid".into()));
    }
    if let Some(bad) = lambda_grid.iter().find(|l| !(**l >= 0.0)) {
        return Err(Error::InvalidArgument(format!("lambda must be nonnegative, got {bad}")));
    }
    if !(sigma >= 0.0) {
        return Err(Error::InvalidArgument(format!("noise level must be nonnegative, got {sigma}")));
    }
    let (d, n) = test_y.shape();
    if n == 0 {
        return Err(Error::EmptySet);
    }
    for (label, m) in models {
        if m.dim() != d {
            return Err(Error::InvalidArgument(format!("model {label} has dimension {} but data has {d}", m.dim())));
        }
    }
    let noisy = corrupt(test_y, sigma, seed);
    let scale = if sigma > 0.0 { d as f64 * sigma * sigma } else { d as f64 };
    let score = |estimates: Vec<Vector>| {
        let err: f64 = estimates.iter().enumerate().map(|(j, e)| (e - test_y.column(j)).norm_squared()).sum();
        err / n as f64 / scale
    };

    let mut rows = Vec::new();
    let mut best = Vec::new();
    let push_best = |rows: &[DenoiseRow], best: &mut Vec<DenoiseRow>| {
        let winner = rows
            .iter()
            .min_by(|a, b| a.normalized_mse.total_cmp(&b.normalized_mse))
            .expect("grid is nonempty")
            .clone();
        best.push(winner);
    };

    for (label, model) in models {
        let mut model_rows = Vec::new();
        for &lambda in lambda_grid {
            let est: Vec<Result<Vector>> = (0..n)
                .into_par_iter()
                .map(|j| {
                    prox_denoise(model, &noisy.column(j).into_owned(), lambda, opts)
                        .map(|r| r.estimate)
                        .map_err(|e| e.at_column(j))
                })
                .collect();
            let est = est.into_iter().collect::<Result<Vec<_>>>()?;
            model_rows.push(DenoiseRow {
                model: label.clone(),
                lambda,
                normalized_mse: score(est),
            });
        }
        push_best(&model_rows, &mut best);
        rows.extend(model_rows);
    }

    let mut base_rows = Vec::new();
    for &lambda in lambda_grid {
        let est = (0..n).map(|j| euclidean_shrink(&noisy.column(j).into_owned(), lambda)).collect();
        base_rows.push(DenoiseRow {
            model: SHRINKAGE_LABEL.to_string(),
            lambda,
            normalized_mse: score(est),
        });
    }
    push_best(&base_rows, &mut best);
    rows.extend(base_rows);

    let mean_snr = if sigma > 0.0 {
        test_y.norm_squared() / n as f64 / scale
    } else {
        f64::INFINITY
    };
    Ok(DenoiseReport { rows, best, mean_snr })
}

/// Learn every configured model on `train_y`, each from its own random
/// normalized initialization (substream `"init"`, indexed by position).
pub fn learn_denoise_models(
    train_y: &Matrix,
    configs: &[DenoiseModelConfig],
    learn_opts: &LearnOptions,
    seed: u64,
) -> Result<Vec<(String, Regularizer)>> {
    let d = train_y.nrows();
    let mut models = Vec::with_capacity(configs.len());
    for (k, cfg) in configs.iter().enumerate() {
        let mut rng = substream(seed, "init", k as u64);
        let regularizer = match *cfg {
            DenoiseModelConfig::Semidefinite { q, r } => {
                let comps = Matrix::from_fn(q * q, d, |_, _| rng.sample::<f64, _>(StandardNormal) / (d as f64).sqrt());
                let (l0, _) = normalize(&LinearMap::from_stacked(q, comps)?)?;
                learn_semidefinite(train_y, r, &l0, learn_opts)?.regularizer
            }
            DenoiseModelConfig::Polyhedral { p, s } => {
                let d0 = Matrix::from_fn(d, p, |_, _| rng.sample(StandardNormal));
                learn_polyhedral(train_y, s, &d0, learn_opts)?.regularizer
            }
        };
        models.push((cfg.label(), regularizer));
    }
    Ok(models)
}

/// [`learn_denoise_models`] on `train_y`, then [`denoise_sweep`] on `test_y`.
pub fn denoise_experiment(
    train_y: &Matrix,
    test_y: &Matrix,
    sigma: f64,
    lambda_grid: &[f64],
    configs: &[DenoiseModelConfig],
    learn_opts: &LearnOptions,
    seed: u64,
) -> Result<DenoiseReport> {
    if test_y.nrows() != train_y.nrows() {
        return Err(Error::shape("test data rows", train_y.nrows(), test_y.nrows()));
    }
    let models = learn_denoise_models(train_y, configs, learn_opts, seed)?;
    denoise_sweep(&models, test_y, sigma, lambda_grid, seed, &learn_opts.solver_opts)
}
