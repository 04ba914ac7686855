//! Iterations-to-success sweeps over initialization noise and sample size.
//!
//! Each cell `(σ, n, seed)` learns from the first n data columns, starting
//! at `normalize(L⋆ + σ E_seed)`, and records the first outer iteration at
//! which the distance to `L⋆` drops below the success threshold.

use rayon::prelude::*;
use sdreg_core::ensembles::gen_gaussian_map;
use sdreg_core::eval::{dist, dist_solver_options, recovery_success, DistProbeSet};
use sdreg_core::learning::{learn_semidefinite_with, LearnOptions, Observation};
use sdreg_core::rng::derive_seed;
use sdreg_core::scaling::normalize;
use sdreg_core::{Error, LinearMap, Matrix, Result};
use serde::Serialize;

/// Noise map `E_index` for perturbed initializations.
pub fn init_noise(q: usize, d: usize, seed: u64, index: u64) -> LinearMap {
    gen_gaussian_map(q, d, derive_seed(seed, "init-noise", index))
}

/// `normalize(L⋆ + σ E_index)`.
pub fn perturbed_init(truth: &LinearMap, sigma: f64, seed: u64, index: u64) -> Result<LinearMap> {
    let noise = init_noise(truth.q(), truth.d(), seed, index);
    Ok(normalize(&truth.add_scaled(&noise, sigma)?)?.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepCell {
    pub sigma: f64,
    pub n: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CellResult {
    pub sigma: f64,
    pub n: usize,
    pub seed: u64,
    pub success: bool,
    /// First successful iteration, or the number of iterations run.
    pub iterations: usize,
    #[serde(rename = "finalDist")]
    pub final_dist: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepSummary {
    pub sigma: f64,
    pub n: usize,
    /// Mean over the successful runs; NaN when none succeeded.
    #[serde(rename = "meanIterationsToSuccess")]
    pub mean_iterations_to_success: f64,
    pub successes: usize,
    pub runs: usize,
}

/// Run one cell. Learning stops at the first success.
pub fn run_cell(
    truth: &LinearMap,
    y: &Matrix,
    rank: usize,
    cell: SweepCell,
    master_seed: u64,
    probes: &DistProbeSet,
    opts: &LearnOptions,
) -> Result<CellResult> {
    if cell.n > y.ncols() {
        return Err(Error::InvalidArgument(format!(
            "sweep asks for n = {} columns but the data has {}",
            cell.n,
            y.ncols()
        )));
    }
    let data = y.columns(0, cell.n).into_owned();
    let l0 = perturbed_init(truth, cell.sigma, master_seed, cell.seed)?;
    let dist_opts = dist_solver_options();
    let mut last = f64::NAN;
    let mut first_success = None;
    let model = learn_semidefinite_with(&data, rank, &l0, opts, |iter, l| {
        let value = dist(truth, l, probes, &dist_opts)?;
        last = value;
        let ok = recovery_success(value);
        if ok && first_success.is_none() {
            first_success = Some(iter);
        }
        Ok(Observation {
            dist: Some(value),
            stop: ok,
        })
    })?;
    Ok(CellResult {
        sigma: cell.sigma,
        n: cell.n,
        seed: cell.seed,
        success: first_success.is_some(),
        iterations: first_success.unwrap_or(model.trace.iterations()),
        final_dist: last,
    })
}

/// All cells of the grid, in (σ, n, seed) order.
pub fn grid(sigmas: &[f64], ns: &[usize], seeds: &[u64]) -> Vec<SweepCell> {
    let mut cells = Vec::with_capacity(sigmas.len() * ns.len() * seeds.len());
    for &sigma in sigmas {
        for &n in ns {
            for &seed in seeds {
                cells.push(SweepCell { sigma, n, seed });
            }
        }
    }
    cells
}

/// Run every cell in parallel on the current rayon pool and return the
/// results sorted by (σ, n, seed).
pub fn run_sweep(
    truth: &LinearMap,
    y: &Matrix,
    rank: usize,
    cells: &[SweepCell],
    master_seed: u64,
    probe_count: usize,
    opts: &LearnOptions,
) -> Result<Vec<CellResult>> {
    let probes = DistProbeSet::generate(truth.q(), probe_count, master_seed);
    let results: Vec<Result<CellResult>> = cells
        .par_iter()
        .map(|&cell| {
            log::info!("sweep cell sigma={} n={} seed={}", cell.sigma, cell.n, cell.seed);
            run_cell(truth, y, rank, cell, master_seed, &probes, opts)
        })
        .collect();
    let mut rows = results.into_iter().collect::<Result<Vec<_>>>()?;
    rows.sort_by(|a, b| {
        a.sigma
            .total_cmp(&b.sigma)
            .then(a.n.cmp(&b.n))
            .then(a.seed.cmp(&b.seed))
    });
    Ok(rows)
}

/// Mean iterations-to-success per (σ, n), in sorted order.
pub fn summarize(rows: &[CellResult]) -> Vec<SweepSummary> {
    let mut out: Vec<SweepSummary> = Vec::new();
    let mut sums: Vec<usize> = Vec::new();
    for row in rows {
        let same = out.last().is_some_and(|s| s.sigma == row.sigma && s.n == row.n);
        if !same {
            out.push(SweepSummary {
                sigma: row.sigma,
                n: row.n,
                mean_iterations_to_success: f64::NAN,
                successes: 0,
                runs: 0,
            });
            sums.push(0);
        }
        let s = out.last_mut().expect("pushed above");
        s.runs += 1;
        if row.success {
            s.successes += 1;
            *sums.last_mut().expect("pushed above") += row.iterations;
        }
    }
    for (s, total) in out.iter_mut().zip(sums) {
        if s.successes > 0 {
            s.mean_iterations_to_success = total as f64 / s.successes as f64;
        }
    }
    out
}
