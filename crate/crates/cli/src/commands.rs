//! One function per subcommand. Each reads its inputs, runs the library,
//! writes its outputs into the output directory and returns the paths
//! written.

use std::path::{Path, PathBuf};

use sdreg_core::ensembles::{
    ensemble_stats, gen_dataset, gen_gaussian_map, gen_gaussian_matrix, gen_haar_lowrank, rip_estimate,
};
use sdreg_core::eval::{
    denoise_sweep, dist, dist_solver_options, learn_denoise_models, noise_sigma_for_snr, recovery_success,
    DistProbeSet,
};
use sdreg_core::learning::{
    factors_from_matrix, learn_polyhedral, learn_semidefinite_with, preprocess, Observation, Regularizer,
    RegularizerModel,
};
use sdreg_core::linalg::factor_matrix;
use sdreg_core::rng::derive_seed;
use sdreg_core::scaling::{normalization_residual, operator_sinkhorn_normalize, NormalizationReport};
use sdreg_core::{Error, LinearMap, Matrix};
use serde::Serialize;

use crate::config::{DenoiseModelSpec, ExperimentConfig, InitKind, ModelChoice, Task};
use crate::error::{CliError, CliResult};
use crate::files::{read_data, read_map, read_model, write_csv, write_data, write_model};
use crate::sweep::{grid, perturbed_init, run_sweep, summarize};

pub fn run(cfg: &ExperimentConfig, out_dir: &Path) -> CliResult<Vec<PathBuf>> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| CliError::io(out_dir, e))?;
    match cfg.task {
        Task::Generate => generate(cfg, out_dir),
        Task::Learn => learn(cfg, out_dir),
        Task::Evaluate => match cfg.sweep {
            Some(_) => evaluate_sweep(cfg, out_dir),
            None => evaluate(cfg, out_dir),
        },
        Task::Denoise => denoise(cfg, out_dir),
        Task::Diagnose => diagnose(cfg, out_dir),
        Task::Normalize => normalize_cmd(cfg, out_dir),
    }
}

fn normalize_checked(l: &LinearMap, cfg: &ExperimentConfig) -> CliResult<(LinearMap, NormalizationReport)> {
    let (map, report) = operator_sinkhorn_normalize(l, cfg.normalize.tol, cfg.normalize.max_iter)?;
    if !report.converged {
        return Err(Error::NormalizationStalled {
            iterations: report.iterations,
            residual: report.residual,
        }
        .into());
    }
    Ok((map, report))
}

fn check_dims(what: &str, expected: (usize, usize), got: (usize, usize)) -> CliResult<()> {
    if expected != got {
        return Err(CliError::config(format!(
            "dimension mismatch: {what} has (q, d) = {got:?} but {expected:?} is required"
        )));
    }
    Ok(())
}

#[derive(Serialize)]
struct GenerateRow {
    q: usize,
    d: usize,
    n: usize,
    r: usize,
    seed: u64,
    #[serde(rename = "rawEpsilon")]
    raw_epsilon: f64,
    epsilon: f64,
    #[serde(rename = "normalizationIterations")]
    normalization_iterations: usize,
    #[serde(rename = "ripRank")]
    rip_rank: usize,
    #[serde(rename = "ripEstimate")]
    rip_estimate: f64,
}

fn generate(cfg: &ExperimentConfig, out: &Path) -> CliResult<Vec<PathBuf>> {
    let spec = cfg.haar_spec()?;
    let d = cfg.dims.d.expect("validated");
    let raw = gen_gaussian_map(spec.q, d, cfg.seed);
    let (truth, report) = normalize_checked(&raw, cfg)?;
    let xs = gen_haar_lowrank(&spec)?;
    let y = gen_dataset(&truth, &xs)?;
    let rip_rank = (4 * spec.r).min(spec.q);
    let rip = rip_estimate(&truth, rip_rank, cfg.generate.rip_trials, cfg.seed)?;

    let truth_path = out.join("truth.sdr");
    let factors_path = out.join("factors.sdd");
    let data_path = out.join("data.sdd");
    let summary_path = out.join("generate.csv");
    write_model(
        &truth_path,
        &Regularizer::Semidefinite {
            map: truth,
            rank: spec.r,
        },
    )?;
    write_data(&factors_path, &factor_matrix(&xs)?)?;
    write_data(&data_path, &y)?;
    let row = GenerateRow {
        q: spec.q,
        d,
        n: spec.n,
        r: spec.r,
        seed: cfg.seed,
        raw_epsilon: normalization_residual(&raw),
        epsilon: report.residual,
        normalization_iterations: report.iterations,
        rip_rank,
        rip_estimate: rip,
    };
    println!(
        "generated q={} d={} n={} r={}: epsilon(L*) = {:.3e}, rip estimate delta_{} >= {:.4}",
        spec.q, d, spec.n, spec.r, report.residual, rip_rank, rip
    );
    write_csv(&summary_path, &[row])?;
    let mut written = vec![truth_path, factors_path, data_path, summary_path];
    if cfg.generate.export_csv {
        let csv_path = out.join("data.csv");
        write_data(&csv_path, &y)?;
        written.push(csv_path);
    }
    Ok(written)
}

/// Read data and apply the configured preprocessing.
fn learning_data(cfg: &ExperimentConfig, path: &Path) -> CliResult<Matrix> {
    let y = read_data(path)?;
    if let Some(d) = cfg.dims.d {
        if y.nrows() != d {
            return Err(CliError::config(format!(
                "dimension mismatch: {} has d = {} but dims.d = {d}",
                path.display(),
                y.nrows()
            )));
        }
    }
    let pp = cfg.learn.preprocess;
    Ok(if pp.center || pp.unit_norm {
        preprocess(&y, pp.center, pp.unit_norm)
    } else {
        y
    })
}

fn write_trace(path: &Path, model: &RegularizerModel, with_dist: bool) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::format(path, e.to_string()))?;
    let mut header = vec!["iter", "fitResidual", "mapChange"];
    if with_dist {
        header.push("distToTruth");
    }
    let csv_err = |e: csv::Error| CliError::format(path, e.to_string());
    w.write_record(&header).map_err(csv_err)?;
    for rec in &model.trace.records {
        let mut fields = vec![rec.iter.to_string(), rec.fit_residual.to_string(), rec.map_change.to_string()];
        if with_dist {
            fields.push(rec.dist_to_truth.map(|v| v.to_string()).unwrap_or_default());
        }
        w.write_record(&fields).map_err(csv_err)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

fn learn(cfg: &ExperimentConfig, out: &Path) -> CliResult<Vec<PathBuf>> {
    let lc = &cfg.learn;
    let y = learning_data(cfg, cfg.paths.data.as_deref().expect("validated"))?;
    let d = y.nrows();
    let opts = lc.options(cfg.seed);
    let model = match lc.model {
        ModelChoice::Semidefinite => {
            let q = cfg.dims.q.expect("validated");
            let r = cfg.dims.r.expect("validated");
            let truth = match &cfg.paths.truth {
                Some(p) => {
                    let (map, _) = read_map(p)?;
                    check_dims("truth model", (q, d), (map.q(), map.d()))?;
                    Some(map)
                }
                None => None,
            };
            let l0 = match lc.init.kind {
                InitKind::Random => gen_gaussian_map(q, d, derive_seed(cfg.seed, "init", 0)),
                InitKind::Perturbed => perturbed_init(
                    truth.as_ref().expect("validated"),
                    lc.init.sigma.expect("validated"),
                    cfg.seed,
                    lc.init.index,
                )?,
                InitKind::File => {
                    let (map, _) = read_map(cfg.paths.init.as_deref().expect("validated"))?;
                    check_dims("initial model", (q, d), (map.q(), map.d()))?;
                    map
                }
            };
            let probes = truth.as_ref().map(|_| DistProbeSet::generate(q, lc.probes(), cfg.seed));
            let dist_opts = dist_solver_options();
            learn_semidefinite_with(&y, r, &l0, &opts, |_, l| match (&truth, &probes) {
                (Some(t), Some(p)) => {
                    let value = dist(t, l, p, &dist_opts)?;
                    Ok(Observation {
                        dist: Some(value),
                        stop: lc.stop_at_success && recovery_success(value),
                    })
                }
                _ => Ok(Observation::default()),
            })?
        }
        ModelChoice::Polyhedral => {
            let p = cfg.dims.p.expect("validated");
            let s = cfg.dims.s.expect("validated");
            let d0 = match lc.init.kind {
                InitKind::File => {
                    let path = cfg.paths.init.as_deref().expect("validated");
                    match read_model(path)? {
                        Regularizer::Polyhedral { dictionary, .. } if dictionary.shape() == (d, p) => dictionary,
                        _ => {
                            return Err(CliError::config(format!(
                                "{} is not a {d}x{p} polyhedral model",
                                path.display()
                            )))
                        }
                    }
                }
                _ => gen_gaussian_matrix(d, p, derive_seed(cfg.seed, "init", 0)),
            };
            learn_polyhedral(&y, s, &d0, &opts)?
        }
    };
    let t = &model.trace;
    println!(
        "learned {} model: {} outer iterations, converged = {}, stopped early = {}",
        match lc.model {
            ModelChoice::Semidefinite => "semidefinite",
            ModelChoice::Polyhedral => "polyhedral",
        },
        t.iterations(),
        t.converged,
        t.stopped_early
    );
    let model_path = out.join("model.sdr");
    let trace_path = out.join("trace.csv");
    write_model(&model_path, &model.regularizer)?;
    write_trace(&trace_path, &model, cfg.paths.truth.is_some())?;
    Ok(vec![model_path, trace_path])
}

#[derive(Serialize)]
struct EvaluateRow {
    dist: f64,
    success: bool,
    iterations: Option<usize>,
    #[serde(rename = "iterationsToSuccess")]
    iterations_to_success: Option<usize>,
}

/// Iteration count and first successful iteration recorded in a trace CSV.
fn trace_counts(path: &Path) -> CliResult<(usize, Option<usize>)> {
    let mut r = csv::Reader::from_path(path).map_err(|e| CliError::format(path, e.to_string()))?;
    let headers = r.headers().map_err(|e| CliError::format(path, e.to_string()))?.clone();
    let iter_col = headers.iter().position(|h| h == "iter");
    let dist_col = headers.iter().position(|h| h == "distToTruth");
    let iter_col = iter_col.ok_or_else(|| CliError::format(path, "trace has no iter column"))?;
    let mut count = 0;
    let mut first = None;
    for record in r.records() {
        let record = record.map_err(|e| CliError::format(path, e.to_string()))?;
        count += 1;
        if let (Some(c), None) = (dist_col, first) {
            let value: Option<f64> = record.get(c).and_then(|f| f.parse().ok());
            if value.is_some_and(recovery_success) {
                let iter = record[iter_col]
                    .parse()
                    .map_err(|_| CliError::format(path, format!("bad iter value {:?}", &record[iter_col])))?;
                first = Some(iter);
            }
        }
    }
    Ok((count, first))
}

fn evaluate(cfg: &ExperimentConfig, out: &Path) -> CliResult<Vec<PathBuf>> {
    let (truth, _) = read_map(cfg.paths.truth.as_deref().expect("validated"))?;
    let (model, _) = read_map(cfg.paths.model.as_deref().expect("validated"))?;
    check_dims("learned model", (truth.q(), truth.d()), (model.q(), model.d()))?;
    let probes = DistProbeSet::generate(truth.q(), cfg.learn.probes(), cfg.seed);
    let value = dist(&truth, &model, &probes, &dist_solver_options())?;
    let (iterations, iterations_to_success) = match &cfg.paths.trace {
        Some(p) => {
            let (n, first) = trace_counts(p)?;
            (Some(n), first)
        }
        None => (None, None),
    };
    let row = EvaluateRow {
        dist: value,
        success: recovery_success(value),
        iterations,
        iterations_to_success,
    };
    println!("dist = {value:.6e}, success = {}", row.success);
    let path = out.join("evaluate.csv");
    write_csv(&path, &[row])?;
    Ok(vec![path])
}

fn evaluate_sweep(cfg: &ExperimentConfig, out: &Path) -> CliResult<Vec<PathBuf>> {
    let sw = cfg.sweep.as_ref().expect("validated");
    let (truth, file_rank) = read_map(cfg.paths.truth.as_deref().expect("validated"))?;
    let y = learning_data(cfg, cfg.paths.data.as_deref().expect("validated"))?;
    if y.nrows() != truth.d() {
        return Err(CliError::config(format!(
            "dimension mismatch: data has d = {} but the truth model has d = {}",
            y.nrows(),
            truth.d()
        )));
    }
    if let Some(&n) = sw.ns.iter().find(|&&n| n > y.ncols()) {
        return Err(CliError::config(format!("sweep.ns entry {n} exceeds the {} data columns", y.ncols())));
    }
    let rank = cfg.dims.r.unwrap_or(file_rank);
    let cells = grid(&sw.sigmas, &sw.ns, &sw.seeds);
    let probes = sw.probes.unwrap_or(cfg.learn.probes());
    let rows = run_sweep(&truth, &y, rank, &cells, cfg.seed, probes, &cfg.learn.options(cfg.seed))?;
    let summary = summarize(&rows);
    for s in &summary {
        println!(
            "sigma = {}, n = {}: mean iterations to success {:.2} ({}/{} succeeded)",
            s.sigma, s.n, s.mean_iterations_to_success, s.successes, s.runs
        );
    }
    let runs_path = out.join("sweep_runs.csv");
    let summary_path = out.join("sweep.csv");
    write_csv(&runs_path, &rows)?;
    write_csv(&summary_path, &summary)?;
    Ok(vec![runs_path, summary_path])
}

#[derive(Serialize)]
struct DenoiseCsvRow<'a> {
    model: &'a str,
    lambda: f64,
    #[serde(rename = "normalizedMSE")]
    normalized_mse: f64,
}

#[derive(Serialize)]
struct DenoiseBestRow<'a> {
    model: &'a str,
    lambda: f64,
    #[serde(rename = "normalizedMSE")]
    normalized_mse: f64,
    sigma: f64,
    #[serde(rename = "meanSnr")]
    mean_snr: f64,
}

fn denoise(cfg: &ExperimentConfig, out: &Path) -> CliResult<Vec<PathBuf>> {
    let dn = cfg.denoise.as_ref().expect("validated");
    let train = read_data(cfg.paths.train_data.as_deref().expect("validated"))?;
    let test = read_data(cfg.paths.test_data.as_deref().expect("validated"))?;
    if train.nrows() != test.nrows() {
        return Err(CliError::config(format!(
            "dimension mismatch: train data has d = {}, test data has d = {}",
            train.nrows(),
            test.nrows()
        )));
    }
    let sigma = match (dn.sigma, dn.snr) {
        (Some(s), _) => s,
        (None, Some(snr)) => noise_sigma_for_snr(&test, snr),
        (None, None) => unreachable!("validated"),
    };
    let opts = cfg.learn.options(cfg.seed);
    let configs: Vec<_> = dn.models.iter().filter_map(DenoiseModelSpec::learned).collect();
    let mut learned = learn_denoise_models(&train, &configs, &opts, cfg.seed)?.into_iter();
    let mut models = Vec::with_capacity(dn.models.len());
    for spec in &dn.models {
        match spec {
            DenoiseModelSpec::File(path) => {
                let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
                models.push((format!("file:{name}"), read_model(path)?));
            }
            _ => models.push(learned.next().expect("one learned model per config")),
        }
    }
    let report = denoise_sweep(&models, &test, sigma, &dn.lambdas, cfg.seed, &opts.solver_opts)?;
    let rows: Vec<_> = report
        .rows
        .iter()
        .map(|r| DenoiseCsvRow {
            model: &r.model,
            lambda: r.lambda,
            normalized_mse: r.normalized_mse,
        })
        .collect();
    let best: Vec<_> = report
        .best
        .iter()
        .map(|r| DenoiseBestRow {
            model: &r.model,
            lambda: r.lambda,
            normalized_mse: r.normalized_mse,
            sigma,
            mean_snr: report.mean_snr,
        })
        .collect();
    for b in &best {
        println!("{}: best lambda {} with normalized MSE {:.4}", b.model, b.lambda, b.normalized_mse);
    }
    let rows_path = out.join("denoise.csv");
    let best_path = out.join("denoise_best.csv");
    write_csv(&rows_path, &rows)?;
    write_csv(&best_path, &best)?;
    Ok(vec![rows_path, best_path])
}

#[derive(Serialize)]
struct DiagnoseRow {
    quantity: &'static str,
    value: Option<f64>,
    threshold: Option<f64>,
    status: &'static str,
    note: &'static str,
}

impl DiagnoseRow {
    fn value(quantity: &'static str, value: Option<f64>) -> Self {
        Self {
            quantity,
            value,
            threshold: None,
            status: "",
            note: "",
        }
    }

    /// A `value ≤ threshold` hypothesis of the recovery guarantee.
    fn check(quantity: &'static str, value: Option<f64>, threshold: f64) -> Self {
        let status = match value {
            Some(v) if v <= threshold => "pass",
            Some(_) => "fail",
            None => "unavailable",
        };
        Self {
            quantity,
            value,
            threshold: Some(threshold),
            status,
            note: "informational",
        }
    }
}

fn diagnose(cfg: &ExperimentConfig, out: &Path) -> CliResult<Vec<PathBuf>> {
    let (map, file_rank) = read_map(cfg.paths.truth.as_deref().expect("validated"))?;
    let (q, d) = (map.q(), map.d());
    let factors_path = cfg.paths.factors.as_deref().expect("validated");
    let xs = factors_from_matrix(&read_data(factors_path)?, q).map_err(|e| {
        CliError::config(format!("dimension mismatch: {} does not hold q = {q} factors: {e}", factors_path.display()))
    })?;
    let r = cfg.dims.r.unwrap_or(file_rank);
    let stats = ensemble_stats(&xs, cfg.diagnose.omega_limit)?;
    let rip_rank = (4 * r).min(q);
    let rip = rip_estimate(&map, rip_rank, cfg.diagnose.rip_trials, cfg.seed)?;
    let epsilon = normalization_residual(&map);
    let norm = map.spectral_norm();
    let (qf, df) = (q as f64, d as f64);
    let rate = stats
        .omega_ratio
        .map(|w| 2.0 * norm * norm * w + 15.0 * qf * qf * norm * stats.delta_ratio);
    let rows = vec![
        DiagnoseRow::value("lambda", Some(stats.lambda)),
        DiagnoseRow::value("delta", Some(stats.delta)),
        DiagnoseRow::check("deltaOverLambda", Some(stats.delta_ratio), df.sqrt() / (150.0 * qf.powi(3))),
        DiagnoseRow::value("omega", stats.omega),
        DiagnoseRow::check("omegaOverLambda", stats.omega_ratio, df / (40.0 * qf * qf)),
        DiagnoseRow::check("ripEstimate", Some(rip), 1.0 / 20.0),
        DiagnoseRow::value("epsilon", Some(epsilon)),
        DiagnoseRow::value("spectralNorm", Some(norm)),
        DiagnoseRow::check("spectralNormSquared", Some(norm * norm), 5.0 * qf * qf / df),
        DiagnoseRow::check("rateBound", rate, 1.0),
    ];
    for row in &rows {
        match (row.value, row.threshold) {
            (Some(v), Some(t)) => println!("{:<20} {:>12.4e}  (<= {:.4e}: {})", row.quantity, v, t, row.status),
            (Some(v), None) => println!("{:<20} {:>12.4e}", row.quantity, v),
            (None, _) => println!("{:<20} {:>12}", row.quantity, "n/a"),
        }
    }
    let path = out.join("diagnose.csv");
    write_csv(&path, &rows)?;
    Ok(vec![path])
}

#[derive(Serialize)]
struct NormalizeRow {
    iterations: usize,
    residual: f64,
    converged: bool,
    #[serde(rename = "inputResidual")]
    input_residual: f64,
}

fn normalize_cmd(cfg: &ExperimentConfig, out: &Path) -> CliResult<Vec<PathBuf>> {
    let (map, rank) = read_map(cfg.paths.model.as_deref().expect("validated"))?;
    let (normalized, report) = normalize_checked(&map, cfg)?;
    let row = NormalizeRow {
        iterations: report.iterations,
        residual: report.residual,
        converged: report.converged,
        input_residual: normalization_residual(&map),
    };
    println!(
        "normalized in {} iterations, residual {:.3e}",
        report.iterations, report.residual
    );
    let model_path = out.join("normalized.sdr");
    let report_path = out.join("normalize_report.csv");
    write_model(&model_path, &Regularizer::Semidefinite { map: normalized, rank })?;
    write_csv(&report_path, &[row])?;
    Ok(vec![model_path, report_path])
}
