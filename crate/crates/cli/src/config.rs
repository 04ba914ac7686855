//! Experiment configuration.
//!
//! A config is one JSON document. Unknown keys are rejected everywhere, and
//! the fields each task needs are checked before any computation starts.
//! Relative paths are resolved against the directory holding the config.
//!
//! ```json
//! {
//!   "task": "learn",
//!   "seed": 7,
//!   "dims": { "q": 7, "r": 1 },
//!   "paths": { "data": "data.sdd", "truth": "truth.sdr" },
//!   "learn": { "init": { "kind": "perturbed", "sigma": 0.25, "index": 0 } }
//! }
//! ```
//!
//! Sections: `dims` (q, d, n, r, p, s), `paths` (data, truth, model, init,
//! factors, trace, train_data, test_data), `generate`, `learn`, `sweep`
//! (evaluate only), `denoise` (denoise only), `diagnose`, `normalize`.
//! Omitted numeric options take the library defaults.

use std::fmt;
use std::path::{Path, PathBuf};

use sdreg_core::ensembles::{HaarLowRankSpec, OMEGA_Q_LIMIT};
use sdreg_core::eval::{DenoiseModelConfig, DEFAULT_PROBES};
use sdreg_core::learning::{InnerSolver, LearnOptions};
use sdreg_core::scaling;
use serde::Deserialize;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Generate,
    Learn,
    Evaluate,
    Denoise,
    Diagnose,
    Normalize,
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Task::Generate => "generate",
            Task::Learn => "learn",
            Task::Evaluate => "evaluate",
            Task::Denoise => "denoise",
            Task::Diagnose => "diagnose",
            Task::Normalize => "normalize",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dims {
    pub q: Option<usize>,
    pub d: Option<usize>,
    pub n: Option<usize>,
    pub r: Option<usize>,
    pub p: Option<usize>,
    pub s: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub data: Option<PathBuf>,
    pub truth: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub init: Option<PathBuf>,
    pub factors: Option<PathBuf>,
    pub trace: Option<PathBuf>,
    pub train_data: Option<PathBuf>,
    pub test_data: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenerateConfig {
    pub s_min: f64,
    pub s_max: f64,
    /// Random rank-4r probes used for the restricted isometry estimate.
    pub rip_trials: usize,
    /// Also write `data.csv` next to the binary data file.
    pub export_csv: bool,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        Self {
            s_min: 1.0,
            s_max: 1.0,
            rip_trials: 200,
            export_csv: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelChoice {
    #[default]
    Semidefinite,
    Polyhedral,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InnerChoice {
    #[default]
    Svp,
    NuclearProx,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitKind {
    /// Gaussian map (or dictionary) from the `"init"` substream.
    #[default]
    Random,
    /// `normalize(L⋆ + σ E_index)` with L⋆ read from `paths.truth`.
    Perturbed,
    /// Read from `paths.init`.
    File,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitConfig {
    #[serde(default)]
    pub kind: InitKind,
    pub sigma: Option<f64>,
    #[serde(default)]
    pub index: u64,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub max_iter: Option<usize>,
    pub tol: Option<f64>,
    pub damping: Option<f64>,
    pub step_size: Option<f64>,
    pub adaptive_damping: Option<bool>,
}

#[derive(Debug, Clone, Copy, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PreprocessConfig {
    pub center: bool,
    pub unit_norm: bool,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearnConfig {
    #[serde(default)]
    pub model: ModelChoice,
    pub max_outer_iter: Option<usize>,
    pub cauchy_tol: Option<f64>,
    #[serde(default)]
    pub inner_solver: InnerChoice,
    pub lambda: Option<f64>,
    pub warm_start: Option<bool>,
    pub normalize_tol: Option<f64>,
    pub normalize_max_iter: Option<usize>,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub init: InitConfig,
    #[serde(default)]
    pub preprocess: PreprocessConfig,
    /// Probe count for the distance to `paths.truth`.
    pub probes: Option<usize>,
    /// Stop as soon as the distance to the truth drops below the success
    /// threshold.
    #[serde(default)]
    pub stop_at_success: bool,
}

impl LearnConfig {
    pub fn options(&self, seed: u64) -> LearnOptions {
        let base = LearnOptions::default();
        let mut solver_opts = base.solver_opts;
        let s = &self.solver;
        solver_opts.max_iter = s.max_iter.unwrap_or(solver_opts.max_iter);
        solver_opts.tol = s.tol.unwrap_or(solver_opts.tol);
        solver_opts.damping = s.damping.unwrap_or(solver_opts.damping);
        solver_opts.step_size = s.step_size.unwrap_or(solver_opts.step_size);
        solver_opts.adaptive_damping = s.adaptive_damping.unwrap_or(solver_opts.adaptive_damping);
        let inner_solver = match self.inner_solver {
            InnerChoice::Svp => InnerSolver::Svp,
            InnerChoice::NuclearProx => InnerSolver::NuclearProx {
                lambda: self.lambda.unwrap_or(0.0),
            },
        };
        LearnOptions {
            max_outer_iter: self.max_outer_iter.unwrap_or(base.max_outer_iter),
            cauchy_tol: self.cauchy_tol.unwrap_or(base.cauchy_tol),
            inner_solver,
            solver_opts,
            normalize_tol: self.normalize_tol.unwrap_or(base.normalize_tol),
            normalize_max_iter: self.normalize_max_iter.unwrap_or(base.normalize_max_iter),
            warm_start: self.warm_start.unwrap_or(base.warm_start),
            seed,
        }
    }

    pub fn probes(&self) -> usize {
        self.probes.unwrap_or(DEFAULT_PROBES)
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub sigmas: Vec<f64>,
    pub ns: Vec<usize>,
    /// Indices of the initialization noise maps `E_i`.
    pub seeds: Vec<u64>,
    pub probes: Option<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "lowercase")]
pub enum DenoiseModelSpec {
    Semidefinite { q: usize, r: usize },
    Polyhedral { p: usize, s: usize },
    /// A previously learned model file.
    File(PathBuf),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DenoiseConfig {
    pub sigma: Option<f64>,
    /// Target mean signal-to-noise ratio; sets σ from the test data.
    pub snr: Option<f64>,
    pub lambdas: Vec<f64>,
    pub models: Vec<DenoiseModelSpec>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiagnoseConfig {
    pub rip_trials: usize,
    pub omega_limit: usize,
}

impl Default for DiagnoseConfig {
    fn default() -> Self {
        Self {
            rip_trials: 200,
            omega_limit: OMEGA_Q_LIMIT,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NormalizeConfig {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for NormalizeConfig {
    fn default() -> Self {
        Self {
            tol: scaling::DEFAULT_TOL,
            max_iter: scaling::DEFAULT_MAX_ITER,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: Task,
    #[serde(default)]
    pub seed: u64,
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub dims: Dims,
    #[serde(default)]
    pub paths: Paths,
    #[serde(default)]
    pub generate: GenerateConfig,
    #[serde(default)]
    pub learn: LearnConfig,
    pub sweep: Option<SweepConfig>,
    pub denoise: Option<DenoiseConfig>,
    #[serde(default)]
    pub diagnose: DiagnoseConfig,
    #[serde(default)]
    pub normalize: NormalizeConfig,
}

fn need<T: Copy>(value: Option<T>, task: Task, name: &str) -> CliResult<T> {
    value.ok_or_else(|| CliError::config(format!("task {task} requires {name}")))
}

fn need_path<'a>(value: &'a Option<PathBuf>, task: Task, name: &str) -> CliResult<&'a Path> {
    value
        .as_deref()
        .ok_or_else(|| CliError::config(format!("task {task} requires paths.{name}")))
}

fn positive(value: usize, name: &str) -> CliResult<()> {
    if value == 0 {
        return Err(CliError::config(format!("{name} must be positive")));
    }
    Ok(())
}

fn nonnegative(value: f64, name: &str) -> CliResult<()> {
    if !(value >= 0.0 && value.is_finite()) {
        return Err(CliError::config(format!("{name} must be finite and nonnegative, got {value}")));
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> CliResult<Self> {
        serde_json::from_str(text).map_err(|e| CliError::config(e.to_string()))
    }

    /// Read and parse a config, resolving relative paths against its
    /// directory.
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut cfg = Self::parse(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(inner) = p {
                if inner.is_relative() {
                    *inner = base.join(&*inner);
                }
            }
        };
        let paths = &mut self.paths;
        for p in [
            &mut paths.data,
            &mut paths.truth,
            &mut paths.model,
            &mut paths.init,
            &mut paths.factors,
            &mut paths.trace,
            &mut paths.train_data,
            &mut paths.test_data,
            &mut self.out_dir,
        ] {
            fix(p);
        }
        if let Some(dn) = &mut self.denoise {
            for m in &mut dn.models {
                if let DenoiseModelSpec::File(p) = m {
                    if p.is_relative() {
                        *p = base.join(&*p);
                    }
                }
            }
        }
    }

    /// Check everything the task needs. Called before any computation.
    pub fn validate(&self) -> CliResult<()> {
        let task = self.task;
        if self.sweep.is_some() && task != Task::Evaluate {
            return Err(CliError::config(format!("sweep is only valid for task evaluate, not {task}")));
        }
        if self.denoise.is_some() && task != Task::Denoise {
            return Err(CliError::config(format!("denoise is only valid for task denoise, not {task}")));
        }
        match task {
            Task::Generate => self.validate_generate(),
            Task::Learn => self.validate_learn(),
            Task::Evaluate => self.validate_evaluate(),
            Task::Denoise => self.validate_denoise(),
            Task::Diagnose => {
                need_path(&self.paths.truth, task, "truth")?;
                need_path(&self.paths.factors, task, "factors")?;
                positive(self.diagnose.rip_trials, "diagnose.rip_trials")
            }
            Task::Normalize => {
                need_path(&self.paths.model, task, "model")?;
                if !(self.normalize.tol > 0.0) {
                    return Err(CliError::config("normalize.tol must be positive"));
                }
                positive(self.normalize.max_iter, "normalize.max_iter")
            }
        }
    }

    pub fn haar_spec(&self) -> CliResult<HaarLowRankSpec> {
        let task = self.task;
        Ok(HaarLowRankSpec {
            q: need(self.dims.q, task, "dims.q")?,
            r: need(self.dims.r, task, "dims.r")?,
            s_min: self.generate.s_min,
            s_max: self.generate.s_max,
            n: need(self.dims.n, task, "dims.n")?,
            seed: self.seed,
        })
    }

    fn validate_generate(&self) -> CliResult<()> {
        let d = need(self.dims.d, self.task, "dims.d")?;
        let spec = self.haar_spec()?;
        positive(spec.n, "dims.n")?;
        if d < 2 {
            return Err(CliError::config(format!("dims.d must be at least 2, got {d}")));
        }
        spec.validate().map_err(|e| CliError::config(format!("generate: {e}")))?;
        positive(self.generate.rip_trials, "generate.rip_trials")
    }

    fn validate_learn_options(&self) -> CliResult<()> {
        let lc = &self.learn;
        if lc.inner_solver == InnerChoice::Svp && lc.lambda.is_some() {
            return Err(CliError::config("learn.lambda applies only to inner_solver nuclear-prox"));
        }
        if lc.inner_solver == InnerChoice::NuclearProx && lc.lambda.is_none() {
            return Err(CliError::config("inner_solver nuclear-prox requires learn.lambda"));
        }
        positive(lc.probes(), "learn.probes")?;
        lc.options(self.seed)
            .validate()
            .map_err(|e| CliError::config(format!("learn: {e}")))
    }

    fn validate_learn(&self) -> CliResult<()> {
        let task = self.task;
        need_path(&self.paths.data, task, "data")?;
        self.validate_learn_options()?;
        let lc = &self.learn;
        match lc.model {
            ModelChoice::Semidefinite => {
                let q = need(self.dims.q, task, "dims.q")?;
                let r = need(self.dims.r, task, "dims.r")?;
                if r == 0 || r > q {
                    return Err(CliError::config(format!("dims.r = {r} must lie in 1..=q = {q}")));
                }
            }
            ModelChoice::Polyhedral => {
                let p = need(self.dims.p, task, "dims.p")?;
                let s = need(self.dims.s, task, "dims.s")?;
                if s == 0 || s > p {
                    return Err(CliError::config(format!("dims.s = {s} must lie in 1..=p = {p}")));
                }
                if lc.inner_solver != InnerChoice::Svp {
                    return Err(CliError::config("polyhedral learning uses the sparse solver; drop learn.inner_solver"));
                }
                if self.paths.truth.is_some() || lc.stop_at_success {
                    return Err(CliError::config("distance to a truth model is only defined for semidefinite models"));
                }
                if lc.init.kind == InitKind::Perturbed {
                    return Err(CliError::config("learn.init.kind perturbed is only defined for semidefinite models"));
                }
            }
        }
        match lc.init.kind {
            InitKind::Random => {
                if lc.init.sigma.is_some() {
                    return Err(CliError::config("learn.init.sigma applies only to init kind perturbed"));
                }
            }
            InitKind::Perturbed => {
                need_path(&self.paths.truth, task, "truth (for init kind perturbed)")?;
                let sigma = lc
                    .init
                    .sigma
                    .ok_or_else(|| CliError::config("learn.init.kind perturbed requires learn.init.sigma"))?;
                nonnegative(sigma, "learn.init.sigma")?;
            }
            InitKind::File => {
                need_path(&self.paths.init, task, "init (for init kind file)")?;
            }
        }
        if lc.stop_at_success && self.paths.truth.is_none() {
            return Err(CliError::config("learn.stop_at_success requires paths.truth"));
        }
        Ok(())
    }

    fn validate_evaluate(&self) -> CliResult<()> {
        let task = self.task;
        need_path(&self.paths.truth, task, "truth")?;
        match &self.sweep {
            None => {
                need_path(&self.paths.model, task, "model")?;
                positive(self.learn.probes(), "learn.probes")
            }
            Some(sw) => {
                need_path(&self.paths.data, task, "data (for sweep mode)")?;
                if sw.sigmas.is_empty() || sw.ns.is_empty() || sw.seeds.is_empty() {
                    return Err(CliError::config("sweep.sigmas, sweep.ns and sweep.seeds must be nonempty"));
                }
                for &s in &sw.sigmas {
                    nonnegative(s, "sweep.sigmas entry")?;
                }
                for &n in &sw.ns {
                    positive(n, "sweep.ns entry")?;
                }
                if let Some(p) = sw.probes {
                    positive(p, "sweep.probes")?;
                }
                if self.learn.model != ModelChoice::Semidefinite {
                    return Err(CliError::config("sweep mode learns semidefinite models only"));
                }
                self.validate_learn_options()
            }
        }
    }

    fn validate_denoise(&self) -> CliResult<()> {
        let task = self.task;
        need_path(&self.paths.train_data, task, "train_data")?;
        need_path(&self.paths.test_data, task, "test_data")?;
        let dn = self
            .denoise
            .as_ref()
            .ok_or_else(|| CliError::config("task denoise requires a denoise section"))?;
        match (dn.sigma, dn.snr) {
            (Some(s), None) => nonnegative(s, "denoise.sigma")?,
            (None, Some(snr)) => {
                if !(snr > 0.0 && snr.is_finite()) {
                    return Err(CliError::config(format!("denoise.snr must be positive, got {snr}")));
                }
            }
            _ => return Err(CliError::config("denoise needs exactly one of sigma and snr")),
        }
        if dn.lambdas.is_empty() {
            return Err(CliError::config("denoise.lambdas must be nonempty"));
        }
        for &l in &dn.lambdas {
            nonnegative(l, "denoise.lambdas entry")?;
        }
        if dn.models.is_empty() {
            return Err(CliError::config("denoise.models must be nonempty"));
        }
        for m in &dn.models {
            match *m {
                DenoiseModelSpec::Semidefinite { q, r } if r == 0 || r > q || q == 0 => {
                    return Err(CliError::config(format!("semidefinite model needs 1 <= r <= q, got q = {q}, r = {r}")));
                }
                DenoiseModelSpec::Polyhedral { p, s } if s == 0 || s > p => {
                    return Err(CliError::config(format!("polyhedral model needs 1 <= s <= p, got p = {p}, s = {s}")));
                }
                _ => {}
            }
        }
        self.validate_learn_options()
    }
}

impl DenoiseModelSpec {
    pub fn learned(&self) -> Option<DenoiseModelConfig> {
        match *self {
            DenoiseModelSpec::Semidefinite { q, r } => Some(DenoiseModelConfig::Semidefinite { q, r }),
            DenoiseModelSpec::Polyhedral { p, s } => Some(DenoiseModelConfig::Polyhedral { p, s }),
            DenoiseModelSpec::File(_) => None,
        }
    }
}
