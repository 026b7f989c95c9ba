//! Configuration, single runs, parameter sweeps and replicate campaigns.
//!
//! Configuration is a JSON object. Missing keys take the full-scale defaults
//! (`L = 200`, `alpha = 1e-4`, `beta = 0.04`, `clip_eps = 0.2`, `rho = 1.0`,
//! `eta = 8`, `zeta = 3`, `epochs = 1000`, `lr_halve_period = 1000`); unknown
//! keys are rejected.
//!
//! Run layout under the output root (`output_dir`, else `$PGG_OUTPUT_DIR`,
//! else `./runs`):
//!
//! ```text
//! {run_id}/timeseries.csv
//! {run_id}/training.csv          learning runs only
//! {run_id}/snap_{epoch}.pgm
//! {run_id}/heat_{epoch}.ppm
//! {sweep_id}/summary.csv
//! {sweep_id}/runs.csv
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::baselines::{FermiConfig, QConfig, QLearning};
use crate::driver::{simulate, Dynamics, FermiDynamics, MetricsSeries, NullRecorder, Recorder, RunDirRecorder};
use crate::error::{Error, Result};
use crate::grpo::{GrpoHyper, GrpoTrainer};
use crate::lattice::{init_lattice, InitMode};
use crate::metrics::{aggregate_runs, write_summary_csv, AggregateStats, RunSummary, SummaryRow};
use crate::policy::{LrSchedule, DEFAULT_HIDDEN};
use crate::seed::{self, derive_seed, tag};

pub const OUTPUT_DIR_ENV: &str = "PGG_OUTPUT_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    GrpoGcc,
    /// GRPO-GCC with `rho` forced to zero.
    Grpo,
    Qlearning,
    Fermi,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::GrpoGcc => "grpo_gcc",
            Algorithm::Grpo => "grpo",
            Algorithm::Qlearning => "qlearning",
            Algorithm::Fermi => "fermi",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub algorithm: Algorithm,
    #[serde(rename = "L")]
    pub side: usize,
    pub r: f64,
    pub rho: f64,
    pub alpha: f64,
    pub beta: f64,
    pub clip_eps: f64,
    pub eta: usize,
    pub zeta: usize,
    pub epochs: usize,
    pub init_mode: InitMode,
    pub hidden: [usize; 3],
    pub ref_update_period: usize,
    pub lr_halve_period: usize,
    pub sigma_guard: f64,
    pub seed: u64,
    pub snapshot_epochs: Vec<usize>,
    pub output_dir: Option<PathBuf>,
    pub run_id: Option<String>,
    pub q_alpha: f64,
    pub q_gamma: f64,
    pub q_epsilon: f64,
    pub fermi_k: f64,
    /// Worker threads; 0 uses every core. Results do not depend on it.
    pub workers: usize,
    /// Skip writing run artifacts.
    pub dry_run: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let q = QConfig::default();
        let hyper = GrpoHyper::default();
        ExperimentConfig {
            algorithm: Algorithm::GrpoGcc,
            side: 200,
            r: 4.0,
            rho: hyper.rho,
            alpha: 1e-4,
            beta: hyper.beta,
            clip_eps: hyper.clip_eps,
            eta: hyper.eta,
            zeta: hyper.zeta,
            epochs: 1000,
            init_mode: InitMode::HalfHalf,
            hidden: DEFAULT_HIDDEN,
            ref_update_period: hyper.ref_update_period,
            lr_halve_period: 1000,
            sigma_guard: hyper.sigma_guard,
            seed: 0,
            snapshot_epochs: vec![0, 1, 10, 100, 1000],
            output_dir: None,
            run_id: None,
            q_alpha: q.alpha,
            q_gamma: q.gamma,
            q_epsilon: q.epsilon,
            fermi_k: FermiConfig::default().k,
            workers: 0,
            dry_run: false,
        }
    }
}

fn check(ok: bool, field: &str, message: impl FnOnce() -> String) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::config(field, message()))
    }
}

impl ExperimentConfig {
    /// Checks cross-field invariants and applies the `grpo` reduction.
    pub fn validated(mut self) -> Result<Self> {
        check(self.side >= 2, "L", || format!("L must be ≥ 2, got {}", self.side))?;
        check(self.r.is_finite() && self.r > 0.0, "r", || {
            format!("r must be positive, got {}", self.r)
        })?;
        check(self.rho.is_finite() && self.rho >= 0.0, "rho", || {
            format!("rho must be ≥ 0, got {}", self.rho)
        })?;
        check(self.alpha.is_finite() && self.alpha > 0.0, "alpha", || {
            format!("alpha must be positive, got {}", self.alpha)
        })?;
        check(self.beta.is_finite() && self.beta >= 0.0, "beta", || {
            format!("beta must be ≥ 0, got {}", self.beta)
        })?;
        check(self.clip_eps > 0.0 && self.clip_eps < 1.0, "clip_eps", || {
            format!("clip_eps must lie in (0, 1), got {}", self.clip_eps)
        })?;
        check(self.eta >= 2, "eta", || "eta must be ≥ 2".to_string())?;
        check(self.zeta >= 1, "zeta", || "zeta must be ≥ 1".to_string())?;
        check(self.epochs >= 1, "epochs", || "epochs must be ≥ 1".to_string())?;
        check(
            self.hidden.iter().all(|&h| (1..=u16::MAX as usize).contains(&h)),
            "hidden",
            || format!("hidden widths must lie in [1, 65535], got {:?}", self.hidden),
        )?;
        check(self.ref_update_period >= 1, "ref_update_period", || {
            "ref_update_period must be ≥ 1".into()
        })?;
        check(self.lr_halve_period >= 1, "lr_halve_period", || {
            "lr_halve_period must be ≥ 1".into()
        })?;
        check(self.sigma_guard >= 0.0, "sigma_guard", || {
            "sigma_guard must be ≥ 0".into()
        })?;
        check(self.q_alpha > 0.0 && self.q_alpha <= 1.0, "q_alpha", || {
            format!("q_alpha must lie in (0, 1], got {}", self.q_alpha)
        })?;
        check((0.0..1.0).contains(&self.q_gamma), "q_gamma", || {
            format!("q_gamma must lie in [0, 1), got {}", self.q_gamma)
        })?;
        check((0.0..=1.0).contains(&self.q_epsilon), "q_epsilon", || {
            format!("q_epsilon must lie in [0, 1], got {}", self.q_epsilon)
        })?;
        check(self.fermi_k > 0.0, "fermi_k", || {
            format!("fermi_k must be positive, got {}", self.fermi_k)
        })?;
        if let Some(id) = &self.run_id {
            check(!id.is_empty(), "run_id", || "run_id must not be empty".into())?;
        }
        self.init_mode.validate()?;
        if self.algorithm == Algorithm::Grpo {
            self.rho = 0.0;
        }
        Ok(self)
    }

    pub fn hyper(&self) -> GrpoHyper {
        GrpoHyper {
            clip_eps: self.clip_eps,
            beta: self.beta,
            eta: self.eta,
            zeta: self.zeta,
            rho: self.rho,
            sigma_guard: self.sigma_guard,
            ref_update_period: self.ref_update_period,
        }
    }

    pub fn schedule(&self) -> LrSchedule {
        LrSchedule {
            base_alpha: self.alpha,
            halve_period: self.lr_halve_period,
        }
    }

    pub fn q_config(&self) -> QConfig {
        QConfig {
            alpha: self.q_alpha,
            gamma: self.q_gamma,
            epsilon: self.q_epsilon,
        }
    }

    pub fn output_root(&self) -> PathBuf {
        self.output_dir
            .clone()
            .or_else(|| std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("runs"))
    }

    pub fn run_id(&self) -> String {
        self.run_id
            .clone()
            .unwrap_or_else(|| format!("{}_L{}_r{}_seed{}", self.algorithm.name(), self.side, self.r, self.seed))
    }

    pub fn run_dir(&self) -> PathBuf {
        self.output_root().join(self.run_id())
    }

    /// A copy with one key replaced, validated like a parsed document.
    pub fn with_value(&self, key: &str, value: Value) -> Result<Self> {
        let mut doc = match serde_json::to_value(self) {
            Ok(Value::Object(map)) => map,
            _ => return Err(Error::Invariant("config does not serialize to an object".into())),
        };
        doc.insert(key.to_string(), value);
        from_object(doc)
    }

    /// Sets a numeric parameter, as used by sweeps. Integral values are
    /// passed as integers so that count-valued keys accept them.
    pub fn with_param(&self, key: &str, value: f64) -> Result<Self> {
        let v = if value.fract() == 0.0 && value >= 0.0 && value < 2f64.powi(53) {
            Value::from(value as u64)
        } else {
            Value::from(value)
        };
        self.with_value(key, v)
    }
}

fn from_object(doc: Map<String, Value>) -> Result<ExperimentConfig> {
    let known = match serde_json::to_value(ExperimentConfig::default()) {
        Ok(Value::Object(map)) => map,
        _ => unreachable!("config serializes to an object"),
    };
    if let Some(k) = doc.keys().find(|k| !known.contains_key(*k)) {
        return Err(Error::config(k.clone(), "unknown key"));
    }
    let config: ExperimentConfig = serde_path_to_error::deserialize(Value::Object(doc)).map_err(|e| {
        let field = e.path().to_string();
        Error::config(field, e.into_inner().to_string())
    })?;
    config.validated()
}

/// Parses a JSON configuration document.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    parse_config_with_overrides(text, &[])
}

/// Parses a document, then applies `key=value` overrides. Override values
/// are read as JSON when possible and as plain strings otherwise.
pub fn parse_config_with_overrides(text: &str, overrides: &[String]) -> Result<ExperimentConfig> {
    let doc: Value = serde_json::from_str(text).map_err(|e| Error::config("<document>", e.to_string()))?;
    let Value::Object(mut map) = doc else {
        return Err(Error::config("<document>", "configuration must be a JSON object"));
    };
    for item in overrides {
        let (key, raw) = item
            .split_once('=')
            .ok_or_else(|| Error::config(item.clone(), "override must have the form key=value"))?;
        let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        map.insert(key.trim().to_string(), value);
    }
    from_object(map)
}

pub fn load_config(path: &Path, overrides: &[String]) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::config("<document>", format!("{}: {e}", path.display())))?;
    parse_config_with_overrides(&text, overrides)
}

/// Runs one configuration to completion without touching the thread pool.
pub fn execute(config: &ExperimentConfig) -> Result<(RunSummary, MetricsSeries)> {
    let initial = init_lattice(
        config.side,
        config.init_mode,
        &mut seed::stream(config.seed, &[tag::LATTICE_INIT]),
    )?;
    let mut dynamics: Box<dyn Dynamics> = match config.algorithm {
        Algorithm::GrpoGcc | Algorithm::Grpo => Box::new(GrpoTrainer::new(
            config.hidden,
            config.hyper(),
            config.schedule(),
            config.r,
            config.seed,
        )),
        Algorithm::Qlearning => Box::new(QLearning::new(initial.len(), config.q_config(), config.r, config.seed)),
        Algorithm::Fermi => Box::new(FermiDynamics {
            r: config.r,
            config: FermiConfig { k: config.fermi_k },
            seed: config.seed,
        }),
    };
    let mut recorder: Box<dyn Recorder> = if config.dry_run {
        Box::new(NullRecorder)
    } else {
        Box::new(RunDirRecorder::create(&config.run_dir())?)
    };
    let series = simulate(
        dynamics.as_mut(),
        initial,
        config.epochs,
        config.r,
        &config.snapshot_epochs,
        recorder.as_mut(),
    )?;
    let summary = RunSummary {
        seed: config.seed,
        final_coop_fraction: series.final_coop_fraction(),
        epochs_run: config.epochs,
    };
    Ok((summary, series))
}

fn in_pool<T: Send>(workers: usize, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    if workers == 0 {
        return f();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::config("workers", e.to_string()))?;
    pool.install(f)
}

/// Runs one configuration, writing its artifacts, on `config.workers` threads.
pub fn run_single(config: &ExperimentConfig) -> Result<RunSummary> {
    Ok(run_with_series(config)?.0)
}

pub fn run_with_series(config: &ExperimentConfig) -> Result<(RunSummary, MetricsSeries)> {
    in_pool(config.workers, || execute(config))
}

/// Parses `start:stop:step` (inclusive) or a comma-separated list.
pub fn parse_values(spec: &str) -> Result<Vec<f64>> {
    let bad = |m: String| Error::config("values", m);
    let num = |s: &str| s.trim().parse::<f64>().map_err(|e| bad(format!("{s:?}: {e}")));
    let values = if let Some((start, rest)) = spec.split_once(':') {
        let (stop, step) = rest
            .split_once(':')
            .ok_or_else(|| bad("range must be start:stop:step".into()))?;
        let (start, stop, step) = (num(start)?, num(stop)?, num(step)?);
        if ![start, stop, step].iter().all(|v| v.is_finite()) || step <= 0.0 || stop < start {
            return Err(bad(format!("empty or invalid range {spec}")));
        }
        let count = ((stop - start) / step + 1e-9).floor() as usize + 1;
        // Round to 10 decimals so 3.0 + 7 * 0.1 prints as 3.7.
        (0..count)
            .map(|i| ((start + i as f64 * step) * 1e10).round() / 1e10)
            .collect()
    } else {
        spec.split(',').map(num).collect::<Result<Vec<_>>>()?
    };
    if values.is_empty() {
        return Err(bad("no values".into()));
    }
    Ok(values)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub param: String,
    pub values: Vec<f64>,
    pub replicates: usize,
    pub base: ExperimentConfig,
    pub sweep_id: Option<String>,
}

impl SweepSpec {
    pub fn sweep_id(&self) -> String {
        self.sweep_id.clone().unwrap_or_else(|| format!("sweep_{}", self.param))
    }

    pub fn dir(&self) -> PathBuf {
        self.base.output_root().join(self.sweep_id())
    }

    /// Child seed for value `vi`, replicate `ri`.
    pub fn child_seed(&self, vi: usize, ri: usize) -> u64 {
        derive_seed(self.base.seed, &[tag::SWEEP_CHILD, vi as u64, ri as u64])
    }

    fn child_config(&self, vi: usize, ri: usize) -> Result<ExperimentConfig> {
        let mut c = self.base.with_param(&self.param, self.values[vi])?;
        c.seed = self.child_seed(vi, ri);
        c.output_dir = Some(self.dir());
        c.run_id = Some(format!("v{vi}_rep{ri}"));
        c.workers = 0;
        Ok(c)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChildRun {
    pub value_index: usize,
    pub replicate: usize,
    pub seed: u64,
    pub outcome: std::result::Result<RunSummary, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOutcome {
    pub rows: Vec<SummaryRow>,
    pub runs: Vec<ChildRun>,
}

impl SweepOutcome {
    pub fn failures(&self) -> impl Iterator<Item = &ChildRun> {
        self.runs.iter().filter(|r| r.outcome.is_err())
    }
}

/// Runs every value x replicate, aggregates per value and writes
/// `summary.csv` and `runs.csv`. Failed children are recorded and skipped.
pub fn run_sweep(spec: &SweepSpec) -> Result<SweepOutcome> {
    if spec.values.is_empty() {
        return Err(Error::config("values", "sweep needs at least one value"));
    }
    if spec.replicates == 0 {
        return Err(Error::config("replicates", "replicates must be ≥ 1"));
    }
    // Surface configuration errors before any run starts.
    for vi in 0..spec.values.len() {
        spec.child_config(vi, 0)?;
    }
    let jobs: Vec<(usize, usize)> = (0..spec.values.len())
        .flat_map(|vi| (0..spec.replicates).map(move |ri| (vi, ri)))
        .collect();
    let runs: Vec<ChildRun> = in_pool(spec.base.workers, || {
        Ok(jobs
            .par_iter()
            .map(|&(vi, ri)| {
                let outcome = spec
                    .child_config(vi, ri)
                    .and_then(|c| execute(&c))
                    .map(|(s, _)| s)
                    .map_err(|e| e.to_string());
                ChildRun {
                    value_index: vi,
                    replicate: ri,
                    seed: spec.child_seed(vi, ri),
                    outcome,
                }
            })
            .collect())
    })?;

    let rows = spec
        .values
        .iter()
        .enumerate()
        .map(|(vi, &value)| {
            let ok: Vec<RunSummary> = runs
                .iter()
                .filter(|r| r.value_index == vi)
                .filter_map(|r| r.outcome.as_ref().ok().copied())
                .collect();
            let mean = if ok.is_empty() {
                f64::NAN
            } else {
                ok.iter().map(|s| s.final_coop_fraction).sum::<f64>() / ok.len() as f64
            };
            SummaryRow {
                param_value: value,
                n: ok.len(),
                mean,
                stats: aggregate_runs(&ok).ok(),
            }
        })
        .collect::<Vec<_>>();

    if !spec.base.dry_run {
        let dir = spec.dir();
        write_summary_csv(&rows, &dir.join("summary.csv"))?;
        let mut text = String::from("param_value,replicate,seed,final_coop_fraction,epochs_run,status\n");
        for r in &runs {
            let value = spec.values[r.value_index];
            match &r.outcome {
                Ok(s) => {
                    text += &format!(
                        "{value},{},{},{:.6},{},ok\n",
                        r.replicate, r.seed, s.final_coop_fraction, s.epochs_run
                    )
                }
                Err(e) => {
                    text += &format!(
                        "{value},{},{},,,\"failed: {}\"\n",
                        r.replicate,
                        r.seed,
                        e.replace('"', "'")
                    )
                }
            }
        }
        let path = dir.join("runs.csv");
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    }
    Ok(SweepOutcome { rows, runs })
}

/// Seeds used by [`run_replicates`].
pub fn replicate_seeds(master: u64, n: usize) -> Vec<u64> {
    (0..n)
        .map(|i| derive_seed(master, &[tag::REPLICATE, i as u64]))
        .collect()
}

/// `n` runs with derived seeds, aggregated. Per-run summaries go to
/// `{run_id}/replicates.csv`.
pub fn run_replicates(config: &ExperimentConfig, n: usize) -> Result<AggregateStats> {
    Ok(run_replicates_with_seeds(config, &replicate_seeds(config.seed, n))?.0)
}

pub fn run_replicates_with_seeds(
    config: &ExperimentConfig,
    seeds: &[u64],
) -> Result<(AggregateStats, Vec<RunSummary>)> {
    if seeds.len() < 2 {
        return Err(Error::InsufficientReplicates(seeds.len()));
    }
    let root = config.run_dir();
    let summaries = in_pool(config.workers, || {
        seeds
            .par_iter()
            .enumerate()
            .map(|(i, &s)| {
                let mut c = config.clone();
                c.seed = s;
                c.output_dir = Some(root.clone());
                c.run_id = Some(format!("rep{i}"));
                execute(&c).map(|(summary, _)| summary)
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let stats = aggregate_runs(&summaries)?;
    if !config.dry_run {
        let mut text = String::from("replicate,seed,final_coop_fraction,epochs_run\n");
        for (i, s) in summaries.iter().enumerate() {
            text += &format!("{i},{},{:.6},{}\n", s.seed, s.final_coop_fraction, s.epochs_run);
        }
        let path = root.join("replicates.csv");
        fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    }
    Ok((stats, summaries))
}
