//! Command-line front end: `tfcl generate|fit|eval|recover`.
//!
//! Every command reads one JSON run config. Relative paths inside it are
//! resolved against the config file's directory.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use clap::{Parser, Subcommand};
use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::bipartite::TaskMatrix;
use crate::data::{
    self, filter_min_minority, generate_simulated, load_dataset, load_ground_truth,
    read_matrix_csv, save_dataset, save_ground_truth, write_matrix_csv, SimulatedSpec,
    SplitFractions,
};
use crate::diagnostics::{
    convergence_report, grouping_certificate, recovery_report, CertificateParams,
};
use crate::error::{Result, TfclError};
use crate::losses::{user_auc, AucLoss, MultiTaskDataset, SquaredLoss};
use crate::personalized::{fit_personalized, mean_auc, LossKind, PersonalizedParams, QConfig};
use crate::solver::{fit, FitHistory, StopReason, TfclConfig};
use crate::spectral::SpectralSolution;

pub const THREADS_ENV: &str = "TFCL_THREADS";

#[derive(Debug, Parser)]
#[command(name = "tfcl", version, about = "Task-feature collaborative learning")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, clap::Args)]
pub struct CommonArgs {
    /// JSON run config.
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory.
    #[arg(long, default_value = "tfcl_out")]
    pub out: PathBuf,
    /// Overrides every seed in the config.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a block-structured dataset.
    Generate(CommonArgs),
    /// Fit a model, optionally grid-searched on a validation split.
    Fit(CommonArgs),
    /// Mean and quantiles of per-user AUC.
    Eval(CommonArgs),
    /// Support recovery against a ground truth.
    Recover(CommonArgs),
}

/// Base model section.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaseModel {
    pub loss: LossKind,
    pub solver: TfclConfig,
}

/// Which solver to run. Exactly one section is expected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelSpec {
    Base(BaseModel),
    Personalized(QConfig),
}

impl ModelSpec {
    fn kind(&self) -> &'static str {
        match self {
            ModelSpec::Base(_) => "base",
            ModelSpec::Personalized(_) => "personalized",
        }
    }

    fn set_seed(&mut self, seed: u64) {
        match self {
            ModelSpec::Base(b) => b.solver.seed = seed,
            ModelSpec::Personalized(q) => q.seed = seed,
        }
    }

    /// Applies a grid point by merging its keys into the solver section.
    fn with_overrides(&self, overrides: &serde_json::Map<String, Value>) -> Result<Self> {
        let mut value = serde_json::to_value(self)?;
        let target = match (self, &mut value) {
            (ModelSpec::Base(_), Value::Object(m)) => {
                m.get_mut("base").and_then(|b| b.get_mut("solver"))
            }
            (ModelSpec::Personalized(_), Value::Object(m)) => m.get_mut("personalized"),
            _ => None,
        };
        let Some(Value::Object(section)) = target else {
            return Err(TfclError::InvalidConfig(
                "model section is malformed".into(),
            ));
        };
        for (k, v) in overrides {
            section.insert(k.clone(), v.clone());
        }
        serde_json::from_value(value)
            .map_err(|e| TfclError::InvalidConfig(format!("grid point: {e}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    #[serde(default)]
    pub fractions: SplitFractions,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RecoverConfig {
    /// Support cutoff; `None` uses `1e-8 * max|W|`.
    pub threshold: Option<f64>,
    /// Lower bound on pre-prox magnitudes for the correct-grouping check.
    pub delta0: Option<f64>,
}

/// The JSON document passed with `--config`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulate: Option<SimulatedSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_minority: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<SplitConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelSpec>,
    /// Each entry overrides solver keys; the best validation AUC wins.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub grid: Vec<serde_json::Map<String, Value>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recover: Option<RecoverConfig>,
}

/// A parsed config plus what is needed for provenance.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: RunConfig,
    pub base_dir: PathBuf,
    pub sha256: String,
}

impl LoadedConfig {
    pub fn load(path: &Path, seed_override: Option<u64>) -> Result<Self> {
        let bytes = fs::read(path)?;
        let mut config: RunConfig = serde_json::from_slice(&bytes)
            .map_err(|e| TfclError::InvalidConfig(format!("{}: {e}", path.display())))?;
        if let Some(seed) = seed_override {
            config.seed = Some(seed);
        }
        if let Some(seed) = config.seed {
            if let Some(sim) = &mut config.simulate {
                sim.seed = seed;
            }
            if let Some(split) = &mut config.split {
                split.seed = seed;
            }
            if let Some(model) = &mut config.model {
                model.set_seed(seed);
            }
        }
        let base_dir = path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."));
        Ok(Self {
            config,
            base_dir,
            sha256: hex(&Sha256::digest(&bytes)),
        })
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    fn require(&self, p: &Option<PathBuf>, name: &str) -> Result<PathBuf> {
        p.as_deref()
            .map(|p| self.resolve(p))
            .ok_or_else(|| TfclError::InvalidConfig(format!("config needs \"{name}\"")))
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Serialize)]
struct Provenance<'a> {
    command: &'a str,
    tool_version: &'a str,
    config_sha256: &'a str,
    seed: Option<u64>,
    config: &'a RunConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    selected_grid_point: Option<usize>,
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn write_provenance(
    out: &Path,
    command: &str,
    cfg: &LoadedConfig,
    grid_point: Option<usize>,
) -> Result<()> {
    write_json(
        &out.join("provenance.json"),
        &Provenance {
            command,
            tool_version: env!("CARGO_PKG_VERSION"),
            config_sha256: &cfg.sha256,
            seed: cfg.config.seed,
            config: &cfg.config,
            selected_grid_point: grid_point,
        },
    )
}

/// Outcome of a command, mapped to the process exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Done,
    NotConverged,
}

pub fn run(cli: Cli) -> Result<Outcome> {
    let (name, args) = match &cli.command {
        Command::Generate(a) => ("generate", a),
        Command::Fit(a) => ("fit", a),
        Command::Eval(a) => ("eval", a),
        Command::Recover(a) => ("recover", a),
    };
    let cfg = LoadedConfig::load(&args.config, args.seed)?;
    fs::create_dir_all(&args.out)?;
    match cli.command {
        Command::Generate(_) => cmd_generate(&cfg, &args.out),
        Command::Fit(_) => cmd_fit(&cfg, &args.out),
        Command::Eval(_) => cmd_eval(&cfg, &args.out),
        Command::Recover(_) => cmd_recover(&cfg, &args.out),
    }
    .and_then(|(outcome, grid_point)| {
        write_provenance(&args.out, name, &cfg, grid_point)?;
        Ok(outcome)
    })
}

/// Entry point used by the binary.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 64 } else { 0 });
        }
    };
    match run(cli) {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::NotConverged) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

type CmdResult = Result<(Outcome, Option<usize>)>;

/// A fitted grid point and its validation AUC.
type GridOutcome = Result<(ModelRun, f64)>;

pub fn cmd_generate(cfg: &LoadedConfig, out: &Path) -> CmdResult {
    let spec = cfg
        .config
        .simulate
        .clone()
        .unwrap_or_else(|| SimulatedSpec {
            seed: cfg.config.seed.unwrap_or(0),
            ..SimulatedSpec::default()
        });
    let (dataset, gt) = generate_simulated(&spec)?;
    save_dataset(&dataset, out.join("dataset.csv"))?;
    save_ground_truth(&gt, out.join("ground_truth.json"))?;
    Ok((Outcome::Done, None))
}

/// A fitted model in memory.
#[derive(Debug, Clone)]
pub enum FittedModel {
    Base(Array2<f64>),
    Personalized(PersonalizedParams),
}

impl FittedModel {
    pub fn weights(&self) -> Array2<f64> {
        match self {
            FittedModel::Base(w) => w.clone(),
            FittedModel::Personalized(p) => p.effective(),
        }
    }

    /// The matrix whose support encodes the learned grouping.
    pub fn grouping_matrix(&self) -> Array2<f64> {
        match self {
            FittedModel::Base(w) => w.clone(),
            FittedModel::Personalized(p) => p.theta_g.clone(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ModelRun {
    pub model: FittedModel,
    pub u: Array2<f64>,
    pub spectrum: Option<SpectralSolution>,
    pub history: FitHistory,
}

/// Fits one model spec on `data`.
pub fn fit_model(spec: &ModelSpec, data: &MultiTaskDataset) -> Result<ModelRun> {
    match spec {
        ModelSpec::Base(base) => {
            let res = match base.loss {
                LossKind::Squared => fit(data, &SquaredLoss::new(data), &base.solver, None)?,
                LossKind::Auc => fit(data, &AucLoss::new(data)?, &base.solver, None)?,
            };
            Ok(ModelRun {
                model: FittedModel::Base(res.w.into_inner()),
                u: res.u,
                spectrum: res.final_spectrum,
                history: res.history,
            })
        }
        ModelSpec::Personalized(q) => {
            let res = fit_personalized(data, q)?;
            Ok(ModelRun {
                model: FittedModel::Personalized(res.params),
                u: res.u,
                spectrum: res.final_spectrum,
                history: res.history,
            })
        }
    }
}

/// Metadata stored next to the matrices of a fitted model.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelMeta {
    pub kind: String,
    pub d: usize,
    #[serde(rename = "T")]
    pub t: usize,
    pub user_ids: Vec<String>,
    pub model: ModelSpec,
    pub lipschitz: f64,
    pub step_constant: f64,
    pub max_grad_inf_norm: f64,
    pub final_objective: f64,
    pub stop_reason: Option<StopReason>,
}

#[derive(Debug, Serialize)]
struct SpectrumSummary<'a> {
    k: usize,
    p: usize,
    q: usize,
    breve_delta: Option<f64>,
    lambda_k: f64,
    lambda_k1: Option<f64>,
    eig_sum: f64,
    weights: Vec<f64>,
    eigenvalues: &'a [f64],
}

/// Writes a fitted model and its history into `dir`.
pub fn save_model_run(
    run: &ModelRun,
    spec: &ModelSpec,
    data: &MultiTaskDataset,
    dir: &Path,
) -> Result<()> {
    fs::create_dir_all(dir)?;
    let h = &run.history;
    write_matrix_csv(dir.join("W.csv"), &run.model.weights())?;
    if let FittedModel::Personalized(p) = &run.model {
        write_matrix_csv(
            dir.join("theta_c.csv"),
            &p.theta_c.clone().insert_axis(Axis(1)),
        )?;
        write_matrix_csv(dir.join("theta_g.csv"), &p.theta_g)?;
        write_matrix_csv(dir.join("theta_p.csv"), &p.theta_p)?;
    }
    write_matrix_csv(dir.join("U.csv"), &run.u)?;
    match &run.spectrum {
        Some(s) => write_json(
            &dir.join("u_spectrum.json"),
            &SpectrumSummary {
                k: s.k,
                p: s.p,
                q: s.q,
                breve_delta: s.breve_delta.is_finite().then_some(s.breve_delta),
                lambda_k: s.lambda_k(),
                lambda_k1: s.lambda_next(),
                eig_sum: s.eig_sum(),
                weights: s.c.to_vec(),
                eigenvalues: s.eig.values.as_slice().unwrap_or(&[]),
            },
        )?,
        None => fs::write(dir.join("u_spectrum.json"), "null\n")?,
    }
    write_history_csv(&dir.join("history.csv"), h)?;
    write_json(&dir.join("convergence.json"), &convergence_report(h))?;
    write_json(
        &dir.join("model.json"),
        &ModelMeta {
            kind: spec.kind().into(),
            d: data.d(),
            t: data.t(),
            user_ids: data.ids().to_vec(),
            model: spec.clone(),
            lipschitz: h.lipschitz,
            step_constant: h.step_constant,
            max_grad_inf_norm: h.grad_inf_norm.iter().copied().fold(0.0, f64::max),
            final_objective: h.final_objective(),
            stop_reason: h.stop_reason,
        },
    )
}

const HISTORY_HEADER: &str =
    "iteration,objective,delta_w,delta_u,subgrad_bound,breve_delta,grad_inf_norm,frozen_u";

/// Per-iteration history without wall-clock timings, so reruns are identical.
pub fn write_history_csv(path: &Path, h: &FitHistory) -> Result<()> {
    let mut text = String::from(HISTORY_HEADER);
    text.push('\n');
    text.push_str(&format!("0,{:?},,,,,,\n", h.initial_objective));
    for i in 0..h.iterations() {
        text.push_str(&format!(
            "{},{:?},{:?},{:?},{:?},{:?},{:?},{}\n",
            i + 1,
            h.objective[i],
            h.delta_w[i],
            h.delta_u[i],
            h.subgrad_bound[i],
            h.breve_delta[i],
            h.grad_inf_norm[i],
            h.frozen_u[i]
        ));
    }
    fs::write(path, text)?;
    Ok(())
}

pub fn read_history_csv(path: &Path, meta: &ModelMeta) -> Result<FitHistory> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut h = FitHistory {
        lipschitz: meta.lipschitz,
        step_constant: meta.step_constant,
        stop_reason: meta.stop_reason,
        ..FitHistory::default()
    };
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        let line = row + 2;
        let num = |i: usize| -> Result<f64> {
            record[i].parse().map_err(|_| TfclError::Parse {
                line,
                msg: format!("bad number {:?}", &record[i]),
            })
        };
        if row == 0 {
            h.initial_objective = num(1)?;
            continue;
        }
        h.objective.push(num(1)?);
        h.delta_w.push(num(2)?);
        h.delta_u.push(num(3)?);
        h.subgrad_bound.push(num(4)?);
        h.breve_delta.push(num(5)?);
        h.grad_inf_norm.push(num(6)?);
        h.frozen_u.push(&record[7] == "true");
        h.elapsed_secs.push(0.0);
    }
    Ok(h)
}

fn load_fit_data(cfg: &LoadedConfig) -> Result<MultiTaskDataset> {
    let data = load_dataset(cfg.require(&cfg.config.data, "data")?)?;
    match cfg.config.min_minority {
        Some(m) => filter_min_minority(&data, m),
        None => Ok(data),
    }
}

/// Worker count from `TFCL_THREADS`, defaulting to 1.
pub fn thread_count() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|n| *n > 0)
        .unwrap_or(1)
}

#[derive(Debug, Serialize)]
struct GridRow {
    point: usize,
    overrides: Value,
    val_auc: Option<f64>,
    error: Option<String>,
}

pub fn cmd_fit(cfg: &LoadedConfig, out: &Path) -> CmdResult {
    let spec = cfg
        .config
        .model
        .clone()
        .ok_or_else(|| TfclError::InvalidConfig("config needs a \"model\" section".into()))?;
    let data = load_fit_data(cfg)?;
    let parts = match &cfg.config.split {
        Some(s) => Some(data::split(&data, s.fractions, s.seed)?),
        None => None,
    };
    let train = parts.as_ref().map_or(&data, |p| &p.train);

    if cfg.config.grid.is_empty() {
        let run = fit_model(&spec, train)?;
        save_model_run(&run, &spec, train, out)?;
        return Ok((outcome_of(&run.history), None));
    }

    let val = parts.as_ref().and_then(|p| p.val.as_ref()).ok_or_else(|| {
        TfclError::InvalidConfig("a grid needs a split with a validation part".into())
    })?;
    let specs: Vec<ModelSpec> = cfg
        .config
        .grid
        .iter()
        .map(|o| spec.with_overrides(o))
        .collect::<Result<_>>()?;
    for s in &specs {
        match s {
            ModelSpec::Base(b) => b.solver.validate(train.d(), train.t())?,
            ModelSpec::Personalized(q) => q.validate(train.d(), train.t())?,
        }
    }

    let results: Mutex<Vec<Option<GridOutcome>>> =
        Mutex::new((0..specs.len()).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    let grid_dir = out.join("grid");
    std::thread::scope(|scope| {
        for _ in 0..thread_count().min(specs.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= specs.len() {
                    break;
                }
                let res = fit_model(&specs[i], train).and_then(|run| {
                    save_model_run(&run, &specs[i], train, &grid_dir.join(format!("point_{i}")))?;
                    let auc = mean_auc(run.model.weights().view(), val)?;
                    Ok((run, auc))
                });
                results.lock().expect("grid results lock")[i] = Some(res);
            });
        }
    });

    let results = results.into_inner().expect("grid results lock");
    let mut rows = Vec::with_capacity(specs.len());
    let mut best: Option<(usize, f64)> = None;
    for (i, r) in results.iter().enumerate() {
        let (val_auc, error) = match r {
            Some(Ok((_, auc))) => (Some(*auc), None),
            Some(Err(e)) => (None, Some(e.to_string())),
            None => (None, Some("not run".into())),
        };
        if let Some(auc) = val_auc.filter(|a| a.is_finite()) {
            if best.is_none_or(|(_, b)| auc > b) {
                best = Some((i, auc));
            }
        }
        rows.push(GridRow {
            point: i,
            overrides: Value::Object(cfg.config.grid[i].clone()),
            val_auc,
            error,
        });
    }
    write_json(&out.join("grid.json"), &rows)?;
    let (best_i, _) = best.ok_or_else(|| {
        TfclError::Degenerate("no grid point produced a finite validation AUC".into())
    })?;
    let Some(Ok((run, _))) = &results[best_i] else {
        unreachable!("best grid point has a result");
    };
    save_model_run(run, &specs[best_i], train, out)?;
    Ok((outcome_of(&run.history), Some(best_i)))
}

fn outcome_of(h: &FitHistory) -> Outcome {
    if h.converged() {
        Outcome::Done
    } else {
        Outcome::NotConverged
    }
}

/// Loads `model.json` and `W.csv` from a model directory.
pub fn load_model(dir: &Path) -> Result<(ModelMeta, Array2<f64>)> {
    let meta: ModelMeta = serde_json::from_str(&fs::read_to_string(dir.join("model.json"))?)?;
    let w = read_matrix_csv(dir.join("W.csv"))?;
    if w.dim() != (meta.d, meta.t) {
        return Err(TfclError::DimensionMismatch(format!(
            "W.csv is {:?}, model.json declares ({}, {})",
            w.dim(),
            meta.d,
            meta.t
        )));
    }
    Ok((meta, w))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub mean_auc: f64,
    pub users_scored: usize,
    pub users_skipped: usize,
    pub min: f64,
    pub q10: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub q90: f64,
    pub max: f64,
    pub per_user: Vec<(String, Option<f64>)>,
}

/// Linear-interpolation quantile of sorted values.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Scores each user of `data` with the model column carrying the same id.
pub fn evaluate(meta: &ModelMeta, w: &Array2<f64>, data: &MultiTaskDataset) -> Result<EvalReport> {
    if data.d() != meta.d {
        return Err(TfclError::DimensionMismatch(format!(
            "data has {} features, model has {}",
            data.d(),
            meta.d
        )));
    }
    let mut per_user = Vec::with_capacity(data.t());
    for (id, task) in data.ids().iter().zip(data.tasks()) {
        let col =
            meta.user_ids.iter().position(|u| u == id).ok_or_else(|| {
                TfclError::InvalidDataset(format!("user {id} is not in the model"))
            })?;
        let scores: Array1<f64> = task.x.dot(&w.column(col));
        per_user.push((id.clone(), user_auc(scores.view(), task.y.view())));
    }
    let mut scored: Vec<f64> = per_user.iter().filter_map(|(_, a)| *a).collect();
    scored.sort_by(f64::total_cmp);
    let mean = if scored.is_empty() {
        f64::NAN
    } else {
        scored.iter().sum::<f64>() / scored.len() as f64
    };
    Ok(EvalReport {
        mean_auc: mean,
        users_scored: scored.len(),
        users_skipped: per_user.len() - scored.len(),
        min: quantile(&scored, 0.0),
        q10: quantile(&scored, 0.1),
        q25: quantile(&scored, 0.25),
        median: quantile(&scored, 0.5),
        q75: quantile(&scored, 0.75),
        q90: quantile(&scored, 0.9),
        max: quantile(&scored, 1.0),
        per_user,
    })
}

pub fn cmd_eval(cfg: &LoadedConfig, out: &Path) -> CmdResult {
    let (meta, w) = load_model(&cfg.require(&cfg.config.model_dir, "model_dir")?)?;
    let data = load_dataset(cfg.require(&cfg.config.data, "data")?)?;
    let report = evaluate(&meta, &w, &data)?;
    println!(
        "mean AUC {:.4} over {} users (q10 {:.4}, median {:.4}, q90 {:.4})",
        report.mean_auc, report.users_scored, report.q10, report.median, report.q90
    );
    write_json(&out.join("eval.json"), &report)?;
    Ok((Outcome::Done, None))
}

#[derive(Debug, Serialize)]
struct RecoverOutput {
    recovery: crate::diagnostics::RecoveryReport,
    certificate: Option<crate::diagnostics::GroupingCertificate>,
    certificate_error: Option<String>,
}

pub fn cmd_recover(cfg: &LoadedConfig, out: &Path) -> CmdResult {
    let dir = cfg.require(&cfg.config.model_dir, "model_dir")?;
    let (meta, w) = load_model(&dir)?;
    let gt = load_ground_truth(cfg.require(&cfg.config.ground_truth, "ground_truth")?)?;
    let rc = cfg.config.recover.clone().unwrap_or_default();
    let grouping = if meta.kind == "personalized" {
        read_matrix_csv(dir.join("theta_g.csv"))?
    } else {
        w
    };
    let recovery = recovery_report(grouping.view(), &gt, rc.threshold)?;
    let abs_w = grouping.mapv(f64::abs);
    write_matrix_csv(out.join("abs_W.csv"), &abs_w)?;

    let history = read_history_csv(&dir.join("history.csv"), &meta)?;
    let eig = crate::spectral::sym_eig(
        crate::bipartite::build_laplacian(&TaskMatrix::new(grouping)?)?.matrix(),
    )?;
    let params = match &meta.model {
        ModelSpec::Base(b) => CertificateParams::from(&b.solver),
        ModelSpec::Personalized(q) => CertificateParams::from(q),
    };
    let cert = grouping_certificate(
        &history,
        eig.values.as_slice().unwrap_or(&[]),
        &params,
        &gt.group_sizes(),
        rc.delta0,
    );
    let (certificate, certificate_error) = match cert {
        Ok(c) => (Some(c), None),
        Err(e) => (None, Some(e.to_string())),
    };
    println!(
        "support precision {:.4} recall {:.4} F1 {:.4}, {} components",
        recovery.precision, recovery.recall, recovery.f1, recovery.components
    );
    write_json(
        &out.join("recovery.json"),
        &RecoverOutput {
            recovery,
            certificate,
            certificate_error,
        },
    )?;
    Ok((Outcome::Done, None))
}
