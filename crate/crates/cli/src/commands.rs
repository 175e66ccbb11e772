//! Subcommand implementations.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use metapac_core::bounds::{default_grid, optimize_hyperparams, Bound, BoundInputs, Family, Grid};
use metapac_core::data::{
    gen_synthetic, load_dataset, make_permuted_tasks, read_idx, MetaDataset, PermuteSpec,
    SyntheticEnvSpec,
};
use metapac_core::lemmas::{
    default_suite, verify_dgamma, verify_donsker_varadhan_random, verify_maurer,
    verify_subgauss_sq, verify_union_sum, Dist, LemmaVerdict, SubGaussVariant, TrialConfig,
};
use metapac_core::trainer::{adapt_and_eval, train as fit, MetaState, PriorSource, TrainConfig};

use crate::coverage::{run_coverage, CoverageConfig};
use crate::error::{CliError, CliResult};
use crate::report::{num, pairs, text, Report};
use crate::Globals;

fn emit(report: &Report, name: &str, g: &Globals, stdout: &mut dyn Write) -> CliResult<()> {
    let body = report.render(g.format)?;
    stdout.write_all(body.as_bytes())?;
    if let Some(dir) = &g.out {
        report.write(dir, name, g.format)?;
    }
    Ok(())
}

fn usage(flag: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::Usage(format!("{flag}: {msg}"))
}

fn parse_list(flag: &str, s: &str) -> CliResult<Vec<f64>> {
    s.split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|e| usage(flag, format!("'{v}': {e}")))
        })
        .collect()
}

// ---------------------------------------------------------------- bounds

#[derive(Debug, Args)]
pub struct BoundsArgs {
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub m: usize,
    #[arg(long, default_value_t = 0.1)]
    pub delta: f64,
    #[arg(long = "train-loss")]
    pub train_loss: f64,
    #[arg(long = "kl-env")]
    pub kl_env: f64,
    /// One value replicated over tasks, or a comma-separated list of n values.
    #[arg(long = "kl-task")]
    pub kl_task: String,
    /// `all` or a bound name.
    #[arg(long, default_value = "all")]
    pub bound: String,
    /// Points per axis of the default search grids.
    #[arg(long = "grid-points")]
    pub grid_points: Option<usize>,
    /// Override one hyperparameter axis: `NAME=LO:HI:COUNT` (log-spaced) or
    /// `NAME=V1,V2,...`.
    #[arg(long = "grid")]
    pub grid: Vec<String>,
    /// Sub-Gaussian parameter of the loss.
    #[arg(long)]
    pub sigma: Option<f64>,
}

fn parse_axis(spec: &str) -> CliResult<(String, Vec<f64>)> {
    let (name, values) = spec.split_once('=').ok_or_else(|| {
        usage(
            "--grid",
            format!("expected NAME=LO:HI:COUNT or NAME=V1,V2, got '{spec}'"),
        )
    })?;
    let axis = if values.contains(':') {
        let parts: Vec<&str> = values.split(':').collect();
        if parts.len() != 3 {
            return Err(usage(
                "--grid",
                format!("expected LO:HI:COUNT, got '{values}'"),
            ));
        }
        let lo: f64 = parts[0]
            .parse()
            .map_err(|e| usage("--grid", format!("'{}': {e}", parts[0])))?;
        let hi: f64 = parts[1]
            .parse()
            .map_err(|e| usage("--grid", format!("'{}': {e}", parts[1])))?;
        let count: usize = parts[2]
            .parse()
            .map_err(|e| usage("--grid", format!("'{}': {e}", parts[2])))?;
        if !(lo > 0.0 && hi >= lo && count > 0) {
            return Err(usage(
                "--grid",
                format!("need 0 < LO <= HI and COUNT > 0, got '{values}'"),
            ));
        }
        Grid::logspace(lo, hi, count)
    } else {
        parse_list("--grid", values)?
    };
    Ok((name.to_string(), axis))
}

fn resample(axis: &[f64], points: usize, integer: bool) -> Vec<f64> {
    let (lo, hi) = (axis[0], axis[axis.len() - 1]);
    if integer {
        (1..=points).map(|v| v as f64).collect()
    } else {
        Grid::logspace(lo, hi, points)
    }
}

fn grid_for(family: Family, points: Option<usize>, overrides: &BTreeMap<String, Vec<f64>>) -> Grid {
    let base = default_grid(family);
    let axes = family
        .hyper_names()
        .iter()
        .zip(base.axes)
        .map(|(name, axis)| match overrides.get(*name) {
            Some(o) => o.clone(),
            None => match points {
                Some(p) => resample(&axis, p, family == Family::SqrtK),
                None => axis,
            },
        })
        .collect();
    Grid::new(axes)
}

pub fn bounds(a: &BoundsArgs, g: &Globals, stdout: &mut dyn Write) -> CliResult<()> {
    let families: Vec<Family> = if a.bound == "all" {
        Family::ALL.to_vec()
    } else {
        vec![a.bound.parse().map_err(|e| usage("--bound", e))?]
    };
    if a.grid_points == Some(0) {
        return Err(usage("--grid-points", "must be positive"));
    }
    let overrides: BTreeMap<String, Vec<f64>> = a
        .grid
        .iter()
        .map(|s| parse_axis(s))
        .collect::<CliResult<_>>()?;
    let kl = parse_list("--kl-task", &a.kl_task)?;
    let kl_task = if kl.len() == 1 { vec![kl[0]; a.n] } else { kl };

    let inputs = BoundInputs::new(a.n, a.m, a.delta, a.train_loss, a.kl_env, kl_task.clone())
        .and_then(|i| match a.sigma {
            Some(s) => i.with_sigma(s),
            None => Ok(i),
        });
    let config = json!({
        "n": a.n, "m": a.m, "delta": a.delta, "train_loss": a.train_loss, "kl_env": a.kl_env,
        "kl_task": kl_task, "bound": a.bound, "grid_points": a.grid_points, "grid": overrides,
        "sigma": a.sigma,
    });
    let mut report = Report::new(
        "bounds",
        g.seed,
        config,
        vec![
            "bound",
            "status",
            "value",
            "hyperparams",
            "terms",
            "message",
        ],
    );
    let rows: Vec<Result<(Bound, metapac_core::bounds::BoundReport), String>> = families
        .par_iter()
        .map(|&f| {
            let inp = inputs.as_ref().map_err(|e| e.to_string())?;
            optimize_hyperparams(inp, f, &grid_for(f, a.grid_points, &overrides))
                .map_err(|e| e.to_string())
        })
        .collect();
    let mut any_ok = false;
    let mut messages = Vec::new();
    for (f, row) in families.iter().zip(rows) {
        match row {
            Ok((_, r)) => {
                any_ok = true;
                report.push(vec![
                    text(f.name()),
                    text("ok"),
                    num(r.value),
                    pairs(r.hyperparams.iter().map(|(k, v)| (k.as_str(), *v))),
                    pairs(r.terms.iter().map(|(k, v)| (k.as_str(), *v))),
                    text(""),
                ]);
            }
            Err(msg) => {
                messages.push(format!("{f}: {msg}"));
                report.push(vec![
                    text(f.name()),
                    text("invalid"),
                    Value::Null,
                    text(""),
                    text(""),
                    text(msg),
                ]);
            }
        }
    }
    emit(&report, "bounds", g, stdout)?;
    if any_ok {
        Ok(())
    } else {
        Err(CliError::Domain(messages.join("; ")))
    }
}

// ---------------------------------------------------------------- lemmas

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LemmaChoice {
    All,
    Subgauss,
    SubgaussSqrt,
    Maurer,
    Dgamma,
    DonskerVaradhan,
    UnionSum,
}

#[derive(Debug, Args)]
pub struct LemmasArgs {
    #[arg(long, default_value_t = 100_000)]
    pub trials: usize,
    #[arg(long, value_enum, default_value_t = LemmaChoice::All)]
    pub lemma: LemmaChoice,
    /// Sample count for the kl and D_γ moment checks.
    #[arg(long, default_value_t = 10)]
    pub n: usize,
    /// Sample size for the sub-Gaussian checks.
    #[arg(long, default_value_t = 20)]
    pub m: usize,
    #[arg(long, default_value_t = 1.0)]
    pub lambda: f64,
    #[arg(long, default_value_t = 0.7)]
    pub gamma: f64,
    /// `uniform`, `bernoulli:P` or `beta:A,B`.
    #[arg(long, default_value = "uniform")]
    pub dist: String,
    #[arg(long, default_value = "0.05,0.05")]
    pub deltas: String,
    /// Random finite cases for the change-of-measure check.
    #[arg(long, default_value_t = 10_000)]
    pub cases: usize,
    #[arg(long, default_value_t = 8)]
    pub support: usize,
}

fn parse_dist(s: &str) -> CliResult<Dist> {
    let (kind, rest) = s.split_once(':').unwrap_or((s, ""));
    match kind {
        "uniform" if rest.is_empty() => Ok(Dist::Uniform01),
        "bernoulli" => {
            let p = parse_list("--dist", rest)?;
            match p[..] {
                [p] => Ok(Dist::Bernoulli { p }),
                _ => Err(usage("--dist", "bernoulli takes one parameter")),
            }
        }
        "beta" => {
            let v = parse_list("--dist", rest)?;
            match v[..] {
                [a, b] => Ok(Dist::Beta { a, b }),
                _ => Err(usage("--dist", "beta takes two parameters")),
            }
        }
        _ => Err(usage("--dist", format!("unknown distribution '{s}'"))),
    }
}

pub fn lemmas(a: &LemmasArgs, g: &Globals, stdout: &mut dyn Write) -> CliResult<()> {
    let dist = parse_dist(&a.dist)?;
    let deltas = parse_list("--deltas", &a.deltas)?;
    let cfg = TrialConfig {
        trials: a.trials,
        seed: g.seed,
        sample_size: a.m,
        dist,
    };
    let verdicts: Vec<LemmaVerdict> = match a.lemma {
        LemmaChoice::All => default_suite(a.trials, g.seed)?,
        LemmaChoice::Subgauss => vec![verify_subgauss_sq(&cfg, a.lambda, SubGaussVariant::Full)?],
        LemmaChoice::SubgaussSqrt => {
            vec![verify_subgauss_sq(&cfg, a.lambda, SubGaussVariant::Sqrt)?]
        }
        LemmaChoice::Maurer => vec![verify_maurer(&cfg, a.n)?],
        LemmaChoice::Dgamma => vec![verify_dgamma(&cfg, a.n, a.gamma)?],
        LemmaChoice::DonskerVaradhan => {
            let (dv, gibbs) = verify_donsker_varadhan_random(a.cases, a.support, g.seed)?;
            vec![dv, gibbs]
        }
        LemmaChoice::UnionSum => vec![verify_union_sum(&cfg, &deltas)?],
    };
    let lemma = a
        .lemma
        .to_possible_value()
        .map(|v| v.get_name().to_string())
        .unwrap_or_default();
    let config = json!({
        "trials": a.trials, "lemma": lemma, "n": a.n, "m": a.m, "lambda": a.lambda,
        "gamma": a.gamma, "dist": dist, "deltas": deltas, "cases": a.cases, "support": a.support,
    });
    let mut report = Report::new(
        "lemmas",
        g.seed,
        config,
        vec![
            "lemma",
            "empirical",
            "certified",
            "std_err",
            "slack_sds",
            "exact",
            "pass",
        ],
    );
    for v in &verdicts {
        report.push(vec![
            text(v.lemma.clone()),
            num(v.empirical),
            num(v.certified),
            num(v.std_err),
            v.slack_sds.map(num).unwrap_or(Value::Null),
            Value::Bool(v.exact),
            Value::Bool(v.pass),
        ]);
    }
    emit(&report, "lemmas", g, stdout)?;
    let failed: Vec<&str> = verdicts
        .iter()
        .filter(|v| !v.pass)
        .map(|v| v.lemma.as_str())
        .collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Verification(failed.join(", ")))
    }
}

// ---------------------------------------------------------- train / eval

/// Where meta-training and meta-test tasks come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case")]
pub enum DataSource {
    /// Generated environment; its test tasks are used by `eval`.
    Synthetic(SyntheticEnvSpec),
    /// Container files written by `save_dataset`.
    Dataset {
        train: PathBuf,
        #[serde(default)]
        test: Option<PathBuf>,
    },
    /// Permuted tasks over IDX image and label files. The first
    /// `permute.n` tasks train, the next `test_tasks` are held out.
    Idx {
        images: PathBuf,
        labels: PathBuf,
        permute: PermuteSpec,
        #[serde(default)]
        test_tasks: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub trainer: TrainConfig,
    pub data: DataSource,
}

pub struct LoadedData {
    pub train: MetaDataset,
    pub test: Option<MetaDataset>,
}

pub fn read_config(path: &Path, seed: Option<u64>) -> CliResult<RunConfig> {
    let shown = path.display().to_string();
    let raw = std::fs::read_to_string(path).map_err(|e| CliError::Config {
        path: shown.clone(),
        message: e.to_string(),
    })?;
    let mut de = serde_json::Deserializer::from_str(&raw);
    let mut cfg: RunConfig =
        serde_path_to_error::deserialize(&mut de).map_err(|e| CliError::Config {
            path: format!("{shown}: {}", e.path()),
            message: e.inner().to_string(),
        })?;
    if let Some(s) = seed {
        cfg.trainer.seed = s;
    }
    cfg.trainer.validate().map_err(|e| CliError::Config {
        path: format!("{shown}: trainer"),
        message: e.to_string(),
    })?;
    Ok(cfg)
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

pub fn load_data(source: &DataSource, base: &Path) -> CliResult<LoadedData> {
    match source {
        DataSource::Synthetic(spec) => {
            let env = gen_synthetic(spec)?;
            Ok(LoadedData {
                train: env.train,
                test: env.test,
            })
        }
        DataSource::Dataset { train, test } => Ok(LoadedData {
            train: load_dataset(resolve(base, train))?,
            test: test
                .as_ref()
                .map(|t| load_dataset(resolve(base, t)))
                .transpose()?,
        }),
        DataSource::Idx {
            images,
            labels,
            permute,
            test_tasks,
        } => {
            let img = read_idx(resolve(base, images))?;
            let lab = read_idx(resolve(base, labels))?;
            let all = make_permuted_tasks(
                &img,
                &lab,
                &PermuteSpec {
                    n: permute.n + test_tasks,
                    ..*permute
                },
            )?;
            let mut tasks = all.tasks;
            let held = tasks.split_off(permute.n);
            let train = MetaDataset::new(tasks, all.provenance.clone())?;
            let test = if held.is_empty() {
                None
            } else {
                Some(MetaDataset::new(held, all.provenance)?)
            };
            Ok(LoadedData { train, test })
        }
    }
}

fn config_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
}

pub const HISTORY_COLUMNS: [&str; 6] = [
    "epoch",
    "objective",
    "train_loss",
    "kl_env",
    "mean_kl_task",
    "terms",
];

pub fn train(
    a: &TrainArgs,
    g: &Globals,
    seed: Option<u64>,
    stdout: &mut dyn Write,
) -> CliResult<()> {
    let cfg = read_config(&a.config, seed)?;
    let data = load_data(&cfg.data, &config_dir(&a.config))?;
    let (state, history) = fit(&cfg.trainer, &data.train)?;
    let out = g.out_dir();
    std::fs::create_dir_all(&out)?;
    let state_path = out.join("state.json");
    let mut body =
        serde_json::to_string_pretty(&state).map_err(|e| CliError::Domain(e.to_string()))?;
    body.push('\n');
    std::fs::write(&state_path, body)?;

    let config = serde_json::to_value(&cfg).map_err(|e| CliError::Domain(e.to_string()))?;
    let mut report = Report::new("train", cfg.trainer.seed, config, HISTORY_COLUMNS.to_vec());
    for e in &history.epochs {
        report.push(vec![
            json!(e.epoch),
            num(e.objective),
            num(e.train_loss),
            num(e.kl_env),
            num(e.mean_kl_task),
            pairs(e.terms.iter().map(|(k, v)| (k.as_str(), *v))),
        ]);
    }
    let hist_path = report.write(&out, "history", g.format)?;
    writeln!(stdout, "state: {}", state_path.display())?;
    writeln!(stdout, "history: {}", hist_path.display())?;
    if let (Some(first), Some(last)) = (history.epochs.first(), history.epochs.last()) {
        writeln!(
            stdout,
            "objective: {} -> {}",
            first.objective, last.objective
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PriorChoice {
    HyperPosterior,
    HyperPrior,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Trained state; defaults to `<out>/state.json`.
    #[arg(long)]
    pub state: Option<PathBuf>,
    /// Distribution meta-test priors are drawn from.
    #[arg(long, value_enum, default_value_t = PriorChoice::HyperPosterior)]
    pub prior: PriorChoice,
    /// Base name of the written report.
    #[arg(long, default_value = "eval")]
    pub name: String,
}

pub const EVAL_COLUMNS: [&str; 8] = [
    "task",
    "bound",
    "prior",
    "test_loss",
    "test_error",
    "certified_bound",
    "train_loss",
    "kl",
];

pub fn eval(a: &EvalArgs, g: &Globals, seed: Option<u64>, stdout: &mut dyn Write) -> CliResult<()> {
    let cfg = read_config(&a.config, seed)?;
    let data = load_data(&cfg.data, &config_dir(&a.config))?;
    let test = data.test.ok_or_else(|| {
        CliError::Domain("the configured data source has no meta-test tasks".into())
    })?;
    let out = g.out_dir();
    let state_path = a.state.clone().unwrap_or_else(|| out.join("state.json"));
    let raw = std::fs::read_to_string(&state_path).map_err(|e| {
        CliError::Domain(format!("cannot read state {}: {e}", state_path.display()))
    })?;
    let state: MetaState = serde_json::from_str(&raw).map_err(|e| CliError::Config {
        path: state_path.display().to_string(),
        message: e.to_string(),
    })?;
    if state.model.input_dim != test.input_dim || state.model.output_dim != test.output_dim {
        return Err(CliError::Domain(format!(
            "state was trained for {}→{} but test tasks are {}→{}",
            state.model.input_dim, state.model.output_dim, test.input_dim, test.output_dim
        )));
    }
    let (source, prior_name) = match a.prior {
        PriorChoice::HyperPosterior => (PriorSource::HyperPosterior, "hyper-posterior"),
        PriorChoice::HyperPrior => (PriorSource::HyperPrior, "hyper-prior"),
    };
    let outcomes = test
        .tasks
        .par_iter()
        .enumerate()
        .map(|(i, t)| adapt_and_eval(&state, t, &cfg.trainer, i as u64, source))
        .collect::<metapac_core::Result<Vec<_>>>()?;

    let bound_name = cfg.trainer.bound.family().name();
    let mut config = serde_json::to_value(&cfg).map_err(|e| CliError::Domain(e.to_string()))?;
    config["prior"] = text(prior_name);
    let mut report = Report::new("eval", cfg.trainer.seed, config, EVAL_COLUMNS.to_vec());
    for (i, o) in outcomes.iter().enumerate() {
        report.push(vec![
            json!(i),
            text(bound_name),
            text(prior_name),
            num(o.test_loss),
            o.test_error.map(num).unwrap_or(Value::Null),
            num(o.bound),
            num(o.train_loss),
            num(o.kl),
        ]);
    }
    let path = report.write(&out, &a.name, g.format)?;
    writeln!(stdout, "eval: {}", path.display())?;
    let mean = outcomes.iter().map(|o| o.test_loss).sum::<f64>() / outcomes.len() as f64;
    writeln!(
        stdout,
        "mean test loss over {} tasks: {mean}",
        outcomes.len()
    )?;
    Ok(())
}

// -------------------------------------------------------------- coverage

#[derive(Debug, Args)]
pub struct CoverageArgs {
    #[arg(long, default_value = "new-classic")]
    pub bound: String,
    /// Hyperparameter values for bounds that take them, comma-separated.
    #[arg(long)]
    pub params: Option<String>,
    #[arg(long, default_value_t = 500)]
    pub trials: usize,
    #[arg(long, default_value_t = 5)]
    pub n: usize,
    #[arg(long, default_value_t = 50)]
    pub m: usize,
    #[arg(long, default_value_t = 0.1)]
    pub delta: f64,
    #[arg(long, default_value_t = 4)]
    pub dim: usize,
    /// Environment mean, comma-separated; defaults to all ones.
    #[arg(long = "env-mean")]
    pub env_mean: Option<String>,
    #[arg(long = "task-spread", default_value_t = 0.25)]
    pub task_spread: f64,
    #[arg(long = "obs-noise", default_value_t = 0.1)]
    pub obs_noise: f64,
    #[arg(long = "meta-epochs", default_value_t = 20)]
    pub meta_epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long = "mc-u", default_value_t = 8)]
    pub mc_u: usize,
    #[arg(long = "risk-draws", default_value_t = 200)]
    pub risk_draws: usize,
    #[arg(long = "base-steps", default_value_t = 5)]
    pub base_steps: usize,
    #[arg(long = "base-lr", default_value_t = 0.5)]
    pub base_lr: f64,
}

pub const COVERAGE_COLUMNS: [&str; 9] = [
    "bound",
    "trials",
    "violations",
    "violation_rate",
    "delta",
    "mc_slack",
    "pass",
    "mean_bound",
    "mean_risk",
];

pub fn coverage_config(a: &CoverageArgs, seed: u64) -> CliResult<(Bound, CoverageConfig)> {
    let family: Family = a.bound.parse().map_err(|e| usage("--bound", e))?;
    let params = match &a.params {
        Some(p) => parse_list("--params", p)?,
        None => Vec::new(),
    };
    let bound = family
        .with_params(&params)
        .map_err(|e| usage("--params", e))?;
    let env_mean = match &a.env_mean {
        Some(s) => parse_list("--env-mean", s)?,
        None => vec![1.0; a.dim],
    };
    if a.trials == 0 || a.mc_u == 0 || a.risk_draws == 0 {
        return Err(CliError::Domain(
            "trials, mc-u and risk-draws must be positive".into(),
        ));
    }
    let env = SyntheticEnvSpec {
        dim: a.dim,
        env_mean,
        task_spread: a.task_spread,
        obs_noise: a.obs_noise,
        m: a.m,
        n: a.n,
        n_test_tasks: 0,
        m_test: 0,
        seed,
    };
    env.validate()?;
    let trainer = TrainConfig {
        lr: a.lr,
        delta: a.delta,
        ..TrainConfig::new(bound, a.meta_epochs)
    };
    trainer.validate()?;
    Ok((
        bound,
        CoverageConfig {
            trials: a.trials,
            delta: a.delta,
            env,
            trainer,
            mc_u: a.mc_u,
            risk_draws: a.risk_draws,
            base_steps: a.base_steps,
            base_lr: a.base_lr,
            seed,
        },
    ))
}

pub fn coverage(a: &CoverageArgs, g: &Globals, stdout: &mut dyn Write) -> CliResult<()> {
    let (bound, cfg) = coverage_config(a, g.seed)?;
    let (r, _) = run_coverage(&cfg, bound.family().name(), &|inp: &BoundInputs| {
        bound.evaluate(inp)
    })?;
    let config = serde_json::to_value(&cfg).map_err(|e| CliError::Domain(e.to_string()))?;
    let mut report = Report::new("coverage", g.seed, config, COVERAGE_COLUMNS.to_vec());
    report.push(vec![
        text(r.bound.clone()),
        json!(r.trials),
        json!(r.violations),
        num(r.violation_rate),
        num(r.delta),
        num(r.mc_slack),
        Value::Bool(r.pass),
        num(r.mean_bound),
        num(r.mean_risk),
    ]);
    emit(&report, "coverage", g, stdout)?;
    if r.pass {
        Ok(())
    } else {
        Err(CliError::Verification(format!(
            "{}: violation rate {} exceeds {} + {}",
            r.bound, r.violation_rate, r.delta, r.mc_slack
        )))
    }
}

// ---------------------------------------------------------------- report

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Eval CSV reports to merge.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
}

pub const SUMMARY_COLUMNS: [&str; 7] = [
    "bound",
    "prior",
    "tasks",
    "mean_test_loss",
    "std_test_loss",
    "mean_test_error",
    "std_test_error",
];

fn mean_std(v: &[f64]) -> (Value, Value) {
    if v.is_empty() {
        return (Value::Null, Value::Null);
    }
    let k = v.len() as f64;
    let mean = v.iter().sum::<f64>() / k;
    let std = if v.len() > 1 {
        (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (k - 1.0)).sqrt()
    } else {
        0.0
    };
    (num(mean), num(std))
}

#[derive(Default)]
struct Group {
    tasks: usize,
    loss: Vec<f64>,
    error: Vec<f64>,
}

pub fn report(a: &ReportArgs, g: &Globals, stdout: &mut dyn Write) -> CliResult<()> {
    let mut groups: BTreeMap<(String, String), Group> = BTreeMap::new();
    for path in &a.inputs {
        let mut rd = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .from_path(path)
            .map_err(|e| CliError::Domain(format!("{}: {e}", path.display())))?;
        let headers = rd.headers()?.clone();
        let col = |name: &str| {
            headers.iter().position(|h| h == name).ok_or_else(|| {
                CliError::Domain(format!("{}: missing column '{name}'", path.display()))
            })
        };
        let (cb, cp, cl, ce) = (
            col("bound")?,
            col("prior")?,
            col("test_loss")?,
            col("test_error")?,
        );
        for rec in rd.records() {
            let rec = rec?;
            let parse = |i: usize| -> CliResult<Option<f64>> {
                let s = rec.get(i).unwrap_or("");
                if s.is_empty() {
                    return Ok(None);
                }
                s.parse()
                    .map(Some)
                    .map_err(|e| CliError::Domain(format!("{}: '{s}': {e}", path.display())))
            };
            let gr = groups
                .entry((rec[cb].to_string(), rec[cp].to_string()))
                .or_default();
            gr.tasks += 1;
            gr.loss.extend(parse(cl)?);
            gr.error.extend(parse(ce)?);
        }
    }
    let inputs: Vec<String> = a.inputs.iter().map(|p| p.display().to_string()).collect();
    let mut rep = Report::new(
        "report",
        g.seed,
        json!({ "inputs": inputs }),
        SUMMARY_COLUMNS.to_vec(),
    );
    for ((bound, prior), gr) in &groups {
        let (ml, sl) = mean_std(&gr.loss);
        let (me, se) = mean_std(&gr.error);
        rep.push(vec![
            text(bound.clone()),
            text(prior.clone()),
            json!(gr.tasks),
            ml,
            sl,
            me,
            se,
        ]);
    }
    emit(&rep, "report", g, stdout)
}
