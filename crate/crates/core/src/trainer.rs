//! Bound-minimizing meta-learner.
//!
//! The hyper-posterior is `N(θ, κ_s² I)` over the flattened hyperparameter
//! `u = (prior means, prior log-variances)`; the hyper-prior is
//! `N(0, κ_p² I)`. Each training task carries a diagonal Gaussian posterior.
//! The objective is a meta-generalization bound evaluated on Monte-Carlo
//! estimates of the empirical loss and the task KL terms, and its gradient
//! is assembled from the bound's sensitivities, the closed-form KL
//! gradients and reparameterized loss gradients.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::{mcallester_with_grad, Bound, BoundInputs, BoundReport};
use crate::data::{MetaDataset, Samples, TaskData};
use crate::error::{Error, Result};
use crate::gaussian::{
    kl_diag_with_grad, kl_hyper, reparam_grads, DiagGaussian, IsotropicGaussian, KlMode,
};
use crate::model::{LinearModel, Loss};
use crate::rng::Stream;

const TAG_INIT: u64 = 0x696e;
const TAG_EPOCH: u64 = 0x6570;
const TAG_ADAPT: u64 = 0x6164;
const TAG_HYPER_PRIOR: u64 = 0x6870;

/// Mean of the log-variance initialisation.
pub const INIT_LOG_VAR_MEAN: f64 = -10.0;
/// Standard deviation of the log-variance initialisation.
pub const INIT_LOG_VAR_SD: f64 = 0.1;

fn d_lr() -> f64 {
    1e-3
}
fn d_mc_u() -> usize {
    3
}
fn d_mc_w() -> usize {
    5
}
fn d_delta() -> f64 {
    0.1
}
fn d_kappa_p() -> f64 {
    100.0
}
fn d_kappa_s() -> f64 {
    1e-3
}
fn d_eval() -> usize {
    100
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Objective.
    #[serde(flatten)]
    pub bound: Bound,
    #[serde(default = "d_lr")]
    pub lr: f64,
    pub epochs: usize,
    #[serde(default = "d_mc_u")]
    pub mc_samples_u: usize,
    #[serde(default = "d_mc_w")]
    pub mc_samples_w: usize,
    #[serde(default = "d_delta")]
    pub delta: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub loss: Loss,
    #[serde(default = "d_kappa_p")]
    pub kappa_p_sq: f64,
    #[serde(default = "d_kappa_s")]
    pub kappa_s_sq: f64,
    /// Hold the prior log-variances at `θ` instead of sampling and learning them.
    #[serde(default)]
    pub freeze_prior_var: bool,
    /// Reuse one noise stream for every epoch instead of one per epoch.
    #[serde(default)]
    pub fixed_noise: bool,
    /// Posterior draws used for the reported test loss and single-task bound.
    #[serde(default = "d_eval")]
    pub eval_samples: usize,
}

impl TrainConfig {
    pub fn new(bound: Bound, epochs: usize) -> Self {
        TrainConfig {
            bound,
            lr: d_lr(),
            epochs,
            mc_samples_u: d_mc_u(),
            mc_samples_w: d_mc_w(),
            delta: d_delta(),
            seed: 0,
            loss: Loss::default(),
            kappa_p_sq: d_kappa_p(),
            kappa_s_sq: d_kappa_s(),
            freeze_prior_var: false,
            fixed_noise: false,
            eval_samples: d_eval(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::domain(format!(
                "lr must be a nonnegative number, got {}",
                self.lr
            )));
        }
        if self.mc_samples_u == 0 || self.mc_samples_w == 0 || self.eval_samples == 0 {
            return Err(Error::domain("Monte-Carlo sample counts must be positive"));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::domain(format!(
                "delta must lie in (0,1), got {}",
                self.delta
            )));
        }
        for (name, v) in [
            ("kappa_p_sq", self.kappa_p_sq),
            ("kappa_s_sq", self.kappa_s_sq),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::domain(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// Prior means and log-variances over model weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameter {
    pub prior_means: Vec<f64>,
    pub prior_log_vars: Vec<f64>,
}

impl Hyperparameter {
    pub fn from_flat(u: &[f64]) -> Self {
        let d = u.len() / 2;
        Hyperparameter {
            prior_means: u[..d].to_vec(),
            prior_log_vars: u[d..].to_vec(),
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.prior_means
            .iter()
            .chain(&self.prior_log_vars)
            .copied()
            .collect()
    }

    pub fn prior(&self) -> Result<DiagGaussian> {
        DiagGaussian::new(self.prior_means.clone(), self.prior_log_vars.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaState {
    pub model: LinearModel,
    /// Hyper-posterior mean over the flattened hyperparameter.
    pub theta: Vec<f64>,
    pub kappa_s_sq: f64,
    pub kappa_p_sq: f64,
    pub per_task: Vec<DiagGaussian>,
}

impl MetaState {
    pub fn dim(&self) -> usize {
        self.model.num_params()
    }

    pub fn hyper_posterior(&self) -> Result<IsotropicGaussian> {
        IsotropicGaussian::new(self.theta.clone(), self.kappa_s_sq)
    }

    pub fn hyper_prior(&self) -> Result<IsotropicGaussian> {
        IsotropicGaussian::centered(self.theta.len(), self.kappa_p_sq)
    }

    /// `u = θ + κ_s ε`, with the log-variance half pinned to `θ` when frozen.
    fn hyper_draw(&self, eps: &[f64], freeze: bool) -> Vec<f64> {
        let d = self.dim();
        let ks = self.kappa_s_sq.sqrt();
        self.theta
            .iter()
            .zip(eps)
            .enumerate()
            .map(|(j, (t, e))| if freeze && j >= d { *t } else { t + ks * e })
            .collect()
    }
}

fn glorot(model: &LinearModel, s: &mut Stream) -> Vec<f64> {
    let lim = model.glorot_limit();
    (0..model.num_params())
        .map(|_| s.uniform_range(-lim, lim))
        .collect()
}

fn init_log_vars(d: usize, s: &mut Stream) -> Vec<f64> {
    (0..d)
        .map(|_| INIT_LOG_VAR_MEAN + INIT_LOG_VAR_SD * s.normal())
        .collect()
}

pub fn init_state(cfg: &TrainConfig, data: &MetaDataset) -> Result<MetaState> {
    cfg.validate()?;
    if data.n() < 2 {
        return Err(Error::domain(format!(
            "meta-training needs at least 2 tasks, got {}",
            data.n()
        )));
    }
    let model = LinearModel::new(data.input_dim, data.output_dim);
    let d = model.num_params();
    let mut s = Stream::keyed(cfg.seed, &[TAG_INIT]);
    let hyper = Hyperparameter {
        prior_means: glorot(&model, &mut s),
        prior_log_vars: init_log_vars(d, &mut s),
    };
    let per_task = (0..data.n())
        .map(|_| {
            let mean = glorot(&model, &mut s);
            DiagGaussian::new(mean, init_log_vars(d, &mut s))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MetaState {
        model,
        theta: hyper.flatten(),
        kappa_s_sq: cfg.kappa_s_sq,
        kappa_p_sq: cfg.kappa_p_sq,
        per_task,
    })
}

/// Gradients of the objective, shaped like [`MetaState`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub theta: Vec<f64>,
    pub task_mean: Vec<Vec<f64>>,
    pub task_log_var: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn flatten(&self) -> Vec<f64> {
        let mut v = self.theta.clone();
        for (m, l) in self.task_mean.iter().zip(&self.task_log_var) {
            v.extend(m);
            v.extend(l);
        }
        v
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveEval {
    pub value: f64,
    pub report: BoundReport,
    pub inputs: BoundInputs,
    pub grad: Gradients,
}

/// Monte-Carlo mean of the empirical loss over posterior draws, with its
/// gradient with respect to the posterior mean and log-variance.
fn mc_loss_with_grad(
    model: &LinearModel,
    q: &DiagGaussian,
    train: &Samples,
    loss: Loss,
    eps: &[Vec<f64>],
) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let d = q.dim();
    let k = eps.len() as f64;
    let (mut gm, mut gl) = (vec![0.0; d], vec![0.0; d]);
    let mut total = 0.0;
    for e in eps {
        let w = q.sample_with(e.clone()).value;
        let mut gw = vec![0.0; d];
        total += model.empirical_loss_grad(&w, train, loss, 1.0 / k, &mut gw);
        let (a, b) = reparam_grads(q, e, &gw)?;
        gm.iter_mut().zip(a).for_each(|(x, y)| *x += y);
        gl.iter_mut().zip(b).for_each(|(x, y)| *x += y);
    }
    Ok((total / k, gm, gl))
}

struct TaskPass {
    loss: f64,
    loss_gm: Vec<f64>,
    loss_gl: Vec<f64>,
    kl: f64,
    kl_gm: Vec<f64>,
    kl_gl: Vec<f64>,
    /// d kl / d u, averaged over the hyper draws.
    kl_gu: Vec<f64>,
}

/// Evaluates the objective and its gradient. Draws all noise from `stream`
/// up front: the hyper draws first, then each task's posterior draws.
pub fn objective(
    state: &MetaState,
    data: &MetaDataset,
    cfg: &TrainConfig,
    stream: &mut Stream,
) -> Result<ObjectiveEval> {
    let d = state.dim();
    if data.n() != state.per_task.len()
        || data.input_dim != state.model.input_dim
        || data.output_dim != state.model.output_dim
    {
        return Err(Error::domain("state and dataset dimensions disagree"));
    }
    let u_eps: Vec<Vec<f64>> = (0..cfg.mc_samples_u)
        .map(|_| stream.normals(2 * d))
        .collect();
    let w_eps: Vec<Vec<Vec<f64>>> = (0..data.n())
        .map(|_| (0..cfg.mc_samples_w).map(|_| stream.normals(d)).collect())
        .collect();
    let priors = u_eps
        .iter()
        .map(|e| Hyperparameter::from_flat(&state.hyper_draw(e, cfg.freeze_prior_var)).prior())
        .collect::<Result<Vec<_>>>()?;

    let passes = (0..data.n())
        .into_par_iter()
        .map(|i| {
            let q = &state.per_task[i];
            let (loss, loss_gm, loss_gl) =
                mc_loss_with_grad(&state.model, q, &data.tasks[i].train, cfg.loss, &w_eps[i])?;
            let ku = priors.len() as f64;
            let mut pass = TaskPass {
                loss,
                loss_gm,
                loss_gl,
                kl: 0.0,
                kl_gm: vec![0.0; d],
                kl_gl: vec![0.0; d],
                kl_gu: vec![0.0; 2 * d],
            };
            for p in &priors {
                let (kl, g) = kl_diag_with_grad(q, p)?;
                pass.kl += kl / ku;
                for k in 0..d {
                    pass.kl_gm[k] += g.q_mean[k] / ku;
                    pass.kl_gl[k] += g.q_log_var[k] / ku;
                    pass.kl_gu[k] += g.p_mean[k] / ku;
                    pass.kl_gu[d + k] += g.p_log_var[k] / ku;
                }
            }
            Ok(pass)
        })
        .collect::<Result<Vec<_>>>()?;

    if passes
        .iter()
        .any(|p| !(p.loss.is_finite() && p.kl.is_finite()))
    {
        return Err(Error::Numerical {
            epoch: 0,
            message: "empirical loss or task KL is not finite".to_string(),
        });
    }
    let n = data.n() as f64;
    let q_hyper = state.hyper_posterior()?;
    let p_hyper = state.hyper_prior()?;
    let inputs = BoundInputs::new(
        data.n(),
        data.m(),
        cfg.delta,
        passes.iter().map(|p| p.loss).sum::<f64>() / n,
        kl_hyper(&q_hyper, &p_hyper, KlMode::StandardGaussian)?,
        passes.iter().map(|p| p.kl).collect(),
    )?;
    let report = cfg.bound.evaluate(&inputs)?;
    let sens = &report.sensitivity;

    let mut theta: Vec<f64> = state
        .theta
        .iter()
        .map(|t| sens.kl_env * t / state.kappa_p_sq)
        .collect();
    let mut task_mean = Vec::with_capacity(passes.len());
    let mut task_log_var = Vec::with_capacity(passes.len());
    for (p, s_kl) in passes.iter().zip(&sens.kl_task) {
        let s_train = sens.train / n;
        task_mean.push(
            p.loss_gm
                .iter()
                .zip(&p.kl_gm)
                .map(|(a, b)| s_train * a + s_kl * b)
                .collect(),
        );
        task_log_var.push(
            p.loss_gl
                .iter()
                .zip(&p.kl_gl)
                .map(|(a, b)| s_train * a + s_kl * b)
                .collect(),
        );
        theta
            .iter_mut()
            .zip(&p.kl_gu)
            .for_each(|(t, g)| *t += s_kl * g);
    }
    Ok(ObjectiveEval {
        value: report.value,
        report,
        inputs,
        grad: Gradients {
            theta,
            task_mean,
            task_log_var,
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub objective: f64,
    pub train_loss: f64,
    pub kl_env: f64,
    pub mean_kl_task: f64,
    pub terms: Vec<(String, f64)>,
    /// Not part of any report: it would break byte-identical reruns.
    #[serde(skip)]
    pub wall_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
}

fn epoch_stream(cfg: &TrainConfig, tag: u64, path: &[u64], epoch: usize) -> Stream {
    let mut key = vec![tag];
    key.extend_from_slice(path);
    if !cfg.fixed_noise {
        key.push(epoch as u64);
    }
    Stream::keyed(cfg.seed, &key)
}

fn check_finite(epoch: usize, what: &str, v: &[f64]) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numerical {
            epoch,
            message: format!("{what} is not finite"),
        })
    }
}

fn sgd_step(state: &mut MetaState, g: &Gradients, lr: f64, freeze: bool) {
    let d = state.dim();
    for (j, (t, gj)) in state.theta.iter_mut().zip(&g.theta).enumerate() {
        if !(freeze && j >= d) {
            *t -= lr * gj;
        }
    }
    for ((q, gm), gl) in state
        .per_task
        .iter_mut()
        .zip(&g.task_mean)
        .zip(&g.task_log_var)
    {
        q.mean_mut()
            .iter_mut()
            .zip(gm)
            .for_each(|(x, y)| *x -= lr * y);
        q.log_var_mut()
            .iter_mut()
            .zip(gl)
            .for_each(|(x, y)| *x -= lr * y);
    }
}

/// Full-batch SGD for `cfg.epochs` epochs from [`init_state`]. Each history
/// entry is the objective at the start of its epoch.
pub fn train(cfg: &TrainConfig, data: &MetaDataset) -> Result<(MetaState, TrainHistory)> {
    let state = init_state(cfg, data)?;
    train_from(state, cfg, data)
}

pub fn train_from(
    mut state: MetaState,
    cfg: &TrainConfig,
    data: &MetaDataset,
) -> Result<(MetaState, TrainHistory)> {
    cfg.validate()?;
    let mut history = TrainHistory::default();
    for epoch in 0..cfg.epochs {
        let start = Instant::now();
        let mut s = epoch_stream(cfg, TAG_EPOCH, &[], epoch);
        let ev = objective(&state, data, cfg, &mut s).map_err(|e| match e {
            Error::Numerical { message, .. } => Error::Numerical { epoch, message },
            other => other,
        })?;
        if !ev.value.is_finite() {
            return Err(Error::Numerical {
                epoch,
                message: format!("objective is {}", ev.value),
            });
        }
        check_finite(epoch, "gradient", &ev.grad.flatten())?;
        sgd_step(&mut state, &ev.grad, cfg.lr, cfg.freeze_prior_var);
        check_finite(epoch, "hyper-posterior mean", &state.theta)?;
        history.epochs.push(EpochRecord {
            epoch,
            objective: ev.value,
            train_loss: ev.inputs.train_loss,
            kl_env: ev.inputs.kl_env,
            mean_kl_task: ev.inputs.mean_kl_task(),
            terms: ev.report.terms.clone(),
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        });
    }
    Ok((state, history))
}

/// Which hyper-distribution the meta-test prior is drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PriorSource {
    /// The learned hyper-posterior `N(θ, κ_s² I)`.
    HyperPosterior,
    /// The hyper-prior `N(0, κ_p² I)`: no meta-training at all.
    HyperPrior,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptOutcome {
    /// Monte-Carlo expected loss on the task's test split.
    pub test_loss: f64,
    /// Monte-Carlo expected argmax error on the test split, for multi-output
    /// models.
    pub test_error: Option<f64>,
    /// Single-task bound for the adapted posterior.
    pub bound: f64,
    pub train_loss: f64,
    pub kl: f64,
    pub posterior: DiagGaussian,
}

/// Draws a prior for a new task, fits a posterior to its training split by
/// SGD on the single-task bound, and evaluates it. `task_id` keys the noise.
pub fn adapt_and_eval(
    state: &MetaState,
    task: &TaskData,
    cfg: &TrainConfig,
    task_id: u64,
    source: PriorSource,
) -> Result<AdaptOutcome> {
    cfg.validate()?;
    let m = task.train.rows();
    if m == 0 || task.test.rows() == 0 {
        return Err(Error::domain(
            "meta-test task needs non-empty train and test splits",
        ));
    }
    let d = state.dim();
    let mut s = Stream::keyed(cfg.seed, &[TAG_ADAPT, task_id]);
    let eps = s.normals(2 * d);
    let u = match source {
        PriorSource::HyperPosterior => state.hyper_draw(&eps, cfg.freeze_prior_var),
        PriorSource::HyperPrior => {
            let sd = state.kappa_p_sq.sqrt();
            let mut h = Stream::keyed(cfg.seed, &[TAG_HYPER_PRIOR, task_id]);
            (0..2 * d).map(|_| sd * h.normal()).collect()
        }
    };
    let prior = Hyperparameter::from_flat(&u).prior()?;
    let mut q = prior.clone();
    for epoch in 0..cfg.epochs {
        let mut es = epoch_stream(cfg, TAG_ADAPT, &[task_id, 1], epoch);
        let eps: Vec<Vec<f64>> = (0..cfg.mc_samples_w).map(|_| es.normals(d)).collect();
        let (loss, gm, gl) = mc_loss_with_grad(&state.model, &q, &task.train, cfg.loss, &eps)?;
        let (kl, g) = kl_diag_with_grad(&q, &prior)?;
        let (value, dkl) = mcallester_with_grad(m, cfg.delta, kl, loss)?;
        if !value.is_finite() {
            return Err(Error::Numerical {
                epoch,
                message: format!("single-task objective is {value}"),
            });
        }
        for k in 0..d {
            q.mean_mut()[k] -= cfg.lr * (gm[k] + dkl * g.q_mean[k]);
            q.log_var_mut()[k] -= cfg.lr * (gl[k] + dkl * g.q_log_var[k]);
        }
        check_finite(epoch, "posterior", q.mean())?;
        check_finite(epoch, "posterior", q.log_var())?;
    }
    let mut es = Stream::keyed(cfg.seed, &[TAG_ADAPT, task_id, 2]);
    let (mut train_loss, mut test_loss, mut test_error) = (0.0, 0.0, 0.0);
    let classify = state.model.output_dim > 1;
    for _ in 0..cfg.eval_samples {
        let w = q.sample(&mut es).value;
        train_loss += state.model.empirical_loss(&w, &task.train, cfg.loss);
        test_loss += state.model.empirical_loss(&w, &task.test, cfg.loss);
        if classify {
            test_error += state.model.argmax_error(&w, &task.test);
        }
    }
    let k = cfg.eval_samples as f64;
    let (train_loss, test_loss) = (train_loss / k, test_loss / k);
    let kl = kl_diag_with_grad(&q, &prior)?.0;
    let bound = if m >= 2 {
        mcallester_with_grad(m, cfg.delta, kl, train_loss)?.0
    } else {
        f64::INFINITY
    };
    Ok(AdaptOutcome {
        test_loss,
        test_error: classify.then_some(test_error / k),
        bound,
        train_loss,
        kl,
        posterior: q,
    })
}
