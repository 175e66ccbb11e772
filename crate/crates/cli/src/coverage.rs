//! Bound-coverage experiment on the synthetic environment.
//!
//! Each trial draws a fresh meta-training sample, fits a hyper-posterior,
//! evaluates the bound, and compares it with the true meta-risk of the same
//! learning procedure on new tasks. The true risk uses the closed-form
//! per-predictor population loss; Monte Carlo only runs over tasks, task
//! samples and the hyper/posterior draws.
//!
//! The base learner maps a prior and a training sample to a posterior: it
//! keeps the prior variances and takes `base_steps` gradient steps of the
//! empirical loss from the prior mean. It is deterministic given its inputs,
//! so the same map is used for training tasks and for fresh tasks.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use metapac_core::bounds::{BoundInputs, BoundReport};
use metapac_core::data::{gen_synthetic, Samples, SyntheticEnvSpec};
use metapac_core::gaussian::{kl_diag, kl_hyper, DiagGaussian, KlMode};
use metapac_core::model::{LinearModel, Loss};
use metapac_core::rng::{stream_id, Stream};
use metapac_core::trainer::{train, Hyperparameter, MetaState, TrainConfig};
use metapac_core::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageConfig {
    pub trials: usize,
    pub delta: f64,
    pub env: SyntheticEnvSpec,
    pub trainer: TrainConfig,
    pub mc_u: usize,
    pub risk_draws: usize,
    pub base_steps: usize,
    pub base_lr: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub bound: String,
    pub trials: usize,
    pub violations: usize,
    pub violation_rate: f64,
    pub delta: f64,
    pub mc_slack: f64,
    pub pass: bool,
    pub mean_bound: f64,
    pub mean_risk: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialOutcome {
    pub bound: f64,
    pub bound_sd: f64,
    pub risk: f64,
    pub risk_sd: f64,
    pub violated: bool,
}

fn base_learner(
    model: &LinearModel,
    prior: &DiagGaussian,
    train: &Samples,
    loss: Loss,
    steps: usize,
    lr: f64,
) -> DiagGaussian {
    let mut mean = prior.mean().to_vec();
    let mut g = vec![0.0; mean.len()];
    for _ in 0..steps {
        g.iter_mut().for_each(|v| *v = 0.0);
        model.empirical_loss_grad(&mean, train, loss, 1.0, &mut g);
        mean.iter_mut().zip(&g).for_each(|(m, gi)| *m -= lr * gi);
    }
    DiagGaussian::new(mean, prior.log_var().to_vec()).expect("finite prior")
}

fn draw_prior(state: &MetaState, s: &mut Stream) -> Result<DiagGaussian> {
    let sample = state.hyper_posterior()?.sample(s);
    Hyperparameter::from_flat(&sample.value).prior()
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let k = v.len() as f64;
    let mean = v.iter().sum::<f64>() / k;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (k - 1.0);
    (mean, (var / k).sqrt())
}

/// One coverage trial. `evaluate` maps bound inputs to a report.
pub fn run_trial<F>(cfg: &CoverageConfig, trial: usize, evaluate: &F) -> Result<TrialOutcome>
where
    F: Fn(&BoundInputs) -> Result<BoundReport> + Sync,
{
    let key = |tag: u64| stream_id(&[cfg.seed, trial as u64, tag]);
    let spec = SyntheticEnvSpec {
        seed: key(0),
        n_test_tasks: 0,
        ..cfg.env.clone()
    };
    let env = gen_synthetic(&spec)?;
    let tcfg = TrainConfig {
        seed: key(1),
        delta: cfg.delta,
        ..cfg.trainer.clone()
    };
    let (state, _) = train(&tcfg, &env.train)?;
    let model = state.model;
    let loss = tcfg.loss;
    let n = env.train.n();

    let mut s = Stream::new(cfg.seed, key(2));
    let mut kl = vec![Vec::with_capacity(cfg.mc_u); n];
    let mut emp = Vec::with_capacity(cfg.mc_u);
    for _ in 0..cfg.mc_u {
        let prior = draw_prior(&state, &mut s)?;
        let mut avg = 0.0;
        for (i, task) in env.train.tasks.iter().enumerate() {
            let q = base_learner(
                &model,
                &prior,
                &task.train,
                loss,
                cfg.base_steps,
                cfg.base_lr,
            );
            kl[i].push(kl_diag(&q, &prior, KlMode::StandardGaussian)?);
            let w = q.sample(&mut s).value;
            avg += model.empirical_loss(&w, &task.train, loss) / n as f64;
        }
        emp.push(avg);
    }
    let (train_loss, train_sd) = mean_sd(&emp);
    let kl_stats: Vec<(f64, f64)> = kl.iter().map(|k| mean_sd(k)).collect();
    let kl_env = kl_hyper(
        &state.hyper_posterior()?,
        &state.hyper_prior()?,
        KlMode::StandardGaussian,
    )?;
    let inputs = BoundInputs::new(
        n,
        env.train.m(),
        cfg.delta,
        train_loss,
        kl_env,
        kl_stats.iter().map(|k| k.0).collect(),
    )?;
    let report = evaluate(&inputs)?;
    let bound_sd = if report.value.is_finite() {
        let sens = &report.sensitivity;
        let kl_var: f64 = sens
            .kl_task
            .iter()
            .zip(&kl_stats)
            .map(|(g, k)| (g * k.1).powi(2))
            .sum();
        ((sens.train * train_sd).powi(2) + kl_var).sqrt()
    } else {
        0.0
    };

    let risks: Vec<f64> = (0..cfg.risk_draws)
        .into_par_iter()
        .map(|k| {
            let mut rs = Stream::new(cfg.seed, stream_id(&[cfg.seed, trial as u64, 3, k as u64]));
            let task_w = env.oracle.sample_task(&mut rs);
            let data = env.oracle.sample_data(&task_w, spec.m, &mut rs);
            let prior = draw_prior(&state, &mut rs)?;
            let q = base_learner(&model, &prior, &data, loss, cfg.base_steps, cfg.base_lr);
            let w = q.sample(&mut rs).value;
            Ok(env.oracle.population_loss(&w, &task_w, loss))
        })
        .collect::<Result<Vec<_>>>()?;
    let (risk, risk_sd) = mean_sd(&risks);
    let allowance = 3.0 * (bound_sd * bound_sd + risk_sd * risk_sd).sqrt();
    Ok(TrialOutcome {
        bound: report.value,
        bound_sd,
        risk,
        risk_sd,
        violated: risk > report.value + allowance,
    })
}

pub fn run_coverage<F>(
    cfg: &CoverageConfig,
    name: &str,
    evaluate: &F,
) -> Result<(CoverageReport, Vec<TrialOutcome>)>
where
    F: Fn(&BoundInputs) -> Result<BoundReport> + Sync,
{
    let outcomes = (0..cfg.trials)
        .into_par_iter()
        .map(|r| run_trial(cfg, r, evaluate))
        .collect::<Result<Vec<_>>>()?;
    let violations = outcomes.iter().filter(|o| o.violated).count();
    let r = cfg.trials as f64;
    let violation_rate = violations as f64 / r;
    let mc_slack = 3.0 * (cfg.delta * (1.0 - cfg.delta) / r).sqrt();
    let report = CoverageReport {
        bound: name.to_string(),
        trials: cfg.trials,
        violations,
        violation_rate,
        delta: cfg.delta,
        mc_slack,
        pass: violation_rate <= cfg.delta + mc_slack,
        mean_bound: outcomes.iter().map(|o| o.bound).sum::<f64>() / r,
        mean_risk: outcomes.iter().map(|o| o.risk).sum::<f64>() / r,
    };
    Ok((report, outcomes))
}
