//! Linear-Gaussian task environment with closed-form population losses.
//!
//! Task `i` draws `w*_i = u* + N(0, τ² I)`; its samples are `x ~ N(0, I)`,
//! `y = w*_i · x + N(0, obs_noise)`. For a linear predictor `(w, b)` the
//! residual `ŷ − y` is `N(b, ‖w − w*_i‖² + obs_noise)`, so both bounded
//! losses have exact expectations.

use libm::erfc;
use serde::{Deserialize, Serialize};

use super::{MetaDataset, Provenance, Samples, TaskData};
use crate::error::{Error, Result};
use crate::model::Loss;
use crate::rng::Stream;

const TAG_TRAIN: u64 = 0x7472;
const TAG_TEST: u64 = 0x7465;
const TAG_WEIGHT: u64 = 1;
const TAG_SAMPLES: u64 = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticEnvSpec {
    pub dim: usize,
    pub env_mean: Vec<f64>,
    /// Variance of task weights around `env_mean`.
    pub task_spread: f64,
    /// Variance of the label noise.
    pub obs_noise: f64,
    pub m: usize,
    pub n: usize,
    pub n_test_tasks: usize,
    /// Held-out samples per meta-test task.
    #[serde(default = "default_m_test")]
    pub m_test: usize,
    pub seed: u64,
}

fn default_m_test() -> usize {
    200
}

impl SyntheticEnvSpec {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.env_mean.len() != self.dim {
            return Err(Error::domain(format!(
                "env_mean must have length dim = {}, got {}",
                self.dim,
                self.env_mean.len()
            )));
        }
        if !(self.task_spread >= 0.0) || !(self.obs_noise >= 0.0) {
            return Err(Error::domain(
                "task_spread and obs_noise must be nonnegative",
            ));
        }
        if self.n == 0 || self.m == 0 {
            return Err(Error::domain("n and m must be positive"));
        }
        if self.env_mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("env_mean must be finite"));
        }
        Ok(())
    }
}

/// Ground truth behind a generated environment.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticOracle {
    pub spec: SyntheticEnvSpec,
    pub train_weights: Vec<Vec<f64>>,
    pub test_weights: Vec<Vec<f64>>,
}

impl SyntheticOracle {
    /// Exact `E_z ℓ(params, z)` for the task with weights `task_w`.
    /// `params` is `[w_1..w_d, b]`.
    pub fn population_loss(&self, params: &[f64], task_w: &[f64], loss: Loss) -> f64 {
        let d = self.spec.dim;
        let dist: f64 = params[..d]
            .iter()
            .zip(task_w)
            .map(|(a, b)| (a - b).powi(2))
            .sum();
        gaussian_residual_loss(params[d], dist + self.spec.obs_noise, loss)
    }

    /// Loss of a task's own weights, the floor no predictor can beat on it.
    pub fn task_floor(&self, loss: Loss) -> f64 {
        gaussian_residual_loss(0.0, self.spec.obs_noise, loss)
    }

    pub fn sample_task(&self, stream: &mut Stream) -> Vec<f64> {
        sample_weights(&self.spec, stream)
    }

    pub fn sample_data(&self, task_w: &[f64], rows: usize, stream: &mut Stream) -> Samples {
        sample_rows(&self.spec, task_w, rows, stream)
    }
}

/// `E ℓ` for a residual `r ~ N(mu, var)`.
pub fn gaussian_residual_loss(mu: f64, var: f64, loss: Loss) -> f64 {
    match loss {
        Loss::ExpSquare => {
            let s = 1.0 + 2.0 * var;
            1.0 - (-mu * mu / s).exp() / s.sqrt()
        }
        Loss::ClippedSquare => {
            if var <= 0.0 {
                return (mu * mu).min(1.0);
            }
            let sd = var.sqrt();
            let (a, b) = ((-1.0 - mu) / sd, (1.0 - mu) / sd);
            let (pa, pb) = (pdf(a), pdf(b));
            let outside = cdf(a) + cdf(-b);
            let inside = 1.0 - outside;
            let inner =
                mu * mu * inside + 2.0 * mu * sd * (pa - pb) + var * (inside + a * pa - b * pb);
            inner + outside
        }
    }
}

fn cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

fn pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

fn sample_weights(spec: &SyntheticEnvSpec, s: &mut Stream) -> Vec<f64> {
    let tau = spec.task_spread.sqrt();
    spec.env_mean.iter().map(|u| u + tau * s.normal()).collect()
}

fn sample_rows(spec: &SyntheticEnvSpec, task_w: &[f64], rows: usize, s: &mut Stream) -> Samples {
    let noise = spec.obs_noise.sqrt();
    let mut x = Vec::with_capacity(rows * spec.dim);
    let mut y = Vec::with_capacity(rows);
    for _ in 0..rows {
        let row = s.normals(spec.dim);
        y.push(row.iter().zip(task_w).map(|(a, b)| a * b).sum::<f64>() + noise * s.normal());
        x.extend(row);
    }
    Samples::new(spec.dim, 1, x, y).expect("consistent shapes")
}

fn gen_tasks(
    spec: &SyntheticEnvSpec,
    tag: u64,
    count: usize,
    test_rows: usize,
) -> (Vec<TaskData>, Vec<Vec<f64>>) {
    (0..count)
        .map(|i| {
            let w = sample_weights(
                spec,
                &mut Stream::keyed(spec.seed, &[tag, TAG_WEIGHT, i as u64]),
            );
            let mut s = Stream::keyed(spec.seed, &[tag, TAG_SAMPLES, i as u64]);
            let train = sample_rows(spec, &w, spec.m, &mut s);
            let test = sample_rows(spec, &w, test_rows, &mut s);
            (TaskData { train, test }, w)
        })
        .unzip()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticEnv {
    /// `n` meta-training tasks with empty test splits.
    pub train: MetaDataset,
    /// `n_test_tasks` meta-test tasks with `m` train and `m_test` test rows.
    pub test: Option<MetaDataset>,
    pub oracle: SyntheticOracle,
}

pub fn gen_synthetic(spec: &SyntheticEnvSpec) -> Result<SyntheticEnv> {
    spec.validate()?;
    let (train_tasks, train_weights) = gen_tasks(spec, TAG_TRAIN, spec.n, 0);
    let (test_tasks, test_weights) = gen_tasks(spec, TAG_TEST, spec.n_test_tasks, spec.m_test);
    let provenance = |split: &str| Provenance::Synthetic {
        spec: spec.clone(),
        split: split.to_string(),
    };
    let train = MetaDataset::new(train_tasks, provenance("train"))?;
    let test = if test_tasks.is_empty() {
        None
    } else {
        Some(MetaDataset::new(test_tasks, provenance("test"))?)
    };
    Ok(SyntheticEnv {
        train,
        test,
        oracle: SyntheticOracle {
            spec: spec.clone(),
            train_weights,
            test_weights,
        },
    })
}
