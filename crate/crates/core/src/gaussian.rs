//! Gaussian prior/posterior families: diagonal Gaussians over model weights,
//! isotropic Gaussians over hyperparameters, their KL divergences, sampling
//! and reparameterized gradients.
//!
//! Variances are carried as log-variances so gradient descent runs on an
//! unconstrained parameter.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Stream;

/// Which closed form to use for a Gaussian KL.
///
/// `StandardGaussian` is the true KL divergence and is what every bound
/// consumes. `PaperVerbatim` reproduces the printed closed forms term for
/// term: the hyper-level form has no dimension factor and the weight-level
/// form wraps the quadratic term in a logarithm. Keep it for regression only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum KlMode {
    PaperVerbatim,
    #[default]
    StandardGaussian,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagGaussian {
    mean: Vec<f64>,
    log_var: Vec<f64>,
}

impl DiagGaussian {
    pub fn new(mean: Vec<f64>, log_var: Vec<f64>) -> Result<Self> {
        if mean.is_empty() || mean.len() != log_var.len() {
            return Err(Error::domain(format!(
                "diagonal Gaussian needs equal non-empty mean/log_var lengths, got {} and {}",
                mean.len(),
                log_var.len()
            )));
        }
        if log_var.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("log-variance must be finite"));
        }
        Ok(DiagGaussian { mean, log_var })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn log_var(&self) -> &[f64] {
        &self.log_var
    }

    pub fn mean_mut(&mut self) -> &mut [f64] {
        &mut self.mean
    }

    pub fn log_var_mut(&mut self) -> &mut [f64] {
        &mut self.log_var
    }

    pub fn std_dev(&self) -> Vec<f64> {
        self.log_var.iter().map(|l| (0.5 * l).exp()).collect()
    }

    /// `mean + σ ⊙ ε` with fresh standard-normal `ε`.
    pub fn sample(&self, stream: &mut Stream) -> Sample {
        let eps = stream.normals(self.dim());
        self.sample_with(eps)
    }

    /// Deterministic reparameterized sample for a given `ε`.
    pub fn sample_with(&self, eps: Vec<f64>) -> Sample {
        let value = self
            .mean
            .iter()
            .zip(&self.log_var)
            .zip(&eps)
            .map(|((m, l), e)| m + (0.5 * l).exp() * e)
            .collect();
        Sample { value, eps }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsotropicGaussian {
    mean: Vec<f64>,
    var: f64,
}

impl IsotropicGaussian {
    pub fn new(mean: Vec<f64>, var: f64) -> Result<Self> {
        if !(var > 0.0) || !var.is_finite() {
            return Err(Error::domain(format!(
                "isotropic variance must be positive, got {var}"
            )));
        }
        if mean.is_empty() {
            return Err(Error::domain("isotropic Gaussian needs a non-empty mean"));
        }
        Ok(IsotropicGaussian { mean, var })
    }

    /// Zero-mean isotropic Gaussian of dimension `dim`.
    pub fn centered(dim: usize, var: f64) -> Result<Self> {
        Self::new(vec![0.0; dim], var)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn var(&self) -> f64 {
        self.var
    }

    pub fn sample(&self, stream: &mut Stream) -> Sample {
        let eps = stream.normals(self.dim());
        let sd = self.var.sqrt();
        let value = self
            .mean
            .iter()
            .zip(&eps)
            .map(|(m, e)| m + sd * e)
            .collect();
        Sample { value, eps }
    }
}

/// A reparameterized draw together with the standard-normal noise behind it.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub value: Vec<f64>,
    pub eps: Vec<f64>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `D(Q‖P)` between isotropic Gaussians over hyperparameters.
pub fn kl_hyper(q: &IsotropicGaussian, p: &IsotropicGaussian, mode: KlMode) -> Result<f64> {
    if q.dim() != p.dim() {
        return Err(Error::domain(format!(
            "hyper KL dimension mismatch: {} vs {}",
            q.dim(),
            p.dim()
        )));
    }
    match mode {
        KlMode::PaperVerbatim => {
            if p.mean.iter().any(|&m| m != 0.0) {
                return Err(Error::domain(
                    "printed hyper KL needs a zero-mean hyper-prior",
                ));
            }
            let norm_sq: f64 = q.mean.iter().map(|t| t * t).sum();
            Ok((norm_sq + q.var) / (2.0 * p.var) + (p.var / q.var).ln() - 0.5)
        }
        KlMode::StandardGaussian => {
            let dim = q.dim() as f64;
            let ratio = q.var / p.var;
            let kl =
                0.5 * dim * (ratio - 1.0 - ratio.ln()) + sq_dist(&q.mean, &p.mean) / (2.0 * p.var);
            Ok(kl.max(0.0))
        }
    }
}

/// Gradient of the standard hyper KL with respect to `Q`'s mean.
pub fn kl_hyper_grad_mean(q: &IsotropicGaussian, p: &IsotropicGaussian) -> Vec<f64> {
    q.mean
        .iter()
        .zip(&p.mean)
        .map(|(a, b)| (a - b) / p.var)
        .collect()
}

/// `D(Q‖P)` between diagonal Gaussians over weights.
pub fn kl_diag(q: &DiagGaussian, p: &DiagGaussian, mode: KlMode) -> Result<f64> {
    if q.dim() != p.dim() {
        return Err(Error::domain(format!(
            "diagonal KL dimension mismatch: {} vs {}",
            q.dim(),
            p.dim()
        )));
    }
    let terms = q
        .mean
        .iter()
        .zip(&q.log_var)
        .zip(p.mean.iter().zip(&p.log_var));
    let sum: f64 = match mode {
        KlMode::PaperVerbatim => terms
            .map(|((mq, lq), (mp, lp))| {
                let (vq, vp) = (lq.exp(), lp.exp());
                (vp / vq).ln() + ((vq + (mq - mp).powi(2)) / vp).ln()
            })
            .sum(),
        KlMode::StandardGaussian => terms
            .map(|((mq, lq), (mp, lp))| kl_diag_coord(*mq, *lq, *mp, *lp))
            .sum(),
    };
    Ok(match mode {
        KlMode::PaperVerbatim => 0.5 * sum,
        KlMode::StandardGaussian => (0.5 * sum).max(0.0),
    })
}

/// Twice the 1-D standard KL for one coordinate.
fn kl_diag_coord(mq: f64, lq: f64, mp: f64, lp: f64) -> f64 {
    lp - lq + ((lq - lp).exp() + (mq - mp).powi(2) * (-lp).exp()) - 1.0
}

/// Partial derivatives of the standard diagonal KL.
#[derive(Debug, Clone, PartialEq)]
pub struct KlDiagGrad {
    pub q_mean: Vec<f64>,
    pub q_log_var: Vec<f64>,
    pub p_mean: Vec<f64>,
    pub p_log_var: Vec<f64>,
}

/// Standard diagonal KL and its gradient with respect to both arguments.
pub fn kl_diag_with_grad(q: &DiagGaussian, p: &DiagGaussian) -> Result<(f64, KlDiagGrad)> {
    let kl = kl_diag(q, p, KlMode::StandardGaussian)?;
    let d = q.dim();
    let mut g = KlDiagGrad {
        q_mean: Vec::with_capacity(d),
        q_log_var: Vec::with_capacity(d),
        p_mean: Vec::with_capacity(d),
        p_log_var: Vec::with_capacity(d),
    };
    for k in 0..d {
        let (mq, lq, mp, lp) = (q.mean[k], q.log_var[k], p.mean[k], p.log_var[k]);
        let inv_vp = (-lp).exp();
        let diff = mq - mp;
        g.q_mean.push(diff * inv_vp);
        g.p_mean.push(-diff * inv_vp);
        g.q_log_var.push(0.5 * ((lq - lp).exp() - 1.0));
        g.p_log_var
            .push(0.5 * (1.0 - (lq - lp).exp() - diff * diff * inv_vp));
    }
    Ok((kl, g))
}

/// Pulls `∂loss/∂w` at `w = mean + σ⊙ε` back to the mean and log-variance:
/// `∂w/∂mean = 1` and `∂w/∂ln σ² = ε σ / 2`.
pub fn reparam_grads(
    g: &DiagGaussian,
    eps: &[f64],
    upstream: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    if eps.len() != g.dim() || upstream.len() != g.dim() {
        return Err(Error::domain("reparameterization dimension mismatch"));
    }
    let grad_log_var = upstream
        .iter()
        .zip(eps)
        .zip(&g.log_var)
        .map(|((u, e), l)| u * e * (0.5 * l).exp() * 0.5)
        .collect();
    Ok((upstream.to_vec(), grad_log_var))
}
