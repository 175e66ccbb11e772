//! Two-level corollary: per-level convex functions, their affine (or
//! quadratic) relaxations and the log-moment constants that close the
//! Markov steps.

use serde::{Deserialize, Serialize};

use super::{BoundInputs, BoundReport, Sensitivity};
use crate::divergence::{d_gamma, kl_bernoulli, Prob};
use crate::error::{Error, Result};

/// The convex comparison function `F(pop, emp)` at one level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ConvexKind {
    /// `coef·(pop − emp)²`
    Quadratic { coef: f64 },
    /// `pop − emp`
    Linear,
    /// `scale·kl(emp‖pop)`
    ScaledKl { scale: f64 },
    /// `scale·D_γ(emp‖pop)`
    ScaledDGamma { scale: f64, gamma: f64 },
}

impl ConvexKind {
    pub fn eval(&self, pop: f64, emp: f64) -> f64 {
        match *self {
            ConvexKind::Quadratic { coef } => coef * (pop - emp).powi(2),
            ConvexKind::Linear => pop - emp,
            ConvexKind::ScaledKl { scale } => {
                scale * kl_bernoulli(Prob::saturating(emp), Prob::saturating(pop)).value()
            }
            ConvexKind::ScaledDGamma { scale, gamma } => {
                scale * d_gamma(Prob::saturating(emp), Prob::saturating(pop), gamma)
            }
        }
    }
}

/// How `F(pop, emp) ≤ c` is turned into an upper bound on `pop`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Relaxation {
    /// `emp + sqrt(c / coef)`
    Sqrt { coef: f64 },
    /// `emp + c`
    Identity,
    /// `emp / (1 − λ/2) + c / (scale·λ·(1 − λ/2))`
    Lambda { scale: f64, lambda: f64 },
    /// `(sqrt(emp + c/(2·scale)) + sqrt(c/(2·scale)))²`
    Quadratic { scale: f64 },
    /// `(emp + λ·c/scale) / (1 − 1/(2λ))`
    DGamma { scale: f64, lambda: f64 },
}

impl Relaxation {
    fn validate(&self) -> Result<()> {
        let ok = match *self {
            Relaxation::Sqrt { coef } => coef > 0.0,
            Relaxation::Identity => true,
            Relaxation::Lambda { scale, lambda } => scale > 0.0 && lambda > 0.0 && lambda < 2.0,
            Relaxation::Quadratic { scale } => scale > 0.0,
            Relaxation::DGamma { scale, lambda } => scale > 0.0 && lambda > 0.5,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::domain(format!(
                "relaxation outside its domain: {self:?}"
            )))
        }
    }

    /// Slope on the empirical loss; for the quadratic form the slope at 0.
    pub fn k(&self) -> f64 {
        match *self {
            Relaxation::Sqrt { .. } | Relaxation::Identity | Relaxation::Quadratic { .. } => 1.0,
            Relaxation::Lambda { lambda, .. } => 1.0 / (1.0 - 0.5 * lambda),
            Relaxation::DGamma { lambda, .. } => 1.0 / (1.0 - 0.5 / lambda),
        }
    }

    pub fn apply(&self, emp: f64, c: f64) -> f64 {
        match *self {
            Relaxation::Sqrt { coef } => emp + (c / coef).sqrt(),
            Relaxation::Identity => emp + c,
            Relaxation::Lambda { scale, lambda } => {
                let h = 1.0 - 0.5 * lambda;
                emp / h + c / (scale * lambda * h)
            }
            Relaxation::Quadratic { scale } => {
                let x = c / (2.0 * scale);
                ((emp + x).sqrt() + x.sqrt()).powi(2)
            }
            Relaxation::DGamma { scale, lambda } => {
                (emp + lambda * c / scale) / (1.0 - 0.5 / lambda)
            }
        }
    }

    /// `(∂/∂emp, ∂/∂c)` of [`Relaxation::apply`].
    pub fn grad(&self, emp: f64, c: f64) -> (f64, f64) {
        match *self {
            Relaxation::Sqrt { coef } => (1.0, 0.5 / (c * coef).sqrt()),
            Relaxation::Identity => (1.0, 1.0),
            Relaxation::Lambda { scale, lambda } => {
                let h = 1.0 - 0.5 * lambda;
                (1.0 / h, 1.0 / (scale * lambda * h))
            }
            Relaxation::Quadratic { scale } => {
                let x = c / (2.0 * scale);
                let (r, s) = ((emp + x).sqrt(), x.sqrt());
                let outer = 2.0 * (r + s);
                (outer * 0.5 / r, outer * (0.5 / r + 0.5 / s) / (2.0 * scale))
            }
            Relaxation::DGamma { scale, lambda } => {
                let h = 1.0 - 0.5 / lambda;
                (1.0 / h, lambda / (scale * h))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvexSpec {
    pub kind: ConvexKind,
    pub relax: Relaxation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LogMomentLemma {
    /// `E e^{λ m Δ²} ≤ 1/(1 − 2λσ²)`
    SubGaussSq1,
    /// `E e^{λ m Δ²} ≤ 1/sqrt(1 − 2λσ²)` for sub-Gaussian `g`
    SubGaussSqHalf,
    /// `E e^{n kl(L̂‖L)} ≤ 2√n`
    Maurer2SqrtN,
    /// `E e^{n D_γ(L̂‖L)} ≤ 1`
    DGammaOne,
    /// `E e^{θ(L − L̂)} ≤ exp(θ²σ²/(2n))`
    HoeffdingLinear,
}

/// A certified upper bound on an expected exponential moment, stored as its
/// logarithm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogMomentBound {
    pub lemma: LogMomentLemma,
    ln_value: f64,
}

impl LogMomentBound {
    pub fn value(&self) -> f64 {
        self.ln_value.exp()
    }

    pub fn ln_value(&self) -> f64 {
        self.ln_value
    }

    pub fn sub_gauss_sq(lambda: f64, sigma: f64) -> Result<Self> {
        let t = 1.0 - 2.0 * lambda * sigma * sigma;
        if !(lambda >= 0.0) || !(t > 0.0) {
            return Err(Error::domain(format!(
                "sub-Gaussian moment needs 0 <= λ < 1/(2σ²), got λ = {lambda}, σ = {sigma}"
            )));
        }
        Ok(LogMomentBound {
            lemma: LogMomentLemma::SubGaussSq1,
            ln_value: -t.ln(),
        })
    }

    pub fn sub_gauss_sq_half(lambda: f64, sigma: f64) -> Result<Self> {
        let full = Self::sub_gauss_sq(lambda, sigma)?;
        Ok(LogMomentBound {
            lemma: LogMomentLemma::SubGaussSqHalf,
            ln_value: 0.5 * full.ln_value,
        })
    }

    /// `2√n`. The worst case over `[0,1]` losses is the Bernoulli sum
    /// `Σ_k C(n,k)(k/n)^k(1−k/n)^(n−k)`, which stays below `2√n` for all `n ≥ 1`.
    pub fn maurer(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::domain("kl moment needs n >= 1"));
        }
        Ok(LogMomentBound {
            lemma: LogMomentLemma::Maurer2SqrtN,
            ln_value: std::f64::consts::LN_2 + 0.5 * (n as f64).ln(),
        })
    }

    pub fn dgamma_one() -> Self {
        LogMomentBound {
            lemma: LogMomentLemma::DGammaOne,
            ln_value: 0.0,
        }
    }

    pub fn hoeffding_linear(theta: f64, sigma: f64, count: usize) -> Result<Self> {
        if count == 0 || !(theta >= 0.0) {
            return Err(Error::domain(
                "linear moment needs θ >= 0 and a positive count",
            ));
        }
        Ok(LogMomentBound {
            lemma: LogMomentLemma::HoeffdingLinear,
            ln_value: theta * theta * sigma * sigma / (2.0 * count as f64),
        })
    }
}

/// Closed-form log-moment constant for a lemma, checked against the lemma's
/// stated domain. `param` is `λ` for the sub-Gaussian lemmas and the sample
/// count for the others.
pub fn log_moment_constant(
    lemma: LogMomentLemma,
    param: f64,
    sigma: f64,
) -> Result<LogMomentBound> {
    match lemma {
        LogMomentLemma::SubGaussSq1 => LogMomentBound::sub_gauss_sq(param, sigma),
        LogMomentLemma::SubGaussSqHalf => LogMomentBound::sub_gauss_sq_half(param, sigma),
        LogMomentLemma::Maurer2SqrtN => {
            if !(param > 8.0) || param.fract() != 0.0 {
                return Err(Error::domain(format!(
                    "kl moment lemma needs integer n > 8, got {param}"
                )));
            }
            LogMomentBound::maurer(param as usize)
        }
        LogMomentLemma::DGammaOne => Ok(LogMomentBound::dgamma_one()),
        LogMomentLemma::HoeffdingLinear => Err(Error::domain(
            "the linear moment depends on θ; use LogMomentBound::hoeffding_linear",
        )),
    }
}

/// Full parameterization of the two-level corollary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorollarySpec {
    pub task: ConvexSpec,
    pub env: ConvexSpec,
    pub theta_task: f64,
    pub theta_env: f64,
    pub lm_task: LogMomentBound,
    pub lm_env: LogMomentBound,
}

/// `T_e((1/n) Σ_i T_t(train, B_task,i), B_env)` where `T` are the level
/// relaxations, `B_env = (kl_env + ln(2·lm_env/δ))/θ_env` and
/// `B_task,i = (kl_env + kl_task[i] + ln(2n·lm_task/δ))/θ_task`.
/// For affine relaxations this is `k_e k_t train + G_e⁻¹(B_env) + (k_e/n) Σ G_t⁻¹(B_task,i)`.
pub fn generic_corollary_bound(inp: &BoundInputs, spec: &CorollarySpec) -> Result<BoundReport> {
    inp.validate()?;
    spec.task.relax.validate()?;
    spec.env.relax.validate()?;
    if !(spec.theta_task > 0.0 && spec.theta_env > 0.0) {
        return Err(Error::domain("θ_task and θ_env must be positive"));
    }
    let n = inp.n as f64;
    let ln_delta = inp.delta.ln();
    let b_env =
        (inp.kl_env + std::f64::consts::LN_2 + spec.lm_env.ln_value() - ln_delta) / spec.theta_env;
    let task_log = (2.0 * n).ln() + spec.lm_task.ln_value() - ln_delta;

    let t = spec.task.relax;
    let mut avg = 0.0;
    let mut d_avg_train = 0.0;
    let mut d_avg_b = Vec::with_capacity(inp.n);
    for &kl in &inp.kl_task {
        let b = (inp.kl_env + kl + task_log) / spec.theta_task;
        avg += t.apply(inp.train_loss, b) / n;
        let (da, dc) = t.grad(inp.train_loss, b);
        d_avg_train += da / n;
        d_avg_b.push(dc / n);
    }

    let e = spec.env.relax;
    let value = e.apply(avg, b_env);
    let (dv_davg, dv_denv) = e.grad(avg, b_env);

    let ke = e.k();
    let kt = t.k();
    let train_term = ke * kt * inp.train_loss;
    let task_term = ke * (avg - kt * inp.train_loss);
    let env_term = value - ke * avg;

    let kl_task_grad: Vec<f64> = d_avg_b
        .iter()
        .map(|d| dv_davg * d / spec.theta_task)
        .collect();
    let sens = Sensitivity {
        train: dv_davg * d_avg_train,
        kl_env: dv_denv / spec.theta_env + kl_task_grad.iter().sum::<f64>(),
        kl_task: kl_task_grad,
    };
    Ok(BoundReport::new("corollary")
        .add_term("train", train_term)
        .add_term("env", env_term)
        .add_term("task", task_term)
        .add_hyper("theta_task", spec.theta_task)
        .add_hyper("theta_env", spec.theta_env)
        .add_hyper("B_env", b_env)
        .finish(sens))
}

/// The corollary parameterization that reproduces a named bound.
pub fn table_spec(bound: &super::Bound, inp: &BoundInputs) -> Result<CorollarySpec> {
    use super::{Bound, PacohVariant};
    let (n, m) = (inp.n, inp.m);
    let (nf, mf) = (n as f64, m as f64);
    let sub_gauss = |count: usize| -> Result<(ConvexSpec, LogMomentBound)> {
        if count < 2 {
            return Err(Error::domain(
                "sub-Gaussian rows need at least 2 samples per level",
            ));
        }
        let c = count as f64;
        let coef = 2.0 * (c - 1.0);
        Ok((
            ConvexSpec {
                kind: ConvexKind::Quadratic { coef },
                relax: Relaxation::Sqrt { coef },
            },
            LogMomentBound::sub_gauss_sq(coef / c, inp.sigma)?,
        ))
    };
    let kl_level = |count: usize, relax: Relaxation| -> Result<(ConvexSpec, LogMomentBound)> {
        Ok((
            ConvexSpec {
                kind: ConvexKind::ScaledKl {
                    scale: count as f64,
                },
                relax,
            },
            LogMomentBound::maurer(count)?,
        ))
    };
    let one =
        |task: (ConvexSpec, LogMomentBound), env: (ConvexSpec, LogMomentBound)| CorollarySpec {
            task: task.0,
            env: env.0,
            theta_task: 1.0,
            theta_env: 1.0,
            lm_task: task.1,
            lm_env: env.1,
        };
    let pinsker_env = || kl_level(n, Relaxation::Sqrt { coef: 2.0 * nf });
    Ok(match *bound {
        Bound::Mlap => one(sub_gauss(m)?, sub_gauss(n)?),
        Bound::LambdaLiu { lambda } => one(
            kl_level(m, Relaxation::Lambda { scale: mf, lambda })?,
            sub_gauss(n)?,
        ),
        Bound::MysClassic => one(
            kl_level(m, Relaxation::Sqrt { coef: 2.0 * mf })?,
            pinsker_env()?,
        ),
        Bound::MysQuadratic => one(
            kl_level(m, Relaxation::Quadratic { scale: mf })?,
            pinsker_env()?,
        ),
        Bound::MysLambda { lambda } => one(
            kl_level(m, Relaxation::Lambda { scale: mf, lambda })?,
            pinsker_env()?,
        ),
        Bound::FastRate {
            lambda_env,
            lambda_task,
        } => {
            let level = |count: f64, lambda: f64| ConvexSpec {
                kind: ConvexKind::ScaledDGamma {
                    scale: count,
                    gamma: -1.0 / lambda,
                },
                relax: Relaxation::DGamma {
                    scale: count,
                    lambda,
                },
            };
            CorollarySpec {
                task: level(mf, lambda_task),
                env: level(nf, lambda_env),
                theta_task: 1.0,
                theta_env: 1.0,
                lm_task: LogMomentBound::dgamma_one(),
                lm_env: LogMomentBound::dgamma_one(),
            }
        }
        Bound::Pacoh {
            lambda,
            beta,
            variant: PacohVariant::Corollary,
        } => {
            let linear = ConvexSpec {
                kind: ConvexKind::Linear,
                relax: Relaxation::Identity,
            };
            CorollarySpec {
                task: linear,
                env: linear,
                theta_task: beta,
                theta_env: lambda,
                lm_task: LogMomentBound::hoeffding_linear(beta, inp.sigma, m)?,
                lm_env: LogMomentBound::hoeffding_linear(lambda, inp.sigma, n)?,
            }
        }
        other => {
            return Err(Error::domain(format!(
                "{} is not an instance of the two-level corollary",
                other.family()
            )))
        }
    })
}
