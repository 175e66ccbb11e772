//! Meta-generalization bounds.
//!
//! Every evaluator consumes a [`BoundInputs`] and returns a [`BoundReport`]
//! whose `terms` sum to `value`. Evaluators also return the partial
//! derivatives of the value with respect to the empirical loss and the KL
//! terms, which the meta-trainer chains into its gradients.

mod closed;
mod corollary;
mod search;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use closed::{
    bound_fast_rate, bound_lambda_liu, bound_mlap, bound_mys, bound_new_classic, bound_pacoh,
    bound_single_task_mcallester, bound_sqrt_k, bound_st_markov, mcallester_with_grad, MysVariant,
    PacohVariant,
};
pub use corollary::{
    generic_corollary_bound, log_moment_constant, table_spec, ConvexKind, ConvexSpec,
    CorollarySpec, LogMomentBound, LogMomentLemma, Relaxation,
};
pub use search::{default_grid, optimize_hyperparams, Grid};

/// Sub-Gaussian parameter of a loss bounded in `[0, 1]`.
pub const DEFAULT_SIGMA: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    pub n: usize,
    pub m: usize,
    pub delta: f64,
    pub train_loss: f64,
    pub kl_env: f64,
    pub kl_task: Vec<f64>,
    #[serde(default = "default_sigma")]
    pub sigma: f64,
}

fn default_sigma() -> f64 {
    DEFAULT_SIGMA
}

impl BoundInputs {
    pub fn new(
        n: usize,
        m: usize,
        delta: f64,
        train_loss: f64,
        kl_env: f64,
        kl_task: Vec<f64>,
    ) -> Result<Self> {
        let inp = BoundInputs {
            n,
            m,
            delta,
            train_loss,
            kl_env,
            kl_task,
            sigma: DEFAULT_SIGMA,
        };
        inp.validate()?;
        Ok(inp)
    }

    /// Inputs with zero empirical loss and zero KL terms.
    pub fn zero(n: usize, m: usize, delta: f64) -> Result<Self> {
        Self::new(n, m, delta, 0.0, 0.0, vec![0.0; n])
    }

    pub fn with_sigma(mut self, sigma: f64) -> Result<Self> {
        self.sigma = sigma;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.m == 0 {
            return Err(Error::domain("n and m must be positive"));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::domain(format!(
                "delta must lie in (0,1), got {}",
                self.delta
            )));
        }
        if !(0.0..=1.0).contains(&self.train_loss) {
            return Err(Error::domain(format!(
                "train loss must lie in [0,1], got {}",
                self.train_loss
            )));
        }
        if self.kl_task.len() != self.n {
            return Err(Error::domain(format!(
                "expected {} per-task KL values, got {}",
                self.n,
                self.kl_task.len()
            )));
        }
        if !(self.kl_env >= 0.0) || self.kl_task.iter().any(|k| !(*k >= 0.0)) {
            return Err(Error::domain("KL terms must be nonnegative"));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::domain(format!(
                "sigma must be positive, got {}",
                self.sigma
            )));
        }
        Ok(())
    }

    pub fn mean_kl_task(&self) -> f64 {
        self.kl_task.iter().sum::<f64>() / self.n as f64
    }

    fn require_min(&self, n_min: usize, m_min: usize) -> Result<()> {
        if self.n < n_min || self.m < m_min {
            return Err(Error::domain(format!(
                "needs n >= {n_min} and m >= {m_min}, got n = {}, m = {}",
                self.n, self.m
            )));
        }
        Ok(())
    }
}

/// Partial derivatives of a bound value with respect to its data-dependent
/// inputs.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Sensitivity {
    pub train: f64,
    pub kl_env: f64,
    pub kl_task: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub name: String,
    pub value: f64,
    /// Summands whose total is `value`.
    pub terms: Vec<(String, f64)>,
    /// Multiplicative pieces of the gap for single-square bounds.
    pub factors: Vec<(String, f64)>,
    pub hyperparams: BTreeMap<String, f64>,
    #[serde(skip)]
    pub sensitivity: Sensitivity,
}

impl BoundReport {
    fn new(name: &str) -> Self {
        BoundReport {
            name: name.to_string(),
            value: 0.0,
            terms: Vec::new(),
            factors: Vec::new(),
            hyperparams: BTreeMap::new(),
            sensitivity: Sensitivity::default(),
        }
    }

    fn add_term(mut self, label: &str, v: f64) -> Self {
        self.terms.push((label.to_string(), v));
        self
    }

    fn add_factor(mut self, label: &str, v: f64) -> Self {
        self.factors.push((label.to_string(), v));
        self
    }

    fn add_hyper(mut self, label: &str, v: f64) -> Self {
        self.hyperparams.insert(label.to_string(), v);
        self
    }

    fn finish(mut self, sensitivity: Sensitivity) -> Self {
        self.value = self.terms_sum();
        self.sensitivity = sensitivity;
        self
    }

    pub fn terms_sum(&self) -> f64 {
        self.terms.iter().map(|(_, v)| v).sum()
    }

    pub fn factors_product(&self) -> Option<f64> {
        if self.factors.is_empty() {
            None
        } else {
            Some(self.factors.iter().map(|(_, v)| v).product())
        }
    }

    pub fn term(&self, label: &str) -> Option<f64> {
        self.terms.iter().find(|(l, _)| l == label).map(|(_, v)| *v)
    }

    /// The certified gap, i.e. `value` minus the empirical-loss term.
    pub fn gap(&self) -> f64 {
        self.value - self.term("train").unwrap_or(0.0)
    }
}

/// A bound together with its hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "bound", rename_all = "kebab-case")]
pub enum Bound {
    Mlap,
    Pacoh {
        lambda: f64,
        beta: f64,
        #[serde(default)]
        variant: PacohVariant,
    },
    LambdaLiu {
        lambda: f64,
    },
    MysClassic,
    MysQuadratic,
    MysLambda {
        lambda: f64,
    },
    FastRate {
        lambda_env: f64,
        lambda_task: f64,
    },
    NewClassic,
    SqrtK {
        k: u32,
    },
    StMarkov,
}

impl Bound {
    pub fn family(&self) -> Family {
        match self {
            Bound::Mlap => Family::Mlap,
            Bound::Pacoh { .. } => Family::Pacoh,
            Bound::LambdaLiu { .. } => Family::LambdaLiu,
            Bound::MysClassic => Family::MysClassic,
            Bound::MysQuadratic => Family::MysQuadratic,
            Bound::MysLambda { .. } => Family::MysLambda,
            Bound::FastRate { .. } => Family::FastRate,
            Bound::NewClassic => Family::NewClassic,
            Bound::SqrtK { .. } => Family::SqrtK,
            Bound::StMarkov => Family::StMarkov,
        }
    }

    pub fn evaluate(&self, inp: &BoundInputs) -> Result<BoundReport> {
        match *self {
            Bound::Mlap => bound_mlap(inp),
            Bound::Pacoh {
                lambda,
                beta,
                variant,
            } => bound_pacoh(inp, lambda, beta, variant),
            Bound::LambdaLiu { lambda } => bound_lambda_liu(inp, lambda),
            Bound::MysClassic => bound_mys(inp, MysVariant::Classic),
            Bound::MysQuadratic => bound_mys(inp, MysVariant::Quadratic),
            Bound::MysLambda { lambda } => bound_mys(inp, MysVariant::Lambda(lambda)),
            Bound::FastRate {
                lambda_env,
                lambda_task,
            } => bound_fast_rate(inp, lambda_env, lambda_task),
            Bound::NewClassic => bound_new_classic(inp),
            Bound::SqrtK { k } => bound_sqrt_k(inp, k),
            Bound::StMarkov => bound_st_markov(inp),
        }
    }
}

/// A bound identifier without hyperparameter values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    FastRate,
    LambdaLiu,
    Mlap,
    MysClassic,
    MysLambda,
    MysQuadratic,
    NewClassic,
    Pacoh,
    SqrtK,
    StMarkov,
}

impl Family {
    /// All families, sorted by name.
    pub const ALL: [Family; 10] = [
        Family::FastRate,
        Family::LambdaLiu,
        Family::Mlap,
        Family::MysClassic,
        Family::MysLambda,
        Family::MysQuadratic,
        Family::NewClassic,
        Family::Pacoh,
        Family::SqrtK,
        Family::StMarkov,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Family::FastRate => "fast-rate",
            Family::LambdaLiu => "lambda-liu",
            Family::Mlap => "mlap",
            Family::MysClassic => "mys-classic",
            Family::MysLambda => "mys-lambda",
            Family::MysQuadratic => "mys-quadratic",
            Family::NewClassic => "new-classic",
            Family::Pacoh => "pacoh",
            Family::SqrtK => "sqrt-k",
            Family::StMarkov => "st-markov",
        }
    }

    /// Hyperparameter names, in the order grid tuples are given.
    pub fn hyper_names(self) -> &'static [&'static str] {
        match self {
            Family::FastRate => &["lambda_env", "lambda_task"],
            Family::LambdaLiu | Family::MysLambda => &["lambda"],
            Family::Pacoh => &["lambda", "beta"],
            Family::SqrtK => &["k"],
            _ => &[],
        }
    }

    /// Builds the concrete bound for a hyperparameter tuple.
    pub fn with_params(self, params: &[f64]) -> Result<Bound> {
        let want = self.hyper_names().len();
        if params.len() != want {
            return Err(Error::domain(format!(
                "{} takes {want} hyperparameters, got {}",
                self.name(),
                params.len()
            )));
        }
        Ok(match self {
            Family::Mlap => Bound::Mlap,
            Family::Pacoh => Bound::Pacoh {
                lambda: params[0],
                beta: params[1],
                variant: PacohVariant::AsPrinted,
            },
            Family::LambdaLiu => Bound::LambdaLiu { lambda: params[0] },
            Family::MysClassic => Bound::MysClassic,
            Family::MysQuadratic => Bound::MysQuadratic,
            Family::MysLambda => Bound::MysLambda { lambda: params[0] },
            Family::FastRate => Bound::FastRate {
                lambda_env: params[0],
                lambda_task: params[1],
            },
            Family::NewClassic => Bound::NewClassic,
            Family::SqrtK => {
                let k = params[0];
                if !(k >= 1.0 && k.fract() == 0.0 && k <= u32::MAX as f64) {
                    return Err(Error::domain(format!(
                        "sqrt-k needs a positive integer k, got {k}"
                    )));
                }
                Bound::SqrtK { k: k as u32 }
            }
            Family::StMarkov => Bound::StMarkov,
        })
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Family::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::domain(format!("unknown bound '{s}'")))
    }
}
