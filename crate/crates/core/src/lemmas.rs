//! Numerical checks of the concentration and change-of-measure lemmas
//! behind the bounds.
//!
//! Finite-support distributions are verified by exact enumeration over the
//! binomial outcomes; continuous ones by Monte Carlo over chunked,
//! independently keyed streams that are reduced in chunk order.

use rand_distr::Distribution;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Beta, ContinuousCDF};
use statrs::function::factorial::ln_binomial;

use crate::divergence::{d_gamma, kl_bernoulli, Prob};
use crate::error::{Error, Result};
use crate::rng::Stream;

pub use crate::bounds::{log_moment_constant, LogMomentBound, LogMomentLemma};

/// Relative tolerance of the Monte-Carlo pass rule.
pub const MC_REL_TOL: f64 = 0.01;
/// Standard errors of allowance in the Monte-Carlo pass rule.
pub const MC_SDS: f64 = 3.0;
/// Absolute tolerance for exact-enumeration checks.
pub const EXACT_TOL: f64 = 1e-10;

const CHUNK: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Dist {
    Uniform01,
    Bernoulli { p: f64 },
    Beta { a: f64, b: f64 },
}

impl Dist {
    fn validate(&self) -> Result<()> {
        match *self {
            Dist::Uniform01 => Ok(()),
            Dist::Bernoulli { p } if (0.0..=1.0).contains(&p) => Ok(()),
            Dist::Beta { a, b } if a > 0.0 && b > 0.0 => Ok(()),
            other => Err(Error::domain(format!("invalid distribution {other:?}"))),
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            Dist::Uniform01 => 0.5,
            Dist::Bernoulli { p } => p,
            Dist::Beta { a, b } => a / (a + b),
        }
    }

    fn sampler(&self) -> Sampler {
        match *self {
            Dist::Uniform01 => Sampler::Uniform,
            Dist::Bernoulli { p } => Sampler::Bernoulli(p),
            Dist::Beta { a, b } => {
                Sampler::Beta(rand_distr::Beta::new(a, b).expect("validated shape"))
            }
        }
    }
}

enum Sampler {
    Uniform,
    Bernoulli(f64),
    Beta(rand_distr::Beta<f64>),
}

impl Sampler {
    fn draw(&self, s: &mut Stream) -> f64 {
        match self {
            Sampler::Uniform => s.uniform(),
            Sampler::Bernoulli(p) => f64::from(u8::from(s.bernoulli(*p))),
            Sampler::Beta(b) => b.sample(s),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialConfig {
    pub trials: usize,
    pub seed: u64,
    /// Sample size `m` for the sub-Gaussian lemmas.
    pub sample_size: usize,
    pub dist: Dist,
}

impl TrialConfig {
    fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::domain("trials must be positive"));
        }
        self.dist.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LemmaVerdict {
    pub lemma: String,
    pub empirical: f64,
    pub certified: f64,
    /// Monte-Carlo standard error of `empirical`; 0 for exact paths.
    pub std_err: f64,
    /// Headroom `(certified − empirical)/std_err`; `None` for exact paths.
    pub slack_sds: Option<f64>,
    pub exact: bool,
    pub pass: bool,
}

impl LemmaVerdict {
    fn exact(lemma: &str, empirical: f64, certified: f64) -> Self {
        LemmaVerdict {
            lemma: lemma.to_string(),
            empirical,
            certified,
            std_err: 0.0,
            slack_sds: None,
            exact: true,
            pass: empirical <= certified + EXACT_TOL,
        }
    }

    fn monte_carlo(lemma: &str, empirical: f64, std_err: f64, certified: f64) -> Self {
        let headroom = certified - empirical;
        let slack_sds = if std_err > 0.0 {
            headroom / std_err
        } else if headroom >= 0.0 {
            f64::INFINITY
        } else {
            f64::NEG_INFINITY
        };
        LemmaVerdict {
            lemma: lemma.to_string(),
            empirical,
            certified,
            std_err,
            slack_sds: Some(slack_sds),
            exact: false,
            pass: empirical <= certified * (1.0 + MC_REL_TOL)
                || empirical <= certified + MC_SDS * std_err,
        }
    }
}

/// Mean and standard error of `stat` over `trials` draws, each from its own
/// chunk-keyed stream position.
fn mc_mean<F>(cfg: &TrialConfig, tag: u64, stat: F) -> (f64, f64)
where
    F: Fn(&mut Stream) -> f64 + Sync,
{
    let chunks = cfg.trials.div_ceil(CHUNK);
    let partial: Vec<(f64, f64)> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut s = Stream::keyed(cfg.seed, &[tag, c as u64]);
            let count = CHUNK.min(cfg.trials - c * CHUNK);
            let (mut sum, mut sq) = (0.0, 0.0);
            for _ in 0..count {
                let v = stat(&mut s);
                sum += v;
                sq += v * v;
            }
            (sum, sq)
        })
        .collect();
    let (sum, sq) = partial
        .iter()
        .fold((0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
    let t = cfg.trials as f64;
    let mean = sum / t;
    let var = if cfg.trials > 1 {
        ((sq - t * mean * mean) / (t - 1.0)).max(0.0)
    } else {
        0.0
    };
    (mean, (var / t).sqrt())
}

/// `E f(k/n)` for `k ~ Binomial(n, p)`, skipping zero-probability outcomes.
fn binomial_expectation(n: usize, p: f64, f: impl Fn(f64) -> f64) -> f64 {
    (0..=n)
        .filter_map(|k| {
            let ln_pmf = match (k, p) {
                (0, _) if p == 0.0 => 0.0,
                (_, _) if p == 0.0 => return None,
                (k, _) if p == 1.0 => {
                    if k == n {
                        0.0
                    } else {
                        return None;
                    }
                }
                _ => {
                    ln_binomial(n as u64, k as u64)
                        + k as f64 * p.ln()
                        + (n - k) as f64 * (1.0 - p).ln()
                }
            };
            Some(ln_pmf.exp() * f(k as f64 / n as f64))
        })
        .sum()
}

fn sample_mean(sampler: &Sampler, s: &mut Stream, count: usize) -> f64 {
    (0..count).map(|_| sampler.draw(s)).sum::<f64>() / count as f64
}

const SIGMA: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SubGaussVariant {
    /// Certified `1/(1 − 2λσ²)` under the one-sided tail hypothesis.
    Full,
    /// Certified `1/sqrt(1 − 2λσ²)` for sub-Gaussian functions.
    Sqrt,
}

/// `E e^{λ m Δ²}` with `Δ = E g − (1/m) Σ g(X_k)` for `[0,1]`-valued samples.
pub fn verify_subgauss_sq(
    cfg: &TrialConfig,
    lambda: f64,
    variant: SubGaussVariant,
) -> Result<LemmaVerdict> {
    cfg.validate()?;
    if !(0.0..1.0 / (2.0 * SIGMA * SIGMA)).contains(&lambda) {
        return Err(Error::domain(format!(
            "sub-Gaussian lemma needs 0 <= λ < 1/(2σ²) = 2, got {lambda}"
        )));
    }
    if cfg.sample_size == 0 {
        return Err(Error::domain("sample size must be positive"));
    }
    let bound = match variant {
        SubGaussVariant::Full => LogMomentBound::sub_gauss_sq(lambda, SIGMA)?,
        SubGaussVariant::Sqrt => LogMomentBound::sub_gauss_sq_half(lambda, SIGMA)?,
    };
    let name = match variant {
        SubGaussVariant::Full => "subgauss-sq",
        SubGaussVariant::Sqrt => "subgauss-sq-sqrt",
    };
    let m = cfg.sample_size;
    let mu = cfg.dist.mean();
    let stat = |mean: f64| (lambda * m as f64 * (mu - mean).powi(2)).exp();
    Ok(match cfg.dist {
        Dist::Bernoulli { p } => {
            LemmaVerdict::exact(name, binomial_expectation(m, p, stat), bound.value())
        }
        _ => {
            let sampler = cfg.dist.sampler();
            let (mean, se) = mc_mean(cfg, 1, |s| stat(sample_mean(&sampler, s, m)));
            LemmaVerdict::monte_carlo(name, mean, se, bound.value())
        }
    })
}

/// `E e^{n kl(L̂‖L)} ≤ 2√n` for `n > 8`.
pub fn verify_maurer(cfg: &TrialConfig, n: usize) -> Result<LemmaVerdict> {
    cfg.validate()?;
    if n <= 8 {
        return Err(Error::domain(format!(
            "kl moment lemma needs n > 8, got {n}"
        )));
    }
    let mu = cfg.dist.mean();
    if !(mu > 0.0 && mu < 1.0) {
        return Err(Error::domain("kl moment check needs an interior mean"));
    }
    let certified = LogMomentBound::maurer(n)?.value();
    let stat = |mean: f64| {
        (n as f64 * kl_bernoulli(Prob::saturating(mean), Prob::saturating(mu)).value()).exp()
    };
    Ok(match cfg.dist {
        Dist::Bernoulli { p } => {
            LemmaVerdict::exact("maurer", binomial_expectation(n, p, stat), certified)
        }
        _ => {
            let sampler = cfg.dist.sampler();
            let (mean, se) = mc_mean(cfg, 2, |s| stat(sample_mean(&sampler, s, n)));
            LemmaVerdict::monte_carlo("maurer", mean, se, certified)
        }
    })
}

/// `E e^{n D_γ(L̂‖L)} ≤ 1`.
pub fn verify_dgamma(cfg: &TrialConfig, n: usize, gamma: f64) -> Result<LemmaVerdict> {
    cfg.validate()?;
    if n == 0 {
        return Err(Error::domain("n must be positive"));
    }
    let mu = Prob::new(cfg.dist.mean())?;
    let stat = |mean: f64| (n as f64 * d_gamma(Prob::saturating(mean), mu, gamma)).exp();
    Ok(match cfg.dist {
        Dist::Bernoulli { p } => {
            LemmaVerdict::exact("d-gamma", binomial_expectation(n, p, stat), 1.0)
        }
        _ => {
            let sampler = cfg.dist.sampler();
            let (mean, se) = mc_mean(cfg, 3, |s| stat(sample_mean(&sampler, s, n)));
            LemmaVerdict::monte_carlo("d-gamma", mean, se, 1.0)
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DvOutcome {
    pub lhs: f64,
    pub rhs: f64,
    pub gibbs_gap: f64,
}

fn log_sum_exp(xs: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.collect();
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

fn kl_finite(q: &[f64], p: &[f64]) -> f64 {
    q.iter()
        .zip(p)
        .filter(|(qi, _)| **qi > 0.0)
        .map(|(qi, pi)| qi * (qi / pi).ln())
        .sum()
}

/// Both sides of `E_Q φ ≤ KL(Q‖P) + ln E_P e^φ`, and the residual of the
/// same inequality at the Gibbs measure `Q* ∝ P e^φ`, where it is an equality.
pub fn verify_donsker_varadhan(p: &[f64], q: &[f64], phi: &[f64]) -> Result<DvOutcome> {
    if p.len() != q.len() || p.len() != phi.len() || p.is_empty() {
        return Err(Error::domain("P, Q and φ must share one non-empty support"));
    }
    let is_dist =
        |d: &[f64]| d.iter().all(|x| *x >= 0.0) && (d.iter().sum::<f64>() - 1.0).abs() < 1e-9;
    if !is_dist(p) || !is_dist(q) {
        return Err(Error::domain("P and Q must be probability vectors"));
    }
    if q.iter().zip(p).any(|(qi, pi)| *qi > 0.0 && *pi == 0.0) {
        return Err(Error::domain(
            "Q is not absolutely continuous with respect to P",
        ));
    }
    let ln_mgf = log_sum_exp(
        p.iter()
            .zip(phi)
            .filter(|(pi, _)| **pi > 0.0)
            .map(|(pi, f)| pi.ln() + f),
    );
    let side = |d: &[f64]| {
        let lhs: f64 = d.iter().zip(phi).map(|(di, f)| di * f).sum();
        (lhs, kl_finite(d, p) + ln_mgf)
    };
    let (lhs, rhs) = side(q);
    let gibbs: Vec<f64> = p
        .iter()
        .zip(phi)
        .map(|(pi, f)| {
            if *pi > 0.0 {
                (pi.ln() + f - ln_mgf).exp()
            } else {
                0.0
            }
        })
        .collect();
    let (gl, gr) = side(&gibbs);
    Ok(DvOutcome {
        lhs,
        rhs,
        gibbs_gap: (gr - gl).abs(),
    })
}

/// Random finite cases: worst `lhs − rhs` and worst Gibbs residual.
pub fn verify_donsker_varadhan_random(
    cases: usize,
    support: usize,
    seed: u64,
) -> Result<(LemmaVerdict, LemmaVerdict)> {
    if cases == 0 || support == 0 {
        return Err(Error::domain(
            "need at least one case and one support point",
        ));
    }
    let mut s = Stream::keyed(seed, &[4]);
    let mut worst_gap = f64::NEG_INFINITY;
    let mut worst_gibbs: f64 = 0.0;
    let simplex = |s: &mut Stream| {
        let raw: Vec<f64> = (0..support)
            .map(|_| -s.uniform().max(1e-300).ln())
            .collect();
        let t: f64 = raw.iter().sum();
        raw.into_iter().map(|x| x / t).collect::<Vec<_>>()
    };
    for _ in 0..cases {
        let p = simplex(&mut s);
        let q = simplex(&mut s);
        let phi: Vec<f64> = (0..support).map(|_| s.uniform_range(-5.0, 5.0)).collect();
        let o = verify_donsker_varadhan(&p, &q, &phi)?;
        worst_gap = worst_gap.max(o.lhs - o.rhs);
        worst_gibbs = worst_gibbs.max(o.gibbs_gap);
    }
    Ok((
        LemmaVerdict::exact("donsker-varadhan", worst_gap, 0.0),
        LemmaVerdict::exact("gibbs-equality", worst_gibbs, 0.0),
    ))
}

/// `P[Σ X_i ≥ Σ a_i] ≤ Σ δ_i` where `a_i` is the `(1 − δ_i)` quantile of
/// the sampling distribution, so each single event has probability `δ_i`.
pub fn verify_union_sum(cfg: &TrialConfig, per_event_deltas: &[f64]) -> Result<LemmaVerdict> {
    cfg.validate()?;
    if per_event_deltas.is_empty() || per_event_deltas.iter().any(|d| !(0.0..1.0).contains(d)) {
        return Err(Error::domain("each δ_i must lie in [0,1)"));
    }
    let quantile = |d: f64| -> Result<f64> {
        if d == 0.0 {
            // Above the support: the event never fires.
            return Ok(2.0);
        }
        match cfg.dist {
            Dist::Uniform01 => Ok(1.0 - d),
            Dist::Beta { a, b } => Ok(Beta::new(a, b)
                .expect("validated shape")
                .inverse_cdf(1.0 - d)),
            Dist::Bernoulli { .. } => Err(Error::domain(
                "union-sum check needs a continuous distribution to calibrate each event",
            )),
        }
    };
    let thresholds = per_event_deltas
        .iter()
        .map(|d| quantile(*d))
        .collect::<Result<Vec<_>>>()?;
    let total: f64 = thresholds.iter().sum();
    let sampler = cfg.dist.sampler();
    let k = thresholds.len();
    let (freq, _) = mc_mean(cfg, 5, |s| {
        let sum: f64 = (0..k).map(|_| sampler.draw(s)).sum();
        f64::from(u8::from(sum >= total))
    });
    let certified: f64 = per_event_deltas.iter().sum();
    let c = certified.min(1.0);
    let se = (c * (1.0 - c) / cfg.trials as f64).sqrt();
    Ok(LemmaVerdict::monte_carlo("union-sum", freq, se, certified))
}

/// The default battery run by the CLI.
pub fn default_suite(trials: usize, seed: u64) -> Result<Vec<LemmaVerdict>> {
    let cfg = |sample_size: usize, dist: Dist| TrialConfig {
        trials,
        seed,
        sample_size,
        dist,
    };
    let mut out = vec![
        verify_subgauss_sq(
            &cfg(1, Dist::Bernoulli { p: 0.5 }),
            1.0,
            SubGaussVariant::Full,
        )?,
        verify_subgauss_sq(
            &cfg(1, Dist::Bernoulli { p: 0.5 }),
            1.0,
            SubGaussVariant::Sqrt,
        )?,
        verify_subgauss_sq(&cfg(20, Dist::Uniform01), 1.0, SubGaussVariant::Full)?,
        verify_subgauss_sq(&cfg(20, Dist::Uniform01), 1.0, SubGaussVariant::Sqrt)?,
        verify_maurer(&cfg(0, Dist::Bernoulli { p: 0.5 }), 10)?,
        verify_maurer(&cfg(0, Dist::Uniform01), 9)?,
        verify_dgamma(&cfg(0, Dist::Bernoulli { p: 0.3 }), 5, -1.0)?,
        verify_dgamma(&cfg(0, Dist::Uniform01), 20, 0.7)?,
        verify_union_sum(&cfg(0, Dist::Uniform01), &[0.05, 0.05])?,
        verify_union_sum(&cfg(0, Dist::Beta { a: 2.0, b: 5.0 }), &[0.02, 0.03, 0.05])?,
    ];
    let (dv, gibbs) = verify_donsker_varadhan_random(10_000, 8, seed)?;
    out.push(dv);
    out.push(gibbs);
    Ok(out)
}
