//! Closed-form evaluators, one per named bound.

use std::f64::consts::LN_2;

use serde::{Deserialize, Serialize};

use super::corollary::LogMomentBound;
use super::{BoundInputs, BoundReport, Sensitivity};
use crate::error::{Error, Result};

/// Which reading of the PACOH bound to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PacohVariant {
    /// Unaveraged sum over per-task KLs with the literal `λ/(8n) + λ/(8m) − ln δ/√n` constants.
    #[default]
    AsPrinted,
    /// As printed, with the per-task KL sum divided by `n`.
    Normalized,
    /// The linear row of the two-level corollary with Hoeffding moments.
    Corollary,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum MysVariant {
    Classic,
    Quadratic,
    Lambda(f64),
}

fn check_lambda_open2(lambda: f64) -> Result<()> {
    if !(lambda > 0.0 && lambda < 2.0) {
        return Err(Error::domain(format!("λ must lie in (0,2), got {lambda}")));
    }
    Ok(())
}

/// `sqrt((kl_env + ln(2·lm/δ)) / (2(n−1)))` with `lm` the sub-Gaussian constant for `n`.
fn sub_gauss_env(inp: &BoundInputs) -> Result<(f64, f64)> {
    let nf = inp.n as f64;
    let lm = LogMomentBound::sub_gauss_sq(2.0 * (nf - 1.0) / nf, inp.sigma)?;
    let denom = 2.0 * (nf - 1.0);
    let env = ((inp.kl_env + LN_2 + lm.ln_value() - inp.delta.ln()) / denom).sqrt();
    Ok((env, 0.5 / (denom * env)))
}

/// `sqrt((kl_env + ln(4√n/δ)) / (2n))`
fn pinsker_env(inp: &BoundInputs) -> (f64, f64) {
    let nf = inp.n as f64;
    let denom = 2.0 * nf;
    let env = ((inp.kl_env + (4.0 * nf.sqrt() / inp.delta).ln()) / denom).sqrt();
    (env, 0.5 / (denom * env))
}

/// Per-task budgets `kl_env + kl_task[i] + log_term`.
fn task_budgets(inp: &BoundInputs, log_term: f64) -> impl Iterator<Item = f64> + '_ {
    inp.kl_task.iter().map(move |k| inp.kl_env + k + log_term)
}

fn finish_task_sum(
    inp: &BoundInputs,
    env_grad: f64,
    train_grad: f64,
    kl_task_grad: Vec<f64>,
) -> Sensitivity {
    Sensitivity {
        train: train_grad,
        kl_env: env_grad + kl_task_grad.iter().sum::<f64>(),
        kl_task: {
            debug_assert_eq!(kl_task_grad.len(), inp.n);
            kl_task_grad
        },
    }
}

/// `train + sqrt((kl_env + ln(2n/δ))/(2(n−1))) + (1/n) Σ_i sqrt((kl_env + kl_i + ln(2nm/δ))/(2(m−1)))`
pub fn bound_mlap(inp: &BoundInputs) -> Result<BoundReport> {
    inp.validate()?;
    inp.require_min(2, 2)?;
    let (nf, mf) = (inp.n as f64, inp.m as f64);
    let (env, env_grad) = sub_gauss_env(inp)?;
    let lm = LogMomentBound::sub_gauss_sq(2.0 * (mf - 1.0) / mf, inp.sigma)?;
    let log_term = (2.0 * nf).ln() + lm.ln_value() - inp.delta.ln();
    let denom = 2.0 * (mf - 1.0);
    let roots: Vec<f64> = task_budgets(inp, log_term)
        .map(|b| (b / denom).sqrt())
        .collect();
    let task = roots.iter().sum::<f64>() / nf;
    let grads = roots.iter().map(|r| 0.5 / (denom * r) / nf).collect();
    Ok(BoundReport::new("mlap")
        .add_term("train", inp.train_loss)
        .add_term("env", env)
        .add_term("task", task)
        .finish(finish_task_sum(inp, env_grad, 1.0, grads)))
}

/// PACOH bound; see [`PacohVariant`].
pub fn bound_pacoh(
    inp: &BoundInputs,
    lambda: f64,
    beta: f64,
    variant: PacohVariant,
) -> Result<BoundReport> {
    inp.validate()?;
    if !(lambda > 0.0 && beta > 0.0) {
        return Err(Error::domain(format!(
            "λ and β must be positive, got {lambda}, {beta}"
        )));
    }
    let (nf, mf) = (inp.n as f64, inp.m as f64);
    let report = BoundReport::new("pacoh")
        .add_hyper("lambda", lambda)
        .add_hyper("beta", beta);
    let report = match variant {
        PacohVariant::AsPrinted | PacohVariant::Normalized => {
            let w = if variant == PacohVariant::Normalized {
                1.0 / nf
            } else {
                1.0
            };
            let sum: f64 = inp.kl_task.iter().sum();
            report
                .add_term("train", inp.train_loss)
                .add_term("moment", lambda / (8.0 * nf) + lambda / (8.0 * mf))
                .add_term("confidence", -inp.delta.ln() / nf.sqrt())
                .add_term("task", w * sum / beta)
                .add_term("env", (1.0 / beta + 1.0 / lambda) * inp.kl_env)
                .finish(Sensitivity {
                    train: 1.0,
                    kl_env: 1.0 / beta + 1.0 / lambda,
                    kl_task: vec![w / beta; inp.n],
                })
        }
        PacohVariant::Corollary => {
            let s2 = inp.sigma * inp.sigma;
            let env = (inp.kl_env + (2.0 / inp.delta).ln()) / lambda + lambda * s2 / (2.0 * nf);
            let log_term = (2.0 * nf / inp.delta).ln();
            let task = task_budgets(inp, log_term).map(|b| b / beta).sum::<f64>() / nf
                + beta * s2 / (2.0 * mf);
            report
                .add_term("train", inp.train_loss)
                .add_term("env", env)
                .add_term("task", task)
                .finish(Sensitivity {
                    train: 1.0,
                    kl_env: 1.0 / lambda + 1.0 / beta,
                    kl_task: vec![1.0 / (beta * nf); inp.n],
                })
        }
    };
    Ok(report)
}

/// `train/(1−λ/2) + sqrt((kl_env + ln(2n/δ))/(2(n−1))) + (1/n) Σ_i (kl_env + kl_i + ln(4n√m/δ))/(mλ(1−λ/2))`
pub fn bound_lambda_liu(inp: &BoundInputs, lambda: f64) -> Result<BoundReport> {
    inp.validate()?;
    check_lambda_open2(lambda)?;
    inp.require_min(2, 1)?;
    let (nf, mf) = (inp.n as f64, inp.m as f64);
    let (env, env_grad) = sub_gauss_env(inp)?;
    let h = 1.0 - 0.5 * lambda;
    let log_term = (4.0 * nf * mf.sqrt() / inp.delta).ln();
    let scale = mf * lambda * h;
    let task = task_budgets(inp, log_term).sum::<f64>() / (nf * scale);
    Ok(BoundReport::new("lambda-liu")
        .add_term("train", inp.train_loss / h)
        .add_term("env", env)
        .add_term("task", task)
        .add_hyper("lambda", lambda)
        .finish(finish_task_sum(
            inp,
            env_grad,
            1.0 / h,
            vec![1.0 / (nf * scale); inp.n],
        )))
}

/// The three kl-based rows: environment level by Pinsker, task level by the
/// chosen relaxation, with `2√ℓ` moment constants at both levels.
pub fn bound_mys(inp: &BoundInputs, variant: MysVariant) -> Result<BoundReport> {
    inp.validate()?;
    let (nf, mf) = (inp.n as f64, inp.m as f64);
    let (env, env_grad) = pinsker_env(inp);
    let log_term = (4.0 * nf * mf.sqrt() / inp.delta).ln();
    let budgets: Vec<f64> = task_budgets(inp, log_term).collect();
    let t = inp.train_loss;
    let (name, train_term, task, train_grad, grads) = match variant {
        MysVariant::Classic => {
            let roots: Vec<f64> = budgets.iter().map(|b| (b / (2.0 * mf)).sqrt()).collect();
            let grads = roots.iter().map(|r| 0.25 / (mf * r * nf)).collect();
            ("mys-classic", t, roots.iter().sum::<f64>() / nf, 1.0, grads)
        }
        MysVariant::Quadratic => {
            let mut avg = 0.0;
            let mut train_grad = 0.0;
            let mut grads = Vec::with_capacity(inp.n);
            for b in &budgets {
                let x = b / (2.0 * mf);
                let (r, s) = ((t + x).sqrt(), x.sqrt());
                avg += (r + s).powi(2) / nf;
                train_grad += (r + s) / r / nf;
                grads.push((r + s) * (1.0 / r + 1.0 / s) / (2.0 * mf) / nf);
            }
            ("mys-quadratic", t, avg - t, train_grad, grads)
        }
        MysVariant::Lambda(lambda) => {
            check_lambda_open2(lambda)?;
            let h = 1.0 - 0.5 * lambda;
            let scale = mf * lambda * h;
            let task = budgets.iter().sum::<f64>() / (nf * scale);
            (
                "mys-lambda",
                t / h,
                task,
                1.0 / h,
                vec![1.0 / (nf * scale); inp.n],
            )
        }
    };
    let mut report = BoundReport::new(name)
        .add_term("train", train_term)
        .add_term("env", env)
        .add_term("task", task);
    if let MysVariant::Lambda(lambda) = variant {
        report = report.add_hyper("lambda", lambda);
    }
    Ok(report.finish(finish_task_sum(inp, env_grad, train_grad, grads)))
}

/// `k_e k_t train + λ_e k_e (kl_env + ln(2/δ))/n + k_e λ_t k_t (1/n) Σ_i (kl_env + kl_i + ln(2n/δ))/m`
/// with `k = 1/(1 − 1/(2λ))`.
pub fn bound_fast_rate(
    inp: &BoundInputs,
    lambda_env: f64,
    lambda_task: f64,
) -> Result<BoundReport> {
    inp.validate()?;
    if !(lambda_env > 0.5 && lambda_task > 0.5) {
        return Err(Error::domain(format!(
            "fast-rate needs λ_env, λ_task > 0.5, got {lambda_env}, {lambda_task}"
        )));
    }
    let (nf, mf) = (inp.n as f64, inp.m as f64);
    let ke = 1.0 / (1.0 - 0.5 / lambda_env);
    let kt = 1.0 / (1.0 - 0.5 / lambda_task);
    let env_coef = lambda_env * ke / nf;
    let env = env_coef * (inp.kl_env + (2.0 / inp.delta).ln());
    let task_coef = ke * lambda_task * kt / (mf * nf);
    let task = task_coef * task_budgets(inp, (2.0 * nf / inp.delta).ln()).sum::<f64>();
    Ok(BoundReport::new("fast-rate")
        .add_term("train", ke * kt * inp.train_loss)
        .add_term("env", env)
        .add_term("task", task)
        .add_hyper("lambda_env", lambda_env)
        .add_hyper("lambda_task", lambda_task)
        .finish(finish_task_sum(
            inp,
            env_coef,
            ke * kt,
            vec![task_coef; inp.n],
        )))
}

/// Shared shape of the single-square bounds: `train + rate·sqrt(w_env·kl_env + mean kl_task + log_term)`.
fn single_square(
    inp: &BoundInputs,
    name: &str,
    rate: f64,
    w_env: f64,
    log_term: f64,
) -> BoundReport {
    let nf = inp.n as f64;
    let comp = (w_env * inp.kl_env + inp.mean_kl_task() + log_term).sqrt();
    let d = 0.5 * rate / comp;
    BoundReport::new(name)
        .add_term("train", inp.train_loss)
        .add_term("gap", rate * comp)
        .add_factor("rate", rate)
        .add_factor("complexity", comp)
        .finish(Sensitivity {
            train: 1.0,
            kl_env: w_env * d,
            kl_task: vec![d / nf; inp.n],
        })
}

/// Gap `sqrt(((n−1) + 2(m−1))/(2(n−1)(m−1))) · sqrt(2 kl_env + mean kl_task + ln(m√n/δ))`.
pub fn bound_new_classic(inp: &BoundInputs) -> Result<BoundReport> {
    inp.validate()?;
    inp.require_min(2, 2)?;
    let (a, b) = (inp.n as f64 - 1.0, inp.m as f64 - 1.0);
    let rate = ((a + 2.0 * b) / (2.0 * a * b)).sqrt();
    let log_term = (inp.m as f64 * (inp.n as f64).sqrt() / inp.delta).ln();
    Ok(single_square(inp, "new-classic", rate, 2.0, log_term))
}

/// Gap with `a = n − n^{1/(2k)}`, `b = m − m^{1/(2k)}`:
/// `sqrt((a + 2b)/(2ab)) · sqrt(2 kl_env + mean kl_task + ln((√n·m)^{1/2 − 1/(4k)}/δ))`.
pub fn bound_sqrt_k(inp: &BoundInputs, k: u32) -> Result<BoundReport> {
    inp.validate()?;
    if k == 0 {
        return Err(Error::domain("k must be positive"));
    }
    let (nf, mf) = (inp.n as f64, inp.m as f64);
    let e = 1.0 / (2.0 * k as f64);
    let (a, b) = (nf - nf.powf(e), mf - mf.powf(e));
    if !(a > 0.0 && b > 0.0) {
        return Err(Error::domain(format!(
            "sqrt-k needs n − n^(1/2k) > 0 and m − m^(1/2k) > 0, got n = {}, m = {}",
            inp.n, inp.m
        )));
    }
    let rate = ((a + 2.0 * b) / (2.0 * a * b)).sqrt();
    let log_term = (0.5 - 0.5 * e) * (nf.sqrt() * mf).ln() - inp.delta.ln();
    Ok(single_square(inp, "sqrt-k", rate, 2.0, log_term).add_hyper("k", k as f64))
}

/// Gap `sqrt((n/2 + m)/(nm/2)) · sqrt(kl_env + mean kl_task + ln(2√2/δ))`.
pub fn bound_st_markov(inp: &BoundInputs) -> Result<BoundReport> {
    inp.validate()?;
    inp.require_min(2, 1)?;
    let (nf, mf) = (inp.n as f64, inp.m as f64);
    let rate = ((0.5 * nf + mf) / (0.5 * nf * mf)).sqrt();
    let log_term = (2.0 * std::f64::consts::SQRT_2 / inp.delta).ln();
    Ok(single_square(inp, "st-markov", rate, 1.0, log_term))
}

/// `train + sqrt((kl + ln(m/δ))/(2(m−1)))`
pub fn bound_single_task_mcallester(m: usize, delta: f64, kl: f64, train: f64) -> Result<f64> {
    mcallester_with_grad(m, delta, kl, train).map(|(v, _)| v)
}

/// Single-task bound and its derivative with respect to `kl`.
pub fn mcallester_with_grad(m: usize, delta: f64, kl: f64, train: f64) -> Result<(f64, f64)> {
    if m < 2 {
        return Err(Error::domain(format!(
            "single-task bound needs m >= 2, got {m}"
        )));
    }
    if !(delta > 0.0 && delta < 1.0) || !(kl >= 0.0) || !(0.0..=1.0).contains(&train) {
        return Err(Error::domain("single-task bound inputs out of domain"));
    }
    let denom = 2.0 * (m as f64 - 1.0);
    let root = ((kl + (m as f64 / delta).ln()) / denom).sqrt();
    Ok((train + root, 0.5 / (denom * root)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn zero(n: usize, m: usize, delta: f64) -> BoundInputs {
        BoundInputs::zero(n, m, delta).unwrap()
    }

    #[test]
    fn mlap_fixed_point() {
        let r = bound_mlap(&zero(2, 2, 0.1)).unwrap();
        assert_abs_diff_eq!(
            r.term("env").unwrap(),
            1.358_101_515_740_619_5,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            r.term("task").unwrap(),
            1.480_207_187_300_798_4,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(r.value, 2.838_308_703_041_417_9, epsilon = 1e-12);
        let mut one = zero(2, 2, 0.1);
        one.train_loss = 1.0;
        assert_abs_diff_eq!(
            bound_mlap(&one).unwrap().value,
            3.838_308_703_041_417_9,
            epsilon = 1e-12
        );
        assert!(bound_mlap(&zero(1, 5, 0.1)).is_err());
        assert!(bound_mlap(&zero(5, 1, 0.1)).is_err());
    }

    #[test]
    fn pacoh_fixed_point() {
        let inp = zero(8, 8, (-1.0f64).exp());
        let r = bound_pacoh(&inp, 1.0, 1.0, PacohVariant::AsPrinted).unwrap();
        assert_abs_diff_eq!(r.value, 0.384_803_390_593_273_76, epsilon = 1e-12);
        assert!(bound_pacoh(&inp, 0.0, 1.0, PacohVariant::AsPrinted).is_err());
        let big = bound_pacoh(&inp, 1e9, 1.0, PacohVariant::AsPrinted).unwrap();
        assert!(big.value > 1e7);
    }

    #[test]
    fn pacoh_normalized_divides_task_sum() {
        let inp = BoundInputs::new(4, 10, 0.1, 0.2, 0.5, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let a = bound_pacoh(&inp, 2.0, 5.0, PacohVariant::AsPrinted).unwrap();
        let b = bound_pacoh(&inp, 2.0, 5.0, PacohVariant::Normalized).unwrap();
        assert_abs_diff_eq!(a.term("task").unwrap(), 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(b.term("task").unwrap(), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn lambda_liu_fixed_point_and_edges() {
        let r = bound_lambda_liu(&zero(2, 4, 0.1), 1.0).unwrap();
        assert_abs_diff_eq!(r.value, 3.895_688_423_357_533, epsilon = 1e-12);
        assert!(bound_lambda_liu(&zero(2, 4, 0.1), 0.0).is_err());
        assert!(bound_lambda_liu(&zero(2, 4, 0.1), 2.0).is_err());
        assert!(bound_lambda_liu(&zero(2, 4, 0.1), 1e-9).unwrap().value > 1e8);
        assert!(
            bound_lambda_liu(&zero(2, 4, 0.1), 2.0 - 1e-9)
                .unwrap()
                .value
                > 1e8
        );
    }

    #[test]
    fn mys_fixed_points() {
        let inp = zero(9, 9, 0.1);
        let c = bound_mys(&inp, MysVariant::Classic).unwrap();
        assert_abs_diff_eq!(c.value, 1.138_652_906_717_443, epsilon = 1e-12);
        let q = bound_mys(&inp, MysVariant::Quadratic).unwrap();
        assert_abs_diff_eq!(q.value, 2.067_883_685_726_757_2, epsilon = 1e-12);
        let l = bound_mys(&inp, MysVariant::Lambda(1.0)).unwrap();
        assert_abs_diff_eq!(l.value, q.value, epsilon = 1e-12);
        assert!(bound_mys(&inp, MysVariant::Lambda(2.5)).is_err());
    }

    #[test]
    fn mys_quadratic_at_zero_train_doubles_budget() {
        let inp = BoundInputs::new(3, 12, 0.05, 0.0, 0.4, vec![0.1, 0.7, 1.3]).unwrap();
        let q = bound_mys(&inp, MysVariant::Quadratic).unwrap();
        let log_term = (4.0 * 3.0 * 12f64.sqrt() / 0.05).ln();
        let want: f64 = inp
            .kl_task
            .iter()
            .map(|k| 2.0 * (0.4 + k + log_term) / 12.0)
            .sum::<f64>()
            / 3.0;
        assert_abs_diff_eq!(q.term("task").unwrap(), want, epsilon = 1e-12);
    }

    #[test]
    fn fast_rate_fixed_point() {
        let r = bound_fast_rate(&zero(10, 10, 0.2), 1.0, 1.0).unwrap();
        assert_abs_diff_eq!(r.value, 2.302_585_092_994_045_7, epsilon = 1e-12);
        let mut t = zero(10, 10, 0.2);
        t.train_loss = 0.3;
        let rt = bound_fast_rate(&t, 1.0, 1.0).unwrap();
        assert_abs_diff_eq!(rt.value - r.value, 1.2, epsilon = 1e-12);
        assert!(bound_fast_rate(&t, 0.5, 1.0).is_err());
    }

    #[test]
    fn single_square_fixed_points() {
        assert_abs_diff_eq!(
            bound_new_classic(&zero(2, 2, 0.1)).unwrap().value,
            2.239_075_433_242_691_2,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            bound_new_classic(&zero(5, 100, 0.1)).unwrap().value,
            1.402_522_887_113_276_4,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            bound_sqrt_k(&zero(4, 4, 0.1), 1).unwrap().value,
            1.454_934_400_174_284,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            bound_st_markov(&zero(8, 8, 0.1)).unwrap().value,
            1.119_537_716_621_345_6,
            epsilon = 1e-12
        );
        // δ = 2√2·e⁻¹ lies above 1, so the log term is set to 2 instead.
        let d = 2.0 * std::f64::consts::SQRT_2 * (-2.0f64).exp();
        assert_abs_diff_eq!(
            bound_st_markov(&zero(2, 1, d)).unwrap().value,
            2.0,
            epsilon = 1e-12
        );
        assert!(bound_new_classic(&zero(1, 2, 0.1)).is_err());
        assert!(bound_sqrt_k(&zero(1, 4, 0.1), 3).is_err());
        assert!(bound_st_markov(&zero(1, 4, 0.1)).is_err());
    }

    #[test]
    fn sqrt_k_approaches_new_classic_structure() {
        let inp = BoundInputs::new(6, 40, 0.1, 0.1, 0.3, vec![0.2; 6]).unwrap();
        let s = bound_sqrt_k(&inp, 50).unwrap();
        let c = bound_new_classic(&inp).unwrap();
        let (nf, mf) = (6.0f64, 40.0f64);
        let a = nf - nf.powf(0.01);
        let b = mf - mf.powf(0.01);
        assert_abs_diff_eq!(
            s.factors[0].1,
            ((a + 2.0 * b) / (2.0 * a * b)).sqrt(),
            epsilon = 1e-12
        );
        assert!((s.factors[0].1 / c.factors[0].1 - 1.0).abs() < 0.02);
        // The log arguments differ by the exponent on √n·m only.
        let diff = c.factors[1].1.powi(2) - s.factors[1].1.powi(2);
        let want = (mf * nf.sqrt()).ln() - (0.5 - 0.005) * (nf.sqrt() * mf).ln();
        assert_abs_diff_eq!(diff, want, epsilon = 1e-12);
    }

    #[test]
    fn single_task_mcallester() {
        assert_abs_diff_eq!(
            bound_single_task_mcallester(2, 0.2, 0.0, 0.0).unwrap(),
            1.072_983_013_144_673_6,
            epsilon = 1e-12
        );
        let far = bound_single_task_mcallester(100_000_000, 0.1, 0.0, 0.25).unwrap();
        assert!((far - 0.25).abs() < 1e-3);
        assert!(bound_single_task_mcallester(1, 0.1, 0.0, 0.0).is_err());
    }

    #[test]
    fn infinite_kl_propagates() {
        let inp = BoundInputs::new(3, 10, 0.1, 0.0, f64::INFINITY, vec![0.0; 3]).unwrap();
        assert_eq!(bound_mlap(&inp).unwrap().value, f64::INFINITY);
        assert_eq!(bound_new_classic(&inp).unwrap().value, f64::INFINITY);
        assert_eq!(
            bound_pacoh(&inp, 1.0, 1.0, PacohVariant::AsPrinted)
                .unwrap()
                .value,
            f64::INFINITY
        );
    }
}
