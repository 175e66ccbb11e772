//! Linear predictor `ŷ = W x + b` with `K` outputs and bounded squared losses.
//!
//! Parameters are flattened row-major per output: the `p` weights of output
//! `k` followed by its bias.

use serde::{Deserialize, Serialize};

use crate::data::Samples;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Loss {
    /// `1 − exp(−‖ŷ − y‖²)`
    #[default]
    ExpSquare,
    /// `min(1, ‖ŷ − y‖²)`, subgradient 0 where clipped.
    ClippedSquare,
}

impl Loss {
    pub fn of_sq(self, r2: f64) -> f64 {
        match self {
            Loss::ExpSquare => -(-r2).exp_m1(),
            Loss::ClippedSquare => r2.min(1.0),
        }
    }

    /// `dℓ/d(r²)`.
    fn slope(self, r2: f64) -> f64 {
        match self {
            Loss::ExpSquare => (-r2).exp(),
            Loss::ClippedSquare => {
                if r2 < 1.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinearModel {
    pub input_dim: usize,
    pub output_dim: usize,
}

impl LinearModel {
    pub fn new(input_dim: usize, output_dim: usize) -> Self {
        LinearModel {
            input_dim,
            output_dim,
        }
    }

    pub fn num_params(&self) -> usize {
        self.output_dim * (self.input_dim + 1)
    }

    /// Glorot-uniform half-width `sqrt(6/(fan_in + fan_out))`.
    pub fn glorot_limit(&self) -> f64 {
        (6.0 / (self.input_dim + self.output_dim) as f64).sqrt()
    }

    pub fn predict(&self, w: &[f64], x: &[f64], out: &mut [f64]) {
        let stride = self.input_dim + 1;
        for (k, o) in out.iter_mut().enumerate() {
            let row = &w[k * stride..(k + 1) * stride];
            *o = row[self.input_dim]
                + row[..self.input_dim]
                    .iter()
                    .zip(x)
                    .map(|(a, b)| a * b)
                    .sum::<f64>();
        }
    }

    fn sq_residual(&self, w: &[f64], x: &[f64], y: &[f64], pred: &mut [f64]) -> f64 {
        self.predict(w, x, pred);
        pred.iter_mut()
            .zip(y)
            .map(|(p, t)| {
                *p -= t;
                *p * *p
            })
            .sum()
    }

    /// Mean loss over `samples`.
    pub fn empirical_loss(&self, w: &[f64], samples: &Samples, loss: Loss) -> f64 {
        if samples.rows() == 0 {
            return 0.0;
        }
        let mut pred = vec![0.0; self.output_dim];
        let total: f64 = (0..samples.rows())
            .map(|i| loss.of_sq(self.sq_residual(w, samples.x(i), samples.y(i), &mut pred)))
            .sum();
        total / samples.rows() as f64
    }

    /// Mean loss over `samples`, adding its gradient with respect to `w`
    /// into `grad` scaled by `scale`.
    pub fn empirical_loss_grad(
        &self,
        w: &[f64],
        samples: &Samples,
        loss: Loss,
        scale: f64,
        grad: &mut [f64],
    ) -> f64 {
        let rows = samples.rows();
        if rows == 0 {
            return 0.0;
        }
        let stride = self.input_dim + 1;
        let mut pred = vec![0.0; self.output_dim];
        let c = scale / rows as f64;
        let mut total = 0.0;
        for i in 0..rows {
            let x = samples.x(i);
            let r2 = self.sq_residual(w, x, samples.y(i), &mut pred);
            total += loss.of_sq(r2);
            let s = loss.slope(r2);
            if s == 0.0 {
                continue;
            }
            for (k, r) in pred.iter().enumerate() {
                let g = c * s * 2.0 * r;
                let row = &mut grad[k * stride..(k + 1) * stride];
                for (gj, xj) in row[..self.input_dim].iter_mut().zip(x) {
                    *gj += g * xj;
                }
                row[self.input_dim] += g;
            }
        }
        total / rows as f64
    }

    /// Fraction of rows whose largest output is not the largest target.
    pub fn argmax_error(&self, w: &[f64], samples: &Samples) -> f64 {
        if samples.rows() == 0 {
            return 0.0;
        }
        let mut pred = vec![0.0; self.output_dim];
        let wrong = (0..samples.rows())
            .filter(|&i| {
                self.predict(w, samples.x(i), &mut pred);
                argmax(&pred) != argmax(samples.y(i))
            })
            .count();
        wrong as f64 / samples.rows() as f64
    }
}

fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &x)| {
            if x > best.1 {
                (i, x)
            } else {
                best
            }
        })
        .0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Stream;
    use proptest::prelude::*;

    fn random_samples(s: &mut Stream, rows: usize, p: usize, k: usize, scale: f64) -> Samples {
        let x = (0..rows * p).map(|_| s.normal()).collect();
        let y = (0..rows * k).map(|_| scale * s.normal()).collect();
        Samples::new(p, k, x, y).unwrap()
    }

    #[test]
    fn predict_layout() {
        let m = LinearModel::new(2, 2);
        let w = [1.0, 2.0, 0.5, -1.0, 0.0, 3.0];
        let mut out = [0.0; 2];
        m.predict(&w, &[1.0, 1.0], &mut out);
        assert_eq!(out, [3.5, 2.0]);
        assert_eq!(m.num_params(), 6);
    }

    #[test]
    fn glorot_scalar_model() {
        assert!((LinearModel::new(1, 1).glorot_limit() - 3f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut s = Stream::new(3, 0);
        for loss in [Loss::ExpSquare, Loss::ClippedSquare] {
            let m = LinearModel::new(3, 2);
            let data = random_samples(&mut s, 40, 3, 2, 0.3);
            let w: Vec<f64> = (0..m.num_params()).map(|_| 0.2 * s.normal()).collect();
            let mut g = vec![0.0; w.len()];
            m.empirical_loss_grad(&w, &data, loss, 1.0, &mut g);
            let h = 1e-6;
            for j in 0..w.len() {
                let (mut up, mut dn) = (w.clone(), w.clone());
                up[j] += h;
                dn[j] -= h;
                let fd = (m.empirical_loss(&up, &data, loss) - m.empirical_loss(&dn, &data, loss))
                    / (2.0 * h);
                assert!(
                    (fd - g[j]).abs() < 1e-6,
                    "{loss:?} coord {j}: {fd} vs {}",
                    g[j]
                );
            }
        }
    }

    #[test]
    fn clipped_region_has_zero_gradient() {
        let m = LinearModel::new(1, 1);
        let data = Samples::new(1, 1, vec![1.0], vec![10.0]).unwrap();
        let mut g = vec![0.0; 2];
        let v = m.empirical_loss_grad(&[0.0, 0.0], &data, Loss::ClippedSquare, 1.0, &mut g);
        assert_eq!(v, 1.0);
        assert_eq!(g, vec![0.0, 0.0]);
    }

    proptest! {
        #[test]
        fn losses_stay_in_unit_interval(seed in any::<u64>(), scale in 0.0..100.0f64) {
            let mut s = Stream::new(seed, 1);
            let m = LinearModel::new(2, 3);
            let data = random_samples(&mut s, 10, 2, 3, scale);
            let w: Vec<f64> = (0..m.num_params()).map(|_| scale * s.normal()).collect();
            for loss in [Loss::ExpSquare, Loss::ClippedSquare] {
                let v = m.empirical_loss(&w, &data, loss);
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }
    }
}
