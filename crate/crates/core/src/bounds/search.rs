use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Bound, BoundInputs, BoundReport, Family};
use crate::error::{Error, Result};

/// Cartesian product of per-hyperparameter value lists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub axes: Vec<Vec<f64>>,
}

impl Grid {
    pub fn new(axes: Vec<Vec<f64>>) -> Self {
        Grid { axes }
    }

    /// `count` log-spaced values from `lo` to `hi` inclusive.
    pub fn logspace(lo: f64, hi: f64, count: usize) -> Vec<f64> {
        match count {
            0 => Vec::new(),
            1 => vec![lo],
            _ => {
                let (a, b) = (lo.ln(), hi.ln());
                (0..count)
                    .map(|i| (a + (b - a) * i as f64 / (count - 1) as f64).exp())
                    .collect()
            }
        }
    }

    pub fn points(&self) -> Vec<Vec<f64>> {
        let mut out = vec![Vec::new()];
        for axis in &self.axes {
            out = out
                .into_iter()
                .flat_map(|p| {
                    axis.iter().map(move |v| {
                        let mut q = p.clone();
                        q.push(*v);
                        q
                    })
                })
                .collect();
        }
        out
    }
}

pub const DEFAULT_GRID_POINTS: usize = 25;

/// Default search grid for a family; empty axes for families without
/// hyperparameters.
pub fn default_grid(family: Family) -> Grid {
    let k = DEFAULT_GRID_POINTS;
    match family {
        Family::Pacoh => Grid::new(vec![
            Grid::logspace(0.1, 1e4, k),
            Grid::logspace(0.1, 1e4, k),
        ]),
        Family::LambdaLiu | Family::MysLambda => Grid::new(vec![Grid::logspace(0.01, 1.99, k)]),
        Family::FastRate => Grid::new(vec![
            Grid::logspace(0.51, 100.0, k),
            Grid::logspace(0.51, 100.0, k),
        ]),
        Family::SqrtK => Grid::new(vec![(1..=k).map(|v| v as f64).collect()]),
        _ => Grid::new(Vec::new()),
    }
}

/// Evaluates every grid point and returns the minimizer. Invalid points are
/// skipped; ties go to the lexicographically smallest tuple.
pub fn optimize_hyperparams(
    inp: &BoundInputs,
    family: Family,
    grid: &Grid,
) -> Result<(Bound, BoundReport)> {
    let points = grid.points();
    if points.is_empty() {
        return Err(Error::domain(format!("empty grid for {family}")));
    }
    let evaluated: Vec<Option<(Vec<f64>, Bound, BoundReport)>> = points
        .into_par_iter()
        .map(|p| {
            let bound = family.with_params(&p).ok()?;
            let report = bound.evaluate(inp).ok()?;
            (!report.value.is_nan()).then_some((p, bound, report))
        })
        .collect();
    let mut best: Option<(Vec<f64>, Bound, BoundReport)> = None;
    for cand in evaluated.into_iter().flatten() {
        let better = match &best {
            None => true,
            Some((bp, _, br)) => {
                cand.2.value < br.value || (cand.2.value == br.value && cand.0 < *bp)
            }
        };
        if better {
            best = Some(cand);
        }
    }
    match best {
        Some((_, bound, mut report)) => {
            report.name = family.name().to_string();
            Ok((bound, report))
        }
        // Surface the first point's error as representative.
        None => Err(family
            .with_params(&grid.points()[0])
            .and_then(|b| b.evaluate(inp))
            .err()
            .unwrap_or_else(|| Error::domain("no valid grid point"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn inp() -> BoundInputs {
        BoundInputs::new(5, 30, 0.1, 0.2, 1.5, vec![0.5, 1.0, 2.0, 0.1, 0.0]).unwrap()
    }

    #[test]
    fn logspace_endpoints() {
        let v = Grid::logspace(0.51, 100.0, 25);
        assert_eq!(v.len(), 25);
        assert!((v[0] - 0.51).abs() < 1e-12 && (v[24] - 100.0).abs() < 1e-9);
    }

    #[test]
    fn singleton_grid_returns_that_point() {
        let g = Grid::new(vec![vec![1.3], vec![2.0]]);
        let (b, r) = optimize_hyperparams(&inp(), Family::FastRate, &g).unwrap();
        assert_eq!(
            b,
            Bound::FastRate {
                lambda_env: 1.3,
                lambda_task: 2.0
            }
        );
        assert_eq!(r.value, b.evaluate(&inp()).unwrap().value);
    }

    #[test]
    fn grid_min_is_a_lower_envelope() {
        let g = default_grid(Family::FastRate);
        let (_, best) = optimize_hyperparams(&inp(), Family::FastRate, &g).unwrap();
        for p in g.points() {
            let v = Family::FastRate
                .with_params(&p)
                .unwrap()
                .evaluate(&inp())
                .unwrap()
                .value;
            assert!(best.value <= v);
        }
        let one = Bound::FastRate {
            lambda_env: 1.0,
            lambda_task: 1.0,
        };
        assert!(best.value <= one.evaluate(&inp()).unwrap().value);
    }

    #[test]
    fn refinement_never_increases_the_minimum() {
        let coarse = Grid::new(vec![Grid::logspace(0.01, 1.99, 5)]);
        let mut fine_axis = coarse.axes[0].clone();
        fine_axis.extend(Grid::logspace(0.02, 1.9, 40));
        let fine = Grid::new(vec![fine_axis]);
        let (_, a) = optimize_hyperparams(&inp(), Family::LambdaLiu, &coarse).unwrap();
        let (_, b) = optimize_hyperparams(&inp(), Family::LambdaLiu, &fine).unwrap();
        assert!(b.value <= a.value);
    }

    #[test]
    fn invalid_points_are_skipped() {
        let g = Grid::new(vec![vec![0.3, 0.4, 1.0]]);
        let (b, _) =
            optimize_hyperparams(&inp(), Family::MysLambda, &Grid::new(vec![vec![3.0, 1.0]]))
                .unwrap();
        assert_eq!(b, Bound::MysLambda { lambda: 1.0 });
        let all_bad = Grid::new(vec![vec![0.3, 0.4]]);
        assert!(optimize_hyperparams(
            &inp(),
            Family::FastRate,
            &Grid::new(vec![vec![0.3], vec![1.0]])
        )
        .is_err());
        assert!(optimize_hyperparams(&inp(), Family::SqrtK, &all_bad).is_err());
        assert!(optimize_hyperparams(&inp(), Family::SqrtK, &g).is_ok());
    }

    #[test]
    fn ties_prefer_smaller_tuple() {
        // With zero KLs the printed PACOH value does not depend on β.
        let zero = BoundInputs::zero(5, 30, 0.1).unwrap();
        let g = Grid::new(vec![vec![4.0], vec![9.0, 3.0, 5.0]]);
        let (b, _) = optimize_hyperparams(&zero, Family::Pacoh, &g).unwrap();
        match b {
            Bound::Pacoh { beta, .. } => assert_eq!(beta, 3.0),
            other => panic!("unexpected {other:?}"),
        }
    }
}
