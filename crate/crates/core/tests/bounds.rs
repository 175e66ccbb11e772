#![allow(clippy::excessive_precision)]

use metapac_core::bounds::*;
use metapac_core::rng::Stream;
use proptest::prelude::*;

fn random_inputs(s: &mut Stream, n_min: usize, m_min: usize) -> BoundInputs {
    let n = n_min + s.below(12);
    let m = m_min + s.below(300);
    let delta = s.uniform_range(0.001, 0.5);
    let kl_task = (0..n).map(|_| s.uniform_range(0.0, 20.0)).collect();
    BoundInputs::new(
        n,
        m,
        delta,
        s.uniform(),
        s.uniform_range(0.0, 10.0),
        kl_task,
    )
    .unwrap()
}

fn corollary_bounds(s: &mut Stream) -> Vec<Bound> {
    vec![
        Bound::Mlap,
        Bound::LambdaLiu {
            lambda: s.uniform_range(0.05, 1.95),
        },
        Bound::MysClassic,
        Bound::MysQuadratic,
        Bound::MysLambda {
            lambda: s.uniform_range(0.05, 1.95),
        },
        Bound::FastRate {
            lambda_env: s.uniform_range(0.55, 20.0),
            lambda_task: s.uniform_range(0.55, 20.0),
        },
        Bound::Pacoh {
            lambda: s.uniform_range(0.1, 500.0),
            beta: s.uniform_range(0.1, 500.0),
            variant: PacohVariant::Corollary,
        },
    ]
}

#[test]
fn corollary_reproduces_specializations() {
    let mut s = Stream::new(2024, 1);
    for _ in 0..100 {
        let inp = random_inputs(&mut s, 2, 2);
        for b in corollary_bounds(&mut s) {
            let direct = b.evaluate(&inp).unwrap();
            let spec = table_spec(&b, &inp).unwrap();
            let generic = generic_corollary_bound(&inp, &spec).unwrap();
            let tol = 1e-12 * direct.value.abs().max(1.0);
            assert!(
                (direct.value - generic.value).abs() <= tol,
                "{b:?}: {} vs {}",
                direct.value,
                generic.value
            );
            let sd = &direct.sensitivity;
            let sg = &generic.sensitivity;
            assert!((sd.train - sg.train).abs() <= 1e-10 * sd.train.abs().max(1.0));
            assert!((sd.kl_env - sg.kl_env).abs() <= 1e-10 * sd.kl_env.abs().max(1.0));
            for (a, b) in sd.kl_task.iter().zip(&sg.kl_task) {
                assert!((a - b).abs() <= 1e-10 * a.abs().max(1.0));
            }
        }
    }
}

#[test]
fn printed_pacoh_is_not_a_corollary_instance() {
    let inp = BoundInputs::zero(8, 8, (-1.0f64).exp()).unwrap();
    let printed = Bound::Pacoh {
        lambda: 1.0,
        beta: 1.0,
        variant: PacohVariant::AsPrinted,
    };
    assert!(table_spec(&printed, &inp).is_err());
    let cor = Bound::Pacoh {
        lambda: 1.0,
        beta: 1.0,
        variant: PacohVariant::Corollary,
    };
    let a = printed.evaluate(&inp).unwrap().value;
    let b = cor.evaluate(&inp).unwrap().value;
    assert!((a - b).abs() > 1e-3);
}

fn all_bounds() -> Vec<Bound> {
    vec![
        Bound::Mlap,
        Bound::Pacoh {
            lambda: 30.0,
            beta: 40.0,
            variant: PacohVariant::AsPrinted,
        },
        Bound::Pacoh {
            lambda: 30.0,
            beta: 40.0,
            variant: PacohVariant::Normalized,
        },
        Bound::Pacoh {
            lambda: 30.0,
            beta: 40.0,
            variant: PacohVariant::Corollary,
        },
        Bound::LambdaLiu { lambda: 0.7 },
        Bound::MysClassic,
        Bound::MysQuadratic,
        Bound::MysLambda { lambda: 1.3 },
        Bound::FastRate {
            lambda_env: 2.0,
            lambda_task: 0.9,
        },
        Bound::NewClassic,
        Bound::SqrtK { k: 3 },
        Bound::StMarkov,
    ]
}

#[test]
fn reports_recompose_and_dominate_train() {
    let mut s = Stream::new(7, 2);
    for _ in 0..200 {
        let inp = random_inputs(&mut s, 2, 2);
        for b in all_bounds() {
            let r = b.evaluate(&inp).unwrap();
            assert!(
                (r.terms_sum() - r.value).abs() <= 1e-12 * r.value.max(1.0),
                "{b:?}"
            );
            if let Some(p) = r.factors_product() {
                assert!((p - r.gap()).abs() <= 1e-12 * r.gap().max(1.0), "{b:?}");
            }
            assert!(r.value >= inp.train_loss, "{b:?}");
        }
    }
}

#[test]
fn sensitivities_match_finite_differences() {
    let mut s = Stream::new(99, 3);
    let h = 1e-6;
    for _ in 0..30 {
        let mut inp = random_inputs(&mut s, 2, 2);
        inp.train_loss = s.uniform_range(0.05, 0.95);
        for b in all_bounds() {
            let r = b.evaluate(&inp).unwrap();
            let f = |i: &BoundInputs| b.evaluate(i).unwrap().value;
            let check = |fd: f64, an: f64, what: &str| {
                assert!(
                    (fd - an).abs() <= 1e-5 * an.abs().max(1.0),
                    "{b:?} {what}: fd {fd} analytic {an}"
                );
            };
            let (mut up, mut dn) = (inp.clone(), inp.clone());
            up.train_loss += h;
            dn.train_loss -= h;
            check((f(&up) - f(&dn)) / (2.0 * h), r.sensitivity.train, "train");
            let (mut up, mut dn) = (inp.clone(), inp.clone());
            up.kl_env += h;
            dn.kl_env -= h;
            check(
                (f(&up) - f(&dn)) / (2.0 * h),
                r.sensitivity.kl_env,
                "kl_env",
            );
            let (mut up, mut dn) = (inp.clone(), inp.clone());
            up.kl_task[0] += h;
            dn.kl_task[0] -= h;
            check(
                (f(&up) - f(&dn)) / (2.0 * h),
                r.sensitivity.kl_task[0],
                "kl_task",
            );
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn monotone_in_kl_and_confidence(seed in any::<u64>(), bump in 0.01..5.0f64, which in 0usize..3) {
        let mut s = Stream::new(seed, 4);
        let inp = random_inputs(&mut s, 2, 2);
        let mut more = inp.clone();
        match which {
            0 => more.kl_env += bump,
            1 => more.kl_task[0] += bump,
            _ => more.delta = inp.delta * (-bump).exp(),
        }
        for b in all_bounds() {
            let v0 = b.evaluate(&inp).unwrap().value;
            let v1 = b.evaluate(&more).unwrap().value;
            prop_assert!(v1 >= v0, "{:?} decreased: {} -> {}", b, v0, v1);
        }
    }
}

#[test]
fn not_monotone_in_sample_counts() {
    // The ln n and ln m confidence terms can outweigh the shrinking rate.
    let a = BoundInputs::zero(2, 2, 0.1).unwrap();
    let b = BoundInputs::zero(3, 2, 0.1).unwrap();
    let pa = Bound::Pacoh {
        lambda: 1.0,
        beta: 1.0,
        variant: PacohVariant::Corollary,
    };
    assert!(pa.evaluate(&b).unwrap().value > pa.evaluate(&a).unwrap().value);
    let c = BoundInputs::new(2, 2, 0.1, 0.0, 0.0, vec![0.0; 2]).unwrap();
    let d = BoundInputs::new(2, 2000, 0.1, 0.0, 0.0, vec![0.0; 2]).unwrap();
    assert!(
        Bound::MysClassic.evaluate(&d).unwrap().value
            < Bound::MysClassic.evaluate(&c).unwrap().value
    );
}

#[test]
fn single_square_versus_two_roots_at_fixed_point() {
    // At n = 5, m = 100 with zero KLs the single-square bound is the larger one.
    let inp = BoundInputs::zero(5, 100, 0.1).unwrap();
    let nc = bound_new_classic(&inp).unwrap().value;
    let ml = bound_mlap(&inp).unwrap().value;
    assert!((nc - 1.402_522_887_113_276_4).abs() < 1e-12);
    assert!((ml - 0.974_391_265_360_807_02).abs() < 1e-12);
    assert!(nc > ml);
}

#[test]
fn doubling_task_kl_scales_by_less_than_root_two() {
    let base = BoundInputs::new(4, 50, 0.1, 0.0, 0.0, vec![1.0, 2.0, 0.5, 3.0]).unwrap();
    let mut doubled = base.clone();
    doubled.kl_task.iter_mut().for_each(|k| *k *= 2.0);
    let a = bound_new_classic(&base).unwrap().value;
    let b = bound_new_classic(&doubled).unwrap().value;
    assert!(b > a && b < std::f64::consts::SQRT_2 * a);
}

#[test]
fn family_names_round_trip() {
    for f in Family::ALL {
        assert_eq!(f.name().parse::<Family>().unwrap(), f);
    }
    let mut names: Vec<_> = Family::ALL.iter().map(|f| f.name()).collect();
    let sorted = {
        let mut v = names.clone();
        v.sort();
        v
    };
    assert_eq!(names, sorted);
    names.dedup();
    assert_eq!(names.len(), 10);
}
