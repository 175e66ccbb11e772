use metapac_core::data::*;
use metapac_core::model::{LinearModel, Loss};
use metapac_core::rng::Stream;
use metapac_core::Error;

fn spec(seed: u64) -> SyntheticEnvSpec {
    SyntheticEnvSpec {
        dim: 3,
        env_mean: vec![0.8, -0.4, 1.1],
        task_spread: 0.25,
        obs_noise: 0.2,
        m: 10,
        n: 4,
        n_test_tasks: 3,
        m_test: 10,
        seed,
    }
}

#[test]
fn population_oracle_matches_monte_carlo() {
    let env = gen_synthetic(&spec(3)).unwrap();
    let model = LinearModel::new(3, 1);
    let mut s = Stream::new(12, 0);
    let draws = 1_000_000;
    for pair in 0..20 {
        let task_w = env.oracle.sample_task(&mut s);
        let params: Vec<f64> = (0..4).map(|_| 0.7 * s.normal()).collect();
        let data = env.oracle.sample_data(&task_w, draws, &mut s);
        for loss in [Loss::ExpSquare, Loss::ClippedSquare] {
            let exact = env.oracle.population_loss(&params, &task_w, loss);
            let mut pred = [0.0];
            let (mut sum, mut sq) = (0.0, 0.0);
            for i in 0..data.rows() {
                model.predict(&params, data.x(i), &mut pred);
                let v = loss.of_sq((pred[0] - data.y(i)[0]).powi(2));
                sum += v;
                sq += v * v;
            }
            let mean = sum / draws as f64;
            let sd = ((sq / draws as f64 - mean * mean) / draws as f64).sqrt();
            assert!(
                (mean - exact).abs() <= 5.0 * sd,
                "pair {pair} {loss:?}: mc {mean} exact {exact} sd {sd}"
            );
        }
    }
}

#[test]
fn task_floor_is_attained_at_the_task_weights() {
    let env = gen_synthetic(&spec(4)).unwrap();
    let mut s = Stream::new(2, 2);
    for loss in [Loss::ExpSquare, Loss::ClippedSquare] {
        let floor = env.oracle.task_floor(loss);
        for _ in 0..100 {
            let w = env.oracle.sample_task(&mut s);
            let mut at = w.clone();
            at.push(0.0);
            assert_eq!(env.oracle.population_loss(&at, &w, loss), floor);
            let off: Vec<f64> = at.iter().map(|v| v + 0.1 * s.normal()).collect();
            assert!(env.oracle.population_loss(&off, &w, loss) > floor);
        }
    }
}

#[test]
fn synthetic_dataset_bytes_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.bin"), dir.path().join("b.bin"));
    save_dataset(&a, &gen_synthetic(&spec(8)).unwrap().train).unwrap();
    save_dataset(&b, &gen_synthetic(&spec(8)).unwrap().train).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(
        load_dataset(&a).unwrap(),
        gen_synthetic(&spec(8)).unwrap().train
    );
}

#[test]
fn idx_files_round_trip_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let img = dir.path().join("img.idx");
    write_idx(&img, IMAGE_MAGIC, &[1, 2, 2], &[0, 255, 128, 64]).unwrap();
    let t = read_idx(&img).unwrap();
    assert_eq!(t.data, vec![0.0, 1.0, 128.0 / 255.0, 64.0 / 255.0]);
    std::fs::write(&img, [0u8, 0, 8, 3, 0, 0]).unwrap();
    assert!(matches!(
        read_idx(&img),
        Err(Error::Format { offset: 6, .. })
    ));
    assert!(matches!(
        read_idx(dir.path().join("missing")),
        Err(Error::Io(_))
    ));
}

#[test]
fn emitted_losses_stay_in_unit_interval() {
    let env = gen_synthetic(&spec(6)).unwrap();
    let model = LinearModel::new(3, 1);
    let mut s = Stream::new(6, 6);
    for t in &env.train.tasks {
        for _ in 0..50 {
            let w: Vec<f64> = (0..4).map(|_| 20.0 * s.normal()).collect();
            for loss in [Loss::ExpSquare, Loss::ClippedSquare] {
                let v = model.empirical_loss(&w, &t.train, loss);
                assert!((0.0..=1.0).contains(&v));
                let w_star = &env.oracle.train_weights[0];
                let pop = env.oracle.population_loss(&w, w_star, loss);
                assert!((0.0..=1.0).contains(&pop));
            }
        }
    }
}
