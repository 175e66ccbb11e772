use std::path::Path;
use std::process::{Command, Output};

fn metapac(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_metapac"))
        .args(args)
        .env_remove("METAPAC_SEED")
        .env_remove("METAPAC_OUT")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn data_rows(csv: &str) -> Vec<&str> {
    csv.lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .collect()
}

const BASE: [&str; 9] = [
    "bounds",
    "--n",
    "5",
    "--m",
    "100",
    "--train-loss",
    "0",
    "--kl-env",
    "0",
];

fn bounds(extra: &[&str]) -> Output {
    let mut args = BASE.to_vec();
    args.extend_from_slice(extra);
    metapac(&args)
}

#[test]
fn single_bound_value() {
    let o = bounds(&["--kl-task", "0", "--bound", "new-classic"]);
    assert_eq!(o.status.code(), Some(0));
    let rows = data_rows(&stdout(&o))
        .iter()
        .map(|r| r.to_string())
        .collect::<Vec<_>>();
    assert_eq!(rows.len(), 1);
    let value: f64 = rows[0].split(',').nth(2).unwrap().parse().unwrap();
    assert!((value - 1.402_522_887_113_276_4).abs() < 1e-9);
}

#[test]
fn all_bounds_sorted_by_name() {
    let o = bounds(&["--kl-task", "0.5"]);
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    let names: Vec<&str> = data_rows(&out)
        .iter()
        .map(|r| r.split(',').next().unwrap())
        .collect();
    assert!(names.len() >= 9);
    let mut sorted = names.clone();
    sorted.sort();
    assert_eq!(names, sorted);
    for want in [
        "mlap",
        "pacoh",
        "lambda-liu",
        "mys-classic",
        "mys-quadratic",
        "mys-lambda",
        "fast-rate",
        "new-classic",
        "sqrt-k",
        "st-markov",
    ] {
        assert!(names.contains(&want), "{want}");
    }
    assert!(out.starts_with("# tool=metapac "));
    assert!(out.contains("# seed=0\n"));
}

#[test]
fn invalid_rows_do_not_stop_the_run() {
    let o = metapac(&[
        "bounds",
        "--n",
        "5",
        "--m",
        "1",
        "--train-loss",
        "0",
        "--kl-env",
        "0",
        "--kl-task",
        "0",
    ]);
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    let nc = data_rows(&out)
        .into_iter()
        .find(|r| r.starts_with("new-classic,"))
        .unwrap()
        .to_string();
    assert!(nc.starts_with("new-classic,invalid,"), "{nc}");
    let only = metapac(&[
        "bounds",
        "--n",
        "5",
        "--m",
        "1",
        "--train-loss",
        "0",
        "--kl-env",
        "0",
        "--kl-task",
        "0",
        "--bound",
        "new-classic",
    ]);
    assert_eq!(only.status.code(), Some(2));
}

#[test]
fn usage_errors_name_the_flag() {
    let o = bounds(&["--kl-task", "0", "--bound", "nonsense"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--bound"));
    let o = bounds(&["--kl-task", "x"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--kl-task"));
    let o = bounds(&["--kl-task", "0", "--frobnicate"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--frobnicate"));
    assert_eq!(metapac(&["--help"]).status.code(), Some(0));
}

#[test]
fn grid_override_is_honoured() {
    let o = bounds(&[
        "--kl-task",
        "0",
        "--bound",
        "lambda-liu",
        "--grid",
        "lambda=0.5",
    ]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("lambda=0.5"));
}

#[test]
fn json_mirrors_csv_fields() {
    let o = bounds(&["--kl-task", "0", "--bound", "mlap", "--format", "json"]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["command"], "bounds");
    assert_eq!(v["columns"][0], "bound");
    assert_eq!(v["rows"][0]["status"], "ok");
    assert_eq!(v["config"]["m"], 100);
}

#[test]
fn lemma_exit_codes() {
    let o = metapac(&["lemmas", "--lemma", "maurer", "--n", "6"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("n > 8"));
    let o = metapac(&["lemmas", "--trials", "20000", "--seed", "4"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(data_rows(&stdout(&o)).iter().all(|r| r.ends_with(",true")));
    let again = metapac(&["lemmas", "--trials", "20000", "--seed", "4"]);
    assert_eq!(o.stdout, again.stdout);
}

fn write_config(dir: &Path, body: &str) -> String {
    let p = dir.join("run.json");
    std::fs::write(&p, body).unwrap();
    p.to_str().unwrap().to_string()
}

const SYNTH: &str = r#"{"trainer": {"bound": "new-classic", "epochs": 20, "seed": 5},
  "data": {"source": "synthetic", "dim": 4, "env_mean": [1.5, -1.0, 0.5, 2.0], "task_spread": 0.25,
           "obs_noise": 0.1, "m": 10, "n": 5, "n_test_tasks": 20, "m_test": 100, "seed": 1}}"#;

#[test]
fn train_then_eval_on_twenty_tasks() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SYNTH);
    let out = dir.path().join("out");
    let out_s = out.to_str().unwrap();
    let t = metapac(&["train", "--config", &cfg, "--out", out_s]);
    assert_eq!(t.status.code(), Some(0), "{}", stderr(&t));
    let hist = std::fs::read_to_string(out.join("history.csv")).unwrap();
    assert!(hist.contains("\nepoch,objective,train_loss,kl_env,mean_kl_task,terms\n"));
    assert_eq!(data_rows(&hist).len(), 20);

    let e = metapac(&["eval", "--config", &cfg, "--out", out_s]);
    assert_eq!(e.status.code(), Some(0), "{}", stderr(&e));
    let ev = std::fs::read_to_string(out.join("eval.csv")).unwrap();
    assert_eq!(data_rows(&ev).len(), 20);

    let b = metapac(&[
        "eval",
        "--config",
        &cfg,
        "--out",
        out_s,
        "--prior",
        "hyper-prior",
        "--name",
        "baseline",
    ]);
    assert_eq!(b.status.code(), Some(0));
    let eval_a = out.join("eval.csv");
    let eval_b = out.join("baseline.csv");
    let r = metapac(&["report", eval_a.to_str().unwrap(), eval_b.to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(0), "{}", stderr(&r));
    let rs = stdout(&r);
    let rows = data_rows(&rs);
    assert_eq!(rows.len(), 2);
    assert!(
        rows[0].starts_with("new-classic,hyper-posterior,20,")
            || rows[0].starts_with("new-classic,hyper-prior,20,")
    );
}

#[test]
fn seed_flag_overrides_and_reruns_match() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SYNTH);
    let run = |out: &str, seed: &str| {
        let o = metapac(&["train", "--config", &cfg, "--out", out, "--seed", seed]);
        assert_eq!(o.status.code(), Some(0));
        std::fs::read(Path::new(out).join("history.csv")).unwrap()
    };
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let ha = run(a.to_str().unwrap(), "8");
    let hb = run(b.to_str().unwrap(), "8");
    assert_eq!(ha, hb);
    let hc = run(a.to_str().unwrap(), "9");
    assert_ne!(ha, hc);
    assert!(String::from_utf8(hc).unwrap().contains("# seed=9\n"));
}

#[test]
fn missing_config_field_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &SYNTH.replace(r#""epochs": 20, "#, ""));
    let o = metapac(&[
        "train",
        "--config",
        &cfg,
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("epochs"), "{}", stderr(&o));
    let cfg = write_config(dir.path(), &SYNTH.replace(r#""obs_noise": 0.1, "#, ""));
    let o = metapac(&["train", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("obs_noise"), "{}", stderr(&o));
}

#[test]
fn eval_without_state_is_a_domain_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SYNTH);
    let o = metapac(&[
        "eval",
        "--config",
        &cfg,
        "--out",
        dir.path().join("none").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn coverage_reports_one_row() {
    let o = metapac(&[
        "coverage",
        "--trials",
        "8",
        "--risk-draws",
        "40",
        "--bound",
        "mlap",
        "--seed",
        "2",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.contains(
        "\nbound,trials,violations,violation_rate,delta,mc_slack,pass,mean_bound,mean_risk\n"
    ));
    assert!(data_rows(&out)[0].starts_with("mlap,8,0,0.0,0.1,"));
    let o = metapac(&["coverage", "--bound", "pacoh"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--params"));
}

#[test]
fn environment_sets_seed_and_out() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_metapac"))
        .args([
            "bounds",
            "--n",
            "3",
            "--m",
            "3",
            "--train-loss",
            "0",
            "--kl-env",
            "0",
            "--kl-task",
            "0",
            "--bound",
            "mlap",
        ])
        .env("METAPAC_SEED", "77")
        .env("METAPAC_OUT", dir.path())
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));
    let written = std::fs::read_to_string(dir.path().join("bounds.csv")).unwrap();
    assert!(written.contains("# seed=77\n"));
    assert_eq!(written.as_bytes(), &o.stdout[..]);
}
