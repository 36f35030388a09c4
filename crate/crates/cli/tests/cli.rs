//! End-to-end checks of the `ope` binary against library-computed truths.

use std::path::{Path, PathBuf};
use std::process::Command;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ope_core::io;
use ope_core::mdp::{gen, DataDistribution, ExactSolution, Policy, TabularMdp};

struct Fixture {
    dir: PathBuf,
    mdp: TabularMdp,
    pi_e: Policy,
    dist: DataDistribution,
}

impl Fixture {
    fn create(tag: &str) -> Fixture {
        let dir = std::env::temp_dir().join(format!("ope_cli_{tag}"));
        let _ = std::fs::remove_dir_all(&dir);
        std::fs::create_dir_all(&dir).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mdp = gen::random_mdp(&mut rng, 3, 2, 0.8, 2);
        let pi_e = gen::random_policy(&mut rng, 3, 2);
        let dist = gen::random_data_distribution(&mut rng, &mdp, 0.4);
        io::save_mdp(&dir.join("mdp.json"), &mdp).unwrap();
        io::save_policy(&dir.join("pi_e.json"), &pi_e).unwrap();
        io::save_policy(&dir.join("pi_b.json"), &dist.behavior).unwrap();
        io::save_state_weights(&dir.join("ps.json"), &dist.state_weights).unwrap();
        Fixture {
            dir,
            mdp,
            pi_e,
            dist,
        }
    }

    fn path(&self, name: &str) -> String {
        self.dir.join(name).display().to_string()
    }

    fn problem_args(&self) -> Vec<String> {
        vec![
            "--mdp".into(),
            self.path("mdp.json"),
            "--pi-e".into(),
            self.path("pi_e.json"),
            "--pi-b".into(),
            self.path("pi_b.json"),
            "--ps".into(),
            self.path("ps.json"),
        ]
    }
}

fn run_ope(args: &[String]) -> serde_json::Value {
    let output = Command::new(env!("CARGO_BIN_EXE_ope"))
        .args(args)
        .output()
        .expect("binary runs");
    assert!(
        output.status.success(),
        "ope {:?} failed:\n{}",
        args,
        String::from_utf8_lossy(&output.stderr)
    );
    serde_json::from_slice(&output.stdout).expect("stdout is JSON")
}

fn run_ope_raw(args: &[String]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_ope"))
        .args(args)
        .output()
        .expect("binary runs")
}

#[test]
fn exact_matches_library() {
    let fx = Fixture::create("exact");
    let mut args = vec!["exact".to_string()];
    args.extend(fx.problem_args());
    let out = run_ope(&args);
    let exact = ExactSolution::solve(&fx.mdp, &fx.pi_e, &fx.dist).unwrap();
    assert!((out["j"].as_f64().unwrap() - exact.j).abs() < 1e-12);
    assert_eq!(out["q"].as_array().unwrap().len(), fx.mdp.n_pairs());
    assert_eq!(out["w"].as_array().unwrap().len(), fx.mdp.n_pairs());
}

#[test]
fn sample_is_reproducible() {
    let fx = Fixture::create("sample");
    let out1 = fx.path("d1.csv");
    let out2 = fx.path("d2.csv");
    for out in [&out1, &out2] {
        let args = vec![
            "sample".to_string(),
            "--mdp".into(),
            fx.path("mdp.json"),
            "--pi-b".into(),
            fx.path("pi_b.json"),
            "--ps".into(),
            fx.path("ps.json"),
            "--n".into(),
            "200".into(),
            "--seed".into(),
            "7".into(),
            "--out".into(),
            out.clone(),
        ];
        run_ope(&args);
    }
    let a = std::fs::read(&out1).unwrap();
    let b = std::fs::read(&out2).unwrap();
    assert_eq!(a, b);
    let text = String::from_utf8(a).unwrap();
    assert_eq!(text.lines().next().unwrap(), "s,a,r,s_prime");
    assert_eq!(text.lines().count(), 201);
}

#[test]
fn estimators_recover_j_at_moderate_n() {
    let fx = Fixture::create("estimate");
    let exact = ExactSolution::solve(&fx.mdp, &fx.pi_e, &fx.dist).unwrap();
    let data_path = fx.path("data.csv");
    let args = vec![
        "sample".to_string(),
        "--mdp".into(),
        fx.path("mdp.json"),
        "--pi-b".into(),
        fx.path("pi_b.json"),
        "--ps".into(),
        fx.path("ps.json"),
        "--n".into(),
        "20000".into(),
        "--seed".into(),
        "3".into(),
        "--out".into(),
        data_path.clone(),
    ];
    run_ope(&args);
    for variant in ["mql", "mwl", "dm", "is", "dr", "drcf", "fqi"] {
        let mut args = vec![
            "estimate".to_string(),
            "--variant".into(),
            variant.into(),
            "--data".into(),
            data_path.clone(),
        ];
        if variant == "fqi" {
            // Deep enough that the gamma^T initialization tail is gone.
            args.extend(["--fqi-iters".to_string(), "25".into()]);
        }
        args.extend(fx.problem_args());
        let out = run_ope(&args);
        let j_hat = out["j_hat"].as_f64().unwrap();
        assert!(
            (j_hat - exact.j).abs() < 0.05,
            "{variant}: j_hat {j_hat} far from {}",
            exact.j
        );
    }
}

#[test]
fn mdl_estimate_needs_and_uses_dictionaries() {
    let fx = Fixture::create("mdl");
    let exact = ExactSolution::solve(&fx.mdp, &fx.pi_e, &fx.dist).unwrap();
    let data_path = fx.path("data.csv");
    let args = vec![
        "sample".to_string(),
        "--mdp".into(),
        fx.path("mdp.json"),
        "--pi-b".into(),
        fx.path("pi_b.json"),
        "--ps".into(),
        fx.path("ps.json"),
        "--n".into(),
        "5000".into(),
        "--seed".into(),
        "5".into(),
        "--out".into(),
        data_path.clone(),
    ];
    run_ope(&args);
    // Dictionary columns: the truth and a junk vector.
    let n = fx.mdp.n_pairs();
    let mut dict_w = nalgebra::DMatrix::zeros(n, 2);
    let mut dict_q = nalgebra::DMatrix::zeros(n, 2);
    for i in 0..n {
        dict_w[(i, 0)] = exact.w[i];
        dict_w[(i, 1)] = 1.0;
        dict_q[(i, 0)] = exact.q[i];
        dict_q[(i, 1)] = 0.25;
    }
    io::save_features_csv(Path::new(&fx.path("dict_w.csv")), &dict_w).unwrap();
    io::save_features_csv(Path::new(&fx.path("dict_q.csv")), &dict_q).unwrap();
    let mut args = vec![
        "estimate".to_string(),
        "--variant".into(),
        "mdl".into(),
        "--data".into(),
        data_path,
        "--dict-w".into(),
        fx.path("dict_w.csv"),
        "--dict-q".into(),
        fx.path("dict_q.csv"),
    ];
    args.extend(fx.problem_args());
    let out = run_ope(&args);
    let j_hat = out["j_hat"].as_f64().unwrap();
    assert!((j_hat - exact.j).abs() < 0.05);
    // Missing dictionaries is an error.
    let mut bad = vec![
        "estimate".to_string(),
        "--variant".into(),
        "mdl".into(),
        "--data".into(),
        fx.path("data.csv"),
    ];
    bad.extend(fx.problem_args());
    let out = run_ope_raw(&bad);
    assert!(!out.status.success());
}

#[test]
fn diagnose_checks_pass() {
    let fx = Fixture::create("diagnose");
    for check in ["adjoint", "fixedpoint", "norm"] {
        let mut args = vec!["diagnose".to_string(), "operators".into()];
        args.extend(fx.problem_args());
        args.extend(["--check".to_string(), check.into()]);
        let out = run_ope(&args);
        assert_eq!(out["pass"], true, "check {check}: {out}");
    }
    let mut args = vec!["diagnose".to_string(), "completeness".into()];
    args.extend(fx.problem_args());
    let out = run_ope(&args);
    assert_eq!(out["q_completeness"]["pass"], true);
    assert_eq!(out["w_completeness"]["pass"], true);
    let mut args = vec!["diagnose".to_string(), "all".into()];
    args.extend(fx.problem_args());
    let out = run_ope(&args);
    assert!(out["eb"].as_f64().unwrap() >= 0.0);
    assert!(out["c_iota_q"].as_f64().unwrap() >= 1.0 - 1e-9);
    assert!(out["c_iota_w"].as_f64().unwrap() >= 1.0 - 1e-9);
    assert_eq!(out["norm_equiv"]["pass"], true);
}

#[test]
fn rate_study_writes_reproducible_outputs() {
    let fx = Fixture::create("rates");
    let out_dir = fx.path("out");
    let config = serde_json::json!({
        "mdp": fx.path("mdp.json"),
        "pi_e": fx.path("pi_e.json"),
        "pi_b": fx.path("pi_b.json"),
        "ps": fx.path("ps.json"),
        "variant": "mql_dm",
        "n_grid": [100, 200],
        "replications": 4,
        "base_seed": 17,
        "output_dir": out_dir,
    });
    let config_path = fx.path("study.json");
    std::fs::write(&config_path, serde_json::to_string_pretty(&config).unwrap()).unwrap();
    let args = vec![
        "rates".to_string(),
        "--config".into(),
        config_path.clone(),
        "--plot".into(),
    ];
    run_ope(&args);
    let rows_path = fx.dir.join("out/rows.csv");
    let first = std::fs::read(&rows_path).unwrap();
    assert!(fx.dir.join("out/summary.json").exists());
    assert!(fx.dir.join("out/rmse.svg").exists());
    run_ope(&args);
    let second = std::fs::read(&rows_path).unwrap();
    assert_eq!(first, second, "rerun must be byte-identical");
}

#[test]
fn clt_and_robustness_studies_run() {
    let fx = Fixture::create("clt_rob");
    let config = serde_json::json!({
        "mdp": fx.path("mdp.json"),
        "pi_e": fx.path("pi_e.json"),
        "pi_b": fx.path("pi_b.json"),
        "ps": fx.path("ps.json"),
        "variant": "dr_crossfit",
        "n_grid": [150],
        "replications": 6,
        "base_seed": 23,
        "output_dir": fx.path("out_clt"),
    });
    let config_path = fx.path("clt.json");
    std::fs::write(&config_path, serde_json::to_string_pretty(&config).unwrap()).unwrap();
    let out = run_ope(&["clt".to_string(), "--config".into(), config_path]);
    assert!(out["eb"].as_f64().unwrap() > 0.0);
    assert!(out["var_ratio"].as_f64().is_some());
    assert!(fx.dir.join("out_clt/summary.json").exists());

    let config = serde_json::json!({
        "mdp": fx.path("mdp.json"),
        "pi_e": fx.path("pi_e.json"),
        "pi_b": fx.path("pi_b.json"),
        "ps": fx.path("ps.json"),
        "n_grid": [100, 200],
        "replications": 3,
        "base_seed": 29,
        "output_dir": fx.path("out_rob"),
    });
    let config_path = fx.path("rob.json");
    std::fs::write(&config_path, serde_json::to_string_pretty(&config).unwrap()).unwrap();
    let out = run_ope(&["robustness".to_string(), "--config".into(), config_path]);
    let arms = out["arms"].as_array().unwrap();
    assert_eq!(arms.len(), 4);
    for arm in arms {
        let name = arm["arm"].as_str().unwrap();
        let exists = fx.dir.join(format!("out_rob/rows_{name}.csv")).exists();
        assert!(exists, "missing rows for arm {name}");
    }
    assert!(fx.dir.join("out_rob/robustness.json").exists());
}

#[test]
fn fqi_study_writes_table() {
    let fx = Fixture::create("fqi_study");
    let config = serde_json::json!({
        "mdp": fx.path("mdp.json"),
        "pi_e": fx.path("pi_e.json"),
        "pi_b": fx.path("pi_b.json"),
        "ps": fx.path("ps.json"),
        "n_grid": [100],
        "replications": 2,
        "base_seed": 9,
        "output_dir": fx.path("out"),
        "t_grid": [1, 2, 4],
    });
    let config_path = fx.path("study.json");
    std::fs::write(&config_path, serde_json::to_string_pretty(&config).unwrap()).unwrap();
    let out = run_ope(&["fqi".to_string(), "--config".into(), config_path]);
    let rows = out["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 3);
    for row in rows {
        assert!(row["dm_error"].as_f64().unwrap() <= row["bound"].as_f64().unwrap() + 1e-12);
    }
    assert!(fx.dir.join("out/fqi.csv").exists());
}
