use critic_cli::commands::{self, Common, TaskOverrides};
use critic_cli::config::ExperimentConfig;
use critic_cli::experiment::{first_below, median, median_curve, Method};
use critic_cli::report::label;
use proptest::prelude::*;
use std::path::{Path, PathBuf};
use std::process::Command;

fn small_config() -> serde_json::Value {
    serde_json::json!({
        "environment": { "kind": "point-mass", "dt": 0.1 },
        "horizon": 5,
        "goals": [[0.5, 0.5], [-0.5, 0.3]],
        "seeds": [0, 1],
        "policy": { "kind": "constant" },
        "critic": { "kind": "mlp", "hidden": [8], "activation": "tanh" },
        "inner": { "lr": 0.1 },
        "outer": {
            "lr": 0.001, "iterations": 20, "optimizer": { "kind": "adam" },
            "theta_init": { "uniform": { "lo": -1.0, "hi": 1.0 } }
        },
        "meta_test": { "iterations": 5, "inits": 2 },
        "baseline": {
            "critic": { "kind": "mlp", "hidden": [8], "activation": "tanh", "goal": "shift" },
            "ddpg": {
                "q": { "gamma": 1.0, "q_lr": 0.01, "policy_lr": 0.01, "epochs": 5, "optimizer": { "kind": "adam" } },
                "iterations": 2,
                "theta_init": { "uniform": { "lo": -1.0, "hi": 1.0 } }
            }
        },
        "sweep": { "kinds": ["goals"], "stds": [0.1, 0.2, 0.3], "goals_per_cell": 2 }
    })
}

fn write_config(dir: &Path, v: &serde_json::Value) -> PathBuf {
    let p = dir.join("config.json");
    std::fs::write(&p, serde_json::to_string_pretty(v).unwrap()).unwrap();
    p
}

fn common(config: PathBuf, out: &Path) -> Common {
    Common {
        config,
        seed: None,
        out: Some(out.to_path_buf()),
    }
}

#[test]
fn toy_verify_passes_and_mutation_fails() {
    let bin = env!("CARGO_BIN_EXE_critic");
    let ok = Command::new(bin).arg("toy-verify").output().unwrap();
    let text = String::from_utf8_lossy(&ok.stdout);
    assert!(ok.status.success(), "{text}");
    assert!(text.contains("θ_meta = 3.000000"));
    assert!(!text.contains("FAIL"));

    let bad = Command::new(bin)
        .args(["toy-verify", "--mutate"])
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad.stdout).contains("FAIL"));
}

#[test]
fn bundled_configs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs");
    for name in ["toy.json", "point_mass_landscape.json", "reacher.json"] {
        ExperimentConfig::load(&dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e:#}"));
    }
}

#[test]
fn unknown_keys_and_empty_lists_are_rejected() {
    let mut v = small_config();
    v["outer"]["learning_rate"] = 0.1.into();
    assert!(ExperimentConfig::from_json(&v.to_string()).is_err());

    let mut v = small_config();
    v["sweep"]["stds"] = serde_json::json!([]);
    let err = ExperimentConfig::from_json(&v.to_string()).unwrap_err();
    assert!(format!("{err:#}").contains("no values"));

    let mut v = small_config();
    v["seeds"] = serde_json::json!([]);
    assert!(ExperimentConfig::from_json(&v.to_string()).is_err());

    let mut v = small_config();
    v["sweep"]["kinds"] = serde_json::json!(["mass"]);
    assert!(ExperimentConfig::from_json(&v.to_string()).is_err());
}

#[test]
fn missing_output_directory_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &small_config());
    let c = Common {
        config: cfg,
        seed: None,
        out: None,
    };
    assert!(commands::meta_train(&c).is_err());
}

#[test]
fn zero_outer_iterations_checkpoint_equals_initialization() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = small_config();
    v["outer"]["iterations"] = 0.into();
    let cfg_path = write_config(dir.path(), &v);
    let out = dir.path().join("out");
    commands::meta_train(&common(cfg_path.clone(), &out)).unwrap();
    let cfg = ExperimentConfig::load(&cfg_path).unwrap().0;
    for seed in [0, 1] {
        let ck =
            commands::read_checkpoint(&out.join(format!("meta/seed{seed}/critic.ckpt"))).unwrap();
        assert_eq!(ck.header.kind, Method::Meta.kind());
        assert_eq!(ck.params, cfg.critic_model().init_params(seed));
    }
}

#[test]
fn meta_train_writes_one_checkpoint_and_curve_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let res =
        commands::meta_train(&common(write_config(dir.path(), &small_config()), &out)).unwrap();
    assert_eq!(res.runs.len(), 2);
    for seed in [0, 1] {
        for f in [
            "meta/seed{}/critic.ckpt",
            "meta/seed{}/losses.csv",
            "baseline/seed{}/q.ckpt",
        ] {
            assert!(out.join(f.replace("{}", &seed.to_string())).exists(), "{f}");
        }
    }
    let losses = std::fs::read_to_string(out.join("meta/seed0/losses.csv")).unwrap();
    assert_eq!(losses.lines().count(), 1 + 20 * 2);
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("run_manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["command"], "meta-train");
    assert_eq!(manifest["config_sha256"].as_str().unwrap().len(), 64);
    assert!(manifest["outputs"].as_array().unwrap().len() >= 7);
}

#[test]
fn seed_override_runs_one_seed_and_changes_the_hash() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &small_config());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    commands::meta_train(&common(cfg.clone(), &a)).unwrap();
    let mut c = common(cfg, &b);
    c.seed = Some(7);
    let res = commands::meta_train(&c).unwrap();
    assert_eq!(res.runs.len(), 1);
    assert_eq!(res.runs[0].seed, 7);
    assert!(b.join("meta/seed7/critic.ckpt").exists());
    let hash = |d: &Path| -> String {
        let m: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(d.join("run_manifest.json")).unwrap())
                .unwrap();
        m["config_sha256"].as_str().unwrap().to_string()
    };
    assert_ne!(hash(&a), hash(&b));
}

#[test]
fn meta_test_accepts_both_checkpoint_kinds() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &small_config());
    let train = dir.path().join("train");
    commands::meta_train(&common(cfg.clone(), &train)).unwrap();
    let cks = vec![
        train.join("meta/seed0/critic.ckpt"),
        train.join("baseline/seed0/q.ckpt"),
    ];
    let o = TaskOverrides {
        goals: vec![vec![0.2, -0.4]],
        ..Default::default()
    };
    let runs =
        commands::meta_test(&common(cfg.clone(), &dir.path().join("test")), &cks, &o).unwrap();
    assert_eq!(runs.len(), 2 * 2);
    assert!(runs.iter().any(|r| r.method == Method::Meta));
    assert!(runs.iter().any(|r| r.method == Method::Supervised));
    assert!(runs
        .iter()
        .all(|r| r.goal == vec![0.2, -0.4] && r.final_mse.is_finite()));
    assert!(dir.path().join("test/meta_test.csv").exists());

    // Dynamics overrides only make sense on the arm.
    let o = TaskOverrides {
        mass_scale: Some(2.0),
        ..Default::default()
    };
    assert!(commands::meta_test(&common(cfg, &dir.path().join("t2")), &cks, &o).is_err());
}

#[test]
fn goal_at_the_start_is_solved_by_a_zero_policy() {
    // A critic whose gradient vanishes everywhere leaves θ = 0, so the
    // arm never moves and a goal at the start costs nothing.
    let dir = tempfile::tempdir().unwrap();
    let mut v = small_config();
    v["environment"] = serde_json::json!({ "kind": "reacher2", "dt": 0.05 });
    v["policy"] = serde_json::json!({ "kind": "mlp", "hidden": [] });
    v["critic"] = serde_json::json!({ "kind": "mlp", "hidden": [4], "goal": "shift" });
    v["outer"]["theta_init"] = serde_json::json!({ "fixed": vec![0.0; 10] });
    v["outer"]["iterations"] = 0.into();
    v.as_object_mut().unwrap().remove("baseline");
    v.as_object_mut().unwrap().remove("sweep");
    let cfg_path = write_config(dir.path(), &v);
    let cfg = ExperimentConfig::load(&cfg_path).unwrap().0;
    let ck = critic_core::nets::Checkpoint {
        header: critic_core::nets::CheckpointHeader {
            kind: Method::Meta.kind().into(),
            model: cfg.critic_model(),
            seed: 0,
            iteration: 0,
        },
        params: vec![0.0; cfg.critic_model().param_count()],
    };
    let ck_path = dir.path().join("zero.ckpt");
    ck.write_to(std::fs::File::create(&ck_path).unwrap())
        .unwrap();
    let o = TaskOverrides {
        goals: vec![vec![0.0, 0.0]],
        ..Default::default()
    };
    let runs =
        commands::meta_test(&common(cfg_path, &dir.path().join("t")), &[ck_path], &o).unwrap();
    assert!(runs.iter().all(|r| r.final_mse == 0.0));
}

#[test]
fn sweep_tables_have_method_rows_and_value_columns() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let res = commands::sweep(&common(write_config(dir.path(), &small_config()), &out)).unwrap();
    assert_eq!(res.sweeps.len(), 1);
    // 2 critics per seed × 2 seeds × 3 columns × 2 goals × 2 inits.
    assert_eq!(res.sweeps[0].runs.len(), 2 * 2 * 3 * 2 * 2);
    for f in ["table.csv", "median.csv", "table_solved.csv"] {
        let text = std::fs::read_to_string(out.join("sweep_goals").join(f)).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "method,std=0.1,std=0.2,std=0.3", "{f}");
        assert_eq!(lines.len(), 3, "{f}");
        assert!(lines[1].starts_with("meta-critic(ours),"));
        assert!(lines[2].starts_with("supervised-q,"));
    }
    let table = std::fs::read_to_string(out.join("sweep_goals/table.csv")).unwrap();
    let cell = table.lines().nth(1).unwrap().split(',').nth(1).unwrap();
    assert!(cell.contains('(') && cell.ends_with(')'), "{cell}");
    assert!(out.join("meta_test_train.csv").exists());
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &small_config());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    commands::sweep(&common(cfg.clone(), &a)).unwrap();
    commands::sweep(&common(cfg, &b)).unwrap();
    for f in [
        "sweep_goals/runs.csv",
        "train_curves.csv",
        "meta/seed1/losses.csv",
        "run_manifest.json",
    ] {
        assert_eq!(
            std::fs::read(a.join(f)).unwrap(),
            std::fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn labels_drop_trailing_zeros() {
    assert_eq!(label(0.1), "0.1");
    assert_eq!(label(1.0), "1");
    assert_eq!(label(2.0 / 3.0), "0.6667");
    assert_eq!(label(0.25), "0.25");
}

#[test]
fn median_curve_handles_short_and_diverged_runs() {
    let curves = vec![
        (vec![3.0, 2.0, 1.0], false),
        (vec![4.0], false),
        (vec![5.0, 0.5], true),
    ];
    let m = median_curve(&curves, 3);
    assert_eq!(m, vec![4.0, 2.0, 4.0]);
    assert_eq!(first_below(&m, 2.5), Some(1));
    assert_eq!(first_below(&m, 0.1), None);
}

proptest! {
    #[test]
    fn median_is_order_free_and_bounded(mut xs in prop::collection::vec(-1e3f64..1e3, 1..30), k in 0usize..30) {
        let m = median(&xs);
        let lo = xs.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(lo <= m && m <= hi);
        let r = k % xs.len();
        xs.rotate_left(r);
        prop_assert_eq!(median(&xs), m);
    }

    #[test]
    fn nan_counts_as_worst(xs in prop::collection::vec(0.0f64..1.0, 1..10)) {
        let mut with_nan = xs.clone();
        with_nan.push(f64::NAN);
        let mut with_inf = xs.clone();
        with_inf.push(f64::INFINITY);
        prop_assert_eq!(median(&with_nan), median(&with_inf));
    }
}
