use std::path::Path;
use std::process::{Command, Output};

fn ccpa(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ccpa"))
        .args(args)
        .current_dir(cwd)
        .env_remove("CCPA_CONFIG")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn parse_case_prints_dimensions() {
    let dir = tempfile::tempdir().unwrap();
    let out = ccpa(&["parse-case", "ieee14"], dir.path());
    assert!(out.status.success());
    assert!(stdout(&out).contains("N=14 L=20 m=54"));

    let out = ccpa(&["parse-case", "ieee14", "--json", "--export", "case.json"], dir.path());
    let v: serde_json::Value = serde_json::from_str(stdout(&out).trim()).unwrap();
    assert_eq!(v["measurements"], 54);
    assert_eq!(v["cnn_input_width"], 54);
    // the exported native case parses back to the same grid
    let again = ccpa(&["parse-case", "case.json", "--json"], dir.path());
    let w: serde_json::Value = serde_json::from_str(stdout(&again).trim()).unwrap();
    assert_eq!(v["fingerprint"], w["fingerprint"]);
}

#[test]
fn gen_data_is_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["a", "b"] {
        let out = ccpa(
            &["gen-data", "--variant", "full", "--mtd", "--n", "100", "--seed", "7", "--out", name],
            dir.path(),
        );
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let a = std::fs::read(dir.path().join("a.csv")).unwrap();
    let b = std::fs::read(dir.path().join("b.csv")).unwrap();
    assert_eq!(a, b);
    assert_eq!(String::from_utf8_lossy(&a).lines().count(), 101);
    let prov: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("a.provenance.json")).unwrap()).unwrap();
    assert_eq!(prov["seeds"][0], 7);
    assert_eq!(prov["outputs"].as_array().unwrap().len(), 2);
}

#[test]
fn mtd_datasets_share_the_perturbed_grid_across_sample_seeds() {
    let dir = tempfile::tempdir().unwrap();
    let fingerprint = |name: &str, args: &[&str]| {
        let mut all = vec!["gen-data", "--variant", "full", "--mtd", "--n", "20", "--out", name];
        all.extend_from_slice(args);
        let out = ccpa(&all, dir.path());
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        let m: serde_json::Value =
            serde_json::from_slice(&std::fs::read(dir.path().join(format!("{name}.json"))).unwrap()).unwrap();
        m["grid_fingerprint"].as_str().unwrap().to_string()
    };
    let train = fingerprint("train", &["--seed", "1"]);
    let test = fingerprint("test", &["--seed", "2"]);
    assert_eq!(train, test);
    let other = fingerprint("other", &["--seed", "2", "--mtd-seed", "5"]);
    assert_ne!(train, other);
}

#[test]
fn train_fine_tune_and_evaluate_chain() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let config = r#"{
        "experiment": {
            "train": { "epochs": 1, "batch_size": 32 },
            "fine_tune": { "epochs": 1, "batch_size": 32 },
            "meta": { "support_size": 8, "query_size": 8, "inner_steps": 1,
                      "meta_batch_size": 2, "outer_iterations": 1 },
            "n_topologies": 2,
            "n_per_topology": 16
        }
    }"#;
    std::fs::write(p.join("run.json"), config).unwrap();
    let steps: [&[&str]; 5] = [
        &["--config", "run.json", "gen-data", "--variant", "partial", "--n", "64", "--seed", "1", "--out", "train"],
        &["--config", "run.json", "train", "--data", "train", "--out", "model.json"],
        &["--config", "run.json", "meta-train", "--out", "meta.json"],
        &["--config", "run.json", "fine-tune", "--init", "meta.json", "--data", "train", "--out", "tuned.json"],
        &["evaluate", "--model", "tuned.json", "--data", "train", "--out", "metrics.json"],
    ];
    for args in steps {
        let out = ccpa(args, p);
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let m: serde_json::Value = serde_json::from_slice(&std::fs::read(p.join("metrics.json")).unwrap()).unwrap();
    let recall = m["recall"].as_f64().unwrap();
    assert!((0.0..=100.0).contains(&recall));
    assert!(p.join("model.json.provenance.json").exists());
    assert!(p.join("tuned.json.provenance.json").exists());
}

#[test]
fn mtd_plan_reports_devices() {
    let dir = tempfile::tempdir().unwrap();
    let out = ccpa(&["mtd-plan", "--candidates", "5", "--out", "plan.json"], dir.path());
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("plan.json")).unwrap()).unwrap();
    assert_eq!(v["dfacts_lines"].as_array().unwrap().len(), 7);
    let out = ccpa(&["mtd-plan", "--candidates", "5", "--dfacts", "1,3,5,8,9,18,19"], dir.path());
    assert!(stdout(&out).contains("[1, 3, 5, 8, 9, 18, 19]"));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    assert_eq!(ccpa(&["no-such-command"], p).status.code(), Some(1));
    std::fs::write(p.join("bad.json"), r#"{"experiment": {"n_train": 5, "typo": 1}}"#).unwrap();
    let out = ccpa(&["--config", "bad.json", "parse-case", "ieee14"], p);
    assert_eq!(out.status.code(), Some(1));
    let diag: serde_json::Value =
        serde_json::from_str(String::from_utf8_lossy(&out.stderr).lines().last().unwrap()).unwrap();
    assert_eq!(diag["error"], "InvalidConfig");
    assert_eq!(ccpa(&["parse-case", "missing.m"], p).status.code(), Some(2));
    std::fs::write(p.join("broken.m"), "mpc.baseMVA = 100;").unwrap();
    assert_eq!(ccpa(&["parse-case", "broken.m"], p).status.code(), Some(2));
    // an invalid training config (negative learning rate) is a configuration error
    std::fs::write(p.join("neg.json"), r#"{"experiment": {"train": {"learning_rate": -1.0}}}"#).unwrap();
    assert_eq!(ccpa(&["--config", "neg.json", "parse-case", "ieee14"], p).status.code(), Some(1));
}

#[test]
fn config_path_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.json"), "{\"nope\": true}").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_ccpa"))
        .args(["parse-case", "ieee14"])
        .current_dir(dir.path())
        .env("CCPA_CONFIG", "bad.json")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn reproduce_table2_reduced_run_fills_all_cells() {
    let dir = tempfile::tempdir().unwrap();
    let config = r#"{
        "experiment": {
            "n_train": 60, "n_test": 30, "seeds": [0],
            "train": { "epochs": 1, "batch_size": 32 },
            "fine_tune": { "epochs": 1, "batch_size": 32 },
            "meta": { "support_size": 8, "query_size": 8, "inner_steps": 1,
                      "meta_batch_size": 2, "outer_iterations": 1 },
            "mtd": { "n_candidates": 3 },
            "n_topologies": 2, "n_per_topology": 16
        }
    }"#;
    std::fs::write(dir.path().join("tiny.json"), config).unwrap();
    let out = ccpa(&["--config", "tiny.json", "reproduce-table2", "--out", "report.json"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(v["cells"].as_array().unwrap().len(), 9);
    let table = stdout(&out);
    for row in ["cnn ", "cnn+mtd", "cnn+maml+mtd"] {
        assert!(table.contains(row), "{table}");
    }
}

#[test]
#[ignore = "several minutes; exercises the --fast profile end to end"]
fn reproduce_table2_fast_profile() {
    let dir = tempfile::tempdir().unwrap();
    let out = ccpa(&["reproduce-table2", "--fast", "--out", "report.json"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(v["cells"].as_array().unwrap().len(), 9);
}
