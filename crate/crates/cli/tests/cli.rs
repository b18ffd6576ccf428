use std::path::Path;
use std::process::{Command, Output};

fn cgm(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cgm"))
        .args(args)
        .current_dir(dir)
        .env_remove("CGM_SEED")
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn trained() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let mut csv = String::from("colour,size,weight\n");
    for i in 0..120 {
        let c = ["red", "green", "blue"][i % 3];
        let s = if i % 7 == 0 { "" } else { ["s", "l"][i % 2] };
        csv.push_str(&format!("{c},{s},{}\n", (i % 11) as f64 * 0.5));
    }
    std::fs::write(dir.path().join("data.csv"), csv).unwrap();
    let o = cgm(
        dir.path(),
        &["train", "--data", "data.csv", "--out", "m.ckpt", "--epochs", "1", "--hidden", "8", "--heads", "2"],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    dir
}

#[test]
fn train_writes_checkpoint_and_history() {
    let dir = trained();
    assert!(dir.path().join("m.ckpt").exists());
    let h: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("m.ckpt.history.json")).unwrap()).unwrap();
    assert_eq!(h["loss"].as_array().unwrap().len(), 1);
    assert_eq!(h["config"]["hidden"], 8);
}

#[test]
fn generate_respects_fixed_values() {
    let dir = trained();
    let o = cgm(
        dir.path(),
        &["generate", "--ckpt", "m.ckpt", "--rows", "20", "--out", "g.csv", "--fixed", "colour=blue", "--fixed", "weight=2.5"],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = std::fs::read_to_string(dir.path().join("g.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("colour,size,weight"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 20);
    assert!(rows.iter().all(|r| r.starts_with("blue,") && r.ends_with(",2.5")));
}

#[test]
fn unknown_fixed_column_or_category_is_a_usage_error() {
    let dir = trained();
    let o = cgm(dir.path(), &["generate", "--ckpt", "m.ckpt", "--rows", "2", "--out", "g.csv", "--fixed", "shape=round"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("shape"));
    let o = cgm(dir.path(), &["generate", "--ckpt", "m.ckpt", "--rows", "2", "--out", "g.csv", "--fixed", "colour=pink"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("pink"));
}

#[test]
fn evaluate_reports_schema_mismatch_as_data_error() {
    let dir = trained();
    std::fs::write(dir.path().join("other.csv"), "colour,shape\nred,round\n").unwrap();
    let o = cgm(dir.path(), &["evaluate", "--ckpt", "m.ckpt", "--data", "other.csv"]);
    assert_eq!(code(&o), 3);
    let e = stderr(&o);
    assert!(e.contains("shape") && e.contains("size"), "{e}");
}

#[test]
fn evaluate_skips_missing_cells() {
    let dir = trained();
    let o = cgm(
        dir.path(),
        &["evaluate", "--ckpt", "m.ckpt", "--data", "data.csv", "--order", "random", "--repeats", "2", "--out", "e.json"],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let r: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("e.json")).unwrap()).unwrap();
    assert_eq!(r["missing_cells"], 18);
    assert_eq!(r["results"].as_array().unwrap().len(), 2);
    assert!(r["mean"].as_f64().unwrap() < 0.0);
}

#[test]
fn seed_falls_back_to_environment() {
    let dir = trained();
    let run = |seed: Option<&str>, out: &str| {
        let mut c = Command::new(env!("CARGO_BIN_EXE_cgm"));
        c.args(["generate", "--ckpt", "m.ckpt", "--rows", "30", "--out", out]).current_dir(dir.path());
        match seed {
            Some(s) => c.env("CGM_SEED", s),
            None => c.env_remove("CGM_SEED"),
        };
        assert!(c.status().unwrap().success());
        std::fs::read(dir.path().join(out)).unwrap()
    };
    let env_seeded = run(Some("5"), "a.csv");
    let o = cgm(dir.path(), &["generate", "--ckpt", "m.ckpt", "--rows", "30", "--out", "b.csv", "--seed", "5"]);
    assert_eq!(code(&o), 0);
    assert_eq!(env_seeded, std::fs::read(dir.path().join("b.csv")).unwrap());
    assert_ne!(env_seeded, run(None, "c.csv"));
}

#[test]
fn diverging_training_exits_with_numeric_code() {
    let dir = trained();
    let o = cgm(dir.path(), &["train", "--data", "data.csv", "--out", "x.ckpt", "--epochs", "2", "--lr", "1e300"]);
    assert_eq!(code(&o), 4, "{}", stderr(&o));
    assert!(stderr(&o).contains("lr"));
    assert!(!dir.path().join("x.ckpt").exists());
}

#[test]
fn bad_arguments_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&cgm(dir.path(), &["train", "--data", "x.csv"])), 2);
    assert_eq!(code(&cgm(dir.path(), &["frobnicate"])), 2);
    let o = cgm(dir.path(), &["train", "--data", "missing.csv", "--out", "m.ckpt"]);
    assert_eq!(code(&o), 3);
}

#[test]
fn benchmark_config_errors_name_the_field() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.json"), r#"{"datasets": ["grid"], "synthesizers": ["identity", "gan"]}"#).unwrap();
    let o = cgm(dir.path(), &["benchmark", "--config", "c.json", "--out", "r.json"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("/synthesizers/1"), "{}", stderr(&o));
    std::fs::write(dir.path().join("c.json"), r#"{"n_train": "many"}"#).unwrap();
    let o = cgm(dir.path(), &["benchmark", "--config", "c.json", "--out", "r.json"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("/n_train"), "{}", stderr(&o));
}

#[test]
fn benchmark_runs_filtered_cells_and_flags_total_failure() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("c.json"),
        r#"{"datasets": ["grid", "ring"], "synthesizers": ["identity", "uniform"], "seeds": [0, 1], "n_train": 300, "n_test": 300}"#,
    )
    .unwrap();
    let o = cgm(
        dir.path(),
        &["benchmark", "--config", "c.json", "--out", "r.json", "--filter", "dataset=ring", "--filter", "seed=1", "--workers", "1"],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let r: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("r.json")).unwrap()).unwrap();
    assert_eq!(r["cells"].as_array().unwrap().len(), 2);
    assert!(String::from_utf8_lossy(&o.stdout).contains("ring (simulated)"));

    std::fs::write(
        dir.path().join("bad.json"),
        r#"{"datasets": [{"name": "net", "bayesnet": "absent.json"}], "synthesizers": ["identity"], "seeds": [0]}"#,
    )
    .unwrap();
    let o = cgm(dir.path(), &["benchmark", "--config", "bad.json", "--out", "r2.json"]);
    assert_eq!(code(&o), 1);
    assert!(dir.path().join("r2.json").exists());
}
