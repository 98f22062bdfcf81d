use std::path::Path;
use std::process::{Command, Output};

fn uiground(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_uiground"))
        .args(args)
        .current_dir(dir)
        .env_remove("UIGROUND_CONFIG")
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path) -> std::path::PathBuf {
    let cfg = r#"{
        "corpus_dir": "corpus",
        "models_dir": "models",
        "reports_dir": "reports",
        "gen": { "screens": 40 },
        "train_text": { "epochs": 2, "learning_rate": 0.1 },
        "train_layout": { "epochs": 2, "learning_rate": 0.1 },
        "probe": { "probes": 3, "max_width": 8, "epochs": 1, "control_epochs": 1 },
        "probe_records": 200
    }"#;
    let p = dir.join("run.json");
    std::fs::write(&p, cfg).unwrap();
    p
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn missing_config_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = uiground(dir.path(), &["gen", "--config", "nope.json"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("nope.json"));
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(uiground(dir.path(), &["frobnicate"]).status.code(), Some(2));
    assert_eq!(uiground(dir.path(), &["train"]).status.code(), Some(2));
}

#[test]
fn gen_is_deterministic_and_prints_summary() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path());
    let o = uiground(dir.path(), &["gen", "--config", "run.json"]);
    assert!(o.status.success(), "{o:?}");
    assert!(stdout(&o).contains("extractive"));
    let read = |f: &str| std::fs::read(dir.path().join("corpus").join(f)).unwrap();
    let first: Vec<Vec<u8>> = ["screens.jsonl", "commands.jsonl", "pairs.csv"].iter().map(|f| read(f)).collect();
    assert!(uiground(dir.path(), &["gen", "--config", "run.json"]).status.success());
    let second: Vec<Vec<u8>> = ["screens.jsonl", "commands.jsonl", "pairs.csv"].iter().map(|f| read(f)).collect();
    assert_eq!(first, second);
}

#[test]
fn config_from_environment_and_flag_overrides() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path());
    let o = Command::new(env!("CARGO_BIN_EXE_uiground"))
        .args(["config", "--jobs", "3"])
        .current_dir(dir.path())
        .env("UIGROUND_CONFIG", "run.json")
        .output()
        .unwrap();
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["gen"]["screens"], 40);
    assert_eq!(v["jobs"], 3);
}

#[test]
fn full_stage_sequence() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path());
    let c = ["--config", "run.json"];
    let run = |args: &[&str]| {
        let all: Vec<&str> = args.iter().chain(c.iter()).copied().collect();
        let o = uiground(dir.path(), &all);
        assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
        stdout(&o)
    };
    // eval before training names the missing checkpoint
    run(&["gen"]);
    let o = uiground(dir.path(), &["eval", "--config", "run.json"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("text.json"));

    assert!(run(&["train", "--kind", "text"]).contains("text model"));
    assert!(run(&["train", "--kind", "layout", "--epochs", "1"]).contains("1 epochs"));
    let table = run(&["eval"]);
    assert!(table.contains("text") && table.contains("layout"));
    run(&["probe", "--task", "AT1"]);
    let reps = dir.path().join("reports/reps_layout.csv");
    assert!(reps.exists());
    run(&["probe", "--task", "AT2", "--import", reps.to_str().unwrap()]);
    assert!(dir.path().join("reports/sweep_reps_layout.csv").exists());
    assert!(run(&["report"]).contains("AT2"));
    assert!(dir.path().join("reports/curves.svg").exists());
    assert!(run(&["filter", "--tau", "0.99"]).contains("spatial share"));
    assert!(dir.path().join("reports/removal_log.csv").exists());
    assert!(dir.path().join("reports/filtered/commands.jsonl").exists());

    let o = uiground(dir.path(), &["filter", "--tau", "1.5", "--config", "run.json"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn corrupt_corpus_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path());
    assert!(uiground(dir.path(), &["gen", "--config", "run.json"]).status.success());
    std::fs::write(dir.path().join("corpus/pairs.csv"), "command_id,element_id,label,split\nx,y,7,train\n").unwrap();
    let o = uiground(dir.path(), &["train", "--kind", "text", "--config", "run.json"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("pairs.csv"));
}

#[test]
fn diverging_training_is_a_numeric_failure() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path());
    assert!(uiground(dir.path(), &["gen", "--config", "run.json"]).status.success());
    let o = uiground(dir.path(), &["train", "--kind", "layout", "--lr", "1e300", "--config", "run.json"]);
    assert_eq!(o.status.code(), Some(4), "{}", String::from_utf8_lossy(&o.stderr));
}
