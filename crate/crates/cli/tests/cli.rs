use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn pathmp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pathmp")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

const BUTANE: &str =
    "{\"id\": \"butane\", \"elements\": [\"C\", \"C\", \"C\", \"C\"], \"bonds\": [[0, 1, \"single\"], [1, 2, \"single\"], [2, 3, \"single\"]]}\n";

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn paths_on_a_chain() {
    let dir = tempfile::tempdir().unwrap();
    let input = write(dir.path(), "p4.jsonl", BUTANE);
    let o = pathmp(&["paths", "--input", &input, "--node", "0", "--length", "3"]);
    assert!(o.status.success());
    assert_eq!(stdout(&o), "0 1\n0 1 2\n0 1 2 3\n");
    let o = pathmp(&["paths", "--input", &input, "--node", "1", "--length", "2", "--exact"]);
    assert_eq!(stdout(&o), "1 2 3\n");
    let o = pathmp(&["paths", "--input", &input, "--node", "1", "--length", "3", "--sample", "10", "--seed", "4"]);
    let text = stdout(&o);
    let mut lines: Vec<&str> = text.lines().collect();
    lines.sort_unstable();
    assert_eq!(lines, ["1 0", "1 2", "1 2 3"]);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let input = write(dir.path(), "p4.jsonl", BUTANE);
    let o = pathmp(&["paths", "--input", &input, "--node", "9", "--length", "2"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("out of range"));
    assert_eq!(pathmp(&["paths", "--node", "0"]).status.code(), Some(1));
    assert_eq!(pathmp(&["--help"]).status.code(), Some(0));
    let bad = write(dir.path(), "bad.jsonl", "{\"id\": \"x\", \"elements\": [\"C\"]}\n");
    let o = pathmp(&["paths", "--input", &bad, "--node", "0", "--length", "1"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 1"));
}

#[test]
fn train_with_missing_dataset_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let config = write(dir.path(), "run.toml", "task = \"regression\"\n[data]\npath = \"missing.jsonl\"\n");
    let report = dir.path().join("r.jsonl");
    let o = pathmp(&["train", "--config", &config, "--report", report.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(o.stdout.is_empty());
    assert!(!report.exists());
    let unknown = write(dir.path(), "u.toml", "task = \"regression\"\nlearning = 1\n[data]\npath = \"m.jsonl\"\n");
    assert_eq!(pathmp(&["train", "--config", &unknown, "--report", "x"]).status.code(), Some(1));
}

#[test]
fn gradcheck_passes() {
    let o = pathmp(&["gradcheck", "--full-model"]);
    assert!(o.status.success());
    assert_eq!(stdout(&o).matches("PASS").count(), 3);
    let o = pathmp(&["gradcheck", "--op", "lstm_cell"]);
    assert!(o.status.success());
    assert_eq!(pathmp(&["gradcheck", "--op", "conv"]).status.code(), Some(1));
}

#[test]
fn synth_train_replay_eval() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("alcohols.jsonl");
    let o = pathmp(&["synth", "--task", "alcohol-count", "--n", "40", "--seed", "2", "--out", data.to_str().unwrap()]);
    assert!(o.status.success());
    assert_eq!(fs::read_to_string(&data).unwrap().lines().count(), 41);
    let config = write(
        dir.path(),
        "run.toml",
        "task = \"regression\"\nrepeats = 2\n[data]\npath = \"alcohols.jsonl\"\n\
         [model]\nhidden_dim = 6\nsteps = 1\nmax_path_len = 2\nmode = \"substructure\"\n\
         [train]\nmax_epochs = 3\n[output]\ncheckpoint = \"model.ckpt\"\n",
    );
    let report = dir.path().join("out/report.jsonl");
    let o = pathmp(&["train", "--config", &config, "--report", report.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("over 2 run(s)"));
    let reports = pathmp::train::TrainReport::parse_jsonl(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(reports.len(), 2);
    assert_eq!(reports[1].final_metrics.seed, 1);

    let o = pathmp(&["train", "--replay", report.to_str().unwrap()]);
    assert!(o.status.success());
    assert_eq!(stdout(&o).matches("identical").count(), 2);

    let ck = dir.path().join("model.1.ckpt");
    let o = pathmp(&["eval", "--checkpoint", ck.to_str().unwrap(), "--input", data.to_str().unwrap()]);
    assert!(o.status.success());
    let metrics: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(metrics["molecules"], 40);
    assert!(metrics["mae"].as_f64().unwrap().is_finite());

    let corrupt = write(dir.path(), "broken.ckpt", "PATHMPCK");
    let o = pathmp(&["eval", "--checkpoint", &corrupt, "--input", data.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn featurize_dumps_every_path() {
    let dir = tempfile::tempdir().unwrap();
    let input = write(dir.path(), "p4.jsonl", BUTANE);
    let out = dir.path().join("f.jsonl");
    let o = pathmp(&["featurize", "--input", &input, "--mode", "substructure", "--length", "3", "--out", out.to_str().unwrap()]);
    assert!(o.status.success());
    let lines: Vec<serde_json::Value> =
        fs::read_to_string(&out).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    // a 4-chain has 2·(3 + 2 + 1) directed paths
    assert_eq!(lines.len(), 12);
    let longest = lines.iter().find(|l| l["path"].as_array().unwrap().len() == 4).unwrap();
    assert_eq!(longest["features"].as_array().unwrap().len(), 7 * 3 + 2);
    let o = pathmp(&["featurize", "--input", &input, "--mode", "geometry", "--length", "3", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}
