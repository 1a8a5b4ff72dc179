use std::path::Path;
use std::process::{Command, Output};

fn locfair(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_locfair")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = locfair(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SMALL: [&str; 10] = [
    "--epochs", "2", "--batch", "64", "--hidden-f", "8", "--hidden-g", "4", "--hidden-r", "4",
];

#[test]
fn end_to_end_workflow() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("train.csv");
    let shifted = dir.path().join("shifted.csv");
    let model = dir.path().join("model.txt");
    let sweep = dir.path().join("sweep.jsonl");
    let plot = dir.path().join("pareto.csv");

    ok(&["synth", "--n", "800", "--seed", "1", "--region-bias", "0,0.15,0.45,0.6", "--out", s(&data)]);
    ok(&["synth", "--n", "800", "--seed", "2", "--drift", "1", "--out", s(&shifted)]);
    let header = std::fs::read_to_string(&data).unwrap();
    assert!(header.starts_with("age,gender,x1,x2,proxy"));

    let mut train = vec!["train", "--data", s(&data), "--algo", "road", "--out", s(&model)];
    train.extend(SMALL);
    let line = ok(&train);
    let rec: serde_json::Value = serde_json::from_str(line.trim()).unwrap();
    assert_eq!(rec["status"], "ok");
    assert!(rec["accuracy"].as_f64().unwrap() > 0.0);

    let eval = ok(&["eval", "--model", s(&model), "--data", s(&data)]);
    assert!(serde_json::from_str::<serde_json::Value>(eval.trim()).unwrap()["worst_1_di"].is_number());

    let drift = ok(&["drift", "--model", s(&model), "--data", s(&data), "--data", s(&shifted)]);
    let ids: Vec<String> = drift
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["cell_id"].as_str().unwrap().to_owned())
        .collect();
    assert_eq!(ids, ["train", "shifted"]);

    let table = ok(&["subgroups", "--model", s(&model), "--data", s(&data), "--cross-col", "gender"]);
    assert_eq!(table.lines().count(), 1 + 12);

    let mut sweep_args = vec![
        "sweep", "--data", s(&data), "--algos", "biased,road", "--lambdas", "0.5,1", "--taus", "0.5",
        "--out", s(&sweep),
    ];
    sweep_args.extend(SMALL);
    ok(&sweep_args);
    assert_eq!(std::fs::read_to_string(&sweep).unwrap().lines().count(), 3);
    let out = locfair(&sweep_args);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("3 skipped"));

    ok(&["plotdata", "--records", s(&sweep), "--kind", "pareto_xy", "--out", s(&plot)]);
    assert!(std::fs::read_to_string(&plot).unwrap().starts_with("worst_1_di,accuracy,tag"));
}

#[test]
fn bad_inputs_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.csv");
    let out = locfair(&["eval", "--model", s(&missing), "--data", s(&missing)]);
    assert_eq!(out.status.code(), Some(1));

    let data = dir.path().join("d.csv");
    ok(&["synth", "--n", "300", "--out", s(&data)]);
    let out = locfair(&["train", "--data", s(&data), "--algo", "nonsense", "--out", s(&missing)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!out.stderr.is_empty());
}

#[test]
fn failed_sweep_cells_set_exit_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.csv");
    let sweep = dir.path().join("s.jsonl");
    ok(&["synth", "--n", "400", "--out", s(&data)]);
    let mut args = vec![
        "sweep", "--data", s(&data), "--algos", "globalfair", "--lambdas", "1", "--lr-f", "1e300", "--out", s(&sweep),
    ];
    args.extend(SMALL);
    assert_eq!(locfair(&args).status.code(), Some(2));
    assert!(std::fs::read_to_string(&sweep).unwrap().contains("\"failed\""));
}
