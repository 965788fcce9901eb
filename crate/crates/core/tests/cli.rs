use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn tel(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tel")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn blob_csv(dir: &Path) -> PathBuf {
    let path = dir.join("blobs.csv");
    let o = tel(&["synth", "--kind", "blobs", "--n", "300", "--p", "4", "--seed", "1", "--out", s(&path)]);
    assert!(o.status.success(), "{}", stderr(&o));
    path
}

fn json(line: &str) -> serde_json::Value {
    serde_json::from_str(line.trim()).unwrap()
}

#[test]
fn train_with_defaults_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let data = blob_csv(dir.path());
    let model = dir.path().join("m.json");
    let hist = dir.path().join("h.csv");
    let o = tel(&["train", "--data", s(&data), "--model-out", s(&model), "--history-out", s(&hist)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(model.exists());
    let history = std::fs::read_to_string(&hist).unwrap();
    let lines: Vec<&str> = history.lines().collect();
    assert_eq!(
        lines[0],
        "epoch,train_loss,val_loss,val_acc,val_auc,mean_reachable_leaves,wall_time_sec"
    );
    assert_eq!(lines.len(), 51);
    let metrics = json(&stdout(&o));
    assert!(metrics["accuracy"].as_f64().unwrap() > 0.9);
    assert_eq!(metrics["n"].as_u64().unwrap(), 90);
}

#[test]
fn eval_reproduces_training_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let data = blob_csv(dir.path());
    let model = dir.path().join("m.json");
    let hist = dir.path().join("h.csv");
    let held_out = dir.path().join("test.csv");
    let o = tel(&[
        "train", "--data", s(&data), "--epochs", "8", "--batch-size", "64", "--model-out", s(&model),
        "--history-out", s(&hist), "--test-out", s(&held_out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let trained = json(&stdout(&o));
    let e = tel(&["eval", "--model-in", s(&model), "--data", s(&held_out)]);
    assert!(e.status.success(), "{}", stderr(&e));
    let evaluated = json(&stdout(&e));
    assert_eq!(trained, evaluated);
    let history = std::fs::read_to_string(&hist).unwrap();
    let last = history.lines().last().unwrap();
    let val_acc: f64 = last.split(',').nth(3).unwrap().parse().unwrap();
    assert!((val_acc - evaluated["accuracy"].as_f64().unwrap()).abs() <= 1e-12);
}

#[test]
fn identical_runs_are_byte_identical_at_any_thread_count() {
    let dir = tempfile::tempdir().unwrap();
    let data = blob_csv(dir.path());
    let mut outputs = Vec::new();
    for (i, threads) in ["1", "1", "3"].iter().enumerate() {
        let model = dir.path().join(format!("m{i}.json"));
        let hist = dir.path().join(format!("h{i}.csv"));
        let o = tel(&[
            "train", "--data", s(&data), "--epochs", "5", "--trees", "4", "--batch-size", "32", "--seed", "7",
            "--threads", threads, "--model-out", s(&model), "--history-out", s(&hist),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        outputs.push((std::fs::read(&model).unwrap(), std::fs::read(&hist).unwrap()));
    }
    assert_eq!(outputs[0], outputs[1]);
    assert_eq!(outputs[0], outputs[2]);
}

#[test]
fn bad_inputs_fail_with_messages() {
    let dir = tempfile::tempdir().unwrap();
    let data = blob_csv(dir.path());
    let model = dir.path().join("m.json");
    let hist = dir.path().join("h.csv");

    let o = tel(&["train", "--data", s(&data), "--label-col", "target", "--model-out", s(&model)]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("'target'"), "{}", stderr(&o));

    let o = tel(&[
        "train", "--data", s(&data), "--epochs", "1", "--model-out", s(&model), "--history-out", s(&hist),
    ]);
    assert!(o.status.success());
    let wide = dir.path().join("wide.csv");
    let o = tel(&["synth", "--kind", "blobs", "--n", "20", "--p", "6", "--out", s(&wide)]);
    assert!(o.status.success());
    let o = tel(&["eval", "--model-in", s(&model), "--data", s(&wide)]);
    assert!(!o.status.success());
    let msg = stderr(&o);
    assert!(msg.contains("expected 4") && msg.contains("got 6"), "{msg}");

    let empty = dir.path().join("empty.csv");
    std::fs::write(&empty, "x0,x1,x2,x3,label\n").unwrap();
    let o = tel(&["eval", "--model-in", s(&model), "--data", s(&empty)]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("no rows"), "{}", stderr(&o));

    let o = tel(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn grad_check_exit_codes() {
    let o = tel(&["grad-check"]);
    assert!(o.status.success(), "{}", stdout(&o));
    let out = stdout(&o);
    assert!(out.contains("PASS"));
    let fd_line = out.lines().find(|l| l.starts_with("conditional vs finite differences")).unwrap();
    let err: f64 = fd_line.rsplit(' ').next().unwrap().parse().unwrap();
    assert!(err <= 1e-5, "{fd_line}");

    let o = tel(&["grad-check", "--trials", "10", "--corrupt"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("seed"), "{}", stdout(&o));

    let o = tel(&["grad-check", "--trials", "0"]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("warning"));
}

#[test]
fn bench_outputs_have_the_documented_shape() {
    let o = tel(&["bench-speed", "--depths", "2,4", "--epochs", "2", "--n", "600"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines[0], "depth,activation,seconds");
    assert_eq!(lines.len(), 1 + 4);
    assert!(stderr(&o).contains("speed-up"));

    let o = tel(&[
        "bench-reachable", "--gammas", "0.5", "--depth", "4", "--epochs", "3", "--n", "400", "--init-scale", "0",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines[0], "gamma,epoch,mean_reachable_leaves");
    assert!(lines.iter().all(|l| l.split(',').count() == 3));
    assert_eq!(lines[1], "0.5,0,16.0");
}
