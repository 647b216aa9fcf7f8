//! End-to-end checks of the `tsk` binary: exit codes, artifacts, schemas.

use std::path::Path;
use std::process::{Command, Output};

fn tsk(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tsk"))
        .args(args)
        .output()
        .expect("spawn tsk")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn read_dir_sorted(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut files = Vec::new();
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.is_dir() {
            files.extend(read_dir_sorted(&path));
        } else {
            files.push(path);
        }
    }
    files.sort();
    files
}

fn synth_small(dir: &Path, task: &str, extra: &[&str]) {
    let out = dir.to_str().unwrap();
    let mut args = vec![
        "synth",
        "--task",
        task,
        "--clips",
        "12",
        "--classes",
        "3",
        "--dim",
        "8",
        "--t-min",
        "12",
        "--t-max",
        "20",
        "--motif-min",
        "4",
        "--motif-max",
        "8",
        "--seed",
        "5",
        "--out",
        out,
    ];
    args.extend_from_slice(extra);
    let res = tsk(&args);
    assert_eq!(code(&res), 0, "synth failed: {}", String::from_utf8_lossy(&res.stderr));
}

#[test]
fn synth_writes_manifest_and_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    synth_small(&a, "multilabel", &[]);
    synth_small(&b, "multilabel", &[]);

    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["task"], "multilabel");
    assert_eq!(manifest["entries"].as_array().unwrap().len(), 12);

    let fa = read_dir_sorted(&a);
    let fb = read_dir_sorted(&b);
    assert_eq!(fa.len(), fb.len());
    for (pa, pb) in fa.iter().zip(&fb) {
        assert_eq!(
            pa.strip_prefix(&a).unwrap(),
            pb.strip_prefix(&b).unwrap()
        );
        assert_eq!(
            std::fs::read(pa).unwrap(),
            std::fs::read(pb).unwrap(),
            "mismatch at {}",
            pa.display()
        );
    }
}

#[test]
fn synth_refuses_nonempty_dir_without_force() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("d");
    synth_small(&dir, "multilabel", &[]);
    let out = tsk(&[
        "synth",
        "--task",
        "multilabel",
        "--clips",
        "2",
        "--out",
        dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 2);
    let out = tsk(&[
        "synth",
        "--task",
        "multilabel",
        "--clips",
        "2",
        "--classes",
        "3",
        "--dim",
        "8",
        "--t-min",
        "12",
        "--t-max",
        "20",
        "--out",
        dir.to_str().unwrap(),
        "--force",
    ]);
    assert_eq!(code(&out), 0);
}

#[test]
fn synth_rejects_unknown_task() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tsk(&[
        "synth",
        "--task",
        "juggling",
        "--out",
        tmp.path().join("x").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 2);
}

#[test]
fn train_writes_checkpoint_and_history() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let run = tmp.path().join("run");
    synth_small(&data, "multilabel", &[]);
    let out = tsk(&[
        "train",
        "--manifest",
        data.to_str().unwrap(),
        "--head",
        "sub_events",
        "--task",
        "multilabel",
        "--epochs",
        "3",
        "--seed",
        "1",
        "--out",
        run.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(run.join("checkpoint.tskm").exists());
    let history = std::fs::read_to_string(run.join("history.csv")).unwrap();
    let lines: Vec<&str> = history.trim().lines().collect();
    assert_eq!(lines[0], "epoch,lr,train_loss,eval_metric");
    assert_eq!(lines.len(), 4); // header + 3 epochs
    assert!(lines[1].starts_with("0,0.01,"));
}

#[test]
fn train_defaults_follow_protocol() {
    let out = tsk(&["train", "--help"]);
    let help = stdout(&out);
    assert!(help.contains("[default: 0.01]"), "{help}");
    assert!(help.contains("[default: 50]"), "{help}");
}

#[test]
fn train_rejects_head_task_mismatch() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth_small(&data, "multilabel", &[]);
    let out = tsk(&[
        "train",
        "--manifest",
        data.to_str().unwrap(),
        "--head",
        "per_frame",
        "--task",
        "multilabel",
        "--epochs",
        "1",
        "--out",
        tmp.path().join("run").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 2, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn missing_inputs_exit_one() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tsk(&[
        "train",
        "--manifest",
        tmp.path().join("nope").to_str().unwrap(),
        "--head",
        "max_pool",
        "--task",
        "multilabel",
        "--out",
        tmp.path().join("run").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 1);

    let data = tmp.path().join("data");
    synth_small(&data, "multilabel", &[]);
    let out = tsk(&[
        "eval",
        "--checkpoint",
        tmp.path().join("missing.tskm").to_str().unwrap(),
        "--manifest",
        data.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 1);
}

#[test]
fn eval_emits_per_class_ap_and_map() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let run = tmp.path().join("run");
    synth_small(&data, "multilabel", &[]);
    let out = tsk(&[
        "train",
        "--manifest",
        data.to_str().unwrap(),
        "--head",
        "max_pool",
        "--task",
        "multilabel",
        "--epochs",
        "2",
        "--out",
        run.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let json_path = tmp.path().join("metrics.json");
    let csv_path = tmp.path().join("ap.csv");
    let out = tsk(&[
        "eval",
        "--checkpoint",
        run.join("checkpoint.tskm").to_str().unwrap(),
        "--manifest",
        data.to_str().unwrap(),
        "--out",
        json_path.to_str().unwrap(),
        "--csv",
        csv_path.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert!(report["mAP"].is_number());
    let per_class = report["per_class_ap"].as_object().unwrap();
    assert_eq!(per_class.len(), 3);
    assert!(per_class.contains_key("c0"));
    let saved: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&json_path).unwrap()).unwrap();
    assert_eq!(saved, report);
    let csv = std::fs::read_to_string(&csv_path).unwrap();
    assert!(csv.starts_with("method,c0,c1,c2,mAP"), "{csv}");
    assert!(csv.contains("max_pool"));
}

#[test]
fn params_reproduces_published_counts() {
    let out = tsk(&[
        "params",
        "--d",
        "2048",
        "--c",
        "8",
        "--head",
        "max_pool,mean_pool,pyramid,bilstm",
        "--hidden",
        "512",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let table = stdout(&out);
    assert!(table.contains("16392"), "{table}");
    assert!(table.contains("114696"), "{table}");
    assert!(table.contains("10498056"), "{table}");
}

#[test]
fn inspect_filters_writes_normalized_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let run = tmp.path().join("run");
    synth_small(&data, "multilabel", &[]);
    let out = tsk(&[
        "train",
        "--manifest",
        data.to_str().unwrap(),
        "--head",
        "sub_events",
        "--task",
        "multilabel",
        "--epochs",
        "1",
        "--m",
        "2",
        "--n",
        "3",
        "--out",
        run.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let csv_path = tmp.path().join("filters.csv");
    let out = tsk(&[
        "inspect-filters",
        "--checkpoint",
        run.join("checkpoint.tskm").to_str().unwrap(),
        "--t",
        "32",
        "--out",
        csv_path.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(&csv_path).unwrap();
    let mut lines = csv.trim().lines();
    assert_eq!(lines.next(), Some("filter_index,gaussian_index,t,weight"));
    let mut sums = std::collections::BTreeMap::<(usize, usize), f64>::new();
    let mut count = 0;
    for line in lines {
        let cols: Vec<&str> = line.split(',').collect();
        let key = (cols[0].parse().unwrap(), cols[1].parse().unwrap());
        *sums.entry(key).or_default() += cols[3].parse::<f64>().unwrap();
        count += 1;
    }
    assert_eq!(count, 2 * 3 * 32); // M*N rows of T weights
    assert_eq!(sums.len(), 6);
    for ((m, n), sum) in sums {
        assert!((sum - 1.0).abs() < 1e-6, "row ({m},{n}) sums to {sum}");
    }
}

#[test]
fn inspect_filters_rejects_filterless_heads() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let run = tmp.path().join("run");
    synth_small(&data, "multilabel", &[]);
    let out = tsk(&[
        "train",
        "--manifest",
        data.to_str().unwrap(),
        "--head",
        "max_pool",
        "--task",
        "multilabel",
        "--epochs",
        "1",
        "--out",
        run.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0);
    let out = tsk(&[
        "inspect-filters",
        "--checkpoint",
        run.join("checkpoint.tskm").to_str().unwrap(),
        "--out",
        tmp.path().join("f.csv").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 2, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn speed_task_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let run = tmp.path().join("run");
    synth_small(&data, "speed", &["--noise", "0.5"]);
    let out = tsk(&[
        "train",
        "--manifest",
        data.to_str().unwrap(),
        "--head",
        "mean_pool",
        "--task",
        "speed",
        "--epochs",
        "2",
        "--out",
        run.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let out = tsk(&[
        "eval",
        "--checkpoint",
        run.join("checkpoint.tskm").to_str().unwrap(),
        "--manifest",
        data.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    let mae = report["mae"].as_f64().unwrap();
    let rmse = report["rmse"].as_f64().unwrap();
    assert!(rmse >= mae);
}

#[test]
fn eval_rejects_task_checkpoint_mismatch() {
    let tmp = tempfile::tempdir().unwrap();
    let seg = tmp.path().join("seg");
    let cont = tmp.path().join("cont");
    let run = tmp.path().join("run");
    synth_small(&seg, "multilabel", &[]);
    synth_small(&cont, "detection", &["--events", "1"]);
    let out = tsk(&[
        "train",
        "--manifest",
        seg.to_str().unwrap(),
        "--head",
        "max_pool",
        "--task",
        "multilabel",
        "--epochs",
        "1",
        "--out",
        run.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let out = tsk(&[
        "eval",
        "--checkpoint",
        run.join("checkpoint.tskm").to_str().unwrap(),
        "--manifest",
        cont.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 2, "{}", String::from_utf8_lossy(&out.stderr));
}
