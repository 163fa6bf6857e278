use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use neurovit::dataset::ClassLabel;
use neurovit::imaging::{clahe, load_image, ClaheConfig};

fn neurovit(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_neurovit"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = neurovit(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn synth(dir: &Path, per_class: usize) {
    ok(dir, &["synth", "--out", "raw", "--per-class", &per_class.to_string(), "--size", "32", "--seed", "3"]);
}

const TINY_RUN: &str = r#"
data_root = "raw"
manifest = "manifest.csv"
output_dir = "out"
preset = "tiny"
batch_size = 4
stage1_epochs = 2
stage2_max_epochs = 3
"#;

fn prepare_training(dir: &Path) {
    synth(dir, 8);
    ok(dir, &["split", "--data-root", "raw", "--out", "manifest.csv"]);
    fs::write(dir.join("run.toml"), TINY_RUN).unwrap();
}

#[test]
fn split_reference_counts_and_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    for (class, n) in ClassLabel::ALL.iter().zip([1621, 2000, 1645, 1757]) {
        let dir = tmp.path().join("raw").join(class.name());
        fs::create_dir_all(&dir).unwrap();
        for i in 0..n {
            fs::write(dir.join(format!("{i:05}.jpg")), b"").unwrap();
        }
    }
    let table = ok(tmp.path(), &["split", "--data-root", "raw", "--seed", "42", "--out", "a.csv"]);
    let total = table.lines().find(|l| l.starts_with("total")).unwrap();
    let nums: Vec<&str> = total.split_whitespace().skip(1).collect();
    assert_eq!(nums, ["5617", "703", "703", "7023"]);
    for (class, test) in [("glioma", "162"), ("healthy", "200"), ("meningioma", "165"), ("pituitary", "176")] {
        let row = table.lines().find(|l| l.starts_with(class)).unwrap();
        assert_eq!(row.split_whitespace().nth(3), Some(test), "{row}");
    }
    ok(tmp.path(), &["split", "--data-root", "raw", "--seed", "42", "--out", "b.csv"]);
    assert_eq!(fs::read(tmp.path().join("a.csv")).unwrap(), fs::read(tmp.path().join("b.csv")).unwrap());
}

#[test]
fn split_missing_class_is_a_user_error() {
    let tmp = tempfile::tempdir().unwrap();
    for class in ["glioma", "healthy", "meningioma"] {
        let dir = tmp.path().join("raw").join(class);
        fs::create_dir_all(&dir).unwrap();
        fs::write(dir.join("a.jpg"), b"").unwrap();
    }
    let out = neurovit(tmp.path(), &["split", "--data-root", "raw", "--out", "m.csv"]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("pituitary"), "{err}");
    assert!(!err.contains("panicked"));
}

#[test]
fn preprocess_matches_in_process_clahe_and_is_idempotent() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("empty.csv"), "relative_path,label,split\n").unwrap();
    let out = ok(tmp.path(), &["preprocess", "--manifest", "empty.csv", "--src", "raw", "--cache", "cache"]);
    assert!(out.starts_with("0 written"), "{out}");

    synth(tmp.path(), 1);
    let rows = ["glioma/glioma_0000.png", "healthy/healthy_0000.png", "pituitary/pituitary_0000.png"];
    let mut csv = String::from("relative_path,label,split\n");
    for r in rows {
        csv += &format!("{r},{},train\n", r.split('/').next().unwrap());
    }
    fs::write(tmp.path().join("three.csv"), csv).unwrap();
    let args = ["preprocess", "--manifest", "three.csv", "--src", "raw", "--cache", "cache"];
    assert!(ok(tmp.path(), &args).starts_with("3 written"));
    for r in rows {
        let expected = clahe(&load_image(tmp.path().join("raw").join(r)).unwrap(), &ClaheConfig::default()).unwrap();
        assert_eq!(load_image(tmp.path().join("cache").join(r)).unwrap(), expected, "{r}");
    }
    assert!(ok(tmp.path(), &args).starts_with("0 written"));
}

#[test]
fn eval_on_seeded_predictions_prints_reference_table() {
    let tmp = tempfile::tempdir().unwrap();
    let names = ["glioma", "healthy", "meningioma", "pituitary"];
    let counts = [[159, 0, 3, 0], [0, 200, 0, 0], [0, 0, 165, 0], [0, 0, 2, 174]];
    let mut csv = String::from("relative_path,label,predicted\n");
    for (t, row) in counts.iter().enumerate() {
        for (p, &n) in row.iter().enumerate() {
            for i in 0..n {
                csv += &format!("{0}/{i}.jpg,{0},{1}\n", names[t], names[p]);
            }
        }
    }
    fs::write(tmp.path().join("preds.csv"), csv).unwrap();
    let text = ok(tmp.path(), &["eval", "--predictions", "preds.csv", "--out-dir", "ev"]);
    let expected = [
        ("glioma", "1.0000 0.9815 0.9907 162"),
        ("healthy", "1.0000 1.0000 1.0000 200"),
        ("meningioma", "0.9706 1.0000 0.9851 165"),
        ("pituitary", "1.0000 0.9886 0.9943 176"),
        ("Macro Avg", "0.9926 0.9925 0.9925 703"),
        ("Weighted Avg", "0.9931 0.9929 0.9929 703"),
        ("Overall Acc", "0.9929 703"),
    ];
    for (label, values) in expected {
        let line = text.lines().find(|l| l.starts_with(label)).unwrap();
        let got = line[label.len()..].split_whitespace().collect::<Vec<_>>().join(" ");
        assert_eq!(got, values, "{label}");
    }
    for f in ["metrics.txt", "metrics.csv", "confusion.csv", "confusion_normalized.csv"] {
        assert!(tmp.path().join("ev").join(f).is_file(), "{f}");
    }
}

#[test]
fn train_eval_predict_rollout_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    prepare_training(dir);
    ok(dir, &["train", "--config", "run.toml"]);
    let report = fs::read_to_string(dir.join("out/train_report.csv")).unwrap();
    assert_eq!(report.lines().count(), 1 + 2 + 3);

    let eval = ["eval", "--checkpoint", "out/params_ema.ckpt", "--manifest", "manifest.csv", "--data-root", "raw", "--tta"];
    let mut a = eval.to_vec();
    a.extend(["--out-dir", "ev1"]);
    ok(dir, &a);
    let mut b = eval.to_vec();
    b.extend(["--out-dir", "ev2"]);
    ok(dir, &b);
    for f in ["predictions.csv", "metrics.csv", "confusion.csv"] {
        assert_eq!(fs::read(dir.join("ev1").join(f)).unwrap(), fs::read(dir.join("ev2").join(f)).unwrap(), "{f}");
    }

    let img = "raw/glioma/glioma_0000.png";
    let out = ok(dir, &["predict", "--checkpoint", "out/params_ema.ckpt", "--image", img, "--tta"]);
    assert!(out.starts_with("class: "));
    let total: f64 = out.lines().skip(1).map(|l| l.rsplit(' ').next().unwrap().parse::<f64>().unwrap()).sum();
    assert!((total - 1.0).abs() < 1e-5);

    ok(dir, &["rollout", "--checkpoint", "out/params_raw.ckpt", "--image", img, "--out", "ro"]);
    let png = load_image(dir.join("ro/glioma_0000_rollout.png")).unwrap();
    assert_eq!((png.height(), png.width(), png.channels()), (32, 32, 3));
    let grid = fs::read_to_string(dir.join("ro/glioma_0000_rollout.csv")).unwrap();
    let values: Vec<f64> = grid.lines().flat_map(|l| l.split(',')).map(|v| v.parse().unwrap()).collect();
    assert_eq!(values.len(), 16);
    assert!(values.iter().all(|v| (0.0..=1.0).contains(v)));
}

#[test]
fn training_twice_gives_identical_bytes() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    prepare_training(dir);
    ok(dir, &["train", "--config", "run.toml", "--out-dir", "r1"]);
    ok(dir, &["train", "--config", "run.toml", "--out-dir", "r2"]);
    for f in ["train_report.csv", "params_raw.ckpt", "params_ema.ckpt", "params_best.ckpt"] {
        assert_eq!(fs::read(dir.join("r1").join(f)).unwrap(), fs::read(dir.join("r2").join(f)).unwrap(), "{f}");
    }
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(neurovit(tmp.path(), &["--help"]).status.code(), Some(0));
    assert_eq!(neurovit(tmp.path(), &["nonsense"]).status.code(), Some(1));
    assert_eq!(neurovit(tmp.path(), &["predict", "--checkpoint", "missing.ckpt", "--image", "x.png"]).status.code(), Some(1));

    fs::write(tmp.path().join("bad.toml"), "learning_rate = 0.1\n").unwrap();
    let out = neurovit(tmp.path(), &["train", "--config", "bad.toml"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("learning_rate"));

    fs::write(tmp.path().join("garbage.ckpt"), b"not a checkpoint").unwrap();
    let out = neurovit(tmp.path(), &["predict", "--checkpoint", "garbage.ckpt", "--image", "x.png"]);
    assert_eq!(out.status.code(), Some(1));
}
