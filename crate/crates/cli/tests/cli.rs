use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use redense::data::{load_feature_bundle, FeatureBundle, META_OLD_LOSS};
use redense::linalg::{sample_gaussian, RngSeed};
use redense::nn::{one_hot, Loss};
use redense::persist::{load_model, read_curve};
use redense_cli::{manifest_path, RunManifest};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_redense"));
    c.env_remove("REDENSE_SEED");
    c
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("redense-cli-{}-{name}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn kv(out: &Output) -> BTreeMap<String, String> {
    String::from_utf8_lossy(&out.stdout)
        .lines()
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn train_blobs(dir: &Path) -> Output {
    let out = run(&[
        "train",
        "--synthetic",
        "blobs",
        "--hidden",
        "16",
        "--loss",
        "ce",
        "--epochs",
        "50",
        "--seed",
        "7",
        "--out-dir",
        s(dir),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    out
}

fn features(dir: &Path) {
    let out = run(&[
        "features",
        "--model",
        s(&dir.join("model.rdnm")),
        "--synthetic",
        "blobs",
        "--out-dir",
        s(dir),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn train_writes_model_curve_and_manifest() {
    let dir = scratch("train");
    let out = train_blobs(&dir);
    let kv = kv(&out);
    for key in ["train_loss", "train_accuracy", "test_loss", "test_accuracy"] {
        assert!(kv[key].parse::<f64>().unwrap().is_finite(), "{key}");
    }
    let model = load_model(dir.join("model.rdnm")).unwrap();
    assert_eq!(model.network.unwrap().feature_dim(), 16);
    let curve = read_curve(dir.join("train-curve.csv")).unwrap();
    assert_eq!(curve.len(), 51);
    assert!(curve.iter().all(|r| r.test_accuracy.is_some()));
    assert!(manifest_path(&dir, "train").exists());
}

#[test]
fn missing_dataset_is_a_usage_error() {
    let dir = scratch("nodata");
    assert_eq!(
        run(&["train", "--hidden", "4", "--out-dir", s(&dir)]).status.code(),
        Some(2)
    );
    assert_eq!(run(&["train", "--synthetic", "spirals"]).status.code(), Some(2));
    assert_eq!(
        run(&["train", "--synthetic", "blobs", "--loss", "hinge"]).status.code(),
        Some(2)
    );
    assert_eq!(run(&["no-such-command"]).status.code(), Some(2));
}

#[test]
fn reruns_are_reproducible_from_the_manifest() {
    let a = scratch("rerun-a");
    train_blobs(&a);
    let first = RunManifest::load(&manifest_path(&a, "train")).unwrap();

    // Replay the recorded argv into a fresh directory.
    let b = scratch("rerun-b");
    let mut argv: Vec<String> = first.argv[1..].to_vec();
    let pos = argv.iter().position(|x| x == "--out-dir").unwrap();
    argv[pos + 1] = s(&b).to_string();
    let out = bin().args(&argv).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let second = RunManifest::load(&manifest_path(&b, "train")).unwrap();
    assert_eq!(first.sha256, second.sha256);
    assert_eq!(first.metrics, second.metrics);

    // The seed can also come from the environment.
    let c = scratch("rerun-env");
    let out = bin()
        .env("REDENSE_SEED", "7")
        .args([
            "train",
            "--synthetic",
            "blobs",
            "--hidden",
            "16",
            "--epochs",
            "50",
            "--out-dir",
            s(&c),
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let third = RunManifest::load(&manifest_path(&c, "train")).unwrap();
    assert_eq!(first.sha256["model"], third.sha256["model"]);
}

#[test]
fn features_match_model_and_evaluation() {
    let dir = scratch("features");
    let trained = kv(&train_blobs(&dir));
    features(&dir);
    let bundle = load_feature_bundle(dir.join("train.rdfb")).unwrap();
    let (j, n, q) = bundle.dims();
    assert_eq!((j, n, q), (480, 17, 3));
    // Stored base loss is the same number train reported for this split.
    assert_eq!(bundle.metadata["base_train_loss"], trained["train_loss"]);
    let model = load_model(dir.join("model.rdnm")).unwrap().network.unwrap();
    assert_eq!(bundle.output_weight, model.folded_output_weight());
}

#[test]
fn features_reject_width_mismatch() {
    let dir = scratch("features-bad");
    train_blobs(&dir);
    let csv = dir.join("wide.csv");
    std::fs::write(&csv, "a,b,c,label\n0.1,0.2,0.3,0\n0.3,0.1,0.0,1\n1,2,3,2\n0,0,1,0\n1,1,1,1\n2,2,2,2\n0,1,0,0\n1,0,1,1\n2,1,0,2\n0,2,1,0\n").unwrap();
    let out = run(&[
        "features",
        "--model",
        s(&dir.join("model.rdnm")),
        "--csv",
        s(&csv),
        "--out-dir",
        s(&dir),
    ]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn redense_keeps_the_guarantee_and_extends_the_model() {
    let dir = scratch("redense");
    train_blobs(&dir);
    features(&dir);
    let out = run(&[
        "redense",
        "--bundle",
        s(&dir.join("train.rdfb")),
        "--test-bundle",
        s(&dir.join("test.rdfb")),
        "--model",
        s(&dir.join("model.rdnm")),
        "--out-dir",
        s(&dir),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let kv = kv(&out);
    let old: f64 = kv["old_loss"].parse().unwrap();
    let fin: f64 = kv["final_loss"].parse().unwrap();
    assert!(fin <= old);
    assert_eq!(kv["m"], "17");
    let extended = load_model(dir.join("model-redense.rdnm")).unwrap();
    assert!(extended.network.is_some() && extended.redense.is_some());
    let curve = read_curve(dir.join("redense-curve.csv")).unwrap();
    assert_eq!(curve.len(), 101);
    assert!(curve.iter().all(|r| r.test_loss.is_some() && r.test_accuracy.is_some()));

    let manifest = RunManifest::load(&manifest_path(&dir, "redense")).unwrap();
    assert_eq!(manifest.report.unwrap().final_loss, fin);
}

fn synthetic_bundle(dir: &Path, n: usize, old_loss: Option<&str>) -> PathBuf {
    let labels: Vec<usize> = (0..40).map(|j| j % 3).collect();
    let mut meta = BTreeMap::new();
    if let Some(v) = old_loss {
        meta.insert(META_OLD_LOSS.to_string(), v.to_string());
    }
    let b = FeatureBundle::new(
        sample_gaussian(40, n, RngSeed(1)),
        one_hot(&labels, 3),
        sample_gaussian(3, n, RngSeed(2)).scale(0.1),
        meta,
    )
    .unwrap();
    let path = dir.join(format!("n{n}.rdfb"));
    b.save(&path).unwrap();
    path
}

#[test]
fn redense_rejects_narrow_projection() {
    let dir = scratch("narrow");
    let bundle = synthetic_bundle(&dir, 200, None);
    let out = run(&["redense", "--bundle", s(&bundle), "--m", "100", "--out-dir", s(&dir)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("m >= n"));
    let out = run(&["sweep-m", "--bundle", s(&bundle), "--m", "n,100", "--out-dir", s(&dir)]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn recorded_base_loss_is_enforced() {
    let dir = scratch("violation");
    // A recorded base loss of zero cannot be met, which must fail hard.
    let bundle = synthetic_bundle(&dir, 6, Some("0"));
    let out = run(&["redense", "--bundle", s(&bundle), "--epochs", "5", "--out-dir", s(&dir)]);
    assert_eq!(out.status.code(), Some(5));
    assert!(kv(&out).contains_key("final_loss"));
}

#[test]
fn corrupt_inputs_are_data_errors() {
    let dir = scratch("corrupt");
    let path = dir.join("bad.rdfb");
    std::fs::write(&path, b"RDFB\x01\x00\x00\x00\x02").unwrap();
    assert_eq!(
        run(&["redense", "--bundle", s(&path), "--out-dir", s(&dir)])
            .status
            .code(),
        Some(3)
    );
    assert_eq!(
        run(&[
            "redense",
            "--bundle",
            s(&dir.join("missing.rdfb")),
            "--out-dir",
            s(&dir)
        ])
        .status
        .code(),
        Some(3)
    );
    assert_eq!(
        run(&[
            "eval",
            "--model",
            s(&path),
            "--synthetic",
            "blobs",
            "--out-dir",
            s(&dir)
        ])
        .status
        .code(),
        Some(3)
    );
}

#[test]
fn divergence_exits_with_code_4() {
    let dir = scratch("diverge");
    let out = run(&[
        "train",
        "--synthetic",
        "blobs",
        "--hidden",
        "8",
        "--lr",
        "1e300",
        "--optimizer",
        "sgd",
        "--epochs",
        "5",
        "--out-dir",
        s(&dir),
    ]);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn sweep_single_width_single_seed() {
    let dir = scratch("sweep");
    let bundle = synthetic_bundle(&dir, 6, None);
    let out = run(&[
        "sweep-m",
        "--bundle",
        s(&bundle),
        "--m",
        "8",
        "--seeds",
        "1",
        "--out-dir",
        s(&dir),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let table = std::fs::read_to_string(dir.join("sweep-m.csv")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[0], "m,seed,epsilon,final_train_loss,test_accuracy");
    assert_eq!(lines.len(), 2);
    assert!(lines[1].starts_with("8,0,"));
}

#[test]
fn eval_reports_one_or_two_columns() {
    let dir = scratch("eval");
    train_blobs(&dir);
    features(&dir);
    let base = run(&[
        "eval",
        "--model",
        s(&dir.join("model.rdnm")),
        "--synthetic",
        "blobs",
        "--split",
        "train",
        "--out-dir",
        s(&dir),
    ]);
    assert_eq!(base.status.code(), Some(0));
    let base = kv(&base);
    assert_eq!(base["columns"], "base");
    assert!(!base.contains_key("redense_loss"));

    // Accuracy is bitwise the library's evaluation of the same split.
    let model = load_model(dir.join("model.rdnm")).unwrap().network.unwrap();
    let bundle = load_feature_bundle(dir.join("train.rdfb")).unwrap();
    let data = redense::data::gen_synthetic(redense::data::SyntheticKind::Blobs, 600, 3, 1.0, RngSeed(0)).unwrap();
    let spec = redense::data::SplitSpec {
        train_fraction: 0.8,
        validation_fraction: 0.1,
        seed: RngSeed(0),
    };
    let (train, _, _) = redense::data::split(&data, &spec).unwrap();
    assert_eq!(train.targets, bundle.targets);
    let e = model
        .evaluate(&train.inputs, &train.targets, Loss::SoftmaxCrossEntropy)
        .unwrap();
    assert_eq!(
        base["base_accuracy"].parse::<f64>().unwrap().to_bits(),
        e.accuracy.to_bits()
    );
    assert_eq!(base["base_loss"].parse::<f64>().unwrap().to_bits(), e.loss.to_bits());

    let out = run(&[
        "redense",
        "--bundle",
        s(&dir.join("train.rdfb")),
        "--model",
        s(&dir.join("model.rdnm")),
        "--out-dir",
        s(&dir),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let both = run(&[
        "eval",
        "--model",
        s(&dir.join("model-redense.rdnm")),
        "--synthetic",
        "blobs",
        "--split",
        "train",
        "--out-dir",
        s(&dir),
    ]);
    let both = kv(&both);
    assert_eq!(both["columns"], "base,redense");
    let red: f64 = both["redense_loss"].parse().unwrap();
    assert!(red <= both["base_ce_loss"].parse::<f64>().unwrap());

    // A standalone head is evaluated on a bundle.
    let out = run(&["redense", "--bundle", s(&dir.join("train.rdfb")), "--out-dir", s(&dir)]);
    assert_eq!(out.status.code(), Some(0));
    let head = run(&[
        "eval",
        "--model",
        s(&dir.join("head.rdnm")),
        "--bundle",
        s(&dir.join("train.rdfb")),
        "--out-dir",
        s(&dir),
    ]);
    assert_eq!(head.status.code(), Some(0));
    let head = kv(&head);
    assert!(head["redense_loss"].parse::<f64>().unwrap() <= head["base_loss"].parse::<f64>().unwrap());
}
