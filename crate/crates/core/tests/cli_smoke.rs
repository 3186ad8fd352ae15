use std::path::Path;
use std::process::Command;

use touchnet::cli::{self, read_manifest, sha256_file};

fn run(args: &[&str]) -> i32 {
    cli::run(std::iter::once("touchnet").chain(args.iter().copied()))
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap()
}

#[test]
fn full_pipeline_from_empty_directory() {
    let root = tempfile::tempdir().unwrap();
    let data = root.path().join("data");
    let model = root.path().join("model");
    let again = root.path().join("again");
    let cmp = root.path().join("compare");
    let attr = root.path().join("attribute");
    let roc = root.path().join("roc");
    let eval = root.path().join("eval");

    assert_eq!(
        run(&[
            "generate",
            "--users",
            "600",
            "--months",
            "12",
            "--seed",
            "3",
            "--out",
            p(&data)
        ]),
        0
    );
    for f in [
        "events.csv",
        "purchases.csv",
        "groundtruth.json",
        cli::MANIFEST_FILE,
    ] {
        assert!(data.join(f).is_file(), "{f}");
    }

    let train = |out: &Path| {
        run(&[
            "train",
            "--data",
            p(&data),
            "--lookback",
            "3m",
            "--seed",
            "5",
            "--epochs",
            "100",
            "--members",
            "2",
            "--out",
            p(out),
        ])
    };
    assert_eq!(train(&model), 0);
    assert_eq!(train(&again), 0);
    for f in [cli::MODEL_FILE, cli::METRICS_FILE] {
        assert_eq!(
            read(&model.join(f)),
            read(&again.join(f)),
            "{f} differs between runs"
        );
    }
    let manifest = read_manifest(&model).unwrap();
    assert_eq!(manifest.command, "train");
    assert_eq!(manifest.inputs.len(), 2);
    assert_eq!(
        manifest.artifacts[cli::MODEL_FILE],
        sha256_file(&model.join(cli::MODEL_FILE)).unwrap()
    );
    let metrics: serde_json::Value =
        serde_json::from_str(&read(&model.join(cli::METRICS_FILE))).unwrap();
    assert_eq!(metrics["lookback_days"], 91);
    for key in ["auroc", "tpr", "tnr", "balanced_accuracy", "threshold"] {
        assert!(metrics[key].is_number(), "{key}");
    }

    let model_args = |cmd: &'static str, out: &Path| -> Vec<String> {
        vec![
            cmd.into(),
            "--data".into(),
            p(&data).into(),
            "--model".into(),
            p(&model).into(),
            "--out".into(),
            p(out).into(),
        ]
    };
    let call = |args: Vec<String>| cli::run(std::iter::once("touchnet".to_string()).chain(args));

    assert_eq!(call(model_args("evaluate", &eval)), 0);
    assert_eq!(
        read(&eval.join(cli::METRICS_FILE)),
        read(&model.join(cli::METRICS_FILE))
    );

    assert_eq!(call(model_args("compare", &cmp)), 0);
    let table = read(&cmp.join(cli::COMPARISON_FILE));
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[0], "model,auroc,tpr,tnr,balanced_accuracy");
    assert_eq!(lines.len(), 5);

    let mut args = model_args("attribute", &attr);
    args.extend(
        [
            "--background",
            "16",
            "--n-perm",
            "10",
            "--max-users",
            "5",
            "--seed",
            "1",
        ]
        .map(String::from),
    );
    assert_eq!(call(args), 0);
    let bees = read(&attr.join(cli::BEESWARM_FILE));
    assert_eq!(bees.lines().count(), 1 + 5 * 31);
    assert_eq!(read(&attr.join(cli::IMPORTANCE_FILE)).lines().count(), 32);
    assert!(attr.join(cli::SHAPLEY_FILE).is_file());

    assert_eq!(call(model_args("roc-export", &roc)), 0);
    let curve = read(&roc.join(cli::ROC_FILE));
    assert_eq!(curve.lines().next(), Some("threshold,fpr,tpr"));
    assert!(curve.lines().last().unwrap().starts_with("-inf,1,1"));
}

#[test]
fn manifest_argv_replays_training() {
    let root = tempfile::tempdir().unwrap();
    let data = root.path().join("data");
    let first = root.path().join("first");
    let second = root.path().join("second");
    assert_eq!(
        run(&[
            "generate",
            "--users",
            "400",
            "--months",
            "6",
            "--seed",
            "8",
            "--out",
            p(&data)
        ]),
        0
    );
    assert_eq!(
        run(&[
            "train",
            "--data",
            p(&data),
            "--epochs",
            "50",
            "--members",
            "2",
            "--seed",
            "2",
            "--out",
            p(&first)
        ]),
        0
    );
    let mut argv = read_manifest(&first).unwrap().argv;
    let at = argv.iter().position(|a| a == "--out").unwrap();
    argv[at + 1] = p(&second).into();
    assert_eq!(
        cli::run(std::iter::once("touchnet".to_string()).chain(argv)),
        0
    );
    for f in [cli::MODEL_FILE, cli::METRICS_FILE] {
        assert_eq!(
            std::fs::read(first.join(f)).unwrap(),
            std::fs::read(second.join(f)).unwrap()
        );
    }
}

#[test]
fn binary_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_touchnet");
    let root = tempfile::tempdir().unwrap();
    let status = |args: &[&str]| Command::new(bin).args(args).output().unwrap().status.code();
    assert_eq!(status(&["--help"]), Some(0));
    assert_eq!(status(&["train"]), Some(2));
    assert_eq!(status(&["frobnicate"]), Some(2));
    let missing = root.path().join("nothing");
    let out = root.path().join("out");
    assert_eq!(
        status(&["train", "--data", p(&missing), "--out", p(&out)]),
        Some(1)
    );
}
