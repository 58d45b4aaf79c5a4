use std::path::Path;
use std::process::{Command, Output};

fn sedx(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sedx"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn sedx")
}

fn ok(out: Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn generate_train_eval_probe() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    std::fs::write(root.join("spec.txt"), "strong = 4\nweak = 2\nunlabeled = 4\nframes = 32\nbins = 12\nclasses = 3\nseed = 5\n").unwrap();
    let summary = ok(sedx(&["generate", "--spec", p(&root.join("spec.txt")), "--out", p(&root.join("data"))]));
    assert!(summary.contains("strong"), "{summary}");

    // Relative paths resolve against the config's directory.
    std::fs::write(
        root.join("run.cfg"),
        "dataset = data\noutput = run\nmode = projector+fc+sc\nepochs = 2\nbatch_size = 4\nconv1_channels = 2\nconv2_channels = 2\nrnn_hidden = 4\nrampup_epochs = 2\n",
    )
    .unwrap();
    let trained = ok(sedx(&["train", "--config", p(&root.join("run.cfg"))]));
    assert!(trained.contains("projector+fc+sc"), "{trained}");
    let run = root.join("run");
    for f in ["checkpoint.sedm", "runlog.csv", "timing.csv", "metrics.txt", "metrics.csv"] {
        assert!(run.join(f).is_file(), "missing {f}");
    }
    let log = sedx::train::RunLog::read(&run.join("runlog.csv")).unwrap();
    assert_eq!(log.records.len(), 2);

    let ckpt = run.join("checkpoint.sedm");
    let kv = ok(sedx(&["eval", "--checkpoint", p(&ckpt), "--dataset", p(&root.join("data"))]));
    assert!(kv.contains("frame") && run.join("eval_metrics.txt").is_file(), "{kv}");
    // Same checkpoint and dataset as the training-time evaluation.
    assert_eq!(std::fs::read_to_string(run.join("eval_metrics.txt")).unwrap(), std::fs::read_to_string(run.join("metrics.txt")).unwrap());

    let csv = ok(sedx(&["probe", "--checkpoint", p(&ckpt), "--dataset", p(&root.join("data"))]));
    assert!(csv.starts_with("feature_class,target_class,kind,auc"));
    assert!(run.join("probe").join("leakage.csv").is_file());
    assert!(run.join("probe").join("pca_class0.csv").is_file());
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "mode = projector\nlambda1 = -1\n").unwrap();
    let out = sedx(&["train", "--config", p(&cfg)]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("bad.cfg:"), "{err}");

    let out = sedx(&["eval", "--checkpoint", p(&dir.path().join("none.sedm")), "--dataset", p(dir.path())]);
    assert_eq!(out.status.code(), Some(2));

    // Usage errors come from the argument parser.
    assert_eq!(sedx(&["train"]).status.code(), Some(2));
}
