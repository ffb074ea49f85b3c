use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_sleepstage"))
}

fn run_ok(args: &[&str]) -> Output {
    let out = bin().args(args).output().expect("binary runs");
    assert!(
        out.status.success(),
        "{args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn run_err(args: &[&str]) -> String {
    let out = bin().args(args).output().expect("binary runs");
    assert!(!out.status.success(), "{args:?} should fail");
    String::from_utf8(out.stderr).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn tiny_config(dir: &Path, bundles: &Path) -> std::path::PathBuf {
    let text = format!(
        r#"
[data]
bundles = "{}"
channels = ["EEG", "EOG"]
[features]
filters = 8
[model]
filters_per_width = 3
widths = [3]
[train]
passes = 2
batch_size = 20
learning_rate = 0.005
balanced = false
[split]
protocol = "kfold"
k = 3
validation = 1
"#,
        bundles.display()
    );
    let path = dir.join("tiny.toml");
    std::fs::write(&path, text).unwrap();
    path
}

fn synth(dir: &Path) -> std::path::PathBuf {
    let bundles = dir.join("bundles");
    run_ok(&[
        "synth",
        "--subjects",
        "6",
        "--epochs-per-subject",
        "20",
        "--channels",
        "2",
        "--seed",
        "3",
        "--out-dir",
        s(&bundles),
    ]);
    bundles
}

#[test]
fn subcommands_chain_from_synthesis_to_rendering() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let bundles = synth(d);
    assert!(bundles.join("syn005").join("manifest.txt").is_file());
    let config = tiny_config(d, &bundles);

    let cache = d.join("cache");
    let out = run_ok(&["preprocess", "--config", s(&config), "--out-dir", s(&cache)]);
    assert_eq!(String::from_utf8(out.stdout).unwrap().lines().count(), 7);
    assert!(cache.join("cache_manifest.txt").is_file());
    assert!(cache.join("syn000.sstf").is_file());

    let model = d.join("fold0");
    run_ok(&[
        "train",
        "--config",
        s(&config),
        "--cache-dir",
        s(&cache),
        "--fold",
        "0",
        "--out-dir",
        s(&model),
    ]);
    let history = std::fs::read_to_string(model.join("history.csv")).unwrap();
    assert_eq!(history.lines().count(), 3);

    let grid = d.join("syn000.pgrd");
    run_ok(&[
        "predict",
        "--config",
        s(&config),
        "--checkpoint",
        s(&model.join("model.ssck")),
        "--bundle",
        s(&bundles.join("syn000")),
        "--out",
        s(&grid),
    ]);
    let hyp = d.join("syn000.hyp");
    run_ok(&[
        "aggregate",
        "--grid",
        s(&grid),
        "--voting",
        "additive",
        "--out",
        s(&hyp),
    ]);
    assert_eq!(std::fs::read_to_string(&hyp).unwrap().lines().count(), 20);

    let report_dir = d.join("eval");
    let out = run_ok(&[
        "evaluate",
        "--truth",
        s(&bundles.join("syn000")),
        "--pred",
        s(&hyp),
        "--out-dir",
        s(&report_dir),
    ]);
    let printed = String::from_utf8(out.stdout).unwrap();
    assert!(printed.contains("overall_accuracy"));
    assert_eq!(printed, std::fs::read_to_string(report_dir.join("report.txt")).unwrap());
    assert!(report_dir.join("report.csv").is_file());

    let svg = d.join("syn000.svg");
    run_ok(&[
        "render-hypnogram",
        "--truth",
        s(&bundles.join("syn000")),
        "--pred",
        s(&hyp),
        "--out",
        s(&svg),
    ]);
    assert!(std::fs::read_to_string(&svg).unwrap().starts_with("<svg"));
    assert!(d.join("syn000.txt").is_file());
}

#[test]
fn run_writes_every_artifact() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let bundles = synth(d);
    let config = tiny_config(d, &bundles);
    let out_dir = d.join("run");
    let out = run_ok(&["run", "--config", s(&config), "--out-dir", s(&out_dir), "--jobs", "2"]);
    assert!(String::from_utf8(out.stdout).unwrap().contains("[voting_accuracy]"));
    for f in ["report.txt", "report.csv", "summary.txt", "timings.log", "config.toml"] {
        assert!(out_dir.join(f).is_file(), "{f}");
    }
    for k in 0..3 {
        let fold = out_dir.join(format!("fold{k:02}"));
        assert!(fold.join("model.ssck").is_file());
        assert!(fold.join("history.csv").is_file());
        assert_eq!(std::fs::read_dir(fold.join("grids")).unwrap().count(), 2);
        assert_eq!(std::fs::read_dir(fold.join("hypnograms")).unwrap().count(), 4);
    }
}

#[test]
fn five_epoch_rendering_matches_golden_file() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    std::fs::write(d.join("truth.hyp"), "W\nN1\nN2\nN3\nREM\n").unwrap();
    std::fs::write(d.join("pred.hyp"), "W\nN2\nN2\nN3\nW\n").unwrap();
    run_ok(&[
        "render-hypnogram",
        "--truth",
        s(&d.join("truth.hyp")),
        "--pred",
        s(&d.join("pred.hyp")),
        "--out",
        s(&d.join("h.svg")),
    ]);
    let got = std::fs::read_to_string(d.join("h.txt")).unwrap();
    let golden =
        std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/hypnogram_5_epochs.txt"))
            .unwrap();
    assert_eq!(got, golden);
}

#[test]
fn mismatched_hypnograms_fail_with_category() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    std::fs::write(d.join("a.hyp"), "W\nN1\n").unwrap();
    std::fs::write(d.join("b.hyp"), "W\n").unwrap();
    let err = run_err(&[
        "render-hypnogram",
        "--truth",
        s(&d.join("a.hyp")),
        "--pred",
        s(&d.join("b.hyp")),
        "--out",
        s(&d.join("x.svg")),
    ]);
    assert!(err.starts_with("error[invalid-input]:"), "{err}");
    std::fs::write(d.join("c.hyp"), "W\nN4\n").unwrap();
    let err = run_err(&[
        "evaluate",
        "--truth",
        s(&d.join("a.hyp")),
        "--pred",
        s(&d.join("c.hyp")),
    ]);
    assert!(err.starts_with("error[format]:"), "{err}");
}

#[test]
fn invalid_config_fails_fast_naming_the_key() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let bad = d.join("bad.toml");
    std::fs::write(
        &bad,
        "[data]\nbundles = \"b\"\nchannels = [\"EEG\"]\n[train]\ndropout = 1.5\n",
    )
    .unwrap();
    let err = run_err(&["run", "--config", s(&bad), "--out-dir", s(&d.join("o"))]);
    assert!(
        err.starts_with("error[config]:") && err.contains("train.dropout"),
        "{err}"
    );
    assert!(!d.join("o").exists());
    std::fs::write(
        &bad,
        "[data]\nbundles = \"b\"\nchannels = [\"EEG\"]\n[model]\nfilterz = 3\n",
    )
    .unwrap();
    let err = run_err(&["run", "--config", s(&bad), "--out-dir", s(&d.join("o"))]);
    assert!(err.starts_with("error[config]:") && err.contains("filterz"), "{err}");
}

#[test]
fn missing_inputs_are_io_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let err = run_err(&[
        "aggregate",
        "--grid",
        s(&tmp.path().join("nope.pgrd")),
        "--out",
        s(&tmp.path().join("x.hyp")),
    ]);
    assert!(err.starts_with("error[io]:"), "{err}");
}
