mod common;

use std::time::{Duration, Instant};

use common::{path_str, sslab, stderr, stdout, tiny_toml, write_config, ROTATION_ONLY};
use sslab::config::{ExperimentConfig, RunKind};
use sslab::ops::half_class_run_id;
use sslab::report::{ACCURACY, EV_CURVES, RANDOM_LABEL_GAPS, SCATTER};
use sslab::{run_id, Registry};
use sslab_core::evaluation::FeatureMatrix;
use sslab_core::pretexts::PretextKind;

#[test]
fn bad_config_exits_2_with_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let text = tiny_toml(ROTATION_ONLY, "").replace("epochs = 2\ndecay_epochs = [1]", "epochs = 120\ndecay_epochs = [100, 80]");
    let cfg = write_config(dir.path(), "bad.toml", &text);
    let out = sslab(&["--config", path_str(&cfg), "--out", path_str(dir.path()), "train"]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    assert!(stderr(&out).contains("optim"), "{}", stderr(&out));
    assert!(!dir.path().join("runs").exists());
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(sslab(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(sslab(&["probe"]).status.code(), Some(2));
    assert_eq!(sslab(&["train"]).status.code(), Some(2), "train needs a config");
    assert_eq!(sslab(&["--help"]).status.code(), Some(0));
}

#[test]
fn train_twice_is_a_cache_hit() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "tiny.toml", &tiny_toml(ROTATION_ONLY, ""));
    let out_dir = dir.path().join("out");
    let args = ["--config", path_str(&cfg), "--out", path_str(&out_dir), "train"];

    let first = sslab(&args);
    assert_eq!(first.status.code(), Some(0), "{}", stderr(&first));
    assert!(stdout(&first).contains("trained run"));
    let second = sslab(&args);
    assert_eq!(second.status.code(), Some(0));
    assert!(stdout(&second).contains("cache hit"), "{}", stdout(&second));

    let parsed = ExperimentConfig::load(&cfg).unwrap();
    let id = run_id(&parsed.run_spec(RunKind::Pretext(PretextKind::Rotation), false)).unwrap();
    assert!(stdout(&second).contains(&id));
    assert!(Registry::new(&out_dir).is_complete(&id));
}

#[test]
fn generalization_without_half_run_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = write_config(dir.path(), "tiny.toml", &tiny_toml(ROTATION_ONLY, ""));
    let out_dir = dir.path().join("out");
    let base = ["--config", path_str(&cfg_path), "--out", path_str(&out_dir)];
    assert_eq!(sslab(&[&base[..], &["train"]].concat()).status.code(), Some(0));

    let cfg = ExperimentConfig::load(&cfg_path).unwrap();
    let spec = cfg.run_spec(RunKind::Pretext(PretextKind::Rotation), false);
    let id = run_id(&spec).unwrap();
    let out = sslab(&[&base[..], &["diagnose", "--run", &id, "--which", "generalization"]].concat());
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains(&half_class_run_id(&spec).unwrap()), "{}", stderr(&out));
    assert!(stderr(&out).contains("--half-classes"));
}

#[test]
fn missing_run_and_empty_report_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let out = sslab(&["--out", path_str(dir.path()), "probe", "--run", "ffffffffffffffff"]);
    assert_eq!(out.status.code(), Some(3));
    let out = sslab(&["--out", path_str(dir.path()), "report"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("empty"));
}

#[test]
fn directory_dataset_round_trip_and_export() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("shapes");
    let made = sslab(&[
        "--seed", "5", "make-dataset", "--kind", "oriented_shapes", "--classes", "3", "--per-class", "12", "--side", "32",
        "--dest", path_str(&data),
    ]);
    assert_eq!(made.status.code(), Some(0), "{}", stderr(&made));

    let text = tiny_toml("random_init = true", "").replace(
        "source = \"synthetic\"\nkind = \"oriented_shapes\"\nn_per_class = 15\nclass_count = 4\nside = 32",
        &format!("source = \"directory\"\npath = {:?}\nside = 32", path_str(&data)),
    );
    let cfg_path = write_config(dir.path(), "dir.toml", &text);
    let out_dir = dir.path().join("out");
    let base = ["--config", path_str(&cfg_path), "--out", path_str(&out_dir)];
    let trained = sslab(&[&base[..], &["train"]].concat());
    assert_eq!(trained.status.code(), Some(0), "{}", stderr(&trained));

    let cfg = ExperimentConfig::load(&cfg_path).unwrap();
    let id = run_id(&cfg.run_spec(RunKind::RandomInit, false)).unwrap();
    let probed = sslab(&[&base[..], &["probe", "--run", &id, "--fraction", "0.5"]].concat());
    assert_eq!(probed.status.code(), Some(0), "{}", stderr(&probed));
    assert!(stdout(&probed).contains("appended"));
    let again = sslab(&[&base[..], &["probe", "--run", &id, "--fraction", "0.5"]].concat());
    assert!(stdout(&again).contains("already in ledger"));

    let dest = dir.path().join("export/test_flat.bin");
    let exported =
        sslab(&[&base[..], &["export-features", "--run", &id, "--split", "test", "--pooled", "flat", "--dest", path_str(&dest)]].concat());
    assert_eq!(exported.status.code(), Some(0), "{}", stderr(&exported));
    let fm = FeatureMatrix::read(&dest).unwrap();
    // Width 0.25 on 32x32 input: 64 channels of 4x4 maps.
    assert_eq!(fm.dim(), 64 * 4 * 4);
    assert!(stdout(&exported).contains(&fm.checksum()));
}

#[test]
fn smoke_pipeline_under_two_minutes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/smoke.toml");
    let start = Instant::now();
    let out = sslab(&["--config", cfg, "--out", path_str(dir.path()), "pipeline"]);
    let took = start.elapsed();
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(took < Duration::from_secs(120), "smoke pipeline took {took:?}");
    let report = dir.path().join("report");
    for name in [ACCURACY, SCATTER, EV_CURVES, RANDOM_LABEL_GAPS] {
        assert!(report.join(format!("{name}.svg")).is_file(), "{name}.svg");
        assert!(report.join(format!("{name}.csv")).is_file(), "{name}.csv");
    }
    // A rerun trains nothing.
    let again = sslab(&["--config", cfg, "--out", path_str(dir.path()), "pipeline"]);
    assert_eq!(again.status.code(), Some(0));
    assert!(!stdout(&again).lines().any(|l| l.starts_with("run ") && !l.ends_with("(cache hit)")), "{}", stdout(&again));
}
