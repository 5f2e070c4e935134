mod common;

use std::collections::BTreeSet;

use common::{tiny_config, ROTATION_ONLY};
use sslab::config::{DiagnosticKind, ProbeSpec, RunKind};
use sslab::ledger::{read_ledger, Appended, Evaluation};
use sslab::ops::{diagnose_run, half_class_run_id, labels_for, probe_run, train_run, DiagnoseSettings};
use sslab::registry::{feature_stem, CHECKPOINT_FILE, CURVE_FILE, ENCODER_FILE, MANIFEST_FILE, RECORD_FILE, SPEC_FILE};
use sslab::{HarnessError, Registry};
use sslab_core::data::Split;
use sslab_core::diagnostics::{default_n_grid, euclidean};
use sslab_core::evaluation::{train_linear_probe, FeatureMatrix, LabeledFeatures, ProbeConfig};
use sslab_core::models::PooledDim;
use sslab_core::pretexts::PretextKind;

const ROTATION: RunKind = RunKind::Pretext(PretextKind::Rotation);

fn which(ds: &[DiagnosticKind]) -> BTreeSet<DiagnosticKind> {
    ds.iter().copied().collect()
}

#[test]
fn training_is_cached_by_run_id() {
    let dir = tempfile::tempdir().unwrap();
    let reg = Registry::new(dir.path());
    let cfg = tiny_config(ROTATION_ONLY, "");
    let spec = cfg.run_spec(ROTATION, false);

    let first = train_run(&reg, &spec).unwrap();
    assert!(!first.cached);
    let run_dir = reg.run_dir(&first.record.run_id);
    for f in [RECORD_FILE, SPEC_FILE, MANIFEST_FILE, CHECKPOINT_FILE, ENCODER_FILE, CURVE_FILE] {
        assert!(run_dir.join(f).is_file(), "{f} missing");
    }
    let checkpoint = std::fs::read(run_dir.join(CHECKPOINT_FILE)).unwrap();

    let second = train_run(&reg, &spec).unwrap();
    assert!(second.cached);
    assert_eq!(second.record.run_id, first.record.run_id);
    assert_eq!(std::fs::read(run_dir.join(CHECKPOINT_FILE)).unwrap(), checkpoint);
    assert_eq!(reg.records().unwrap().len(), 1);
    // No staging leftovers.
    let leftovers: Vec<_> = std::fs::read_dir(reg.root().join("runs"))
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.file_name().to_string_lossy().starts_with('.'))
        .collect();
    assert!(leftovers.is_empty());
}

#[test]
fn probe_rows_per_fraction_and_replay() {
    let dir = tempfile::tempdir().unwrap();
    let reg = Registry::new(dir.path());
    let cfg = tiny_config(ROTATION_ONLY, "");
    let id = train_run(&reg, &cfg.run_spec(ROTATION, false)).unwrap().record.run_id;

    let full = probe_run(&reg, &id, PooledDim::D256, 1.0, &cfg.probe).unwrap();
    let tenth = probe_run(&reg, &id, PooledDim::D256, 0.1, &cfg.probe).unwrap();
    assert!(matches!(full, Appended::Written(_)));
    assert!(matches!(tenth, Appended::Written(_)));
    let again = probe_run(&reg, &id, PooledDim::D256, 0.1, &cfg.probe).unwrap();
    assert!(matches!(again, Appended::Existing(_)));

    let rows = read_ledger(&reg.ledger_path()).unwrap();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0].label_fraction, 1.0);
    assert_eq!(rows[1].label_fraction, 0.1);
    assert!(rows[1].train_rows < rows[0].train_rows);
    assert_eq!(rows[0].train_rows, rows[0].train_size);
    // Width 0.25 has 64 final channels; the 256 pooling is a global average.
    assert_eq!(rows[0].feature_dim, Some(64));
    assert_eq!(rows[0].pooled_dim, Some(256));

    // Replay from the cached feature files.
    let record = reg.load_record(&id).unwrap();
    let dataset = record.spec.dataset.build().unwrap();
    let read = |s: Split| FeatureMatrix::read(&reg.features_path(&id, s, Some(PooledDim::D256))).unwrap();
    let (tr, va, te) = (read(Split::Train), read(Split::Val), read(Split::Test));
    let (ltr, lva, lte) =
        (labels_for(&dataset, &tr).unwrap(), labels_for(&dataset, &va).unwrap(), labels_for(&dataset, &te).unwrap());
    for r in &rows {
        let config = ProbeConfig { optim: cfg.probe.optim(), label_fraction: r.label_fraction, standardize: r.standardized };
        let replay = train_linear_probe::<f32>(
            LabeledFeatures::new(&tr, &ltr).unwrap(),
            Some(LabeledFeatures::new(&va, &lva).unwrap()),
            Some(LabeledFeatures::new(&te, &lte).unwrap()),
            dataset.class_count(),
            &config,
            r.seed,
        )
        .unwrap()
        .result;
        assert_eq!(replay.train_rows, r.train_rows);
        assert_eq!(replay.train_acc, r.train_acc);
        assert_eq!(replay.val_acc, r.val_acc);
        assert_eq!(replay.test_acc, r.test_acc);
    }
    assert!(feature_stem(Split::Test, Some(PooledDim::D256)).contains("test"));
}

#[test]
fn supervised_run_writes_the_baseline_row() {
    let dir = tempfile::tempdir().unwrap();
    let reg = Registry::new(dir.path());
    let cfg = tiny_config("pretexts = [\"rotation\"]\nsupervised = true", "");
    let rot = train_run(&reg, &cfg.run_spec(ROTATION, false)).unwrap().record.run_id;
    let before = probe_run(&reg, &rot, PooledDim::D256, 1.0, &cfg.probe).unwrap();
    assert_eq!(before.row().normalized_acc, None);

    let sup = train_run(&reg, &cfg.run_spec(RunKind::Supervised, false)).unwrap();
    let e2e = sup.record.end_to_end.expect("supervised runs report their own accuracy");
    let rows = read_ledger(&reg.ledger_path()).unwrap();
    let base = rows.iter().find(|r| r.evaluation == Evaluation::EndToEnd).unwrap();
    assert_eq!(base.kind, "supervised");
    assert_eq!(base.pooled_dim, None);
    assert_eq!(base.test_acc, e2e.test_acc);

    let after = probe_run(&reg, &rot, PooledDim::D256, 0.5, &cfg.probe).unwrap();
    let (p, s) = (after.row().test_acc.unwrap(), base.test_acc.unwrap());
    match after.row().normalized_acc {
        Some(n) => approx::assert_relative_eq!(n, p / s, epsilon = 1e-12),
        None => assert_eq!(s, 0.0),
    }
}

#[test]
fn generalization_without_half_run_names_it() {
    let dir = tempfile::tempdir().unwrap();
    let reg = Registry::new(dir.path());
    let cfg = tiny_config(ROTATION_ONLY, "");
    let spec = cfg.run_spec(ROTATION, false);
    let id = train_run(&reg, &spec).unwrap().record.run_id;
    let settings = DiagnoseSettings::from_config(&cfg);
    let err = diagnose_run(&reg, &id, &which(&[DiagnosticKind::Generalization]), &settings).unwrap_err();
    assert!(matches!(err, HarnessError::Missing(_)));
    assert_eq!(err.exit_code(), 3);
    let half = half_class_run_id(&spec).unwrap();
    assert!(err.to_string().contains(&half), "{err}");

    let trained = train_run(&reg, &cfg.run_spec(ROTATION, true)).unwrap();
    assert_eq!(trained.record.run_id, half);
    assert_eq!(trained.record.class_count, 2);
    let report = diagnose_run(&reg, &id, &which(&[DiagnosticKind::Generalization]), &settings).unwrap();
    let g = report.generalization.unwrap();
    assert!((0.0..=1.0).contains(&g.pretext_acc_val_half));
    assert!((0.0..=1.0).contains(&g.pretext_acc_test_full));
    assert!(probe_run(&reg, &half, PooledDim::D256, 1.0, &cfg.probe).is_err());
}

#[test]
fn half_classes_only_for_accuracy_pretexts() {
    let dir = tempfile::tempdir().unwrap();
    let reg = Registry::new(dir.path());
    let cfg = tiny_config("random_init = true", "");
    let err = train_run(&reg, &cfg.run_spec(RunKind::RandomInit, true)).unwrap_err();
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn pca_rerun_is_byte_identical_and_knn_has_k_neighbours() {
    let dir = tempfile::tempdir().unwrap();
    let reg = Registry::new(dir.path());
    let cfg = tiny_config(ROTATION_ONLY, "");
    let id = train_run(&reg, &cfg.run_spec(ROTATION, false)).unwrap().record.run_id;
    let settings = DiagnoseSettings::from_config(&cfg);
    let wanted = which(&[DiagnosticKind::Pca, DiagnosticKind::Knn]);

    let report = diagnose_run(&reg, &id, &wanted, &settings).unwrap();
    let pca_path = reg.diagnostics_dir(&id).join("pca.csv");
    let first = std::fs::read(&pca_path).unwrap();
    diagnose_run(&reg, &id, &wanted, &settings).unwrap();
    assert_eq!(std::fs::read(&pca_path).unwrap(), first);

    // TRAIN and VAL curves, each starting at n = 1 and ending at fraction 1.
    assert_eq!(report.pca.len(), 2);
    let grid = default_n_grid();
    for c in &report.pca {
        assert_eq!(c.ns[0], 1);
        assert!(c.ns.iter().all(|n| grid.contains(n) || *n == c.rows - 1 || *n == c.dim));
        assert!(c.fractions.windows(2).all(|w| w[0] <= w[1] + 1e-12));
        approx::assert_abs_diff_eq!(*c.fractions.last().unwrap(), 1.0, epsilon = 1e-6);
    }

    let fm = FeatureMatrix::read(&reg.features_path(&id, Split::Test, Some(PooledDim::D256))).unwrap();
    assert_eq!(report.knn.len(), 3);
    for list in &report.knn {
        assert_eq!(list.neighbors.len(), 10);
        assert!(list.neighbors.iter().all(|n| n.image_id != list.query_id));
        let q = fm.image_ids().iter().position(|&i| i == list.query_id).unwrap();
        // Brute-force oracle over every other TEST row.
        let mut all: Vec<(f64, usize)> = fm
            .image_ids()
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != q)
            .map(|(i, &img)| (euclidean(fm.row(q), fm.row(i)), img))
            .collect();
        all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let expect: Vec<usize> = all.iter().take(10).map(|p| p.1).collect();
        assert_eq!(list.neighbors.iter().map(|n| n.image_id).collect::<Vec<_>>(), expect);
    }
    let knn_csv = std::fs::read_to_string(reg.diagnostics_dir(&id).join("knn.csv")).unwrap();
    assert_eq!(knn_csv.lines().count(), 1 + 3 * 10);
}

#[test]
fn random_labels_and_id_loss() {
    let dir = tempfile::tempdir().unwrap();
    let reg = Registry::new(dir.path());
    let cfg = tiny_config(r#"pretexts = ["instance_discrimination"]"#, "");
    let id = train_run(&reg, &cfg.run_spec(RunKind::Pretext(PretextKind::InstanceDiscrimination), false))
        .unwrap()
        .record
        .run_id;
    let report = diagnose_run(
        &reg,
        &id,
        &which(&[DiagnosticKind::RandomLabels, DiagnosticKind::IdLoss]),
        &DiagnoseSettings::from_config(&cfg),
    )
    .unwrap();
    let rl = report.random_labels.unwrap();
    assert!((0.0..=1.0).contains(&rl.normal_train_acc));
    assert!((0.0..=1.0).contains(&rl.shuffled_train_acc));
    let loss = report.id_loss.unwrap();
    assert!(loss.is_finite() && loss > 0.0);
    assert!(reg.diagnostics_dir(&id).join("random_labels.csv").is_file());
    assert!(reg.diagnostics_dir(&id).join("id_loss.csv").is_file());
}

#[test]
fn unknown_run_is_missing() {
    let dir = tempfile::tempdir().unwrap();
    let reg = Registry::new(dir.path());
    let err = probe_run(&reg, "0123456789abcdef", PooledDim::D256, 1.0, &ProbeSpec::default()).unwrap_err();
    assert_eq!(err.exit_code(), 3);
}
