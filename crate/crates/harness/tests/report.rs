use sslab::ledger::{append_row, Evaluation, LedgerRow, SCHEMA_VERSION};
use sslab::report::{
    headline_rows, marker_areas, read_csv_table, write_report, ACCURACY, EV_CURVES, MAX_MARKER_AREA, RANDOM_LABEL_GAPS,
    SCATTER,
};
use sslab::Registry;
use sslab_core::data::Split;
use sslab_core::diagnostics::{default_n_grid, DiagnosticsReport, ExplainedVarianceCurve, RandomLabelResult};

fn row(run_id: &str, dataset: &str, kind: &str, evaluation: Evaluation, train_size: usize, test: f64) -> LedgerRow {
    LedgerRow {
        schema_version: SCHEMA_VERSION,
        run_id: run_id.into(),
        dataset: dataset.into(),
        kind: kind.into(),
        seed: 0,
        pooled_dim: (evaluation == Evaluation::Probe).then_some(256),
        feature_dim: (evaluation == Evaluation::Probe).then_some(64),
        label_fraction: 1.0,
        standardized: false,
        evaluation,
        train_rows: train_size,
        train_size,
        train_acc: 0.9,
        val_acc: Some(0.6),
        test_acc: Some(test),
        normalized_acc: None,
    }
}

fn baseline_and_probe(reg: &Registry, dataset: &str, size: usize, sup: f64, probe: f64) {
    append_row(&reg.ledger_path(), row(&format!("sup-{dataset}"), dataset, "supervised", Evaluation::EndToEnd, size, sup))
        .unwrap();
    append_row(&reg.ledger_path(), row(&format!("rot-{dataset}"), dataset, "rotation", Evaluation::Probe, size, probe))
        .unwrap();
}

fn write_diagnostics(reg: &Registry, run_id: &str, dataset: &str, ns: Vec<usize>) {
    let fractions = ns.iter().map(|&n| n as f64 / *ns.last().unwrap() as f64).collect();
    let report = DiagnosticsReport {
        run_id: run_id.into(),
        pretext: "rotation".into(),
        dataset: dataset.into(),
        random_labels: Some(RandomLabelResult { normal_train_acc: 0.8, shuffled_train_acc: 0.5 }),
        pca: vec![ExplainedVarianceCurve { dim: 64, rows: 200, split: Some(Split::Train), ns, fractions }],
        ..Default::default()
    };
    report.write_dir(&reg.diagnostics_dir(run_id)).unwrap();
}

#[test]
fn empty_ledger_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let err = write_report(&Registry::new(dir.path())).unwrap_err();
    assert_eq!(err.exit_code(), 3);
    assert!(err.to_string().contains("empty"), "{err}");
}

#[test]
fn all_artifacts_and_a_single_scatter_point() {
    let dir = tempfile::tempdir().unwrap();
    let reg = Registry::new(dir.path());
    baseline_and_probe(&reg, "shapes", 120, 0.8, 0.6);
    let grid = default_n_grid();
    write_diagnostics(&reg, "rot-shapes", "shapes", grid.iter().copied().filter(|&n| n < 64).chain([64]).collect());

    let artifacts = write_report(&reg).unwrap();
    for name in [ACCURACY, SCATTER, EV_CURVES, RANDOM_LABEL_GAPS] {
        for ext in ["csv", "svg"] {
            let p = artifacts.dir.join(format!("{name}.{ext}"));
            assert!(artifacts.files.contains(&p), "{} not written", p.display());
        }
        let svg = std::fs::read_to_string(artifacts.dir.join(format!("{name}.svg"))).unwrap();
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
    }

    let (header, rows) = read_csv_table(&artifacts.dir.join(format!("{SCATTER}.csv"))).unwrap();
    assert_eq!(header, ["dataset", "series", "x", "y", "train_size", "marker_area"]);
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0][2].parse::<f64>().unwrap(), 0.8);
    assert_eq!(rows[0][3].parse::<f64>().unwrap(), 0.6);

    // Every grid value up to 150 has a row, reached or not.
    let (_, ev) = read_csv_table(&artifacts.dir.join(format!("{EV_CURVES}.csv"))).unwrap();
    let ns: Vec<usize> = ev.iter().map(|r| r[0].parse().unwrap()).collect();
    for n in &grid {
        assert!(ns.contains(n), "grid n = {n} missing");
    }
    assert!(ns.contains(&150));
    let at_150 = ev.iter().find(|r| r[0] == "150").unwrap();
    assert_eq!(at_150[1], "");

    let (_, gaps) = read_csv_table(&artifacts.dir.join(format!("{RANDOM_LABEL_GAPS}.csv"))).unwrap();
    approx::assert_abs_diff_eq!(gaps[0][4].parse::<f64>().unwrap(), 0.3, epsilon = 1e-12);
    // Fewer than three datasets: no correlation table.
    assert!(!artifacts.dir.join("random_label_correlation.csv").exists());
}

#[test]
fn marker_area_tracks_training_set_size() {
    let dir = tempfile::tempdir().unwrap();
    let reg = Registry::new(dir.path());
    baseline_and_probe(&reg, "small", 100, 0.9, 0.5);
    baseline_and_probe(&reg, "large", 400, 0.7, 0.6);
    // A probe without a baseline gets no point.
    append_row(&reg.ledger_path(), row("rot-lonely", "lonely", "rotation", Evaluation::Probe, 50, 0.4)).unwrap();

    let artifacts = write_report(&reg).unwrap();
    let (_, rows) = read_csv_table(&artifacts.dir.join(format!("{SCATTER}.csv"))).unwrap();
    assert_eq!(rows.len(), 2);
    let area = |d: &str| rows.iter().find(|r| r[0] == d).unwrap()[5].parse::<f64>().unwrap();
    approx::assert_relative_eq!(area("large") / area("small"), 4.0, epsilon = 1e-12);
    approx::assert_relative_eq!(area("large"), MAX_MARKER_AREA);

    // The SVG radii follow area = pi r^2.
    let svg = std::fs::read_to_string(artifacts.dir.join(format!("{SCATTER}.svg"))).unwrap();
    let radii: Vec<f64> = svg
        .split("<circle")
        .skip(1)
        .filter_map(|c| c.split(" r=\"").nth(1).and_then(|r| r.split('"').next()).and_then(|r| r.parse().ok()))
        .collect();
    assert!(radii.len() >= 2);
    let (min, max) = radii.iter().fold((f64::MAX, 0.0f64), |(a, b), &r| (a.min(r), b.max(r)));
    approx::assert_relative_eq!(max / min, 2.0, epsilon = 1e-2);
}

#[test]
fn three_datasets_give_a_correlation_table() {
    let dir = tempfile::tempdir().unwrap();
    let reg = Registry::new(dir.path());
    for (i, d) in ["a", "b", "c"].iter().enumerate() {
        baseline_and_probe(&reg, d, 100, 0.8, 0.5);
        let run = format!("rot-{d}");
        let mut report = DiagnosticsReport { run_id: run.clone(), pretext: "rotation".into(), dataset: d.to_string(), ..Default::default() };
        report.random_labels =
            Some(RandomLabelResult { normal_train_acc: 0.6 + 0.1 * i as f64, shuffled_train_acc: 0.3 + 0.05 * i as f64 });
        report.write_dir(&reg.diagnostics_dir(&run)).unwrap();
    }
    let artifacts = write_report(&reg).unwrap();
    let table = std::fs::read_to_string(artifacts.dir.join("random_label_correlation.csv")).unwrap();
    assert!(table.contains("rotation"));
}

#[test]
fn headline_prefers_full_labels() {
    let mut low = row("r", "d", "rotation", Evaluation::Probe, 100, 0.9);
    low.label_fraction = 0.1;
    let high = row("r", "d", "rotation", Evaluation::Probe, 100, 0.5);
    let rows = vec![low, high.clone()];
    let heads = headline_rows(&rows);
    assert_eq!(heads, vec![&high]);
    assert_eq!(marker_areas(&[]), Vec::<f64>::new());
}
