//! The pipeline stages behind the CLI subcommands.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;
use std::time::Instant;

use log::info;
use serde::{Deserialize, Serialize};
use sslab_core::data::{export_directory_dataset, halve_classes, DatasetTable, Split};
use sslab_core::diagnostics::{
    default_n_grid, generalization_of, id_model_loss, nearest_neighbors, pca_explained_variance, random_label_probe,
    DiagnosticsReport,
};
use sslab_core::evaluation::{
    extract_feature_matrix, train_linear_probe, FeatureMatrix, FeatureSource, LabeledFeatures, ProbeConfig,
};
use sslab_core::models::{load_state_dict, read_tensors, state_dict, write_tensors, Backbone, CheckpointManifest, PooledDim};
use sslab_core::pretexts::PretextKind;
use sslab_core::seed::stage_rng;
use sslab_core::training::{
    train_pretext, train_supervised, EarlierStopRule, PretextModel, PretextTrainConfig, SupervisedTrainConfig,
    TrainingCurve,
};

use crate::config::{DiagnosticKind, DiagnosticsSpec, ExperimentConfig, ProbeSpec, RunKind, RunSpec};
use crate::error::{config, io_err, missing, Result};
use crate::ledger::{append_row, Appended, Evaluation, LedgerRow, SCHEMA_VERSION};
use crate::registry::{
    run_id, Registry, RunRecord, RunStatus, CHECKPOINT_FILE, CURVE_FILE, ENCODER_FILE, MANIFEST_FILE,
};
use crate::report::{write_report, ReportArtifacts};

/// Eval-mode accuracies of the supervised network's own classifier.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EndToEnd {
    pub train_acc: f64,
    pub val_acc: f64,
    pub test_acc: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub record: RunRecord,
    /// The run was already complete and nothing was trained.
    pub cached: bool,
}

fn dataset_for(spec: &RunSpec) -> Result<DatasetTable> {
    let full = spec.dataset.build()?;
    if spec.half_classes {
        Ok(halve_classes(&full, spec.seed)?.reduced)
    } else {
        Ok(full)
    }
}

/// Train one run unless its id is already complete.
pub fn train_run(reg: &Registry, spec: &RunSpec) -> Result<TrainOutcome> {
    let id = run_id(spec)?;
    if spec.half_classes && !matches!(spec.kind, RunKind::Pretext(k) if k.has_accuracy()) {
        return Err(config(format!("half-class training only applies to rotation and jigsaw, not {}", spec.kind)));
    }
    if reg.is_complete(&id) {
        let record = reg.load_record(&id)?;
        info!("cache hit: run {id} ({} on {}) is already complete; not retraining", spec.kind, record.dataset);
        ensure_end_to_end_row(reg, &record)?;
        return Ok(TrainOutcome { record, cached: true });
    }
    let data = dataset_for(spec)?;
    info!("training run {id}: {} on {} ({} TRAIN images)", spec.kind, data.name(), data.split_len(Split::Train));
    let start = Instant::now();
    let staging = reg.staging_dir(&id)?;
    let (curve, full, encoder, end_to_end) = match spec.kind {
        RunKind::Pretext(kind) => {
            let cfg = PretextTrainConfig {
                kind,
                backbone: spec.backbone,
                optim: spec.optim.clone(),
                augment: spec.augment,
                options: spec.pretext_options,
                earlier_stop: if spec.earlier_stop { EarlierStopRule::default() } else { EarlierStopRule::disabled() },
            };
            let mut run = train_pretext::<f32>(&data, &cfg, spec.seed)?;
            let full = run.model.state_tensors();
            let encoder = state_dict(run.model.encoder_mut(), "");
            (run.curve, full, encoder, None)
        }
        RunKind::Supervised => {
            let cfg = SupervisedTrainConfig {
                backbone: spec.backbone,
                optim: spec.optim.clone(),
                augment: spec.augment,
                label_fraction: 1.0,
            };
            let mut run = train_supervised::<f32>(&data, &cfg, spec.seed)?;
            let test = data.split_images(Split::Test);
            let e2e = EndToEnd {
                train_acc: run.model.accuracy(&data.split_images(Split::Train), &spec.augment)?,
                val_acc: run.model.accuracy(&data.split_images(Split::Val), &spec.augment)?,
                test_acc: if test.is_empty() { None } else { Some(run.model.accuracy(&test, &spec.augment)?) },
            };
            let full = state_dict(&mut run.model, "");
            let encoder = state_dict(&mut run.model.encoder, "");
            (run.curve, full, encoder, Some(e2e))
        }
        RunKind::RandomInit => {
            let mut enc = Backbone::<f32>::new(spec.backbone, &mut stage_rng(spec.seed, "init/encoder"))?;
            let tensors = state_dict(&mut enc, "");
            (TrainingCurve::default(), tensors.clone(), tensors, None)
        }
    };
    write_tensors(&staging.join(CHECKPOINT_FILE), &full)?;
    write_tensors(&staging.join(ENCODER_FILE), &encoder)?;
    curve.write_csv(&staging.join(CURVE_FILE))?;
    let mut extra = BTreeMap::new();
    extra.insert("run_id".to_string(), serde_json::Value::from(id.clone()));
    extra.insert("dataset".to_string(), serde_json::Value::from(spec.dataset.label()));
    extra.insert("half_classes".to_string(), serde_json::Value::from(spec.half_classes));
    CheckpointManifest {
        architecture: spec.backbone,
        pretext: spec.kind.to_string(),
        epoch: curve.epochs_run(),
        seed: spec.seed,
        extra,
    }
    .save(&staging.join(MANIFEST_FILE))?;
    let record = RunRecord {
        run_id: id.clone(),
        status: RunStatus::Completed,
        dataset: spec.dataset.label(),
        kind: spec.kind,
        half_classes: spec.half_classes,
        class_count: data.class_count(),
        train_size: data.split_len(Split::Train),
        epochs_run: curve.epochs_run(),
        halted_early: curve.halted_early,
        final_train_metric: curve.last().map(|p| p.train_metric),
        final_val_metric: curve.last().map(|p| p.val_metric),
        end_to_end,
        checkpoint: CHECKPOINT_FILE.to_string(),
        encoder: ENCODER_FILE.to_string(),
        manifest: MANIFEST_FILE.to_string(),
        curve: CURVE_FILE.to_string(),
        wallclock_s: start.elapsed().as_secs_f64(),
        spec: spec.clone(),
    };
    let fresh = reg.commit(&staging, &record)?;
    let record = if fresh { record } else { reg.load_record(&id)? };
    info!("run {id} complete in {:.1}s", record.wallclock_s);
    ensure_end_to_end_row(reg, &record)?;
    Ok(TrainOutcome { record, cached: !fresh })
}

/// Supervised runs report their own classifier's accuracy to the ledger.
fn ensure_end_to_end_row(reg: &Registry, record: &RunRecord) -> Result<()> {
    let Some(e2e) = record.end_to_end else { return Ok(()) };
    append_row(
        &reg.ledger_path(),
        LedgerRow {
            schema_version: SCHEMA_VERSION,
            run_id: record.run_id.clone(),
            dataset: record.dataset.clone(),
            kind: record.kind.to_string(),
            seed: record.spec.seed,
            pooled_dim: None,
            feature_dim: None,
            label_fraction: 1.0,
            standardized: false,
            evaluation: Evaluation::EndToEnd,
            train_rows: record.train_size,
            train_size: record.train_size,
            train_acc: e2e.train_acc,
            val_acc: Some(e2e.val_acc),
            test_acc: e2e.test_acc,
            normalized_acc: None,
        },
    )?;
    Ok(())
}

fn require_file(path: &Path, what: &str, id: &str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(missing(format!("run {id} has no {what} at {}", path.display())))
    }
}

/// The frozen encoder of a completed run.
pub fn load_encoder(reg: &Registry, record: &RunRecord) -> Result<Backbone<f32>> {
    let path = reg.run_dir(&record.run_id).join(&record.encoder);
    require_file(&path, "encoder checkpoint", &record.run_id)?;
    let mut enc = Backbone::<f32>::new(record.spec.backbone, &mut stage_rng(record.spec.seed, "init/encoder"))?;
    load_state_dict(&mut enc, "", &read_tensors(&path)?)?;
    Ok(enc)
}

/// The full pretext model (heads, permutations, memory bank) of a completed run.
pub fn load_pretext_model(reg: &Registry, record: &RunRecord) -> Result<PretextModel<f32>> {
    let RunKind::Pretext(kind) = record.kind else {
        return Err(config(format!("run {} is {}, not a pretext run", record.run_id, record.kind)));
    };
    let path = reg.run_dir(&record.run_id).join(&record.checkpoint);
    require_file(&path, "checkpoint", &record.run_id)?;
    let spec = &record.spec;
    let mut model = PretextModel::<f32>::new(kind, spec.pretext_options, spec.backbone, record.train_size, spec.seed)?;
    model.load_state_tensors(&read_tensors(&path)?)?;
    Ok(model)
}

/// Cached feature matrices of a run, extracting whichever are absent.
pub fn ensure_features(
    reg: &Registry,
    record: &RunRecord,
    dataset: &DatasetTable,
    requests: &[(Split, Option<PooledDim>)],
) -> Result<Vec<FeatureMatrix>> {
    let mut encoder = None;
    let mut out = Vec::with_capacity(requests.len());
    for &(split, pooled) in requests {
        let path = reg.features_path(&record.run_id, split, pooled);
        if path.is_file() {
            out.push(FeatureMatrix::read(&path)?);
            continue;
        }
        if encoder.is_none() {
            encoder = Some(load_encoder(reg, record)?);
        }
        let source = FeatureSource {
            pretext: record.kind.to_string(),
            dataset: record.dataset.clone(),
            split,
            checkpoint_id: record.run_id.clone(),
        };
        let fm = extract_feature_matrix(encoder.as_mut().expect("loaded above"), dataset, split, pooled, source)?;
        let dir = path.parent().expect("features path has a parent");
        let tmp = dir.join(format!(".tmp-{}", std::process::id()));
        fs::create_dir_all(&tmp).map_err(io_err(&tmp))?;
        let tmp_bin = tmp.join(path.file_name().expect("file name"));
        fm.write(&tmp_bin)?;
        let (tmp_json, json) = (FeatureMatrix::sidecar_path(&tmp_bin), FeatureMatrix::sidecar_path(&path));
        fs::rename(&tmp_json, &json).map_err(io_err(&json))?;
        fs::rename(&tmp_bin, &path).map_err(io_err(&path))?;
        let _ = fs::remove_dir(&tmp);
        out.push(fm);
    }
    Ok(out)
}

/// Labels of the feature rows, looked up by image id.
pub fn labels_for(dataset: &DatasetTable, features: &FeatureMatrix) -> Result<Vec<usize>> {
    let by_id: BTreeMap<usize, usize> = dataset.images().iter().map(|li| (li.image_id, li.class_id)).collect();
    features
        .image_ids()
        .iter()
        .map(|id| by_id.get(id).copied().ok_or_else(|| missing(format!("image {id} is not in dataset {}", dataset.name()))))
        .collect()
}

fn probe_config(probe: &ProbeSpec, fraction: f64) -> ProbeConfig {
    ProbeConfig { optim: probe.optim(), label_fraction: fraction, standardize: probe.standardize }
}

/// Train a linear probe on a completed run's frozen features and append the ledger row.
pub fn probe_run(reg: &Registry, id: &str, pooled: PooledDim, fraction: f64, probe: &ProbeSpec) -> Result<Appended> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(config(format!("label fraction {fraction} not in (0, 1]")));
    }
    probe.optim().validate().map_err(|e| config(format!("probe: {e}")))?;
    let record = reg.load_record(id)?;
    if record.half_classes {
        return Err(config(format!("run {id} saw half of the classes; it only serves the generalization diagnostic")));
    }
    let dataset = dataset_for(&record.spec)?;
    let splits: Vec<Split> = Split::ALL.into_iter().filter(|&s| dataset.split_len(s) > 0).collect();
    if !splits.contains(&Split::Train) {
        return Err(config(format!("dataset {} has no TRAIN images", record.dataset)));
    }
    let requests: Vec<_> = splits.iter().map(|&s| (s, Some(pooled))).collect();
    let fms = ensure_features(reg, &record, &dataset, &requests)?;
    let mut by_split = BTreeMap::new();
    for (s, fm) in splits.iter().zip(&fms) {
        by_split.insert(*s, (fm, labels_for(&dataset, fm)?));
    }
    let labeled = |s: Split| -> Result<Option<LabeledFeatures<'_>>> {
        by_split.get(&s).map(|(fm, l)| LabeledFeatures::new(fm, l)).transpose().map_err(Into::into)
    };
    let train = labeled(Split::Train)?.expect("TRAIN present");
    let run = train_linear_probe::<f32>(
        train,
        labeled(Split::Val)?,
        labeled(Split::Test)?,
        dataset.class_count(),
        &probe_config(probe, fraction),
        record.spec.seed,
    )?;
    let r = run.result;
    let row = LedgerRow {
        schema_version: SCHEMA_VERSION,
        run_id: id.to_string(),
        dataset: record.dataset.clone(),
        kind: record.kind.to_string(),
        seed: record.spec.seed,
        pooled_dim: r.pooled_dim,
        feature_dim: Some(train.features.dim()),
        label_fraction: r.label_fraction,
        standardized: r.standardized,
        evaluation: Evaluation::Probe,
        train_rows: r.train_rows,
        train_size: dataset.split_len(Split::Train),
        train_acc: r.train_acc,
        val_acc: r.val_acc,
        test_acc: r.test_acc,
        normalized_acc: None,
    };
    let appended = append_row(&reg.ledger_path(), row)?;
    if let Appended::Existing(_) = appended {
        info!("ledger already holds this probe of run {id}; row not duplicated");
    }
    Ok(appended)
}

/// Settings shared by every diagnostic of one invocation.
#[derive(Debug, Clone, Default)]
pub struct DiagnoseSettings {
    pub pooled_dims: Vec<PooledDim>,
    pub probe: ProbeSpec,
    pub diagnostics: DiagnosticsSpec,
}

impl DiagnoseSettings {
    pub fn from_config(cfg: &ExperimentConfig) -> Self {
        Self { pooled_dims: cfg.probe.pooled_dims.clone(), probe: cfg.probe.clone(), diagnostics: cfg.diagnostics.clone() }
    }

    fn primary_pool(&self) -> PooledDim {
        self.pooled_dims.first().copied().unwrap_or(PooledDim::D256)
    }
}

/// The id the half-class counterpart of `spec` would get.
pub fn half_class_run_id(spec: &RunSpec) -> Result<String> {
    run_id(&RunSpec { half_classes: true, ..spec.clone() })
}

/// Evenly spaced query ids from the TEST features.
fn knn_queries(ids: &[usize], count: usize) -> Vec<usize> {
    let count = count.min(ids.len());
    (0..count).map(|i| ids[i * ids.len() / count]).collect()
}

/// Run the requested diagnostics for a completed run and write the report
/// under `diagnostics/<id>/`, replacing any earlier report there.
pub fn diagnose_run(
    reg: &Registry,
    id: &str,
    which: &BTreeSet<DiagnosticKind>,
    settings: &DiagnoseSettings,
) -> Result<DiagnosticsReport> {
    let record = reg.load_record(id)?;
    let spec = &record.spec;
    let dataset = dataset_for(spec)?;
    let mut report = DiagnosticsReport {
        run_id: id.to_string(),
        pretext: record.kind.to_string(),
        dataset: record.dataset.clone(),
        ..Default::default()
    };
    for &what in which {
        match what {
            DiagnosticKind::Generalization => {
                if !matches!(record.kind, RunKind::Pretext(k) if k.has_accuracy()) {
                    return Err(config(format!("generalization needs a rotation or jigsaw run, {id} is {}", record.kind)));
                }
                let half_id = half_class_run_id(spec)?;
                if !reg.is_complete(&half_id) {
                    return Err(missing(format!(
                        "generalization for run {id} needs the half-class run {half_id}; \
                         train it with `sslab train --half-classes` on the same config"
                    )));
                }
                let half = reg.load_record(&half_id)?;
                let halved = halve_classes(&spec.dataset.build()?, spec.seed)?;
                let mut model = load_pretext_model(reg, &half)?;
                report.generalization =
                    Some(generalization_of(&mut model, &halved.reduced, &halved.full_test, &spec.augment, spec.seed)?);
            }
            DiagnosticKind::RandomLabels => {
                let fm = ensure_features(reg, &record, &dataset, &[(Split::Train, Some(settings.primary_pool()))])?
                    .remove(0);
                let labels = labels_for(&dataset, &fm)?;
                report.random_labels = Some(random_label_probe::<f32>(
                    &fm,
                    &labels,
                    dataset.class_count(),
                    &probe_config(&settings.probe, 1.0),
                    spec.seed,
                )?);
            }
            DiagnosticKind::Pca => {
                let grid = default_n_grid();
                for &pool in &settings.pooled_dims {
                    for split in [Split::Train, Split::Val] {
                        if dataset.split_len(split) < 2 {
                            continue;
                        }
                        let fm = ensure_features(reg, &record, &dataset, &[(split, Some(pool))])?.remove(0);
                        report.pca.push(pca_explained_variance(&fm, &grid)?);
                    }
                }
            }
            DiagnosticKind::Knn => {
                let d = &settings.diagnostics;
                let pooled = if d.knn_unpooled { None } else { Some(settings.primary_pool()) };
                let fm = ensure_features(reg, &record, &dataset, &[(Split::Test, pooled)])?.remove(0);
                for q in knn_queries(fm.image_ids(), d.knn_queries) {
                    report.knn.push(nearest_neighbors(&fm, q, d.knn_k)?);
                }
            }
            DiagnosticKind::IdLoss => {
                if record.kind != RunKind::Pretext(PretextKind::InstanceDiscrimination) {
                    return Err(config(format!("id_loss needs an instance discrimination run, {id} is {}", record.kind)));
                }
                let mut model = load_pretext_model(reg, &record)?;
                report.id_loss = Some(id_model_loss(&mut model, &dataset.split_images(Split::Train), &spec.augment)?);
            }
        }
    }
    let dir = reg.diagnostics_dir(id);
    if dir.exists() {
        fs::remove_dir_all(&dir).map_err(io_err(&dir))?;
    }
    report.write_dir(&dir)?;
    Ok(report)
}

/// Diagnostics that make sense for a run of this kind.
pub fn applicable(kind: RunKind, which: &BTreeSet<DiagnosticKind>) -> BTreeSet<DiagnosticKind> {
    which
        .iter()
        .copied()
        .filter(|d| match d {
            DiagnosticKind::Generalization => matches!(kind, RunKind::Pretext(k) if k.has_accuracy()),
            DiagnosticKind::IdLoss => kind == RunKind::Pretext(PretextKind::InstanceDiscrimination),
            _ => kind != RunKind::Supervised,
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct PipelineOutcome {
    pub runs: Vec<TrainOutcome>,
    pub ledger_rows: Vec<LedgerRow>,
    pub reports: Vec<DiagnosticsReport>,
    /// `(run id, feature file stem, checksum)` for every cached feature matrix.
    pub feature_checksums: Vec<(String, String, String)>,
    pub artifacts: ReportArtifacts,
}

/// Train, probe, diagnose and report everything the config asks for.
pub fn run_pipeline(reg: &Registry, cfg: &ExperimentConfig) -> Result<PipelineOutcome> {
    cfg.validate()?;
    let mut kinds = cfg.run_kinds();
    // The baseline row must precede the probe rows it normalizes.
    kinds.sort_by_key(|k| *k != RunKind::Supervised);
    let mut runs = Vec::new();
    for &kind in &kinds {
        runs.push(train_run(reg, &cfg.run_spec(kind, false))?);
    }
    let which = &cfg.diagnostics.which;
    if which.contains(&DiagnosticKind::Generalization) {
        for &kind in &kinds {
            if matches!(kind, RunKind::Pretext(k) if k.has_accuracy()) {
                train_run(reg, &cfg.run_spec(kind, true))?;
            }
        }
    }
    let mut ledger_rows = Vec::new();
    for run in runs.iter().filter(|r| r.record.kind != RunKind::Supervised) {
        for &pool in &cfg.probe.pooled_dims {
            for &fraction in &cfg.probe.label_fractions {
                ledger_rows.push(probe_run(reg, &run.record.run_id, pool, fraction, &cfg.probe)?.row().clone());
            }
        }
    }
    let settings = DiagnoseSettings::from_config(cfg);
    let mut reports = Vec::new();
    for run in &runs {
        let wanted = applicable(run.record.kind, which);
        if !wanted.is_empty() {
            reports.push(diagnose_run(reg, &run.record.run_id, &wanted, &settings)?);
        }
    }
    let mut feature_checksums = Vec::new();
    for run in &runs {
        let dir = reg.root().join("features").join(&run.record.run_id);
        if !dir.is_dir() {
            continue;
        }
        let mut names: Vec<_> = fs::read_dir(&dir)
            .map_err(io_err(&dir))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "bin"))
            .collect();
        names.sort();
        for path in names {
            let fm = FeatureMatrix::read(&path)?;
            let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            feature_checksums.push((run.record.run_id.clone(), stem, fm.checksum()));
        }
    }
    let artifacts = write_report(reg)?;
    Ok(PipelineOutcome { runs, ledger_rows, reports, feature_checksums, artifacts })
}

/// Write a dataset in the directory format.
pub fn make_dataset(dataset: &DatasetTable, dest: &Path) -> Result<()> {
    export_directory_dataset(dataset, dest)?;
    Ok(())
}

/// Copy (extracting if needed) one feature matrix of a run to `dest`.
pub fn export_features(reg: &Registry, id: &str, split: Split, pooled: Option<PooledDim>, dest: &Path) -> Result<FeatureMatrix> {
    let record = reg.load_record(id)?;
    let dataset = dataset_for(&record.spec)?;
    let fm = ensure_features(reg, &record, &dataset, &[(split, pooled)])?.remove(0);
    if let Some(dir) = dest.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    fm.write(dest)?;
    Ok(fm)
}
