//! TOML experiment configuration, resolved into fully specified run specs.

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sslab_core::data::{load_directory_dataset, make_synthetic_dataset, DatasetTable, LoadOptions, SyntheticKind};
use sslab_core::models::{BackboneConfig, PooledDim};
use sslab_core::pretexts::PretextKind;
use sslab_core::training::{AugmentPolicy, OptimConfig, PretextOptions};

use crate::error::{config, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    Synthetic {
        kind: SyntheticKind,
        n_per_class: usize,
        class_count: usize,
        #[serde(default = "default_side")]
        side: usize,
        #[serde(default)]
        seed: u64,
    },
    Directory {
        path: PathBuf,
        #[serde(default = "default_side")]
        side: usize,
        #[serde(default)]
        seed: u64,
    },
}

fn default_side() -> usize {
    64
}

impl DatasetSpec {
    pub fn side(&self) -> usize {
        match self {
            DatasetSpec::Synthetic { side, .. } | DatasetSpec::Directory { side, .. } => *side,
        }
    }

    /// Short human-readable name used in ledgers and reports.
    pub fn label(&self) -> String {
        match self {
            DatasetSpec::Synthetic { kind, class_count, n_per_class, .. } => format!("{kind}-{class_count}x{n_per_class}"),
            DatasetSpec::Directory { path, .. } => {
                path.file_name().map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned())
            }
        }
    }

    pub fn build(&self) -> Result<DatasetTable> {
        Ok(match self {
            DatasetSpec::Synthetic { kind, n_per_class, class_count, side, seed } => {
                make_synthetic_dataset(*kind, *n_per_class, *class_count, *side, *seed)?
            }
            DatasetSpec::Directory { path, side, seed } => {
                let opts = LoadOptions { side: *side, seed: *seed, ..Default::default() };
                load_directory_dataset(path, opts)?.0
            }
        })
    }
}

/// What a run trains: one pretext, the supervised baseline, or nothing at all.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RunKind {
    Pretext(PretextKind),
    Supervised,
    RandomInit,
}

impl RunKind {
    pub fn as_str(self) -> &'static str {
        match self {
            RunKind::Pretext(k) => k.as_str(),
            RunKind::Supervised => "supervised",
            RunKind::RandomInit => "random_init",
        }
    }
}

impl fmt::Display for RunKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RunKind {
    type Err = crate::error::HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "supervised" | "supervision" => Ok(RunKind::Supervised),
            "random_init" | "random" => Ok(RunKind::RandomInit),
            other => other.parse::<PretextKind>().map(RunKind::Pretext).map_err(|e| config(e.to_string())),
        }
    }
}

impl Serialize for RunKind {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for RunKind {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimPreset {
    /// 120 epochs, decays at 80 and 100, batch 128.
    Full,
    /// 24 epochs, decays at 16 and 20, batch 32.
    #[default]
    Desk,
}

/// A preset plus optional per-field overrides.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimSpec {
    #[serde(default)]
    pub preset: OptimPreset,
    pub base_lr: Option<f64>,
    pub momentum: Option<f64>,
    pub epochs: Option<usize>,
    pub decay_epochs: Option<Vec<usize>>,
    pub decay_factor: Option<f64>,
    pub batch_size: Option<usize>,
}

impl OptimSpec {
    fn resolve_from(&self, base: OptimConfig) -> OptimConfig {
        OptimConfig {
            base_lr: self.base_lr.unwrap_or(base.base_lr),
            momentum: self.momentum.unwrap_or(base.momentum),
            epochs: self.epochs.unwrap_or(base.epochs),
            decay_epochs: self.decay_epochs.clone().unwrap_or(base.decay_epochs),
            decay_factor: self.decay_factor.unwrap_or(base.decay_factor),
            batch_size: self.batch_size.unwrap_or(base.batch_size),
            weight_decay: 0.0,
        }
    }

    pub fn resolve(&self) -> OptimConfig {
        self.resolve_from(match self.preset {
            OptimPreset::Full => OptimConfig::default(),
            OptimPreset::Desk => OptimConfig::desk(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    #[serde(default = "one")]
    pub width_multiplier: f64,
    #[serde(default = "four")]
    pub blocks_per_stage: usize,
}

fn one() -> f64 {
    1.0
}

fn four() -> usize {
    4
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self { width_multiplier: 1.0, blocks_per_stage: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentSpec {
    #[serde(default = "yes")]
    pub horizontal_flip: bool,
    #[serde(default = "yes")]
    pub random_crop: bool,
    #[serde(default = "eight")]
    pub crop_padding: usize,
}

fn yes() -> bool {
    true
}

fn eight() -> usize {
    8
}

impl Default for AugmentSpec {
    fn default() -> Self {
        Self { horizontal_flip: true, random_crop: true, crop_padding: 8 }
    }
}

/// Overrides of the pretext hyperparameters.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PretextSpec {
    pub jigsaw_permutations: Option<usize>,
    pub jigsaw_candidate_pool: Option<usize>,
    pub id_temperature: Option<f64>,
    pub id_bank_momentum: Option<f64>,
}

impl PretextSpec {
    pub fn resolve(&self) -> PretextOptions {
        let d = PretextOptions::default();
        PretextOptions {
            jigsaw_permutations: self.jigsaw_permutations.unwrap_or(d.jigsaw_permutations),
            jigsaw_candidate_pool: self.jigsaw_candidate_pool.unwrap_or(d.jigsaw_candidate_pool),
            id_temperature: self.id_temperature.unwrap_or(d.id_temperature),
            id_bank_momentum: self.id_bank_momentum.unwrap_or(d.id_bank_momentum),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunsSpec {
    #[serde(default)]
    pub pretexts: Vec<PretextKind>,
    #[serde(default)]
    pub supervised: bool,
    #[serde(default)]
    pub random_init: bool,
    #[serde(default = "yes")]
    pub earlier_stop: bool,
}

impl Default for RunsSpec {
    fn default() -> Self {
        Self { pretexts: PretextKind::ALL.to_vec(), supervised: true, random_init: false, earlier_stop: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeSpec {
    #[serde(default = "default_pooled")]
    pub pooled_dims: Vec<PooledDim>,
    #[serde(default = "default_fractions")]
    pub label_fractions: Vec<f64>,
    #[serde(default)]
    pub standardize: bool,
    pub epochs: Option<usize>,
    pub decay_epochs: Option<Vec<usize>>,
    pub batch_size: Option<usize>,
    pub base_lr: Option<f64>,
}

fn default_pooled() -> Vec<PooledDim> {
    vec![PooledDim::D256]
}

fn default_fractions() -> Vec<f64> {
    vec![1.0]
}

impl Default for ProbeSpec {
    fn default() -> Self {
        Self {
            pooled_dims: default_pooled(),
            label_fractions: default_fractions(),
            standardize: false,
            epochs: None,
            decay_epochs: None,
            batch_size: None,
            base_lr: None,
        }
    }
}

impl ProbeSpec {
    pub fn optim(&self) -> OptimConfig {
        OptimSpec {
            epochs: self.epochs,
            decay_epochs: self.decay_epochs.clone(),
            batch_size: self.batch_size,
            base_lr: self.base_lr,
            ..Default::default()
        }
        .resolve_from(OptimConfig::probe())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiagnosticKind {
    Generalization,
    RandomLabels,
    Pca,
    Knn,
    IdLoss,
}

impl DiagnosticKind {
    pub const ALL: [DiagnosticKind; 5] = [
        DiagnosticKind::Generalization,
        DiagnosticKind::RandomLabels,
        DiagnosticKind::Pca,
        DiagnosticKind::Knn,
        DiagnosticKind::IdLoss,
    ];
}

impl FromStr for DiagnosticKind {
    type Err = crate::error::HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "generalization" => Ok(DiagnosticKind::Generalization),
            "random_labels" => Ok(DiagnosticKind::RandomLabels),
            "pca" => Ok(DiagnosticKind::Pca),
            "knn" => Ok(DiagnosticKind::Knn),
            "id_loss" => Ok(DiagnosticKind::IdLoss),
            other => Err(config(format!("unknown diagnostic {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnosticsSpec {
    #[serde(default)]
    pub which: BTreeSet<DiagnosticKind>,
    #[serde(default = "three")]
    pub knn_queries: usize,
    #[serde(default = "ten")]
    pub knn_k: usize,
    /// Use flattened pre-pool maps instead of pooled features for k-NN.
    #[serde(default)]
    pub knn_unpooled: bool,
}

fn three() -> usize {
    3
}

fn ten() -> usize {
    10
}

impl Default for DiagnosticsSpec {
    fn default() -> Self {
        Self { which: BTreeSet::new(), knn_queries: 3, knn_k: 10, knn_unpooled: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub model: ModelSpec,
    #[serde(default)]
    pub optim: OptimSpec,
    #[serde(default)]
    pub augment: AugmentSpec,
    #[serde(default)]
    pub pretext: PretextSpec,
    #[serde(default)]
    pub runs: RunsSpec,
    #[serde(default)]
    pub probe: ProbeSpec,
    #[serde(default)]
    pub diagnostics: DiagnosticsSpec,
    /// Output root; `--out` and `SSLAB_OUT` take precedence.
    pub out: Option<PathBuf>,
}

/// Everything that determines a trained encoder. Its canonical JSON hashes to the run id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    pub dataset: DatasetSpec,
    pub kind: RunKind,
    pub backbone: BackboneConfig,
    pub optim: OptimConfig,
    pub augment: AugmentPolicy,
    pub pretext_options: PretextOptions,
    pub earlier_stop: bool,
    /// Train on a seeded half of the classes (generalization experiment).
    pub half_classes: bool,
    pub seed: u64,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            crate::error::HarnessError::Config(m) => config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn backbone(&self) -> BackboneConfig {
        BackboneConfig {
            blocks_per_stage: self.model.blocks_per_stage,
            input_side: self.dataset.side(),
            width_multiplier: self.model.width_multiplier,
            ..Default::default()
        }
    }

    pub fn augment_policy(&self) -> AugmentPolicy {
        AugmentPolicy {
            resize_to: self.dataset.side(),
            random_crop: self.augment.random_crop,
            crop_padding: self.augment.crop_padding,
            horizontal_flip: self.augment.horizontal_flip,
        }
    }

    /// Check every module precondition before anything runs.
    pub fn validate(&self) -> Result<()> {
        fn field(name: &'static str) -> impl Fn(sslab_core::Error) -> crate::error::HarnessError {
            move |e| config(format!("{name}: {e}"))
        }
        if self.name.trim().is_empty() {
            return Err(config("name: must not be empty"));
        }
        match &self.dataset {
            DatasetSpec::Synthetic { kind, n_per_class, class_count, side, .. } => {
                if *side < 32 {
                    return Err(config(format!("dataset.side: synthetic images need side >= 32, got {side}")));
                }
                if *class_count < 2 || *class_count > kind.max_classes() {
                    return Err(config(format!(
                        "dataset.class_count: {kind} supports 2..={} classes, got {class_count}",
                        kind.max_classes()
                    )));
                }
                if *n_per_class < 3 {
                    return Err(config(format!("dataset.n_per_class: need at least 3 per class, got {n_per_class}")));
                }
            }
            DatasetSpec::Directory { path, .. } => {
                if !path.is_dir() {
                    return Err(config(format!("dataset.path: {} is not a directory", path.display())));
                }
            }
        }
        self.backbone().validate().map_err(field("model"))?;
        self.optim.resolve().validate().map_err(field("optim"))?;
        self.probe.optim().validate().map_err(field("probe"))?;
        let mut seen = BTreeSet::new();
        for k in &self.runs.pretexts {
            if !seen.insert(*k) {
                return Err(config(format!("runs.pretexts: {k} listed twice")));
            }
            if *k == PretextKind::Autoencoder && self.dataset.side() != 64 {
                return Err(config("runs.pretexts: the autoencoder decoder needs dataset.side = 64"));
            }
            if *k == PretextKind::Jigsaw && self.dataset.side() < 33 {
                return Err(config("runs.pretexts: jigsaw needs dataset.side >= 33"));
            }
        }
        if self.runs.pretexts.is_empty() && !self.runs.supervised && !self.runs.random_init {
            return Err(config("runs: nothing to train"));
        }
        if self.probe.label_fractions.is_empty() || self.probe.pooled_dims.is_empty() {
            return Err(config("probe: need at least one label fraction and one pooled dim"));
        }
        if let Some(f) = self.probe.label_fractions.iter().find(|f| !(**f > 0.0 && **f <= 1.0)) {
            return Err(config(format!("probe.label_fractions: {f} not in (0, 1]")));
        }
        let side = self.backbone().out_side();
        if let Some(p) = self.probe.pooled_dims.iter().find(|p| p.grid() > side) {
            return Err(config(format!("probe.pooled_dims: {p} needs {g}x{g} maps, encoder gives {side}x{side}", g = p.grid())));
        }
        let opts = self.pretext.resolve();
        if opts.jigsaw_permutations < 2 || opts.jigsaw_candidate_pool < opts.jigsaw_permutations {
            return Err(config("pretext: need 2 <= jigsaw_permutations <= jigsaw_candidate_pool"));
        }
        if !(opts.id_temperature > 0.0) || !(0.0..1.0).contains(&opts.id_bank_momentum) {
            return Err(config("pretext: id_temperature must be positive and id_bank_momentum in [0, 1)"));
        }
        if self.diagnostics.knn_k == 0 {
            return Err(config("diagnostics.knn_k: must be positive"));
        }
        Ok(())
    }

    pub fn run_kinds(&self) -> Vec<RunKind> {
        let mut kinds: Vec<RunKind> = self.runs.pretexts.iter().map(|&k| RunKind::Pretext(k)).collect();
        if self.runs.supervised {
            kinds.push(RunKind::Supervised);
        }
        if self.runs.random_init {
            kinds.push(RunKind::RandomInit);
        }
        kinds
    }

    pub fn run_spec(&self, kind: RunKind, half_classes: bool) -> RunSpec {
        RunSpec {
            dataset: self.dataset.clone(),
            kind,
            backbone: self.backbone(),
            optim: self.optim.resolve(),
            augment: self.augment_policy(),
            pretext_options: self.pretext.resolve(),
            earlier_stop: self.runs.earlier_stop,
            half_classes,
            seed: self.seed,
        }
    }
}
