use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{halve_classes, DatasetTable, LabeledImage, Split};
use crate::error::{invalid, Result};
use crate::evaluation::{train_linear_probe, FeatureMatrix, LabeledFeatures, ProbeConfig};
use crate::pretexts::{nonparam_softmax_loss, MemoryBank, PretextKind};
use crate::scalar::Scalar;
use crate::seed::{stage_rng, stage_seed};
use crate::training::{train_pretext, AugmentPolicy, PretextModel, PretextRun, PretextTrainConfig};

/// Probe training accuracy with true labels and with a seeded shuffle of them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RandomLabelResult {
    pub normal_train_acc: f64,
    pub shuffled_train_acc: f64,
}

impl RandomLabelResult {
    #[must_use]
    pub fn gap(&self) -> f64 {
        self.normal_train_acc - self.shuffled_train_acc
    }
}

/// Shuffling permutes labels, so class counts are unchanged.
pub fn random_label_probe<T: Scalar>(
    features: &FeatureMatrix,
    labels: &[usize],
    class_count: usize,
    config: &ProbeConfig,
    seed: u64,
) -> Result<RandomLabelResult> {
    if labels.iter().collect::<BTreeSet<_>>().len() < 2 {
        return Err(invalid("random-label probe needs at least two classes"));
    }
    let mut shuffled = labels.to_vec();
    shuffled.shuffle(&mut stage_rng(seed, "random_labels"));
    let probe_seed = stage_seed(seed, "random_labels/probe");
    let normal = train_linear_probe::<T>(LabeledFeatures::new(features, labels)?, None, None, class_count, config, probe_seed)?;
    let random = train_linear_probe::<T>(LabeledFeatures::new(features, &shuffled)?, None, None, class_count, config, probe_seed)?;
    Ok(RandomLabelResult { normal_train_acc: normal.result.train_acc, shuffled_train_acc: random.result.train_acc })
}

/// Pretext accuracy on seen-class VAL against unseen-inclusive TEST.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeneralizationResult {
    pub pretext_acc_val_half: f64,
    pub pretext_acc_test_full: f64,
    pub ratio: f64,
}

impl GeneralizationResult {
    pub fn new(val_half: f64, test_full: f64) -> Result<Self> {
        for (name, v) in [("validation", val_half), ("test", test_full)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(invalid(format!("{name} accuracy {v} not in [0, 1]")));
            }
        }
        if val_half == 0.0 {
            return Err(invalid("ratio undefined for zero validation accuracy"));
        }
        Ok(Self { pretext_acc_val_half: val_half, pretext_acc_test_full: test_full, ratio: test_full / val_half })
    }
}

fn require_accuracy(kind: PretextKind) -> Result<()> {
    if !kind.has_accuracy() {
        return Err(invalid(format!("{kind} has no pretext accuracy; use the loss summary instead")));
    }
    Ok(())
}

/// Evaluate a model trained on `reduced` against its VAL split and every TEST image.
pub fn generalization_of<T: Scalar>(
    model: &mut PretextModel<T>,
    reduced: &DatasetTable,
    full_test: &DatasetTable,
    policy: &AugmentPolicy,
    seed: u64,
) -> Result<GeneralizationResult> {
    require_accuracy(model.kind())?;
    let val = model.pretext_accuracy(&reduced.split_images(Split::Val), policy, seed)?.expect("accuracy pretext");
    let test = model.pretext_accuracy(&full_test.split_images(Split::Test), policy, seed)?.expect("accuracy pretext");
    GeneralizationResult::new(val, test)
}

/// Train the pretext on a seeded half of the classes, then compare seen-class
/// VAL accuracy with accuracy on the full TEST split.
pub fn pretext_generalization<T: Scalar>(
    dataset: &DatasetTable,
    config: &PretextTrainConfig,
    seed: u64,
) -> Result<(GeneralizationResult, PretextRun<T>)> {
    require_accuracy(config.kind)?;
    let halved = halve_classes(dataset, seed)?;
    let mut run = train_pretext::<T>(&halved.reduced, config, seed)?;
    let result = generalization_of(&mut run.model, &halved.reduced, &halved.full_test, &config.augment, seed)?;
    Ok((result, run))
}

/// Mean non-parametric softmax loss of unit-norm `features` (row-major,
/// `own_rows.len()` rows) against the bank.
pub fn id_pretext_loss_summary<T: Scalar>(features: &[T], own_rows: &[usize], bank: &MemoryBank<T>) -> Result<T> {
    if own_rows.is_empty() {
        return Err(invalid("no features to score"));
    }
    if features.len() != own_rows.len() * bank.dim() {
        return Err(invalid(format!("{} values for {} rows of dim {}", features.len(), own_rows.len(), bank.dim())));
    }
    let mut total = T::zero();
    for (f, &own) in features.chunks(bank.dim()).zip(own_rows) {
        total += nonparam_softmax_loss(f, own, bank)?;
    }
    Ok(total / T::from_usize_lossy(own_rows.len()))
}

/// Evaluation-mode mean loss of a trained instance-discrimination model over
/// TRAIN, whose images are the bank rows in id order.
pub fn id_model_loss<T: Scalar>(model: &mut PretextModel<T>, train: &[&LabeledImage], policy: &AugmentPolicy) -> Result<f64> {
    if model.kind() != PretextKind::InstanceDiscrimination {
        return Err(invalid(format!("loss summary expects an instance-discrimination model, got {}", model.kind())));
    }
    model.pretext_loss(train, policy, 0)
}
