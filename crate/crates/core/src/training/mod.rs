//! The optimisation protocol and the training loops.

mod augment;
mod curve;
mod optim;
mod pretext;
mod supervised;

use std::collections::BTreeMap;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::pretexts::PretextKind;
use crate::seed::stage_rng;
pub use augment::{augment, AugmentMode, AugmentPolicy};
pub use curve::{CurvePoint, TrainingCurve};
pub use optim::{lr_at, sgd_step, OptimConfig};
pub use pretext::{train_pretext, PretextModel, PretextOptions, PretextRun, PretextTrainConfig, StepStats};
pub use supervised::{train_supervised, SupervisedModel, SupervisedRun, SupervisedTrainConfig};

/// Halt a classification pretext once its epoch training accuracy reaches the threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EarlierStopRule {
    pub threshold: f64,
    pub applies_to: Vec<PretextKind>,
}

impl Default for EarlierStopRule {
    fn default() -> Self {
        Self { threshold: 0.98, applies_to: vec![PretextKind::Rotation, PretextKind::Jigsaw] }
    }
}

impl EarlierStopRule {
    /// Never fires.
    pub fn disabled() -> Self {
        Self { threshold: 0.98, applies_to: Vec::new() }
    }

    /// `kind` is `None` for supervised training, which the rule never covers.
    pub fn fires(&self, kind: Option<PretextKind>, train_accuracy: Option<f64>) -> bool {
        match (kind, train_accuracy) {
            (Some(k), Some(acc)) => self.applies_to.contains(&k) && acc >= self.threshold,
            _ => false,
        }
    }
}

/// What one epoch of a loop reports back to [`run_epochs`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub train_metric: f64,
    pub train_accuracy: Option<f64>,
    pub val_metric: f64,
}

/// Drive `epoch_fn` through the schedule, recording the curve and applying
/// the earlier-stopping rule at epoch boundaries.
pub fn run_epochs(
    optim: &OptimConfig,
    rule: &EarlierStopRule,
    kind: Option<PretextKind>,
    mut epoch_fn: impl FnMut(usize, f64) -> Result<EpochStats>,
) -> Result<TrainingCurve> {
    optim.validate()?;
    let start = Instant::now();
    let mut curve = TrainingCurve::default();
    for epoch in 0..optim.epochs {
        let lr = lr_at(epoch, optim)?;
        let stats = epoch_fn(epoch, lr)?;
        if !stats.train_metric.is_finite() {
            return Err(Error::NonFiniteLoss { epoch });
        }
        curve.points.push(CurvePoint {
            epoch,
            lr,
            train_metric: stats.train_metric,
            val_metric: stats.val_metric,
            wallclock_s: start.elapsed().as_secs_f64(),
        });
        log::debug!("epoch {epoch} lr {lr} train {:.4} val {:.4}", stats.train_metric, stats.val_metric);
        if rule.fires(kind, stats.train_accuracy) {
            curve.halted_early = true;
            break;
        }
    }
    Ok(curve)
}

/// Stratified subset of `labels` positions: per class `max(1, floor(fraction * n_c))`
/// members drawn by a seeded shuffle, returned in ascending position order.
pub fn label_fraction_subset(labels: &[usize], class_count: usize, fraction: f64, seed: u64) -> Result<Vec<usize>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(invalid(format!("label fraction {fraction} must be in (0, 1]")));
    }
    let mut by_class: BTreeMap<usize, Vec<usize>> = (0..class_count).map(|c| (c, Vec::new())).collect();
    for (pos, &label) in labels.iter().enumerate() {
        by_class
            .get_mut(&label)
            .ok_or_else(|| invalid(format!("label {label} outside 0..{class_count}")))?
            .push(pos);
    }
    let mut out = Vec::new();
    for (class_id, mut members) in by_class {
        if members.is_empty() {
            return Err(Error::EmptyClass { class_id });
        }
        if fraction < 1.0 {
            members.shuffle(&mut stage_rng(seed, &format!("label_fraction/{class_id}")));
            let keep = ((fraction * members.len() as f64 + 1e-9).floor() as usize).max(1);
            members.truncate(keep);
        }
        out.extend(members);
    }
    out.sort_unstable();
    Ok(out)
}
