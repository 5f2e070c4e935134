use serde::{Deserialize, Serialize};

use crate::data::{DatasetTable, Image, LabeledImage, Split};
use crate::error::{invalid, Error, Result};
use crate::models::{build_head, images_to_tensor, Backbone, BackboneConfig, Head, HeadKind};
use crate::nn::{adaptive_avg_pool, adaptive_avg_pool_backward, argmax, join_name, softmax_cross_entropy, Module, Param};
use crate::scalar::Scalar;
use crate::seed::{stage_rng, stage_seed};

use super::{
    augment, label_fraction_subset, run_epochs, sgd_step, AugmentMode, AugmentPolicy, EarlierStopRule, EpochStats,
    OptimConfig, TrainingCurve,
};

/// Encoder with a linear classifier on globally pooled features, trained end to end.
#[derive(Debug, Clone)]
pub struct SupervisedModel<T> {
    pub encoder: Backbone<T>,
    pub head: Head<T>,
}

impl<T: Scalar> SupervisedModel<T> {
    pub fn new(backbone: BackboneConfig, class_count: usize, seed: u64) -> Result<Self> {
        let encoder = Backbone::new(backbone, &mut stage_rng(seed, "init/encoder"))?;
        let head = build_head(HeadKind::Supervised, encoder.out_channels(), class_count, &mut stage_rng(seed, "init/head"))?;
        Ok(Self { encoder, head })
    }

    fn step(&mut self, images: &[Image<f32>], labels: &[usize], lr: f64, momentum: f64) -> Result<(f64, usize)> {
        self.zero_grad();
        let x = images_to_tensor(&images.iter().collect::<Vec<_>>())?;
        let maps = self.encoder.forward(&x, true);
        let dims = maps.dims4();
        let logits = self.head.forward(&adaptive_avg_pool(&maps, 1), true)?;
        let ce = softmax_cross_entropy(&logits, labels);
        let loss = ce.loss.as_f64();
        if loss.is_finite() {
            let dpooled = self.head.backward(&ce.grad);
            self.encoder.backward(&adaptive_avg_pool_backward(&dpooled, dims, 1));
            sgd_step(self, lr, momentum);
        }
        Ok((loss, ce.correct))
    }

    /// Evaluation-mode classification accuracy.
    pub fn accuracy(&mut self, images: &[&LabeledImage], policy: &AugmentPolicy) -> Result<f64> {
        if images.is_empty() {
            return Err(invalid("no images to evaluate"));
        }
        let mut correct = 0;
        for chunk in images.chunks(32) {
            let inputs: Vec<Image<f32>> = chunk.iter().map(|li| augment(&li.pixels, policy, AugmentMode::Eval, 0)).collect();
            let x = images_to_tensor(&inputs.iter().collect::<Vec<_>>())?;
            let logits = self.head.forward(&adaptive_avg_pool(&self.encoder.forward(&x, false), 1), false)?;
            let (_, k) = logits.dims2();
            for (row, li) in logits.data().chunks(k).zip(chunk) {
                correct += usize::from(argmax(row) == li.class_id);
            }
        }
        Ok(correct as f64 / images.len() as f64)
    }
}

impl<T: Scalar> Module<T> for SupervisedModel<T> {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        self.encoder.visit(&join_name(prefix, "encoder"), f);
        self.head.visit(&join_name(prefix, "head"), f);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupervisedTrainConfig {
    pub backbone: BackboneConfig,
    pub optim: OptimConfig,
    pub augment: AugmentPolicy,
    pub label_fraction: f64,
}

impl SupervisedTrainConfig {
    pub fn new(backbone: BackboneConfig, optim: OptimConfig, label_fraction: f64) -> Self {
        let augment = AugmentPolicy { resize_to: backbone.input_side, ..AugmentPolicy::default() };
        Self { backbone, optim, augment, label_fraction }
    }
}

#[derive(Debug, Clone)]
pub struct SupervisedRun<T> {
    pub model: SupervisedModel<T>,
    pub curve: TrainingCurve,
    /// Image ids of the labeled TRAIN subset actually used.
    pub used_image_ids: Vec<usize>,
}

/// Cross-entropy training on a stratified `label_fraction` of TRAIN; curve
/// metrics are train and VAL accuracy. Earlier stopping never applies.
pub fn train_supervised<T: Scalar>(dataset: &DatasetTable, config: &SupervisedTrainConfig, seed: u64) -> Result<SupervisedRun<T>> {
    let all_train = dataset.split_images(Split::Train);
    let val = dataset.split_images(Split::Val);
    if all_train.is_empty() || val.is_empty() {
        return Err(invalid(format!("dataset {} needs non-empty TRAIN and VAL splits", dataset.name())));
    }
    if config.augment.resize_to != config.backbone.input_side {
        return Err(invalid("augmentation output side must equal the encoder input side"));
    }
    let labels: Vec<usize> = all_train.iter().map(|li| li.class_id).collect();
    let subset = label_fraction_subset(&labels, dataset.class_count(), config.label_fraction, stage_seed(seed, "labels"))?;
    let train: Vec<&LabeledImage> = subset.iter().map(|&i| all_train[i]).collect();
    let mut model = SupervisedModel::<T>::new(config.backbone, dataset.class_count(), seed)?;
    let optim = &config.optim;
    let curve = run_epochs(optim, &EarlierStopRule::disabled(), None, |epoch, lr| {
        let mut order: Vec<usize> = (0..train.len()).collect();
        rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut stage_rng(seed, &format!("shuffle/{epoch}")));
        let mut correct = 0usize;
        for rows in order.chunks(optim.batch_size) {
            let images: Vec<Image<f32>> = rows
                .iter()
                .map(|&i| {
                    let s = stage_seed(seed, &format!("augment/{epoch}/{}", train[i].image_id));
                    augment(&train[i].pixels, &config.augment, AugmentMode::Train, s)
                })
                .collect();
            let targets: Vec<usize> = rows.iter().map(|&i| train[i].class_id).collect();
            let (loss, c) = model.step(&images, &targets, lr, optim.momentum)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch });
            }
            correct += c;
        }
        let acc = correct as f64 / train.len() as f64;
        Ok(EpochStats { train_metric: acc, train_accuracy: Some(acc), val_metric: model.accuracy(&val, &config.augment)? })
    })?;
    let used_image_ids = train.iter().map(|li| li.image_id).collect();
    Ok(SupervisedRun { model, curve, used_image_ids })
}
