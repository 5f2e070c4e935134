use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{DatasetTable, Image, LabeledImage, Split};
use crate::error::{invalid, Error, Result};
use crate::models::{
    build_head, images_to_tensor, load_state_dict, state_dict, Backbone, BackboneConfig, Decoder, Head, HeadKind,
    DECODER_LATENT,
};
use crate::nn::{adaptive_avg_pool, adaptive_avg_pool_backward, argmax, join_name, softmax_cross_entropy, Module, Param};
use crate::pretexts::{
    apply_rotation, build_rotation_batch, extract_grid_patches, nonparam_softmax_loss_grad, permute_patches,
    reconstruction_loss, reconstruction_loss_grad, JitterMode, MemoryBank, PermutationSet, PretextKind,
    DEFAULT_CANDIDATE_POOL, DEFAULT_PERMUTATIONS, GRID_PATCHES, ROTATION_CLASSES,
};
use crate::scalar::Scalar;
use crate::seed::{rng, stage_rng, stage_seed};
use crate::tensor::Tensor;

use super::{augment, run_epochs, sgd_step, AugmentMode, AugmentPolicy, EarlierStopRule, EpochStats, OptimConfig, TrainingCurve};

const EVAL_CHUNK: usize = 32;
const BANK_TENSOR: &str = "memory_bank";

/// Knobs specific to individual pretexts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PretextOptions {
    pub jigsaw_permutations: usize,
    pub jigsaw_candidate_pool: usize,
    pub id_temperature: f64,
    pub id_bank_momentum: f64,
}

impl Default for PretextOptions {
    fn default() -> Self {
        Self {
            jigsaw_permutations: DEFAULT_PERMUTATIONS,
            jigsaw_candidate_pool: DEFAULT_CANDIDATE_POOL,
            id_temperature: 0.07,
            id_bank_momentum: 0.5,
        }
    }
}

/// Loss and accuracy totals over one batch.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StepStats {
    /// Mean loss over the batch.
    pub loss: f64,
    pub correct: usize,
    pub count: usize,
}

/// Encoder plus whatever the pretext needs on top of it.
#[derive(Debug, Clone)]
pub struct PretextModel<T> {
    kind: PretextKind,
    options: PretextOptions,
    encoder: Backbone<T>,
    head: Option<Head<T>>,
    decoder: Option<Decoder<T>>,
    bank: Option<MemoryBank<T>>,
    permutations: Option<PermutationSet>,
}

fn refs(images: &[Image<f32>]) -> Vec<&Image<f32>> {
    images.iter().collect()
}

impl<T: Scalar> PretextModel<T> {
    /// Deterministic construction; `train_rows` sizes the instance memory bank.
    pub fn new(
        kind: PretextKind,
        options: PretextOptions,
        backbone: BackboneConfig,
        train_rows: usize,
        seed: u64,
    ) -> Result<Self> {
        let encoder = Backbone::new(backbone, &mut stage_rng(seed, "init/encoder"))?;
        let width = encoder.out_channels();
        let mut head_rng = stage_rng(seed, "init/head");
        let mut model = Self { kind, options, encoder, head: None, decoder: None, bank: None, permutations: None };
        match kind {
            PretextKind::Rotation => {
                model.head = Some(build_head(HeadKind::Rotation4, width, ROTATION_CLASSES, &mut head_rng)?);
            }
            PretextKind::Jigsaw => {
                if backbone.input_side < 33 {
                    return Err(invalid("jigsaw needs an input side of at least 33"));
                }
                let perms = PermutationSet::generate(
                    GRID_PATCHES,
                    options.jigsaw_permutations,
                    options.jigsaw_candidate_pool,
                    stage_seed(seed, "jigsaw/permutations"),
                )?;
                model.head = Some(build_head(HeadKind::Jigsaw, width, perms.len(), &mut head_rng)?);
                model.permutations = Some(perms);
            }
            PretextKind::InstanceDiscrimination => {
                if train_rows == 0 {
                    return Err(invalid("instance discrimination needs at least one training image"));
                }
                model.bank = Some(MemoryBank::random(
                    train_rows,
                    width,
                    options.id_bank_momentum,
                    options.id_temperature,
                    stage_seed(seed, "init/bank"),
                )?);
            }
            PretextKind::Autoencoder => {
                if backbone.input_side != 64 {
                    return Err(invalid(format!(
                        "the autoencoder decoder emits 64x64 images; input_side is {}",
                        backbone.input_side
                    )));
                }
                let decoder = Decoder::new(backbone.width_multiplier, &mut stage_rng(seed, "init/decoder"))?;
                debug_assert_eq!(decoder.latent_dim(), width, "{} latent at full width", DECODER_LATENT);
                model.decoder = Some(decoder);
            }
        }
        Ok(model)
    }

    pub fn kind(&self) -> PretextKind {
        self.kind
    }

    pub fn options(&self) -> &PretextOptions {
        &self.options
    }

    pub fn encoder(&self) -> &Backbone<T> {
        &self.encoder
    }

    pub fn encoder_mut(&mut self) -> &mut Backbone<T> {
        &mut self.encoder
    }

    pub fn into_encoder(self) -> Backbone<T> {
        self.encoder
    }

    pub fn permutations(&self) -> Option<&PermutationSet> {
        self.permutations.as_ref()
    }

    pub fn memory_bank(&self) -> Option<&MemoryBank<T>> {
        self.bank.as_ref()
    }

    /// Every parameter plus the memory bank, as named f32 tensors.
    pub fn state_tensors(&mut self) -> Vec<(String, Tensor<f32>)> {
        let mut out = state_dict(self, "");
        if let Some(bank) = &self.bank {
            out.push((BANK_TENSOR.to_string(), bank.to_tensor().cast()));
        }
        out
    }

    pub fn load_state_tensors(&mut self, tensors: &[(String, Tensor<f32>)]) -> Result<()> {
        load_state_dict(self, "", tensors)?;
        if let Some(bank) = &self.bank {
            let (_, t) = tensors
                .iter()
                .find(|(n, _)| n == BANK_TENSOR)
                .ok_or_else(|| invalid("checkpoint lacks the memory bank"))?;
            if t.shape() != [bank.rows(), bank.dim()] {
                return Err(invalid(format!("memory bank shape {:?} does not fit", t.shape())));
            }
            self.bank = Some(MemoryBank::from_rows(
                bank.rows(),
                bank.dim(),
                t.cast::<T>().into_data(),
                self.options.id_bank_momentum,
                self.options.id_temperature,
            )?);
        }
        Ok(())
    }

    /// Globally pooled embeddings and the pre-pool map dims.
    fn embed(&mut self, x: &Tensor<T>, train: bool) -> (Tensor<T>, (usize, usize, usize, usize)) {
        let maps = self.encoder.forward(x, train);
        let dims = maps.dims4();
        (adaptive_avg_pool(&maps, 1), dims)
    }

    fn backward_embed(&mut self, dpooled: &Tensor<T>, dims: (usize, usize, usize, usize)) {
        self.encoder.backward(&adaptive_avg_pool_backward(dpooled, dims, 1));
    }

    /// One SGD step on a batch of already augmented images. `bank_rows` gives
    /// each image's memory-bank row (instance discrimination only). Bank rows
    /// are refreshed with the pre-step embeddings after the step.
    pub fn train_step(
        &mut self,
        images: &[Image<f32>],
        bank_rows: &[usize],
        lr: f64,
        momentum: f64,
        seed: u64,
    ) -> Result<StepStats> {
        let (stats, bank_updates) = self.compute_gradients(images, bank_rows, seed)?;
        if !stats.loss.is_finite() {
            return Ok(stats);
        }
        sgd_step(self, lr, momentum);
        if let Some(bank) = self.bank.as_mut() {
            for (row, feat) in bank_rows.iter().zip(&bank_updates) {
                bank.update(*row, feat)?;
            }
        }
        Ok(stats)
    }

    /// Zero the gradients, then run the training-mode forward and backward
    /// pass for one batch without touching the weights. Also returns the
    /// normalised embeddings destined for the memory bank.
    #[allow(clippy::type_complexity)]
    pub fn compute_gradients(
        &mut self,
        images: &[Image<f32>],
        bank_rows: &[usize],
        seed: u64,
    ) -> Result<(StepStats, Vec<Vec<T>>)> {
        if images.is_empty() {
            return Err(invalid("empty training batch"));
        }
        self.zero_grad();
        let mut bank_updates = Vec::new();
        let stats = match self.kind {
            PretextKind::Rotation => {
                let batch = build_rotation_batch(images, seed)?;
                let x = images_to_tensor(&refs(&batch.inputs))?;
                self.classify_step(&x, &batch.targets)?
            }
            PretextKind::Jigsaw => {
                let perms = self.permutations.as_ref().expect("jigsaw permutations");
                let mut r = rng(seed);
                let mut patches = Vec::with_capacity(images.len() * GRID_PATCHES);
                let mut targets = Vec::with_capacity(images.len());
                for img in images {
                    let grid = extract_grid_patches(img, JitterMode::Train, r.random())?;
                    let target = r.random_range(0..perms.len());
                    patches.extend(permute_patches(&grid, perms.get(target))?);
                    targets.push(target);
                }
                let x = images_to_tensor(&refs(&patches))?;
                self.classify_step(&x, &targets)?
            }
            PretextKind::InstanceDiscrimination => {
                if bank_rows.len() != images.len() {
                    return Err(invalid("instance discrimination needs one bank row per image"));
                }
                let x = images_to_tensor(&refs(images))?;
                let (pooled, dims) = self.embed(&x, true);
                let (loss, dpooled, feats) = self.instance_loss(&pooled, bank_rows, true)?;
                self.backward_embed(&dpooled, dims);
                bank_updates = feats;
                StepStats { loss, correct: 0, count: images.len() }
            }
            PretextKind::Autoencoder => {
                let x = images_to_tensor(&refs(images))?;
                let (pooled, dims) = self.embed(&x, true);
                let decoder = self.decoder.as_mut().expect("autoencoder decoder");
                let recon = decoder.forward(&pooled, true)?;
                let (loss, grad) = reconstruction_loss_grad(&x, &recon)?;
                let dz = decoder.backward(&grad);
                self.backward_embed(&dz, dims);
                StepStats { loss: loss.as_f64(), correct: 0, count: images.len() }
            }
        };
        Ok((stats, bank_updates))
    }

    fn classify_step(&mut self, x: &Tensor<T>, targets: &[usize]) -> Result<StepStats> {
        let (pooled, dims) = self.embed(x, true);
        let head = self.head.as_mut().expect("classification head");
        let logits = head.forward(&pooled, true)?;
        let ce = softmax_cross_entropy(&logits, targets);
        let dpooled = head.backward(&ce.grad);
        self.backward_embed(&dpooled, dims);
        Ok(StepStats { loss: ce.loss.as_f64(), correct: ce.correct, count: targets.len() })
    }

    /// Mean non-parametric softmax loss of L2-normalised embeddings, its
    /// gradient with respect to the unnormalised embeddings, and the
    /// normalised rows (for the bank update).
    #[allow(clippy::type_complexity)]
    fn instance_loss(&self, pooled: &Tensor<T>, bank_rows: &[usize], want_grad: bool) -> Result<(f64, Tensor<T>, Vec<Vec<T>>)> {
        let bank = self.bank.as_ref().expect("memory bank");
        let (n, d) = pooled.dims2();
        let inv_n = T::one() / T::from_usize_lossy(n);
        let mut total = 0.0;
        let mut grad = vec![T::zero(); if want_grad { n * d } else { 0 }];
        let mut feats = Vec::with_capacity(n);
        for (i, z) in pooled.data().chunks(d).enumerate() {
            let norm = z.iter().map(|&v| v * v).sum::<T>().sqrt();
            let degenerate = norm <= T::lit(1e-12);
            let f: Vec<T> = if degenerate {
                (0..d).map(|j| if j == 0 { T::one() } else { T::zero() }).collect()
            } else {
                z.iter().map(|&v| v / norm).collect()
            };
            let (loss, g) = nonparam_softmax_loss_grad(&f, bank_rows[i], bank)?;
            total += loss.as_f64();
            if want_grad && !degenerate {
                // Chain rule through f = z / |z|: (I - f f^T) g / |z|.
                let gf: T = g.iter().zip(&f).map(|(&a, &b)| a * b).sum();
                for j in 0..d {
                    grad[i * d + j] = (g[j] - gf * f[j]) / norm * inv_n;
                }
            }
            feats.push(f);
        }
        let grad = Tensor::from_vec(&[if want_grad { n } else { 0 }, d], grad)?;
        Ok((total / n as f64, grad, feats))
    }

    /// Evaluation-mode pretext accuracy: every image under all four
    /// rotations, or under one permutation drawn from `seed` and its image id.
    /// `None` for the loss-only pretexts.
    pub fn pretext_accuracy(&mut self, images: &[&LabeledImage], policy: &AugmentPolicy, seed: u64) -> Result<Option<f64>> {
        if !self.kind.has_accuracy() {
            return Ok(None);
        }
        if images.is_empty() {
            return Err(invalid("no images to evaluate"));
        }
        let mut correct = 0usize;
        let mut total = 0usize;
        for chunk in images.chunks(EVAL_CHUNK) {
            let base: Vec<Image<f32>> =
                chunk.iter().map(|li| augment(&li.pixels, policy, AugmentMode::Eval, 0)).collect();
            let (inputs, targets) = match self.kind {
                PretextKind::Rotation => {
                    let mut inputs = Vec::with_capacity(base.len() * ROTATION_CLASSES);
                    let mut targets = Vec::with_capacity(base.len() * ROTATION_CLASSES);
                    for img in &base {
                        for r in 0..ROTATION_CLASSES {
                            inputs.push(apply_rotation(img, r)?);
                            targets.push(r);
                        }
                    }
                    (inputs, targets)
                }
                _ => {
                    let perms = self.permutations.as_ref().expect("jigsaw permutations");
                    let mut inputs = Vec::with_capacity(base.len() * GRID_PATCHES);
                    let mut targets = Vec::with_capacity(base.len());
                    for (img, li) in base.iter().zip(chunk) {
                        let target = stage_rng(seed, &format!("jigsaw/eval/{}", li.image_id)).random_range(0..perms.len());
                        let grid = extract_grid_patches(img, JitterMode::Eval, 0)?;
                        inputs.extend(permute_patches(&grid, perms.get(target))?);
                        targets.push(target);
                    }
                    (inputs, targets)
                }
            };
            let x = images_to_tensor(&refs(&inputs))?;
            let (pooled, _) = self.embed(&x, false);
            let logits = self.head.as_mut().expect("classification head").forward(&pooled, false)?;
            let (_, k) = logits.dims2();
            for (row, &t) in logits.data().chunks(k).zip(&targets) {
                correct += usize::from(argmax(row) == t);
            }
            total += targets.len();
        }
        Ok(Some(correct as f64 / total as f64))
    }

    /// Evaluation-mode mean pretext loss. Instance discrimination scores
    /// `images[i]` against bank row `i`, so it expects the training images in
    /// bank order.
    pub fn pretext_loss(&mut self, images: &[&LabeledImage], policy: &AugmentPolicy, seed: u64) -> Result<f64> {
        if images.is_empty() {
            return Err(invalid("no images to evaluate"));
        }
        let mut weighted = 0.0;
        for (c, chunk) in images.chunks(EVAL_CHUNK).enumerate() {
            let base: Vec<Image<f32>> =
                chunk.iter().map(|li| augment(&li.pixels, policy, AugmentMode::Eval, 0)).collect();
            let loss = match self.kind {
                PretextKind::InstanceDiscrimination => {
                    let x = images_to_tensor(&refs(&base))?;
                    let (pooled, _) = self.embed(&x, false);
                    let rows: Vec<usize> = (c * EVAL_CHUNK..c * EVAL_CHUNK + chunk.len()).collect();
                    self.instance_loss(&pooled, &rows, false)?.0
                }
                PretextKind::Autoencoder => {
                    let x = images_to_tensor(&refs(&base))?;
                    let (pooled, _) = self.embed(&x, false);
                    let recon = self.decoder.as_mut().expect("autoencoder decoder").forward(&pooled, false)?;
                    reconstruction_loss(&x, &recon)?.as_f64()
                }
                PretextKind::Rotation | PretextKind::Jigsaw => {
                    let batch_seed = stage_seed(seed, &format!("eval_loss/{c}"));
                    let (inputs, targets) = if self.kind == PretextKind::Rotation {
                        let b = build_rotation_batch(&base, batch_seed)?;
                        (b.inputs, b.targets)
                    } else {
                        let perms = self.permutations.as_ref().expect("jigsaw permutations");
                        let mut r = rng(batch_seed);
                        let mut inputs = Vec::new();
                        let mut targets = Vec::new();
                        for img in &base {
                            let t = r.random_range(0..perms.len());
                            inputs.extend(permute_patches(&extract_grid_patches(img, JitterMode::Eval, 0)?, perms.get(t))?);
                            targets.push(t);
                        }
                        (inputs, targets)
                    };
                    let x = images_to_tensor(&refs(&inputs))?;
                    let (pooled, _) = self.embed(&x, false);
                    let logits = self.head.as_mut().expect("classification head").forward(&pooled, false)?;
                    softmax_cross_entropy(&logits, &targets).loss.as_f64()
                }
            };
            weighted += loss * chunk.len() as f64;
        }
        Ok(weighted / images.len() as f64)
    }
}

impl<T: Scalar> Module<T> for PretextModel<T> {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        self.encoder.visit(&join_name(prefix, "encoder"), f);
        if let Some(h) = self.head.as_mut() {
            h.visit(&join_name(prefix, "head"), f);
        }
        if let Some(d) = self.decoder.as_mut() {
            d.visit(&join_name(prefix, "decoder"), f);
        }
    }
}

/// Everything a pretext run needs besides the data and the seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretextTrainConfig {
    pub kind: PretextKind,
    pub backbone: BackboneConfig,
    pub optim: OptimConfig,
    pub augment: AugmentPolicy,
    #[serde(default)]
    pub options: PretextOptions,
    #[serde(default)]
    pub earlier_stop: EarlierStopRule,
}

impl PretextTrainConfig {
    pub fn new(kind: PretextKind, backbone: BackboneConfig, optim: OptimConfig) -> Self {
        let augment = AugmentPolicy { resize_to: backbone.input_side, ..AugmentPolicy::default() };
        Self { kind, backbone, optim, augment, options: PretextOptions::default(), earlier_stop: EarlierStopRule::default() }
    }
}

#[derive(Debug, Clone)]
pub struct PretextRun<T> {
    pub model: PretextModel<T>,
    pub curve: TrainingCurve,
}

/// Train one pretext on the TRAIN split, validating every epoch.
///
/// Validation is pretext accuracy on VAL for Rotation and Jigsaw, mean
/// reconstruction loss on VAL for the autoencoder, and mean loss over TRAIN
/// against the bank for instance discrimination (VAL images have no bank row).
/// The final-epoch model is returned.
pub fn train_pretext<T: Scalar>(dataset: &DatasetTable, config: &PretextTrainConfig, seed: u64) -> Result<PretextRun<T>> {
    let train = dataset.split_images(Split::Train);
    let val = dataset.split_images(Split::Val);
    if train.is_empty() {
        return Err(invalid(format!("dataset {} has an empty TRAIN split", dataset.name())));
    }
    if val.is_empty() && config.kind != PretextKind::InstanceDiscrimination {
        return Err(invalid(format!("dataset {} has an empty VAL split", dataset.name())));
    }
    if config.augment.resize_to != config.backbone.input_side {
        return Err(invalid("augmentation output side must equal the encoder input side"));
    }
    let kind = config.kind;
    let mut model = PretextModel::<T>::new(kind, config.options, config.backbone, train.len(), seed)?;
    let optim = &config.optim;
    let curve = run_epochs(optim, &config.earlier_stop, Some(kind), |epoch, lr| {
        let mut order: Vec<usize> = (0..train.len()).collect();
        rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut stage_rng(seed, &format!("shuffle/{epoch}")));
        let (mut loss_sum, mut correct, mut count) = (0.0, 0usize, 0usize);
        for (b, rows) in order.chunks(optim.batch_size).enumerate() {
            let images: Vec<Image<f32>> = rows
                .iter()
                .map(|&i| {
                    let s = stage_seed(seed, &format!("augment/{epoch}/{}", train[i].image_id));
                    augment(&train[i].pixels, &config.augment, AugmentMode::Train, s)
                })
                .collect();
            let stats = model.train_step(&images, rows, lr, optim.momentum, stage_seed(seed, &format!("batch/{epoch}/{b}")))?;
            if !stats.loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch });
            }
            loss_sum += stats.loss * stats.count as f64;
            correct += stats.correct;
            count += stats.count;
        }
        let train_accuracy = kind.has_accuracy().then(|| correct as f64 / count as f64);
        let val_metric = match kind {
            PretextKind::Rotation | PretextKind::Jigsaw => {
                model.pretext_accuracy(&val, &config.augment, seed)?.expect("classification pretext")
            }
            PretextKind::InstanceDiscrimination => model.pretext_loss(&train, &config.augment, seed)?,
            PretextKind::Autoencoder => model.pretext_loss(&val, &config.augment, seed)?,
        };
        Ok(EpochStats { train_metric: train_accuracy.unwrap_or(loss_sum / count as f64), train_accuracy, val_metric })
    })?;
    Ok(PretextRun { model, curve })
}
