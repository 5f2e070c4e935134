use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Image;
use crate::error::{invalid, Result};
use crate::nn::{join_name, BatchNorm2d, Conv2d, Module, Param, Relu};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::images_to_tensor;

/// ResNet26-style encoder: a stride-2 3x3 stem, then three stages of basic
/// blocks with stride-2 transitions into stages two and three.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub stage_channels: [usize; 3],
    pub blocks_per_stage: usize,
    pub input_side: usize,
    /// Channel scale for desk-scale runs; 1.0 is the reference network.
    pub width_multiplier: f64,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self { stage_channels: [64, 128, 256], blocks_per_stage: 4, input_side: 64, width_multiplier: 1.0 }
    }
}

impl BackboneConfig {
    pub fn with_width(width_multiplier: f64) -> Self {
        Self { width_multiplier, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_side == 0 || self.input_side % 8 != 0 {
            return Err(invalid(format!("input_side {} must be a positive multiple of 8", self.input_side)));
        }
        if !(self.width_multiplier > 0.0 && self.width_multiplier.is_finite()) {
            return Err(invalid(format!("width_multiplier {} must be positive", self.width_multiplier)));
        }
        if self.blocks_per_stage == 0 {
            return Err(invalid("blocks_per_stage must be at least 1"));
        }
        if self.channels().contains(&0) {
            return Err(invalid("width_multiplier leaves a stage with zero channels"));
        }
        Ok(())
    }

    /// Stage widths after applying the multiplier.
    pub fn channels(&self) -> [usize; 3] {
        self.stage_channels.map(|c| (c as f64 * self.width_multiplier).round() as usize)
    }

    pub fn out_channels(&self) -> usize {
        self.channels()[2]
    }

    /// Side of the pre-pool feature map.
    pub fn out_side(&self) -> usize {
        self.input_side / 8
    }
}

#[derive(Debug, Clone)]
pub struct BasicBlock<T> {
    conv1: Conv2d<T>,
    bn1: BatchNorm2d<T>,
    relu1: Relu,
    conv2: Conv2d<T>,
    bn2: BatchNorm2d<T>,
    shortcut: Option<(Conv2d<T>, BatchNorm2d<T>)>,
    relu_out: Relu,
}

impl<T: Scalar> BasicBlock<T> {
    pub fn new(in_ch: usize, out_ch: usize, stride: usize, rng: &mut impl Rng) -> Self {
        let shortcut = (stride != 1 || in_ch != out_ch)
            .then(|| (Conv2d::new(in_ch, out_ch, 1, stride, 0, false, rng), BatchNorm2d::new(out_ch)));
        Self {
            conv1: Conv2d::new(in_ch, out_ch, 3, stride, 1, false, rng),
            bn1: BatchNorm2d::new(out_ch),
            relu1: Relu::default(),
            conv2: Conv2d::new(out_ch, out_ch, 3, 1, 1, false, rng),
            bn2: BatchNorm2d::new(out_ch),
            shortcut,
            relu_out: Relu::default(),
        }
    }

    pub fn forward(&mut self, x: &Tensor<T>, train: bool) -> Tensor<T> {
        let h = self.conv1.forward(x, train);
        let h = self.bn1.forward(&h, train);
        let h = self.relu1.forward(&h, train);
        let h = self.conv2.forward(&h, train);
        let mut h = self.bn2.forward(&h, train);
        match self.shortcut.as_mut() {
            Some((conv, bn)) => {
                let s = bn.forward(&conv.forward(x, train), train);
                h.data_mut().iter_mut().zip(s.data()).for_each(|(a, &b)| *a += b);
            }
            None => h.data_mut().iter_mut().zip(x.data()).for_each(|(a, &b)| *a += b),
        }
        self.relu_out.forward(&h, train)
    }

    pub fn backward(&mut self, dy: &Tensor<T>) -> Tensor<T> {
        let d = self.relu_out.backward(dy);
        let dh = self.bn2.backward(&d);
        let dh = self.conv2.backward(&dh);
        let dh = self.relu1.backward(&dh);
        let dh = self.bn1.backward(&dh);
        let mut dx = self.conv1.backward(&dh);
        let ds = match self.shortcut.as_mut() {
            Some((conv, bn)) => conv.backward(&bn.backward(&d)),
            None => d,
        };
        dx.data_mut().iter_mut().zip(ds.data()).for_each(|(a, &b)| *a += b);
        dx
    }
}

impl<T: Scalar> Module<T> for BasicBlock<T> {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        self.conv1.visit(&join_name(prefix, "conv1"), f);
        self.bn1.visit(&join_name(prefix, "bn1"), f);
        self.conv2.visit(&join_name(prefix, "conv2"), f);
        self.bn2.visit(&join_name(prefix, "bn2"), f);
        if let Some((conv, bn)) = self.shortcut.as_mut() {
            conv.visit(&join_name(prefix, "shortcut.conv"), f);
            bn.visit(&join_name(prefix, "shortcut.bn"), f);
        }
    }
}

/// The encoder. `forward` returns the pre-pool feature maps.
#[derive(Debug, Clone)]
pub struct Backbone<T> {
    config: BackboneConfig,
    stem: Conv2d<T>,
    stem_bn: BatchNorm2d<T>,
    stem_relu: Relu,
    blocks: Vec<BasicBlock<T>>,
}

impl<T: Scalar> Backbone<T> {
    pub fn new(config: BackboneConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let ch = config.channels();
        let stem = Conv2d::new(3, ch[0], 3, 2, 1, false, rng);
        let mut blocks = Vec::with_capacity(3 * config.blocks_per_stage);
        let mut in_ch = ch[0];
        for (stage, &out_ch) in ch.iter().enumerate() {
            for b in 0..config.blocks_per_stage {
                let stride = if stage > 0 && b == 0 { 2 } else { 1 };
                blocks.push(BasicBlock::new(in_ch, out_ch, stride, rng));
                in_ch = out_ch;
            }
        }
        Ok(Self { config, stem, stem_bn: BatchNorm2d::new(ch[0]), stem_relu: Relu::default(), blocks })
    }

    pub fn config(&self) -> &BackboneConfig {
        &self.config
    }

    pub fn out_channels(&self) -> usize {
        self.config.out_channels()
    }

    /// Works for any input side (jigsaw patches are not multiples of 8).
    pub fn forward(&mut self, x: &Tensor<T>, train: bool) -> Tensor<T> {
        let h = self.stem.forward(x, train);
        let h = self.stem_bn.forward(&h, train);
        let mut h = self.stem_relu.forward(&h, train);
        for block in &mut self.blocks {
            h = block.forward(&h, train);
        }
        h
    }

    /// Backpropagate to the parameters; the input gradient is not formed.
    pub fn backward(&mut self, dmaps: &Tensor<T>) {
        let mut d = dmaps.clone();
        for block in self.blocks.iter_mut().rev() {
            d = block.backward(&d);
        }
        let d = self.stem_relu.backward(&d);
        let d = self.stem_bn.backward(&d);
        self.stem.backward_weights(&d);
    }

    /// Evaluation-mode pre-pool maps for full-size images, in batches.
    pub fn extract_prepool(&mut self, images: &[&Image<f32>]) -> Result<Tensor<T>> {
        let side = self.config.input_side;
        if let Some(bad) = images.iter().find(|i| i.height() != side || i.width() != side) {
            return Err(invalid(format!(
                "encoder expects {side}x{side} inputs, got {}x{}",
                bad.height(),
                bad.width()
            )));
        }
        let mut parts = Vec::new();
        for chunk in images.chunks(64) {
            parts.push(self.forward(&images_to_tensor(chunk)?, false));
        }
        if parts.is_empty() {
            let s = self.config.out_side();
            return Ok(Tensor::zeros(&[0, self.out_channels(), s, s]));
        }
        Tensor::cat_outer(&parts)
    }
}

impl<T: Scalar> Module<T> for Backbone<T> {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        self.stem.visit(&join_name(prefix, "stem"), f);
        self.stem_bn.visit(&join_name(prefix, "stem_bn"), f);
        for (i, block) in self.blocks.iter_mut().enumerate() {
            block.visit(&join_name(prefix, &format!("blocks.{i}")), f);
        }
    }
}
