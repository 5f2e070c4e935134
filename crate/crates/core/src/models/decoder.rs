use rand::Rng;

use crate::error::{invalid, shape_text, Result};
use crate::nn::{join_name, BatchNorm2d, ConvTranspose2d, Module, Param, Relu, Tanh};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Latent size at full width.
pub const DECODER_LATENT: usize = 256;

const STD: f64 = 0.02;

#[derive(Debug, Clone)]
struct Stage<T> {
    conv: ConvTranspose2d<T>,
    bn: BatchNorm2d<T>,
    relu: Relu,
}

/// Transpose-convolution generator mapping a latent vector to a 3x64x64 image.
///
/// Channel widths 512/256/128/64 are scaled by the same multiplier as the
/// encoder so the latent matches the encoder's pooled width.
#[derive(Debug, Clone)]
pub struct Decoder<T> {
    latent: usize,
    stages: Vec<Stage<T>>,
    last: ConvTranspose2d<T>,
    tanh: Tanh<T>,
}

impl<T: Scalar> Decoder<T> {
    pub fn new(width_multiplier: f64, rng: &mut impl Rng) -> Result<Self> {
        if !(width_multiplier > 0.0 && width_multiplier.is_finite()) {
            return Err(invalid(format!("width_multiplier {width_multiplier} must be positive")));
        }
        let scale = |c: usize| ((c as f64 * width_multiplier).round() as usize).max(1);
        let latent = scale(DECODER_LATENT);
        let widths = [512, 256, 128, 64].map(scale);
        let mut stages = Vec::with_capacity(4);
        let mut in_ch = latent;
        for (i, &out_ch) in widths.iter().enumerate() {
            let (stride, pad) = if i == 0 { (1, 0) } else { (2, 1) };
            stages.push(Stage {
                conv: ConvTranspose2d::new(in_ch, out_ch, 4, stride, pad, false, STD, rng),
                bn: BatchNorm2d::new(out_ch),
                relu: Relu::default(),
            });
            in_ch = out_ch;
        }
        let last = ConvTranspose2d::new(in_ch, 3, 4, 2, 1, true, STD, rng);
        Ok(Self { latent, stages, last, tanh: Tanh::default() })
    }

    pub fn latent_dim(&self) -> usize {
        self.latent
    }

    fn check(&self, z: &Tensor<T>) -> Result<usize> {
        match z.shape() {
            [n, d] if *d == self.latent => Ok(*n),
            other => Err(shape_text(format!("[n, {}]", self.latent), format!("{other:?}"))),
        }
    }

    /// `[n, latent]` to `[n, 3, 64, 64]`.
    pub fn forward(&mut self, z: &Tensor<T>, train: bool) -> Result<Tensor<T>> {
        Ok(self.forward_trace(z, train)?.pop().expect("non-empty trace"))
    }

    /// Every intermediate output, one per layer (transpose conv, norm, activation).
    pub fn forward_trace(&mut self, z: &Tensor<T>, train: bool) -> Result<Vec<Tensor<T>>> {
        let n = self.check(z)?;
        let mut h = z.clone().reshape(&[n, self.latent, 1, 1])?;
        let mut trace = Vec::with_capacity(14);
        for s in &mut self.stages {
            h = s.conv.forward(&h, train);
            trace.push(h.clone());
            h = s.bn.forward(&h, train);
            trace.push(h.clone());
            h = s.relu.forward(&h, train);
            trace.push(h.clone());
        }
        h = self.last.forward(&h, train);
        trace.push(h.clone());
        trace.push(self.tanh.forward(&h, train));
        Ok(trace)
    }

    /// Returns the gradient with respect to the latent, `[n, latent]`.
    pub fn backward(&mut self, dy: &Tensor<T>) -> Tensor<T> {
        let n = dy.shape()[0];
        let mut d = self.last.backward(&self.tanh.backward(dy));
        for s in self.stages.iter_mut().rev() {
            d = s.conv.backward(&s.bn.backward(&s.relu.backward(&d)));
        }
        d.reshape(&[n, self.latent]).expect("latent grad shape")
    }
}

impl<T: Scalar> Module<T> for Decoder<T> {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        for (i, s) in self.stages.iter_mut().enumerate() {
            s.conv.visit(&join_name(prefix, &format!("stages.{i}.conv")), f);
            s.bn.visit(&join_name(prefix, &format!("stages.{i}.bn")), f);
        }
        self.last.visit(&join_name(prefix, "last"), f);
    }
}
