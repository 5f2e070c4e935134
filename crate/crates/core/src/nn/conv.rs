use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::param::{join_name, Module, Param};
use crate::scalar::{gemm, transpose_into, MatRef, Scalar};
use crate::tensor::Tensor;

pub fn conv_out_side(side: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    (side + 2 * pad - kernel) / stride + 1
}

/// Unfold `[n, c, h, w]` into a `[c*k*k, n*ho*wo]` column matrix.
#[allow(clippy::too_many_arguments)]
pub fn im2col<T: Scalar>(
    input: &[T],
    (n, c, h, w): (usize, usize, usize, usize),
    k: usize,
    stride: usize,
    pad: usize,
    col: &mut [T],
) -> (usize, usize) {
    let ho = conv_out_side(h, k, stride, pad);
    let wo = conv_out_side(w, k, stride, pad);
    let hw_out = ho * wo;
    let ncols = n * hw_out;
    debug_assert!(col.len() >= c * k * k * ncols);
    for ci in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let row_buf = &mut col[row * ncols..(row + 1) * ncols];
                // Output columns whose input column lands inside the image.
                let lo = pad.saturating_sub(kx).div_ceil(stride).min(wo);
                let hi = if w + pad > kx { ((w + pad - kx - 1) / stride + 1).min(wo) } else { 0 }.max(lo);
                for b in 0..n {
                    let src = &input[(b * c + ci) * h * w..(b * c + ci + 1) * h * w];
                    for oy in 0..ho {
                        let dst = &mut row_buf[b * hw_out + oy * wo..b * hw_out + (oy + 1) * wo];
                        let iy = (oy * stride + ky) as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            dst.fill(T::zero());
                            continue;
                        }
                        let src_row = &src[iy as usize * w..(iy as usize + 1) * w];
                        dst[..lo].fill(T::zero());
                        dst[hi..].fill(T::zero());
                        let first = lo * stride + kx - pad;
                        if stride == 1 {
                            dst[lo..hi].copy_from_slice(&src_row[first..first + hi - lo]);
                        } else {
                            for (j, d) in dst[lo..hi].iter_mut().enumerate() {
                                *d = src_row[first + j * stride];
                            }
                        }
                    }
                }
            }
        }
    }
    (ho, wo)
}

/// Adjoint of [`im2col`]: accumulate a column matrix back onto `[n, c, h, w]`.
pub fn col2im<T: Scalar>(
    col: &[T],
    (n, c, h, w): (usize, usize, usize, usize),
    k: usize,
    stride: usize,
    pad: usize,
    out: &mut [T],
) {
    let ho = conv_out_side(h, k, stride, pad);
    let wo = conv_out_side(w, k, stride, pad);
    let hw_out = ho * wo;
    let ncols = n * hw_out;
    out.fill(T::zero());
    for ci in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let row_buf = &col[row * ncols..(row + 1) * ncols];
                let lo = pad.saturating_sub(kx).div_ceil(stride).min(wo);
                let hi = if w + pad > kx { ((w + pad - kx - 1) / stride + 1).min(wo) } else { 0 }.max(lo);
                for b in 0..n {
                    let dst = &mut out[(b * c + ci) * h * w..(b * c + ci + 1) * h * w];
                    for oy in 0..ho {
                        let iy = (oy * stride + ky) as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let src = &row_buf[b * hw_out + oy * wo + lo..b * hw_out + oy * wo + hi];
                        let dst_row = &mut dst[iy as usize * w..(iy as usize + 1) * w];
                        let first = lo * stride + kx - pad;
                        for (j, &v) in src.iter().enumerate() {
                            dst_row[first + j * stride] += v;
                        }
                    }
                }
            }
        }
    }
}

/// Images per GEMM; small maps are grouped so each product has a few hundred columns.
fn chunk_images(hw: usize, n: usize) -> usize {
    (256 / hw.max(1)).clamp(1, n.max(1))
}

/// `[n, c, hw]` to `[c, n*hw]`.
fn channels_major_into<T: Scalar>(x: &[T], n: usize, c: usize, hw: usize, out: &mut [T]) {
    for b in 0..n {
        for ch in 0..c {
            out[ch * n * hw + b * hw..ch * n * hw + (b + 1) * hw]
                .copy_from_slice(&x[(b * c + ch) * hw..(b * c + ch + 1) * hw]);
        }
    }
}

/// `[c, n*hw]` to `[n, c, hw]`.
fn batch_major_into<T: Scalar>(x: &[T], n: usize, c: usize, hw: usize, out: &mut [T]) {
    for b in 0..n {
        for ch in 0..c {
            out[(b * c + ch) * hw..(b * c + ch + 1) * hw]
                .copy_from_slice(&x[ch * n * hw + b * hw..ch * n * hw + (b + 1) * hw]);
        }
    }
}

fn add_channel_bias<T: Scalar>(y: &mut [T], bias: &[T], hw: usize) {
    for (plane, &b) in y.chunks_mut(hw).zip(bias.iter().cycle()) {
        plane.iter_mut().for_each(|v| *v += b);
    }
}

fn bias_grad<T: Scalar>(dy: &[T], c: usize, hw: usize, grad: &mut [T]) {
    for (i, plane) in dy.chunks(hw).enumerate() {
        grad[i % c] += plane.iter().copied().sum::<T>();
    }
}

fn normal_tensor<T: Scalar>(shape: &[usize], std: f64, rng: &mut impl Rng) -> Tensor<T> {
    let dist = Normal::new(0.0, std).expect("valid std");
    let len = shape.iter().product();
    let data = (0..len).map(|_| T::lit(dist.sample(rng))).collect();
    Tensor::from_vec(shape, data).expect("shape matches")
}

/// 2-D convolution, weight layout `[out, in, k, k]`.
///
/// Images are unfolded one at a time so the column buffer stays cache-sized.
#[derive(Debug, Clone)]
pub struct Conv2d<T> {
    pub weight: Param<T>,
    pub bias: Option<Param<T>>,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    cache: Option<Tensor<T>>,
}

impl<T: Scalar> Conv2d<T> {
    /// Kaiming-normal (fan-out) initialisation.
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        bias: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let std = (2.0 / (out_channels * kernel * kernel) as f64).sqrt();
        let weight = Param::new(normal_tensor(&[out_channels, in_channels, kernel, kernel], std, rng));
        let bias = bias.then(|| Param::new(Tensor::zeros(&[out_channels])));
        Self { weight, bias, in_channels, out_channels, kernel, stride, pad, cache: None }
    }

    pub fn out_side(&self, side: usize) -> usize {
        conv_out_side(side, self.kernel, self.stride, self.pad)
    }

    pub fn forward(&mut self, x: &Tensor<T>, train: bool) -> Tensor<T> {
        let (n, c, h, w) = x.dims4();
        assert_eq!(c, self.in_channels, "conv input channels");
        let ckk = c * self.kernel * self.kernel;
        let (ho, wo) = (self.out_side(h), self.out_side(w));
        let (hw_in, hw) = (h * w, ho * wo);
        let oc = self.out_channels;
        let chunk = chunk_images(hw, n);
        let mut y = vec![T::zero(); n * oc * hw];
        let mut col = vec![T::zero(); ckk * hw * chunk];
        let mut out = vec![T::zero(); if chunk > 1 { oc * hw * chunk } else { 0 }];
        for b0 in (0..n).step_by(chunk) {
            let m = chunk.min(n - b0);
            let xb = &x.data()[b0 * c * hw_in..(b0 + m) * c * hw_in];
            im2col(xb, (m, c, h, w), self.kernel, self.stride, self.pad, &mut col);
            let yb = &mut y[b0 * oc * hw..(b0 + m) * oc * hw];
            let dst: &mut [T] = if chunk > 1 { &mut out } else { yb };
            gemm(
                T::one(),
                MatRef::row_major(self.weight.value.data(), oc, ckk),
                MatRef::row_major(&col[..ckk * hw * m], ckk, hw * m),
                T::zero(),
                dst,
            );
            if chunk > 1 {
                batch_major_into(&out[..oc * hw * m], m, oc, hw, &mut y[b0 * oc * hw..(b0 + m) * oc * hw]);
            }
        }
        if let Some(bias) = self.bias.as_ref() {
            add_channel_bias(&mut y, bias.value.data(), hw);
        }
        self.cache = train.then(|| x.clone());
        Tensor::from_vec(&[n, oc, ho, wo], y).expect("conv output shape")
    }

    pub fn backward(&mut self, dy: &Tensor<T>) -> Tensor<T> {
        self.backward_inner(dy, true).expect("input gradient requested")
    }

    /// Accumulate parameter gradients only; used at the network input.
    pub fn backward_weights(&mut self, dy: &Tensor<T>) {
        self.backward_inner(dy, false);
    }

    fn backward_inner(&mut self, dy: &Tensor<T>, input_grad: bool) -> Option<Tensor<T>> {
        let x = self.cache.take().expect("conv backward without a training forward");
        let (n, c, h, w) = x.dims4();
        let ckk = c * self.kernel * self.kernel;
        let (_, oc, ho, wo) = dy.dims4();
        let (hw_in, hw) = (h * w, ho * wo);
        if let Some(b) = self.bias.as_mut() {
            bias_grad(dy.data(), oc, hw, &mut b.grad);
        }
        let chunk = chunk_images(hw, n);
        let mut col = vec![T::zero(); ckk * hw * chunk];
        let mut dy_t = vec![T::zero(); oc * hw * chunk];
        let mut dw_t = vec![T::zero(); ckk * oc];
        let mut dcol = vec![T::zero(); if input_grad { ckk * hw * chunk } else { 0 }];
        let mut dy_cm = vec![T::zero(); if chunk > 1 { oc * hw * chunk } else { 0 }];
        let mut dx = vec![T::zero(); if input_grad { n * c * hw_in } else { 0 }];
        for b0 in (0..n).step_by(chunk) {
            let m = chunk.min(n - b0);
            let cols = hw * m;
            let xb = &x.data()[b0 * c * hw_in..(b0 + m) * c * hw_in];
            let dyb = &dy.data()[b0 * oc * hw..(b0 + m) * oc * hw];
            let dyb: &[T] = if chunk > 1 {
                channels_major_into(dyb, m, oc, hw, &mut dy_cm[..oc * cols]);
                &dy_cm[..oc * cols]
            } else {
                dyb
            };
            im2col(xb, (m, c, h, w), self.kernel, self.stride, self.pad, &mut col);
            transpose_into(dyb, oc, cols, &mut dy_t);
            gemm(
                T::one(),
                MatRef::row_major(&col[..ckk * cols], ckk, cols),
                MatRef::row_major(&dy_t[..oc * cols], cols, oc),
                T::one(),
                &mut dw_t,
            );
            if !input_grad {
                continue;
            }
            gemm(
                T::one(),
                MatRef::row_major(self.weight.value.data(), oc, ckk).t(),
                MatRef::row_major(dyb, oc, cols),
                T::zero(),
                &mut dcol[..ckk * cols],
            );
            let dxb = &mut dx[b0 * c * hw_in..(b0 + m) * c * hw_in];
            col2im(&dcol[..ckk * cols], (m, c, h, w), self.kernel, self.stride, self.pad, dxb);
        }
        for (k, row) in dw_t.chunks(oc).enumerate() {
            for (o, &g) in row.iter().enumerate() {
                self.weight.grad[o * ckk + k] += g;
            }
        }
        input_grad.then(|| Tensor::from_vec(&[n, c, h, w], dx).expect("conv grad shape"))
    }
}

impl<T: Scalar> Module<T> for Conv2d<T> {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        f(&join_name(prefix, "weight"), &mut self.weight);
        if let Some(b) = self.bias.as_mut() {
            f(&join_name(prefix, "bias"), b);
        }
    }
}

/// Transposed 2-D convolution, weight layout `[in, out, k, k]`.
///
/// Output side is `(side - 1) * stride - 2 * pad + kernel`.
#[derive(Debug, Clone)]
pub struct ConvTranspose2d<T> {
    pub weight: Param<T>,
    pub bias: Option<Param<T>>,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    cache: Option<Tensor<T>>,
}

impl<T: Scalar> ConvTranspose2d<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        bias: bool,
        std: f64,
        rng: &mut impl Rng,
    ) -> Self {
        let weight = Param::new(normal_tensor(&[in_channels, out_channels, kernel, kernel], std, rng));
        let bias = bias.then(|| Param::new(Tensor::zeros(&[out_channels])));
        Self { weight, bias, in_channels, out_channels, kernel, stride, pad, cache: None }
    }

    pub fn out_side(&self, side: usize) -> usize {
        (side - 1) * self.stride + self.kernel - 2 * self.pad
    }

    pub fn forward(&mut self, x: &Tensor<T>, train: bool) -> Tensor<T> {
        let (n, c, h, w) = x.dims4();
        assert_eq!(c, self.in_channels, "transpose conv input channels");
        let oc = self.out_channels;
        let okk = oc * self.kernel * self.kernel;
        let (ho, wo) = (self.out_side(h), self.out_side(w));
        let (hw_in, hw) = (h * w, ho * wo);
        let mut cols = vec![T::zero(); okk * hw_in];
        let mut y = vec![T::zero(); n * oc * hw];
        for b in 0..n {
            gemm(
                T::one(),
                MatRef::row_major(self.weight.value.data(), c, okk).t(),
                MatRef::row_major(&x.data()[b * c * hw_in..(b + 1) * c * hw_in], c, hw_in),
                T::zero(),
                &mut cols,
            );
            col2im(&cols, (1, oc, ho, wo), self.kernel, self.stride, self.pad, &mut y[b * oc * hw..(b + 1) * oc * hw]);
        }
        if let Some(bias) = self.bias.as_ref() {
            add_channel_bias(&mut y, bias.value.data(), hw);
        }
        self.cache = train.then(|| x.clone());
        Tensor::from_vec(&[n, oc, ho, wo], y).expect("transpose conv shape")
    }

    pub fn backward(&mut self, dy: &Tensor<T>) -> Tensor<T> {
        let x = self.cache.take().expect("transpose conv backward without a training forward");
        let (n, c, h, w) = x.dims4();
        let (_, oc, ho, wo) = dy.dims4();
        let okk = oc * self.kernel * self.kernel;
        let (hw_in, hw) = (h * w, ho * wo);
        if let Some(b) = self.bias.as_mut() {
            bias_grad(dy.data(), oc, hw, &mut b.grad);
        }
        let mut dcols = vec![T::zero(); okk * hw_in];
        let mut dcols_t = vec![T::zero(); okk * hw_in];
        let mut dx = vec![T::zero(); n * c * hw_in];
        for b in 0..n {
            im2col(&dy.data()[b * oc * hw..(b + 1) * oc * hw], (1, oc, ho, wo), self.kernel, self.stride, self.pad, &mut dcols);
            transpose_into(&dcols, okk, hw_in, &mut dcols_t);
            gemm(
                T::one(),
                MatRef::row_major(&x.data()[b * c * hw_in..(b + 1) * c * hw_in], c, hw_in),
                MatRef::row_major(&dcols_t, hw_in, okk),
                T::one(),
                &mut self.weight.grad,
            );
            gemm(
                T::one(),
                MatRef::row_major(self.weight.value.data(), c, okk),
                MatRef::row_major(&dcols, okk, hw_in),
                T::zero(),
                &mut dx[b * c * hw_in..(b + 1) * c * hw_in],
            );
        }
        Tensor::from_vec(&[n, c, h, w], dx).expect("transpose conv grad shape")
    }
}

impl<T: Scalar> Module<T> for ConvTranspose2d<T> {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        f(&join_name(prefix, "weight"), &mut self.weight);
        if let Some(b) = self.bias.as_mut() {
            f(&join_name(prefix, "bias"), b);
        }
    }
}
