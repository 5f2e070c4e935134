use super::param::{join_name, Module, Param};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
struct BnCache<T> {
    xhat: Vec<T>,
    inv_std: Vec<T>,
    dims: (usize, usize, usize, usize),
}

/// Per-channel batch normalisation over `(n, h, w)`.
///
/// Training uses batch statistics (biased variance) and updates the running
/// estimates with momentum 0.1 and the unbiased variance; evaluation uses the
/// running estimates.
#[derive(Debug, Clone)]
pub struct BatchNorm2d<T> {
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub running_mean: Param<T>,
    pub running_var: Param<T>,
    pub momentum: T,
    pub eps: T,
    cache: Option<BnCache<T>>,
}

impl<T: Scalar> BatchNorm2d<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Param::new(Tensor::full(&[channels], T::one())),
            beta: Param::new(Tensor::zeros(&[channels])),
            running_mean: Param::buffer(Tensor::zeros(&[channels])),
            running_var: Param::buffer(Tensor::full(&[channels], T::one())),
            momentum: T::lit(0.1),
            eps: T::lit(1e-5),
            cache: None,
        }
    }

    pub fn forward(&mut self, x: &Tensor<T>, train: bool) -> Tensor<T> {
        let (n, c, h, w) = x.dims4();
        let hw = h * w;
        let m = n * hw;
        let mut y = vec![T::zero(); x.len()];
        let mut xhat = if train { vec![T::zero(); x.len()] } else { Vec::new() };
        let mut inv_std = vec![T::zero(); c];
        let xd = x.data();
        for ch in 0..c {
            let (mean, istd) = if train {
                let mut sum = T::zero();
                for b in 0..n {
                    sum += xd[(b * c + ch) * hw..(b * c + ch + 1) * hw].iter().copied().sum::<T>();
                }
                let mean = sum / T::from_usize_lossy(m);
                let mut sq = T::zero();
                for b in 0..n {
                    for &v in &xd[(b * c + ch) * hw..(b * c + ch + 1) * hw] {
                        sq += (v - mean) * (v - mean);
                    }
                }
                let var = sq / T::from_usize_lossy(m);
                let unbiased = if m > 1 { sq / T::from_usize_lossy(m - 1) } else { var };
                let mom = self.momentum;
                let rm = &mut self.running_mean.value.data_mut()[ch];
                *rm = (T::one() - mom) * *rm + mom * mean;
                let rv = &mut self.running_var.value.data_mut()[ch];
                *rv = (T::one() - mom) * *rv + mom * unbiased;
                (mean, T::one() / (var + self.eps).sqrt())
            } else {
                let mean = self.running_mean.value.data()[ch];
                let var = self.running_var.value.data()[ch];
                (mean, T::one() / (var + self.eps).sqrt())
            };
            inv_std[ch] = istd;
            let g = self.gamma.value.data()[ch];
            let bt = self.beta.value.data()[ch];
            for b in 0..n {
                let range = (b * c + ch) * hw..(b * c + ch + 1) * hw;
                for i in range {
                    let xh = (xd[i] - mean) * istd;
                    if train {
                        xhat[i] = xh;
                    }
                    y[i] = g * xh + bt;
                }
            }
        }
        self.cache = train.then_some(BnCache { xhat, inv_std, dims: (n, c, h, w) });
        Tensor::from_vec(&[n, c, h, w], y).expect("bn shape")
    }

    pub fn backward(&mut self, dy: &Tensor<T>) -> Tensor<T> {
        let cache = self.cache.take().expect("batch norm backward without a training forward");
        let (n, c, h, w) = cache.dims;
        let hw = h * w;
        let m = T::from_usize_lossy(n * hw);
        let dyd = dy.data();
        let mut dx = vec![T::zero(); dy.len()];
        for ch in 0..c {
            let mut sum_dy = T::zero();
            let mut sum_dy_xhat = T::zero();
            for b in 0..n {
                for i in (b * c + ch) * hw..(b * c + ch + 1) * hw {
                    sum_dy += dyd[i];
                    sum_dy_xhat += dyd[i] * cache.xhat[i];
                }
            }
            self.gamma.grad[ch] += sum_dy_xhat;
            self.beta.grad[ch] += sum_dy;
            let scale = self.gamma.value.data()[ch] * cache.inv_std[ch] / m;
            for b in 0..n {
                for i in (b * c + ch) * hw..(b * c + ch + 1) * hw {
                    dx[i] = scale * (m * dyd[i] - sum_dy - cache.xhat[i] * sum_dy_xhat);
                }
            }
        }
        Tensor::from_vec(&[n, c, h, w], dx).expect("bn grad shape")
    }
}

impl<T: Scalar> Module<T> for BatchNorm2d<T> {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        f(&join_name(prefix, "gamma"), &mut self.gamma);
        f(&join_name(prefix, "beta"), &mut self.beta);
        f(&join_name(prefix, "running_mean"), &mut self.running_mean);
        f(&join_name(prefix, "running_var"), &mut self.running_var);
    }
}
