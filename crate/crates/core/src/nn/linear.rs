use rand::Rng;
use rand_distr::{Distribution, Uniform};

use super::param::{join_name, Module, Param};
use crate::scalar::{gemm, MatRef, Scalar};
use crate::tensor::Tensor;

/// Fully connected layer, weight `[out, in]`, `y = x W^T + b`.
#[derive(Debug, Clone)]
pub struct Linear<T> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    pub in_dim: usize,
    pub out_dim: usize,
    cache: Option<Tensor<T>>,
}

impl<T: Scalar> Linear<T> {
    /// Uniform `(-1/sqrt(in), 1/sqrt(in))` initialisation for weights and bias.
    pub fn new(in_dim: usize, out_dim: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound).expect("valid bound");
        let w = (0..in_dim * out_dim).map(|_| T::lit(dist.sample(rng))).collect();
        let b = (0..out_dim).map(|_| T::lit(dist.sample(rng))).collect();
        Self {
            weight: Param::new(Tensor::from_vec(&[out_dim, in_dim], w).expect("linear weight")),
            bias: Param::new(Tensor::from_vec(&[out_dim], b).expect("linear bias")),
            in_dim,
            out_dim,
            cache: None,
        }
    }

    /// All-zero weights and bias (convex probes start here).
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            weight: Param::new(Tensor::zeros(&[out_dim, in_dim])),
            bias: Param::new(Tensor::zeros(&[out_dim])),
            in_dim,
            out_dim,
            cache: None,
        }
    }

    pub fn forward(&mut self, x: &Tensor<T>, train: bool) -> Tensor<T> {
        let (n, d) = x.dims2();
        assert_eq!(d, self.in_dim, "linear input dim");
        let mut y = Vec::with_capacity(n * self.out_dim);
        for _ in 0..n {
            y.extend_from_slice(self.bias.value.data());
        }
        gemm(
            T::one(),
            MatRef::row_major(x.data(), n, d),
            MatRef::row_major(self.weight.value.data(), self.out_dim, d).t(),
            T::one(),
            &mut y,
        );
        self.cache = train.then(|| x.clone());
        Tensor::from_vec(&[n, self.out_dim], y).expect("linear output")
    }

    pub fn backward(&mut self, dy: &Tensor<T>) -> Tensor<T> {
        let x = self.cache.take().expect("linear backward without a training forward");
        let (n, d) = x.dims2();
        gemm(
            T::one(),
            MatRef::row_major(dy.data(), n, self.out_dim).t(),
            MatRef::row_major(x.data(), n, d),
            T::one(),
            &mut self.weight.grad,
        );
        for row in dy.data().chunks(self.out_dim) {
            for (g, &v) in self.bias.grad.iter_mut().zip(row) {
                *g += v;
            }
        }
        let mut dx = vec![T::zero(); n * d];
        gemm(
            T::one(),
            MatRef::row_major(dy.data(), n, self.out_dim),
            MatRef::row_major(self.weight.value.data(), self.out_dim, d),
            T::zero(),
            &mut dx,
        );
        Tensor::from_vec(&[n, d], dx).expect("linear grad")
    }
}

impl<T: Scalar> Module<T> for Linear<T> {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        f(&join_name(prefix, "weight"), &mut self.weight);
        f(&join_name(prefix, "bias"), &mut self.bias);
    }
}
