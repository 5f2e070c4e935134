use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Default)]
pub struct Relu {
    mask: Option<Vec<bool>>,
}

impl Relu {
    pub fn forward<T: Scalar>(&mut self, x: &Tensor<T>, train: bool) -> Tensor<T> {
        if train {
            self.mask = Some(x.data().iter().map(|&v| v > T::zero()).collect());
        }
        x.map(|v| if v > T::zero() { v } else { T::zero() })
    }

    pub fn backward<T: Scalar>(&mut self, dy: &Tensor<T>) -> Tensor<T> {
        let mask = self.mask.take().expect("relu backward without a training forward");
        let data = dy.data().iter().zip(&mask).map(|(&g, &m)| if m { g } else { T::zero() }).collect();
        Tensor::from_vec(dy.shape(), data).expect("relu grad")
    }
}

#[derive(Debug, Clone)]
pub struct Tanh<T> {
    out: Option<Tensor<T>>,
}

impl<T> Default for Tanh<T> {
    fn default() -> Self {
        Self { out: None }
    }
}

impl<T: Scalar> Tanh<T> {
    pub fn forward(&mut self, x: &Tensor<T>, train: bool) -> Tensor<T> {
        let y = x.map(|v| v.tanh());
        if train {
            self.out = Some(y.clone());
        }
        y
    }

    pub fn backward(&mut self, dy: &Tensor<T>) -> Tensor<T> {
        let y = self.out.take().expect("tanh backward without a training forward");
        let data = dy.data().iter().zip(y.data()).map(|(&g, &v)| g * (T::one() - v * v)).collect();
        Tensor::from_vec(dy.shape(), data).expect("tanh grad")
    }
}
