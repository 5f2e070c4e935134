use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// A named tensor owned by a layer, with its gradient and momentum buffers.
///
/// Non-trainable params (batch-norm running statistics) are checkpointed but
/// never touched by the optimizer.
#[derive(Debug, Clone)]
pub struct Param<T> {
    pub value: Tensor<T>,
    pub grad: Vec<T>,
    pub velocity: Vec<T>,
    pub trainable: bool,
}

impl<T: Scalar> Param<T> {
    pub fn new(value: Tensor<T>) -> Self {
        let n = value.len();
        Self { value, grad: vec![T::zero(); n], velocity: vec![T::zero(); n], trainable: true }
    }

    pub fn buffer(value: Tensor<T>) -> Self {
        Self { trainable: false, ..Self::new(value) }
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = T::zero());
    }
}

/// Anything that owns parameters.
pub trait Module<T: Scalar> {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>));

    fn zero_grad(&mut self) {
        self.visit("", &mut |_, p| p.zero_grad());
    }

    /// Number of trainable scalars.
    fn param_count(&mut self) -> usize {
        let mut total = 0;
        self.visit("", &mut |_, p| {
            if p.trainable {
                total += p.value.len();
            }
        });
        total
    }
}

pub fn join_name(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}
