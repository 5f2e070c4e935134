use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Row-wise log-softmax of `[n, k]` logits.
pub fn log_softmax_rows<T: Scalar>(logits: &Tensor<T>) -> Vec<T> {
    let (_, k) = logits.dims2();
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.data().chunks(k) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
        out.extend(row.iter().map(|&v| v - lse));
    }
    out
}

/// Mean softmax cross-entropy with its gradient.
#[derive(Debug, Clone)]
pub struct CrossEntropy<T> {
    pub loss: T,
    pub grad: Tensor<T>,
    pub correct: usize,
}

pub fn softmax_cross_entropy<T: Scalar>(logits: &Tensor<T>, targets: &[usize]) -> CrossEntropy<T> {
    let (n, k) = logits.dims2();
    assert_eq!(n, targets.len(), "one target per row");
    let logp = log_softmax_rows(logits);
    let inv_n = T::one() / T::from_usize_lossy(n);
    let mut loss = T::zero();
    let mut correct = 0;
    let mut grad = Vec::with_capacity(n * k);
    for (i, &t) in targets.iter().enumerate() {
        let row = &logp[i * k..(i + 1) * k];
        loss -= row[t];
        let argmax = argmax(row);
        if argmax == t {
            correct += 1;
        }
        grad.extend(row.iter().enumerate().map(|(j, &lp)| {
            let p = lp.exp();
            (if j == t { p - T::one() } else { p }) * inv_n
        }));
    }
    CrossEntropy { loss: loss * inv_n, grad: Tensor::from_vec(&[n, k], grad).expect("ce grad"), correct }
}

/// Index of the largest entry; first wins on ties.
pub fn argmax<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = j;
        }
    }
    best
}
