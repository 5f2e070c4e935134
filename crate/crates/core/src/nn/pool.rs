use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Adaptive pooling bins: bin `i` of `g` over a side of length `n` spans
/// `floor(i n / g) .. ceil((i + 1) n / g)`. Bins overlap when `g` does not divide `n`.
pub fn pool_bins(n: usize, g: usize) -> Vec<(usize, usize)> {
    (0..g).map(|i| ((i * n) / g, ((i + 1) * n).div_ceil(g))).collect()
}

/// Adaptive average pooling of `[n, c, h, w]` onto a `g x g` grid, flattened to
/// `[n, c * g * g]` in channel-major order.
pub fn adaptive_avg_pool<T: Scalar>(x: &Tensor<T>, g: usize) -> Tensor<T> {
    let (n, c, h, w) = x.dims4();
    let rows = pool_bins(h, g);
    let cols = pool_bins(w, g);
    let xd = x.data();
    let mut out = Vec::with_capacity(n * c * g * g);
    for plane in xd.chunks(h * w).take(n * c) {
        for &(y0, y1) in &rows {
            for &(x0, x1) in &cols {
                let mut acc = T::zero();
                for y in y0..y1 {
                    acc += plane[y * w + x0..y * w + x1].iter().copied().sum::<T>();
                }
                out.push(acc / T::from_usize_lossy((y1 - y0) * (x1 - x0)));
            }
        }
    }
    Tensor::from_vec(&[n, c * g * g], out).expect("pool shape")
}

pub fn adaptive_avg_pool_backward<T: Scalar>(
    dy: &Tensor<T>,
    (n, c, h, w): (usize, usize, usize, usize),
    g: usize,
) -> Tensor<T> {
    let rows = pool_bins(h, g);
    let cols = pool_bins(w, g);
    let mut dx = vec![T::zero(); n * c * h * w];
    for (p, plane) in dx.chunks_mut(h * w).enumerate() {
        let grads = &dy.data()[p * g * g..(p + 1) * g * g];
        for (gy, &(y0, y1)) in rows.iter().enumerate() {
            for (gx, &(x0, x1)) in cols.iter().enumerate() {
                let share = grads[gy * g + gx] / T::from_usize_lossy((y1 - y0) * (x1 - x0));
                for y in y0..y1 {
                    for v in &mut plane[y * w + x0..y * w + x1] {
                        *v += share;
                    }
                }
            }
        }
    }
    Tensor::from_vec(&[n, c, h, w], dx).expect("pool grad shape")
}
