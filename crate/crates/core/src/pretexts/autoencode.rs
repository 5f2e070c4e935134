use crate::error::{invalid, shape_err, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

fn check<T: Scalar>(original: &Tensor<T>, reconstruction: &Tensor<T>) -> Result<()> {
    if original.shape() != reconstruction.shape() {
        return Err(shape_err(original.shape(), reconstruction.shape()));
    }
    if original.is_empty() {
        return Err(invalid("reconstruction loss of an empty tensor"));
    }
    let bound = T::one() + T::lit(1e-6);
    if reconstruction.data().iter().any(|v| v.abs() > bound || v.is_nan()) {
        return Err(invalid("reconstruction values must lie in [-1, 1]"));
    }
    Ok(())
}

/// Mean squared error over every pixel and channel.
pub fn reconstruction_loss<T: Scalar>(original: &Tensor<T>, reconstruction: &Tensor<T>) -> Result<T> {
    check(original, reconstruction)?;
    let sum: T = original.data().iter().zip(reconstruction.data()).map(|(&a, &b)| (a - b) * (a - b)).sum();
    Ok(sum / T::from_usize_lossy(original.len()))
}

/// Loss and its gradient with respect to the reconstruction.
pub fn reconstruction_loss_grad<T: Scalar>(original: &Tensor<T>, reconstruction: &Tensor<T>) -> Result<(T, Tensor<T>)> {
    let loss = reconstruction_loss(original, reconstruction)?;
    let scale = T::lit(2.0) / T::from_usize_lossy(original.len());
    let grad = original.data().iter().zip(reconstruction.data()).map(|(&a, &b)| scale * (b - a)).collect();
    Ok((loss, Tensor::from_vec(original.shape(), grad)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_is_zero_and_opposite_extremes_are_four() {
        let a = Tensor::<f64>::full(&[2, 3, 4, 4], 0.3);
        assert_eq!(reconstruction_loss(&a, &a).unwrap(), 0.0);
        let hi = Tensor::<f64>::full(&[1, 3, 8, 8], 1.0);
        let lo = Tensor::<f64>::full(&[1, 3, 8, 8], -1.0);
        assert_eq!(reconstruction_loss(&hi, &lo).unwrap(), 4.0);
    }

    #[test]
    fn random_pair_matches_elementwise_oracle() {
        let a: Vec<f64> = (0..48).map(|i| ((i * 37 % 17) as f64 / 8.5) - 1.0).collect();
        let b: Vec<f64> = (0..48).map(|i| ((i * 11 % 13) as f64 / 6.5) - 1.0).collect();
        let mut oracle = 0.0;
        for i in 0..48 {
            oracle += (a[i] - b[i]).powi(2);
        }
        oracle /= 48.0;
        let ta = Tensor::from_vec(&[1, 3, 4, 4], a).unwrap();
        let tb = Tensor::from_vec(&[1, 3, 4, 4], b).unwrap();
        assert!((reconstruction_loss(&ta, &tb).unwrap() - oracle).abs() < 1e-7);
    }

    #[test]
    fn shape_mismatch_and_range_errors() {
        let a = Tensor::<f64>::zeros(&[1, 3, 4, 4]);
        let b = Tensor::<f64>::zeros(&[1, 3, 4, 5]);
        assert!(reconstruction_loss(&a, &b).is_err());
        let c = Tensor::<f64>::full(&[1, 3, 4, 4], 1.5);
        assert!(reconstruction_loss(&a, &c).is_err());
    }
}
