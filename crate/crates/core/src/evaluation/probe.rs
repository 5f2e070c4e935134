use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::FeatureMatrix;
use crate::error::{invalid, Error, Result};
use crate::nn::{argmax, softmax_cross_entropy, Linear, Module, Param};
use crate::scalar::Scalar;
use crate::seed::{stage_rng, stage_seed};
use crate::tensor::Tensor;
use crate::training::{label_fraction_subset, run_epochs, sgd_step, EarlierStopRule, EpochStats, OptimConfig, TrainingCurve};

/// Features paired with one class label per row.
#[derive(Debug, Clone, Copy)]
pub struct LabeledFeatures<'a> {
    pub features: &'a FeatureMatrix,
    pub labels: &'a [usize],
}

impl<'a> LabeledFeatures<'a> {
    pub fn new(features: &'a FeatureMatrix, labels: &'a [usize]) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(invalid(format!("{} feature rows but {} labels", features.rows(), labels.len())));
        }
        Ok(Self { features, labels })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub optim: OptimConfig,
    pub label_fraction: f64,
    /// Z-score each feature with TRAIN-subset statistics before fitting.
    pub standardize: bool,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self { optim: OptimConfig::probe(), label_fraction: 1.0, standardize: false }
    }
}

impl ProbeConfig {
    pub fn with_fraction(label_fraction: f64) -> Self {
        Self { label_fraction, ..Self::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub pretext: String,
    pub pooled_dim: Option<usize>,
    pub label_fraction: f64,
    pub standardized: bool,
    /// Labeled TRAIN rows the probe was fitted on.
    pub train_rows: usize,
    pub train_acc: f64,
    pub val_acc: Option<f64>,
    pub test_acc: Option<f64>,
}

/// A fitted probe: the linear layer plus the standardization it expects.
#[derive(Debug, Clone)]
pub struct LinearProbe<T> {
    pub linear: Linear<T>,
    shift: Vec<T>,
    scale: Vec<T>,
}

impl<T: Scalar> LinearProbe<T> {
    fn rows_tensor(&self, features: &FeatureMatrix, rows: &[usize]) -> Tensor<T> {
        let d = features.dim();
        let mut data = Vec::with_capacity(rows.len() * d);
        for &r in rows {
            data.extend(
                features.row(r).iter().zip(self.shift.iter().zip(&self.scale)).map(|(&v, (&m, &s))| (T::lit(v as f64) - m) * s),
            );
        }
        Tensor::from_vec(&[rows.len(), d], data).expect("probe batch")
    }

    pub fn predict(&mut self, features: &FeatureMatrix) -> Result<Vec<usize>> {
        if features.dim() != self.linear.in_dim {
            return Err(invalid(format!("probe expects dim {}, got {}", self.linear.in_dim, features.dim())));
        }
        let rows: Vec<usize> = (0..features.rows()).collect();
        let mut out = Vec::with_capacity(rows.len());
        for chunk in rows.chunks(256) {
            let logits = self.linear.forward(&self.rows_tensor(features, chunk), false);
            out.extend(logits.data().chunks(self.linear.out_dim).map(argmax));
        }
        Ok(out)
    }

    pub fn accuracy(&mut self, data: LabeledFeatures<'_>) -> Result<f64> {
        if data.labels.is_empty() {
            return Err(invalid("no rows to evaluate"));
        }
        let pred = self.predict(data.features)?;
        Ok(pred.iter().zip(data.labels).filter(|(p, l)| p == l).count() as f64 / data.labels.len() as f64)
    }
}

impl<T: Scalar> Module<T> for LinearProbe<T> {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        self.linear.visit(prefix, f);
    }
}

/// Everything a probe fit produces.
#[derive(Debug, Clone)]
pub struct ProbeRun<T> {
    pub result: ProbeResult,
    pub probe: LinearProbe<T>,
    pub curve: TrainingCurve,
}

fn check_split(name: &str, data: &LabeledFeatures<'_>, dim: usize, class_count: usize) -> Result<()> {
    if data.features.rows() != data.labels.len() {
        return Err(invalid(format!("{name}: {} feature rows but {} labels", data.features.rows(), data.labels.len())));
    }
    if data.features.dim() != dim {
        return Err(invalid(format!("{name}: feature dim {} differs from TRAIN dim {dim}", data.features.dim())));
    }
    if let Some(&l) = data.labels.iter().find(|&&l| l >= class_count) {
        return Err(invalid(format!("{name}: label {l} out of range for {class_count} classes")));
    }
    Ok(())
}

/// Multinomial logistic regression on frozen features, zero-initialised, fitted
/// by minibatch SGD on a stratified `label_fraction` of TRAIN.
pub fn train_linear_probe<T: Scalar>(
    train: LabeledFeatures<'_>,
    val: Option<LabeledFeatures<'_>>,
    test: Option<LabeledFeatures<'_>>,
    class_count: usize,
    config: &ProbeConfig,
    seed: u64,
) -> Result<ProbeRun<T>> {
    let dim = train.features.dim();
    check_split("train", &train, dim, class_count)?;
    for (name, split) in [("val", &val), ("test", &test)] {
        if let Some(s) = split {
            check_split(name, s, dim, class_count)?;
        }
    }
    if train.labels.iter().collect::<BTreeSet<_>>().len() < 2 {
        return Err(invalid("probe needs labels from at least two classes"));
    }
    let subset = label_fraction_subset(train.labels, class_count, config.label_fraction, stage_seed(seed, "probe/labels"))?;
    if subset.iter().map(|&i| train.labels[i]).collect::<BTreeSet<_>>().len() < 2 {
        return Err(invalid("labeled subset covers a single class"));
    }

    let (shift, scale) = if config.standardize {
        let n = T::from_usize_lossy(subset.len());
        let mut mean = vec![T::zero(); dim];
        for &i in &subset {
            mean.iter_mut().zip(train.features.row(i)).for_each(|(m, &v)| *m += T::lit(v as f64) / n);
        }
        let mut var = vec![T::zero(); dim];
        for &i in &subset {
            for ((s, &v), &m) in var.iter_mut().zip(train.features.row(i)).zip(&mean) {
                let d = T::lit(v as f64) - m;
                *s += d * d / n;
            }
        }
        let scale = var.iter().map(|&v| if v > T::lit(1e-12) { T::one() / v.sqrt() } else { T::one() }).collect();
        (mean, scale)
    } else {
        (vec![T::zero(); dim], vec![T::one(); dim])
    };
    let mut probe = LinearProbe { linear: Linear::zeros(dim, class_count), shift, scale };

    let optim = &config.optim;
    let curve = run_epochs(optim, &EarlierStopRule::disabled(), None, |epoch, lr| {
        let mut order = subset.clone();
        order.shuffle(&mut stage_rng(seed, &format!("probe/shuffle/{epoch}")));
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for rows in order.chunks(optim.batch_size) {
            probe.zero_grad();
            let x = probe.rows_tensor(train.features, rows);
            let targets: Vec<usize> = rows.iter().map(|&i| train.labels[i]).collect();
            let logits = probe.linear.forward(&x, true);
            let ce = softmax_cross_entropy(&logits, &targets);
            let loss = ce.loss.as_f64();
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch });
            }
            probe.linear.backward(&ce.grad);
            sgd_step(&mut probe, lr, optim.momentum);
            loss_sum += loss * rows.len() as f64;
            correct += ce.correct;
        }
        let acc = correct as f64 / subset.len() as f64;
        let val_metric = match val {
            Some(v) => probe.accuracy(v)?,
            None => acc,
        };
        Ok(EpochStats { train_metric: loss_sum / subset.len() as f64, train_accuracy: Some(acc), val_metric })
    })?;

    let labels: Vec<usize> = subset.iter().map(|&i| train.labels[i]).collect();
    let rows: Vec<usize> = subset.clone();
    let mut correct = 0;
    for chunk in rows.chunks(256).zip(labels.chunks(256)) {
        let logits = probe.linear.forward(&probe.rows_tensor(train.features, chunk.0), false);
        correct += logits.data().chunks(class_count).zip(chunk.1).filter(|(r, &l)| argmax(r) == l).count();
    }
    let train_acc = correct as f64 / subset.len() as f64;
    let val_acc = val.map(|v| probe.accuracy(v)).transpose()?;
    let test_acc = test.map(|t| probe.accuracy(t)).transpose()?;
    let result = ProbeResult {
        pretext: train.features.source().pretext.clone(),
        pooled_dim: train.features.pooled_dim().map(|p| p.nominal()),
        label_fraction: config.label_fraction,
        standardized: config.standardize,
        train_rows: subset.len(),
        train_acc,
        val_acc,
        test_acc,
    };
    Ok(ProbeRun { result, probe, curve })
}

/// Downstream accuracy relative to the fully supervised baseline.
pub fn normalized_accuracy(pretext_acc: f64, supervised_acc: f64) -> Result<f64> {
    if !(supervised_acc > 0.0) || !supervised_acc.is_finite() {
        return Err(invalid(format!("supervised accuracy {supervised_acc} must be positive")));
    }
    if !(0.0..=1.0).contains(&pretext_acc) {
        return Err(invalid(format!("pretext accuracy {pretext_acc} not in [0, 1]")));
    }
    Ok(pretext_acc / supervised_acc)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalized_accuracy_arithmetic() {
        assert_eq!(normalized_accuracy(0.4, 0.8).unwrap(), 0.5);
        assert_eq!(normalized_accuracy(0.7, 0.7).unwrap(), 1.0);
        assert!(normalized_accuracy(0.4, 0.0).is_err());
        assert!(normalized_accuracy(1.2, 0.5).is_err());
    }
}
