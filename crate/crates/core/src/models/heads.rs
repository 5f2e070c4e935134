use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape_text, Error, Result};
use crate::nn::{join_name, Linear, Module, Param};
use crate::pretexts::{GRID_PATCHES, ROTATION_CLASSES};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Per-patch projection width in the jigsaw head.
pub const JIGSAW_PROJECTION: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    Rotation4,
    Jigsaw,
    Supervised,
    LinearProbe,
}

impl fmt::Display for HeadKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            HeadKind::Rotation4 => "rotation4",
            HeadKind::Jigsaw => "jigsaw",
            HeadKind::Supervised => "supervised",
            HeadKind::LinearProbe => "linear_probe",
        })
    }
}

impl FromStr for HeadKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rotation4" | "rotation" => Ok(HeadKind::Rotation4),
            "jigsaw" => Ok(HeadKind::Jigsaw),
            "supervised" => Ok(HeadKind::Supervised),
            "linear_probe" | "probe" => Ok(HeadKind::LinearProbe),
            other => Err(invalid(format!("unknown head kind '{other}'"))),
        }
    }
}

/// Siamese jigsaw head: shared per-patch projection, concatenation, classifier.
#[derive(Debug, Clone)]
pub struct JigsawHead<T> {
    pub projection: Linear<T>,
    pub classifier: Linear<T>,
}

impl<T: Scalar> JigsawHead<T> {
    pub fn new(in_dim: usize, n_permutations: usize, rng: &mut impl Rng) -> Self {
        Self {
            projection: Linear::new(in_dim, JIGSAW_PROJECTION, rng),
            classifier: Linear::new(GRID_PATCHES * JIGSAW_PROJECTION, n_permutations, rng),
        }
    }

    /// `embeddings` is `[n * 9, in_dim]`, image-major then patch position.
    pub fn forward(&mut self, embeddings: &Tensor<T>, train: bool) -> Result<Tensor<T>> {
        let (rows, d) = embeddings.dims2();
        if rows % GRID_PATCHES != 0 || d != self.projection.in_dim {
            return Err(shape_text(
                format!("[9k, {}]", self.projection.in_dim),
                format!("{:?}", embeddings.shape()),
            ));
        }
        let n = rows / GRID_PATCHES;
        let p = self.projection.forward(embeddings, train).reshape(&[n, GRID_PATCHES * JIGSAW_PROJECTION])?;
        Ok(self.classifier.forward(&p, train))
    }

    pub fn backward(&mut self, dlogits: &Tensor<T>) -> Tensor<T> {
        let n = dlogits.shape()[0];
        let dp = self.classifier.backward(dlogits);
        let dp = dp.reshape(&[n * GRID_PATCHES, JIGSAW_PROJECTION]).expect("patch grad shape");
        self.projection.backward(&dp)
    }
}

/// A head on top of encoder features.
#[derive(Debug, Clone)]
pub enum Head<T> {
    Linear(Linear<T>),
    Jigsaw(JigsawHead<T>),
}

impl<T: Scalar> Head<T> {
    pub fn forward(&mut self, x: &Tensor<T>, train: bool) -> Result<Tensor<T>> {
        match self {
            Head::Linear(l) => {
                if x.shape().len() != 2 || x.shape()[1] != l.in_dim {
                    return Err(shape_text(format!("[n, {}]", l.in_dim), format!("{:?}", x.shape())));
                }
                Ok(l.forward(x, train))
            }
            Head::Jigsaw(j) => j.forward(x, train),
        }
    }

    pub fn backward(&mut self, dy: &Tensor<T>) -> Tensor<T> {
        match self {
            Head::Linear(l) => l.backward(dy),
            Head::Jigsaw(j) => j.backward(dy),
        }
    }

    pub fn out_dim(&self) -> usize {
        match self {
            Head::Linear(l) => l.out_dim,
            Head::Jigsaw(j) => j.classifier.out_dim,
        }
    }
}

impl<T: Scalar> Module<T> for Head<T> {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        match self {
            Head::Linear(l) => l.visit(prefix, f),
            Head::Jigsaw(j) => {
                j.projection.visit(&join_name(prefix, "projection"), f);
                j.classifier.visit(&join_name(prefix, "classifier"), f);
            }
        }
    }
}

/// Linear probes start at zero; the other heads are randomly initialised.
pub fn build_head<T: Scalar>(kind: HeadKind, in_dim: usize, out_dim: usize, rng: &mut impl Rng) -> Result<Head<T>> {
    if in_dim == 0 || out_dim == 0 {
        return Err(invalid(format!("head dims must be positive, got in {in_dim}, out {out_dim}")));
    }
    match kind {
        HeadKind::Rotation4 if out_dim != ROTATION_CLASSES => {
            Err(invalid(format!("rotation head needs {ROTATION_CLASSES} outputs, got {out_dim}")))
        }
        HeadKind::Rotation4 | HeadKind::Supervised => Ok(Head::Linear(Linear::new(in_dim, out_dim, rng))),
        HeadKind::LinearProbe => Ok(Head::Linear(Linear::zeros(in_dim, out_dim))),
        HeadKind::Jigsaw => Ok(Head::Jigsaw(JigsawHead::new(in_dim, out_dim, rng))),
    }
}
