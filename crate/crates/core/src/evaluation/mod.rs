//! Frozen-feature extraction and linear probes.

mod features;
mod probe;

pub use features::{extract_feature_matrix, FeatureMatrix, FeatureSidecar, FeatureSource};
pub use probe::{
    normalized_accuracy, train_linear_probe, LabeledFeatures, LinearProbe, ProbeConfig, ProbeResult, ProbeRun,
};
